//! Convex quadratic programming.
//!
//! ```text
//! minimize    ½ xᵀ H x + fᵀ x
//! subject to  Aeq x = beq
//!             lo ≤ Ain x ≤ hi
//! ```
//!
//! Solved with a primal-dual interior-point method on the Ruiz-equilibrated
//! stacked constraint matrix `A = [Aeq; Ain]`. Each Newton system is condensed
//! to `P + Aᵀ W A` with a regularized equality block and iterative refinement
//! against the exact KKT matrix. Dual variables follow the convention
//! `H x + f + Aᵀ y = 0`, `y ≥ 0` on active upper bounds and `y ≤ 0` on active
//! lower bounds.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_SHIFT: f64 = 1e-9;
const INFEASIBILITY_TOL: f64 = 1e-6;
const STEP_FRACTION: f64 = 0.99;
const INTERIOR_MARGIN: f64 = 1.0;
/// Slack and multiplier floor when restarting from a previous solution.
const WARM_MARGIN: f64 = 0.1;
const POLISH_ROUNDS: usize = 4;
const POLISH_FEAS_TOL: f64 = 1e-9;

/// Triplet accumulator for sparse matrices; duplicates are summed.
#[derive(Debug, Clone)]
pub struct TripletBuilder {
    coo: CooMatrix<f64>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            coo: CooMatrix::new(nrows, ncols),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        if value != 0.0 {
            self.coo.push(row, col, value);
        }
    }

    pub fn nrows(&self) -> usize {
        self.coo.nrows()
    }

    pub fn build(&self) -> CscMatrix<f64> {
        CscMatrix::from(&self.coo)
    }
}

pub fn csc_from_dense(m: &DMatrix<f64>) -> CscMatrix<f64> {
    let mut b = TripletBuilder::new(m.nrows(), m.ncols());
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            b.push(i, j, m[(i, j)]);
        }
    }
    b.build()
}

/// `out = A x`
fn csc_mul(a: &CscMatrix<f64>, x: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let (offsets, rows, vals) = (a.col_offsets(), a.row_indices(), a.values());
    for j in 0..a.ncols() {
        let xj = x[j];
        if xj == 0.0 {
            continue;
        }
        for k in offsets[j]..offsets[j + 1] {
            out[rows[k]] += vals[k] * xj;
        }
    }
}

/// `out = Aᵀ y`
fn csc_tmul(a: &CscMatrix<f64>, y: &[f64], out: &mut [f64]) {
    let (offsets, rows, vals) = (a.col_offsets(), a.row_indices(), a.values());
    for j in 0..a.ncols() {
        let mut acc = 0.0;
        for k in offsets[j]..offsets[j + 1] {
            acc += vals[k] * y[rows[k]];
        }
        out[j] = acc;
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn vstack(top: &CscMatrix<f64>, bottom: &CscMatrix<f64>) -> CscMatrix<f64> {
    let n = top.ncols();
    let mut b = TripletBuilder::new(top.nrows() + bottom.nrows(), n);
    for (i, j, v) in top.triplet_iter() {
        b.push(i, j, *v);
    }
    for (i, j, v) in bottom.triplet_iter() {
        b.push(top.nrows() + i, j, *v);
    }
    b.build()
}

fn scaled_identity(n: usize, s: f64) -> CscMatrix<f64> {
    let mut b = TripletBuilder::new(n, n);
    for i in 0..n {
        b.push(i, i, s);
    }
    b.build()
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    /// Symmetric PSD cost matrix (full storage), n×n.
    pub h: CscMatrix<f64>,
    pub f: DVector<f64>,
    pub a_eq: CscMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: CscMatrix<f64>,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        h: CscMatrix<f64>,
        f: DVector<f64>,
        a_eq: CscMatrix<f64>,
        b_eq: DVector<f64>,
        a_in: CscMatrix<f64>,
        lo: DVector<f64>,
        hi: DVector<f64>,
    ) -> Result<Self> {
        let p = Self {
            h,
            f,
            a_eq,
            b_eq,
            a_in,
            lo,
            hi,
        };
        p.validate()?;
        Ok(p)
    }

    /// Convenience constructor from dense blocks.
    pub fn from_dense(
        h: &DMatrix<f64>,
        f: &DVector<f64>,
        a_eq: &DMatrix<f64>,
        b_eq: &DVector<f64>,
        a_in: &DMatrix<f64>,
        lo: &DVector<f64>,
        hi: &DVector<f64>,
    ) -> Result<Self> {
        Self::new(
            csc_from_dense(h),
            f.clone(),
            csc_from_dense(a_eq),
            b_eq.clone(),
            csc_from_dense(a_in),
            lo.clone(),
            hi.clone(),
        )
    }

    pub fn num_vars(&self) -> usize {
        self.f.len()
    }

    pub fn num_eq(&self) -> usize {
        self.b_eq.len()
    }

    pub fn num_in(&self) -> usize {
        self.lo.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let dim = |what: &str, got: (usize, usize), want: (usize, usize)| {
            if got != want {
                Err(Error::DimensionMismatch(format!(
                    "{what} is {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                )))
            } else {
                Ok(())
            }
        };
        dim("H", (self.h.nrows(), self.h.ncols()), (n, n))?;
        dim(
            "Aeq",
            (self.a_eq.nrows(), self.a_eq.ncols()),
            (self.num_eq(), n),
        )?;
        dim(
            "Ain",
            (self.a_in.nrows(), self.a_in.ncols()),
            (self.num_in(), n),
        )?;
        dim("hi", (self.hi.len(), 1), (self.num_in(), 1))?;

        if self
            .f
            .iter()
            .chain(self.b_eq.iter())
            .any(|v| !v.is_finite())
            || self.h.values().iter().any(|v| !v.is_finite())
        {
            return Err(Error::InvalidParameter(
                "non-finite cost or equality data".into(),
            ));
        }
        for (l, u) in self.lo.iter().zip(self.hi.iter()) {
            if l.is_nan() || u.is_nan() || l > u {
                return Err(Error::InvalidParameter(format!("bound lo {l} > hi {u}")));
            }
        }
        let ht = self.h.transpose();
        let diff = &self.h - &ht;
        if diff.values().iter().any(|v| v.abs() > SYMMETRY_TOL) {
            return Err(Error::InvalidParameter("H is not symmetric".into()));
        }
        let shifted = &self.h + &scaled_identity(n, PSD_SHIFT);
        if n > 0 && CscCholesky::factor(&shifted).is_err() {
            return Err(Error::NotConvex);
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        let mut hx = vec![0.0; x.len()];
        csc_mul(&self.h, x.as_slice(), &mut hx);
        0.5 * x.iter().zip(&hx).map(|(a, b)| a * b).sum::<f64>() + self.f.dot(x)
    }

    /// Largest violation of any equality or inequality row at `x`.
    pub fn constraint_violation(&self, x: &DVector<f64>) -> f64 {
        let mut eq = vec![0.0; self.num_eq()];
        csc_mul(&self.a_eq, x.as_slice(), &mut eq);
        let mut worst = eq
            .iter()
            .zip(self.b_eq.iter())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        let mut ain = vec![0.0; self.num_in()];
        csc_mul(&self.a_in, x.as_slice(), &mut ain);
        for ((v, l), u) in ain.iter().zip(self.lo.iter()).zip(self.hi.iter()) {
            worst = worst.max(l - v).max(v - u);
        }
        worst
    }

    /// `‖H x + f + Aeqᵀ y_eq + Ainᵀ y_in‖∞` with `y = [y_eq; y_in]`.
    pub fn stationarity_residual(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.stationarity(x, y).0
    }

    /// Stationarity residual divided by `1 + max(‖Hx‖∞, ‖f‖∞, ‖Aᵀy‖∞)`, so
    /// that problems with large cost weights are judged at the same relative
    /// accuracy as unit-scaled ones.
    pub fn relative_stationarity_residual(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let (r, scale) = self.stationarity(x, y);
        r / (1.0 + scale)
    }

    fn stationarity(&self, x: &DVector<f64>, y: &DVector<f64>) -> (f64, f64) {
        let n = self.num_vars();
        let me = self.num_eq();
        let mut r = vec![0.0; n];
        csc_mul(&self.h, x.as_slice(), &mut r);
        let mut t = vec![0.0; n];
        csc_tmul(&self.a_eq, &y.as_slice()[..me], &mut t);
        let mut t2 = vec![0.0; n];
        csc_tmul(&self.a_in, &y.as_slice()[me..], &mut t2);
        let scale = inf_norm(&r).max(self.f.amax());
        let mut aty = 0.0_f64;
        for i in 0..n {
            aty = aty.max((t[i] + t2[i]).abs());
            r[i] += self.f[i] + t[i] + t2[i];
        }
        (inf_norm(&r), scale.max(aty))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Stacked duals `[y_eq; y_in]`.
    pub y: DVector<f64>,
    pub status: QpStatus,
    /// Largest constraint violation.
    pub primal_residual: f64,
    /// Relative stationarity residual, see
    /// [`QpProblem::relative_stationarity_residual`].
    pub dual_residual: f64,
    pub iterations: usize,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct QpSettings {
    /// Tolerance on constraint violation (absolute, in problem units) and on
    /// stationarity and complementarity (relative to the cost magnitude).
    pub tol: f64,
    pub max_iter: usize,
    pub scaling_iters: usize,
    /// Dual regularization of the equality block of the KKT system.
    pub regularization: f64,
    pub refine_steps: usize,
    /// Print the iteration log to stderr.
    pub verbose: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 4000,
            scaling_iters: 10,
            regularization: 1e-7,
            // badly scaled costs need many refinement passes to undo the
            // equality regularization; easy systems exit after one or two
            refine_steps: 50,
            verbose: false,
        }
    }
}

/// Optional initial guess; `y` in the stacked `[y_eq; y_in]` layout.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub x: DVector<f64>,
    pub y: Option<DVector<f64>>,
}

/// Equilibrated copy of a problem in OSQP form `l ≤ A x ≤ u`.
#[derive(Clone)]
struct Scaled {
    p: CscMatrix<f64>,
    q: Vec<f64>,
    a: CscMatrix<f64>,
    l: Vec<f64>,
    u: Vec<f64>,
    d: Vec<f64>,
    e: Vec<f64>,
    c: f64,
}

impl Scaled {
    fn new(prob: &QpProblem, iters: usize) -> Self {
        let n = prob.num_vars();
        let a_full = vstack(&prob.a_eq, &prob.a_in);
        let m = a_full.nrows();
        let mut p = prob.h.clone();
        let mut a = a_full;
        let mut d = vec![1.0; n];
        let mut e = vec![1.0; m];

        let clamp = |norm: f64| {
            if norm < 1e-4 {
                1.0
            } else {
                1.0 / norm.min(1e4).sqrt()
            }
        };
        for _ in 0..iters {
            let mut dcol = vec![0.0_f64; n];
            let mut erow = vec![0.0_f64; m];
            for (i, j, v) in p.triplet_iter() {
                let _ = i;
                dcol[j] = dcol[j].max(v.abs());
            }
            for (i, j, v) in a.triplet_iter() {
                dcol[j] = dcol[j].max(v.abs());
                erow[i] = erow[i].max(v.abs());
            }
            let ds: Vec<f64> = dcol.iter().map(|&v| clamp(v)).collect();
            let es: Vec<f64> = erow.iter().map(|&v| clamp(v)).collect();
            scale_csc(&mut p, &ds, &ds);
            scale_csc(&mut a, &es, &ds);
            d.iter_mut().zip(&ds).for_each(|(x, s)| *x *= s);
            e.iter_mut().zip(&es).for_each(|(x, s)| *x *= s);
        }

        let q_d: Vec<f64> = prob.f.iter().zip(&d).map(|(q, d)| q * d).collect();
        let mut col_norms = vec![0.0_f64; n];
        for (_, j, v) in p.triplet_iter() {
            col_norms[j] = col_norms[j].max(v.abs());
        }
        let mean_p = if n > 0 {
            col_norms.iter().sum::<f64>() / n as f64
        } else {
            0.0
        };
        let big = mean_p.max(inf_norm(&q_d));
        let c = if big < 1e-4 {
            1.0
        } else {
            (1.0 / big).clamp(1e-4, 1e4)
        };
        p.values_mut().iter_mut().for_each(|v| *v *= c);
        let q = q_d.iter().map(|v| v * c).collect();

        let mut l = Vec::with_capacity(m);
        let mut u = Vec::with_capacity(m);
        for (i, b) in prob.b_eq.iter().enumerate() {
            l.push(b * e[i]);
            u.push(b * e[i]);
        }
        let me = prob.num_eq();
        for (k, (lo, hi)) in prob.lo.iter().zip(prob.hi.iter()).enumerate() {
            l.push(lo * e[me + k]);
            u.push(hi * e[me + k]);
        }
        Self {
            p,
            q,
            a,
            l,
            u,
            d,
            e,
            c,
        }
    }

    fn n(&self) -> usize {
        self.q.len()
    }

    fn m(&self) -> usize {
        self.l.len()
    }
}

/// `M_ij *= row[i] * col[j]`
fn scale_csc(mat: &mut CscMatrix<f64>, row: &[f64], col: &[f64]) {
    let ncols = mat.ncols();
    let offsets = mat.col_offsets().to_vec();
    let rows = mat.row_indices().to_vec();
    let vals = mat.values_mut();
    for j in 0..ncols {
        for k in offsets[j]..offsets[j + 1] {
            vals[k] *= row[rows[k]] * col[j];
        }
    }
}

/// `P + σI + Aᵀ diag(w) A`
fn reduced_kkt(p: &CscMatrix<f64>, a: &CscMatrix<f64>, w: &[f64], sigma: f64) -> CscMatrix<f64> {
    let n = p.ncols();
    let mut wa = a.clone();
    let ones = vec![1.0; n];
    scale_csc(&mut wa, w, &ones);
    let at = a.transpose();
    let atwa = &at * &wa;
    let sum = &atwa + p;
    &sum + &scaled_identity(n, sigma)
}

/// One-sided view of the scaled rows: `sign · (A x)_row − s = bound`, `s ≥ 0`.
struct Bounds {
    eq: Vec<usize>,
    row: Vec<usize>,
    sign: Vec<f64>,
    bound: Vec<f64>,
}

impl Bounds {
    fn new(s: &Scaled) -> Self {
        let mut b = Bounds {
            eq: Vec::new(),
            row: Vec::new(),
            sign: Vec::new(),
            bound: Vec::new(),
        };
        for i in 0..s.m() {
            if s.l[i] == s.u[i] {
                b.eq.push(i);
                continue;
            }
            if s.l[i].is_finite() {
                b.row.push(i);
                b.sign.push(1.0);
                b.bound.push(s.l[i]);
            }
            if s.u[i].is_finite() {
                b.row.push(i);
                b.sign.push(-1.0);
                b.bound.push(-s.u[i]);
            }
        }
        b
    }

    fn len(&self) -> usize {
        self.row.len()
    }
}

/// Interior-point iterate on the scaled problem.
#[derive(Clone)]
struct Iterate {
    x: Vec<f64>,
    /// Equality multipliers.
    ye: Vec<f64>,
    s: Vec<f64>,
    z: Vec<f64>,
}

struct Step {
    dx: Vec<f64>,
    dye: Vec<f64>,
    ds: Vec<f64>,
    dz: Vec<f64>,
}

/// Residuals of the scaled KKT system at an iterate.
struct Kkt {
    /// `P x + q + Aᵀ v` where `v` are the stacked duals.
    rd: Vec<f64>,
    re: Vec<f64>,
    ri: Vec<f64>,
    v: Vec<f64>,
    ax: Vec<f64>,
    /// Unscaled `max(‖Px‖∞, ‖q‖∞, ‖Aᵀv‖∞)`.
    dual_scale: f64,
}

struct Workspace<'a> {
    s: &'a Scaled,
    b: &'a Bounds,
    at: CscMatrix<f64>,
    eps: f64,
    refine: usize,
}

impl<'a> Workspace<'a> {
    fn kkt(&self, it: &Iterate) -> Kkt {
        let (n, m) = (self.s.n(), self.s.m());
        let mut ax = vec![0.0; m];
        csc_mul(&self.s.a, &it.x, &mut ax);
        let mut v = vec![0.0; m];
        let re: Vec<f64> = self
            .b
            .eq
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                v[i] -= it.ye[k];
                ax[i] - self.s.l[i]
            })
            .collect();
        let ri: Vec<f64> = (0..self.b.len())
            .map(|j| {
                let i = self.b.row[j];
                v[i] -= self.b.sign[j] * it.z[j];
                self.b.sign[j] * ax[i] - it.s[j] - self.b.bound[j]
            })
            .collect();
        let mut rd = vec![0.0; n];
        csc_mul(&self.s.p, &it.x, &mut rd);
        let mut aty = vec![0.0; n];
        csc_mul(&self.at, &v, &mut aty);
        let mut dual_scale = 0.0_f64;
        for i in 0..n {
            let u = 1.0 / (self.s.c * self.s.d[i]);
            dual_scale = dual_scale
                .max((rd[i] * u).abs())
                .max((self.s.q[i] * u).abs())
                .max((aty[i] * u).abs());
            rd[i] += self.s.q[i] + aty[i];
        }
        Kkt {
            rd,
            re,
            ri,
            v,
            ax,
            dual_scale,
        }
    }

    /// Row weights of the condensed inequality block, `Σ z/s` per row.
    fn weights(&self, it: &Iterate) -> Vec<f64> {
        let mut w = vec![0.0; self.s.m()];
        for j in 0..self.b.len() {
            w[self.b.row[j]] += it.z[j] / it.s[j];
        }
        w
    }

    fn factor(&self, w: &[f64]) -> Option<CscCholesky<f64>> {
        let mut wk = w.to_vec();
        for &i in &self.b.eq {
            wk[i] = 1.0 / self.eps;
        }
        // primal regularization grows only if the pivots break down; the
        // refinement loop removes its effect on the step
        let mut delta = self.eps * 1e-2;
        while delta < 1e-2 {
            if let Ok(f) = CscCholesky::factor(&reduced_kkt(&self.s.p, &self.s.a, &wk, delta)) {
                return Some(f);
            }
            delta *= 100.0;
        }
        None
    }

    /// Newton step for the complementarity target `rc = s∘z − target`.
    fn step(&self, it: &Iterate, r: &Kkt, w: &[f64], chol: &CscCholesky<f64>, rc: &[f64]) -> Step {
        let (n, m) = (self.s.n(), self.s.m());
        let ne = self.b.eq.len();
        let mut tm = vec![0.0; m];
        for j in 0..self.b.len() {
            tm[self.b.row[j]] += self.b.sign[j] * (rc[j] + it.z[j] * r.ri[j]) / it.s[j];
        }
        let mut g = vec![0.0; n];
        csc_mul(&self.at, &tm, &mut g);
        for i in 0..n {
            g[i] = -r.rd[i] - g[i];
        }

        // K dx + Eᵀ w = g,  E dx = −re  with K = P + Aᵀ W A, refined against
        // the regularized factorization.
        let mut dx = vec![0.0; n];
        let mut dw = vec![0.0; ne];
        let mut adx = vec![0.0; m];
        let mut tmp_m = vec![0.0; m];
        let mut tmp_n = vec![0.0; n];
        let mut rhs = DVector::zeros(n);
        let gscale = 1.0 + inf_norm(&g).max(inf_norm(&r.re));
        let (mut best, mut idle) = (f64::INFINITY, 0);
        for _ in 0..self.refine {
            csc_mul(&self.s.a, &dx, &mut adx);
            for i in 0..m {
                tmp_m[i] = w[i] * adx[i];
            }
            for (k, &i) in self.b.eq.iter().enumerate() {
                tmp_m[i] = dw[k];
            }
            csc_mul(&self.at, &tmp_m, &mut tmp_n);
            let mut pdx = vec![0.0; n];
            csc_mul(&self.s.p, &dx, &mut pdx);
            let rho1: Vec<f64> = (0..n).map(|i| g[i] - pdx[i] - tmp_n[i]).collect();
            let rho2: Vec<f64> = self
                .b
                .eq
                .iter()
                .enumerate()
                .map(|(k, &i)| -r.re[k] - adx[i])
                .collect();
            let res = inf_norm(&rho1).max(inf_norm(&rho2));
            if res <= 1e-14 * gscale {
                break;
            }
            // slow contraction is fine; a few passes without progress mean
            // the rounding floor or a stalled factorization
            if res < 0.95 * best {
                best = res;
                idle = 0;
            } else {
                idle += 1;
                if idle == 3 {
                    break;
                }
            }
            tmp_m.iter_mut().for_each(|v| *v = 0.0);
            for (k, &i) in self.b.eq.iter().enumerate() {
                tmp_m[i] = rho2[k] / self.eps;
            }
            csc_mul(&self.at, &tmp_m, &mut tmp_n);
            for i in 0..n {
                rhs[i] = rho1[i] + tmp_n[i];
            }
            chol.solve_mut(&mut rhs);
            csc_mul(&self.s.a, rhs.as_slice(), &mut tmp_m);
            for (k, &i) in self.b.eq.iter().enumerate() {
                dw[k] += (tmp_m[i] - rho2[k]) / self.eps;
            }
            for i in 0..n {
                dx[i] += rhs[i];
            }
        }

        csc_mul(&self.s.a, &dx, &mut adx);
        let ds: Vec<f64> = (0..self.b.len())
            .map(|j| self.b.sign[j] * adx[self.b.row[j]] + r.ri[j])
            .collect();
        let dz: Vec<f64> = (0..self.b.len())
            .map(|j| -(rc[j] + it.z[j] * ds[j]) / it.s[j])
            .collect();
        Step {
            dx,
            dye: dw.iter().map(|v| -v).collect(),
            ds,
            dz,
        }
    }
}

/// Re-solves with the bounds the interior point left active (`s < z`) held
/// as equalities. On degenerate problems the interior iterate sits about
/// `√μ` off the optimum; the equality solve lands on it. Bounds the equality
/// solution violates join the active set for another round. The result is
/// kept only if it is feasible, stationary, has correctly signed multipliers
/// and does not raise the objective.
fn polish(prob: &QpProblem, ws: &Workspace, it: &Iterate, base: &QpSolution) -> Option<QpSolution> {
    let (s, b) = (ws.s, ws.b);
    let mut active: Vec<bool> = it.s.iter().zip(&it.z).map(|(s, z)| s < z).collect();
    for _ in 0..POLISH_ROUNDS {
        let mut ps = s.clone();
        for i in 0..ps.m() {
            if ps.l[i] != ps.u[i] {
                ps.l[i] = f64::NEG_INFINITY;
                ps.u[i] = f64::INFINITY;
            }
        }
        for j in (0..b.len()).filter(|&j| active[j]) {
            let i = b.row[j];
            ps.l[i] = b.sign[j] * b.bound[j];
            ps.u[i] = ps.l[i];
        }
        let pb = Bounds::new(&ps);
        let pw = Workspace {
            s: &ps,
            b: &pb,
            at: ws.at.clone(),
            eps: ws.eps,
            refine: ws.refine,
        };
        let w = vec![0.0; ps.m()];
        let chol = pw.factor(&w)?;
        let mut pit = Iterate {
            x: it.x.clone(),
            ye: vec![0.0; pb.eq.len()],
            s: Vec::new(),
            z: Vec::new(),
        };
        for _ in 0..2 {
            let r = pw.kkt(&pit);
            let st = pw.step(&pit, &r, &w, &chol, &[]);
            axpy(&mut pit.x, 1.0, &st.dx);
            axpy(&mut pit.ye, 1.0, &st.dye);
        }
        let r = pw.kkt(&pit);

        let mut grew = false;
        for j in 0..b.len() {
            let i = b.row[j];
            if !active[j] && (b.sign[j] * r.ax[i] - b.bound[j]) / s.e[i] < -POLISH_FEAS_TOL {
                active[j] = true;
                grew = true;
            }
        }
        if grew {
            continue;
        }
        let tol = base
            .primal_residual
            .max(base.dual_residual)
            .max(POLISH_FEAS_TOL);
        let sign_tol = tol * (1.0 + r.dual_scale);
        let signed_ok = (0..b.len())
            .filter(|&j| active[j])
            .all(|j| b.sign[j] * r.v[b.row[j]] * s.e[b.row[j]] / s.c <= sign_tol);
        let sol = finish(prob, &ps, &r.v, &pit.x, QpStatus::Optimal, base.iterations);
        return (signed_ok
            && sol.primal_residual <= base.primal_residual.max(POLISH_FEAS_TOL)
            && sol.dual_residual <= tol
            && sol.objective <= base.objective + tol * (1.0 + base.objective.abs()))
        .then_some(sol);
    }
    None
}

/// Largest `α ≤ 1` keeping `v + α dv ≥ 0`.
fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .fold(1.0_f64, |a, (v, d)| a.min(-v / d))
}

/// Unscaled primal violation, plus the stationarity residual and largest
/// complementarity product relative to the cost magnitude.
fn unscaled_errors(s: &Scaled, b: &Bounds, it: &Iterate, r: &Kkt) -> (f64, f64, f64) {
    let mut prim = 0.0_f64;
    for (k, &i) in b.eq.iter().enumerate() {
        prim = prim.max((r.re[k] / s.e[i]).abs());
    }
    for j in 0..b.len() {
        let i = b.row[j];
        let slack = b.sign[j] * r.ax[i] - b.bound[j];
        prim = prim.max(-slack / s.e[i]);
    }
    let dual =
        r.rd.iter()
            .zip(&s.d)
            .fold(0.0_f64, |m, (v, d)| m.max((v / (s.c * d)).abs()));
    let comp =
        it.s.iter()
            .zip(&it.z)
            .fold(0.0_f64, |m, (a, b)| m.max(a * b / s.c));
    let rel = 1.0 + r.dual_scale;
    (prim, dual / rel, comp / rel)
}

/// Farkas certificate check on the stacked duals `v`: `Aᵀv ≈ 0` with a
/// negative support value proves the constraints cannot be met.
fn certifies_infeasibility(s: &Scaled, at: &CscMatrix<f64>, v: &[f64]) -> bool {
    let vn = v
        .iter()
        .zip(&s.e)
        .fold(0.0_f64, |a, (v, e)| a.max((v * e).abs()));
    if vn < 1e-12 {
        return false;
    }
    let mut atv = vec![0.0; s.n()];
    csc_mul(at, v, &mut atv);
    let atn = atv
        .iter()
        .zip(&s.d)
        .fold(0.0_f64, |a, (x, d)| a.max((x / d).abs()));
    if atn > INFEASIBILITY_TOL * vn {
        return false;
    }
    let mut support = 0.0;
    for i in 0..s.m() {
        if v[i] > 0.0 {
            if s.u[i].is_infinite() {
                return false;
            }
            support += s.u[i] * v[i];
        } else if v[i] < 0.0 {
            if s.l[i].is_infinite() {
                return false;
            }
            support += s.l[i] * v[i];
        }
    }
    support < -INFEASIBILITY_TOL * vn
}

/// Convex QP solver (primal-dual interior point with Mehrotra
/// predictor-corrector steps). Holds its settings; every call allocates its
/// own scratch so instances are cheap to clone per thread.
#[derive(Debug, Clone, Default)]
pub struct QpSolver {
    pub settings: QpSettings,
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        Self { settings }
    }

    pub fn solve(&mut self, prob: &QpProblem, warm: Option<&WarmStart>) -> Result<QpSolution> {
        prob.validate()?;
        let n = prob.num_vars();
        let m = prob.num_eq() + prob.num_in();
        if let Some(w) = warm {
            if w.x.len() != n || w.y.as_ref().is_some_and(|y| y.len() != m) {
                return Err(Error::DimensionMismatch("warm start length".into()));
            }
        }
        let cfg = &self.settings;
        let s = Scaled::new(prob, cfg.scaling_iters);
        let b = Bounds::new(&s);
        let ws = Workspace {
            s: &s,
            b: &b,
            at: s.a.transpose(),
            eps: cfg.regularization,
            refine: cfg.refine_steps.max(1),
        };
        let nb = b.len();

        let mut it = self.initial_point(&ws, warm)?;
        let mut best: Option<(f64, Iterate)> = None;
        let mut iter = 0;
        while iter < cfg.max_iter {
            let r = ws.kkt(&it);
            let (prim, dual, comp) = unscaled_errors(&s, &b, &it, &r);
            if cfg.verbose {
                eprintln!("iter {iter:3} prim {prim:.3e} dual {dual:.3e} comp {comp:.3e}");
            }
            let err = prim.max(dual).max(comp);
            if best.as_ref().is_none_or(|(e, _)| err <= *e) {
                best = Some((err, it.clone()));
            }
            if prim <= cfg.tol && dual <= cfg.tol && comp <= cfg.tol * 1e-2 {
                let sol = finish(prob, &s, &r.v, &it.x, QpStatus::Optimal, iter);
                if sol.primal_residual <= cfg.tol && sol.dual_residual <= cfg.tol {
                    return Ok(polish(prob, &ws, &it, &sol).unwrap_or(sol));
                }
            }
            if prim > cfg.tol && certifies_infeasibility(&s, &ws.at, &r.v) {
                return Ok(finish(prob, &s, &r.v, &it.x, QpStatus::Infeasible, iter));
            }
            iter += 1;

            let w = ws.weights(&it);
            let Some(chol) = ws.factor(&w) else {
                break;
            };
            if nb == 0 {
                let st = ws.step(&it, &r, &w, &chol, &[]);
                axpy(&mut it.x, 1.0, &st.dx);
                axpy(&mut it.ye, 1.0, &st.dye);
                continue;
            }

            let mu = it.s.iter().zip(&it.z).map(|(a, b)| a * b).sum::<f64>() / nb as f64;
            let rc: Vec<f64> = it.s.iter().zip(&it.z).map(|(a, b)| a * b).collect();
            let aff = ws.step(&it, &r, &w, &chol, &rc);
            let a_aff = max_step(&it.s, &aff.ds).min(max_step(&it.z, &aff.dz));
            let mu_aff = (0..nb)
                .map(|j| (it.s[j] + a_aff * aff.ds[j]) * (it.z[j] + a_aff * aff.dz[j]))
                .sum::<f64>()
                / nb as f64;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
            let rc: Vec<f64> = (0..nb)
                .map(|j| it.s[j] * it.z[j] + aff.ds[j] * aff.dz[j] - sigma * mu)
                .collect();
            let st = ws.step(&it, &r, &w, &chol, &rc);
            let alpha =
                (STEP_FRACTION * max_step(&it.s, &st.ds).min(max_step(&it.z, &st.dz))).min(1.0);
            axpy(&mut it.x, alpha, &st.dx);
            axpy(&mut it.ye, alpha, &st.dye);
            axpy(&mut it.s, alpha, &st.ds);
            axpy(&mut it.z, alpha, &st.dz);
            if it.x.iter().chain(&it.z).any(|v| !v.is_finite()) {
                break;
            }
        }
        let (_, last) = best.unwrap_or((f64::INFINITY, it));
        let r = ws.kkt(&last);
        Ok(finish(prob, &s, &r.v, &last.x, QpStatus::MaxIter, iter))
    }

    fn initial_point(&self, ws: &Workspace, warm: Option<&WarmStart>) -> Result<Iterate> {
        let (s, b) = (ws.s, ws.b);
        let nb = b.len();
        let mut it = Iterate {
            x: vec![0.0; s.n()],
            ye: vec![0.0; b.eq.len()],
            s: vec![1.0; nb],
            z: vec![1.0; nb],
        };
        let mut margin = INTERIOR_MARGIN;

        match warm {
            Some(w) => {
                for i in 0..s.n() {
                    it.x[i] = w.x[i] / s.d[i];
                }
                if let Some(y) = &w.y {
                    margin = WARM_MARGIN;
                    for (k, &i) in b.eq.iter().enumerate() {
                        it.ye[k] = -y[i] * s.c / s.e[i];
                    }
                    for j in 0..nb {
                        let v = y[b.row[j]] * s.c / s.e[b.row[j]];
                        it.z[j] = (-b.sign[j] * v).max(WARM_MARGIN);
                    }
                }
            }
            None => {
                // least-squares start: one Newton step from the origin with
                // unit slacks and multipliers
                let r = ws.kkt(&it);
                let wts = ws.weights(&it);
                let chol = ws.factor(&wts).ok_or(Error::NotConvex)?;
                let rc: Vec<f64> = vec![0.0; nb];
                let st = ws.step(&it, &r, &wts, &chol, &rc);
                it.x = st.dx;
            }
        }
        let mut ax = vec![0.0; s.m()];
        csc_mul(&s.a, &it.x, &mut ax);
        for j in 0..nb {
            let slack = b.sign[j] * ax[b.row[j]] - b.bound[j];
            it.s[j] = slack.max(margin);
        }
        Ok(it)
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

/// Unscales an iterate and evaluates exact residuals on the original problem.
fn finish(
    prob: &QpProblem,
    s: &Scaled,
    v: &[f64],
    x: &[f64],
    status: QpStatus,
    iterations: usize,
) -> QpSolution {
    let xu = DVector::from_iterator(x.len(), x.iter().zip(&s.d).map(|(v, d)| v * d));
    let yu = DVector::from_iterator(v.len(), v.iter().zip(&s.e).map(|(v, e)| v * e / s.c));
    QpSolution {
        objective: prob.objective(&xu),
        primal_residual: prob.constraint_violation(&xu).max(0.0),
        dual_residual: prob.relative_stationarity_residual(&xu, &yu),
        x: xu,
        y: yu,
        status,
        iterations,
    }
}

/// One-shot solve with default settings.
pub fn solve_qp(
    p: &QpProblem,
    tol: f64,
    max_iter: usize,
    warm_start: Option<&DVector<f64>>,
) -> Result<QpSolution> {
    let mut solver = QpSolver::new(QpSettings {
        tol,
        max_iter,
        ..QpSettings::default()
    });
    let warm = warm_start.map(|x| WarmStart {
        x: x.clone(),
        y: None,
    });
    solver.solve(p, warm.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dense(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn equality_constrained_least_squares() {
        // (x-1)² + (y-2)² = ½ xᵀ(2I)x - (2, 4)ᵀx + 5
        let p = QpProblem::from_dense(
            &dense(2, 2, &[2.0, 0.0, 0.0, 2.0]),
            &DVector::from_vec(vec![-2.0, -4.0]),
            &dense(1, 2, &[1.0, 1.0]),
            &DVector::from_vec(vec![1.0]),
            &DMatrix::zeros(0, 2),
            &DVector::zeros(0),
            &DVector::zeros(0),
        )
        .unwrap();
        let sol = solve_qp(&p, 1e-6, 4000, None).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.x[0], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.x[1], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn active_lower_bound() {
        let p = QpProblem::from_dense(
            &dense(1, 1, &[2.0]),
            &DVector::zeros(1),
            &DMatrix::zeros(0, 1),
            &DVector::zeros(0),
            &dense(1, 1, &[1.0]),
            &DVector::from_vec(vec![1.0]),
            &DVector::from_vec(vec![f64::INFINITY]),
        )
        .unwrap();
        let sol = solve_qp(&p, 1e-6, 4000, None).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-6);
        // multiplier of an active lower bound is non-positive
        assert!(sol.y[0] < 0.0);
    }

    #[test]
    fn infeasible_box_is_detected() {
        // x ≥ 2 and x ≤ 1 as two separate rows
        let p = QpProblem::from_dense(
            &dense(1, 1, &[1.0]),
            &DVector::zeros(1),
            &DMatrix::zeros(0, 1),
            &DVector::zeros(0),
            &dense(2, 1, &[1.0, 1.0]),
            &DVector::from_vec(vec![2.0, f64::NEG_INFINITY]),
            &DVector::from_vec(vec![f64::INFINITY, 1.0]),
        )
        .unwrap();
        let sol = solve_qp(&p, 1e-6, 4000, None).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn rejects_nonconvex_and_malformed() {
        let bad = QpProblem::from_dense(
            &dense(1, 1, &[-1.0]),
            &DVector::zeros(1),
            &DMatrix::zeros(0, 1),
            &DVector::zeros(0),
            &DMatrix::zeros(0, 1),
            &DVector::zeros(0),
            &DVector::zeros(0),
        );
        assert_eq!(bad.unwrap_err(), Error::NotConvex);

        let asym = QpProblem::from_dense(
            &dense(2, 2, &[1.0, 0.5, 0.0, 1.0]),
            &DVector::zeros(2),
            &DMatrix::zeros(0, 2),
            &DVector::zeros(0),
            &DMatrix::zeros(0, 2),
            &DVector::zeros(0),
            &DVector::zeros(0),
        );
        assert!(matches!(asym, Err(Error::InvalidParameter(_))));

        let dims = QpProblem::from_dense(
            &DMatrix::identity(2, 2),
            &DVector::zeros(3),
            &DMatrix::zeros(0, 2),
            &DVector::zeros(0),
            &DMatrix::zeros(0, 2),
            &DVector::zeros(0),
            &DVector::zeros(0),
        );
        assert!(matches!(dims, Err(Error::DimensionMismatch(_))));

        let crossed = QpProblem::from_dense(
            &DMatrix::identity(1, 1),
            &DVector::zeros(1),
            &DMatrix::zeros(0, 1),
            &DVector::zeros(0),
            &DMatrix::identity(1, 1),
            &DVector::from_vec(vec![1.0]),
            &DVector::from_vec(vec![0.0]),
        );
        assert!(matches!(crossed, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn unconstrained_and_empty() {
        let p = QpProblem::from_dense(
            &dense(2, 2, &[4.0, 1.0, 1.0, 2.0]),
            &DVector::from_vec(vec![1.0, 1.0]),
            &DMatrix::zeros(0, 2),
            &DVector::zeros(0),
            &DMatrix::zeros(0, 2),
            &DVector::zeros(0),
            &DVector::zeros(0),
        )
        .unwrap();
        let sol = solve_qp(&p, 1e-8, 4000, None).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        // H x = -f
        let h = dense(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let r = &h * &sol.x + DVector::from_vec(vec![1.0, 1.0]);
        assert!(r.amax() < 1e-8);
    }
}
