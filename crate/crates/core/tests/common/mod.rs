//! Helpers shared by the property suites and the acceptance run.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SVector};
use proptest::prelude::*;
use slosh_stop::kinematics::{rotation_vector, JointState, JointVector, RobotModel};
use slosh_stop::model::{build_step_model, idx, ControlInput, MpcState, NominalPoint};
use slosh_stop::qp::QpProblem;
use slosh_stop::slosh::{integrate_pendulum, PendulumParams, PendulumState, PivotAcceleration};

/// Energy of the free pendulum per unit mass, from the Lagrangian whose
/// Euler-Lagrange equations are the implemented dynamics.
pub fn energy(s: &PendulumState, p: &PendulumParams) -> f64 {
    let l = p.rod_length;
    let c = s.theta.cos();
    0.5 * l * l * (s.theta_dot.powi(2) + c * c * s.phi_dot.powi(2))
        - p.gravity * l * c * s.phi.cos()
}

pub fn simulate(
    s0: PendulumState,
    a: PivotAcceleration,
    p: &PendulumParams,
    dt: f64,
    steps: usize,
) -> Vec<PendulumState> {
    let mut out = vec![s0];
    for _ in 0..steps {
        let next = integrate_pendulum(out.last().unwrap(), &a, p, dt).unwrap();
        out.push(next);
    }
    out
}

/// Largest relative energy error of the free pendulum over a run.
pub fn relative_energy_drift(s0: PendulumState, p: &PendulumParams, dt: f64, steps: usize) -> f64 {
    let traj = simulate(s0, PivotAcceleration::default(), p, dt, steps);
    let e0 = energy(&s0, p);
    traj.iter()
        .map(|s| (energy(s, p) - e0).abs())
        .fold(0.0, f64::max)
        / e0.abs()
}

/// Rod for the one-step check. The truncated discretization drifts from RK4
/// as `ω dt` grows: the worst corner of the small-angle box is 1.6e-3 rad at
/// 70 mm (`ω dt ≈ 0.59`), 2.4e-3 at 50 mm and 7.5e-3 at 21.7 mm.
pub const ONE_STEP_ROD: f64 = 0.07;

/// Angle error of one linear prediction step against one RK4 step of the
/// nonlinear pendulum, for state `(θ, φ, θ̇, φ̇)` and pivot acceleration `a`.
pub fn one_step_error(l: f64, s: [f64; 4], a: [f64; 3]) -> f64 {
    let p = PendulumParams::new(l).unwrap();
    let dt = 0.05;
    let nominal = NominalPoint {
        zdd: a[2],
        theta_p: s[0],
        phi_p: s[1],
    };
    let (am, bm) = build_step_model(&nominal, &p, dt);
    let mut x = MpcState::zeros();
    x[idx::THETA_P] = s[0];
    x[idx::PHI_P] = s[1];
    x[idx::THETA_P_DOT] = s[2];
    x[idx::PHI_P_DOT] = s[3];
    let u = ControlInput::from([a[0], a[1], a[2], 0.0, 0.0, 0.0]);
    let lin = am * x + bm * u;
    let nl = integrate_pendulum(
        &PendulumState::new(s[0], s[1], s[2], s[3]),
        &PivotAcceleration::new(a[0], a[1], a[2]),
        &p,
        dt,
    )
    .unwrap();
    (lin[idx::THETA_P] - nl.theta)
        .abs()
        .max((lin[idx::PHI_P] - nl.phi).abs())
}

/// Worst one-step error over the 3^7 corners and midpoints of the
/// small-angle box.
pub fn worst_one_step_error(l: f64) -> f64 {
    let mut worst = 0.0_f64;
    for corner in 0..3_usize.pow(7) {
        let c: Vec<f64> = (0..7)
            .map(|k| (corner / 3_usize.pow(k)) % 3)
            .map(|d| d as f64 - 1.0)
            .collect();
        let s = [0.05 * c[0], 0.05 * c[1], 0.1 * c[2], 0.1 * c[3]];
        let a = [0.05 * c[4], 0.05 * c[5], c[6]];
        worst = worst.max(one_step_error(l, s, a));
    }
    worst
}

pub fn config() -> impl Strategy<Value = JointVector> {
    prop::array::uniform7(0.02..0.98f64).prop_map(|u| {
        let m = RobotModel::panda();
        JointVector::from_fn(|i, _| m.q_min[i] + u[i] * (m.q_max[i] - m.q_min[i]))
    })
}

pub fn rates() -> impl Strategy<Value = JointVector> {
    prop::array::uniform7(-1.0..1.0f64).prop_map(JointVector::from)
}

/// Joint positions inside the limits and rates up to half the rate limit.
pub fn joint_state() -> impl Strategy<Value = JointState> {
    (
        prop::array::uniform7(0.05..0.95f64),
        prop::array::uniform7(-0.5..0.5f64),
    )
        .prop_map(|(u, v)| {
            let m = RobotModel::panda();
            JointState {
                q: JointVector::from_fn(|i, _| m.q_min[i] + u[i] * (m.q_max[i] - m.q_min[i])),
                qd: JointVector::from_fn(|i, _| v[i] * m.qd_max[i]),
            }
        })
}

pub fn command(scale: f64) -> impl Strategy<Value = ControlInput> {
    prop::array::uniform6(-1.0..1.0f64).prop_map(move |a| ControlInput::from(a) * scale)
}

/// Spatial velocity `(ṗ, ω)` of the flange along `q + t·qd` by one-sided
/// differences.
pub fn fd_twist(m: &RobotModel, q: &JointVector, qd: &JointVector, eps: f64) -> SVector<f64, 6> {
    let a = m.forward_kinematics(q);
    let b = m.forward_kinematics(&(q + qd * eps));
    let lin = (b.translation.vector - a.translation.vector) / eps;
    let ang = rotation_vector(&(b.rotation * a.rotation.inverse())) / eps;
    SVector::<f64, 6>::from_iterator(lin.iter().chain(ang.iter()).copied())
}

pub const QP_N: usize = 8;
pub const QP_M: usize = 4;

/// Row bounds `lo ≤ A x ≤ hi` around a point known to be feasible; some
/// sides are left open.
#[derive(Debug)]
pub struct Instance {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub a: DMatrix<f64>,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl Instance {
    pub fn problem(&self) -> QpProblem {
        QpProblem::from_dense(
            &self.h,
            &self.f,
            &DMatrix::zeros(0, QP_N),
            &DVector::zeros(0),
            &self.a,
            &self.lo,
            &self.hi,
        )
        .unwrap()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.f.dot(x)
    }

    pub fn feasible(&self, x: &DVector<f64>, tol: f64) -> bool {
        let ax = &self.a * x;
        (0..QP_M).all(|i| ax[i] >= self.lo[i] - tol && ax[i] <= self.hi[i] + tol)
    }
}

pub fn instance() -> impl Strategy<Value = Instance> {
    const N: usize = QP_N;
    const M: usize = QP_M;
    (
        prop::collection::vec(-1.0..1.0f64, N * N),
        prop::collection::vec(-2.0..2.0f64, N),
        prop::collection::vec(-1.0..1.0f64, M * N),
        prop::collection::vec(-1.0..1.0f64, N),
        prop::collection::vec(0.0..1.0f64, 2 * M),
        prop::collection::vec(0..4u8, M),
    )
        .prop_map(|(r, f, a, x0, gaps, kind)| {
            let r = DMatrix::from_row_slice(N, N, &r);
            let h = r.transpose() * &r + DMatrix::identity(N, N) * 0.1;
            let a = DMatrix::from_row_slice(M, N, &a);
            let ax0 = &a * DVector::from_vec(x0);
            let mut lo = DVector::from_element(M, f64::NEG_INFINITY);
            let mut hi = DVector::from_element(M, f64::INFINITY);
            for i in 0..M {
                // 0: upper only, 1: lower only, 2: both, 3: both, possibly tight
                if kind[i] != 1 {
                    hi[i] = ax0[i] + gaps[i];
                }
                if kind[i] != 0 {
                    lo[i] = ax0[i]
                        - if kind[i] == 3 {
                            0.1 * gaps[M + i]
                        } else {
                            gaps[M + i]
                        };
                }
            }
            Instance {
                h,
                f: DVector::from_vec(f),
                a,
                lo,
                hi,
            }
        })
}

/// Brute-force active-set enumeration: every row is free, at its lower bound
/// or at its upper bound; each choice is an equality-constrained QP solved
/// through its KKT system. The optimum is the best KKT point that is primal
/// feasible with correctly signed multipliers.
pub fn oracle(inst: &Instance) -> DVector<f64> {
    const N: usize = QP_N;
    const M: usize = QP_M;
    let mut best: Option<(f64, DVector<f64>)> = None;
    'codes: for code in 0..3usize.pow(M as u32) {
        let mut rows = Vec::new();
        let mut c = code;
        for i in 0..M {
            match c % 3 {
                0 => {}
                1 if inst.lo[i].is_finite() => rows.push((i, inst.lo[i], -1.0)),
                2 if inst.hi[i].is_finite() => rows.push((i, inst.hi[i], 1.0)),
                _ => continue 'codes,
            }
            c /= 3;
        }
        let k = rows.len();
        let mut kkt = DMatrix::zeros(N + k, N + k);
        let mut rhs = DVector::zeros(N + k);
        kkt.view_mut((0, 0), (N, N)).copy_from(&inst.h);
        rhs.rows_mut(0, N).copy_from(&(-&inst.f));
        for (j, &(i, b, _)) in rows.iter().enumerate() {
            for c in 0..N {
                kkt[(N + j, c)] = inst.a[(i, c)];
                kkt[(c, N + j)] = inst.a[(i, c)];
            }
            rhs[N + j] = b;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            continue;
        };
        let x = sol.rows(0, N).into_owned();
        // y ≥ 0 on an upper bound, y ≤ 0 on a lower bound in H x + f + Aᵀy = 0
        let signs_ok = rows
            .iter()
            .enumerate()
            .all(|(j, &(_, _, s))| s * sol[N + j] >= -1e-9);
        if signs_ok && inst.feasible(&x, 1e-9) {
            let obj = inst.objective(&x);
            if best.as_ref().is_none_or(|(o, _)| obj < *o) {
                best = Some((obj, x));
            }
        }
    }
    best.expect("feasible instance has an optimum").1
}
