//! Spherical-pendulum surrogate for the first sloshing mode.
//!
//! The pendulum is parametrized by two tilt angles about the horizontal
//! world axes. With `n(θ, φ) = (-sin θ, sin φ cos θ, cos φ cos θ)` the liquid
//! surface normal, the bob hangs at `-l·n` below the pivot in a z-up world.
//! Equilibrium under a constant lateral acceleration `ẍ` is `tan θ = -ẍ / g`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STANDARD_GRAVITY: f64 = 9.81;

/// Guard on `|cos θ|` below which the φ equation degenerates.
pub const SINGULARITY_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContainerShape {
    Cylinder,
    /// Placeholder for shapes whose frequency formula is not provided.
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContainerGeometry {
    /// Inner radius [m].
    pub radius: f64,
    /// Liquid fill height [m].
    pub fill_height: f64,
    pub shape: ContainerShape,
}

impl ContainerGeometry {
    pub fn cylinder(radius: f64, fill_height: f64) -> Result<Self> {
        let geom = Self {
            radius,
            fill_height,
            shape: ContainerShape::Cylinder,
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "container radius must be positive, got {}",
                self.radius
            )));
        }
        if !(self.fill_height > 0.0 && self.fill_height.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "fill height must be positive, got {}",
                self.fill_height
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    /// Rod length [m].
    pub rod_length: f64,
    /// Gravity magnitude [m/s²].
    pub gravity: f64,
}

impl PendulumParams {
    pub fn new(rod_length: f64) -> Result<Self> {
        Self::with_gravity(rod_length, STANDARD_GRAVITY)
    }

    pub fn with_gravity(rod_length: f64, gravity: f64) -> Result<Self> {
        let p = Self {
            rod_length,
            gravity,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rod_length > 0.0 && self.rod_length.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "rod length must be positive, got {}",
                self.rod_length
            )));
        }
        if !(self.gravity > 0.0 && self.gravity.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gravity must be positive, got {}",
                self.gravity
            )));
        }
        Ok(())
    }

    /// Small-angle natural frequency `sqrt(g / l)` [rad/s].
    pub fn natural_frequency(&self) -> f64 {
        (self.gravity / self.rod_length).sqrt()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PendulumState {
    pub theta: f64,
    pub phi: f64,
    pub theta_dot: f64,
    pub phi_dot: f64,
}

impl PendulumState {
    pub const fn new(theta: f64, phi: f64, theta_dot: f64, phi_dot: f64) -> Self {
        Self {
            theta,
            phi,
            theta_dot,
            phi_dot,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.is_finite()
            && self.phi.is_finite()
            && self.theta_dot.is_finite()
            && self.phi_dot.is_finite()
    }

    fn axpy(&self, h: f64, d: &Derivative) -> Self {
        Self {
            theta: self.theta + h * d.theta_dot,
            phi: self.phi + h * d.phi_dot,
            theta_dot: self.theta_dot + h * d.theta_ddot,
            phi_dot: self.phi_dot + h * d.phi_ddot,
        }
    }
}

/// Linear acceleration of the pendulum pivot (the container) [m/s²].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PivotAcceleration {
    pub xdd: f64,
    pub ydd: f64,
    pub zdd: f64,
}

impl PivotAcceleration {
    pub const fn new(xdd: f64, ydd: f64, zdd: f64) -> Self {
        Self { xdd, ydd, zdd }
    }
}

#[derive(Debug, Clone, Copy)]
struct Derivative {
    theta_dot: f64,
    phi_dot: f64,
    theta_ddot: f64,
    phi_ddot: f64,
}

/// Angular accelerations `(θ̈, φ̈)` of the pendulum under pivot acceleration `a`.
pub fn pendulum_derivatives(
    s: &PendulumState,
    a: &PivotAcceleration,
    p: &PendulumParams,
) -> Result<(f64, f64)> {
    let (st, ct) = s.theta.sin_cos();
    if ct.abs() <= SINGULARITY_EPS {
        return Err(Error::GimbalSingularity { theta: s.theta });
    }
    let (sp, cp) = s.phi.sin_cos();
    let l = p.rod_length;
    let g_eff = p.gravity + a.zdd;

    let theta_ddot =
        -(g_eff * st * cp + a.xdd * ct + a.ydd * sp * st) / l - ct * st * s.phi_dot * s.phi_dot;
    let phi_ddot = (-g_eff * sp + a.ydd * cp) / (l * ct) + 2.0 * s.phi_dot * s.theta_dot * st / ct;
    Ok((theta_ddot, phi_ddot))
}

fn derivative(s: &PendulumState, a: &PivotAcceleration, p: &PendulumParams) -> Result<Derivative> {
    let (theta_ddot, phi_ddot) = pendulum_derivatives(s, a, p)?;
    Ok(Derivative {
        theta_dot: s.theta_dot,
        phi_dot: s.phi_dot,
        theta_ddot,
        phi_ddot,
    })
}

/// One classical RK4 step with the pivot acceleration held over `dt`.
pub fn integrate_pendulum(
    s: &PendulumState,
    a: &PivotAcceleration,
    p: &PendulumParams,
    dt: f64,
) -> Result<PendulumState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let k1 = derivative(s, a, p)?;
    let k2 = derivative(&s.axpy(0.5 * dt, &k1), a, p)?;
    let k3 = derivative(&s.axpy(0.5 * dt, &k2), a, p)?;
    let k4 = derivative(&s.axpy(dt, &k3), a, p)?;
    let w = dt / 6.0;
    let next = PendulumState {
        theta: s.theta
            + w * (k1.theta_dot + 2.0 * k2.theta_dot + 2.0 * k3.theta_dot + k4.theta_dot),
        phi: s.phi + w * (k1.phi_dot + 2.0 * k2.phi_dot + 2.0 * k3.phi_dot + k4.phi_dot),
        theta_dot: s.theta_dot
            + w * (k1.theta_ddot + 2.0 * k2.theta_ddot + 2.0 * k3.theta_ddot + k4.theta_ddot),
        phi_dot: s.phi_dot
            + w * (k1.phi_ddot + 2.0 * k2.phi_ddot + 2.0 * k3.phi_ddot + k4.phi_ddot),
    };
    if next.theta.cos().abs() <= SINGULARITY_EPS {
        return Err(Error::GimbalSingularity { theta: next.theta });
    }
    Ok(next)
}

/// Tilt angles `(θ, φ)` at which the pendulum rests under a constant pivot
/// acceleration.
pub fn equilibrium_tilt(a: &PivotAcceleration, gravity: f64) -> (f64, f64) {
    let g_eff = gravity + a.zdd;
    let phi = a.ydd.atan2(g_eff);
    let theta = (-a.xdd).atan2(g_eff * phi.cos() + a.ydd * phi.sin());
    (theta, phi)
}

/// `J₁'(x)` from the ascending power series of the Bessel function of the
/// first kind.
pub fn bessel_j1_prime(x: f64) -> f64 {
    let half = 0.5 * x;
    let half_sq = half * half;
    // term_m = (-1)^m (x/2)^{2m} / (m! (m+1)!)
    let mut term = 0.5;
    let mut sum = 0.5;
    for m in 1..60 {
        let m = m as f64;
        term *= -half_sq / (m * (m + 1.0));
        let contrib = term * (2.0 * m + 1.0);
        sum += contrib;
        if contrib.abs() < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

/// First positive root of `J₁'`, bracketed in `[1.5, 2.5]` and refined by
/// bisection to `1e-10`.
pub fn first_root_j1_prime() -> f64 {
    let (mut lo, mut hi) = (1.5_f64, 2.5_f64);
    let mut f_lo = bessel_j1_prime(lo);
    debug_assert!(f_lo * bessel_j1_prime(hi) < 0.0);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        let f_mid = bessel_j1_prime(mid);
        if f_mid == 0.0 {
            return mid;
        }
        if (f_mid > 0.0) == (f_lo > 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// First-mode natural frequency `f_n` [rad/s] of a cylindrical container.
pub fn first_mode_frequency(geom: &ContainerGeometry, gravity: f64) -> Result<f64> {
    geom.validate()?;
    match geom.shape {
        ContainerShape::Cylinder => {
            let xi = first_root_j1_prime();
            let ratio = xi / geom.radius;
            Ok((gravity * ratio * (geom.fill_height * ratio).tanh()).sqrt())
        }
        other => Err(Error::UnsupportedShape(other)),
    }
}

/// Rod length matching the container's first sloshing mode: `l = g / f_n²`.
pub fn estimate_rod_length(geom: &ContainerGeometry, gravity: f64) -> Result<f64> {
    if !(gravity > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "gravity must be positive, got {gravity}"
        )));
    }
    let f_n = first_mode_frequency(geom, gravity)?;
    Ok(gravity / (f_n * f_n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params() -> PendulumParams {
        PendulumParams::new(0.05).unwrap()
    }

    #[test]
    fn rest_is_a_fixed_point() {
        let d = pendulum_derivatives(
            &PendulumState::default(),
            &PivotAcceleration::default(),
            &params(),
        )
        .unwrap();
        assert_eq!(d, (0.0, 0.0));
        let next = integrate_pendulum(
            &PendulumState::default(),
            &PivotAcceleration::default(),
            &params(),
            0.1,
        )
        .unwrap();
        assert_eq!(next, PendulumState::default());
    }

    #[test]
    fn vertical_acceleration_alone_excites_nothing() {
        let d = pendulum_derivatives(
            &PendulumState::default(),
            &PivotAcceleration::new(0.0, 0.0, 5.0),
            &params(),
        )
        .unwrap();
        assert_eq!(d, (0.0, 0.0));
    }

    #[test]
    fn lateral_equilibrium_tilt() {
        // g sinθ + ẍ cosθ = 0 with ẍ = 1
        let s = PendulumState::new(-(1.0_f64 / 9.81).atan(), 0.0, 0.0, 0.0);
        let (tdd, pdd) =
            pendulum_derivatives(&s, &PivotAcceleration::new(1.0, 0.0, 0.0), &params()).unwrap();
        assert_abs_diff_eq!(tdd, 0.0, epsilon = 1e-12);
        assert_eq!(pdd, 0.0);

        let a = PivotAcceleration::new(0.7, -1.3, 0.4);
        let (theta, phi) = equilibrium_tilt(&a, 9.81);
        let (tdd, pdd) =
            pendulum_derivatives(&PendulumState::new(theta, phi, 0.0, 0.0), &a, &params()).unwrap();
        assert_abs_diff_eq!(tdd, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pdd, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn singularity_is_reported() {
        let s = PendulumState::new(std::f64::consts::FRAC_PI_2, 0.0, 0.0, 0.0);
        let err = pendulum_derivatives(&s, &PivotAcceleration::default(), &params()).unwrap_err();
        assert!(matches!(err, Error::GimbalSingularity { .. }));
    }

    #[test]
    fn integrate_rejects_bad_dt() {
        assert!(integrate_pendulum(
            &PendulumState::default(),
            &PivotAcceleration::default(),
            &params(),
            0.0
        )
        .is_err());
    }

    #[test]
    fn bessel_root() {
        let xi = first_root_j1_prime();
        assert_abs_diff_eq!(xi, 1.841_183_781_340_659, epsilon = 1e-9);
        assert_abs_diff_eq!(bessel_j1_prime(0.0), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn rod_length_examples() {
        let l =
            estimate_rod_length(&ContainerGeometry::cylinder(0.040, 0.100).unwrap(), 9.81).unwrap();
        assert!((0.021..=0.022).contains(&l), "l = {l}");

        let shallow =
            estimate_rod_length(&ContainerGeometry::cylinder(0.040, 0.010).unwrap(), 9.81).unwrap();
        assert_abs_diff_eq!(shallow, 0.050, epsilon = 1e-3);

        let deep =
            estimate_rod_length(&ContainerGeometry::cylinder(0.040, 10.0).unwrap(), 9.81).unwrap();
        assert_abs_diff_eq!(deep, 0.040 / first_root_j1_prime(), epsilon = 1e-12);
    }

    #[test]
    fn unsupported_shape() {
        let geom = ContainerGeometry {
            radius: 0.04,
            fill_height: 0.1,
            shape: ContainerShape::Other,
        };
        assert_eq!(
            estimate_rod_length(&geom, 9.81),
            Err(Error::UnsupportedShape(ContainerShape::Other))
        );
    }

    #[test]
    fn invalid_geometry() {
        assert!(ContainerGeometry::cylinder(0.0, 0.1).is_err());
        assert!(ContainerGeometry::cylinder(0.04, -1.0).is_err());
        assert!(PendulumParams::new(0.0).is_err());
        assert!(PendulumParams::with_gravity(0.02, -9.81).is_err());
    }
}
