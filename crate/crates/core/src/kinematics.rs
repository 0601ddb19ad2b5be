//! Serial-chain kinematics for a 7-DoF revolute arm described by a modified
//! Denavit-Hartenberg table.

use std::path::Path;

use nalgebra::{Isometry3, Point3, SMatrix, SVector, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 7;

pub type JointVector = SVector<f64, NUM_JOINTS>;
pub type Jacobian = SMatrix<f64, 6, NUM_JOINTS>;

/// Step used for the directional difference in [`RobotModel::jacobian_dot`].
pub const JDOT_EPS: f64 = 1e-6;

const PANDA_TOML: &str = include_str!("../data/panda.toml");

/// One row of a modified DH table:
/// `RotX(alpha) · TransX(a) · RotZ(q + theta_offset) · TransZ(d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhLink {
    pub a: f64,
    pub d: f64,
    pub alpha: f64,
    #[serde(default)]
    pub theta_offset: f64,
}

impl DhLink {
    pub fn transform(&self, q: f64) -> Isometry3<f64> {
        let rx = Isometry3::from_parts(
            Translation3::identity(),
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), self.alpha),
        );
        let tx = Isometry3::translation(self.a, 0.0, 0.0);
        let rz = Isometry3::from_parts(
            Translation3::identity(),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), q + self.theta_offset),
        );
        let tz = Isometry3::translation(0.0, 0.0, self.d);
        rx * tx * rz * tz
    }
}

/// Cartesian end-effector limits, symmetric about zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartesianLimits {
    pub linear_velocity: f64,
    pub angular_velocity: f64,
    pub linear_acceleration: f64,
    pub angular_acceleration: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JointEntry {
    a: f64,
    d: f64,
    alpha: f64,
    #[serde(default)]
    theta_offset: f64,
    q_min: f64,
    q_max: f64,
    #[serde(default)]
    qd_min: Option<f64>,
    qd_max: f64,
    #[serde(default)]
    qdd_min: Option<f64>,
    qdd_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RobotDescription {
    name: String,
    joints: Vec<JointEntry>,
    flange: DhLink,
    cartesian: CartesianLimits,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub name: String,
    pub links: [DhLink; NUM_JOINTS],
    pub flange: DhLink,
    pub base: Isometry3<f64>,
    pub q_min: JointVector,
    pub q_max: JointVector,
    pub qd_min: JointVector,
    pub qd_max: JointVector,
    pub qdd_min: JointVector,
    pub qdd_max: JointVector,
    pub cartesian: CartesianLimits,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointState {
    pub q: JointVector,
    pub qd: JointVector,
}

impl JointState {
    pub fn at_rest(q: JointVector) -> Self {
        Self {
            q,
            qd: JointVector::zeros(),
        }
    }
}

impl RobotModel {
    /// The bundled Panda description.
    pub fn panda() -> Self {
        Self::from_toml_str(PANDA_TOML).expect("bundled robot description is valid")
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let desc: RobotDescription =
            toml::from_str(text).map_err(|e| Error::RobotDescription(e.to_string()))?;
        if desc.joints.len() != NUM_JOINTS {
            return Err(Error::RobotDescription(format!(
                "expected {NUM_JOINTS} joints, found {}",
                desc.joints.len()
            )));
        }
        let j = &desc.joints;
        let links = std::array::from_fn(|i| DhLink {
            a: j[i].a,
            d: j[i].d,
            alpha: j[i].alpha,
            theta_offset: j[i].theta_offset,
        });
        let model = Self {
            name: desc.name,
            links,
            flange: desc.flange,
            base: Isometry3::identity(),
            q_min: JointVector::from_fn(|i, _| j[i].q_min),
            q_max: JointVector::from_fn(|i, _| j[i].q_max),
            qd_min: JointVector::from_fn(|i, _| j[i].qd_min.unwrap_or(-j[i].qd_max)),
            qd_max: JointVector::from_fn(|i, _| j[i].qd_max),
            qdd_min: JointVector::from_fn(|i, _| j[i].qdd_min.unwrap_or(-j[i].qdd_max)),
            qdd_max: JointVector::from_fn(|i, _| j[i].qdd_max),
            cartesian: desc.cartesian,
        };
        model.validate()?;
        Ok(model)
    }

    /// A chain of zero-length links with unbounded-ish limits; useful for tests.
    pub fn zero_chain() -> Self {
        let zero = DhLink {
            a: 0.0,
            d: 0.0,
            alpha: 0.0,
            theta_offset: 0.0,
        };
        let mut m = Self::panda();
        m.name = "zero".into();
        m.links = [zero; NUM_JOINTS];
        m.flange = zero;
        m
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..NUM_JOINTS {
            let pairs = [
                ("q", self.q_min[i], self.q_max[i]),
                ("qd", self.qd_min[i], self.qd_max[i]),
                ("qdd", self.qdd_min[i], self.qdd_max[i]),
            ];
            for (what, lo, hi) in pairs {
                if !(lo < hi) {
                    return Err(Error::RobotDescription(format!(
                        "joint {} {what} limits not ordered: {lo} >= {hi}",
                        i + 1
                    )));
                }
            }
        }
        let c = &self.cartesian;
        if [
            c.linear_velocity,
            c.angular_velocity,
            c.linear_acceleration,
            c.angular_acceleration,
        ]
        .iter()
        .any(|v| !(*v > 0.0))
        {
            return Err(Error::RobotDescription(
                "cartesian limits must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn with_base(mut self, base: Isometry3<f64>) -> Self {
        self.base = base;
        self
    }

    /// Joint frames `T_1..T_7` in the world followed by the flange frame.
    pub fn frames(&self, q: &JointVector) -> [Isometry3<f64>; NUM_JOINTS + 1] {
        let mut out = [Isometry3::identity(); NUM_JOINTS + 1];
        let mut t = self.base;
        for i in 0..NUM_JOINTS {
            t *= self.links[i].transform(q[i]);
            out[i] = t;
        }
        out[NUM_JOINTS] = t * self.flange.transform(0.0);
        out
    }

    /// Flange pose in the world frame.
    pub fn forward_kinematics(&self, q: &JointVector) -> Isometry3<f64> {
        self.frames(q)[NUM_JOINTS]
    }

    /// Geometric Jacobian (linear rows first) of the flange in the world frame.
    pub fn jacobian(&self, q: &JointVector) -> Jacobian {
        let frames = self.frames(q);
        let p_e: Point3<f64> = frames[NUM_JOINTS].translation.vector.into();
        let mut j = Jacobian::zeros();
        for i in 0..NUM_JOINTS {
            let z = frames[i].rotation * Vector3::z();
            let p_i: Point3<f64> = frames[i].translation.vector.into();
            let lin = z.cross(&(p_e - p_i));
            j.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            j.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
        }
        j
    }

    /// `J̇(q, q̇)` by a directional difference along `q̇`.
    pub fn jacobian_dot(&self, q: &JointVector, qd: &JointVector) -> Jacobian {
        if qd.iter().all(|v| *v == 0.0) {
            return Jacobian::zeros();
        }
        (self.jacobian(&(q + qd * JDOT_EPS)) - self.jacobian(q)) / JDOT_EPS
    }

    pub fn jacobian_dot_times_qd(&self, q: &JointVector, qd: &JointVector) -> SVector<f64, 6> {
        self.jacobian_dot(q, qd) * qd
    }

    pub fn within_limits(&self, js: &JointState, tol: f64) -> bool {
        (0..NUM_JOINTS).all(|i| {
            js.q[i] >= self.q_min[i] - tol
                && js.q[i] <= self.q_max[i] + tol
                && js.qd[i] >= self.qd_min[i] - tol
                && js.qd[i] <= self.qd_max[i] + tol
        })
    }
}

/// The conventional Panda ready pose.
pub fn panda_ready_pose() -> JointVector {
    use std::f64::consts::PI;
    JointVector::from_column_slice(&[
        0.0,
        -PI / 4.0,
        0.0,
        -3.0 * PI / 4.0,
        0.0,
        PI / 2.0,
        PI / 4.0,
    ])
}

/// Rotation vector of `rot`, i.e. axis times angle.
pub fn rotation_vector(rot: &UnitQuaternion<f64>) -> Vector3<f64> {
    rot.scaled_axis()
}
