//! Serial revolute chains: forward kinematics, geometric Jacobians,
//! manipulability and the rate map of rigidly attached superquadrics.
//!
//! Link `k` (1-based) is the frame after joint `k` has rotated:
//! `T_k = T_{k-1} * origin_k * Rot(axis_k, q_k)`, with `T_0` the base.

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::KinematicsError;
use crate::lie::{left_jacobian_inverse, skew, so3_exp, Pose, PoseRecord, Vec3};
use crate::superquadric::Superquadric;

/// Attachment rotations must stay this far below pi.
pub const MAX_ATTACHMENT_ANGLE: f64 = std::f64::consts::PI - 0.01;
/// Below this manipulability the gradient is not trusted.
pub const SINGULAR_MANIPULABILITY: f64 = 1e-12;
pub const MANIPULABILITY_FD_STEP: f64 = 1e-6;

const FR3_LIKE: &str = include_str!("../data/robots/fr3_like.json");
const PLANAR_2R: &str = include_str!("../data/robots/planar_2r.json");

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Joint {
    /// Fixed transform from the parent link to the joint frame.
    pub origin: Pose,
    /// Unit rotation axis in the joint frame.
    pub axis: Vec3,
}

/// A superquadric rigidly fixed to a link.
#[derive(Clone, Debug, PartialEq)]
pub struct Attachment {
    pub name: String,
    pub link: usize,
    /// Pose of the superquadric in the link frame.
    pub offset: Pose,
    pub shape: Superquadric,
}

impl Attachment {
    /// Axis-angle of the local rotation.
    pub fn local_rotation(&self) -> Vec3 {
        self.offset.axis_angle()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobotModel {
    pub name: String,
    pub base: Pose,
    pub joints: Vec<Joint>,
    /// End-effector frame in the last link frame.
    pub ee: Pose,
    pub attachments: Vec<Attachment>,
    pub velocity_limits: DVector<f64>,
    /// Rows of the 6-row end-effector Jacobian used as the task Jacobian.
    pub task_rows: Vec<usize>,
    pub home: DVector<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct JointRecord {
    origin: PoseRecord,
    axis: [f64; 3],
    velocity_limit: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct AttachmentRecord {
    #[serde(default)]
    name: String,
    link: usize,
    pose: PoseRecord,
    a: [f64; 3],
    e: [f64; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RobotRecord {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    note: Option<String>,
    #[serde(default)]
    base: PoseRecord,
    joints: Vec<JointRecord>,
    ee: PoseRecord,
    task_rows: Vec<usize>,
    #[serde(default)]
    home: Option<Vec<f64>>,
    attachments: Vec<AttachmentRecord>,
}

/// World poses of every frame for one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainPoses {
    /// `links[0]` is the base, `links[k]` the frame of link `k`.
    pub links: Vec<Pose>,
    /// World-frame joint axes, `axes[k - 1]` for joint `k`.
    pub axes: Vec<Vec3>,
    pub ee: Pose,
    pub attachments: Vec<Pose>,
}

impl ChainPoses {
    /// 6 x n geometric Jacobian `[J_v; J_w]` of a world point moving with
    /// `link`.
    pub fn point_jacobian(&self, link: usize, point: &Vec3) -> DMatrix<f64> {
        let n = self.axes.len();
        let mut j = DMatrix::zeros(6, n);
        for k in 0..link.min(n) {
            let z = self.axes[k];
            let o = self.links[k + 1].translation;
            let v = z.cross(&(point - o));
            for r in 0..3 {
                j[(r, k)] = v[r];
                j[(r + 3, k)] = z[r];
            }
        }
        j
    }

    /// Jacobian of the link origin.
    pub fn link_jacobian(&self, link: usize) -> DMatrix<f64> {
        self.point_jacobian(link, &self.links[link].translation)
    }

    pub fn ee_jacobian(&self) -> DMatrix<f64> {
        self.point_jacobian(self.axes.len(), &self.ee.translation)
    }
}

/// Configuration with its cached frame poses.
#[derive(Clone, Debug, PartialEq)]
pub struct RobotState {
    q: DVector<f64>,
    poses: ChainPoses,
}

impl RobotState {
    pub fn new(model: &RobotModel, q: DVector<f64>) -> Result<Self, KinematicsError> {
        let poses = model.forward_kinematics(&q)?;
        Ok(Self { q, poses })
    }

    pub fn set(&mut self, model: &RobotModel, q: DVector<f64>) -> Result<(), KinematicsError> {
        self.poses = model.forward_kinematics(&q)?;
        self.q = q;
        Ok(())
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn poses(&self) -> &ChainPoses {
        &self.poses
    }
}

/// World pose and twist of an obstacle. The twist is `(v, w)`: velocity of
/// the obstacle origin and angular velocity, both in the world frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObstacleState {
    pub pose: Pose,
    pub twist: Vector6<f64>,
}

impl ObstacleState {
    pub fn fixed(pose: Pose) -> Self {
        Self {
            pose,
            twist: Vector6::zeros(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMethod {
    #[default]
    FiniteDifference,
    Analytic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manipulability {
    pub value: f64,
    /// `None` at a singular configuration.
    pub gradient: Option<DVector<f64>>,
}

impl RobotModel {
    pub fn from_json(s: &str) -> Result<Self, KinematicsError> {
        let r: RobotRecord =
            serde_json::from_str(s).map_err(|e| KinematicsError::Format(e.to_string()))?;
        let joints: Vec<Joint> = r
            .joints
            .iter()
            .map(|j| {
                let axis = Vec3::from(j.axis);
                let len = axis.norm();
                if !(len > 0.0 && len.is_finite()) {
                    return Err(KinematicsError::Format("joint axis has zero length".into()));
                }
                Ok(Joint {
                    origin: Pose::from(&j.origin),
                    axis: axis / len,
                })
            })
            .collect::<Result<_, _>>()?;
        let attachments = r
            .attachments
            .iter()
            .map(|a| {
                Ok(Attachment {
                    name: a.name.clone(),
                    link: a.link,
                    offset: Pose::from(&a.pose),
                    shape: Superquadric::new(a.a[0], a.a[1], a.a[2], a.e[0], a.e[1])?,
                })
            })
            .collect::<Result<Vec<_>, KinematicsError>>()?;
        let n = joints.len();
        let home = match r.home {
            Some(h) => DVector::from_vec(h),
            None => DVector::zeros(n),
        };
        let model = Self {
            name: r.name,
            base: Pose::from(&r.base),
            joints,
            ee: Pose::from(&r.ee),
            attachments,
            velocity_limits: DVector::from_iterator(n, r.joints.iter().map(|j| j.velocity_limit)),
            task_rows: r.task_rows,
            home,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        let rec = RobotRecord {
            name: self.name.clone(),
            note: None,
            base: PoseRecord::from(&self.base),
            joints: self
                .joints
                .iter()
                .zip(self.velocity_limits.iter())
                .map(|(j, v)| JointRecord {
                    origin: PoseRecord::from(&j.origin),
                    axis: j.axis.into(),
                    velocity_limit: *v,
                })
                .collect(),
            ee: PoseRecord::from(&self.ee),
            task_rows: self.task_rows.clone(),
            home: Some(self.home.iter().copied().collect()),
            attachments: self
                .attachments
                .iter()
                .map(|a| AttachmentRecord {
                    name: a.name.clone(),
                    link: a.link,
                    pose: PoseRecord::from(&a.offset),
                    a: a.shape.scale(),
                    e: a.shape.exponents(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&rec).expect("robot records always serialize")
    }

    /// The 7-DoF arm shipped with the crate.
    pub fn fr3_like() -> Self {
        Self::from_json(FR3_LIKE).expect("bundled robot file is valid")
    }

    /// Planar arm with two unit links.
    pub fn planar_2r() -> Self {
        Self::from_json(PLANAR_2R).expect("bundled robot file is valid")
    }

    /// A bundled robot by name, or a robot file path.
    pub fn load(name_or_path: &str) -> Result<Self, KinematicsError> {
        match name_or_path {
            "fr3_like" => Ok(Self::fr3_like()),
            "planar_2r" => Ok(Self::planar_2r()),
            path => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| KinematicsError::Format(format!("{path}: {e}")))?;
                Self::from_json(&text)
            }
        }
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        let n = self.dof();
        for a in &self.attachments {
            if a.link == 0 || a.link > n {
                return Err(KinematicsError::InvalidLink(a.link));
            }
            let angle = a.local_rotation().norm();
            if angle >= MAX_ATTACHMENT_ANGLE {
                return Err(KinematicsError::AttachmentAngle(angle));
            }
        }
        if self.velocity_limits.iter().any(|v| !(*v > 0.0)) {
            return Err(KinematicsError::VelocityLimit);
        }
        if self.task_rows.len() > n || self.task_rows.iter().any(|r| *r >= 6) {
            return Err(KinematicsError::TaskRows {
                rows: self.task_rows.len(),
                joints: n,
            });
        }
        self.check_dim(&self.home)?;
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    fn check_dim(&self, q: &DVector<f64>) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::Dimension {
                expected: self.dof(),
                got: q.len(),
            });
        }
        Ok(())
    }

    pub fn forward_kinematics(&self, q: &DVector<f64>) -> Result<ChainPoses, KinematicsError> {
        self.check_dim(q)?;
        let mut links = Vec::with_capacity(self.dof() + 1);
        let mut axes = Vec::with_capacity(self.dof());
        let mut frame = self.base;
        links.push(frame);
        for (joint, angle) in self.joints.iter().zip(q.iter()) {
            let jf = frame.compose(&joint.origin);
            axes.push(jf.rotation * joint.axis);
            frame = jf.compose(&Pose::from_parts(Vec3::zeros(), joint.axis * *angle));
            links.push(frame);
        }
        let ee = frame.compose(&self.ee);
        let attachments = self
            .attachments
            .iter()
            .map(|a| links[a.link].compose(&a.offset))
            .collect();
        Ok(ChainPoses {
            links,
            axes,
            ee,
            attachments,
        })
    }

    /// 6 x n Jacobian of the origin of `link` in the world frame.
    pub fn geometric_jacobian(
        &self,
        q: &DVector<f64>,
        link: usize,
    ) -> Result<DMatrix<f64>, KinematicsError> {
        if link > self.dof() {
            return Err(KinematicsError::InvalidLink(link));
        }
        Ok(self.forward_kinematics(q)?.link_jacobian(link))
    }

    /// Selected rows of the end-effector Jacobian.
    pub fn task_jacobian(&self, poses: &ChainPoses) -> DMatrix<f64> {
        let full = poses.ee_jacobian();
        DMatrix::from_fn(self.task_rows.len(), self.dof(), |r, c| {
            full[(self.task_rows[r], c)]
        })
    }

    pub fn manipulability(
        &self,
        q: &DVector<f64>,
        method: GradientMethod,
    ) -> Result<Manipulability, KinematicsError> {
        let poses = self.forward_kinematics(q)?;
        let value = self.manipulability_value(&poses);
        if !(value >= SINGULAR_MANIPULABILITY) {
            return Ok(Manipulability {
                value,
                gradient: None,
            });
        }
        let gradient = match method {
            GradientMethod::FiniteDifference => {
                let mut g = DVector::zeros(self.dof());
                for k in 0..self.dof() {
                    let mut qp = q.clone();
                    let mut qm = q.clone();
                    qp[k] += MANIPULABILITY_FD_STEP;
                    qm[k] -= MANIPULABILITY_FD_STEP;
                    let fp = self.manipulability_value(&self.forward_kinematics(&qp)?);
                    let fm = self.manipulability_value(&self.forward_kinematics(&qm)?);
                    g[k] = (fp - fm) / (2.0 * MANIPULABILITY_FD_STEP);
                }
                g
            }
            GradientMethod::Analytic => self.manipulability_gradient(&poses, value),
        };
        Ok(Manipulability {
            value,
            gradient: Some(gradient),
        })
    }

    fn manipulability_value(&self, poses: &ChainPoses) -> f64 {
        // Product of singular values; sqrt(det) loses half the digits near
        // singularities.
        self.task_jacobian(poses).singular_values().product()
    }

    /// `d mu / d q_k = mu * tr((J J^T)^-1 dJ_k J^T)`.
    fn manipulability_gradient(&self, poses: &ChainPoses, mu: f64) -> DVector<f64> {
        let n = self.dof();
        let j = self.task_jacobian(poses);
        let a_inv = (&j * j.transpose())
            .try_inverse()
            .unwrap_or_else(|| DMatrix::zeros(j.nrows(), j.nrows()));
        let pe = poses.ee.translation;
        let origin = |i: usize| poses.links[i + 1].translation;
        DVector::from_fn(n, |k, _| {
            let zk = poses.axes[k];
            let mut dj_full = DMatrix::<f64>::zeros(6, n);
            for i in 0..n {
                let zi = poses.axes[i];
                let (dz, dlever) = if k < i {
                    (zk.cross(&zi), zk.cross(&(pe - origin(i))))
                } else {
                    (Vec3::zeros(), zk.cross(&(pe - origin(k))))
                };
                let dv = dz.cross(&(pe - origin(i))) + zi.cross(&dlever);
                for r in 0..3 {
                    dj_full[(r, i)] = dv[r];
                    dj_full[(r + 3, i)] = dz[r];
                }
            }
            let dj = DMatrix::from_fn(self.task_rows.len(), n, |r, c| {
                dj_full[(self.task_rows[r], c)]
            });
            mu * (&a_inv * dj * j.transpose()).trace()
        })
    }
}

/// `X = [I, -[p]x; 0, J_l^-1(phi)]`, mapping a link twist expressed in the
/// link frame to the rate of the attachment's pose chart in that frame.
pub fn sq_rate_matrix(attachment: &Attachment) -> Result<Matrix6<f64>, KinematicsError> {
    let phi = attachment.local_rotation();
    let angle = phi.norm();
    if angle >= MAX_ATTACHMENT_ANGLE {
        return Err(KinematicsError::AttachmentAngle(angle));
    }
    let mut x = Matrix6::identity();
    x.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(-skew(&attachment.offset.translation)));
    x.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&left_jacobian_inverse(&phi));
    Ok(x)
}

pub fn twist_to_sq_rate(
    attachment: &Attachment,
    v: &Vec3,
    w: &Vec3,
) -> Result<Vector6<f64>, KinematicsError> {
    Ok(sq_rate_matrix(attachment)? * Vector6::new(v.x, v.y, v.z, w.x, w.y, w.z))
}

/// Pose of an attachment for a given chart value in its link frame.
pub fn attachment_pose(link: &Pose, chart: &Vector6<f64>) -> Pose {
    let local = Pose {
        translation: chart.fixed_rows::<3>(0).into(),
        rotation: so3_exp(&chart.fixed_rows::<3>(3).into()),
    };
    link.compose(&local)
}
