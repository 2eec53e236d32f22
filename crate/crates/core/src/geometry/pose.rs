use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Rigid transform `p -> rotation * p + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Right-handed rotation by `angle` about the unit `axis` through the origin.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        Pose {
            rotation: rodrigues(axis, angle),
            translation: Vector3::zeros(),
        }
    }

    /// Row-major 3x4 `[R | t]`.
    pub fn from_row_major(v: &[f64; 12]) -> Self {
        Pose {
            rotation: Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]),
            translation: Vector3::new(v[3], v[7], v[11]),
        }
    }

    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t[0],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t[1],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[2],
        ]
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn is_rigid(&self, tol: f64) -> bool {
        let ortho = (self.rotation * self.rotation.transpose() - Matrix3::identity()).amax();
        ortho <= tol && (self.rotation.determinant() - 1.0).abs() <= tol
    }

    /// Rotation angle of the relative rotation, in radians.
    pub fn rotation_angle(&self) -> f64 {
        let c = 0.5 * (self.rotation.trace() - 1.0);
        c.clamp(-1.0, 1.0).acos()
    }
}

fn rodrigues(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = Matrix3::new(
        0.0, -axis[2], axis[1], axis[2], 0.0, -axis[0], -axis[1], axis[0], 0.0,
    );
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

/// Two-joint patch scanner: a tilt about `sweep_axis` through `sweep_pivot`
/// followed by a carriage translation along `carriage_axis`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanKinematics {
    pub sweep_axis: Vector3<f64>,
    pub sweep_pivot: Vector3<f64>,
    pub carriage_axis: Vector3<f64>,
}

impl Default for ScanKinematics {
    /// Tilt about the lateral axis at the apex, carriage along elevation.
    fn default() -> Self {
        ScanKinematics {
            sweep_axis: Vector3::x(),
            sweep_pivot: Vector3::zeros(),
            carriage_axis: Vector3::y(),
        }
    }
}

impl ScanKinematics {
    pub fn validate(&self) -> Result<()> {
        for (name, axis) in [("sweep", &self.sweep_axis), ("carriage", &self.carriage_axis)] {
            if !((axis.norm() - 1.0).abs() <= 1e-9) {
                return Err(Error::InvalidKinematics(format!(
                    "{name} axis has norm {}",
                    axis.norm()
                )));
            }
        }
        if !self.sweep_pivot.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidKinematics("non-finite pivot".into()));
        }
        Ok(())
    }
}

/// Frame pose for joint values: `Translate(t * carriage) ∘ RotateAbout(pivot, axis, theta)`.
pub fn pose_from_joints(kin: &ScanKinematics, theta: f64, t: f64) -> Result<Pose> {
    kin.validate()?;
    if !theta.is_finite() || !t.is_finite() {
        return Err(Error::InvalidParam(format!("joints ({theta}, {t})")));
    }
    let rotation = rodrigues(&kin.sweep_axis, theta);
    let pivot = kin.sweep_pivot;
    Ok(Pose {
        rotation,
        translation: pivot - rotation * pivot + kin.carriage_axis * t,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SweepDirection {
    Forward,
    Backward,
}

impl SweepDirection {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepDirection::Forward => "forward",
            SweepDirection::Backward => "backward",
        }
    }
}

impl std::str::FromStr for SweepDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(SweepDirection::Forward),
            "backward" => Ok(SweepDirection::Backward),
            other => Err(Error::Parse(format!("sweep direction '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameRecord {
    pub frame_id: usize,
    pub sweep_id: usize,
    pub sweep_direction: SweepDirection,
    pub joint_theta_rad: f64,
    pub joint_t_m: f64,
    pub pose: Pose,
}

impl FrameRecord {
    pub fn new(
        kin: &ScanKinematics,
        frame_id: usize,
        sweep_id: usize,
        sweep_direction: SweepDirection,
        joint_theta_rad: f64,
        joint_t_m: f64,
    ) -> Result<Self> {
        Ok(FrameRecord {
            frame_id,
            sweep_id,
            sweep_direction,
            joint_theta_rad,
            joint_t_m,
            pose: pose_from_joints(kin, joint_theta_rad, joint_t_m)?,
        })
    }
}

/// Frames in acquisition order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<FrameRecord>,
}

impl FrameSequence {
    pub fn new(frames: Vec<FrameRecord>) -> Self {
        FrameSequence { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, FrameRecord> {
        self.frames.iter()
    }

    /// Distinct sweep ids in order of first appearance.
    pub fn sweep_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = Vec::new();
        for f in &self.frames {
            if !ids.contains(&f.sweep_id) {
                ids.push(f.sweep_id);
            }
        }
        ids
    }

    pub fn subset(&self, frame_ids: &[usize]) -> FrameSequence {
        FrameSequence {
            frames: self
                .frames
                .iter()
                .filter(|f| frame_ids.contains(&f.frame_id))
                .copied()
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn close(a: &Matrix3<f64>, b: &Matrix3<f64>, tol: f64) -> bool {
        (a - b).amax() <= tol
    }

    #[test]
    fn zero_joints_is_identity() {
        let kin = ScanKinematics::default();
        let p = pose_from_joints(&kin, 0.0, 0.0).unwrap();
        assert!(close(&p.rotation, &Matrix3::identity(), 1e-15));
        assert_eq!(p.translation, Vector3::zeros());
    }

    #[test]
    fn pure_translation() {
        let kin = ScanKinematics::default();
        let p = pose_from_joints(&kin, 0.0, 0.005).unwrap();
        assert!(close(&p.rotation, &Matrix3::identity(), 1e-15));
        assert!((p.translation - Vector3::new(0.0, 0.005, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn quarter_turn_about_y() {
        let kin = ScanKinematics {
            sweep_axis: Vector3::y(),
            sweep_pivot: Vector3::zeros(),
            carriage_axis: Vector3::x(),
        };
        let p = pose_from_joints(&kin, FRAC_PI_2, 0.0).unwrap();
        let v = p.apply(&Vector3::x());
        assert!((v - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
        assert!(p.translation.norm() < 1e-15);
    }

    #[test]
    fn pivot_stays_fixed() {
        let kin = ScanKinematics {
            sweep_axis: Vector3::new(1.0, 1.0, 0.0).normalize(),
            sweep_pivot: Vector3::new(0.0, 0.0, -0.02),
            carriage_axis: Vector3::y(),
        };
        let p = pose_from_joints(&kin, 0.7, 0.0).unwrap();
        assert!((p.apply(&kin.sweep_pivot) - kin.sweep_pivot).norm() < 1e-15);
        assert!(p.is_rigid(1e-12));
    }

    #[test]
    fn non_unit_axis_rejected() {
        let kin = ScanKinematics {
            sweep_axis: Vector3::new(2.0, 0.0, 0.0),
            ..ScanKinematics::default()
        };
        assert!(matches!(
            pose_from_joints(&kin, 0.1, 0.0),
            Err(Error::InvalidKinematics(_))
        ));
    }

    #[test]
    fn inverse_and_row_major() {
        let p = pose_from_joints(&ScanKinematics::default(), 0.3, 0.01).unwrap();
        let q = p.compose(&p.inverse());
        assert!(close(&q.rotation, &Matrix3::identity(), 1e-15));
        assert!(q.translation.norm() < 1e-15);
        assert_eq!(Pose::from_row_major(&p.to_row_major()), p);
    }
}
