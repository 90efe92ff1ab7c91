use std::str::FromStr;

use gsm_core::{Ellipsoid3, GsmError};
use nalgebra::{Rotation3, Vector3};

pub const DEFAULT_ROBOT: &str = "0.15 0.15 0.07 45 0 0";

/// Robot ellipsoid: semi-axes in meters, then yaw, pitch and roll in degrees
/// (applied about z, y, x in that order).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobotSpec {
    pub axes: Vector3<f64>,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl RobotSpec {
    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_euler_angles(self.roll.to_radians(), self.pitch.to_radians(), self.yaw.to_radians())
    }

    /// The robot centered at the origin.
    pub fn ellipsoid(&self) -> gsm_core::Result<Ellipsoid3> {
        Ellipsoid3::from_axes(Vector3::zeros(), self.rotation().matrix(), &self.axes)
    }
}

impl Default for RobotSpec {
    fn default() -> Self {
        DEFAULT_ROBOT.parse().expect("default robot parses")
    }
}

impl FromStr for RobotSpec {
    type Err = GsmError;

    fn from_str(s: &str) -> Result<Self, GsmError> {
        let vals: Vec<f64> = s
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| GsmError::InvalidParameter(format!("robot: {e}")))?;
        let [ax, ay, az, yaw, pitch, roll] = vals[..] else {
            return Err(GsmError::InvalidParameter(format!(
                "robot needs 6 numbers (ax ay az yaw pitch roll), got {}",
                vals.len()
            )));
        };
        if [ax, ay, az].iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(GsmError::InvalidParameter("robot semi-axes must be positive".into()));
        }
        if [yaw, pitch, roll].iter().any(|a| !a.is_finite()) {
            return Err(GsmError::InvalidParameter("robot angles must be finite".into()));
        }
        Ok(Self {
            axes: Vector3::new(ax, ay, az),
            yaw,
            pitch,
            roll,
        })
    }
}
