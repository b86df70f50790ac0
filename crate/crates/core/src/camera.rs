use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::read_file;
use crate::error::{Error, Result};

/// Pinhole camera with a world-to-camera rigid transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Row-major world-to-camera rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Camera {
    /// Identity pose looking down +z with the principal point at the image center.
    pub fn looking_down_z(width: u32, height: u32, focal: f64) -> Self {
        Self {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Validation(format!("focal lengths must be positive: {} {}", self.fx, self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation("camera resolution must be non-zero".into()));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-6 {
                    return Err(Error::Validation("camera rotation is not orthonormal".into()));
                }
            }
        }
        Ok(())
    }

    pub fn world_to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [0, 1, 2].map(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + self.translation[i])
    }
}

/// One entry of a scene's camera file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub frame_id: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
}

impl CameraRecord {
    pub fn camera(&self) -> Result<Camera> {
        let r = &self.r;
        let cam = Camera {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            rotation: [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
            translation: self.t,
        };
        cam.validate()
            .map_err(|e| Error::Validation(format!("camera {}: {e}", self.frame_id)))?;
        Ok(cam)
    }

    pub fn from_camera(frame_id: impl Into<String>, cam: &Camera) -> Self {
        let r = &cam.rotation;
        Self {
            frame_id: frame_id.into(),
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
            r: [r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]],
            t: cam.translation,
        }
    }
}

pub fn load_cameras(path: &Path) -> Result<Vec<CameraRecord>> {
    let bytes = read_file(path)?;
    let records: Vec<CameraRecord> = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Parse(format!("camera file {}: {e}", path.display())))?;
    for r in &records {
        r.camera()?;
    }
    Ok(records)
}

pub fn save_cameras(path: &Path, records: &[CameraRecord]) -> Result<()> {
    let text = serde_json::to_string_pretty(records).expect("camera records serialize");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
