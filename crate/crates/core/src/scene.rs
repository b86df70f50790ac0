//! Scene data model: Gaussian primitives and the 59-dim attribute layout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Zeroth-order spherical-harmonic basis constant.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

pub const SH_COEFFS: usize = 48;
/// center 3 + scale 3 + rotation 4 + opacity 1 + SH 48.
pub const ATTR_DIM: usize = 59;

/// Offsets of each attribute group inside the flat 59-vector.
pub mod layout {
    use std::ops::Range;
    pub const CENTER: Range<usize> = 0..3;
    pub const SCALE: Range<usize> = 3..6;
    pub const ROTATION: Range<usize> = 6..10;
    pub const OPACITY: Range<usize> = 10..11;
    pub const COLOR: Range<usize> = 11..59;
}

/// One splat, stored in the activated domain (positive scales, opacity in [0, 1]).
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrimitive {
    pub center: [f32; 3],
    pub scale: [f32; 3],
    /// Unit quaternion (w, x, y, z).
    pub rotation: [f32; 4],
    pub opacity: f32,
    /// 3 DC coefficients followed by 45 higher-order coefficients, in PLY order.
    pub color_sh: [f32; SH_COEFFS],
}

impl GaussianPrimitive {
    pub fn new(center: [f32; 3], scale: [f32; 3], rotation: [f32; 4], opacity: f32) -> Self {
        Self {
            center,
            scale,
            rotation,
            opacity,
            color_sh: [0.0; SH_COEFFS],
        }
    }

    pub fn with_rgb(mut self, rgb: [f64; 3]) -> Self {
        self.set_rgb(rgb);
        self
    }

    pub fn dc(&self) -> [f32; 3] {
        [self.color_sh[0], self.color_sh[1], self.color_sh[2]]
    }

    /// Base color from the DC coefficients, clamped to [0, 1].
    pub fn rgb(&self) -> [f64; 3] {
        let dc = self.dc();
        [0, 1, 2].map(|c| (0.5 + SH_C0 * dc[c] as f64).clamp(0.0, 1.0))
    }

    /// Unclamped DC color; used by color augmentations that must stay invertible.
    pub fn rgb_unclamped(&self) -> [f64; 3] {
        let dc = self.dc();
        [0, 1, 2].map(|c| 0.5 + SH_C0 * dc[c] as f64)
    }

    pub fn set_rgb(&mut self, rgb: [f64; 3]) {
        for c in 0..3 {
            self.color_sh[c] = ((rgb[c] - 0.5) / SH_C0) as f32;
        }
    }

    pub fn to_attributes(&self) -> [f32; ATTR_DIM] {
        let mut out = [0.0f32; ATTR_DIM];
        out[layout::CENTER].copy_from_slice(&self.center);
        out[layout::SCALE].copy_from_slice(&self.scale);
        out[layout::ROTATION].copy_from_slice(&self.rotation);
        out[layout::OPACITY.start] = self.opacity;
        out[layout::COLOR].copy_from_slice(&self.color_sh);
        out
    }

    pub fn from_attributes(attrs: &[f32]) -> Result<Self> {
        if attrs.len() != ATTR_DIM {
            return Err(Error::DimensionMismatch(format!(
                "expected {ATTR_DIM} attributes, got {}",
                attrs.len()
            )));
        }
        let mut color_sh = [0.0; SH_COEFFS];
        color_sh.copy_from_slice(&attrs[layout::COLOR]);
        Ok(Self {
            center: attrs[layout::CENTER].try_into().unwrap(),
            scale: attrs[layout::SCALE].try_into().unwrap(),
            rotation: attrs[layout::ROTATION].try_into().unwrap(),
            opacity: attrs[layout::OPACITY.start],
            color_sh,
        })
    }

    /// Checks the activated-domain invariants.
    pub fn validate(&self, index: usize) -> Result<()> {
        if !self.to_attributes().iter().all(|v| v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite attribute at primitive {index}"
            )));
        }
        if self.scale.iter().any(|&s| s <= 0.0) {
            return Err(Error::Validation(format!(
                "non-positive scale at primitive {index}"
            )));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::Validation(format!(
                "opacity {} outside [0, 1] at primitive {index}",
                self.opacity
            )));
        }
        let n = quat_norm(&self.rotation);
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::Validation(format!(
                "rotation norm {n} is not unit at primitive {index}"
            )));
        }
        Ok(())
    }

    pub fn center_f64(&self) -> [f64; 3] {
        self.center.map(f64::from)
    }

    /// World-space covariance R diag(s^2) R^T.
    pub fn covariance(&self) -> [[f64; 3]; 3] {
        let r = quat_to_matrix(&self.rotation.map(f64::from));
        let s2 = self.scale.map(|s| (s as f64) * (s as f64));
        let mut cov = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] = (0..3).map(|k| r[i][k] * s2[k] * r[j][k]).sum();
            }
        }
        cov
    }
}

/// Provenance attached to a scene when known.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceMeta {
    pub frame_count: Option<u32>,
    pub psnr: Option<f64>,
}

/// Ordered primitives; index `i` identifies a primitive across every derived artifact.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianScene {
    pub scene_id: String,
    pub primitives: Vec<GaussianPrimitive>,
    pub source_meta: Option<SourceMeta>,
}

impl GaussianScene {
    pub fn new(scene_id: impl Into<String>, primitives: Vec<GaussianPrimitive>) -> Self {
        Self {
            scene_id: scene_id.into(),
            primitives,
            source_meta: None,
        }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn centers(&self) -> Vec<[f64; 3]> {
        self.primitives.iter().map(|p| p.center_f64()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.primitives
            .iter()
            .enumerate()
            .try_for_each(|(i, p)| p.validate(i))
    }

    /// Sub-scene made of the given primitive indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> GaussianScene {
        GaussianScene {
            scene_id: self.scene_id.clone(),
            primitives: indices.iter().map(|&i| self.primitives[i].clone()).collect(),
            source_meta: self.source_meta.clone(),
        }
    }
}

pub fn quat_norm(q: &[f32; 4]) -> f64 {
    q.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}

/// Normalizes in place unless already unit within 1e-6, so stored unit quaternions keep their bits.
pub fn normalize_quat(q: &mut [f32; 4]) -> Result<()> {
    let n = quat_norm(q);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Validation(format!("degenerate quaternion {q:?}")));
    }
    if (n - 1.0).abs() > 1e-6 {
        for v in q.iter_mut() {
            *v = (*v as f64 / n) as f32;
        }
    }
    Ok(())
}

/// Hamilton product a * b, (w, x, y, z) convention.
pub fn quat_mul(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    let [aw, ax, ay, az] = *a;
    let [bw, bx, by, bz] = *b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

pub fn quat_from_axis_angle(axis: [f64; 3], angle: f64) -> [f64; 4] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let (s, c) = (angle / 2.0).sin_cos();
    [c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n]
}

/// Rotation matrix of a (not necessarily unit) quaternion; the quaternion is normalized first.
pub fn quat_to_matrix(q: &[f64; 4]) -> [[f64; 3]; 3] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attribute_layout_round_trips() {
        let mut p = GaussianPrimitive::new([1.0, 2.0, 3.0], [0.1, 0.2, 0.3], [1.0, 0.0, 0.0, 0.0], 0.7);
        for (i, c) in p.color_sh.iter_mut().enumerate() {
            *c = i as f32 * 0.01;
        }
        let attrs = p.to_attributes();
        assert_eq!(attrs.len(), 59);
        assert_eq!(GaussianPrimitive::from_attributes(&attrs).unwrap(), p);
    }

    #[test]
    fn rgb_dc_inverse() {
        let p = GaussianPrimitive::new([0.0; 3], [1.0; 3], [1.0, 0.0, 0.0, 0.0], 1.0).with_rgb([1.0, 0.0, 0.25]);
        let rgb = p.rgb();
        assert!((rgb[0] - 1.0).abs() < 1e-6 && rgb[1].abs() < 1e-6 && (rgb[2] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn quaternion_matrix_is_orthonormal() {
        let q = quat_from_axis_angle([1.0, 2.0, -0.5], 0.9);
        let r = quat_to_matrix(&q);
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalize_keeps_unit_bits() {
        let mut q = [0.5f32, 0.5, 0.5, 0.5];
        normalize_quat(&mut q).unwrap();
        assert_eq!(q, [0.5, 0.5, 0.5, 0.5]);
        let mut q = [2.0f32, 0.0, 0.0, 0.0];
        normalize_quat(&mut q).unwrap();
        assert_eq!(q, [1.0, 0.0, 0.0, 0.0]);
        assert!(normalize_quat(&mut [0.0; 4]).is_err());
    }
}
