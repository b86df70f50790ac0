//! CPU splatting: projection, front-to-back alpha compositing, blend weights.

use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::scene::{GaussianPrimitive, GaussianScene};

pub const NEAR_PLANE: f64 = 0.01;
pub const ALPHA_MAX: f64 = 0.99;
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
pub const MAX_CONDITION: f64 = 1e8;
pub const DEFAULT_MAX_CONTRIBS: usize = 64;
const TILE: u32 = 16;

/// Screen-space footprint of one Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D {
    /// Pixel coordinates (x right, y down); pixel (row, col) has its center at (col + 0.5, row + 0.5).
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    pub depth: f64,
    /// 3-sigma extent along the major axis, in pixels.
    pub radius: f64,
}

impl Splat2D {
    fn eigenvalues(&self) -> (f64, f64) {
        let [[a, b], [_, d]] = self.cov;
        let mid = 0.5 * (a + d);
        let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        (mid + disc, mid - disc)
    }

    pub fn condition_number(&self) -> f64 {
        let (hi, lo) = self.eigenvalues();
        if lo <= 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }

    /// Inverse covariance, or `None` for (near) singular footprints.
    pub fn conic(&self) -> Option<[f64; 3]> {
        if self.condition_number() > MAX_CONDITION {
            return None;
        }
        let [[a, b], [_, d]] = self.cov;
        let det = a * d - b * b;
        Some([d / det, -b / det, a / det])
    }
}

/// Projects a Gaussian through the pinhole model with the local affine (Jacobian) approximation.
pub fn project_gaussian(g: &GaussianPrimitive, cam: &Camera) -> Option<Splat2D> {
    let [x, y, z] = cam.world_to_camera(g.center_f64());
    if z <= NEAR_PLANE {
        return None;
    }
    let mean = [cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy];
    let j = [
        [cam.fx / z, 0.0, -cam.fx * x / (z * z)],
        [0.0, cam.fy / z, -cam.fy * y / (z * z)],
    ];
    let w = &cam.rotation;
    // T = J W, cov2d = T Sigma T^T.
    let mut t = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            t[r][c] = (0..3).map(|k| j[r][k] * w[k][c]).sum();
        }
    }
    let sigma = g.covariance();
    let mut ts = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            ts[r][c] = (0..3).map(|k| t[r][k] * sigma[k][c]).sum();
        }
    }
    let mut cov = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            cov[r][c] = (0..3).map(|k| ts[r][k] * t[c][k]).sum();
        }
    }
    let sym = 0.5 * (cov[0][1] + cov[1][0]);
    cov[0][1] = sym;
    cov[1][0] = sym;
    let mut splat = Splat2D {
        mean,
        cov,
        depth: z,
        radius: 0.0,
    };
    let (lambda_max, _) = splat.eigenvalues();
    splat.radius = 3.0 * lambda_max.max(0.0).sqrt();
    let (w_px, h_px) = (cam.width as f64, cam.height as f64);
    if mean[0] + splat.radius < 0.0
        || mean[0] - splat.radius > w_px
        || mean[1] + splat.radius < 0.0
        || mean[1] - splat.radius > h_px
    {
        return None;
    }
    Some(splat)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlendContribution {
    pub primitive: u32,
    pub row: u32,
    pub col: u32,
    /// alpha_i * prod_{j<i} (1 - alpha_j)
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderTarget {
    pub width: u32,
    pub height: u32,
    /// Row-major interleaved RGB in [0, 1].
    pub rgb: Vec<f32>,
    /// 1 - final transmittance per pixel.
    pub alpha: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RenderDiagnostics {
    pub culled: usize,
    /// Pixel evaluations skipped because the footprint was numerically singular.
    pub singular_skips: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub target: RenderTarget,
    /// Tile-major, then scan order inside a tile, then front-to-back.
    pub contributions: Vec<BlendContribution>,
    pub diagnostics: RenderDiagnostics,
}

struct Prepared {
    index: u32,
    splat: Splat2D,
    conic: Option<[f64; 3]>,
    opacity: f64,
    rgb: [f64; 3],
    bbox: [f64; 4],
}

struct TileResult {
    x0: u32,
    y0: u32,
    w: u32,
    h: u32,
    rgb: Vec<f32>,
    alpha: Vec<f64>,
    contributions: Vec<BlendContribution>,
    singular_skips: usize,
}

/// Renders DC color and records every blend weight. Runs tiles on the current rayon pool;
/// the output does not depend on the number of workers.
pub fn composite(scene: &GaussianScene, cam: &Camera, max_contribs_per_pixel: usize) -> Result<RenderOutput> {
    cam.validate()?;
    if max_contribs_per_pixel == 0 {
        return Err(Error::Validation("max_contribs_per_pixel must be positive".into()));
    }
    let mut prepared: Vec<Prepared> = Vec::new();
    let mut culled = 0;
    for (i, g) in scene.primitives.iter().enumerate() {
        match project_gaussian(g, cam) {
            Some(splat) => {
                let r = splat.radius;
                let bbox = [splat.mean[0] - r, splat.mean[0] + r, splat.mean[1] - r, splat.mean[1] + r];
                prepared.push(Prepared {
                    index: i as u32,
                    conic: splat.conic(),
                    splat,
                    opacity: g.opacity as f64,
                    rgb: g.rgb(),
                    bbox,
                });
            }
            None => culled += 1,
        }
    }
    prepared.sort_by(|a, b| a.splat.depth.total_cmp(&b.splat.depth).then(a.index.cmp(&b.index)));

    let (width, height) = (cam.width, cam.height);
    let tiles_x = width.div_ceil(TILE);
    let tiles_y = height.div_ceil(TILE);
    let tiles: Vec<(u32, u32)> = (0..tiles_y).flat_map(|ty| (0..tiles_x).map(move |tx| (tx, ty))).collect();

    let results: Vec<TileResult> = tiles
        .par_iter()
        .map(|&(tx, ty)| render_tile(&prepared, tx * TILE, ty * TILE, width, height, max_contribs_per_pixel))
        .collect();

    let npix = (width * height) as usize;
    let mut rgb = vec![0.0f32; npix * 3];
    let mut alpha = vec![0.0f64; npix];
    let mut contributions = Vec::new();
    let mut singular_skips = 0;
    for t in results {
        for ly in 0..t.h {
            for lx in 0..t.w {
                let local = (ly * t.w + lx) as usize;
                let global = ((t.y0 + ly) * width + t.x0 + lx) as usize;
                rgb[global * 3..global * 3 + 3].copy_from_slice(&t.rgb[local * 3..local * 3 + 3]);
                alpha[global] = t.alpha[local];
            }
        }
        contributions.extend(t.contributions);
        singular_skips += t.singular_skips;
    }
    Ok(RenderOutput {
        target: RenderTarget { width, height, rgb, alpha },
        contributions,
        diagnostics: RenderDiagnostics { culled, singular_skips },
    })
}

fn render_tile(prepared: &[Prepared], x0: u32, y0: u32, width: u32, height: u32, max_contribs: usize) -> TileResult {
    let w = TILE.min(width - x0);
    let h = TILE.min(height - y0);
    let (fx0, fx1, fy0, fy1) = (x0 as f64, (x0 + w) as f64, y0 as f64, (y0 + h) as f64);
    let overlapping: Vec<&Prepared> = prepared
        .iter()
        .filter(|p| p.bbox[1] >= fx0 && p.bbox[0] <= fx1 && p.bbox[3] >= fy0 && p.bbox[2] <= fy1)
        .collect();

    let mut out = TileResult {
        x0,
        y0,
        w,
        h,
        rgb: vec![0.0; (w * h * 3) as usize],
        alpha: vec![0.0; (w * h) as usize],
        contributions: Vec::new(),
        singular_skips: 0,
    };
    for ly in 0..h {
        for lx in 0..w {
            let (col, row) = (x0 + lx, y0 + ly);
            let (px, py) = (col as f64 + 0.5, row as f64 + 0.5);
            let mut transmittance = 1.0f64;
            let mut color = [0.0f64; 3];
            let mut count = 0;
            for p in &overlapping {
                if px < p.bbox[0] || px > p.bbox[1] || py < p.bbox[2] || py > p.bbox[3] {
                    continue;
                }
                let Some([a, b, c]) = p.conic else {
                    out.singular_skips += 1;
                    continue;
                };
                let dx = px - p.splat.mean[0];
                let dy = py - p.splat.mean[1];
                let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
                let alpha = (p.opacity * power.exp()).clamp(0.0, ALPHA_MAX);
                if alpha <= 0.0 {
                    continue;
                }
                let weight = alpha * transmittance;
                out.contributions.push(BlendContribution {
                    primitive: p.index,
                    row,
                    col,
                    weight,
                });
                for ch in 0..3 {
                    color[ch] += weight * p.rgb[ch];
                }
                transmittance *= 1.0 - alpha;
                count += 1;
                if transmittance < MIN_TRANSMITTANCE || count >= max_contribs {
                    break;
                }
            }
            let local = (ly * w + lx) as usize;
            for ch in 0..3 {
                out.rgb[local * 3 + ch] = color[ch].clamp(0.0, 1.0) as f32;
            }
            out.alpha[local] = 1.0 - transmittance;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::quat_from_axis_angle;

    fn iso(center: [f32; 3], sigma: f32, opacity: f32) -> GaussianPrimitive {
        GaussianPrimitive::new(center, [sigma; 3], [1.0, 0.0, 0.0, 0.0], opacity)
    }

    #[test]
    fn isotropic_projection_closed_form() {
        let cam = Camera::looking_down_z(100, 80, 120.0);
        let (sigma, z) = (0.05f32, 2.0f32);
        let s = project_gaussian(&iso([0.0, 0.0, z], sigma, 1.0), &cam).unwrap();
        let want = (120.0 * sigma as f64 / z as f64).powi(2);
        assert!((s.cov[0][0] - want).abs() < 1e-9);
        assert!((s.cov[1][1] - want).abs() < 1e-9);
        assert!(s.cov[0][1].abs() < 1e-12);
        assert_eq!(s.mean, [50.0, 40.0]);
    }

    #[test]
    fn behind_camera_is_culled() {
        let cam = Camera::looking_down_z(10, 10, 10.0);
        assert!(project_gaussian(&iso([0.0, 0.0, -1.0], 0.1, 1.0), &cam).is_none());
        assert!(project_gaussian(&iso([100.0, 0.0, 1.0], 0.01, 1.0), &cam).is_none());
    }

    #[test]
    fn rotated_isotropic_is_unchanged() {
        let cam = Camera::looking_down_z(64, 64, 80.0);
        let g = iso([0.3, -0.2, 3.0], 0.1, 1.0);
        let mut r = g.clone();
        r.rotation = quat_from_axis_angle([0.2, 1.0, -0.4], 1.1).map(|v| v as f32);
        let a = project_gaussian(&g, &cam).unwrap();
        let b = project_gaussian(&r, &cam).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((a.cov[i][j] - b.cov[i][j]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn single_covering_gaussian() {
        // 1x1 image; Gaussian centered on the only pixel center.
        let mut cam = Camera::looking_down_z(1, 1, 10.0);
        cam.cx = 0.5;
        cam.cy = 0.5;
        let scene = GaussianScene::new("s", vec![iso([0.0, 0.0, 1.0], 1.0, 0.8)]);
        let out = composite(&scene, &cam, 64).unwrap();
        assert_eq!(out.contributions.len(), 1);
        assert!((out.contributions[0].weight - 0.8).abs() < 1e-7);
    }

    #[test]
    fn stacked_halves() {
        let mut cam = Camera::looking_down_z(1, 1, 10.0);
        cam.cx = 0.5;
        cam.cy = 0.5;
        let scene = GaussianScene::new(
            "s",
            vec![iso([0.0, 0.0, 2.0], 1.0, 0.5), iso([0.0, 0.0, 1.0], 1.0, 0.5)],
        );
        let out = composite(&scene, &cam, 64).unwrap();
        let w: Vec<(u32, f64)> = out.contributions.iter().map(|c| (c.primitive, c.weight)).collect();
        assert_eq!(w, vec![(1, 0.5), (0, 0.25)]);
        assert!((out.target.alpha[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn empty_scene_is_black() {
        let cam = Camera::looking_down_z(20, 10, 10.0);
        let out = composite(&GaussianScene::default(), &cam, 64).unwrap();
        assert!(out.target.rgb.iter().all(|&v| v == 0.0));
        assert!(out.target.alpha.iter().all(|&a| a == 0.0));
        assert!(out.contributions.is_empty());
    }

    #[test]
    fn degenerate_footprint_is_tallied() {
        let mut cam = Camera::looking_down_z(8, 8, 10.0);
        cam.cx = 4.0;
        cam.cy = 4.0;
        let mut g = iso([0.0, 0.0, 1.0], 0.3, 0.9);
        g.scale = [0.3, 1e-9, 0.3];
        let out = composite(&GaussianScene::new("s", vec![g]), &cam, 64).unwrap();
        assert!(out.diagnostics.singular_skips > 0);
        assert!(out.contributions.is_empty());
    }

    #[test]
    fn contribution_cap() {
        let mut cam = Camera::looking_down_z(1, 1, 10.0);
        cam.cx = 0.5;
        cam.cy = 0.5;
        let prims = (0..10).map(|i| iso([0.0, 0.0, 1.0 + i as f32], 5.0, 0.1)).collect();
        let out = composite(&GaussianScene::new("s", prims), &cam, 3).unwrap();
        assert_eq!(out.contributions.len(), 3);
        let sum: f64 = out.contributions.iter().map(|c| c.weight).sum();
        assert!((sum - out.target.alpha[0]).abs() < 1e-12);
    }
}
