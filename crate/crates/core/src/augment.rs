//! Geometric and photometric augmentations for Gaussian sets.
//!
//! Transforms run in list order. Geometric steps act jointly on centers,
//! scales and rotations; color steps act on the DC coefficients only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{grid_sample_positions, CropView};
use crate::scene::{quat_from_axis_angle, quat_mul, quat_to_matrix, GaussianPrimitive, GaussianScene};
use crate::spatial::KdTree;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Augmentation {
    /// Rotation about the bounding-box center; `angle` is in units of pi.
    RandomRotate { axis: Axis, angle: [f64; 2], p: f64 },
    /// Isotropic scaling of centers and Gaussian extents about the origin.
    RandomScale { scale: [f64; 2], p: f64 },
    /// Each listed axis is mirrored independently with probability `p`.
    RandomFlip { axes: Vec<Axis>, p: f64 },
    RandomJitter { sigma: f64, clip: f64, p: f64 },
    /// `params` holds (granularity, magnitude) pairs.
    ElasticDistort { params: Vec<[f64; 2]>, p: f64 },
    GridSample { grid_size: f64 },
    RandomDropout { ratio: f64, p: f64 },
    ColorJitter {
        brightness: f64,
        contrast: f64,
        saturation: f64,
        hue: f64,
        p: f64,
    },
    RandomGrayscale { p: f64 },
    /// Spatial color smoothing over the `k` nearest neighbors with a Gaussian kernel.
    GaussianBlur { p: f64, k: usize, sigma: f64 },
}

impl Augmentation {
    fn probability(&self) -> Option<f64> {
        use Augmentation::*;
        match self {
            RandomRotate { p, .. }
            | RandomScale { p, .. }
            | RandomFlip { p, .. }
            | RandomJitter { p, .. }
            | ElasticDistort { p, .. }
            | RandomDropout { p, .. }
            | ColorJitter { p, .. }
            | RandomGrayscale { p }
            | GaussianBlur { p, .. } => Some(*p),
            GridSample { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        use Augmentation::*;
        if let Some(p) = self.probability() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Validation(format!("probability {p} outside [0, 1] in {self:?}")));
            }
        }
        let ordered = |r: &[f64; 2]| r[0] <= r[1] && r.iter().all(|v| v.is_finite());
        let ok = match self {
            RandomRotate { angle, .. } => ordered(angle),
            RandomScale { scale, .. } => ordered(scale) && scale[0] > 0.0,
            RandomFlip { .. } | RandomGrayscale { .. } => true,
            RandomJitter { sigma, clip, .. } => *sigma >= 0.0 && *clip >= 0.0,
            ElasticDistort { params, .. } => params.iter().all(|[g, m]| *g > 0.0 && m.is_finite()),
            GridSample { grid_size } => *grid_size > 0.0,
            RandomDropout { ratio, .. } => (0.0..1.0).contains(ratio),
            ColorJitter {
                brightness,
                contrast,
                saturation,
                hue,
                ..
            } => *brightness >= 0.0 && *contrast >= 0.0 && *saturation >= 0.0 && (0.0..=0.5).contains(hue),
            GaussianBlur { k, sigma, .. } => *k >= 1 && *sigma > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("ill-formed augmentation parameters: {self:?}")))
        }
    }
}

/// Neighbor-count band for crops: K ~ U[ratio] * cap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropBand {
    pub ratio: [f64; 2],
    pub cap: usize,
}

impl CropBand {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.ratio[0] && self.ratio[0] <= self.ratio[1] && self.ratio[1] <= 1.0) || self.cap == 0 {
            return Err(Error::Validation(format!("ill-formed crop band {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    #[serde(default)]
    pub steps: Vec<Augmentation>,
    #[serde(default = "default_global_crop")]
    pub global_crop: CropBand,
    #[serde(default = "default_local_crop")]
    pub local_crop: CropBand,
}

fn default_global_crop() -> CropBand {
    CropBand { ratio: [0.4, 1.0], cap: 4096 }
}

fn default_local_crop() -> CropBand {
    CropBand { ratio: [0.1, 0.4], cap: 1024 }
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            steps: Vec::new(),
            global_crop: default_global_crop(),
            local_crop: default_local_crop(),
        }
    }
}

impl AugmentationSpec {
    pub fn with_steps(steps: Vec<Augmentation>) -> Self {
        Self {
            steps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.global_crop.validate()?;
        self.local_crop.validate()?;
        self.steps.iter().try_for_each(Augmentation::validate)
    }
}

/// Crop caps used by the million-splat reference setup.
pub const REFERENCE_GLOBAL_CAP: usize = 256_000;
pub const REFERENCE_LOCAL_CAP: usize = 102_400;

fn color_jitter() -> Augmentation {
    Augmentation::ColorJitter {
        brightness: 0.4,
        contrast: 0.4,
        saturation: 0.2,
        hue: 0.1,
        p: 0.8,
    }
}

fn blur(p: f64) -> Augmentation {
    Augmentation::GaussianBlur { p, k: 8, sigma: 0.02 }
}

/// The multi-view augmentation recipe: a shared base transform, then per-view transforms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationTable {
    pub base: AugmentationSpec,
    pub global_base: AugmentationSpec,
    /// Global transforms 0 and 1; transform 1 is the weaker one.
    pub global: [AugmentationSpec; 2],
    pub local_base: AugmentationSpec,
    pub local: AugmentationSpec,
}

impl AugmentationTable {
    /// Standard recipe with the given base grid size and crop bands.
    pub fn standard(grid_size: f64, global_crop: CropBand, local_crop: CropBand) -> Self {
        use Augmentation::*;
        let crops = |steps| AugmentationSpec {
            steps,
            global_crop: global_crop.clone(),
            local_crop: local_crop.clone(),
        };
        let flip = || RandomFlip { axes: vec![Axis::X, Axis::Y], p: 0.5 };
        AugmentationTable {
            base: crops(vec![
                RandomRotate { axis: Axis::Z, angle: [-1.0, 1.0], p: 0.5 },
                RandomRotate { axis: Axis::X, angle: [-1.0 / 64.0, 1.0 / 64.0], p: 0.5 },
                RandomRotate { axis: Axis::Y, angle: [-1.0 / 64.0, 1.0 / 64.0], p: 0.5 },
                RandomScale { scale: [0.9, 1.1], p: 1.0 },
                flip(),
                RandomJitter { sigma: 0.005, clip: 0.02, p: 1.0 },
                ElasticDistort { params: vec![[0.9, 0.1]], p: 0.95 },
                GridSample { grid_size },
            ]),
            global_base: crops(vec![flip()]),
            global: [
                crops(vec![color_jitter(), RandomGrayscale { p: 0.2 }, blur(1.0)]),
                crops(vec![
                    RandomDropout { ratio: 0.2, p: 0.2 },
                    color_jitter(),
                    RandomGrayscale { p: 0.2 },
                    blur(0.2),
                ]),
            ],
            local_base: crops(vec![ElasticDistort { params: vec![[0.2, 0.4], [0.8, 1.6]], p: 0.95 }, flip()]),
            local: crops(vec![
                RandomDropout { ratio: 0.2, p: 0.2 },
                color_jitter(),
                RandomGrayscale { p: 0.2 },
                blur(0.5),
            ]),
        }
    }

    /// Only grid sampling; every random transform is off.
    pub fn disabled(grid_size: f64, global_crop: CropBand, local_crop: CropBand) -> Self {
        let crops = |steps| AugmentationSpec {
            steps,
            global_crop: global_crop.clone(),
            local_crop: local_crop.clone(),
        };
        AugmentationTable {
            base: crops(vec![Augmentation::GridSample { grid_size }]),
            global_base: crops(vec![]),
            global: [crops(vec![]), crops(vec![])],
            local_base: crops(vec![]),
            local: crops(vec![]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for s in [&self.base, &self.global_base, &self.global[0], &self.global[1], &self.local_base, &self.local] {
            s.validate()?;
        }
        Ok(())
    }
}

/// One applied transform and its sampled parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugLogEntry {
    pub name: String,
    pub params: Vec<(String, f64)>,
}

impl AugLogEntry {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            params: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.push((key.to_string(), value));
        self
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.params.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }
}

/// Primitives with their originating scene indices.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSet {
    pub indices: Vec<usize>,
    pub primitives: Vec<GaussianPrimitive>,
}

impl GaussianSet {
    pub fn from_scene(scene: &GaussianScene) -> Self {
        Self {
            indices: (0..scene.len()).collect(),
            primitives: scene.primitives.clone(),
        }
    }

    pub fn from_view(scene: &GaussianScene, view: &CropView) -> Self {
        Self {
            indices: view.indices.clone(),
            primitives: view.indices.iter().map(|&i| scene.primitives[i].clone()).collect(),
        }
    }

    /// Positions `keep` (ascending) of this set as a new set.
    pub fn subset(&self, keep: &[usize]) -> Self {
        Self {
            indices: keep.iter().map(|&k| self.indices[k]).collect(),
            primitives: keep.iter().map(|&k| self.primitives[k].clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn to_scene(&self, scene_id: &str) -> GaussianScene {
        GaussianScene::new(scene_id, self.primitives.clone())
    }

    pub fn centers(&self) -> Vec<[f64; 3]> {
        self.primitives.iter().map(|p| p.center_f64()).collect()
    }
}

/// Applies `spec.steps` in order and returns the augmented copy plus the log.
pub fn apply_augmentation(set: &GaussianSet, spec: &AugmentationSpec, rng_seed: u64) -> Result<(GaussianSet, Vec<AugLogEntry>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = set.clone();
    let mut log = Vec::new();
    for step in &spec.steps {
        if out.is_empty() {
            break;
        }
        if let Some(p) = step.probability() {
            // Draw unconditionally so later steps see the same stream regardless of p.
            let u: f64 = rng.random();
            if !(u < p) {
                continue;
            }
        }
        apply_step(&mut out, step, &mut rng, &mut log);
    }
    Ok((out, log))
}

fn sample_range(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] < r[1] {
        rng.random_range(r[0]..=r[1])
    } else {
        r[0]
    }
}

fn bbox_center(set: &GaussianSet) -> [f64; 3] {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for c in set.centers() {
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    [0, 1, 2].map(|a| 0.5 * (lo[a] + hi[a]))
}

/// Rotates every primitive by `rotation` about `pivot`; quaternions compose on the left.
pub fn rotate_set(set: &mut GaussianSet, rotation: [f64; 4], pivot: [f64; 3]) {
    let r = quat_to_matrix(&rotation);
    for p in &mut set.primitives {
        let c = p.center_f64();
        let d = [c[0] - pivot[0], c[1] - pivot[1], c[2] - pivot[2]];
        for i in 0..3 {
            p.center[i] = (pivot[i] + r[i][0] * d[0] + r[i][1] * d[1] + r[i][2] * d[2]) as f32;
        }
        let q = quat_mul(&rotation, &p.rotation.map(f64::from));
        let n = (q.iter().map(|v| v * v).sum::<f64>()).sqrt();
        p.rotation = q.map(|v| (v / n) as f32);
    }
}

/// Mirrors one axis. With F the reflection, F R F is a proper rotation whose
/// quaternion keeps w and the flipped component and negates the other two.
pub fn flip_set(set: &mut GaussianSet, axis: Axis) {
    let a = axis.index();
    for p in &mut set.primitives {
        p.center[a] = -p.center[a];
        for k in 0..3 {
            if k != a {
                p.rotation[k + 1] = -p.rotation[k + 1];
            }
        }
    }
}

fn apply_step(set: &mut GaussianSet, step: &Augmentation, rng: &mut ChaCha8Rng, log: &mut Vec<AugLogEntry>) {
    use Augmentation::*;
    match step {
        RandomRotate { axis, angle, .. } => {
            let theta = sample_range(rng, *angle) * std::f64::consts::PI;
            let mut ax = [0.0; 3];
            ax[axis.index()] = 1.0;
            let pivot = bbox_center(set);
            rotate_set(set, quat_from_axis_angle(ax, theta), pivot);
            log.push(
                AugLogEntry::new("random_rotate")
                    .with("axis", axis.index() as f64)
                    .with("angle", theta),
            );
        }
        RandomScale { scale, .. } => {
            let s = sample_range(rng, *scale);
            for p in &mut set.primitives {
                p.center = p.center.map(|v| (v as f64 * s) as f32);
                p.scale = p.scale.map(|v| (v as f64 * s) as f32);
            }
            log.push(AugLogEntry::new("random_scale").with("scale", s));
        }
        RandomFlip { axes, p } => {
            // The outer draw already passed for the first axis; remaining axes draw their own.
            for (k, axis) in axes.iter().enumerate() {
                let take = k == 0 || rng.random::<f64>() < *p;
                if take {
                    flip_set(set, *axis);
                    log.push(AugLogEntry::new("random_flip").with("axis", axis.index() as f64));
                }
            }
        }
        RandomJitter { sigma, clip, .. } => {
            for p in &mut set.primitives {
                for a in 0..3 {
                    let n: f64 = StandardNormal.sample(rng);
                    p.center[a] = (p.center[a] as f64 + (sigma * n).clamp(-clip, *clip)) as f32;
                }
            }
            log.push(AugLogEntry::new("random_jitter").with("sigma", *sigma).with("clip", *clip));
        }
        ElasticDistort { params, .. } => {
            for &[granularity, magnitude] in params {
                elastic_distort(set, granularity, magnitude, rng);
                log.push(
                    AugLogEntry::new("elastic_distort")
                        .with("granularity", granularity)
                        .with("magnitude", magnitude),
                );
            }
        }
        GridSample { grid_size } => {
            let keep = grid_sample_positions(&set.centers(), *grid_size);
            let before = set.len();
            *set = set.subset(&keep);
            log.push(
                AugLogEntry::new("grid_sample")
                    .with("grid_size", *grid_size)
                    .with("removed", (before - set.len()) as f64),
            );
        }
        RandomDropout { ratio, .. } => {
            let n = set.len();
            let keep_n = ((n as f64) * (1.0 - ratio)).floor().max(1.0) as usize;
            let mut keep: Vec<usize> = rand::seq::index::sample(rng, n, keep_n).into_vec();
            keep.sort_unstable();
            *set = set.subset(&keep);
            log.push(AugLogEntry::new("random_dropout").with("ratio", *ratio).with("kept", keep_n as f64));
        }
        ColorJitter {
            brightness,
            contrast,
            saturation,
            hue,
            ..
        } => {
            let b = sample_range(rng, [1.0 - brightness, 1.0 + brightness]).max(0.0);
            let c = sample_range(rng, [1.0 - contrast, 1.0 + contrast]).max(0.0);
            let s = sample_range(rng, [1.0 - saturation, 1.0 + saturation]).max(0.0);
            let h = sample_range(rng, [-hue, *hue]);
            color_jitter_set(set, b, c, s, h);
            log.push(
                AugLogEntry::new("color_jitter")
                    .with("brightness", b)
                    .with("contrast", c)
                    .with("saturation", s)
                    .with("hue", h),
            );
        }
        RandomGrayscale { .. } => {
            for p in &mut set.primitives {
                let g = gray(p.rgb());
                p.set_rgb([g, g, g]);
            }
            log.push(AugLogEntry::new("random_grayscale"));
        }
        GaussianBlur { k, sigma, .. } => {
            let centers = set.centers();
            let tree = KdTree::new(&centers);
            let colors: Vec<[f64; 3]> = set.primitives.iter().map(|p| p.rgb()).collect();
            for (i, p) in set.primitives.iter_mut().enumerate() {
                let mut acc = [0.0; 3];
                let mut wsum = 0.0;
                for (j, d) in tree.nearest(centers[i], *k) {
                    let w = (-d * d / (2.0 * sigma * sigma)).exp();
                    wsum += w;
                    for ch in 0..3 {
                        acc[ch] += w * colors[j][ch];
                    }
                }
                p.set_rgb(acc.map(|v| v / wsum));
            }
            log.push(AugLogEntry::new("gaussian_blur").with("k", *k as f64).with("sigma", *sigma));
        }
    }
}

fn gray(rgb: [f64; 3]) -> f64 {
    0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
}

fn color_jitter_set(set: &mut GaussianSet, b: f64, c: f64, s: f64, h: f64) {
    let mut colors: Vec<[f64; 3]> = set
        .primitives
        .iter()
        .map(|p| p.rgb().map(|v| (v * b).clamp(0.0, 1.0)))
        .collect();
    let mean = colors.iter().map(|&rgb| gray(rgb)).sum::<f64>() / colors.len() as f64;
    for rgb in &mut colors {
        *rgb = rgb.map(|v| ((v - mean) * c + mean).clamp(0.0, 1.0));
        let g = gray(*rgb);
        *rgb = rgb.map(|v| ((v - g) * s + g).clamp(0.0, 1.0));
        *rgb = shift_hue(*rgb, h);
    }
    for (p, rgb) in set.primitives.iter_mut().zip(colors) {
        p.set_rgb(rgb);
    }
}

fn shift_hue(rgb: [f64; 3], shift: f64) -> [f64; 3] {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if delta <= 0.0 {
        return rgb;
    }
    let mut hue = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    } / 6.0;
    hue = (hue + shift).rem_euclid(1.0);
    let sat = delta / max;
    let v = max;
    let h6 = hue * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - sat);
    let q = v * (1.0 - sat * f);
    let t = v * (1.0 - sat * (1.0 - f));
    match sector as i32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Smooth random displacement field: box-blurred Gaussian noise on a coarse
/// grid, sampled trilinearly at each center.
fn elastic_distort(set: &mut GaussianSet, granularity: f64, magnitude: f64, rng: &mut ChaCha8Rng) {
    let centers = set.centers();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for c in &centers {
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    let dims = [0, 1, 2].map(|a| ((hi[a] - lo[a]) / granularity).floor() as usize + 3);
    let at = |x: usize, y: usize, z: usize| (x * dims[1] + y) * dims[2] + z;
    let total = dims[0] * dims[1] * dims[2];
    let mut noise: Vec<[f64; 3]> = (0..total)
        .map(|_| [0; 3].map(|_: u8| StandardNormal.sample(&mut *rng)))
        .collect();

    for _ in 0..2 {
        for axis in 0..3 {
            let mut blurred = vec![[0.0; 3]; total];
            for x in 0..dims[0] {
                for y in 0..dims[1] {
                    for z in 0..dims[2] {
                        let pos = [x, y, z];
                        let mut acc = [0.0; 3];
                        for off in [-1i64, 0, 1] {
                            let mut q = pos;
                            let v = pos[axis] as i64 + off;
                            if v < 0 || v >= dims[axis] as i64 {
                                continue;
                            }
                            q[axis] = v as usize;
                            let n = noise[at(q[0], q[1], q[2])];
                            for ch in 0..3 {
                                acc[ch] += n[ch] / 3.0;
                            }
                        }
                        blurred[at(x, y, z)] = acc;
                    }
                }
            }
            noise = blurred;
        }
    }

    // Grid node i sits at lo - granularity + i * granularity.
    for p in set.primitives.iter_mut() {
        let c = p.center_f64();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let u = (c[a] - (lo[a] - granularity)) / granularity;
            let i = (u.floor() as usize).min(dims[a] - 2);
            base[a] = i;
            frac[a] = (u - i as f64).clamp(0.0, 1.0);
        }
        let mut disp = [0.0; 3];
        for corner in 0..8 {
            let o = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let w: f64 = (0..3).map(|a| if o[a] == 1 { frac[a] } else { 1.0 - frac[a] }).product();
            let n = noise[at(base[0] + o[0], base[1] + o[1], base[2] + o[2])];
            for ch in 0..3 {
                disp[ch] += w * n[ch];
            }
        }
        for a in 0..3 {
            p.center[a] = (c[a] + disp[a] * magnitude) as f32;
        }
    }
}
