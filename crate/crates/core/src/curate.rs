//! Scene curation: frame count, per-frame sharpness and render fidelity filters.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{laplacian_sharpness, load_png, psnr, Image};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationConfig {
    pub min_frames: usize,
    /// Frames with Laplacian variance below this are listed for exclusion.
    pub min_sharpness: f64,
    pub min_psnr_db: f64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            min_frames: 400,
            min_sharpness: 1e-4,
            min_psnr_db: 20.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub value: Option<f64>,
    pub threshold: f64,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub keep: bool,
    /// Names of the failed checks that caused a drop.
    pub reasons: Vec<String>,
    pub checks: Vec<CheckResult>,
    pub frame_sharpness: Vec<(String, f64)>,
    pub blurry_frames: Vec<String>,
    pub pair_psnr: Vec<(String, f64)>,
}

/// A named frame; sharpness is computed on demand so callers may stream.
pub struct Frame {
    pub name: String,
    pub image: Image,
}

/// Runs the checks in order: frame count, sharpness (advisory), mean PSNR of render/gt pairs.
pub fn curate(
    frames: impl IntoIterator<Item = Result<Frame>>,
    pairs: impl IntoIterator<Item = Result<(String, Image, Image)>>,
    cfg: &CurationConfig,
) -> Result<CurationReport> {
    let mut frame_sharpness = Vec::new();
    for f in frames {
        let f = f?;
        let s = laplacian_sharpness(&f.image)?;
        frame_sharpness.push((f.name, s));
    }
    let mut pair_psnr = Vec::new();
    for p in pairs {
        let (name, render, gt) = p?;
        pair_psnr.push((name, psnr(&render, &gt)?));
    }

    let mut checks = Vec::new();
    let n = frame_sharpness.len();
    checks.push(CheckResult {
        name: "frame_count".into(),
        passed: n >= cfg.min_frames,
        value: Some(n as f64),
        threshold: cfg.min_frames as f64,
        note: String::new(),
    });

    let blurry_frames: Vec<String> = frame_sharpness
        .iter()
        .filter(|(_, s)| *s < cfg.min_sharpness)
        .map(|(n, _)| n.clone())
        .collect();
    checks.push(CheckResult {
        name: "sharpness".into(),
        passed: true,
        value: Some(blurry_frames.len() as f64),
        threshold: cfg.min_sharpness,
        note: format!("{} frame(s) below threshold listed for exclusion", blurry_frames.len()),
    });

    let mean_psnr = (!pair_psnr.is_empty()).then(|| pair_psnr.iter().map(|(_, p)| p).sum::<f64>() / pair_psnr.len() as f64);
    checks.push(CheckResult {
        name: "psnr".into(),
        passed: mean_psnr.is_none_or(|p| p >= cfg.min_psnr_db),
        value: mean_psnr,
        threshold: cfg.min_psnr_db,
        note: if mean_psnr.is_none() { "no render/gt pairs; skipped".into() } else { String::new() },
    });

    let reasons: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    Ok(CurationReport {
        keep: reasons.is_empty(),
        reasons,
        checks,
        frame_sharpness,
        blurry_frames,
        pair_psnr,
    })
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Scene directory layout: `frames/*.png`, and optionally `renders/<name>.png` paired with `gt/<name>.png`.
pub fn curate_dir(dir: &Path, cfg: &CurationConfig) -> Result<CurationReport> {
    if !dir.is_dir() {
        return Err(Error::Validation(format!("scene directory {} does not exist", dir.display())));
    }
    let frames = png_files(&dir.join("frames"))?;
    let renders = png_files(&dir.join("renders"))?;
    let gt_dir = dir.join("gt");
    for r in &renders {
        let g = gt_dir.join(r.file_name().unwrap());
        if !g.exists() {
            return Err(Error::Validation(format!("render {} has no ground truth at {}", r.display(), g.display())));
        }
    }
    curate(
        frames.into_iter().map(|p| {
            Ok(Frame {
                name: stem(&p),
                image: load_png(&p)?,
            })
        }),
        renders.into_iter().map(|r| {
            let g = gt_dir.join(r.file_name().unwrap());
            Ok((stem(&r), load_png(&r)?, load_png(&g)?))
        }),
        cfg,
    )
}
