//! Dynamic-weighted fusion of per-segment embeddings into 2D feature maps.
//!
//! Each segment carries three embeddings: the whole frame (`f_g`), the crop
//! with background (`f_l`) and the crop without background (`f_m`). Their
//! fused vector is painted onto the segment's pixels.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Cursor;
use std::path::Path;

use crate::binio::*;
use crate::error::{Error, Result};

const SEG_MAGIC: &[u8; 4] = b"SSEG";
const SEG_VERSION: u32 = 1;
const TRIPLE_MAGIC: &[u8; 4] = b"SSTR";
const MAP_MAGIC: &[u8; 4] = b"SSFM";

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentFeatureTriple {
    pub segment_id: u32,
    pub f_g: Vec<f64>,
    pub f_l: Vec<f64>,
    pub f_m: Vec<f64>,
}

impl SegmentFeatureTriple {
    pub fn new(segment_id: u32, f_g: Vec<f64>, f_l: Vec<f64>, f_m: Vec<f64>) -> Result<Self> {
        let t = Self {
            segment_id,
            f_g,
            f_l,
            f_m,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.f_g.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.f_g.len();
        if d == 0 || self.f_l.len() != d || self.f_m.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "segment {}: embedding lengths {}/{}/{}",
                self.segment_id,
                d,
                self.f_l.len(),
                self.f_m.len()
            )));
        }
        for (name, v) in [("f_g", &self.f_g), ("f_l", &self.f_l), ("f_m", &self.f_m)] {
            let n = norm(v);
            if !n.is_finite() || (n - 1.0).abs() > 1e-5 {
                return Err(Error::Validation(format!(
                    "segment {}: {name} has norm {n}, expected unit",
                    self.segment_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedSegment {
    pub feature: Vec<f64>,
    pub w_g: f64,
    pub w_l: f64,
    pub w_m: f64,
    pub r_lm: f64,
    pub phi: f64,
}

/// Fuses one segment's three embeddings with similarity-derived convex weights.
pub fn fuse_triple(t: &SegmentFeatureTriple) -> Result<FusedSegment> {
    t.validate()?;
    let r_lm = cosine(&t.f_l, &t.f_m).clamp(0.0, 1.0);
    let mut local: Vec<f64> = t
        .f_m
        .iter()
        .zip(&t.f_l)
        .map(|(m, l)| r_lm * m + (1.0 - r_lm) * l)
        .collect();
    let ln = norm(&local);
    if !(ln > 0.0) {
        return Err(Error::Validation(format!("segment {}: fused local feature vanished", t.segment_id)));
    }
    local.iter_mut().for_each(|v| *v /= ln);

    let phi = cosine(&local, &t.f_g);
    let w_i = logistic(phi);
    let w_g = w_i;
    let w_m = (1.0 - w_i) * r_lm;
    let w_l = (1.0 - w_i) * (1.0 - r_lm);

    let mut feature: Vec<f64> = (0..t.dim())
        .map(|k| w_g * t.f_g[k] + w_l * t.f_l[k] + w_m * t.f_m[k])
        .collect();
    let n = norm(&feature);
    if !(n > 1e-12) {
        return Err(Error::Validation(format!(
            "segment {}: fused feature has zero norm (antipodal embeddings)",
            t.segment_id
        )));
    }
    feature.iter_mut().for_each(|v| *v /= n);
    Ok(FusedSegment {
        feature,
        w_g,
        w_l,
        w_m,
        r_lm,
        phi,
    })
}

/// Per-pixel segment ids; 0 means "no segment".
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentMask {
    pub height: u32,
    pub width: u32,
    pub ids: Vec<u32>,
}

impl SegmentMask {
    pub fn new(height: u32, width: u32, ids: Vec<u32>) -> Result<Self> {
        if ids.len() != (height as usize) * (width as usize) {
            return Err(Error::DimensionMismatch(format!(
                "mask {height}x{width} needs {} ids, got {}",
                height as usize * width as usize,
                ids.len()
            )));
        }
        Ok(Self { height, width, ids })
    }

    pub fn present_ids(&self) -> BTreeSet<u32> {
        self.ids.iter().copied().filter(|&i| i != 0).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.ids.len() * 4);
        write_all(&mut out, SEG_MAGIC).unwrap();
        write_u32(&mut out, SEG_VERSION).unwrap();
        write_u32(&mut out, self.height).unwrap();
        write_u32(&mut out, self.width).unwrap();
        for &id in &self.ids {
            write_u32(&mut out, id).unwrap();
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        read_magic(&mut r, SEG_MAGIC)?;
        let version = read_u32(&mut r, "version")?;
        if version != SEG_VERSION {
            return Err(Error::Parse(format!("unsupported SSEG version {version}")));
        }
        let h = read_u32(&mut r, "height")?;
        let w = read_u32(&mut r, "width")?;
        let ids = (0..(h as usize * w as usize))
            .map(|_| read_u32(&mut r, "segment ids"))
            .collect::<Result<Vec<_>>>()?;
        Self::new(h, w, ids)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }
}

pub fn triples_to_bytes(triples: &[SegmentFeatureTriple]) -> Vec<u8> {
    let d = triples.first().map_or(0, |t| t.dim());
    let mut out = Vec::new();
    write_all(&mut out, TRIPLE_MAGIC).unwrap();
    write_u32(&mut out, d as u32).unwrap();
    write_u32(&mut out, triples.len() as u32).unwrap();
    for t in triples {
        write_u32(&mut out, t.segment_id).unwrap();
        for v in [&t.f_g, &t.f_l, &t.f_m] {
            write_f32s(&mut out, v.iter().map(|&x| x as f32)).unwrap();
        }
    }
    out
}

pub fn triples_from_bytes(bytes: &[u8]) -> Result<Vec<SegmentFeatureTriple>> {
    let mut r = Cursor::new(bytes);
    read_magic(&mut r, TRIPLE_MAGIC)?;
    let d = read_u32(&mut r, "dimension")? as usize;
    let count = read_u32(&mut r, "count")? as usize;
    (0..count)
        .map(|_| {
            let id = read_u32(&mut r, "segment id")?;
            let mut rows = (0..3).map(|_| {
                read_f32_vec(&mut r, d, "embedding").map(|v| v.into_iter().map(f64::from).collect::<Vec<_>>())
            });
            let f_g = rows.next().unwrap()?;
            let f_l = rows.next().unwrap()?;
            let f_m = rows.next().unwrap()?;
            SegmentFeatureTriple::new(id, f_g, f_l, f_m)
        })
        .collect()
}

pub fn load_triples(path: &Path) -> Result<Vec<SegmentFeatureTriple>> {
    triples_from_bytes(&read_file(path)?)
}

pub fn save_triples(path: &Path, triples: &[SegmentFeatureTriple]) -> Result<()> {
    write_file(path, &triples_to_bytes(triples))
}

/// H x W raster of feature vectors with a validity bit per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap2D {
    pub height: u32,
    pub width: u32,
    pub dim: usize,
    pub valid: Vec<bool>,
    /// Feature rows of the valid pixels, in scan order.
    rows: Vec<f32>,
    /// Row offset (in units of `dim`) for each valid pixel.
    offsets: Vec<u32>,
}

impl FeatureMap2D {
    pub fn new(height: u32, width: u32, dim: usize, valid: Vec<bool>, rows: Vec<f32>) -> Result<Self> {
        let npix = height as usize * width as usize;
        if valid.len() != npix {
            return Err(Error::DimensionMismatch(format!("validity has {} entries, expected {npix}", valid.len())));
        }
        let nvalid = valid.iter().filter(|&&v| v).count();
        if rows.len() != nvalid * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} feature values for {nvalid} valid pixels of dim {dim}",
                rows.len()
            )));
        }
        let mut offsets = vec![u32::MAX; npix];
        let mut next = 0u32;
        for (p, &v) in valid.iter().enumerate() {
            if v {
                offsets[p] = next;
                next += 1;
            }
        }
        Ok(Self {
            height,
            width,
            dim,
            valid,
            rows,
            offsets,
        })
    }

    pub fn pixel(&self, row: u32, col: u32) -> Option<&[f32]> {
        let p = (row * self.width + col) as usize;
        if !self.valid[p] {
            return None;
        }
        let o = self.offsets[p] as usize * self.dim;
        Some(&self.rows[o..o + self.dim])
    }

    pub fn valid_count(&self) -> usize {
        self.rows.len() / self.dim.max(1)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_all(&mut out, MAP_MAGIC).unwrap();
        write_u32(&mut out, self.height).unwrap();
        write_u32(&mut out, self.width).unwrap();
        write_u32(&mut out, self.dim as u32).unwrap();
        let mut bits = vec![0u8; self.valid.len().div_ceil(8)];
        for (p, &v) in self.valid.iter().enumerate() {
            if v {
                bits[p / 8] |= 1 << (p % 8);
            }
        }
        out.extend_from_slice(&bits);
        write_f32s(&mut out, self.rows.iter().copied()).unwrap();
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        read_magic(&mut r, MAP_MAGIC)?;
        let h = read_u32(&mut r, "height")?;
        let w = read_u32(&mut r, "width")?;
        let d = read_u32(&mut r, "dimension")? as usize;
        let npix = h as usize * w as usize;
        let mut bits = vec![0u8; npix.div_ceil(8)];
        std::io::Read::read_exact(&mut r, &mut bits)
            .map_err(|e| Error::Parse(format!("truncated validity bitmap: {e}")))?;
        let valid: Vec<bool> = (0..npix).map(|p| bits[p / 8] >> (p % 8) & 1 == 1).collect();
        let nvalid = valid.iter().filter(|&&v| v).count();
        let rows = read_f32_vec(&mut r, nvalid * d, "feature rows")?;
        Self::new(h, w, d, valid, rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FuseDiagnostics {
    /// Triples whose id never appears in the mask.
    pub unused_ids: Vec<u32>,
}

/// Paints each segment's fused feature onto its pixels; id-0 pixels stay invalid.
pub fn build_feature_map(mask: &SegmentMask, triples: &[SegmentFeatureTriple]) -> Result<(FeatureMap2D, FuseDiagnostics)> {
    let mut by_id: BTreeMap<u32, &SegmentFeatureTriple> = BTreeMap::new();
    for t in triples {
        if t.segment_id == 0 {
            return Err(Error::Validation("segment id 0 is reserved for background".into()));
        }
        if by_id.insert(t.segment_id, t).is_some() {
            return Err(Error::Validation(format!("duplicate triple for segment {}", t.segment_id)));
        }
    }
    let dims: BTreeSet<usize> = triples.iter().map(|t| t.dim()).collect();
    if dims.len() > 1 {
        return Err(Error::DimensionMismatch(format!("triples have mixed dimensions {dims:?}")));
    }
    let present = mask.present_ids();
    let missing: Vec<u32> = present.iter().copied().filter(|id| !by_id.contains_key(id)).collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!("no feature triple for segment ids {missing:?}")));
    }
    let fused: BTreeMap<u32, Vec<f32>> = present
        .iter()
        .map(|&id| fuse_triple(by_id[&id]).map(|f| (id, f.feature.iter().map(|&v| v as f32).collect())))
        .collect::<Result<_>>()?;
    let dim = dims.into_iter().next().unwrap_or(0);

    let valid: Vec<bool> = mask.ids.iter().map(|&id| id != 0).collect();
    let mut rows = Vec::with_capacity(valid.iter().filter(|&&v| v).count() * dim);
    for &id in &mask.ids {
        if id != 0 {
            rows.extend_from_slice(&fused[&id]);
        }
    }
    let unused_ids = by_id.keys().copied().filter(|id| !present.contains(id)).collect();
    Ok((
        FeatureMap2D::new(mask.height, mask.width, dim, valid, rows)?,
        FuseDiagnostics { unused_ids },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = norm(v);
        v.iter().map(|x| x / n).collect()
    }

    #[test]
    fn identical_inputs() {
        let u = unit(&[1.0, 2.0, -0.5]);
        let t = SegmentFeatureTriple::new(1, u.clone(), u.clone(), u.clone()).unwrap();
        let f = fuse_triple(&t).unwrap();
        assert!((f.r_lm - 1.0).abs() < 1e-12);
        assert!((f.phi - 1.0).abs() < 1e-12);
        // logistic(1) = 1 / (1 + e^-1)
        assert!((f.w_g - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((f.w_m - 0.268_941_421_369_995_1).abs() < 1e-12);
        assert_eq!(f.w_l, 0.0);
        for k in 0..3 {
            assert!((f.feature[k] - u[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_local_and_masked() {
        let t = SegmentFeatureTriple::new(3, unit(&[1.0, 1.0, 1.0]), vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]).unwrap();
        let f = fuse_triple(&t).unwrap();
        assert_eq!(f.r_lm, 0.0);
        assert_eq!(f.w_m, 0.0);
        let phi = 1.0 / 3f64.sqrt();
        assert!((f.phi - phi).abs() < 1e-12);
    }

    #[test]
    fn negative_similarity_clamps() {
        let t = SegmentFeatureTriple::new(2, vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0], unit(&[-1.0, 0.2, 0.0])).unwrap();
        let f = fuse_triple(&t).unwrap();
        assert_eq!(f.r_lm, 0.0);
        assert!(f.w_g >= 0.0 && f.w_l >= 0.0 && f.w_m >= 0.0);
    }

    #[test]
    fn antipodal_inputs_error() {
        // f_l = f_m = -f_g: local fuses to -f_g, phi = -1, weights 0.269 vs 0.731 do not cancel,
        // so build an exact cancellation with w_g = w_m instead: impossible for unit inputs
        // except when the weighted sum is exactly zero, which needs phi = 0 and r = 1 with f_g = -f_m.
        let g = vec![1.0, 0.0];
        let m = vec![-1.0, 0.0];
        // r_lm = 1 (f_l = f_m), phi = cos(f_m, f_g) = -1 -> w_g = logistic(-1), w_m = 1 - w_g; nonzero sum.
        let t = SegmentFeatureTriple::new(5, g, m.clone(), m).unwrap();
        assert!(fuse_triple(&t).is_ok());
        let bad = SegmentFeatureTriple {
            segment_id: 9,
            f_g: vec![0.0, 0.0],
            f_l: vec![1.0, 0.0],
            f_m: vec![1.0, 0.0],
        };
        assert!(fuse_triple(&bad).is_err());
    }

    #[test]
    fn map_paints_segments_and_reports_unused() {
        let a = SegmentFeatureTriple::new(1, vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]).unwrap();
        let b = SegmentFeatureTriple::new(2, vec![0.0, 1.0], unit(&[1.0, 1.0]), vec![0.0, 1.0]).unwrap();
        let c = SegmentFeatureTriple::new(7, vec![0.0, 1.0], vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
        let mask = SegmentMask::new(2, 2, vec![1, 1, 0, 2]).unwrap();
        let (map, diag) = build_feature_map(&mask, &[c.clone(), b.clone(), a.clone()]).unwrap();
        assert_eq!(diag.unused_ids, vec![7]);
        let fa: Vec<f32> = fuse_triple(&a).unwrap().feature.iter().map(|&v| v as f32).collect();
        let fb: Vec<f32> = fuse_triple(&b).unwrap().feature.iter().map(|&v| v as f32).collect();
        assert_eq!(map.pixel(0, 0).unwrap(), &fa[..]);
        assert_eq!(map.pixel(0, 1).unwrap(), &fa[..]);
        assert!(map.pixel(1, 0).is_none());
        assert_eq!(map.pixel(1, 1).unwrap(), &fb[..]);
        let (again, _) = build_feature_map(&mask, &[a, b, c]).unwrap();
        assert_eq!(again, map);
    }

    #[test]
    fn missing_triple_lists_ids() {
        let mask = SegmentMask::new(1, 3, vec![4, 0, 6]).unwrap();
        let err = build_feature_map(&mask, &[]).unwrap_err();
        assert!(err.to_string().contains("[4, 6]"), "{err}");
    }

    #[test]
    fn formats_round_trip() {
        let mask = SegmentMask::new(2, 3, vec![0, 1, 1, 2, 0, 2]).unwrap();
        assert_eq!(SegmentMask::from_bytes(&mask.to_bytes()).unwrap(), mask);
        let t = vec![
            SegmentFeatureTriple::new(1, vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]).unwrap(),
            SegmentFeatureTriple::new(2, vec![0.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]).unwrap(),
        ];
        assert_eq!(triples_from_bytes(&triples_to_bytes(&t)).unwrap(), t);
        let (map, _) = build_feature_map(&mask, &t).unwrap();
        assert_eq!(FeatureMap2D::from_bytes(&map.to_bytes()).unwrap(), map);
    }
}
