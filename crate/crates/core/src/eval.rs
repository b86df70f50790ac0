//! Zero-shot classification, nearest-neighbour voting, segmentation metrics and text queries.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::*;
use crate::error::{Error, Result};
use crate::field::SemanticFeatureField;
use crate::scene::GaussianScene;
use crate::spatial::KdTree;

/// Reserved class id for unlabeled Gaussians and empty votes.
pub const VOID: u32 = u32::MAX;
pub const DEFAULT_BACKGROUND: [&str; 3] = ["wall", "floor", "ceiling"];
pub const DEFAULT_KNN: usize = 25;
pub const DEFAULT_QUERY_FRACTION: f64 = 0.02;

const POINTS_MAGIC: &[u8; 4] = b"SSPT";
const POINTS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassEntry {
    pub id: u32,
    pub name: String,
    pub embedding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassTable {
    pub dim: usize,
    pub classes: Vec<ClassEntry>,
    pub background: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassTableFile {
    dim: usize,
    blob: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    background: Option<Vec<String>>,
    classes: Vec<ClassTableRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassTableRecord {
    id: u32,
    name: String,
    /// Byte offset of the embedding inside the blob.
    offset: u64,
}

impl ClassTable {
    /// Background defaults to the classes named wall, floor and ceiling.
    pub fn new(dim: usize, classes: Vec<ClassEntry>, background: Option<&[String]>) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for c in &classes {
            if c.id == VOID {
                return Err(Error::Validation(format!("class id {VOID} is reserved")));
            }
            if seen.insert(c.id, ()).is_some() {
                return Err(Error::Validation(format!("duplicate class id {}", c.id)));
            }
            if c.embedding.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "class {} embedding has {} values, table dim is {dim}",
                    c.name,
                    c.embedding.len()
                )));
            }
            let n = c.embedding.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-5 {
                return Err(Error::Validation(format!("class {} embedding has norm {n}", c.name)));
            }
        }
        let names: Vec<String> = match background {
            Some(b) => b.to_vec(),
            None => DEFAULT_BACKGROUND.iter().map(|s| s.to_string()).collect(),
        };
        if let Some(missing) = background.and_then(|b| b.iter().find(|n| !classes.iter().any(|c| &&c.name == n))) {
            return Err(Error::Validation(format!("background class {missing} is not in the table")));
        }
        let background = classes.iter().filter(|c| names.contains(&c.name)).map(|c| c.id).collect();
        Ok(Self { dim, classes, background })
    }

    pub fn ids(&self) -> Vec<u32> {
        self.classes.iter().map(|c| c.id).collect()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.classes.iter().find(|c| c.id == id).map(|c| c.name.as_str())
    }

    pub fn embedding(&self, id: u32) -> Option<&[f64]> {
        self.classes.iter().find(|c| c.id == id).map(|c| c.embedding.as_slice())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ClassTableFile =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let blob_path = path.parent().unwrap_or(Path::new(".")).join(&file.blob);
        let blob = read_file(&blob_path)?;
        let classes = file
            .classes
            .iter()
            .map(|r| {
                let start = r.offset as usize;
                let end = start + file.dim * 4;
                if end > blob.len() {
                    return Err(Error::Parse(format!(
                        "class {} embedding at offset {start} runs past the blob ({} bytes)",
                        r.name,
                        blob.len()
                    )));
                }
                let v = read_f32_vec(&mut Cursor::new(&blob[start..end]), file.dim, "class embedding")?;
                Ok(ClassEntry {
                    id: r.id,
                    name: r.name.clone(),
                    embedding: v.into_iter().map(f64::from).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(file.dim, classes, file.background.as_deref())
    }

    /// Writes `<path>` and a sibling `<blob_name>` holding the f32 embeddings.
    pub fn save(&self, path: &Path, blob_name: &str) -> Result<()> {
        let mut blob = Vec::new();
        let mut records = Vec::new();
        for c in &self.classes {
            records.push(ClassTableRecord {
                id: c.id,
                name: c.name.clone(),
                offset: blob.len() as u64,
            });
            write_f32s(&mut blob, c.embedding.iter().map(|&v| v as f32)).unwrap();
        }
        let background = self.background.iter().filter_map(|&id| self.name(id)).map(String::from).collect();
        let file = ClassTableFile {
            dim: self.dim,
            blob: PathBuf::from(blob_name),
            background: Some(background),
            classes: records,
        };
        write_file(&path.parent().unwrap_or(Path::new(".")).join(blob_name), &blob)?;
        let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Parse(e.to_string()))?;
        write_file(path, text.as_bytes())
    }
}

/// Evaluation points with ground-truth labels (also used for per-Gaussian labels).
#[derive(Clone, Debug, PartialEq)]
pub struct LabelSet {
    pub positions: Vec<[f32; 3]>,
    pub labels: Vec<u32>,
}

impl LabelSet {
    pub fn new(positions: Vec<[f32; 3]>, labels: Vec<u32>) -> Result<Self> {
        if positions.len() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} positions but {} labels",
                positions.len(),
                labels.len()
            )));
        }
        if let Some(i) = positions.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::Validation(format!("non-finite position at point {i}")));
        }
        Ok(Self { positions, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positions_f64(&self) -> Vec<[f64; 3]> {
        self.positions.iter().map(|p| p.map(f64::from)).collect()
    }

    pub fn check_classes(&self, table: &ClassTable) -> Result<()> {
        if let Some((i, l)) = self.labels.iter().enumerate().find(|(_, l)| table.name(**l).is_none()) {
            return Err(Error::Validation(format!("label {l} of point {i} is not in the class table")));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_all(&mut out, POINTS_MAGIC).unwrap();
        write_u32(&mut out, POINTS_VERSION).unwrap();
        write_u64(&mut out, self.len() as u64).unwrap();
        write_f32s(&mut out, self.positions.iter().flatten().copied()).unwrap();
        for &l in &self.labels {
            write_u32(&mut out, l).unwrap();
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        read_magic(&mut r, POINTS_MAGIC)?;
        let version = read_u32(&mut r, "version")?;
        if version != POINTS_VERSION {
            return Err(Error::Parse(format!("unsupported SSPT version {version}")));
        }
        let m = read_u64(&mut r, "point count")? as usize;
        let flat = read_f32_vec(&mut r, m * 3, "positions")?;
        let positions = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let labels = (0..m).map(|_| read_u32(&mut r, "labels")).collect::<Result<Vec<_>>>()?;
        Self::new(positions, labels)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }
}

/// Cosine argmax against the class embeddings; unlabeled rows get [`VOID`].
pub fn classify_gaussians(field: &SemanticFeatureField, table: &ClassTable) -> Result<Vec<u32>> {
    if field.dim() != table.dim {
        return Err(Error::DimensionMismatch(format!(
            "field dim {} vs class table dim {}",
            field.dim(),
            table.dim
        )));
    }
    let mut order: Vec<&ClassEntry> = table.classes.iter().collect();
    order.sort_by_key(|c| c.id);
    Ok((0..field.len())
        .map(|i| {
            if field.unlabeled[i] {
                return VOID;
            }
            let row = field.row(i);
            let norm = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            if norm == 0.0 {
                return VOID;
            }
            let mut best = (VOID, f64::NEG_INFINITY);
            for c in &order {
                let s = row.iter().zip(&c.embedding).map(|(&a, b)| a as f64 * b).sum::<f64>() / norm;
                if s > best.1 {
                    best = (c.id, s);
                }
            }
            best.0
        })
        .collect())
}

/// Majority vote over the k nearest Gaussians; void neighbours abstain and ties go to the nearest voter.
pub fn knn_vote(centers: &[[f64; 3]], classes: &[u32], queries: &[[f64; 3]], k: usize) -> Result<Vec<u32>> {
    if centers.is_empty() {
        return Err(Error::Validation("knn_vote on an empty scene".into()));
    }
    if k == 0 {
        return Err(Error::Validation("k must be at least 1".into()));
    }
    if centers.len() != classes.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} centers but {} classes",
            centers.len(),
            classes.len()
        )));
    }
    let tree = KdTree::new(centers);
    Ok(queries
        .par_iter()
        .map(|&q| vote(tree.nearest(q, k).iter().map(|&(i, _)| classes[i])))
        .collect())
}

/// `neighbours` must be ordered nearest first.
pub fn vote(neighbours: impl Iterator<Item = u32>) -> u32 {
    // (count, rank of first occurrence)
    let mut tally: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for (rank, c) in neighbours.enumerate() {
        if c == VOID {
            continue;
        }
        tally.entry(c).or_insert((0, rank)).0 += 1;
    }
    tally
        .into_iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .map_or(VOID, |(c, _)| c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationReport {
    pub class_ids: Vec<u32>,
    pub class_names: Vec<String>,
    pub background: Vec<u32>,
    /// rows: ground truth class, columns: predicted class, last column: void.
    pub confusion: Vec<Vec<u64>>,
    /// `None` for classes absent from the ground truth.
    pub iou: Vec<Option<f64>>,
    pub acc: Vec<Option<f64>>,
    pub miou: f64,
    pub macc: f64,
    /// Foreground means; `None` when every present class is background.
    pub f_miou: Option<f64>,
    pub f_macc: Option<f64>,
}

fn mean_of(vals: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = vals.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn seg_metrics(pred: &[u32], gt: &[u32], table: &ClassTable) -> Result<SegmentationReport> {
    if pred.len() != gt.len() {
        return Err(Error::DimensionMismatch(format!("{} predictions for {} points", pred.len(), gt.len())));
    }
    let mut ids = table.ids();
    ids.sort_unstable();
    let col: BTreeMap<u32, usize> = ids.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let nc = ids.len();
    let mut confusion = vec![vec![0u64; nc + 1]; nc];
    for (i, (&p, &g)) in pred.iter().zip(gt).enumerate() {
        let gi = *col
            .get(&g)
            .ok_or_else(|| Error::Validation(format!("ground-truth class {g} at point {i} is not in the class table")))?;
        let pi = if p == VOID {
            nc
        } else {
            *col.get(&p)
                .ok_or_else(|| Error::Validation(format!("predicted class {p} at point {i} is not in the class table")))?
        };
        confusion[gi][pi] += 1;
    }
    let mut iou = vec![None; nc];
    let mut acc = vec![None; nc];
    for c in 0..nc {
        let gt_count: u64 = confusion[c].iter().sum();
        if gt_count == 0 {
            continue;
        }
        let tp = confusion[c][c];
        let fp: u64 = (0..nc).filter(|&r| r != c).map(|r| confusion[r][c]).sum();
        let fn_ = gt_count - tp;
        iou[c] = Some(tp as f64 / (tp + fp + fn_) as f64);
        acc[c] = Some(tp as f64 / gt_count as f64);
    }
    let fg = |c: &usize| !table.background.contains(&ids[*c]);
    let miou = mean_of(iou.iter().flatten().copied()).unwrap_or(0.0);
    let macc = mean_of(acc.iter().flatten().copied()).unwrap_or(0.0);
    let f_miou = mean_of((0..nc).filter(fg).filter_map(|c| iou[c]));
    let f_macc = mean_of((0..nc).filter(fg).filter_map(|c| acc[c]));
    Ok(SegmentationReport {
        class_names: ids.iter().map(|&c| table.name(c).unwrap_or("").to_string()).collect(),
        class_ids: ids,
        background: table.background.clone(),
        confusion,
        iou,
        acc,
        miou,
        macc,
        f_miou,
        f_macc,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

impl SegmentationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class_id,name,background,gt_count,iou,acc\n");
        for (c, id) in self.class_ids.iter().enumerate() {
            let n: u64 = self.confusion[c].iter().sum();
            s += &format!(
                "{id},{},{},{n},{},{}\n",
                self.class_names[c],
                self.background.contains(id),
                fmt_opt(self.iou[c]),
                fmt_opt(self.acc[c])
            );
        }
        s
    }

    pub fn summary(&self) -> String {
        let total: u64 = self.confusion.iter().flatten().sum();
        format!(
            "points: {total}\nmIoU: {:.4}\nmAcc: {:.4}\nf-mIoU: {}\nf-mAcc: {}\n",
            self.miou,
            self.macc,
            self.f_miou.map_or("n/a".into(), |v| format!("{v:.4}")),
            self.f_macc.map_or("n/a".into(), |v| format!("{v:.4}")),
        )
    }
}

/// Indices (ascending) of the top `ceil(p * labeled)` rows by cosine to `query`.
pub fn text_query(field: &SemanticFeatureField, query: &[f64], top_fraction: f64) -> Result<Vec<usize>> {
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::Validation(format!("top fraction {top_fraction} must be in (0, 1]")));
    }
    if query.len() != field.dim() {
        return Err(Error::DimensionMismatch(format!(
            "query has {} values, field dim is {}",
            query.len(),
            field.dim()
        )));
    }
    let qn = query.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(qn > 0.0) {
        return Err(Error::Validation("query embedding has zero norm".into()));
    }
    let mut scored: Vec<(f64, usize)> = field
        .labeled_indices()
        .into_iter()
        .map(|i| {
            let row = field.row(i);
            let rn = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt().max(1e-12);
            let s = row.iter().zip(query).map(|(&a, b)| a as f64 * b).sum::<f64>() / (rn * qn);
            (s, i)
        })
        .collect();
    let k = (top_fraction * scored.len() as f64).ceil() as usize;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut sel: Vec<usize> = scored.into_iter().take(k).map(|(_, i)| i).collect();
    sel.sort_unstable();
    Ok(sel)
}

/// Copy of the scene with the selected splats painted pure red (DC term only).
pub fn highlight_selection(scene: &GaussianScene, selected: &[usize]) -> Result<GaussianScene> {
    let mut out = scene.clone();
    for &i in selected {
        let g = out
            .primitives
            .get_mut(i)
            .ok_or_else(|| Error::Validation(format!("selected index {i} out of range")))?;
        g.set_rgb([1.0, 0.0, 0.0]);
    }
    Ok(out)
}
