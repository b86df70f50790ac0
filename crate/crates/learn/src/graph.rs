//! Tape-based reverse-mode differentiation over dense f64 matrices.
//!
//! Every operation appends a node holding its value; [`Graph::backward`] walks
//! the tape in reverse and accumulates gradients in a fixed order, so results
//! are bit-identical across runs.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Axis, Zip};

use crate::error::{LearnError, Result};
use crate::params::{Mat, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044715;

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulTransB(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ScaleByScalar(Var, Var),
    Exp(Var),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Square(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, x_hat: Mat, inv_std: Array1<f64> },
    SoftmaxRows(Var),
    L2NormalizeRows { x: Var, norms: Array1<f64> },
    RowDot(Var, Var),
    SumAll(Var),
    MeanAll(Var),
    MeanRows(Var),
    GatherRows(Var, Vec<usize>),
    ReplaceRows { x: Var, token: Var, rows: Vec<usize> },
    SliceCols(Var, usize, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    CrossEntropyRows { logits: Var, targets: Vec<usize>, probs: Mat },
    HalfLogDet { x: Var, scale: f64, inverse: Mat },
    Covariance { x: Var, centered: Mat },
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

/// Gradients of one backward pass.
pub struct Gradients {
    nodes: Vec<Option<Mat>>,
    pub params: BTreeMap<String, Mat>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.nodes[v.0].as_ref()
    }
}

fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> ! {
    panic!("{what}: incompatible shapes {a:?} and {b:?}")
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// LU with partial pivoting; returns (log|det|, sign, inverse).
fn lu_logdet_inverse(m: &Mat) -> (f64, f64, Mat) {
    let n = m.nrows();
    let mut a = m.clone();
    let mut inv = Mat::eye(n);
    let mut logdet = 0.0;
    let mut sign = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))
            .unwrap();
        if a[[pivot, col]] == 0.0 {
            return (f64::NEG_INFINITY, 0.0, Mat::from_elem((n, n), f64::NAN));
        }
        if pivot != col {
            for k in 0..n {
                a.swap([pivot, k], [col, k]);
                inv.swap([pivot, k], [col, k]);
            }
            sign = -sign;
        }
        let p = a[[col, col]];
        logdet += p.abs().ln();
        if p < 0.0 {
            sign = -sign;
        }
        for k in 0..n {
            a[[col, k]] /= p;
            inv[[col, k]] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = a[[r, col]];
                if f != 0.0 {
                    for k in 0..n {
                        a[[r, k]] -= f * a[[col, k]];
                        inv[[r, k]] -= f * inv[[col, k]];
                    }
                }
            }
        }
    }
    (logdet, sign, inv)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// The single entry of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn dim(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// A value that receives no gradient consumers outside the graph (inputs, targets, detached tensors).
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn zero_scalar(&mut self) -> Var {
        self.constant(Mat::zeros((1, 1)))
    }

    /// Copies a detached snapshot of `v` into a new constant.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    /// Registers (once per path) a trainable parameter from the store.
    pub fn param(&mut self, store: &ParamStore, path: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(path) {
            return Ok(v);
        }
        let value = store.require(path)?.clone();
        let v = self.push(value, Op::Param);
        self.params.insert(path.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (da, db) = (self.dim(a), self.dim(b));
        if da.1 != db.0 {
            shape_err("matmul", da, db);
        }
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// a · bᵀ
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (da, db) = (self.dim(a), self.dim(b));
        if da.1 != db.1 {
            shape_err("matmul_t", da, db);
        }
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulTransB(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    fn same_shape(&self, what: &str, a: Var, b: Var) {
        if self.dim(a) != self.dim(b) {
            shape_err(what, self.dim(a), self.dim(b));
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("add", a, b);
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("sub", a, b);
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("mul", a, b);
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// Adds a 1 x m row to every row of a.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (da, dr) = (self.dim(a), self.dim(row));
        if dr.0 != 1 || dr.1 != da.1 {
            shape_err("add_row", da, dr);
        }
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    /// a * s for a 1x1 node s.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        if self.dim(s) != (1, 1) {
            shape_err("scale_by", self.dim(a), self.dim(s));
        }
        let v = self.value(a) * self.scalar(s);
        self.push(v, Op::ScaleByScalar(a, s))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Row-wise layer normalization with 1 x m gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let m = xv.ncols();
        let mean = xv.mean_axis(Axis(1)).unwrap();
        let mut x_hat = xv - &mean.view().insert_axis(Axis(1));
        let var = x_hat.mapv(|v| v * v).sum_axis(Axis(1)) / m as f64;
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        x_hat *= &inv_std.view().insert_axis(Axis(1));
        let out = &x_hat * self.value(gamma) + self.value(beta);
        self.push(out, Op::LayerNorm { x, gamma, beta, x_hat, inv_std })
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let s = row.sum();
            row /= s;
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Divides each row by max(‖row‖, floor).
    pub fn l2_normalize_rows(&mut self, a: Var, floor: f64) -> Var {
        let av = self.value(a);
        let norms = av.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(floor));
        let v = av / &norms.view().insert_axis(Axis(1));
        self.push(v, Op::L2NormalizeRows { x: a, norms })
    }

    /// Per-row dot products as an n x 1 column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("row_dot", a, b);
        let prod = self.value(a) * self.value(b);
        let v = prod.sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::RowDot(a, b))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let v = Mat::from_elem((1, 1), av.sum() / av.len().max(1) as f64);
        self.push(v, Op::MeanAll(a))
    }

    /// Mean over rows, giving 1 x m.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).mean_axis(Axis(0)).expect("mean of empty matrix").insert_axis(Axis(0));
        self.push(v, Op::MeanRows(a))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let v = self.value(a).select(Axis(0), rows);
        self.push(v, Op::GatherRows(a, rows.to_vec()))
    }

    /// Replaces the listed rows of x by a 1 x m token.
    pub fn replace_rows(&mut self, x: Var, token: Var, rows: &[usize]) -> Var {
        let (dx, dt) = (self.dim(x), self.dim(token));
        if dt != (1, dx.1) {
            shape_err("replace_rows", dx, dt);
        }
        let mut v = self.value(x).clone();
        let t = self.value(token).row(0).to_owned();
        for &r in rows {
            v.row_mut(r).assign(&t);
        }
        self.push(v, Op::ReplaceRows { x, token, rows: rows.to_vec() })
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start, end))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    /// Mean over rows of -log softmax(logits)[target].
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), targets.len(), "cross_entropy_rows: one target per row");
        let mut probs = lv.clone();
        let mut loss = 0.0;
        for (mut row, &t) in probs.rows_mut().into_iter().zip(targets) {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
            row.mapv_inplace(|x| (x - lse).exp());
        }
        let n = targets.len().max(1) as f64;
        self.push(
            Mat::from_elem((1, 1), loss / n),
            Op::CrossEntropyRows { logits, targets: targets.to_vec(), probs },
        )
    }

    /// ½ log det(I + scale · X) for square X.
    pub fn half_logdet_identity_plus(&mut self, x: Var, scale: f64) -> Var {
        let xv = self.value(x);
        let n = xv.nrows();
        assert_eq!(n, xv.ncols(), "half_logdet: square input required");
        let m = Mat::eye(n) + xv * scale;
        let (logdet, sign, inverse) = lu_logdet_inverse(&m);
        let value = if sign > 0.0 { 0.5 * logdet } else { f64::NAN };
        self.push(Mat::from_elem((1, 1), value), Op::HalfLogDet { x, scale, inverse })
    }

    /// Unbiased covariance of the rows (n x m -> m x m).
    pub fn covariance(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.nrows();
        assert!(n >= 2, "covariance needs at least two rows");
        let mean = xv.mean_axis(Axis(0)).unwrap();
        let centered = xv - &mean.view().insert_axis(Axis(0));
        let v = centered.t().dot(&centered) / (n - 1) as f64;
        self.push(v, Op::Covariance { x, centered })
    }

    /// Reverse pass from `loss`, seeded with ones.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::ones(self.dim(loss)));
        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, g.dot(&val(*b).t()));
                    acc(&mut grads, *b, val(*a).t().dot(&g));
                }
                Op::MatMulTransB(a, b) => {
                    acc(&mut grads, *a, g.dot(val(*b)));
                    acc(&mut grads, *b, g.t().dot(val(*a)));
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, -&g);
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, &g * val(*b));
                    acc(&mut grads, *b, &g * val(*a));
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *a, g.clone());
                }
                Op::Scale(a, c) => acc(&mut grads, *a, &g * *c),
                Op::ScaleByScalar(a, sv) => {
                    let s = val(*sv)[[0, 0]];
                    acc(&mut grads, *sv, Mat::from_elem((1, 1), (&g * val(*a)).sum()));
                    acc(&mut grads, *a, &g * s);
                }
                Op::Exp(a) => acc(&mut grads, *a, &g * &node.value),
                Op::Gelu(a) => acc(&mut grads, *a, &g * &val(*a).mapv(gelu_grad)),
                Op::Tanh(a) => acc(&mut grads, *a, &g * &node.value.mapv(|y| 1.0 - y * y)),
                Op::Sigmoid(a) => acc(&mut grads, *a, &g * &node.value.mapv(|y| y * (1.0 - y))),
                Op::Square(a) => acc(&mut grads, *a, &g * &(val(*a) * 2.0)),
                Op::LayerNorm { x, gamma, beta, x_hat, inv_std } => {
                    acc(&mut grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *gamma, (&g * x_hat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dxh = &g * val(*gamma);
                    let m = dxh.ncols() as f64;
                    let mean_d = dxh.sum_axis(Axis(1)) / m;
                    let mean_dx = (&dxh * x_hat).sum_axis(Axis(1)) / m;
                    let mut dx = dxh;
                    Zip::from(dx.rows_mut())
                        .and(x_hat.rows())
                        .and(&mean_d)
                        .and(&mean_dx)
                        .and(inv_std)
                        .for_each(|mut d, xh, &md, &mdx, &is| {
                            Zip::from(&mut d).and(&xh).for_each(|dv, &h| *dv = is * (*dv - md - h * mdx));
                        });
                    acc(&mut grads, *x, dx);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let dots = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut grads, *a, y * &(&g - &dots));
                }
                Op::L2NormalizeRows { x, norms } => {
                    let y = &node.value;
                    let xv = val(*x);
                    let mut dx = Mat::zeros(g.dim());
                    for r in 0..g.nrows() {
                        let n = norms[r];
                        let raw = xv.row(r).dot(&xv.row(r)).sqrt();
                        if raw >= n {
                            let proj = y.row(r).dot(&g.row(r));
                            let row = (&g.row(r) - &(&y.row(r) * proj)) / n;
                            dx.row_mut(r).assign(&row);
                        } else {
                            dx.row_mut(r).assign(&(&g.row(r) / n));
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::RowDot(a, b) => {
                    acc(&mut grads, *a, val(*b) * &g);
                    acc(&mut grads, *b, val(*a) * &g);
                }
                Op::SumAll(a) => acc(&mut grads, *a, Mat::from_elem(self.dim(*a), g[[0, 0]])),
                Op::MeanAll(a) => {
                    let n = val(*a).len().max(1) as f64;
                    acc(&mut grads, *a, Mat::from_elem(self.dim(*a), g[[0, 0]] / n));
                }
                Op::MeanRows(a) => {
                    let (n, m) = self.dim(*a);
                    let row = &g / n as f64;
                    acc(&mut grads, *a, row.broadcast((n, m)).unwrap().to_owned());
                }
                Op::GatherRows(a, rows) => {
                    let mut d = Mat::zeros(self.dim(*a));
                    for (k, &r) in rows.iter().enumerate() {
                        let mut dst = d.row_mut(r);
                        dst += &g.row(k);
                    }
                    acc(&mut grads, *a, d);
                }
                Op::ReplaceRows { x, token, rows } => {
                    let mut dx = g.clone();
                    let mut dt = Mat::zeros((1, g.ncols()));
                    for &r in rows {
                        let mut t = dt.row_mut(0);
                        t += &g.row(r);
                        dx.row_mut(r).fill(0.0);
                    }
                    acc(&mut grads, *token, dt);
                    acc(&mut grads, *x, dx);
                }
                Op::SliceCols(a, start, end) => {
                    let mut d = Mat::zeros(self.dim(*a));
                    d.slice_mut(s![.., *start..*end]).assign(&g);
                    acc(&mut grads, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.dim(p).1;
                        acc(&mut grads, p, g.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let h = self.dim(p).0;
                        acc(&mut grads, p, g.slice(s![off..off + h, ..]).to_owned());
                        off += h;
                    }
                }
                Op::CrossEntropyRows { logits, targets, probs } => {
                    let n = targets.len().max(1) as f64;
                    let mut d = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        d[[r, t]] -= 1.0;
                    }
                    acc(&mut grads, *logits, d * (g[[0, 0]] / n));
                }
                Op::HalfLogDet { x, scale, inverse } => {
                    acc(&mut grads, *x, inverse.t().to_owned() * (0.5 * scale * g[[0, 0]]));
                }
                Op::Covariance { x, centered } => {
                    let n = centered.nrows() as f64;
                    let sym = &g + &g.t();
                    acc(&mut grads, *x, centered.dot(&sym) / (n - 1.0));
                }
            }
            grads[i] = Some(g);
        }

        let mut params = BTreeMap::new();
        for (path, v) in &self.params {
            let g = grads[v.0].clone().unwrap_or_else(|| Mat::zeros(self.dim(*v)));
            if g.iter().any(|x| !x.is_finite()) {
                return Err(LearnError::NonFinite(format!("gradient of parameter {path}")));
            }
            params.insert(path.clone(), g);
        }
        Ok(Gradients { nodes: grads, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matmul_gradients_by_hand() {
        let mut g = Graph::new();
        let a = g.constant(array![[1.0, 2.0], [3.0, 4.0]]);
        let b = g.constant(array![[0.5], [-1.0]]);
        let c = g.matmul(a, b);
        let l = g.sum_all(c);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(a).unwrap(), &array![[0.5, -1.0], [0.5, -1.0]]);
        assert_eq!(grads.wrt(b).unwrap(), &array![[4.0], [6.0]]);
    }

    #[test]
    fn logdet_of_identity_plus() {
        let mut g = Graph::new();
        let x = g.constant(Mat::eye(2));
        let l = g.half_logdet_identity_plus(x, 2.0);
        assert!((g.scalar(l) - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut store = ParamStore::new();
        store.insert("layer.w", array![[f64::INFINITY]]);
        let mut g = Graph::new();
        let w = g.param(&store, "layer.w").unwrap();
        let z = g.scale(w, 0.0);
        let l = g.sum_all(z);
        let sq = g.square(w);
        let l2 = g.sum_all(sq);
        let t = g.add(l, l2);
        let err = g.backward(t).err().unwrap();
        assert!(err.to_string().contains("layer.w"), "{err}");
    }
}
