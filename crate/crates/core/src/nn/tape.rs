//! Reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Values are
//! `Array2<f64>`; scalars are 1×1 matrices. Only the operations the Q
//! network needs are provided.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};
use crate::nn::params::{ParamId, ParamStore};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Output row `r` is `Σ w · x[i]` over `(i, w)` in `rows[r]`.
pub type SparseRows = Vec<Vec<(usize, f64)>>;

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Elu(Var),
    Tanh(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    Concat(Vec<Var>),
    TileRows(Var, usize),
    Aggregate(Var, Arc<SparseRows>),
    Scale(Var, Var),
    BlockLeftMul(Var, Var),
    Reshape(Var),
    MseSelected {
        q: Var,
        idx: Vec<usize>,
        targets: Vec<f64>,
    },
    WeightedSum(Var, Array2<f64>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Elu(_) => "elu",
            Op::Tanh(_) => "tanh",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Concat(_) => "concat",
            Op::TileRows(..) => "tile_rows",
            Op::Aggregate(..) => "aggregate",
            Op::Scale(..) => "scale",
            Op::BlockLeftMul(..) => "block_left_mul",
            Op::Reshape(_) => "reshape",
            Op::MseSelected { .. } => "mse",
            Op::WeightedSum(..) => "weighted_sum",
        }
    }
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    non_finite: Option<(usize, &'static str)>,
}

/// Gradients keyed by parameter.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Array2<f64>)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

fn all_finite(a: &Array2<f64>) -> bool {
    const EXP: u64 = 0x7ff0_0000_0000_0000;
    match a.as_slice_memory_order() {
        Some(s) => s.iter().map(|x| u64::from(x.to_bits() & EXP == EXP)).sum::<u64>() == 0,
        None => a.iter().all(|x| x.is_finite()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Error if any recorded value was NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        match self.non_finite {
            Some((i, op)) => Err(Error::Numerical(format!(
                "non-finite value produced by `{op}` (node {i})"
            ))),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        if self.non_finite.is_none() && !all_finite(&value) {
            self.non_finite = Some((self.nodes.len(), op.name()));
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf bound to a parameter; repeated calls reuse the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `x + b` with `b` a 1×m row broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let value = self.value(x) + self.value(b);
        self.push(value, Op::AddBias(x, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(elu);
        self.push(value, Op::Elu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(f64::tanh);
        self.push(value, Op::Tanh(x))
    }

    /// Row-wise layer normalization with affine `gain` and `bias` (1×m).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        let mut xhat = Array2::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(rows);
        for (row, mut out) in xv.rows().into_iter().zip(xhat.rows_mut()) {
            let row = row.as_slice().expect("standard layout");
            let out = out.as_slice_mut().expect("standard layout");
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for (o, v) in out.iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let value = &xhat * self.value(gain) + self.value(bias);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat: row counts differ");
        self.push(value, Op::Concat(parts.to_vec()))
    }

    /// Stack `times` copies of `x` vertically.
    pub fn tile_rows(&mut self, x: Var, times: usize) -> Var {
        let xv = self.value(x);
        let (r, c) = xv.dim();
        let mut value = Array2::zeros((r * times, c));
        for t in 0..times {
            value.slice_mut(s![t * r..(t + 1) * r, ..]).assign(xv);
        }
        self.push(value, Op::TileRows(x, times))
    }

    pub fn aggregate(&mut self, x: Var, rows: Arc<SparseRows>) -> Var {
        let xv = self.value(x);
        let mut value = Array2::zeros((rows.len(), xv.ncols()));
        for (r, list) in rows.iter().enumerate() {
            let mut out = value.row_mut(r);
            for &(i, w) in list {
                out.scaled_add(w, &xv.row(i));
            }
        }
        self.push(value, Op::Aggregate(x, rows))
    }

    /// `s · x` for a 1×1 `s`.
    pub fn scale(&mut self, x: Var, s: Var) -> Var {
        let sv = self.value(s)[[0, 0]];
        let value = self.value(x) * sv;
        self.push(value, Op::Scale(x, s))
    }

    /// For `x` made of row blocks of height `d.nrows()`, left-multiply each
    /// block by `d`.
    pub fn block_left_mul(&mut self, d: Var, x: Var) -> Var {
        let dv = self.value(d);
        let xv = self.value(x);
        let n = dv.nrows();
        assert_eq!(dv.ncols(), n, "block_left_mul needs a square matrix");
        assert_eq!(xv.nrows() % n, 0, "block_left_mul: rows not a multiple of block size");
        let mut value = Array2::zeros(xv.dim());
        for b in 0..xv.nrows() / n {
            let block = xv.slice(s![b * n..(b + 1) * n, ..]);
            value.slice_mut(s![b * n..(b + 1) * n, ..]).assign(&dv.dot(&block));
        }
        self.push(value, Op::BlockLeftMul(d, x))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let xv = self.value(x);
        let flat: Vec<f64> = xv.iter().copied().collect();
        let value = Array2::from_shape_vec((rows, cols), flat).expect("reshape: size mismatch");
        self.push(value, Op::Reshape(x))
    }

    /// Mean of `(q[idx[b], 0] - targets[b])²`.
    pub fn mse_selected(&mut self, q: Var, idx: Vec<usize>, targets: Vec<f64>) -> Var {
        assert_eq!(idx.len(), targets.len());
        let qv = self.value(q);
        let n = idx.len().max(1) as f64;
        let loss = idx
            .iter()
            .zip(&targets)
            .map(|(&i, &t)| (qv[[i, 0]] - t).powi(2))
            .sum::<f64>()
            / n;
        self.push(Array2::from_elem((1, 1), loss), Op::MseSelected { q, idx, targets })
    }

    /// `Σ w ⊙ x` as a 1×1 value.
    pub fn weighted_sum(&mut self, x: Var, weights: Array2<f64>) -> Var {
        let value = (self.value(x) * &weights).sum();
        self.push(Array2::from_elem((1, 1), value), Op::WeightedSum(x, weights))
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check_finite()?;
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));
        let mut out = Gradients { grads: Vec::new() };
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    if out.grads.len() <= id.0 {
                        out.grads.resize(id.0 + 1, None);
                    }
                    accumulate(&mut out.grads[id.0], g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::AddBias(x, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads[b.0], gb);
                    accumulate(&mut grads[x.0], g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g);
                }
                Op::Elu(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx).and(&node.value).for_each(|gx, &y| {
                        if y <= 0.0 {
                            *gx *= y + 1.0;
                        }
                    });
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Tanh(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(&node.value)
                        .for_each(|gx, &y| *gx *= 1.0 - y * y);
                    accumulate(&mut grads[x.0], gx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gg = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &g * self.value(*gain);
                    let cols = xhat.ncols() as f64;
                    let mut gx = Array2::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let mean_d = dh.sum() / cols;
                        let mean_dx = dh.dot(&xh) / cols;
                        let is = inv_std[r];
                        for ((o, &d), &h) in gx.row_mut(r).iter_mut().zip(dh.iter()).zip(xh.iter()) {
                            *o = is * (d - mean_d - h * mean_dx);
                        }
                    }
                    accumulate(&mut grads[bias.0], gb);
                    accumulate(&mut grads[gain.0], gg);
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Concat(parts) => {
                    let mut col = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        accumulate(&mut grads[p.0], g.slice(s![.., col..col + w]).to_owned());
                        col += w;
                    }
                }
                Op::TileRows(x, times) => {
                    let r = self.value(*x).nrows();
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    for t in 0..*times {
                        gx += &g.slice(s![t * r..(t + 1) * r, ..]);
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Aggregate(x, rows) => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    for (r, list) in rows.iter().enumerate() {
                        let gr = g.row(r);
                        for &(i, w) in list {
                            gx.row_mut(i).scaled_add(w, &gr);
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Scale(x, sc) => {
                    let sv = self.value(*sc)[[0, 0]];
                    let gs = (&g * self.value(*x)).sum();
                    accumulate(&mut grads[sc.0], Array2::from_elem((1, 1), gs));
                    accumulate(&mut grads[x.0], g * sv);
                }
                Op::BlockLeftMul(d, x) => {
                    let dv = self.value(*d);
                    let xv = self.value(*x);
                    let n = dv.nrows();
                    let mut gd = Array2::zeros(dv.dim());
                    let mut gx = Array2::zeros(xv.dim());
                    for b in 0..xv.nrows() / n {
                        let gb = g.slice(s![b * n..(b + 1) * n, ..]);
                        let xb = xv.slice(s![b * n..(b + 1) * n, ..]);
                        gd += &gb.dot(&xb.t());
                        gx.slice_mut(s![b * n..(b + 1) * n, ..]).assign(&dv.t().dot(&gb));
                    }
                    accumulate(&mut grads[d.0], gd);
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Reshape(x) => {
                    let dim = self.value(*x).dim();
                    let flat: Vec<f64> = g.iter().copied().collect();
                    let gx = Array2::from_shape_vec(dim, flat).expect("reshape grad");
                    accumulate(&mut grads[x.0], gx);
                }
                Op::MseSelected { q, idx, targets } => {
                    let qv = self.value(*q);
                    let scale = g[[0, 0]] * 2.0 / idx.len().max(1) as f64;
                    let mut gq = Array2::zeros(qv.dim());
                    for (&i, &t) in idx.iter().zip(targets) {
                        gq[[i, 0]] += scale * (qv[[i, 0]] - t);
                    }
                    accumulate(&mut grads[q.0], gq);
                }
                Op::WeightedSum(x, w) => {
                    accumulate(&mut grads[x.0], w * g[[0, 0]]);
                }
            }
        }
        for g in out.grads.iter().flatten() {
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::Numerical("non-finite gradient".into()));
            }
        }
        Ok(out)
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}
