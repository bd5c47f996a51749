//! A small reverse-mode tape over dense row-major matrices.
//!
//! Every forward pass records its operations on a [`Graph`]; calling
//! [`Graph::backward`] on a scalar node returns gradients for every
//! parameter the pass touched. Values are `f64` throughout.

use ndarray::{s, Array2, Axis};

use super::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-12;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulT(Var, Var),
    Add(Var, Var),
    /// a (n×m) + b (1×m) broadcast over rows
    AddRow(Var, Var),
    Scale(Var, f64),
    /// element-wise product with a constant mask
    MulConst(Var, Array2<f64>),
    Gelu(Var),
    /// row softmax; masked columns get exactly zero probability
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Array2<f64>,
        inv_std: Vec<f64>,
    },
    Gather(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    /// summed binary cross-entropy of sigmoid(logits) against soft targets
    BceWithLogits(Var, Vec<f64>),
}

struct Node {
    value: Option<Array2<f64>>,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

/// Parameter gradients indexed by [`ParamId`]; `None` for untouched tensors.
pub struct Gradients(pub Vec<Option<Array2<f64>>>);

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.0.get(id.index()).and_then(Option::as_ref)
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::new() }
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.value(id),
            _ => node.value.as_ref().expect("non-parameter nodes own their value"),
        }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node { value: None, op: Op::Param(id) });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "broadcast operand must be a single row");
        let v = self.value(a) + r;
        self.push(v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a) * factor;
        self.push(v, Op::Scale(a, factor))
    }

    pub fn mul_const(&mut self, a: Var, mask: Array2<f64>) -> Var {
        let v = self.value(a) * &mask;
        self.push(v, Op::MulConst(a, mask))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.push(v, Op::Gelu(a))
    }

    /// Row softmax. Columns with `masked[j] == true` receive zero weight.
    pub fn softmax(&mut self, a: Var, masked: &[bool]) -> Var {
        let x = self.value(a);
        assert_eq!(x.ncols(), masked.len());
        let mut out = Array2::zeros(x.raw_dim());
        for (row, mut dst) in x.rows().into_iter().zip(out.rows_mut()) {
            let max = row
                .iter()
                .zip(masked)
                .filter(|(_, &m)| !m)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for ((d, &v), &m) in dst.iter_mut().zip(row.iter()).zip(masked) {
                if !m {
                    *d = (v - max).exp();
                    sum += *d;
                }
            }
            dst.mapv_inplace(|d| d / sum);
        }
        self.push(out, Op::Softmax(a))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut normed = Array2::zeros(xv.raw_dim());
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for (row, mut dst) in xv.rows().into_iter().zip(normed.rows_mut()) {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for (d, v) in dst.iter_mut().zip(row.iter()) {
                *d = (v - mean) * is;
            }
        }
        let out = &normed * self.value(gain) + self.value(bias);
        self.push(out, Op::LayerNorm { x, gain, bias, normed, inv_std })
    }

    /// Rows of `table` selected by `rows`, in order.
    pub fn gather(&mut self, table: Var, rows: &[usize]) -> Var {
        let t = self.value(table);
        let v = t.select(Axis(0), rows);
        self.push(v, Op::Gather(table, rows.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("matching column counts");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("matching row counts");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start))
    }

    /// Σ_labels BCE(sigmoid(z), t) for a 1×K logit row.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Var {
        let z = self.value(logits);
        assert_eq!(z.len(), targets.len());
        let loss: f64 = z
            .iter()
            .zip(targets)
            .map(|(&z, &t)| softplus(z) - t * z)
            .sum();
        self.push(Array2::from_elem((1, 1), loss), Op::BceWithLogits(logits, targets.to_vec()))
    }

    /// Reverse pass from a 1×1 node.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).dim(), (1, 1), "backward starts from a scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Array2::ones((1, 1)));
        let mut param_grads: Vec<Option<Array2<f64>>> = vec![None; self.params.len()];

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Constant => {}
                Op::Param(id) => match &mut param_grads[id.index()] {
                    Some(existing) => *existing += &g,
                    slot @ None => *slot = Some(g),
                },
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g);
                }
                Op::Scale(a, f) => acc(&mut grads, *a, g * *f),
                Op::MulConst(a, mask) => acc(&mut grads, *a, g * mask),
                Op::Gelu(a) => {
                    let d = self.value(*a).mapv(gelu_grad);
                    acc(&mut grads, *a, g * d);
                }
                Op::Softmax(a) => {
                    let p = self.nodes[i].value.as_ref().unwrap();
                    let gp = &g * p;
                    let row_dot = gp.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let gs = gp - p * &row_dot;
                    acc(&mut grads, *a, gs);
                }
                Op::LayerNorm { x, gain, bias, normed, inv_std } => {
                    let gv = self.value(*gain);
                    acc(&mut grads, *bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *gain, (&g * normed).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let gn = &g * gv;
                    let n = gn.ncols() as f64;
                    let mut gx = Array2::zeros(gn.raw_dim());
                    for (r, mut dst) in gx.rows_mut().into_iter().enumerate() {
                        let gr = gn.row(r);
                        let xr = normed.row(r);
                        let sum_g = gr.sum();
                        let sum_gx = gr.dot(&xr);
                        for ((d, &gi), &xi) in dst.iter_mut().zip(gr.iter()).zip(xr.iter()) {
                            *d = inv_std[r] / n * (n * gi - sum_g - xi * sum_gx);
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Gather(table, rows) => {
                    let mut gt = Array2::zeros(self.value(*table).raw_dim());
                    for (r, &src) in rows.iter().enumerate() {
                        let mut dst = gt.row_mut(src);
                        dst += &g.row(r);
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let n = self.value(p).nrows();
                        acc(&mut grads, p, g.slice(s![start..start + n, ..]).to_owned());
                        start += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let n = self.value(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., start..start + n]).to_owned());
                        start += n;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::BceWithLogits(logits, targets) => {
                    let z = self.value(*logits);
                    let upstream = g[[0, 0]];
                    let gz = Array2::from_shape_fn(z.raw_dim(), |(r, c)| {
                        let k = r * z.ncols() + c;
                        upstream * (sigmoid(z[[r, c]]) - targets[k])
                    });
                    acc(&mut grads, *logits, gz);
                }
            }
        }
        Gradients(param_grads)
    }
}
