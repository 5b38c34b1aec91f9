//! Reverse-mode differentiation over a linear tape of 2-D `f64` tensors.
//!
//! Every node stores its forward value; `backward` walks the tape once in
//! reverse and accumulates adjoints. Parameters enter the tape as leaves that
//! remember their parameter id, so their adjoints land in the matching
//! gradient slot.

use ndarray::{s, Array1, Array2, Axis, Zip};

use super::params::{Gradients, ParamId, ParamSet};
use crate::error::{Error, Result};

pub type Var = usize;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

enum Op {
    Param(ParamId),
    Const,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulBt(Var, Var),
    Add(Var, Var),
    /// Broadcast a `1×n` row over every row of `a`.
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Tanh(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
    },
    /// Row-wise softmax over permitted entries; forbidden entries get 0.
    MaskedSoftmax(Var),
    Block {
        x: Var,
        r0: usize,
        c0: usize,
    },
    Assemble(Vec<(Var, usize, usize)>),
    Gather {
        table: Var,
        rows: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Array2<f64>,
    },
    SquaredError {
        pred: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Recorded computation for one forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    param_shapes: Vec<(usize, usize)>,
    loss: Option<Var>,
    consumed: bool,
}

impl Tape {
    pub fn new(params: &ParamSet) -> Self {
        Tape {
            nodes: Vec::new(),
            param_shapes: params.shapes(),
            loss: None,
            consumed: false,
        }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        self.push(params.value(id).clone(), Op::Param(id))
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Const)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .mapv(|x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()));
        self.push(v, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mean = xv.sum_axis(Axis(1)) / n;
        let centered = xv - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|c| c * c).sum_axis(Axis(1)) / n;
        let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
        let xhat = centered * &inv_std.view().insert_axis(Axis(1));
        let out = &xhat * self.value(gain) + self.value(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Softmax of each row restricted to `allowed`. Rows with no permitted
    /// entry produce zeros.
    pub fn masked_softmax(&mut self, a: Var, allowed: &Array2<bool>) -> Var {
        let x = self.value(a);
        let mut out = Array2::<f64>::zeros(x.raw_dim());
        for ((xr, mr), mut or) in x
            .rows()
            .into_iter()
            .zip(allowed.rows())
            .zip(out.rows_mut())
        {
            let max = xr
                .iter()
                .zip(mr.iter())
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut sum = 0.0;
            for ((o, &v), &m) in or.iter_mut().zip(xr.iter()).zip(mr.iter()) {
                if m {
                    *o = (v - max).exp();
                    sum += *o;
                }
            }
            or.mapv_inplace(|o| o / sum);
        }
        self.push(out, Op::MaskedSoftmax(a))
    }

    pub fn block(&mut self, x: Var, r0: usize, c0: usize, nr: usize, nc: usize) -> Var {
        let v = self
            .value(x)
            .slice(s![r0..r0 + nr, c0..c0 + nc])
            .to_owned();
        self.push(v, Op::Block { x, r0, c0 })
    }

    /// Places each part at its `(row, col)` offset in a zero matrix.
    pub fn assemble(&mut self, rows: usize, cols: usize, parts: Vec<(Var, usize, usize)>) -> Var {
        let mut out = Array2::<f64>::zeros((rows, cols));
        for &(p, r0, c0) in &parts {
            let pv = self.value(p);
            out.slice_mut(s![r0..r0 + pv.nrows(), c0..c0 + pv.ncols()])
                .assign(pv);
        }
        self.push(out, Op::Assemble(parts))
    }

    pub fn gather(&mut self, table: Var, rows: Vec<usize>) -> Var {
        let t = self.value(table);
        let mut out = Array2::<f64>::zeros((rows.len(), t.ncols()));
        for (k, &r) in rows.iter().enumerate() {
            out.row_mut(k).assign(&t.row(r));
        }
        self.push(out, Op::Gather { table, rows })
    }

    /// `Σ_i weights[i] · (−ln softmax(logits_i)[targets[i]])` as a `1×1` node.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>, weights: Vec<f64>) -> Var {
        let l = self.value(logits);
        let mut probs = Array2::<f64>::zeros(l.raw_dim());
        let mut loss = 0.0;
        for (i, row) in l.rows().into_iter().enumerate() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            for (j, &v) in row.iter().enumerate() {
                probs[[i, j]] = (v - lse).exp();
            }
            loss += weights[i] * (lse - row[targets[i]]);
        }
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
            },
        )
    }

    /// `Σ_i weights[i] · (pred_i − target_i)²` for an `N×1` prediction.
    pub fn squared_error(&mut self, pred: Var, targets: Vec<f64>, weights: Vec<f64>) -> Var {
        let p = self.value(pred);
        let loss: f64 = p
            .column(0)
            .iter()
            .zip(&targets)
            .zip(&weights)
            .map(|((&y, &t), &w)| w * (y - t) * (y - t))
            .sum();
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::SquaredError {
                pred,
                targets,
                weights,
            },
        )
    }

    pub fn set_loss(&mut self, v: Var) {
        self.loss = Some(v);
    }

    pub fn loss(&self) -> Option<f64> {
        self.loss.map(|v| self.value(v)[[0, 0]])
    }

    /// Gradients of the recorded loss with respect to every parameter. A tape
    /// without a loss node yields all-zero gradients. May be called once.
    pub fn backward(&mut self) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::DoubleBackward);
        }
        self.consumed = true;
        let mut grads = Gradients::zeros(&self.param_shapes);
        let Some(root) = self.loss else {
            return Ok(grads);
        };
        let mut adj: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root] = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..=root).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Param(id) => grads.accumulate(*id, &g),
                Op::Const => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.nodes[*b].value.t());
                    let gb = self.nodes[*a].value.t().dot(&g);
                    add_into(&mut adj, *a, ga);
                    add_into(&mut adj, *b, gb);
                }
                Op::MatMulBt(a, b) => {
                    let ga = g.dot(&self.nodes[*b].value);
                    let gb = g.t().dot(&self.nodes[*a].value);
                    add_into(&mut adj, *a, ga);
                    add_into(&mut adj, *b, gb);
                }
                Op::Add(a, b) => {
                    add_into(&mut adj, *b, g.clone());
                    add_into(&mut adj, *a, g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    add_into(&mut adj, *row, gr);
                    add_into(&mut adj, *a, g);
                }
                Op::Scale(a, k) => add_into(&mut adj, *a, g * *k),
                Op::Gelu(a) => {
                    let x = &self.nodes[*a].value;
                    let mut ga = g;
                    Zip::from(&mut ga).and(x).for_each(|gv, &x| {
                        let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
                        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                        *gv *= 0.5 * (1.0 + t) + 0.5 * x * dt;
                    });
                    add_into(&mut adj, *a, ga);
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|gv, &y| *gv *= 1.0 - y * y);
                    add_into(&mut adj, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gain_v = &self.nodes[*gain].value;
                    let dgain = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dbias = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &g * gain_v;
                    let n = xhat.ncols() as f64;
                    let mean_d = dxhat.sum_axis(Axis(1)) / n;
                    let mean_dx = (&dxhat * xhat).sum_axis(Axis(1)) / n;
                    let mut dx = dxhat;
                    for (r, mut row) in dx.rows_mut().into_iter().enumerate() {
                        let xr = xhat.row(r);
                        for (c, v) in row.iter_mut().enumerate() {
                            *v = inv_std[r] * (*v - mean_d[r] - xr[c] * mean_dx[r]);
                        }
                    }
                    add_into(&mut adj, *gain, dgain);
                    add_into(&mut adj, *bias, dbias);
                    add_into(&mut adj, *x, dx);
                }
                Op::MaskedSoftmax(a) => {
                    let p = &node.value;
                    let mut ga = g;
                    for (mut gr, pr) in ga.rows_mut().into_iter().zip(p.rows()) {
                        let dot: f64 = gr.iter().zip(pr.iter()).map(|(a, b)| a * b).sum();
                        for (gv, &pv) in gr.iter_mut().zip(pr.iter()) {
                            *gv = pv * (*gv - dot);
                        }
                    }
                    add_into(&mut adj, *a, ga);
                }
                Op::Block { x, r0, c0 } => {
                    let shape = self.nodes[*x].value.raw_dim();
                    let slot = adj[*x].get_or_insert_with(|| Array2::zeros(shape));
                    let mut view = slot.slice_mut(s![*r0..*r0 + g.nrows(), *c0..*c0 + g.ncols()]);
                    view += &g;
                }
                Op::Assemble(parts) => {
                    for &(p, r0, c0) in parts {
                        let (nr, nc) = self.nodes[p].value.dim();
                        let part = g.slice(s![r0..r0 + nr, c0..c0 + nc]).to_owned();
                        add_into(&mut adj, p, part);
                    }
                }
                Op::Gather { table, rows } => {
                    let shape = self.nodes[*table].value.raw_dim();
                    let slot = adj[*table].get_or_insert_with(|| Array2::zeros(shape));
                    for (k, &r) in rows.iter().enumerate() {
                        let mut row = slot.row_mut(r);
                        row += &g.row(k);
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    weights,
                    probs,
                } => {
                    let up = g[[0, 0]];
                    let mut gl = probs.clone();
                    for (i, mut row) in gl.rows_mut().into_iter().enumerate() {
                        row[targets[i]] -= 1.0;
                        row *= weights[i] * up;
                    }
                    add_into(&mut adj, *logits, gl);
                }
                Op::SquaredError {
                    pred,
                    targets,
                    weights,
                } => {
                    let up = g[[0, 0]];
                    let p = &self.nodes[*pred].value;
                    let mut gp = Array2::<f64>::zeros(p.raw_dim());
                    for i in 0..p.nrows() {
                        gp[[i, 0]] = 2.0 * weights[i] * (p[[i, 0]] - targets[i]) * up;
                    }
                    add_into(&mut adj, *pred, gp);
                }
            }
        }
        Ok(grads)
    }
}

fn add_into(adj: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut adj[v] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}
