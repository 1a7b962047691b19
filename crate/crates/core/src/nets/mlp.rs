//! Per-cell multilayer perceptron with hand-derived backpropagation.
//!
//! Inputs arrive as sparse rows (one row per grid cell) because the token
//! networks consume one-hot neighbourhoods: the first layer then costs one
//! weight-row gather per active feature instead of a dense product.

use crate::nets::params::{Gradients, ModelParams};
use crate::rng::Stream;

/// Compressed sparse rows: row `i` holds entries `offsets[i]..offsets[i+1]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseRows {
    pub offsets: Vec<usize>,
    pub index: Vec<u32>,
    pub value: Vec<f64>,
}

impl SparseRows {
    pub fn with_rows(rows: usize) -> Self {
        let mut offsets = Vec::with_capacity(rows + 1);
        offsets.push(0);
        Self {
            offsets,
            index: Vec::new(),
            value: Vec::new(),
        }
    }

    pub fn push(&mut self, index: usize, value: f64) {
        self.index.push(index as u32);
        self.value.push(value);
    }

    pub fn end_row(&mut self) {
        self.offsets.push(self.index.len());
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.index[r.clone()], &self.value[r])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    /// Parameter indices as (weight, bias) per linear layer.
    layers: Vec<(usize, usize)>,
}

/// Post-activation hidden states of every hidden layer plus the raw outputs.
#[derive(Clone, Debug)]
pub struct Activations {
    pub hidden: Vec<Vec<f64>>,
    pub out: Vec<f64>,
}

impl Mlp {
    /// Registers `layer_count` linear layers (`layer_count - 1` hidden ReLU
    /// layers) in `params`. `first_fan_in` is the expected number of active
    /// inputs per row, used for He-uniform scaling.
    pub fn build(
        params: &mut ModelParams,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        layer_count: usize,
        first_fan_in: usize,
        rng: &mut Stream,
    ) -> Self {
        assert!(layer_count >= 1);
        let mut layers = Vec::with_capacity(layer_count);
        for l in 0..layer_count {
            let (fan_in, rows) = if l == 0 {
                (first_fan_in, in_dim)
            } else {
                (hidden, hidden)
            };
            let cols = if l + 1 == layer_count { out_dim } else { hidden };
            let w = params.add_he_uniform(&format!("l{l}.weight"), vec![rows, cols], fan_in, rng);
            let b = params.add_zeros(&format!("l{l}.bias"), vec![cols]);
            layers.push((w, b));
        }
        Self {
            in_dim,
            hidden,
            out_dim,
            layers,
        }
    }

    /// Rebuilds the layer index map for a parameter store laid out by
    /// [`Mlp::build`].
    pub fn from_layout(in_dim: usize, hidden: usize, out_dim: usize, layer_count: usize) -> Self {
        Self {
            in_dim,
            hidden,
            out_dim,
            layers: (0..layer_count).map(|l| (2 * l, 2 * l + 1)).collect(),
        }
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    fn width(&self, l: usize) -> usize {
        if l + 1 == self.layers.len() {
            self.out_dim
        } else {
            self.hidden
        }
    }

    pub fn forward(&self, params: &ModelParams, x: &SparseRows) -> Activations {
        let rows = x.rows();
        let mut hidden = Vec::with_capacity(self.layers.len() - 1);
        let mut current: Option<Vec<f64>> = None;
        for (l, &(wi, bi)) in self.layers.iter().enumerate() {
            let cols = self.width(l);
            let w = params.value(wi);
            let b = params.value(bi);
            let mut out = vec![0.0; rows * cols];
            for r in 0..rows {
                let dst = &mut out[r * cols..(r + 1) * cols];
                dst.copy_from_slice(b);
                match &current {
                    None => {
                        let (idx, val) = x.row(r);
                        for (&j, &v) in idx.iter().zip(val) {
                            let wrow = &w[j as usize * cols..(j as usize + 1) * cols];
                            axpy(v, wrow, dst);
                        }
                    }
                    Some(prev) => {
                        let src = &prev[r * self.hidden..(r + 1) * self.hidden];
                        for (j, &v) in src.iter().enumerate() {
                            if v != 0.0 {
                                axpy(v, &w[j * cols..(j + 1) * cols], dst);
                            }
                        }
                    }
                }
            }
            if l + 1 < self.layers.len() {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
                if let Some(prev) = current.take() {
                    hidden.push(prev);
                }
                current = Some(out);
            } else {
                if let Some(prev) = current.take() {
                    hidden.push(prev);
                }
                return Activations { hidden, out };
            }
        }
        unreachable!("an MLP has at least one layer")
    }

    /// Accumulates parameter gradients for upstream gradient `dout` into
    /// `grads`. When `input_grad` is set, also returns the gradient with
    /// respect to every stored input entry (same layout as `x.value`).
    pub fn backward(
        &self,
        params: &ModelParams,
        x: &SparseRows,
        acts: &Activations,
        dout: &[f64],
        grads: &mut Gradients,
        input_grad: bool,
    ) -> Option<Vec<f64>> {
        let rows = x.rows();
        let mut delta = dout.to_vec();
        let mut dx = input_grad.then(|| vec![0.0; x.value.len()]);
        for l in (0..self.layers.len()).rev() {
            let (wi, bi) = self.layers[l];
            let cols = self.width(l);
            let w = params.value(wi);
            {
                let gb = &mut grads.bufs[bi];
                for r in 0..rows {
                    for (g, d) in gb.iter_mut().zip(&delta[r * cols..(r + 1) * cols]) {
                        *g += d;
                    }
                }
            }
            if l == 0 {
                let gw = &mut grads.bufs[wi];
                for r in 0..rows {
                    let d = &delta[r * cols..(r + 1) * cols];
                    let (idx, val) = x.row(r);
                    for (k, (&j, &v)) in idx.iter().zip(val).enumerate() {
                        let j = j as usize;
                        axpy(v, d, &mut gw[j * cols..(j + 1) * cols]);
                        if let Some(dx) = dx.as_mut() {
                            dx[x.offsets[r] + k] = dot(&w[j * cols..(j + 1) * cols], d);
                        }
                    }
                }
            } else {
                let prev = &acts.hidden[l - 1];
                let h = self.hidden;
                let mut next = vec![0.0; rows * h];
                let gw = &mut grads.bufs[wi];
                for r in 0..rows {
                    let d = &delta[r * cols..(r + 1) * cols];
                    let p = &prev[r * h..(r + 1) * h];
                    let nd = &mut next[r * h..(r + 1) * h];
                    for j in 0..h {
                        if p[j] > 0.0 {
                            axpy(p[j], d, &mut gw[j * cols..(j + 1) * cols]);
                            nd[j] = dot(&w[j * cols..(j + 1) * cols], d);
                        }
                    }
                }
                delta = next;
            }
        }
        dx
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
