//! Fully connected network with a sparse first layer, hand-written
//! backpropagation and Adam.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-sparse input batch in CSR layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseBatch {
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseBatch {
    pub fn n_rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn from_rows<'a>(n_cols: usize, rows: impl IntoIterator<Item = (&'a [usize], &'a [f64])>) -> Result<Self> {
        let mut b = SparseBatch {
            n_cols,
            indptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        };
        for (idx, val) in rows {
            if idx.len() != val.len() {
                return Err(Error::DimensionMismatch("index/value length mismatch".into()));
            }
            if let Some(&bad) = idx.iter().find(|&&c| c >= n_cols) {
                return Err(Error::DimensionMismatch(format!("column {bad} outside input width {n_cols}")));
            }
            b.indices.extend_from_slice(idx);
            b.values.extend_from_slice(val);
            b.indptr.push(b.indices.len());
        }
        Ok(b)
    }

    pub fn from_dense(rows: &Array2<f64>) -> Self {
        let mut b = SparseBatch {
            n_cols: rows.ncols(),
            indptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        };
        for row in rows.rows() {
            for (c, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    b.indices.push(c);
                    b.values.push(v);
                }
            }
            b.indptr.push(b.indices.len());
        }
        b
    }

    /// Rows `order[..]` as a new batch.
    pub fn select(&self, order: &[usize]) -> Self {
        let mut b = SparseBatch {
            n_cols: self.n_cols,
            indptr: Vec::with_capacity(order.len() + 1),
            indices: Vec::new(),
            values: Vec::new(),
        };
        b.indptr.push(0);
        for &r in order {
            let range = self.indptr[r]..self.indptr[r + 1];
            b.indices.extend_from_slice(&self.indices[range.clone()]);
            b.values.extend_from_slice(&self.values[range]);
            b.indptr.push(b.indices.len());
        }
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hidden {
    LeakyRelu { slope: f64 },
    Identity,
}

impl Hidden {
    fn apply(self, z: f64) -> f64 {
        match self {
            Hidden::LeakyRelu { slope } => {
                if z > 0.0 {
                    z
                } else {
                    slope * z
                }
            }
            Hidden::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Hidden::LeakyRelu { slope } => {
                if z > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Hidden::Identity => 1.0,
        }
    }
}

/// Output activation; also fixes the loss (cross-entropy for sigmoid,
/// squared error otherwise).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    Sigmoid,
    Relu,
    Identity,
}

impl Output {
    fn apply(self, z: f64) -> f64 {
        match self {
            Output::Sigmoid => sigmoid(z),
            Output::Relu => z.max(0.0),
            Output::Identity => z,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "LayerRepr", into = "LayerRepr")]
pub struct Layer {
    /// `n_in × n_out`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerRepr {
    n_in: usize,
    n_out: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl From<Layer> for LayerRepr {
    fn from(l: Layer) -> Self {
        LayerRepr {
            n_in: l.w.nrows(),
            n_out: l.w.ncols(),
            weights: l.w.iter().copied().collect(),
            bias: l.b.to_vec(),
        }
    }
}

impl From<LayerRepr> for Layer {
    fn from(r: LayerRepr) -> Self {
        let w = Array2::from_shape_vec((r.n_in, r.n_out), r.weights)
            .unwrap_or_else(|_| Array2::zeros((r.n_in, r.n_out)));
        Layer {
            w,
            b: Array1::from(r.bias),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub hidden: Hidden,
    pub output: Output,
}

/// Parameter gradients, shaped like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

struct Cache {
    /// Pre-activations of every layer.
    z: Vec<Array2<f64>>,
    /// Post-activation (and post-dropout) outputs of the hidden layers.
    a: Vec<Array2<f64>>,
    /// Inverted-dropout multipliers of the hidden layers.
    masks: Vec<Option<Array2<f64>>>,
}

impl Mlp {
    /// He-initialised network with layer widths `sizes` (input first).
    pub fn new(sizes: &[usize], hidden: Hidden, output: Output, seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) || *sizes.last().unwrap() != 1 {
            return Err(Error::InvalidConfig(format!(
                "layer sizes must be non-zero and end in a single output, got {sizes:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slope = match hidden {
            Hidden::LeakyRelu { slope } => slope,
            Hidden::Identity => 1.0,
        };
        let layers = sizes
            .windows(2)
            .map(|w| {
                let std = (2.0 / ((1.0 + slope * slope) * w[0] as f64)).sqrt();
                let normal = Normal::new(0.0, std).expect("finite std");
                Layer {
                    w: Array2::from_shape_fn((w[0], w[1]), |_| normal.sample(&mut rng)),
                    b: Array1::zeros(w[1]),
                }
            })
            .collect();
        Ok(Mlp { layers, hidden, output })
    }

    /// All weights and biases zero.
    pub fn zeros(sizes: &[usize], hidden: Hidden, output: Output) -> Result<Self> {
        let mut m = Self::new(sizes, hidden, output, 0)?;
        for l in &mut m.layers {
            l.w.fill(0.0);
        }
        Ok(m)
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_size()];
        s.extend(self.layers.iter().map(|l| l.w.ncols()));
        s
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn forward_cache(&self, x: &SparseBatch, dropout: Option<(f64, &mut ChaCha8Rng)>) -> Cache {
        let n = x.n_rows();
        let first = &self.layers[0];
        let width = first.w.ncols();
        let mut z0 = Array2::zeros((n, width));
        for (r, mut row) in z0.rows_mut().into_iter().enumerate() {
            row.assign(&first.b);
            for p in x.indptr[r]..x.indptr[r + 1] {
                row.scaled_add(x.values[p], &first.w.row(x.indices[p]));
            }
        }
        let mut cache = Cache {
            z: vec![z0],
            a: Vec::new(),
            masks: Vec::new(),
        };
        let mut dropout = dropout;
        for l in 1..self.layers.len() {
            let mut a = cache.z[l - 1].mapv(|v| self.hidden.apply(v));
            let mask = match dropout.as_mut() {
                Some((rate, rng)) if *rate > 0.0 => {
                    let keep = 1.0 - *rate;
                    let m = Array2::from_shape_fn(a.raw_dim(), |_| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    a *= &m;
                    Some(m)
                }
                _ => None,
            };
            let layer = &self.layers[l];
            let z = a.dot(&layer.w) + &layer.b;
            cache.a.push(a);
            cache.masks.push(mask);
            cache.z.push(z);
        }
        cache
    }

    /// Output-layer pre-activations.
    pub fn logits(&self, x: &SparseBatch) -> Result<Vec<f64>> {
        if x.n_cols != self.input_size() {
            return Err(Error::DimensionMismatch(format!(
                "input width {} but network expects {}",
                x.n_cols,
                self.input_size()
            )));
        }
        let cache = self.forward_cache(x, None);
        Ok(cache.z.last().expect("at least one layer").column(0).to_vec())
    }

    /// Forward pass without dropout, output activation applied.
    pub fn predict(&self, x: &SparseBatch) -> Result<Vec<f64>> {
        Ok(self.logits(x)?.into_iter().map(|z| self.output.apply(z)).collect())
    }

    /// Mean data loss of pre-activations `z` against `y`.
    pub fn data_loss(&self, z: &[f64], y: &[f64]) -> f64 {
        if z.is_empty() {
            return 0.0;
        }
        let total: f64 = z
            .iter()
            .zip(y)
            .map(|(&z, &y)| match self.output {
                Output::Sigmoid => softplus(z) - y * z,
                Output::Relu => (z.max(0.0) - y).powi(2),
                Output::Identity => (z - y).powi(2),
            })
            .sum();
        total / z.len() as f64
    }

    /// `beta · Σ w²` over weights (biases excluded).
    pub fn penalty(&self, l2_beta: f64) -> f64 {
        l2_beta * self.layers.iter().map(|l| l.w.iter().map(|w| w * w).sum::<f64>()).sum::<f64>()
    }

    /// Objective `mean data loss + beta · Σ w²` without dropout.
    pub fn objective(&self, x: &SparseBatch, y: &[f64], l2_beta: f64) -> Result<f64> {
        let z = self.logits(x)?;
        Ok(self.data_loss(&z, y) + self.penalty(l2_beta))
    }

    /// Objective and its gradient. Dropout is applied when `dropout` is given.
    pub fn loss_and_gradients(
        &self,
        x: &SparseBatch,
        y: &[f64],
        l2_beta: f64,
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<(f64, Gradients)> {
        if x.n_cols != self.input_size() || x.n_rows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "batch is {}x{} with {} targets; network expects width {}",
                x.n_rows(),
                x.n_cols,
                y.len(),
                self.input_size()
            )));
        }
        let n = y.len();
        let cache = self.forward_cache(x, dropout);
        let z_out = cache.z.last().expect("output layer").column(0).to_vec();
        let loss = self.data_loss(&z_out, y) + self.penalty(l2_beta);

        let inv_n = if n == 0 { 0.0 } else { 1.0 / n as f64 };
        let mut dz = Array2::from_shape_fn((n, 1), |(r, _)| {
            let (z, t) = (z_out[r], y[r]);
            inv_n
                * match self.output {
                    Output::Sigmoid => sigmoid(z) - t,
                    Output::Relu => {
                        if z > 0.0 {
                            2.0 * (z - t)
                        } else {
                            0.0
                        }
                    }
                    Output::Identity => 2.0 * (z - t),
                }
        });

        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let db = dz.sum_axis(Axis(0));
            let mut dw = if l == 0 {
                let mut dw = Array2::zeros(layer.w.raw_dim());
                for r in 0..n {
                    let drow = dz.row(r);
                    for p in x.indptr[r]..x.indptr[r + 1] {
                        dw.row_mut(x.indices[p]).scaled_add(x.values[p], &drow);
                    }
                }
                dw
            } else {
                cache.a[l - 1].t().dot(&dz)
            };
            dw.scaled_add(2.0 * l2_beta, &layer.w);
            if l > 0 {
                let mut da = dz.dot(&layer.w.t());
                if let Some(mask) = &cache.masks[l - 1] {
                    da *= mask;
                }
                let zprev = &cache.z[l - 1];
                da.zip_mut_with(zprev, |d, &z| *d *= self.hidden.derivative(z));
                dz = da;
            }
            grads.push(Layer { w: dw, b: db });
        }
        grads.reverse();
        Ok((loss, Gradients { layers: grads }))
    }

    /// Visits every parameter, weights before biases, layer by layer.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()))
    }

    pub fn all_finite(&self) -> bool {
        self.params().all(|v| v.is_finite())
    }
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
            .collect()
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let g_iter = grads.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()));
        for (((p, g), m), v) in net.params_mut().zip(g_iter).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}
