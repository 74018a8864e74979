//! Minimal dense network with backpropagation whose matrix multiplications
//! are dispatchable to any [`GemmMode`], plus the toy classification corpus
//! and checkpoint format that go with it.
//!
//! Architecture is fixed to affine + ReLU hidden layers and an affine +
//! softmax output trained with mean cross-entropy. Reduced precision is
//! confined to the matrix products: bias addition, activations, softmax and
//! the loss always run in fp32/f64.

use crate::gemm::{gemm_f32, GemmError, GemmMode};
use crate::matrix::{MatrixError, MatrixF32};
use crate::sgd::Objective;
use crate::spmx::{self, SpmxError};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Gemm(#[from] GemmError),
    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("batch has {inputs} input rows but {labels} labels")]
    BatchSizeMismatch { inputs: usize, labels: usize },
    #[error("bad architecture: {0}")]
    BadArchitecture(String),
    #[error("parameter vector has length {got}, net needs {want}")]
    ParamLength { got: usize, want: usize },
}

/// A labelled input batch: one row per sample, class indices as labels.
#[derive(Clone, Debug)]
pub struct Batch {
    pub inputs: MatrixF32,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: MatrixF32, labels: Vec<usize>) -> Result<Self, NetError> {
        if inputs.rows() != labels.len() {
            return Err(NetError::BatchSizeMismatch {
                inputs: inputs.rows(),
                labels: labels.len(),
            });
        }
        Ok(Batch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn single(&self, i: usize) -> Batch {
        Batch {
            inputs: MatrixF32::from_vec(1, self.inputs.cols(), self.inputs.row(i).to_vec())
                .expect("row-sized"),
            labels: vec![self.labels[i]],
        }
    }
}

/// Per-layer weight and bias gradients, same shapes as the net.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub weights: Vec<MatrixF32>,
    pub biases: Vec<Vec<f32>>,
}

/// Dense feed-forward network: ReLU hidden layers, softmax output.
#[derive(Clone, Debug)]
pub struct DenseNet {
    sizes: Vec<usize>,
    /// Per layer, fan_in x fan_out: a layer maps row-vectors x to x*W + b.
    weights: Vec<MatrixF32>,
    biases: Vec<Vec<f32>>,
    mode: GemmMode,
}

impl DenseNet {
    /// Seeded Glorot-uniform initialization: weights uniform in
    /// +-sqrt(6 / (fan_in + fan_out)), biases zero. Keeps activations
    /// well scaled, so the unit-scale split regime applies.
    pub fn new(sizes: &[usize], mode: GemmMode, seed: u64) -> Result<Self, NetError> {
        if sizes.len() < 2 {
            return Err(NetError::BadArchitecture(
                "need at least input and output sizes".into(),
            ));
        }
        if sizes.contains(&0) {
            return Err(NetError::BadArchitecture("zero-width layer".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(sizes.len() - 1);
        let mut biases = Vec::with_capacity(sizes.len() - 1);
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
            let dist = Uniform::new_inclusive(-limit, limit).expect("valid range");
            let data = (0..fan_in * fan_out)
                .map(|_| dist.sample(&mut rng))
                .collect();
            weights.push(MatrixF32::from_vec(fan_in, fan_out, data).expect("sized above"));
            biases.push(vec![0.0f32; fan_out]);
        }
        Ok(DenseNet {
            sizes: sizes.to_vec(),
            weights,
            biases,
            mode,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn mode(&self) -> GemmMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: GemmMode) {
        self.mode = mode;
    }

    pub fn weights(&self) -> &[MatrixF32] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f32>] {
        &self.biases
    }

    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }

    fn check_batch(&self, batch: &Batch) -> Result<(), NetError> {
        if batch.is_empty() {
            return Err(NetError::EmptyBatch);
        }
        let classes = self.output_dim();
        if let Some(&label) = batch.labels.iter().find(|&&l| l >= classes) {
            return Err(NetError::LabelOutOfRange { label, classes });
        }
        Ok(())
    }

    /// Affine + bias through the selected multiplication mode.
    fn affine(&self, x: &MatrixF32, layer: usize) -> Result<MatrixF32, NetError> {
        let mut z = gemm_f32(x, &self.weights[layer], self.mode)?;
        let bias = &self.biases[layer];
        let cols = z.cols();
        for (i, v) in z.data_mut().iter_mut().enumerate() {
            *v += bias[i % cols];
        }
        if z.data().iter().any(|v| !v.is_finite()) {
            return Err(NetError::NonFiniteActivation { layer });
        }
        Ok(z)
    }

    /// Pre-activations (affine outputs) and post-activations per layer.
    /// The last post-activation is the softmax output.
    fn forward_trace(&self, x: &MatrixF32) -> Result<(Vec<MatrixF32>, Vec<MatrixF32>), NetError> {
        if x.cols() != self.input_dim() {
            return Err(NetError::Matrix(MatrixError::DimMismatch {
                op: "forward",
                left_rows: x.rows(),
                left_cols: x.cols(),
                right_rows: self.input_dim(),
                right_cols: self.sizes[1],
            }));
        }
        let last = self.layer_count() - 1;
        let mut pres = Vec::with_capacity(self.layer_count());
        let mut posts = Vec::with_capacity(self.layer_count());
        let mut current = x.clone();
        for layer in 0..self.layer_count() {
            let z = self.affine(&current, layer)?;
            let post = if layer == last {
                softmax_rows(&z)
            } else {
                z.map(|v| v.max(0.0))
            };
            current = post.clone();
            pres.push(z);
            posts.push(post);
        }
        Ok((pres, posts))
    }

    /// Activations after every layer; the final entry holds softmax
    /// probabilities. All matrix products run under the configured mode.
    pub fn forward(&self, x: &MatrixF32) -> Result<Vec<MatrixF32>, NetError> {
        Ok(self.forward_trace(x)?.1)
    }

    /// Pre-softmax outputs of the final layer.
    pub fn logits(&self, x: &MatrixF32) -> Result<MatrixF32, NetError> {
        Ok(self.forward_trace(x)?.0.pop().expect("at least one layer"))
    }

    /// Gradients of the mean softmax-cross-entropy loss over the batch.
    ///
    /// Exact backpropagation formulas; matrix products run under the
    /// configured mode, everything else stays fp32.
    pub fn backward(&self, batch: &Batch) -> Result<Gradients, NetError> {
        self.check_batch(batch)?;
        let (pres, posts) = self.forward_trace(&batch.inputs)?;
        let m = batch.len();
        let classes = self.output_dim();

        // d(loss)/d(logits) = (softmax - onehot) / m
        let probs = posts.last().expect("at least one layer");
        let mut delta = probs.clone();
        for (i, &label) in batch.labels.iter().enumerate() {
            let v = delta[(i, label)];
            delta[(i, label)] = v - 1.0;
        }
        for v in delta.data_mut() {
            *v /= m as f32;
        }
        debug_assert_eq!(delta.cols(), classes);

        let mut grad_w = vec![MatrixF32::zeros(0, 0); self.layer_count()];
        let mut grad_b = vec![Vec::new(); self.layer_count()];
        for layer in (0..self.layer_count()).rev() {
            let below = if layer == 0 {
                &batch.inputs
            } else {
                &posts[layer - 1]
            };
            grad_w[layer] = gemm_f32(&below.transpose(), &delta, self.mode)?;
            grad_b[layer] = column_sums(&delta);
            if layer > 0 {
                let mut prev = gemm_f32(&delta, &self.weights[layer].transpose(), self.mode)?;
                for (v, &pre) in prev.data_mut().iter_mut().zip(pres[layer - 1].data()) {
                    if pre <= 0.0 {
                        *v = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok(Gradients {
            weights: grad_w,
            biases: grad_b,
        })
    }

    /// Mean cross-entropy over the batch, computed in f64 from the fp32
    /// logits via a max-shifted log-sum-exp.
    pub fn loss(&self, batch: &Batch) -> Result<f64, NetError> {
        self.check_batch(batch)?;
        let logits = self.logits(&batch.inputs)?;
        let mut total = 0.0f64;
        for (i, &label) in batch.labels.iter().enumerate() {
            total += cross_entropy_f64(logits.row(i), label);
        }
        Ok(total / batch.len() as f64)
    }

    /// Fraction of batch rows whose argmax logit matches the label.
    pub fn accuracy(&self, batch: &Batch) -> Result<f64, NetError> {
        self.check_batch(batch)?;
        let logits = self.logits(&batch.inputs)?;
        let mut hits = 0usize;
        for (i, &label) in batch.labels.iter().enumerate() {
            if argmax(logits.row(i)) == label {
                hits += 1;
            }
        }
        Ok(hits as f64 / batch.len() as f64)
    }

    /// Total number of parameters across weights and biases.
    pub fn param_len(&self) -> usize {
        self.sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    /// Flatten layer by layer: row-major weights, then the bias vector.
    pub fn flatten_params(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.param_len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out
    }

    /// Load a flat parameter vector produced by [`Self::flatten_params`].
    pub fn load_params(&mut self, params: &[f32]) -> Result<(), NetError> {
        if params.len() != self.param_len() {
            return Err(NetError::ParamLength {
                got: params.len(),
                want: self.param_len(),
            });
        }
        let mut offset = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let wlen = w.data().len();
            w.data_mut().copy_from_slice(&params[offset..offset + wlen]);
            offset += wlen;
            let blen = b.len();
            b.copy_from_slice(&params[offset..offset + blen]);
            offset += blen;
        }
        Ok(())
    }

    /// Checkpoint: a u64-LE count of layer sizes and the sizes themselves,
    /// followed per layer by the SPMX-encoded weight matrix and the bias as
    /// a 1 x fan_out SPMX matrix.
    pub fn save_checkpoint(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&(self.sizes.len() as u64).to_le_bytes())?;
        for &s in &self.sizes {
            w.write_all(&(s as u64).to_le_bytes())?;
        }
        for (weight, bias) in self.weights.iter().zip(&self.biases) {
            spmx::write_f32(w, weight)?;
            let bias_row = MatrixF32::from_vec(1, bias.len(), bias.clone()).expect("row-sized");
            spmx::write_f32(w, &bias_row)?;
        }
        Ok(())
    }

    /// Load a checkpoint written by [`Self::save_checkpoint`], attaching
    /// the given multiplication mode.
    pub fn load_checkpoint(r: &mut impl Read, mode: GemmMode) -> Result<Self, SpmxError> {
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)?;
        let count = u64::from_le_bytes(buf) as usize;
        if !(2..=64).contains(&count) {
            return Err(SpmxError::Malformed(format!(
                "implausible layer-size count {count}"
            )));
        }
        let mut sizes = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut buf)?;
            sizes.push(u64::from_le_bytes(buf) as usize);
        }
        let mut weights = Vec::with_capacity(count - 1);
        let mut biases = Vec::with_capacity(count - 1);
        for pair in sizes.windows(2) {
            let w = spmx::read_f32(r)?;
            if w.dims() != (pair[0], pair[1]) {
                return Err(SpmxError::Malformed(format!(
                    "weight block is {}x{}, header says {}x{}",
                    w.rows(),
                    w.cols(),
                    pair[0],
                    pair[1]
                )));
            }
            let b = spmx::read_f32(r)?;
            if b.dims() != (1, pair[1]) {
                return Err(SpmxError::Malformed(format!(
                    "bias block is {}x{}, expected 1x{}",
                    b.rows(),
                    b.cols(),
                    pair[1]
                )));
            }
            weights.push(w);
            biases.push(b.data().to_vec());
        }
        Ok(DenseNet {
            sizes,
            weights,
            biases,
            mode,
        })
    }
}

fn softmax_rows(z: &MatrixF32) -> MatrixF32 {
    let mut out = z.clone();
    let cols = z.cols();
    for r in 0..z.rows() {
        let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

fn cross_entropy_f64(logits: &[f32], label: usize) -> f64 {
    let max = logits.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    let sum: f64 = logits.iter().map(|&v| (v as f64 - max).exp()).sum();
    sum.ln() - (logits[label] as f64 - max)
}

fn column_sums(m: &MatrixF32) -> Vec<f32> {
    let mut out = vec![0.0f32; m.cols()];
    for r in 0..m.rows() {
        for (o, &v) in out.iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    out
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// A dense net plus its training set, exposed to the SGD engines as flat
/// fp32 parameters under the shared-parameter contract.
pub struct NetObjective {
    net: DenseNet,
    data: Batch,
}

impl NetObjective {
    pub fn new(net: DenseNet, data: Batch) -> Result<Self, NetError> {
        if data.is_empty() {
            return Err(NetError::EmptyBatch);
        }
        if data.inputs.cols() != net.input_dim() {
            return Err(NetError::Matrix(MatrixError::DimMismatch {
                op: "net objective",
                left_rows: data.inputs.rows(),
                left_cols: data.inputs.cols(),
                right_rows: net.input_dim(),
                right_cols: net.output_dim(),
            }));
        }
        Ok(NetObjective { net, data })
    }

    /// A copy of the template net carrying the given flat parameters.
    pub fn net_with_params(&self, params: &[f32]) -> Result<DenseNet, NetError> {
        let mut net = self.net.clone();
        net.load_params(params)?;
        Ok(net)
    }
}

impl Objective for NetObjective {
    fn sample_count(&self) -> usize {
        self.data.len()
    }

    fn param_dim(&self) -> usize {
        self.net.param_len()
    }

    fn initial_params(&self) -> Vec<f32> {
        self.net.flatten_params()
    }

    fn sample_grad(&self, params: &[f32], sample: usize, out: &mut [f32]) {
        let mut net = self.net.clone();
        net.load_params(params)
            .expect("engine passes net-sized params");
        let grads = net
            .backward(&self.data.single(sample))
            .expect("validated batch");
        let mut offset = 0;
        for (w, b) in grads.weights.iter().zip(&grads.biases) {
            out[offset..offset + w.data().len()].copy_from_slice(w.data());
            offset += w.data().len();
            out[offset..offset + b.len()].copy_from_slice(b);
            offset += b.len();
        }
    }

    fn loss(&self, params: &[f32]) -> f64 {
        let mut net = self.net.clone();
        net.load_params(params)
            .expect("engine passes net-sized params");
        net.loss(&self.data).expect("validated batch")
    }
}

/// Seeded Gaussian class clusters with the requested minimum distance
/// between class means, split into equally sized train and test batches.
///
/// Means sit on a circle in the first two coordinates (on a line when
/// dim == 1) with unit-variance isotropic noise; labels cycle through the
/// classes so both batches are balanced. Deterministic in the seed.
pub fn make_blobs(
    n: usize,
    classes: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<(Batch, Batch), NetError> {
    if classes < 2 {
        return Err(NetError::BadArchitecture(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    if dim == 0 || n == 0 {
        return Err(NetError::BadArchitecture(
            "need positive sample count and dimension".into(),
        ));
    }
    let mut means = vec![vec![0.0f64; dim]; classes];
    if dim == 1 {
        for (c, mean) in means.iter_mut().enumerate() {
            mean[0] = c as f64 * separation;
        }
    } else {
        // Adjacent means on the circle are exactly `separation` apart.
        let radius = separation / (2.0 * (std::f64::consts::PI / classes as f64).sin());
        for (c, mean) in means.iter_mut().enumerate() {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
            mean[0] = radius * angle.cos();
            mean[1] = radius * angle.sin();
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut draw = |count: usize| -> Batch {
        let mut data = Vec::with_capacity(count * dim);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let label = i % classes;
            for &mu in &means[label] {
                let eps: f64 = normal.sample(&mut rng);
                data.push((mu + eps) as f32);
            }
            labels.push(label);
        }
        Batch {
            inputs: MatrixF32::from_vec(count, dim, data).expect("sized above"),
            labels,
        }
    };
    let train = draw(n);
    let test = draw(n);
    Ok((train, test))
}
