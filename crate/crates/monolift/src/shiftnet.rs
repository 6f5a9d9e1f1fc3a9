//! Translation refinement network.
//!
//! A fully-connected regressor (two hidden layers of 1024 rectifier units,
//! linear 3-unit output) maps the solver translation plus the detection
//! quantities to an improved translation. Forward and backward passes are
//! explicit; training is plain SGD with momentum under the volume
//! displacement loss, single-threaded and bit-reproducible for a fixed seed.
//!
//! The 26 input features are, in order: t' (3), the 2D box (4), dimensions
//! (3), (sin, cos) of the local yaw (2), (sin, cos) of the global yaw (2),
//! and the row-major projection matrix (12). Each feature is standardized by
//! a per-feature mean/scale fitted on the training split; the scaler is part
//! of the model and is applied identically at training and inference time.

use crate::geometry::{Box2D, CameraMatrix, Dims3D, Translation};
use crate::losses::vdl;
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{ErrorKind, Read};
use std::path::Path;
use thiserror::Error;

/// Input feature count.
pub const FEATURE_DIM: usize = 26;
/// Hidden width of the production architecture.
pub const HIDDEN_DIM: usize = 1024;
/// Output dimension (a translation).
pub const OUTPUT_DIM: usize = 3;

const MODEL_MAGIC: &[u8; 5] = b"SHNET";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ShiftNetError {
    #[error("feature standardization has not been fitted")]
    UnfittedScaler,
    #[error("training requires a non-empty dataset")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    BadConfig(&'static str),
    #[error("model file rejected: {0}")]
    FormatVersionMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed sample dataset: {0}")]
    BadDataset(#[from] serde_json::Error),
}

/// One training/inference record: raw (pre-standardization) feature inputs,
/// the ground-truth target location, and the dims/yaw the loss reconstructs
/// boxes with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub class_name: String,
    /// Solver translation recovered from the (possibly noisy) inputs.
    pub t_prime: [f64; 3],
    pub bbox: [f64; 4],
    /// Height, width, length.
    pub dims: [f64; 3],
    pub alpha_l: f64,
    pub alpha_g: f64,
    /// Row-major projection matrix.
    pub p: [f64; 12],
    /// Ground-truth location; tz > 0.
    pub target: [f64; 3],
}

impl Sample {
    pub fn features(&self) -> FeatureVector {
        FeatureVector::assemble_raw(
            self.t_prime,
            self.bbox,
            self.dims,
            self.alpha_l,
            self.alpha_g,
            self.p,
        )
    }

    pub fn dims3d(&self) -> Dims3D {
        Dims3D::new(self.dims[0], self.dims[1], self.dims[2]).expect("sample dims are positive")
    }

    pub fn target_translation(&self) -> Translation {
        Translation::new(self.target[0], self.target[1], self.target[2])
    }

    pub fn t_prime_translation(&self) -> Translation {
        Translation::new(self.t_prime[0], self.t_prime[1], self.t_prime[2])
    }
}

/// Raw 26-feature input vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub raw: [f64; FEATURE_DIM],
}

impl FeatureVector {
    pub fn assemble(
        t_prime: &Translation,
        bbox: &Box2D,
        dims: &Dims3D,
        alpha_l: f64,
        alpha_g: f64,
        p: &CameraMatrix,
    ) -> Self {
        Self::assemble_raw(
            [t_prime.tx, t_prime.ty, t_prime.tz],
            [bbox.x_min, bbox.y_min, bbox.x_max, bbox.y_max],
            [dims.h, dims.w, dims.l],
            alpha_l,
            alpha_g,
            p.row_major(),
        )
    }

    fn assemble_raw(
        t_prime: [f64; 3],
        bbox: [f64; 4],
        dims: [f64; 3],
        alpha_l: f64,
        alpha_g: f64,
        p: [f64; 12],
    ) -> Self {
        let mut raw = [0.0; FEATURE_DIM];
        raw[0..3].copy_from_slice(&t_prime);
        raw[3..7].copy_from_slice(&bbox);
        raw[7..10].copy_from_slice(&dims);
        raw[10] = alpha_l.sin();
        raw[11] = alpha_l.cos();
        raw[12] = alpha_g.sin();
        raw[13] = alpha_g.cos();
        raw[14..26].copy_from_slice(&p);
        Self { raw }
    }
}

/// Per-feature standardization parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    /// Fits mean and standard deviation per feature; constant features get
    /// unit scale.
    pub fn fit(samples: &[Sample]) -> Self {
        let n = samples.len().max(1) as f64;
        let mut mean = vec![0.0; FEATURE_DIM];
        let mut sq = vec![0.0; FEATURE_DIM];
        for s in samples {
            for (i, v) in s.features().raw.iter().enumerate() {
                mean[i] += v;
                sq[i] += v * v;
            }
        }
        for i in 0..FEATURE_DIM {
            mean[i] /= n;
            sq[i] = (sq[i] / n - mean[i] * mean[i]).max(0.0).sqrt();
        }
        let scale = sq
            .into_iter()
            .map(|s| if s < 1e-12 { 1.0 } else { s })
            .collect();
        Self { mean, scale }
    }

    /// Mean 0, scale 1 for every feature.
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    fn apply(&self, raw: &[f64], out: &mut [f64]) {
        for i in 0..raw.len() {
            out[i] = (raw[i] - self.mean[i]) / self.scale[i];
        }
    }
}

/// Dense layer with weights stored input-major: `w[k * out + j]` connects
/// input `k` to output `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn he_uniform(in_dim: usize, out_dim: usize, rng: &mut ChaCha12Rng) -> Self {
        let limit = (6.0 / in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            in_dim,
            out_dim,
            w,
            b: vec![0.0; out_dim],
        }
    }

    pub fn from_parts(in_dim: usize, out_dim: usize, w: Vec<f64>, b: Vec<f64>) -> Self {
        assert_eq!(w.len(), in_dim * out_dim);
        assert_eq!(b.len(), out_dim);
        Self {
            in_dim,
            out_dim,
            w,
            b,
        }
    }
}

/// Whether the network output is the translation itself or a correction
/// added to the solver translation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum TargetMode {
    #[default]
    Direct,
    Residual,
}

/// The refinement network: three affine layers with rectifier activations on
/// the hidden ones, plus the feature scaler.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    pub scaler: Option<Scaler>,
    pub target_mode: TargetMode,
}

/// Parameter gradients, one weight and bias buffer per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub d_w: Vec<Vec<f64>>,
    pub d_b: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(m: &Mlp) -> Self {
        Self {
            d_w: m.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            d_b: m.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    fn scale(&mut self, k: f64) {
        for g in self.d_w.iter_mut().chain(self.d_b.iter_mut()) {
            for v in g.iter_mut() {
                *v *= k;
            }
        }
    }
}

impl Mlp {
    /// Production architecture: 26 -> 1024 -> 1024 -> 3.
    pub fn new(seed: u64) -> Self {
        Self::with_dims(FEATURE_DIM, HIDDEN_DIM, OUTPUT_DIM, seed)
    }

    /// Same three-layer shape with custom widths (test harnesses use tiny
    /// hidden layers).
    pub fn with_dims(input: usize, hidden: usize, output: usize, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let layers = vec![
            Layer::he_uniform(input, hidden, &mut rng),
            Layer::he_uniform(hidden, hidden, &mut rng),
            Layer::he_uniform(hidden, output, &mut rng),
        ];
        Self {
            layers,
            scaler: None,
            target_mode: TargetMode::Direct,
        }
    }

    pub fn from_parts(layers: Vec<Layer>, scaler: Option<Scaler>, target_mode: TargetMode) -> Self {
        assert_eq!(layers.len(), 3, "architecture is three affine layers");
        for pair in layers.windows(2) {
            assert_eq!(pair[0].out_dim, pair[1].in_dim);
        }
        if let Some(s) = &scaler {
            assert_eq!(s.mean.len(), layers[0].in_dim);
            assert_eq!(s.scale.len(), layers[0].in_dim);
        }
        Self {
            layers,
            scaler,
            target_mode,
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    fn standardized(&self, f: &FeatureVector) -> Result<Vec<f64>, ShiftNetError> {
        let scaler = self.scaler.as_ref().ok_or(ShiftNetError::UnfittedScaler)?;
        let dim = self.input_dim();
        let mut x = vec![0.0; dim];
        scaler.apply(&f.raw[..dim], &mut x);
        Ok(x)
    }

    /// Refined translation for one feature vector.
    pub fn forward(&self, f: &FeatureVector) -> Result<Translation, ShiftNetError> {
        let x = self.standardized(f)?;
        let mut cur = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = layer.b.clone();
            for (k, &xv) in cur.iter().enumerate() {
                if xv != 0.0 {
                    let row = &layer.w[k * layer.out_dim..(k + 1) * layer.out_dim];
                    for (nj, wj) in next.iter_mut().zip(row.iter()) {
                        *nj += xv * wj;
                    }
                }
            }
            if i + 1 < self.layers.len() {
                for v in next.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            cur = next;
        }
        let mut out = [cur[0], cur[1], cur[2]];
        if self.target_mode == TargetMode::Residual {
            out[0] += f.raw[0];
            out[1] += f.raw[1];
            out[2] += f.raw[2];
        }
        Ok(Translation::new(out[0], out[1], out[2]))
    }
}

/// Batch activations: standardized inputs plus each layer's output
/// (post-rectifier for hidden layers), flat row-major.
struct BatchState {
    x: Vec<f64>,
    acts: Vec<Vec<f64>>,
    batch: usize,
}

fn affine_forward(x: &[f64], batch: usize, layer: &Layer, relu: bool, out: &mut Vec<f64>) {
    out.clear();
    out.reserve(batch * layer.out_dim);
    for _ in 0..batch {
        out.extend_from_slice(&layer.b);
    }
    for i in 0..batch {
        let xrow = &x[i * layer.in_dim..(i + 1) * layer.in_dim];
        let orow = &mut out[i * layer.out_dim..(i + 1) * layer.out_dim];
        for (k, &xv) in xrow.iter().enumerate() {
            if xv != 0.0 {
                let wrow = &layer.w[k * layer.out_dim..(k + 1) * layer.out_dim];
                for (o, w) in orow.iter_mut().zip(wrow.iter()) {
                    *o += xv * w;
                }
            }
        }
    }
    if relu {
        for v in out.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
}

fn forward_batch(m: &Mlp, x: Vec<f64>, batch: usize) -> BatchState {
    let mut acts = Vec::with_capacity(m.layers.len());
    let mut cur = &x;
    for (i, layer) in m.layers.iter().enumerate() {
        let mut out = Vec::new();
        affine_forward(cur, batch, layer, i + 1 < m.layers.len(), &mut out);
        acts.push(out);
        cur = acts.last().unwrap();
    }
    BatchState { x, acts, batch }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let chunks = a.len() / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..chunks {
        let j = i * 4;
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
    }
    let mut s = s0 + s1 + s2 + s3;
    for j in chunks * 4..a.len() {
        s += a[j] * b[j];
    }
    s
}

/// Backpropagates `d_out` (batch x 3, gradient of the loss w.r.t. the
/// network output) through the recorded activations, accumulating into
/// `grads`.
fn backward_batch(m: &Mlp, state: &BatchState, d_out: &[f64], grads: &mut Gradients) {
    let batch = state.batch;
    let mut delta = d_out.to_vec();
    for li in (0..m.layers.len()).rev() {
        let layer = &m.layers[li];
        let input: &[f64] = if li == 0 {
            &state.x
        } else {
            &state.acts[li - 1]
        };
        // bias gradient: column sums of delta
        {
            let db = &mut grads.d_b[li];
            for i in 0..batch {
                let drow = &delta[i * layer.out_dim..(i + 1) * layer.out_dim];
                for (g, d) in db.iter_mut().zip(drow.iter()) {
                    *g += d;
                }
            }
        }
        // weight gradient: input^T . delta
        {
            let dw = &mut grads.d_w[li];
            for i in 0..batch {
                let xrow = &input[i * layer.in_dim..(i + 1) * layer.in_dim];
                let drow = &delta[i * layer.out_dim..(i + 1) * layer.out_dim];
                for (k, &xv) in xrow.iter().enumerate() {
                    if xv != 0.0 {
                        let grow = &mut dw[k * layer.out_dim..(k + 1) * layer.out_dim];
                        for (g, d) in grow.iter_mut().zip(drow.iter()) {
                            *g += xv * d;
                        }
                    }
                }
            }
        }
        if li == 0 {
            break;
        }
        // propagate: d_in[i,k] = delta[i,:] . w[k,:], gated by the rectifier
        let mut d_in = vec![0.0; batch * layer.in_dim];
        for i in 0..batch {
            let drow = &delta[i * layer.out_dim..(i + 1) * layer.out_dim];
            let arow = &state.acts[li - 1][i * layer.in_dim..(i + 1) * layer.in_dim];
            let irow = &mut d_in[i * layer.in_dim..(i + 1) * layer.in_dim];
            for k in 0..layer.in_dim {
                if arow[k] > 0.0 {
                    irow[k] = dot(drow, &layer.w[k * layer.out_dim..(k + 1) * layer.out_dim]);
                }
            }
        }
        delta = d_in;
    }
}

/// Loss and output-gradient of one batch; rows of `d_out` are scaled by
/// `1 / batch` so accumulated gradients are means.
fn batch_loss_and_dout(
    m: &Mlp,
    state: &BatchState,
    samples: &[Sample],
    indices: &[usize],
) -> (f64, Vec<f64>) {
    let batch = state.batch;
    let y = state.acts.last().unwrap();
    let mut d_out = vec![0.0; batch * OUTPUT_DIM];
    let mut loss_sum = 0.0;
    let inv = 1.0 / batch as f64;
    for (row, &si) in indices.iter().enumerate() {
        let s = &samples[si];
        let base = row * OUTPUT_DIM;
        let mut pred = [y[base], y[base + 1], y[base + 2]];
        if m.target_mode == TargetMode::Residual {
            pred[0] += s.t_prime[0];
            pred[1] += s.t_prime[1];
            pred[2] += s.t_prime[2];
        }
        let (loss, grad) = vdl(
            &Translation::new(pred[0], pred[1], pred[2]),
            &s.target_translation(),
            &s.dims3d(),
            s.alpha_g,
        );
        loss_sum += loss;
        d_out[base] = grad.x * inv;
        d_out[base + 1] = grad.y * inv;
        d_out[base + 2] = grad.z * inv;
    }
    (loss_sum, d_out)
}

/// Gradients of the volume displacement loss at one sample with respect to
/// every parameter, via backpropagation through the explicit forward pass.
/// Returns the loss alongside the gradients.
pub fn backward(
    m: &Mlp,
    f: &FeatureVector,
    target: &Translation,
    dims: &Dims3D,
    alpha_g: f64,
) -> Result<(f64, Gradients), ShiftNetError> {
    let x = m.standardized(f)?;
    let state = forward_batch(m, x, 1);
    let y = state.acts.last().unwrap();
    let mut pred = [y[0], y[1], y[2]];
    if m.target_mode == TargetMode::Residual {
        pred[0] += f.raw[0];
        pred[1] += f.raw[1];
        pred[2] += f.raw[2];
    }
    let (loss, grad) = vdl(
        &Translation::new(pred[0], pred[1], pred[2]),
        target,
        dims,
        alpha_g,
    );
    let mut grads = Gradients::zeros_like(m);
    backward_batch(m, &state, &[grad.x, grad.y, grad.z], &mut grads);
    Ok((loss, grads))
}

/// Training phase: fresh pre-training on clean data or fine-tuning on noisy
/// estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Finetune,
}

/// Training hyper-parameters. `noise` carries the augmentation spec used by
/// dataset synthesis; the optimizer itself does not consume it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    /// Step the learning rate down by 10x at 1/2 and 3/4 of the epoch count.
    pub lr_decay: bool,
    pub seed: u64,
    pub target_mode: TargetMode,
    pub noise: crate::kitti::PerturbSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 64,
            pretrain_epochs: 200,
            finetune_epochs: 100,
            lr_decay: true,
            seed: 0,
            target_mode: TargetMode::Direct,
            noise: crate::kitti::PerturbSpec::default(),
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), ShiftNetError> {
        if !(self.learning_rate > 0.0) {
            return Err(ShiftNetError::BadConfig("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(ShiftNetError::BadConfig("momentum must be in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(ShiftNetError::BadConfig("batch size must be positive"));
        }
        Ok(())
    }
}

/// Trained model plus the per-epoch mean loss trace.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: Mlp,
    pub epoch_loss: Vec<f64>,
}

/// Mean volume displacement loss of a model over a sample set.
pub fn mean_vdl(m: &Mlp, samples: &[Sample]) -> Result<f64, ShiftNetError> {
    if samples.is_empty() {
        return Err(ShiftNetError::EmptyDataset);
    }
    let mut sum = 0.0;
    for s in samples {
        let pred = m.forward(&s.features())?;
        sum += vdl(&pred, &s.target_translation(), &s.dims3d(), s.alpha_g).0;
    }
    Ok(sum / samples.len() as f64)
}

/// Trains under the volume displacement loss with SGD plus momentum.
///
/// Without `base`, a fresh network is initialized from `cfg.seed` and the
/// scaler is fitted on `samples`; with `base`, training continues on the
/// given model and its scaler is kept so features are standardized exactly
/// as before. The epoch count comes from the phase. Runs are bit-identical
/// for a fixed seed.
pub fn train(
    samples: &[Sample],
    cfg: &TrainConfig,
    phase: Phase,
    base: Option<Mlp>,
) -> Result<TrainReport, ShiftNetError> {
    if samples.is_empty() {
        return Err(ShiftNetError::EmptyDataset);
    }
    cfg.validate()?;
    let mut model = match base {
        Some(m) => {
            if m.scaler.is_none() {
                return Err(ShiftNetError::UnfittedScaler);
            }
            m
        }
        None => {
            let mut m = Mlp::new(cfg.seed);
            m.target_mode = cfg.target_mode;
            m.scaler = Some(Scaler::fit(samples));
            m
        }
    };
    let epochs = match phase {
        Phase::Pretrain => cfg.pretrain_epochs,
        Phase::Finetune => cfg.finetune_epochs,
    };
    let phase_tag = match phase {
        Phase::Pretrain => "pretrain",
        Phase::Finetune => "finetune",
    };

    // standardize the whole split once
    let dim = model.input_dim();
    let scaler = model.scaler.clone().expect("scaler fitted above");
    let mut features = vec![0.0; samples.len() * dim];
    for (i, s) in samples.iter().enumerate() {
        scaler.apply(&s.features().raw[..dim], &mut features[i * dim..(i + 1) * dim]);
    }

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x53_48_4E_45 ^ (phase_tag.len() as u64));
    let mut velocity = Gradients::zeros_like(&model);
    let mut indices: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_loss = Vec::with_capacity(epochs);

    for epoch in 0..epochs {
        let lr = if cfg.lr_decay {
            let frac = epoch as f64 / epochs.max(1) as f64;
            if frac >= 0.75 {
                cfg.learning_rate * 0.01
            } else if frac >= 0.5 {
                cfg.learning_rate * 0.1
            } else {
                cfg.learning_rate
            }
        } else {
            cfg.learning_rate
        };
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in indices.chunks(cfg.batch_size) {
            let batch = chunk.len();
            let mut x = vec![0.0; batch * dim];
            for (row, &si) in chunk.iter().enumerate() {
                x[row * dim..(row + 1) * dim].copy_from_slice(&features[si * dim..(si + 1) * dim]);
            }
            let state = forward_batch(&model, x, batch);
            let (loss, d_out) = batch_loss_and_dout(&model, &state, samples, chunk);
            loss_sum += loss;
            let mut grads = Gradients::zeros_like(&model);
            backward_batch(&model, &state, &d_out, &mut grads);
            // momentum update: v = mu v - lr g; w += v
            velocity.scale(cfg.momentum);
            for li in 0..model.layers.len() {
                for (v, g) in velocity.d_w[li].iter_mut().zip(grads.d_w[li].iter()) {
                    *v -= lr * g;
                }
                for (v, g) in velocity.d_b[li].iter_mut().zip(grads.d_b[li].iter()) {
                    *v -= lr * g;
                }
                for (w, v) in model.layers[li].w.iter_mut().zip(velocity.d_w[li].iter()) {
                    *w += v;
                }
                for (b, v) in model.layers[li].b.iter_mut().zip(velocity.d_b[li].iter()) {
                    *b += v;
                }
            }
        }
        let mean = loss_sum / samples.len() as f64;
        epoch_loss.push(mean);
        log::info!("{phase_tag} epoch {}/{}: mean vdl {:.6}", epoch + 1, epochs, mean);
    }

    Ok(TrainReport { model, epoch_loss })
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes a model to the versioned little-endian container.
pub fn save_model(m: &Mlp, path: &Path) -> Result<(), ShiftNetError> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    put_u32(&mut out, MODEL_VERSION);
    out.push(match m.target_mode {
        TargetMode::Direct => 0,
        TargetMode::Residual => 1,
    });
    match &m.scaler {
        None => out.push(0),
        Some(s) => {
            out.push(1);
            put_u32(&mut out, s.mean.len() as u32);
            put_f64s(&mut out, &s.mean);
            put_f64s(&mut out, &s.scale);
        }
    }
    put_u32(&mut out, m.layers.len() as u32);
    for layer in &m.layers {
        put_u32(&mut out, layer.in_dim as u32);
        put_u32(&mut out, layer.out_dim as u32);
        put_f64s(&mut out, &layer.w);
        put_f64s(&mut out, &layer.b);
    }
    crate::kitti::write_atomic(path, &out)?;
    Ok(())
}

struct ModelReader<R: Read> {
    inner: R,
}

impl<R: Read> ModelReader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>, ShiftNetError> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| {
            if e.kind() == ErrorKind::UnexpectedEof {
                ShiftNetError::FormatVersionMismatch("truncated file".into())
            } else {
                ShiftNetError::Io(e)
            }
        })?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32, ShiftNetError> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u8(&mut self) -> Result<u8, ShiftNetError> {
        Ok(self.bytes(1)?[0])
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ShiftNetError> {
        let b = self.bytes(n * 8)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect())
    }
}

/// Loads a model saved by [`save_model`]. The round trip is bit-exact on
/// parameters and scaler.
pub fn load_model(path: &Path) -> Result<Mlp, ShiftNetError> {
    let file = fs::File::open(path)?;
    let mut r = ModelReader {
        inner: std::io::BufReader::new(file),
    };
    let magic = r.bytes(MODEL_MAGIC.len())?;
    if magic != MODEL_MAGIC {
        return Err(ShiftNetError::FormatVersionMismatch("bad magic".into()));
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(ShiftNetError::FormatVersionMismatch(format!(
            "unsupported version {version}"
        )));
    }
    let target_mode = match r.u8()? {
        0 => TargetMode::Direct,
        1 => TargetMode::Residual,
        other => {
            return Err(ShiftNetError::FormatVersionMismatch(format!(
                "unknown target mode {other}"
            )))
        }
    };
    let scaler = match r.u8()? {
        0 => None,
        1 => {
            let n = r.u32()? as usize;
            if n > 1_000_000 {
                return Err(ShiftNetError::FormatVersionMismatch(
                    "implausible scaler size".into(),
                ));
            }
            let mean = r.f64s(n)?;
            let scale = r.f64s(n)?;
            Some(Scaler { mean, scale })
        }
        other => {
            return Err(ShiftNetError::FormatVersionMismatch(format!(
                "unknown scaler flag {other}"
            )))
        }
    };
    let n_layers = r.u32()? as usize;
    if n_layers != 3 {
        return Err(ShiftNetError::FormatVersionMismatch(format!(
            "expected 3 layers, found {n_layers}"
        )));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        if in_dim == 0 || out_dim == 0 || in_dim.saturating_mul(out_dim) > 64_000_000 {
            return Err(ShiftNetError::FormatVersionMismatch(
                "implausible layer shape".into(),
            ));
        }
        let w = r.f64s(in_dim * out_dim)?;
        let b = r.f64s(out_dim)?;
        layers.push(Layer {
            in_dim,
            out_dim,
            w,
            b,
        });
    }
    let mut trailing = [0u8; 1];
    match r.inner.read(&mut trailing)? {
        0 => {}
        _ => {
            return Err(ShiftNetError::FormatVersionMismatch(
                "trailing data after model".into(),
            ))
        }
    }
    Ok(Mlp::from_parts(layers, scaler, target_mode))
}

/// Writes samples as newline-delimited JSON, atomically.
pub fn write_samples(samples: &[Sample], path: &Path) -> Result<(), ShiftNetError> {
    let mut out = Vec::new();
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.push(b'\n');
    }
    crate::kitti::write_atomic(path, &out)?;
    Ok(())
}

/// Reads a newline-delimited JSON sample dataset.
pub fn read_samples(path: &Path) -> Result<Vec<Sample>, ShiftNetError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(ShiftNetError::from))
        .collect()
}
