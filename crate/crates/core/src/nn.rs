//! From-scratch feedforward network mapping UE positions to DL powers.
//!
//! Dense layers with ELU activations feed a K-unit layer whose outputs are
//! the (normalized) per-UE powers; a final frozen linear head with weights
//! `[I_K; 1...1]` appends their sum, so the network exposes K+1 outputs and
//! the sum coordinate of the loss explicitly penalizes total-power error.
//! Only the dense layers are trainable, which is what the reported
//! trainable-parameter counts refer to. Training is mini-batch Adam on a
//! relative-MSE loss with exact reverse-mode gradients.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::io::{Read, Write};

use crate::{Error, Result};

/// Per-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Elu,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z >= 0.0 {
                    z
                } else {
                    z.exp() - 1.0
                }
            }
            Activation::Linear => z,
        }
    }

    /// Derivative as a function of the pre-activation.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z >= 0.0 {
                    1.0
                } else {
                    z.exp()
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// One dense layer `a = act(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in` weight matrix.
    pub weights: DMatrix<f64>,
    pub biases: DVector<f64>,
    pub activation: Activation,
    /// Frozen layers propagate gradients but never update.
    pub trainable: bool,
}

/// Per-feature affine map `normalized = (x - shift) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Normalizer {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Pure scaling by `scale` (shift 0) for every feature.
    pub fn scaling(dim: usize, scale: f64) -> Self {
        Normalizer {
            shift: vec![0.0; dim],
            scale: vec![scale; dim],
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (sh, sc))| (v - sh) / sc)
            .collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (sh, sc))| v * sc + sh)
            .collect()
    }
}

/// The multilayer perceptron plus its input/target normalizers and free-form
/// metadata (strategy/precoder tags, dataset identity).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    pub input_norm: Normalizer,
    pub target_norm: Normalizer,
    /// `key = value` lines carried through the model file.
    pub metadata: String,
}

impl MlpModel {
    /// Build a net from explicit sizes/activations/trainability; He-style
    /// uniform init in [-sqrt(6/fan_in), sqrt(6/fan_in)], biases zero.
    pub fn from_spec(
        sizes: &[usize],
        activations: &[Activation],
        trainable: &[bool],
        seed: u64,
    ) -> Result<Self> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 || trainable.len() != sizes.len() - 1
        {
            return Err(Error::Shape(
                "need n+1 sizes and n activation/trainable tags".into(),
            ));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for i in 1..sizes.len() {
            let (fan_in, fan_out) = (sizes[i - 1], sizes[i]);
            let limit = (6.0 / fan_in as f64).sqrt();
            let weights =
                DMatrix::from_fn(fan_out, fan_in, |_, _| (rng.gen::<f64>() * 2.0 - 1.0) * limit);
            layers.push(Layer {
                weights,
                biases: DVector::zeros(fan_out),
                activation: activations[i - 1],
                trainable: trainable[i - 1],
            });
        }
        Ok(MlpModel {
            layers,
            input_norm: Normalizer::identity(sizes[0]),
            target_norm: Normalizer::identity(*sizes.last().unwrap()),
            metadata: String::new(),
        })
    }

    /// Position-to-power net for one cell: input 2KL, ELU hidden stack, a
    /// K-unit ELU power layer, and the frozen linear head appending the sum.
    pub fn for_cell(l: usize, k: usize, hidden: &[usize], seed: u64) -> Self {
        let mut sizes = vec![2 * l * k];
        sizes.extend_from_slice(hidden);
        sizes.push(k);
        sizes.push(k + 1);
        let n = sizes.len() - 1;
        let mut activations = vec![Activation::Elu; n];
        activations[n - 1] = Activation::Linear;
        let mut trainable = vec![true; n];
        trainable[n - 1] = false;
        let mut model = Self::from_spec(&sizes, &activations, &trainable, seed)
            .expect("preset sizes are consistent");
        // Frozen head: identity over the K powers plus a sum row.
        let mut w = DMatrix::zeros(k + 1, k);
        for d in 0..k {
            w[(d, d)] = 1.0;
            w[(k, d)] = 1.0;
        }
        let head = model.layers.last_mut().unwrap();
        head.weights = w;
        head.biases = DVector::zeros(k + 1);
        model
    }

    /// The compact architecture (6,373 trainable parameters for L=4, K=5).
    pub fn compact(l: usize, k: usize, seed: u64) -> Self {
        Self::for_cell(l, k, &[64, 32, 32, 16], seed)
    }

    /// The wide architecture (202,373 trainable parameters for L=4, K=5).
    pub fn wide(l: usize, k: usize, seed: u64) -> Self {
        Self::for_cell(l, k, &[512, 256, 128, 128], seed)
    }

    /// `[input, layer1, ..., output]` sizes.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut v = vec![self.layers[0].weights.ncols()];
        v.extend(self.layers.iter().map(|l| l.weights.nrows()));
        v
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.nrows()
    }

    /// Sum over trainable layers of `(n_in + 1) * n_out`.
    pub fn trainable_params(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.trainable)
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// All parameters including frozen layers.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Real multiplications per inference: sum of `n_in * n_out`.
    pub fn multiply_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }
}

// ── Forward and backward passes ──

/// Batched forward pass; `x` is `d_in x batch`, one sample per column.
pub fn forward_batch(model: &MlpModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != model.input_dim() {
        return Err(Error::Shape(format!(
            "input dim {} does not match model input {}",
            x.nrows(),
            model.input_dim()
        )));
    }
    let mut a = x.clone();
    for layer in &model.layers {
        let mut z = &layer.weights * a;
        for c in 0..z.ncols() {
            z.column_mut(c).iter_mut().zip(layer.biases.iter()).for_each(|(v, b)| *v += b);
        }
        z.apply(|v| *v = layer.activation.apply(*v));
        a = z;
    }
    Ok(a)
}

/// Single-sample forward pass.
pub fn forward(model: &MlpModel, x: &[f64]) -> Result<Vec<f64>> {
    let col = DMatrix::from_column_slice(x.len(), 1, x);
    Ok(forward_batch(model, &col)?.column(0).iter().cloned().collect())
}

/// Relative MSE `(1/D) sum ((p - t)/(|t| + 1e-8))^2` with its gradient in
/// the prediction.
pub fn loss_relative_mse(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    debug_assert_eq!(pred.len(), target.len());
    const EPS: f64 = 1e-8;
    let d = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for i in 0..pred.len() {
        let denom = target[i].abs() + EPS;
        let r = (pred[i] - target[i]) / denom;
        loss += r * r / d;
        grad[i] = 2.0 * r / (denom * d);
    }
    (loss, grad)
}

/// Per-layer parameter gradients (zero matrices for frozen layers).
pub type Gradients = Vec<(DMatrix<f64>, DVector<f64>)>;

/// Mean relative-MSE loss over the batch and exact gradients for every
/// trainable parameter via reverse accumulation.
pub fn backward(
    model: &MlpModel,
    x: &DMatrix<f64>,
    target: &DMatrix<f64>,
) -> Result<(f64, Gradients)> {
    if x.ncols() != target.ncols() {
        return Err(Error::Shape("batch sizes differ".into()));
    }
    let batch = x.ncols();
    if batch == 0 {
        return Err(Error::Shape("empty batch".into()));
    }

    // Forward with caches: activations a_0..a_n, pre-activations z_1..z_n.
    let mut acts: Vec<DMatrix<f64>> = vec![x.clone()];
    let mut pres: Vec<DMatrix<f64>> = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let mut z = &layer.weights * acts.last().unwrap();
        for c in 0..z.ncols() {
            z.column_mut(c).iter_mut().zip(layer.biases.iter()).for_each(|(v, b)| *v += b);
        }
        let mut a = z.clone();
        a.apply(|v| *v = layer.activation.apply(*v));
        pres.push(z);
        acts.push(a);
    }

    // Loss and its gradient in the network output, averaged over the batch.
    let out = acts.last().unwrap();
    let mut loss = 0.0;
    let mut delta = DMatrix::zeros(out.nrows(), batch);
    const EPS: f64 = 1e-8;
    let d_out = out.nrows() as f64;
    let scale = 1.0 / batch as f64;
    for c in 0..batch {
        for r in 0..out.nrows() {
            let denom = target[(r, c)].abs() + EPS;
            let res = (out[(r, c)] - target[(r, c)]) / denom;
            loss += res * res / d_out * scale;
            delta[(r, c)] = 2.0 * res / (denom * d_out) * scale;
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numeric("loss diverged to a non-finite value".into()));
    }

    // Reverse pass.
    let mut grads: Gradients = model
        .layers
        .iter()
        .map(|l| {
            (
                DMatrix::zeros(l.weights.nrows(), l.weights.ncols()),
                DVector::zeros(l.biases.len()),
            )
        })
        .collect();
    for idx in (0..model.layers.len()).rev() {
        let layer = &model.layers[idx];
        // delta currently holds dL/da_idx; convert to dL/dz_idx.
        let z = &pres[idx];
        for c in 0..batch {
            for r in 0..delta.nrows() {
                delta[(r, c)] *= layer.activation.derivative(z[(r, c)]);
            }
        }
        if layer.trainable {
            grads[idx].0 = &delta * acts[idx].transpose();
            grads[idx].1 = DVector::from_fn(delta.nrows(), |r, _| delta.row(r).sum());
        }
        if idx > 0 {
            delta = layer.weights.transpose() * delta;
        }
    }
    Ok((loss, grads))
}

// ── Adam optimizer ──

/// First/second-moment accumulators per layer, plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub t: u64,
    m: Gradients,
    v: Gradients,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        let zeros: Gradients = model
            .layers
            .iter()
            .map(|l| {
                (
                    DMatrix::zeros(l.weights.nrows(), l.weights.ncols()),
                    DVector::zeros(l.biases.len()),
                )
            })
            .collect();
        AdamState {
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Fraction of samples held out for validation; train fraction is the
    /// complement so the split always sums to 1.
    pub val_fraction: f64,
    /// Early-stop patience in epochs without validation improvement.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 200,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            val_fraction: 0.1,
            patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Override fields from `key = value` text; unknown keys are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        use crate::geometry::{parse_kv_lines, parse_num};
        for (key, value) in parse_kv_lines(text)? {
            match key.as_str() {
                "learning_rate" => self.learning_rate = parse_num(&key, &value)?,
                "batch_size" => self.batch_size = parse_num(&key, &value)?,
                "epochs" => self.epochs = parse_num(&key, &value)?,
                "beta1" => self.beta1 = parse_num(&key, &value)?,
                "beta2" => self.beta2 = parse_num(&key, &value)?,
                "adam_eps" => self.eps = parse_num(&key, &value)?,
                "val_fraction" => self.val_fraction = parse_num(&key, &value)?,
                "patience" => self.patience = parse_num(&key, &value)?,
                "train_seed" => self.seed = parse_num(&key, &value)?,
                _ => {}
            }
        }
        if !(self.val_fraction >= 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config("val_fraction must be in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One Adam update with bias correction; frozen layers are untouched.
pub fn adam_step(
    model: &mut MlpModel,
    state: &mut AdamState,
    grads: &Gradients,
    cfg: &TrainConfig,
) {
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for (idx, layer) in model.layers.iter_mut().enumerate() {
        if !layer.trainable {
            continue;
        }
        let (gw, gb) = &grads[idx];
        let (mw, mb) = &mut state.m[idx];
        let (vw, vb) = &mut state.v[idx];
        for (p, g, m, v) in [
            (
                layer.weights.as_mut_slice(),
                gw.as_slice(),
                mw.as_mut_slice(),
                vw.as_mut_slice(),
            ),
            (
                layer.biases.as_mut_slice(),
                gb.as_slice(),
                mb.as_mut_slice(),
                vb.as_mut_slice(),
            ),
        ] {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
    }
}

// ── Training loop ──

/// A normalized supervised set for one cell: one sample per column, targets
/// `[rho_1 .. rho_K, sum]`, tagged with the strategy/precoder that labeled it.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: DMatrix<f64>,
    pub targets: DMatrix<f64>,
    pub cell: usize,
    pub strategy: crate::power::Strategy,
    pub precoder: crate::precoding::Precoder,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Check that the final target row equals the sum of the power rows to
    /// within 1e-9 in pre-normalization units (`denorm_scale` mW per unit).
    pub fn check_sum_consistency(&self, denorm_scale: f64) -> Result<()> {
        let k = self.targets.nrows() - 1;
        for c in 0..self.targets.ncols() {
            let sum: f64 = (0..k).map(|r| self.targets[(r, c)]).sum();
            let dev = (self.targets[(k, c)] - sum).abs() * denorm_scale;
            if dev > 1e-9 {
                return Err(Error::Format(format!(
                    "sample {c}: target sum column off by {dev:.3e} mW"
                )));
            }
        }
        Ok(())
    }
}

/// Per-epoch training and validation losses.
pub type History = Vec<(f64, f64)>;

/// Mini-batch Adam training with a seeded shuffle each epoch, validation on
/// a held-out fraction, and best-validation-weights restoration.
pub fn train(model: &mut MlpModel, data: &Dataset, cfg: &TrainConfig) -> Result<History> {
    let n = data.len();
    if n == 0 {
        return Err(Error::Shape("training set is empty".into()));
    }
    if data.inputs.nrows() != model.input_dim() || data.targets.nrows() != model.output_dim() {
        return Err(Error::Shape("training set does not match model dims".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let val_n = ((n as f64 * cfg.val_fraction).round() as usize).min(n - 1);
    let (val_idx, train_idx) = order.split_at(val_n);
    let val_idx = val_idx.to_vec();
    let mut train_idx = train_idx.to_vec();

    let gather = |idx: &[usize]| -> (DMatrix<f64>, DMatrix<f64>) {
        let xs = DMatrix::from_fn(data.inputs.nrows(), idx.len(), |r, c| {
            data.inputs[(r, idx[c])]
        });
        let ts = DMatrix::from_fn(data.targets.nrows(), idx.len(), |r, c| {
            data.targets[(r, idx[c])]
        });
        (xs, ts)
    };

    let eval_loss = |model: &MlpModel, idx: &[usize]| -> Result<f64> {
        if idx.is_empty() {
            return Ok(f64::NAN);
        }
        let mut total = 0.0;
        for chunk in idx.chunks(512) {
            let (xs, ts) = gather(chunk);
            let out = forward_batch(model, &xs)?;
            for c in 0..chunk.len() {
                let pred: Vec<f64> = out.column(c).iter().cloned().collect();
                let tgt: Vec<f64> = ts.column(c).iter().cloned().collect();
                total += loss_relative_mse(&pred, &tgt).0;
            }
        }
        Ok(total / idx.len() as f64)
    };

    let mut state = AdamState::new(model);
    let mut history = History::new();
    let mut best_val = f64::INFINITY;
    let mut best_weights: Option<Vec<Layer>> = None;
    let mut since_best = 0usize;

    for _ in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in train_idx.chunks(cfg.batch_size) {
            let (xs, ts) = gather(chunk);
            let (loss, grads) = backward(model, &xs, &ts)?;
            adam_step(model, &mut state, &grads, cfg);
            epoch_loss += loss;
            batches += 1;
        }
        let train_loss = epoch_loss / batches.max(1) as f64;
        let val_loss = eval_loss(model, &val_idx)?;
        history.push((train_loss, val_loss));
        if !train_loss.is_finite() {
            return Err(Error::Numeric("training diverged".into()));
        }

        let monitored = if val_idx.is_empty() { train_loss } else { val_loss };
        if monitored < best_val {
            best_val = monitored;
            best_weights = Some(model.layers.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    if let Some(w) = best_weights {
        model.layers = w;
    }
    Ok(history)
}

/// Map raw UE positions (m) to a budget-feasible K-vector of powers (mW):
/// denormalize the K+1 outputs, clamp negatives, and if the K powers exceed
/// `min(predicted_sum, p_max)`, rescale them to that cap.
pub fn predict_powers(model: &MlpModel, positions: &[f64], p_max: f64) -> Result<Vec<f64>> {
    let x = model.input_norm.normalize(positions);
    let raw = forward(model, &x)?;
    let out = model.target_norm.denormalize(&raw);
    let k = out.len() - 1;
    let mut powers: Vec<f64> = out[..k].iter().map(|&p| p.max(0.0)).collect();
    let predicted_sum = out[k].max(0.0);
    let cap = predicted_sum.min(p_max);
    let raw_sum: f64 = powers.iter().sum();
    if raw_sum > cap {
        let factor = if raw_sum > 0.0 { cap / raw_sum } else { 0.0 };
        for p in &mut powers {
            *p *= factor;
        }
    }
    Ok(powers)
}

// ── Model file I/O ──

const MODEL_MAGIC: &[u8; 8] = b"DLPMLP1\n";

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64_slice<W: Write>(w: &mut W, v: &[f64]) -> Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64_vec<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

/// Serialize a model: magic, layer sizes, per-layer tags, normalizers,
/// metadata, then row-major weights and biases. Bit-exact round-trip.
pub fn save_model<W: Write>(model: &MlpModel, w: &mut W) -> Result<()> {
    w.write_all(MODEL_MAGIC)?;
    let sizes = model.layer_sizes();
    write_u64(w, sizes.len() as u64)?;
    for s in &sizes {
        write_u64(w, *s as u64)?;
    }
    for layer in &model.layers {
        let act = match layer.activation {
            Activation::Elu => 0u8,
            Activation::Linear => 1u8,
        };
        w.write_all(&[act, layer.trainable as u8])?;
    }
    write_f64_slice(w, &model.input_norm.shift)?;
    write_f64_slice(w, &model.input_norm.scale)?;
    write_f64_slice(w, &model.target_norm.shift)?;
    write_f64_slice(w, &model.target_norm.scale)?;
    let meta = model.metadata.as_bytes();
    write_u64(w, meta.len() as u64)?;
    w.write_all(meta)?;
    for layer in &model.layers {
        // Row-major element order.
        for r in 0..layer.weights.nrows() {
            for c in 0..layer.weights.ncols() {
                w.write_all(&layer.weights[(r, c)].to_le_bytes())?;
            }
        }
        write_f64_slice(w, layer.biases.as_slice())?;
    }
    Ok(())
}

/// Inverse of [`save_model`].
pub fn load_model<R: Read>(r: &mut R) -> Result<MlpModel> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let n_sizes = read_u64(r)? as usize;
    if !(2..=1_000).contains(&n_sizes) {
        return Err(Error::Format("implausible layer count".into()));
    }
    let mut sizes = Vec::with_capacity(n_sizes);
    for _ in 0..n_sizes {
        sizes.push(read_u64(r)? as usize);
    }
    let n_layers = n_sizes - 1;
    let mut tags = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let mut buf = [0u8; 2];
        r.read_exact(&mut buf)?;
        let act = match buf[0] {
            0 => Activation::Elu,
            1 => Activation::Linear,
            other => return Err(Error::Format(format!("unknown activation tag {other}"))),
        };
        tags.push((act, buf[1] != 0));
    }
    let d_in = sizes[0];
    let d_out = sizes[n_sizes - 1];
    let input_norm = Normalizer {
        shift: read_f64_vec(r, d_in)?,
        scale: read_f64_vec(r, d_in)?,
    };
    let target_norm = Normalizer {
        shift: read_f64_vec(r, d_out)?,
        scale: read_f64_vec(r, d_out)?,
    };
    let meta_len = read_u64(r)? as usize;
    if meta_len > 16 * 1024 * 1024 {
        return Err(Error::Format("implausible metadata size".into()));
    }
    let mut meta = vec![0u8; meta_len];
    r.read_exact(&mut meta)?;
    let metadata =
        String::from_utf8(meta).map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
    let mut layers = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let (rows, cols) = (sizes[i + 1], sizes[i]);
        let flat = read_f64_vec(r, rows * cols)?;
        let weights = DMatrix::from_fn(rows, cols, |rr, cc| flat[rr * cols + cc]);
        let biases = DVector::from_vec(read_f64_vec(r, rows)?);
        layers.push(Layer {
            weights,
            biases,
            activation: tags[i].0,
            trainable: tags[i].1,
        });
    }
    Ok(MlpModel {
        layers,
        input_norm,
        target_norm,
        metadata,
    })
}

/// Save to a file path.
pub fn save_model_file(model: &MlpModel, path: &std::path::Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    save_model(model, &mut f)?;
    f.flush()?;
    Ok(())
}

/// Load from a file path.
pub fn load_model_file(path: &std::path::Path) -> Result<MlpModel> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    load_model(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_net(seed: u64) -> MlpModel {
        MlpModel::from_spec(
            &[4, 3, 2],
            &[Activation::Elu, Activation::Linear],
            &[true, true],
            seed,
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut model = toy_net(0);
        for layer in &mut model.layers {
            layer.weights.fill(0.0);
            layer.biases.fill(0.0);
        }
        let out = forward(&model, &[1.0, -2.0, 3.0, 4.0]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut model = MlpModel::from_spec(&[3, 3], &[Activation::Linear], &[true], 0).unwrap();
        model.layers[0].weights = DMatrix::identity(3, 3);
        model.layers[0].biases.fill(0.0);
        let x = [0.5, -1.5, 2.0];
        assert_eq!(forward(&model, &x).unwrap(), x.to_vec());
    }

    #[test]
    fn preset_parameter_counts() {
        let compact = MlpModel::compact(4, 5, 1);
        assert_eq!(compact.layer_sizes(), vec![40, 64, 32, 32, 16, 5, 6]);
        assert_eq!(compact.trainable_params(), 6_373);
        assert_eq!(compact.param_count(), 6_373 + 36);
        assert_eq!(compact.multiply_count(), 6_254);

        let wide = MlpModel::wide(4, 5, 1);
        assert_eq!(wide.trainable_params(), 202_373);
        assert_eq!(wide.output_dim(), 6);
    }

    #[test]
    fn frozen_head_appends_exact_sum() {
        let model = MlpModel::compact(4, 5, 3);
        let x: Vec<f64> = (0..40).map(|i| (i as f64) / 40.0).collect();
        let out = forward(&model, &x).unwrap();
        let sum: f64 = out[..5].iter().sum();
        assert!((out[5] - sum).abs() < 1e-12);
    }

    #[test]
    fn loss_examples() {
        let (zero, grad) = loss_relative_mse(&[1.0, 2.0], &[1.0, 2.0]);
        assert_eq!(zero, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));

        let (one, _) = loss_relative_mse(&[2.0, 2.0], &[1.0, 1.0]);
        assert!((one - 1.0).abs() < 1e-6);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let pred = [0.3, -0.7, 1.9];
        let target = [0.5, -0.5, 2.0];
        let (_, grad) = loss_relative_mse(&pred, &target);
        for d in 0..3 {
            let h = 1e-7;
            let mut p = pred;
            p[d] += h;
            let up = loss_relative_mse(&p, &target).0;
            p[d] -= 2.0 * h;
            let dn = loss_relative_mse(&p, &target).0;
            let fd = (up - dn) / (2.0 * h);
            assert!((grad[d] - fd).abs() / fd.abs().max(1e-8) < 1e-6);
        }
    }

    // The load-bearing property: every weight and bias gradient on a small
    // net agrees with central finite differences.
    #[test]
    fn backprop_matches_finite_differences() {
        let model = toy_net(7);
        let x = DMatrix::from_column_slice(4, 2, &[0.1, -0.4, 0.9, 0.3, -0.6, 0.2, 0.05, -1.1]);
        let t = DMatrix::from_column_slice(2, 2, &[0.5, -0.3, 0.8, 0.2]);
        let (_, grads) = backward(&model, &x, &t).unwrap();
        let h = 1e-6;
        for (li, grad) in grads.iter().enumerate() {
            for idx in 0..model.layers[li].weights.len() {
                let mut up = model.clone();
                up.layers[li].weights.as_mut_slice()[idx] += h;
                let mut dn = model.clone();
                dn.layers[li].weights.as_mut_slice()[idx] -= h;
                let fd = (backward(&up, &x, &t).unwrap().0 - backward(&dn, &x, &t).unwrap().0)
                    / (2.0 * h);
                let an = grad.0.as_slice()[idx];
                let rel = (an - fd).abs() / fd.abs().max(1e-8);
                assert!(rel < 1e-5, "layer {li} weight {idx}: {an} vs {fd}");
            }
            for idx in 0..model.layers[li].biases.len() {
                let mut up = model.clone();
                up.layers[li].biases[idx] += h;
                let mut dn = model.clone();
                dn.layers[li].biases[idx] -= h;
                let fd = (backward(&up, &x, &t).unwrap().0 - backward(&dn, &x, &t).unwrap().0)
                    / (2.0 * h);
                let an = grad.1[idx];
                let rel = (an - fd).abs() / fd.abs().max(1e-8);
                assert!(rel < 1e-5, "layer {li} bias {idx}: {an} vs {fd}");
            }
        }
    }

    #[test]
    fn batch_gradient_is_mean_of_sample_gradients() {
        let model = toy_net(9);
        let x = DMatrix::from_column_slice(4, 2, &[0.1, 0.2, 0.3, 0.4, -0.5, 0.6, -0.7, 0.8]);
        let t = DMatrix::from_column_slice(2, 2, &[1.0, -1.0, 0.5, 0.25]);
        let (_, batch_grads) = backward(&model, &x, &t).unwrap();
        let (_, g0) = backward(&model, &x.columns(0, 1).into(), &t.columns(0, 1).into()).unwrap();
        let (_, g1) = backward(&model, &x.columns(1, 1).into(), &t.columns(1, 1).into()).unwrap();
        for li in 0..2 {
            let mean = (&g0[li].0 + &g1[li].0) * 0.5;
            assert!((&batch_grads[li].0 - mean).abs().max() < 1e-12);
        }
    }

    #[test]
    fn zero_loss_point_has_zero_gradient() {
        let mut model = MlpModel::from_spec(&[2, 2], &[Activation::Linear], &[true], 0).unwrap();
        model.layers[0].weights = DMatrix::identity(2, 2);
        model.layers[0].biases.fill(0.0);
        let x = DMatrix::from_column_slice(2, 1, &[0.7, -0.2]);
        let (loss, grads) = backward(&model, &x, &x).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads[0].0.iter().all(|&g| g == 0.0));
        assert!(grads[0].1.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut model = toy_net(3);
        let before = model.clone();
        let mut state = AdamState::new(&model);
        let grads: Gradients = model
            .layers
            .iter()
            .map(|l| {
                (
                    DMatrix::zeros(l.weights.nrows(), l.weights.ncols()),
                    DVector::zeros(l.biases.len()),
                )
            })
            .collect();
        adam_step(&mut model, &mut state, &grads, &TrainConfig::default());
        assert_eq!(model.layers, before.layers);
    }

    #[test]
    fn adam_first_step_has_learning_rate_magnitude() {
        let mut model = MlpModel::from_spec(&[1, 1], &[Activation::Linear], &[true], 0).unwrap();
        model.layers[0].weights[(0, 0)] = 1.0;
        let mut state = AdamState::new(&model);
        let grads = vec![(
            DMatrix::from_element(1, 1, 0.37),
            DVector::from_element(1, 0.0),
        )];
        let cfg = TrainConfig::default();
        adam_step(&mut model, &mut state, &grads, &cfg);
        // At t=1 the bias-corrected update is lr * g / (|g| + eps') ~ lr.
        let delta = 1.0 - model.layers[0].weights[(0, 0)];
        assert!((delta - cfg.learning_rate).abs() < 1e-6);
    }

    fn memorization_set(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let inputs = DMatrix::from_fn(40, n, |_, _| rng.gen::<f64>());
        let targets = DMatrix::from_fn(6, n, |r, c| {
            // Deterministic but sample-dependent positive targets.
            let base = 0.2 + 0.6 * ((c * 7 + r * 3) % 10) as f64 / 10.0;
            if r < 5 {
                base
            } else {
                (0..5)
                    .map(|rr| 0.2 + 0.6 * ((c * 7 + rr * 3) % 10) as f64 / 10.0)
                    .sum()
            }
        });
        Dataset {
            inputs,
            targets,
            cell: 0,
            strategy: crate::power::Strategy::MaxProd,
            precoder: crate::precoding::Precoder::Mmse,
        }
    }

    #[test]
    fn sum_consistency_check() {
        let good = memorization_set(6, 1);
        good.check_sum_consistency(1000.0).unwrap();
        let mut bad = good.clone();
        bad.targets[(5, 2)] += 1e-6;
        assert!(bad.check_sum_consistency(1000.0).is_err());
    }

    #[test]
    fn overfits_ten_samples() {
        let mut model = MlpModel::compact(4, 5, 11);
        let data = memorization_set(10, 12);
        let cfg = TrainConfig {
            epochs: 2000,
            patience: usize::MAX,
            val_fraction: 0.0,
            seed: 13,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &data, &cfg).unwrap();
        let final_loss = history.last().unwrap().0;
        assert!(
            final_loss < 1e-3,
            "memorization failed: final loss {final_loss}"
        );
    }

    #[test]
    fn history_has_one_entry_per_epoch() {
        let mut model = MlpModel::compact(4, 5, 1);
        let data = memorization_set(20, 2);
        let cfg = TrainConfig {
            epochs: 5,
            patience: usize::MAX,
            seed: 3,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &data, &cfg).unwrap();
        assert_eq!(history.len(), 5);
        // validation loss is computed on the held-out split
        assert!(history.iter().all(|(_, v)| v.is_finite()));
    }

    #[test]
    fn training_is_deterministic() {
        let data = memorization_set(30, 4);
        let cfg = TrainConfig {
            epochs: 3,
            seed: 9,
            ..TrainConfig::default()
        };
        let mut a = MlpModel::compact(4, 5, 21);
        let mut b = MlpModel::compact(4, 5, 21);
        train(&mut a, &data, &cfg).unwrap();
        train(&mut b, &data, &cfg).unwrap();
        assert_eq!(a.layers, b.layers);
    }

    #[test]
    fn normalizer_round_trip() {
        let norm = Normalizer {
            shift: vec![1.0, -2.0, 0.5],
            scale: vec![250.0, 0.3, 7.0],
        };
        let x = [3.3, -1.7, 42.0];
        let back = norm.denormalize(&norm.normalize(&x));
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn predict_respects_budget_projection() {
        let k = 5;
        let mut model = MlpModel::compact(4, k, 2);
        let p_max = 1000.0;
        model.target_norm = Normalizer::scaling(k + 1, p_max);
        // Zero all trainable layers and pin the K-unit layer biases so the
        // network emits a chosen normalized power vector.
        for layer in &mut model.layers {
            if layer.trainable {
                layer.weights.fill(0.0);
                layer.biases.fill(0.0);
            }
        }
        let k_layer = model.layers.len() - 2;
        let positions = vec![100.0; 40];

        // consistent outputs well under budget pass through unchanged
        for (i, b) in model.layers[k_layer].biases.iter_mut().enumerate() {
            *b = 0.02 * (i + 1) as f64; // 20, 40, ..., 100 mW
        }
        let powers = predict_powers(&model, &positions, p_max).unwrap();
        for (i, p) in powers.iter().enumerate() {
            assert!((p - 20.0 * (i + 1) as f64).abs() < 1e-9);
        }

        // raw powers summing to 2 * p_max get rescaled to exactly p_max
        for b in model.layers[k_layer].biases.iter_mut() {
            *b = 0.4; // 400 mW each, sum 2000
        }
        let powers = predict_powers(&model, &positions, p_max).unwrap();
        let total: f64 = powers.iter().sum();
        assert!((total - p_max).abs() < 1e-9 * p_max);

        // any random model stays feasible
        for seed in 0..5 {
            let mut m = MlpModel::compact(4, k, 100 + seed);
            m.target_norm = Normalizer::scaling(k + 1, p_max);
            let p = predict_powers(&m, &positions, p_max).unwrap();
            assert!(p.iter().all(|&v| v >= 0.0));
            assert!(p.iter().sum::<f64>() <= p_max * (1.0 + 1e-9));
        }
    }

    #[test]
    fn model_file_round_trip() {
        let mut model = MlpModel::compact(4, 5, 33);
        model.input_norm = Normalizer::scaling(40, 500.0);
        model.target_norm = Normalizer::scaling(6, 1000.0);
        model.metadata = "cell = 2\nstrategy = maxprod\nprecoder = mmse\n".to_string();
        let mut buf = Vec::new();
        save_model(&model, &mut buf).unwrap();
        let loaded = load_model(&mut buf.as_slice()).unwrap();
        assert_eq!(model, loaded);
        // inference agrees bit-for-bit
        let x: Vec<f64> = (0..40).map(|i| i as f64 * 3.7).collect();
        assert_eq!(
            predict_powers(&model, &x, 1000.0).unwrap(),
            predict_powers(&loaded, &x, 1000.0).unwrap()
        );
    }

    #[test]
    fn rejects_wrong_magic() {
        let garbage = b"NOTMODEL".to_vec();
        assert!(matches!(
            load_model(&mut garbage.as_slice()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn seed_permutation_stability() {
        // Final loss should be in the same ballpark across shuffle seeds.
        let data = memorization_set(60, 8);
        let mut losses = Vec::new();
        for seed in [1u64, 2, 3] {
            let mut model = MlpModel::compact(4, 5, 50);
            let cfg = TrainConfig {
                epochs: 60,
                patience: usize::MAX,
                seed,
                ..TrainConfig::default()
            };
            let history = train(&mut model, &data, &cfg).unwrap();
            losses.push(history.last().unwrap().0);
        }
        let max = losses.iter().cloned().fold(0.0f64, f64::max);
        let min = losses.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(
            (max - min) / min < 0.2,
            "shuffle seed changed loss too much: {losses:?}"
        );
    }
}
