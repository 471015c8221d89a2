//! Local client model: a small dense classifier trained with Adam.
//!
//! The model is a multilayer perceptron with tanh hidden layers and a
//! softmax output, stored as one flat parameter vector so that server-side
//! averaging is a single vector operation. The local objective is mean
//! cross-entropy plus an optional proximal penalty
//! `mu * 0.5 * ||w - w_global||^2` that anchors local weights to the global
//! model received at round start.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

/// Flat vector of model weights; the unit of exchange between clients and
/// the server.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
}

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality, distinguishing NaN payloads and signed zeros.
    pub fn bits_eq(&self, other: &Self) -> bool {
        self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Layer sizes of the classifier. A fresh experiment derives the parameter
/// layout (and therefore [`ParameterVector`] length) from this.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
}

impl Default for MlpArchitecture {
    fn default() -> Self {
        Self {
            input_dim: 16,
            hidden_dims: vec![32],
            num_classes: 2,
        }
    }
}

impl MlpArchitecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::validation("model.input_dim", "must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::validation("model.num_classes", "must be at least 2"));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::validation("model.hidden_dims", "must be positive"));
        }
        Ok(())
    }

    /// `(in, out)` pairs, one per dense layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.num_classes));
        dims
    }

    /// Total number of weights and biases in the flat layout.
    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|(i, o)| i * o + o)
            .sum()
    }
}

/// One training sample: a feature vector and its class index.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Adam optimizer state and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            lr,
            beta1,
            beta2,
            epsilon,
        }
    }
}

/// Optimizer and batching settings for a local training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingOptions {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    /// When set, the learning rate decays linearly from `learning_rate` to
    /// this value over the epochs of one training run.
    pub final_learning_rate: Option<f64>,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            final_learning_rate: None,
        }
    }
}

impl TrainingOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::validation("training.learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("training.batch_size", "must be positive"));
        }
        for (key, v) in [("training.beta1", self.beta1), ("training.beta2", self.beta2)] {
            if !(v.is_finite() && (0.0..1.0).contains(&v)) {
                return Err(Error::validation(key, "must lie in [0, 1)"));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::validation("training.epsilon", "must be positive"));
        }
        Ok(())
    }

    fn lr_at_epoch(&self, epoch: usize, total_epochs: usize) -> f64 {
        match self.final_learning_rate {
            Some(lr_f) if total_epochs > 1 => {
                let t = epoch as f64 / (total_epochs - 1) as f64;
                self.learning_rate + (lr_f - self.learning_rate) * t
            }
            _ => self.learning_rate,
        }
    }
}

fn check_dims(params: &ParameterVector, arch: &MlpArchitecture) -> Result<()> {
    let expected = arch.param_count();
    if params.len() != expected {
        return Err(Error::Config(format!(
            "parameter vector has length {}, architecture requires {}",
            params.len(),
            expected
        )));
    }
    Ok(())
}

/// Activations of every layer for one input, kept for backpropagation.
/// `activations[0]` is the input itself; the last entry holds the logits.
struct ForwardTrace {
    activations: Vec<Vec<f64>>,
}

fn forward_trace(
    params: &[f64],
    arch: &MlpArchitecture,
    features: &[f64],
) -> ForwardTrace {
    let dims = arch.layer_dims();
    let num_layers = dims.len();
    let mut activations = Vec::with_capacity(num_layers + 1);
    activations.push(features.to_vec());

    let mut offset = 0;
    for (layer, &(n_in, n_out)) in dims.iter().enumerate() {
        let weights = &params[offset..offset + n_in * n_out];
        let biases = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
        offset += n_in * n_out + n_out;

        let input = activations.last().unwrap();
        let mut out = Vec::with_capacity(n_out);
        for o in 0..n_out {
            let row = &weights[o * n_in..(o + 1) * n_in];
            let mut z = biases[o];
            for (w, x) in row.iter().zip(input) {
                z += w * x;
            }
            // hidden layers use tanh; the last layer stays linear (logits)
            out.push(if layer + 1 < num_layers { z.tanh() } else { z });
        }
        activations.push(out);
    }
    ForwardTrace { activations }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Class-probability vector for one input.
pub fn forward(
    params: &ParameterVector,
    arch: &MlpArchitecture,
    features: &[f64],
) -> Result<Vec<f64>> {
    arch.validate()?;
    check_dims(params, arch)?;
    if features.len() != arch.input_dim {
        return Err(Error::Config(format!(
            "feature vector has length {}, architecture expects {}",
            features.len(),
            arch.input_dim
        )));
    }
    let trace = forward_trace(params.values(), arch, features);
    Ok(softmax(trace.activations.last().unwrap()))
}

fn validate_batch(arch: &MlpArchitecture, data: &[LabeledSample], idx: &[usize]) -> Result<()> {
    for &i in idx {
        let s = &data[i];
        if s.features.len() != arch.input_dim {
            return Err(Error::Config(format!(
                "sample feature length {} does not match input_dim {}",
                s.features.len(),
                arch.input_dim
            )));
        }
        if s.label >= arch.num_classes {
            return Err(Error::InvalidInput(format!(
                "sample label {} out of range for {} classes",
                s.label, arch.num_classes
            )));
        }
    }
    Ok(())
}

/// Mean cross-entropy over the index subset of `data`, plus the proximal
/// penalty when `mu > 0`, together with the analytic gradient.
fn loss_and_gradient_indexed(
    params: &ParameterVector,
    arch: &MlpArchitecture,
    data: &[LabeledSample],
    idx: &[usize],
    global_params: Option<&ParameterVector>,
    mu: f64,
) -> Result<(f64, ParameterVector)> {
    if idx.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(Error::Config(format!("mu must be non-negative, got {mu}")));
    }
    check_dims(params, arch)?;
    validate_batch(arch, data, idx)?;

    let anchor = if mu > 0.0 {
        let g = global_params.ok_or_else(|| {
            Error::Config("proximal mu > 0 requires the global parameter anchor".into())
        })?;
        if g.len() != params.len() {
            return Err(Error::Config(format!(
                "anchor length {} does not match parameter length {}",
                g.len(),
                params.len()
            )));
        }
        Some(g)
    } else {
        None
    };

    let dims = arch.layer_dims();
    let num_layers = dims.len();
    let p = params.values();
    let mut grad = vec![0.0; p.len()];
    let mut loss_sum = 0.0;

    // layer offsets into the flat layout
    let mut offsets = Vec::with_capacity(num_layers);
    {
        let mut off = 0;
        for &(n_in, n_out) in &dims {
            offsets.push(off);
            off += n_in * n_out + n_out;
        }
    }

    for &si in idx {
        let sample = &data[si];
        let trace = forward_trace(p, arch, &sample.features);
        let logits = trace.activations.last().unwrap();
        loss_sum += log_sum_exp(logits) - logits[sample.label];

        // delta at the output layer: softmax(z) - onehot(label)
        let mut delta = softmax(logits);
        delta[sample.label] -= 1.0;

        for layer in (0..num_layers).rev() {
            let (n_in, n_out) = dims[layer];
            let off = offsets[layer];
            let input = &trace.activations[layer];

            for o in 0..n_out {
                let d = delta[o];
                let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
                grad[off + n_in * n_out + o] += d;
            }

            if layer > 0 {
                // propagate through the tanh of the previous layer
                let weights = &p[off..off + n_in * n_out];
                let mut prev_delta = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    for (pd, w) in prev_delta.iter_mut().zip(row) {
                        *pd += d * w;
                    }
                }
                for (pd, a) in prev_delta.iter_mut().zip(input) {
                    *pd *= 1.0 - a * a;
                }
                delta = prev_delta;
            }
        }
    }

    let n = idx.len() as f64;
    let mut loss = loss_sum / n;
    for g in &mut grad {
        *g /= n;
    }

    if let Some(anchor) = anchor {
        let mut sq_dist = 0.0;
        for ((g, w), a) in grad.iter_mut().zip(p).zip(anchor.values()) {
            let d = w - a;
            sq_dist += d * d;
            *g += mu * d;
        }
        loss += mu * 0.5 * sq_dist;
    }

    Ok((loss, ParameterVector::new(grad)))
}

/// Loss and analytic gradient of the local objective on a batch.
///
/// With `mu = 0` this is plain mean cross-entropy; with `mu > 0` the
/// proximal penalty `mu * 0.5 * ||w - w_global||^2` is added, so the extra
/// gradient term is exactly `mu * (w - w_global)`.
pub fn loss_and_gradient(
    params: &ParameterVector,
    arch: &MlpArchitecture,
    batch: &[LabeledSample],
    global_params: Option<&ParameterVector>,
    mu: f64,
) -> Result<(f64, ParameterVector)> {
    let idx: Vec<usize> = (0..batch.len()).collect();
    loss_and_gradient_indexed(params, arch, batch, &idx, global_params, mu)
}

/// One Adam update with bias correction. Returns the new parameters and the
/// advanced optimizer state; inputs are left untouched.
pub fn adam_step(
    params: &ParameterVector,
    gradient: &ParameterVector,
    state: &AdamState,
) -> Result<(ParameterVector, AdamState)> {
    let len = params.len();
    if gradient.len() != len || state.first_moment.len() != len {
        return Err(Error::Config(format!(
            "adam_step length mismatch: params {}, gradient {}, state {}",
            len,
            gradient.len(),
            state.first_moment.len()
        )));
    }
    if !gradient.all_finite() {
        return Err(Error::Numerical("non-finite gradient".into()));
    }

    let mut next = state.clone();
    next.step_count += 1;
    let t = next.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);

    let mut out = params.values().to_vec();
    let moments = next.first_moment.iter_mut().zip(next.second_moment.iter_mut());
    for ((o, &g), (m, v)) in out.iter_mut().zip(gradient.values()).zip(moments) {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        *o -= state.lr * (*m / bc1) / ((*v / bc2).sqrt() + state.epsilon);
    }

    let out = ParameterVector::new(out);
    if !out.all_finite() {
        return Err(Error::Numerical("non-finite parameters after update".into()));
    }
    Ok((out, next))
}

/// One pass over `data` in a fresh shuffled order, updating `params` in
/// place batch by batch. Returns summed batch losses and the step count.
fn train_epoch(
    params: &mut ParameterVector,
    arch: &MlpArchitecture,
    data: &[LabeledSample],
    prox: Option<(&ParameterVector, f64)>,
    opts: &TrainingOptions,
    state: &mut AdamState,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, usize)> {
    let (anchor, mu) = match prox {
        Some((a, m)) => (Some(a), m),
        None => (None, 0.0),
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);

    let mut loss_sum = 0.0;
    let mut steps = 0;
    for batch in order.chunks(opts.batch_size) {
        let (loss, grad) = loss_and_gradient_indexed(params, arch, data, batch, anchor, mu)?;
        let (next, next_state) = adam_step(params, &grad, state)?;
        *params = next;
        *state = next_state;
        loss_sum += loss;
        steps += 1;
    }
    Ok((loss_sum, steps))
}

/// Local training outcome: trained parameters plus the mean per-batch loss
/// observed along the run (NaN when no step was taken).
pub struct LocalFit {
    pub params: ParameterVector,
    pub mean_loss: f64,
}

/// Train a local model for `epochs` passes starting from the global
/// parameters, which also serve as the proximal anchor for the whole run.
///
/// Deterministic in all arguments; the inputs are not mutated. `epochs = 0`
/// returns the global parameters unchanged.
pub fn train_local(
    global_params: &ParameterVector,
    arch: &MlpArchitecture,
    dataset: &[LabeledSample],
    epochs: usize,
    mu: f64,
    seed: u64,
    opts: &TrainingOptions,
) -> Result<ParameterVector> {
    Ok(train_local_fit(global_params, arch, dataset, epochs, mu, seed, opts)?.params)
}

/// [`train_local`] variant that also reports the mean training loss.
pub fn train_local_fit(
    global_params: &ParameterVector,
    arch: &MlpArchitecture,
    dataset: &[LabeledSample],
    epochs: usize,
    mu: f64,
    seed: u64,
    opts: &TrainingOptions,
) -> Result<LocalFit> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("local dataset is empty".into()));
    }
    arch.validate()?;
    opts.validate()?;
    check_dims(global_params, arch)?;

    let mut params = global_params.clone();
    let prox = if mu > 0.0 { Some((global_params, mu)) } else { None };
    let mut state = AdamState::new(
        params.len(),
        opts.learning_rate,
        opts.beta1,
        opts.beta2,
        opts.epsilon,
    );
    let mut rng = seeding::rng_for(seed, &[seeding::stream::CLIENT_TRAIN]);

    let mut loss_sum = 0.0;
    let mut steps = 0;
    for epoch in 0..epochs {
        state.lr = opts.lr_at_epoch(epoch, epochs);
        let (l, s) = train_epoch(&mut params, arch, dataset, prox, opts, &mut state, &mut rng)?;
        loss_sum += l;
        steps += s;
    }

    let mean_loss = if steps > 0 {
        loss_sum / steps as f64
    } else {
        f64::NAN
    };
    Ok(LocalFit { params, mean_loss })
}

/// Continuous multi-epoch trainer used by the pooled-data baseline: one
/// optimizer state and shuffle stream persist across the whole run so that
/// checkpoints split it without restarting Adam.
pub struct ContinuousTrainer<'a> {
    arch: &'a MlpArchitecture,
    data: &'a [LabeledSample],
    opts: &'a TrainingOptions,
    params: ParameterVector,
    state: AdamState,
    rng: ChaCha8Rng,
    epochs_done: usize,
    total_epochs: usize,
}

impl<'a> ContinuousTrainer<'a> {
    pub fn new(
        initial: ParameterVector,
        arch: &'a MlpArchitecture,
        data: &'a [LabeledSample],
        total_epochs: usize,
        seed: u64,
        opts: &'a TrainingOptions,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidInput("training dataset is empty".into()));
        }
        arch.validate()?;
        opts.validate()?;
        check_dims(&initial, arch)?;
        let state = AdamState::new(
            initial.len(),
            opts.learning_rate,
            opts.beta1,
            opts.beta2,
            opts.epsilon,
        );
        Ok(Self {
            arch,
            data,
            opts,
            params: initial,
            state,
            rng: seeding::rng_for(seed, &[seeding::stream::CENTRAL_TRAIN]),
            epochs_done: 0,
            total_epochs,
        })
    }

    /// Advance by `epochs` passes; returns the mean per-batch loss of the
    /// segment (NaN when empty).
    pub fn run_epochs(&mut self, epochs: usize) -> Result<f64> {
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for _ in 0..epochs {
            self.state.lr = self.opts.lr_at_epoch(self.epochs_done, self.total_epochs);
            let (l, s) = train_epoch(
                &mut self.params,
                self.arch,
                self.data,
                None,
                self.opts,
                &mut self.state,
                &mut self.rng,
            )?;
            self.epochs_done += 1;
            loss_sum += l;
            steps += s;
        }
        Ok(if steps > 0 { loss_sum / steps as f64 } else { f64::NAN })
    }

    pub fn params(&self) -> &ParameterVector {
        &self.params
    }
}

/// Fresh model parameters drawn from a seeded Gaussian.
pub fn init_params(arch: &MlpArchitecture, seed: u64, std: f64) -> ParameterVector {
    let mut rng = seeding::rng_for(seed, &[seeding::stream::INIT]);
    let values = (0..arch.param_count())
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    ParameterVector::new(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    fn small_arch() -> MlpArchitecture {
        MlpArchitecture {
            input_dim: 3,
            hidden_dims: vec![4],
            num_classes: 2,
        }
    }

    fn random_params(arch: &MlpArchitecture, seed: u64) -> ParameterVector {
        init_params(arch, seed, 0.5)
    }

    fn random_batch(arch: &MlpArchitecture, n: usize, seed: u64) -> Vec<LabeledSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| LabeledSample {
                features: (0..arch.input_dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect(),
                label: rng.random_range(0..arch.num_classes),
            })
            .collect()
    }

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        for n_classes in [2usize, 3, 5] {
            let arch = MlpArchitecture {
                input_dim: 4,
                hidden_dims: vec![3],
                num_classes: n_classes,
            };
            let params = ParameterVector::zeros(arch.param_count());
            let probs = forward(&params, &arch, &[0.3, -0.7, 1.1, 0.0]).unwrap();
            for p in probs {
                assert!((p - 1.0 / n_classes as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn probabilities_form_a_distribution() {
        let arch = small_arch();
        for seed in 0..20 {
            let params = random_params(&arch, seed);
            let probs = forward(&params, &arch, &[0.5, -1.0, 2.0]).unwrap();
            assert_eq!(probs.len(), arch.num_classes);
            assert!(probs.iter().all(|&p| p >= 0.0));
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    /// Straight-line re-implementation of the forward pass reading the flat
    /// layout directly: W1 (4x3) rows, b1 (4), W2 (2x4) rows, b2 (2).
    fn reference_forward_1_hidden(params: &[f64], x: &[f64; 3]) -> Vec<f64> {
        let w1 = &params[0..12];
        let b1 = &params[12..16];
        let w2 = &params[16..24];
        let b2 = &params[24..26];

        let mut h = [0.0f64; 4];
        for o in 0..4 {
            let z = b1[o] + w1[3 * o] * x[0] + w1[3 * o + 1] * x[1] + w1[3 * o + 2] * x[2];
            h[o] = z.tanh();
        }
        let mut logits = [0.0f64; 2];
        for o in 0..2 {
            logits[o] = b2[o]
                + w2[4 * o] * h[0]
                + w2[4 * o + 1] * h[1]
                + w2[4 * o + 2] * h[2]
                + w2[4 * o + 3] * h[3];
        }
        let m = logits[0].max(logits[1]);
        let e0 = (logits[0] - m).exp();
        let e1 = (logits[1] - m).exp();
        vec![e0 / (e0 + e1), e1 / (e0 + e1)]
    }

    #[test]
    fn forward_matches_reference_implementation() {
        let arch = small_arch();
        let params = random_params(&arch, 42);
        let x = [0.25, -1.5, 0.75];
        let got = forward(&params, &arch, &x).unwrap();
        let want = reference_forward_1_hidden(params.values(), &x);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "got {g}, want {w}");
        }
    }

    #[test]
    fn dimension_mismatch_is_a_configuration_error() {
        let arch = small_arch();
        let params = ParameterVector::zeros(arch.param_count() + 1);
        assert!(matches!(
            forward(&params, &arch, &[0.0; 3]),
            Err(Error::Config(_))
        ));
        let params = ParameterVector::zeros(arch.param_count());
        assert!(matches!(
            forward(&params, &arch, &[0.0; 2]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn mu_zero_is_plain_cross_entropy() {
        let arch = small_arch();
        let params = random_params(&arch, 7);
        let anchor = random_params(&arch, 8);
        let batch = random_batch(&arch, 6, 9);

        let (plain, grad_plain) = loss_and_gradient(&params, &arch, &batch, None, 0.0).unwrap();
        let (with_anchor, grad_anchor) =
            loss_and_gradient(&params, &arch, &batch, Some(&anchor), 0.0).unwrap();
        assert_eq!(plain.to_bits(), with_anchor.to_bits());
        assert!(grad_plain.bits_eq(&grad_anchor));
    }

    #[test]
    fn zero_distance_anchor_contributes_nothing() {
        let arch = small_arch();
        let params = random_params(&arch, 5);
        let batch = random_batch(&arch, 4, 6);

        let (l0, g0) = loss_and_gradient(&params, &arch, &batch, None, 0.0).unwrap();
        let (l1, g1) = loss_and_gradient(&params, &arch, &batch, Some(&params), 0.01).unwrap();
        assert_eq!(l0, l1);
        for (a, b) in g0.values().iter().zip(g1.values()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn loss_is_strictly_increasing_in_mu() {
        let arch = small_arch();
        let params = random_params(&arch, 11);
        let anchor = random_params(&arch, 12);
        let batch = random_batch(&arch, 4, 13);

        let mut prev = f64::NEG_INFINITY;
        for mu in [0.0, 0.001, 0.01, 0.1, 1.0] {
            let (loss, _) = loss_and_gradient(&params, &arch, &batch, Some(&anchor), mu).unwrap();
            assert!(loss > prev, "loss not increasing at mu={mu}");
            prev = loss;
        }
    }

    #[test]
    fn empty_batch_and_missing_anchor_are_rejected() {
        let arch = small_arch();
        let params = random_params(&arch, 1);
        assert!(matches!(
            loss_and_gradient(&params, &arch, &[], None, 0.0),
            Err(Error::InvalidInput(_))
        ));
        let batch = random_batch(&arch, 2, 2);
        assert!(matches!(
            loss_and_gradient(&params, &arch, &batch, None, 0.01),
            Err(Error::Config(_))
        ));
    }

    /// Central finite differences of the loss, the independent oracle for
    /// the analytic gradient.
    fn numerical_gradient(
        params: &ParameterVector,
        arch: &MlpArchitecture,
        batch: &[LabeledSample],
        anchor: Option<&ParameterVector>,
        mu: f64,
        h: f64,
    ) -> Vec<f64> {
        let mut grad = Vec::with_capacity(params.len());
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus.values_mut()[i] += h;
            let mut minus = params.clone();
            minus.values_mut()[i] -= h;
            let (lp, _) = loss_and_gradient(&plus, arch, batch, anchor, mu).unwrap();
            let (lm, _) = loss_and_gradient(&minus, arch, batch, anchor, mu).unwrap();
            grad.push((lp - lm) / (2.0 * h));
        }
        grad
    }

    fn assert_gradient_close(analytic: &[f64], numeric: &[f64]) {
        for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
            // relative error with an absolute floor so near-zero components
            // are judged against 1e-8 instead of dividing by ~0
            let denom = (a.abs() + n.abs()).max(1e-4);
            let rel = (a - n).abs() / denom;
            assert!(rel <= 1e-4, "component {i}: analytic {a}, numeric {n}, rel {rel}");
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let arch = small_arch();
        for seed in 0..5 {
            let params = random_params(&arch, 100 + seed);
            let anchor = random_params(&arch, 200 + seed);
            let batch = random_batch(&arch, 5, 300 + seed);
            for (mu, anchor_opt) in [(0.0, None), (0.01, Some(&anchor))] {
                let (_, analytic) =
                    loss_and_gradient(&params, &arch, &batch, anchor_opt, mu).unwrap();
                let numeric = numerical_gradient(&params, &arch, &batch, anchor_opt, mu, 1e-5);
                assert_gradient_close(analytic.values(), &numeric);
            }
        }
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let params = ParameterVector::new(vec![1.0, -2.0, 0.5]);
        let grad = ParameterVector::zeros(3);
        let state = AdamState::new(3, 0.01, 0.9, 0.999, 1e-8);
        let (next, next_state) = adam_step(&params, &grad, &state).unwrap();
        assert!(next.bits_eq(&params));
        assert_eq!(next_state.step_count, 1);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let params = ParameterVector::new(vec![0.3, -0.7, 2.0, -4.0]);
        let grad = ParameterVector::new(vec![0.5, -0.25, 1e-3, -2.0]);
        let state = AdamState::new(4, 0.01, 0.9, 0.999, 1e-8);
        let (next, _) = adam_step(&params, &grad, &state).unwrap();
        for i in 0..4 {
            let g = grad.values()[i];
            // closed-form first step: lr * g / (|g| + eps)
            let expected = params.values()[i] - 0.01 * g / (g.abs() + 1e-8);
            assert!((next.values()[i] - expected).abs() < 1e-15);
            let step = next.values()[i] - params.values()[i];
            assert_eq!(step.signum(), -g.signum());
            assert!((step.abs() - 0.01).abs() < 1e-5);
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // f(w) = w^2 from w = 1, lr = 0.01
        let mut w = ParameterVector::new(vec![1.0]);
        let mut state = AdamState::new(1, 0.01, 0.9, 0.999, 1e-8);
        for _ in 0..100 {
            let grad = ParameterVector::new(vec![2.0 * w.values()[0]]);
            let (next, next_state) = adam_step(&w, &grad, &state).unwrap();
            w = next;
            state = next_state;
        }
        assert!(w.values()[0].abs() < 1.0);
        assert_eq!(state.step_count, 100);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let params = ParameterVector::zeros(2);
        let grad = ParameterVector::new(vec![f64::NAN, 0.0]);
        let state = AdamState::new(2, 0.01, 0.9, 0.999, 1e-8);
        assert!(matches!(
            adam_step(&params, &grad, &state),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let arch = small_arch();
        let global = random_params(&arch, 21);
        let data = random_batch(&arch, 10, 22);
        let out = train_local(&global, &arch, &data, 0, 0.0, 1, &TrainingOptions::default())
            .unwrap();
        assert!(out.bits_eq(&global));
    }

    #[test]
    fn train_local_is_deterministic() {
        let arch = small_arch();
        let global = random_params(&arch, 31);
        let data = random_batch(&arch, 20, 32);
        let opts = TrainingOptions {
            batch_size: 8,
            ..TrainingOptions::default()
        };
        let a = train_local(&global, &arch, &data, 3, 0.01, 77, &opts).unwrap();
        let b = train_local(&global, &arch, &data, 3, 0.01, 77, &opts).unwrap();
        assert!(a.bits_eq(&b));
        let c = train_local(&global, &arch, &data, 3, 0.01, 78, &opts).unwrap();
        assert!(!a.bits_eq(&c));
    }

    #[test]
    fn train_local_does_not_mutate_inputs() {
        let arch = small_arch();
        let global = random_params(&arch, 41);
        let snapshot = global.clone();
        let data = random_batch(&arch, 12, 42);
        let _ = train_local(&global, &arch, &data, 2, 0.01, 5, &TrainingOptions::default())
            .unwrap();
        assert!(global.bits_eq(&snapshot));
    }

    #[test]
    fn training_separates_two_blobs() {
        let arch = MlpArchitecture {
            input_dim: 2,
            hidden_dims: vec![8],
            num_classes: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut data = Vec::new();
        for label in 0..2usize {
            let center = if label == 0 { -2.0 } else { 2.0 };
            for _ in 0..60 {
                data.push(LabeledSample {
                    features: vec![
                        center + 0.5 * rng.sample::<f64, _>(StandardNormal),
                        center + 0.5 * rng.sample::<f64, _>(StandardNormal),
                    ],
                    label,
                });
            }
        }
        let global = init_params(&arch, 1, 0.1);
        let trained =
            train_local(&global, &arch, &data, 10, 0.0, 3, &TrainingOptions::default()).unwrap();

        let correct = data
            .iter()
            .filter(|s| {
                let probs = forward(&trained, &arch, &s.features).unwrap();
                let pred = probs
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0;
                pred == s.label
            })
            .count();
        assert!(correct as f64 / data.len() as f64 > 0.95);
    }
}
