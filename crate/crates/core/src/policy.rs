//! Velocity-prediction network: a fully connected net with tanh hidden
//! activations and a linear output layer, trained with plain SGD on the
//! mean squared velocity error. Inputs and targets are z-score normalized
//! with statistics from the training split; losses are reported in
//! normalized units.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::model::{TorsoPose, VelocitySample, World};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Network weights plus the normalization constants baked in at training
/// time.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    /// [input, hidden..., output]; input and output are both 4 here.
    pub layer_sizes: Vec<usize>,
    /// `weights[l]` maps activations of layer l to pre-activations of
    /// layer l+1; shape (layer_sizes[l+1], layer_sizes[l]).
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub input_mean: [f64; 4],
    pub input_scale: [f64; 4],
    pub output_mean: [f64; 4],
    pub output_scale: [f64; 4],
}

impl MlpModel {
    /// Zero-weight network with identity normalization.
    pub fn zeros(hidden: &[usize]) -> Self {
        let mut layer_sizes = Vec::with_capacity(hidden.len() + 2);
        layer_sizes.push(4);
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(4);
        let weights = layer_sizes
            .windows(2)
            .map(|w| DMatrix::zeros(w[1], w[0]))
            .collect();
        let biases = layer_sizes[1..]
            .iter()
            .map(|&s| DVector::zeros(s))
            .collect();
        Self {
            layer_sizes,
            weights,
            biases,
            input_mean: [0.0; 4],
            input_scale: [1.0; 4],
            output_mean: [0.0; 4],
            output_scale: [1.0; 4],
        }
    }

    /// Seeded init: weights uniform in +-1/sqrt(fan_in), biases zero.
    pub fn init(hidden: &[usize], seed: u64) -> Self {
        let mut model = Self::zeros(hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in model.weights.iter_mut() {
            let bound = 1.0 / (w.ncols() as f64).sqrt();
            for v in w.iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        }
        model
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.layer_sizes[0] != 4 {
            return Err(Error::InvalidArgument(
                "layer sizes must start at 4 inputs".into(),
            ));
        }
        if *self.layer_sizes.last().unwrap() != 4 {
            return Err(Error::InvalidArgument("output layer must have 4 units".into()));
        }
        if self.weights.len() != self.layer_sizes.len() - 1
            || self.biases.len() != self.weights.len()
        {
            return Err(Error::DimensionMismatch {
                expected: self.layer_sizes.len() - 1,
                actual: self.weights.len(),
                context: "weight layer count".into(),
            });
        }
        for (l, (w, b)) in self.weights.iter().zip(self.biases.iter()).enumerate() {
            if w.nrows() != self.layer_sizes[l + 1] || w.ncols() != self.layer_sizes[l] {
                return Err(Error::DimensionMismatch {
                    expected: self.layer_sizes[l + 1] * self.layer_sizes[l],
                    actual: w.nrows() * w.ncols(),
                    context: format!("weight matrix {l}"),
                });
            }
            if b.len() != self.layer_sizes[l + 1] {
                return Err(Error::DimensionMismatch {
                    expected: self.layer_sizes[l + 1],
                    actual: b.len(),
                    context: format!("bias vector {l}"),
                });
            }
        }
        if self
            .input_scale
            .iter()
            .chain(self.output_scale.iter())
            .any(|s| !(*s > 0.0))
        {
            return Err(Error::InvalidArgument(
                "normalization scales must be > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    fn normalize_input(&self, input: &[f64; 4]) -> DVector<f64> {
        DVector::from_iterator(
            4,
            (0..4).map(|i| (input[i] - self.input_mean[i]) / self.input_scale[i]),
        )
    }

    fn denormalize_output(&self, out: &DVector<f64>) -> [f64; 4] {
        let mut result = [0.0; 4];
        for i in 0..4 {
            result[i] = out[i] * self.output_scale[i] + self.output_mean[i];
        }
        result
    }
}

/// Parameter-shaped gradients.
#[derive(Clone, Debug)]
pub struct MlpGradients {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

/// Single forward pass, including input normalization and output
/// de-normalization.
pub fn mlp_forward(model: &MlpModel, input: &[f64; 4]) -> Result<[f64; 4]> {
    model.validate()?;
    let mut a = model.normalize_input(input);
    let last = model.weights.len() - 1;
    for (l, (w, b)) in model.weights.iter().zip(model.biases.iter()).enumerate() {
        let mut z = w * a + b;
        if l != last {
            z.apply(|v| *v = v.tanh());
        }
        a = z;
    }
    Ok(model.denormalize_output(&a))
}

/// Batch matrices in normalized space: rows are samples.
fn batch_matrices(model: &MlpModel, batch: &[VelocitySample]) -> (DMatrix<f64>, DMatrix<f64>) {
    let b = batch.len();
    let mut inputs = DMatrix::zeros(b, 4);
    let mut targets = DMatrix::zeros(b, 4);
    for (r, sample) in batch.iter().enumerate() {
        for c in 0..4 {
            inputs[(r, c)] = (sample.input[c] - model.input_mean[c]) / model.input_scale[c];
            targets[(r, c)] = (sample.target[c] - model.output_mean[c]) / model.output_scale[c];
        }
    }
    (inputs, targets)
}

/// Batched forward pass in normalized space; returns all layer activations
/// (activations[0] is the input batch).
fn forward_batch(model: &MlpModel, inputs: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let last = model.weights.len() - 1;
    let mut activations = Vec::with_capacity(model.weights.len() + 1);
    activations.push(inputs.clone());
    for (l, (w, b)) in model.weights.iter().zip(model.biases.iter()).enumerate() {
        let prev = activations.last().unwrap();
        let mut z = prev * w.transpose();
        for mut row in z.row_iter_mut() {
            row += b.transpose();
        }
        if l != last {
            z.apply(|v| *v = v.tanh());
        }
        activations.push(z);
    }
    activations
}

/// Mean squared error over the batch and the 4 output components, in
/// normalized units.
fn batch_mse(predicted: &DMatrix<f64>, targets: &DMatrix<f64>) -> f64 {
    let diff = predicted - targets;
    diff.iter().map(|v| v * v).sum::<f64>() / diff.len() as f64
}

/// Loss and reverse-mode gradients for one batch. The loss is the MSE in
/// normalized space; gradients share the model's parameter shapes.
pub fn loss_and_gradient(
    model: &MlpModel,
    batch: &[VelocitySample],
) -> Result<(f64, MlpGradients)> {
    model.validate()?;
    if batch.is_empty() {
        return Err(Error::InvalidArgument(
            "loss_and_gradient needs a non-empty batch".into(),
        ));
    }
    let (inputs, targets) = batch_matrices(model, batch);
    let activations = forward_batch(model, &inputs);
    let predicted = activations.last().unwrap();
    let mse = batch_mse(predicted, &targets);

    let layers = model.weights.len();
    let mut grad_w = vec![DMatrix::zeros(0, 0); layers];
    let mut grad_b = vec![DVector::zeros(0); layers];

    // d(mse)/d(predicted), batch x 4.
    let scale = 2.0 / (predicted.len() as f64);
    let mut delta = (predicted - &targets) * scale;
    for l in (0..layers).rev() {
        // delta is the gradient w.r.t. layer l+1 pre-activations.
        grad_w[l] = delta.transpose() * &activations[l];
        grad_b[l] = DVector::from_iterator(
            delta.ncols(),
            delta.column_iter().map(|c| c.sum()),
        );
        if l > 0 {
            let mut back = &delta * &model.weights[l];
            // tanh'(z) = 1 - a^2 with a the stored activation.
            back.zip_apply(&activations[l], |v, a| *v *= 1.0 - a * a);
            delta = back;
        }
    }
    Ok((
        mse,
        MlpGradients {
            weights: grad_w,
            biases: grad_b,
        },
    ))
}

/// MSE of the model over a whole dataset, in normalized units.
pub fn evaluate_mse(model: &MlpModel, samples: &[VelocitySample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on no samples".into()));
    }
    let mut total = 0.0;
    let chunk = 4096;
    for block in samples.chunks(chunk) {
        let (inputs, targets) = batch_matrices(model, block);
        let activations = forward_batch(model, &inputs);
        let diff = activations.last().unwrap() - targets;
        total += diff.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(total / (samples.len() * 4) as f64)
}

/// Training schedule.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Per-epoch learning-rate multiplier; 1.0 keeps it constant.
    pub lr_decay: f64,
    pub seed: u64,
    /// Train/validation/test fractions; must sum to 1.
    pub split: [f64; 3],
}

impl Default for TrainConfig {
    /// The full-scale configuration: six tanh hidden layers, batch 1024,
    /// 20 epochs of SGD at an initial learning rate of 0.5.
    fn default() -> Self {
        Self {
            hidden: vec![256, 1024, 1024, 1024, 1024, 256],
            batch_size: 1024,
            epochs: 20,
            learning_rate: 0.5,
            lr_decay: 1.0,
            seed: 0,
            split: [0.8, 0.1, 0.1],
        }
    }
}

impl TrainConfig {
    /// Small configuration for desk-scale runs and CI.
    pub fn desk() -> Self {
        Self {
            hidden: vec![64, 128, 128, 64],
            batch_size: 256,
            epochs: 20,
            learning_rate: 0.5,
            lr_decay: 0.85,
            seed: 0,
            split: [0.8, 0.1, 0.1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        let sum: f64 = self.split.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.split.iter().any(|f| *f < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "split fractions must be non-negative and sum to 1, got {:?}",
                self.split
            )));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::InvalidArgument(
                "learning rate and decay must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Splits a dataset by trajectory id, never by sample, so near-duplicate
/// points from one trajectory cannot leak between splits.
pub fn split_dataset(
    dataset: &Dataset,
    fractions: [f64; 3],
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || fractions.iter().any(|f| *f < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be non-negative and sum to 1, got {fractions:?}"
        )));
    }
    dataset.validate()?;
    let n = dataset.trajectory_count();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 trajectories to split, got {n}"
        )));
    }
    let mut ids: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let mut n_train = (fractions[0] * n as f64).round() as usize;
    let mut n_val = (fractions[1] * n as f64).round() as usize;
    // Keep every nonzero-fraction split non-empty.
    if fractions[1] > 0.0 {
        n_val = n_val.max(1);
    }
    let mut n_test = n.saturating_sub(n_train + n_val);
    if fractions[2] > 0.0 && n_test == 0 {
        n_test = 1;
        n_train = n_train.saturating_sub(1);
    }
    n_train = n - n_val - n_test;

    // split_of[id] in {0, 1, 2}.
    let mut split_of = vec![0u8; n];
    for (rank, &id) in ids.iter().enumerate() {
        split_of[id] = if rank < n_train {
            0
        } else if rank < n_train + n_val {
            1
        } else {
            2
        };
    }

    let mut parts = [
        Dataset {
            metadata: dataset.metadata.clone(),
            ..Default::default()
        },
        Dataset {
            metadata: dataset.metadata.clone(),
            ..Default::default()
        },
        Dataset {
            metadata: dataset.metadata.clone(),
            ..Default::default()
        },
    ];
    // Dense per-split renumbering in original id order.
    let mut new_id = vec![usize::MAX; n];
    let mut counters = [0usize; 3];
    for id in 0..n {
        let s = split_of[id] as usize;
        new_id[id] = counters[s];
        counters[s] += 1;
    }
    for (sample, prov) in dataset.samples.iter().zip(dataset.provenance.iter()) {
        let s = split_of[prov.traj_id] as usize;
        parts[s].samples.push(*sample);
        parts[s].provenance.push(crate::datagen::SampleProvenance {
            traj_id: new_id[prov.traj_id],
            knot: prov.knot,
            time: prov.time,
        });
    }
    let [train, val, test] = parts;
    Ok((train, val, test))
}

/// Per-epoch training record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

/// Trains with plain SGD over shuffled mini-batches and returns the model
/// snapshot with the best validation MSE, plus the per-epoch history.
/// Normalization statistics come from the training split only.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(MlpModel, Vec<EpochStats>)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    let (train_set, val_set, _test) = split_dataset(dataset, config.split, config.seed)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidArgument(
            "train/validation splits must be non-empty".into(),
        ));
    }

    let mut model = MlpModel::init(&config.hidden, config.seed);
    let (input_stats, output_stats) = normalization_stats(&train_set.samples);
    model.input_mean = input_stats.0;
    model.input_scale = input_stats.1;
    model.output_mean = output_stats.0;
    model.output_scale = output_stats.1;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_set.samples.len()).collect();
    let mut best: Option<(f64, MlpModel)> = None;
    let mut history = Vec::with_capacity(config.epochs);
    let mut lr = config.learning_rate;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<VelocitySample> =
                chunk.iter().map(|&i| train_set.samples[i]).collect();
            let (loss, grads) = loss_and_gradient(&model, &batch)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    batch: batch_no,
                });
            }
            for l in 0..model.weights.len() {
                model.weights[l] -= &grads.weights[l] * lr;
                model.biases[l] -= &grads.biases[l] * lr;
            }
        }
        let train_mse = evaluate_mse(&model, &train_set.samples)?;
        let val_mse = evaluate_mse(&model, &val_set.samples)?;
        if !train_mse.is_finite() || !val_mse.is_finite() {
            return Err(Error::TrainingDiverged { epoch, batch: 0 });
        }
        history.push(EpochStats {
            epoch,
            train_mse,
            val_mse,
        });
        if best.as_ref().map_or(true, |(b, _)| val_mse < *b) {
            best = Some((val_mse, model.clone()));
        }
        lr *= config.lr_decay;
    }

    Ok((best.expect("at least one epoch").1, history))
}

fn normalization_stats(samples: &[VelocitySample]) -> (([f64; 4], [f64; 4]), ([f64; 4], [f64; 4])) {
    let n = samples.len().max(1) as f64;
    let mut in_mean = [0.0; 4];
    let mut out_mean = [0.0; 4];
    for s in samples {
        for i in 0..4 {
            in_mean[i] += s.input[i];
            out_mean[i] += s.target[i];
        }
    }
    for i in 0..4 {
        in_mean[i] /= n;
        out_mean[i] /= n;
    }
    let mut in_var = [0.0; 4];
    let mut out_var = [0.0; 4];
    for s in samples {
        for i in 0..4 {
            in_var[i] += (s.input[i] - in_mean[i]).powi(2);
            out_var[i] += (s.target[i] - out_mean[i]).powi(2);
        }
    }
    let mut in_scale = [1.0; 4];
    let mut out_scale = [1.0; 4];
    for i in 0..4 {
        let sd = (in_var[i] / n).sqrt();
        in_scale[i] = if sd > 1e-9 { sd } else { 1.0 };
        let sd = (out_var[i] / n).sqrt();
        out_scale[i] = if sd > 1e-9 { sd } else { 1.0 };
    }
    ((in_mean, in_scale), (out_mean, out_scale))
}

/// Forward pass from a pose, with the result clamped into the world's
/// velocity box.
pub fn predict_velocity(model: &MlpModel, pose: &TorsoPose, world: &World) -> Result<[f64; 4]> {
    let raw = mlp_forward(model, &pose.to_array())?;
    let mut v = [0.0; 4];
    for i in 0..4 {
        v[i] = raw[i].clamp(world.state_lower[4 + i], world.state_upper[4 + i]);
    }
    Ok(v)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    layer_sizes: Vec<usize>,
    /// Row-major, one flat array per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    input_mean: [f64; 4],
    input_scale: [f64; 4],
    output_mean: [f64; 4],
    output_scale: [f64; 4],
}

/// Saves the model as structured text (JSON) with a format version.
pub fn save_model(model: &MlpModel, path: &Path) -> Result<()> {
    model.validate()?;
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        layer_sizes: model.layer_sizes.clone(),
        weights: model
            .weights
            .iter()
            .map(|w| w.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect())
            .collect(),
        biases: model.biases.iter().map(|b| b.iter().copied().collect()).collect(),
        input_mean: model.input_mean,
        input_scale: model.input_scale,
        output_mean: model.output_mean,
        output_scale: model.output_scale,
    };
    let out = std::fs::File::create(path)?;
    let mut w = BufWriter::new(out);
    serde_json::to_writer(&mut w, &file)?;
    w.flush()?;
    Ok(())
}

/// Loads a model saved by [`save_model`], rejecting unknown versions.
pub fn load_model(path: &Path) -> Result<MlpModel> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text)?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::SchemaVersion {
            found: file.format_version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let mut weights = Vec::with_capacity(file.weights.len());
    for (l, flat) in file.weights.iter().enumerate() {
        let rows = file.layer_sizes[l + 1];
        let cols = file.layer_sizes[l];
        if flat.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: flat.len(),
                context: format!("stored weight matrix {l}"),
            });
        }
        weights.push(DMatrix::from_row_slice(rows, cols, flat));
    }
    let biases = file
        .biases
        .iter()
        .map(|b| DVector::from_column_slice(b))
        .collect();
    let model = MlpModel {
        layer_sizes: file.layer_sizes,
        weights,
        biases,
        input_mean: file.input_mean,
        input_scale: file.input_scale,
        output_mean: file.output_mean,
        output_scale: file.output_scale,
    };
    model.validate()?;
    Ok(model)
}

/// Writes the per-epoch history as CSV.
pub fn write_history(history: &[EpochStats], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "epoch,train_mse,val_mse")?;
    for stats in history {
        writeln!(w, "{},{},{}", stats.epoch, stats.train_mse, stats.val_mse)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::SampleProvenance;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn sample(input: [f64; 4], target: [f64; 4]) -> VelocitySample {
        VelocitySample { input, target }
    }

    fn random_model(hidden: &[usize], seed: u64) -> MlpModel {
        MlpModel::init(hidden, seed)
    }

    #[test]
    fn zero_network_outputs_the_output_mean() {
        let mut model = MlpModel::zeros(&[8, 8]);
        model.output_mean = [0.1, -0.2, 0.3, 0.0];
        let out = mlp_forward(&model, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(out, model.output_mean);
    }

    #[test]
    fn zero_preactivations_pass_output_bias_through() {
        // One hidden layer, zero first layer: tanh(0) = 0, so the output is
        // exactly the output bias (identity normalization).
        let mut model = MlpModel::zeros(&[8]);
        model.biases[1] = DVector::from_column_slice(&[0.5, -0.25, 0.0, 1.5]);
        let out = mlp_forward(&model, &[-3.0, 0.7, 2.0, 0.1]).unwrap();
        assert_eq!(out, [0.5, -0.25, 0.0, 1.5]);
    }

    #[test]
    fn forward_matches_straight_line_reimplementation() {
        let mut model = random_model(&[6, 5], 42);
        model.input_mean = [0.1, 0.2, 0.3, 0.4];
        model.input_scale = [1.0, 2.0, 0.5, 1.5];
        model.output_mean = [-0.1, 0.0, 0.2, 0.05];
        model.output_scale = [0.3, 0.4, 0.2, 0.6];
        let input = [0.7, -0.3, 0.25, 1.2];

        // Independent scalar-loop re-implementation of the same arithmetic.
        let mut a: Vec<f64> = (0..4)
            .map(|i| (input[i] - model.input_mean[i]) / model.input_scale[i])
            .collect();
        for l in 0..model.weights.len() {
            let w = &model.weights[l];
            let mut next = vec![0.0; w.nrows()];
            for r in 0..w.nrows() {
                let mut acc = model.biases[l][r];
                for c in 0..w.ncols() {
                    acc += w[(r, c)] * a[c];
                }
                next[r] = if l + 1 < model.weights.len() { acc.tanh() } else { acc };
            }
            a = next;
        }
        let expected: Vec<f64> = (0..4)
            .map(|i| a[i] * model.output_scale[i] + model.output_mean[i])
            .collect();

        let out = mlp_forward(&model, &input).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(out[i], expected[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn perfect_model_has_zero_loss_and_gradients() {
        let model = random_model(&[8], 3);
        let inputs = [
            [0.1, 0.2, 0.3, 0.4],
            [-0.5, 0.1, 0.0, 0.2],
            [1.0, -1.0, 0.5, -0.5],
        ];
        let batch: Vec<VelocitySample> = inputs
            .iter()
            .map(|input| sample(*input, mlp_forward(&model, input).unwrap()))
            .collect();
        let (loss, grads) = loss_and_gradient(&model, &batch).unwrap();
        assert!(loss < 1e-24);
        for w in &grads.weights {
            assert!(w.amax() < 1e-12);
        }
        for b in &grads.biases {
            assert!(b.amax() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        // Every parameter of a [4, 8, 4] model, batch of 3, step 1e-5.
        let mut model = random_model(&[8], 7);
        model.input_mean = [0.05, -0.1, 0.0, 0.2];
        model.input_scale = [1.1, 0.9, 1.3, 0.8];
        model.output_mean = [0.02, 0.0, -0.06, 0.1];
        model.output_scale = [0.7, 1.2, 0.4, 1.5];
        let batch = vec![
            sample([0.3, 0.1, 0.28, 0.0], [0.4, -0.1, 0.0, 0.05]),
            sample([1.5, -0.4, 0.2, 0.3], [0.1, 0.2, -0.1, 0.0]),
            sample([2.6, 0.8, 0.25, -0.2], [-0.3, 0.0, 0.2, 0.1]),
        ];
        let (_, grads) = loss_and_gradient(&model, &batch).unwrap();
        let step = 1e-5;
        let mut checked = 0usize;
        for l in 0..model.weights.len() {
            for idx in 0..model.weights[l].len() {
                let mut plus = model.clone();
                plus.weights[l][idx] += step;
                let mut minus = model.clone();
                minus.weights[l][idx] -= step;
                let fd = (loss_and_gradient(&plus, &batch).unwrap().0
                    - loss_and_gradient(&minus, &batch).unwrap().0)
                    / (2.0 * step);
                let analytic = grads.weights[l][idx];
                let scale = analytic.abs().max(fd.abs()).max(1e-8);
                assert!(
                    (analytic - fd).abs() / scale < 1e-5,
                    "weight[{l}][{idx}]: {analytic} vs {fd}"
                );
                checked += 1;
            }
            for idx in 0..model.biases[l].len() {
                let mut plus = model.clone();
                plus.biases[l][idx] += step;
                let mut minus = model.clone();
                minus.biases[l][idx] -= step;
                let fd = (loss_and_gradient(&plus, &batch).unwrap().0
                    - loss_and_gradient(&minus, &batch).unwrap().0)
                    / (2.0 * step);
                let analytic = grads.biases[l][idx];
                let scale = analytic.abs().max(fd.abs()).max(1e-8);
                assert!(
                    (analytic - fd).abs() / scale < 1e-5,
                    "bias[{l}][{idx}]: {analytic} vs {fd}"
                );
                checked += 1;
            }
        }
        assert_eq!(checked, model.parameter_count());
    }

    #[test]
    fn duplicated_batch_keeps_loss_and_gradient() {
        let model = random_model(&[6], 11);
        let s = sample([0.4, 0.2, 0.26, -0.1], [0.3, 0.0, -0.05, 0.02]);
        let (loss1, grads1) = loss_and_gradient(&model, &[s]).unwrap();
        let (loss4, grads4) = loss_and_gradient(&model, &vec![s; 4]).unwrap();
        assert_abs_diff_eq!(loss1, loss4, epsilon = 1e-15);
        for l in 0..grads1.weights.len() {
            let diff = &grads1.weights[l] - &grads4.weights[l];
            assert!(diff.amax() < 1e-13);
        }
    }

    #[test]
    fn batch_permutation_leaves_loss_and_gradient_unchanged() {
        let model = random_model(&[10, 6], 13);
        let mut batch: Vec<VelocitySample> = (0..16)
            .map(|i| {
                let t = i as f64 * 0.13;
                sample(
                    [t.sin(), t.cos(), 0.2 + 0.01 * t, -0.1 * t],
                    [0.3 * t.cos(), -0.2 * t.sin(), 0.0, 0.05],
                )
            })
            .collect();
        let (loss_a, grads_a) = loss_and_gradient(&model, &batch).unwrap();
        batch.reverse();
        batch.swap(1, 9);
        let (loss_b, grads_b) = loss_and_gradient(&model, &batch).unwrap();
        assert_abs_diff_eq!(loss_a, loss_b, epsilon = 1e-12);
        for l in 0..grads_a.weights.len() {
            let diff = &grads_a.weights[l] - &grads_b.weights[l];
            assert!(diff.amax() < 1e-12);
        }
    }

    fn synthetic_dataset(trajectories: usize, points: usize) -> Dataset {
        let mut dataset = Dataset::default();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        // Linear map target = A * pose.
        let a = [
            [0.3, -0.1, 0.0, 0.2],
            [0.0, 0.25, -0.2, 0.0],
            [0.1, 0.0, 0.4, -0.1],
            [-0.2, 0.1, 0.0, 0.3],
        ];
        for traj in 0..trajectories {
            for knot in 0..points {
                let p = [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ];
                let mut target = [0.0; 4];
                for i in 0..4 {
                    for j in 0..4 {
                        target[i] += a[i][j] * p[j];
                    }
                }
                dataset.samples.push(sample(p, target));
                dataset.provenance.push(SampleProvenance {
                    traj_id: traj,
                    knot,
                    time: knot as f64 * 0.1,
                });
            }
        }
        dataset
    }

    #[test]
    fn split_ten_trajectories_eight_one_one() {
        let dataset = synthetic_dataset(10, 5);
        let (train, val, test) = split_dataset(&dataset, [0.8, 0.1, 0.1], 1).unwrap();
        assert_eq!(train.trajectory_count(), 8);
        assert_eq!(val.trajectory_count(), 1);
        assert_eq!(test.trajectory_count(), 1);
        // Union is a partition of the samples.
        assert_eq!(
            train.samples.len() + val.samples.len() + test.samples.len(),
            dataset.samples.len()
        );
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let dataset = synthetic_dataset(12, 4);
        let ids = |d: &Dataset| -> Vec<[f64; 4]> { d.samples.iter().map(|s| s.input).collect() };
        let (a_train, ..) = split_dataset(&dataset, [0.8, 0.1, 0.1], 5).unwrap();
        let (b_train, ..) = split_dataset(&dataset, [0.8, 0.1, 0.1], 5).unwrap();
        assert_eq!(ids(&a_train), ids(&b_train));
        let (c_train, ..) = split_dataset(&dataset, [0.8, 0.1, 0.1], 6).unwrap();
        assert_ne!(ids(&a_train), ids(&c_train));
    }

    #[test]
    fn split_rejects_fewer_than_three_trajectories() {
        let dataset = synthetic_dataset(2, 5);
        assert!(split_dataset(&dataset, [0.8, 0.1, 0.1], 1).is_err());
    }

    #[test]
    fn learns_linear_synthetic_mapping() {
        // Linear-regression sanity check of the whole training loop: with no
        // hidden layer the net is exactly a linear map and SGD must recover
        // it to well below the 1e-4 bar.
        let dataset = synthetic_dataset(20, 20);
        let config = TrainConfig {
            hidden: vec![],
            batch_size: 32,
            epochs: 200,
            learning_rate: 0.3,
            lr_decay: 0.99,
            seed: 2,
            split: [0.8, 0.1, 0.1],
        };
        let (model, history) = train(&dataset, &config).unwrap();
        assert_eq!(history.len(), 200);
        let (_, _, test) = split_dataset(&dataset, config.split, config.seed).unwrap();
        let mse = evaluate_mse(&model, &test.samples).unwrap();
        assert!(mse <= 1e-4, "test mse {mse}");
    }

    #[test]
    fn tanh_net_fits_linear_mapping_approximately() {
        // With tanh hidden units the same map is only reached asymptotically
        // (the net has to shrink into the activation's linear regime), so
        // the bar is looser here.
        let dataset = synthetic_dataset(20, 20);
        let config = TrainConfig {
            hidden: vec![16],
            batch_size: 32,
            epochs: 200,
            learning_rate: 0.5,
            lr_decay: 0.999,
            seed: 2,
            split: [0.8, 0.1, 0.1],
        };
        let (model, _) = train(&dataset, &config).unwrap();
        let (_, _, test) = split_dataset(&dataset, config.split, config.seed).unwrap();
        let mse = evaluate_mse(&model, &test.samples).unwrap();
        assert!(mse <= 1e-2, "test mse {mse}");
    }

    #[test]
    fn training_is_deterministic() {
        let dataset = synthetic_dataset(10, 10);
        let config = TrainConfig {
            hidden: vec![8],
            batch_size: 16,
            epochs: 5,
            learning_rate: 0.2,
            lr_decay: 1.0,
            seed: 77,
            split: [0.8, 0.1, 0.1],
        };
        let (model_a, hist_a) = train(&dataset, &config).unwrap();
        let (model_b, hist_b) = train(&dataset, &config).unwrap();
        assert_eq!(hist_a, hist_b);
        assert_eq!(model_a, model_b);
    }

    #[test]
    fn model_file_round_trip_is_exact() {
        let mut model = random_model(&[8, 6], 21);
        model.input_mean = [0.5, 0.066, 0.28, 0.026];
        model.input_scale = [0.5, 0.66, 0.05, 0.02];
        model.output_scale = [0.3, 0.3, 0.1, 0.2];
        let path = std::env::temp_dir().join("quadcrawl_model_roundtrip.json");
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        let _ = std::fs::remove_file(&path);
        assert_eq!(model, back);
        let input = [0.31, -0.22, 0.27, 0.04];
        let a = mlp_forward(&model, &input).unwrap();
        let b = mlp_forward(&back, &input).unwrap();
        for i in 0..4 {
            assert_eq!(a[i].to_bits(), b[i].to_bits());
        }
    }

    #[test]
    fn load_model_rejects_unknown_version() {
        let model = random_model(&[4], 1);
        let path = std::env::temp_dir().join("quadcrawl_model_badver.json");
        save_model(&model, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let bumped = text.replace("\"format_version\":1", "\"format_version\":99");
        std::fs::write(&path, bumped).unwrap();
        let err = load_model(&path);
        let _ = std::fs::remove_file(&path);
        assert!(matches!(err, Err(Error::SchemaVersion { .. })));
    }

    #[test]
    fn predict_velocity_respects_bounds() {
        let mut model = MlpModel::zeros(&[4]);
        // Force a large raw output through the output mean.
        model.output_mean = [5.0, -5.0, 5.0, -5.0];
        let world = World {
            obstacles: vec![],
            state_lower: [-2.0, -2.0, 0.12, -4.0, -0.5, -0.5, -0.3, -1.0],
            state_upper: [5.0, 2.0, 0.28, 4.0, 0.5, 0.5, 0.3, 1.0],
            command_lower: [-1.0; 4],
            command_upper: [1.0; 4],
            clearance: 0.04,
        };
        let v = predict_velocity(&model, &TorsoPose::new(0.0, 0.0, 0.28, 0.0), &world).unwrap();
        assert_eq!(v, [0.5, -0.5, 0.3, -1.0]);
    }

    use rand_chacha::ChaCha8Rng;
    use rand::SeedableRng;
}
