//! Small Elman-style recurrent network trained by truncated backpropagation
//! through time. One tanh hidden layer, linear output heads, full-batch
//! gradient descent with element-wise gradient clipping. Everything is plain
//! sequential f64 arithmetic so training is reproducible bit for bit under a
//! fixed seed.

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::wavelet::WaveletInputMatrix;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Default truncation window for backpropagation through time.
pub const DEFAULT_TBPTT_WINDOW: usize = 16;

const GRADIENT_CLIP: f64 = 5.0;
const INIT_SCALE: f64 = 0.1;

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub tbptt_window: usize,
}

impl TrainConfig {
    pub fn new(epochs: usize, learning_rate: f64, seed: u64) -> Self {
        Self {
            epochs,
            learning_rate,
            seed,
            tbptt_window: DEFAULT_TBPTT_WINDOW,
        }
    }
}

/// Loss trajectory of one training run.
#[derive(Debug, Clone)]
pub struct TrainingReport {
    pub final_loss: f64,
    pub losses: Vec<f64>,
}

/// Recurrent forecaster: rows of wavelet coefficients in, `r`-step-ahead
/// predictions out. Prediction is stateful sequence evaluation; `reset`
/// restores the initial hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentPredictor {
    input_width: usize,
    hidden_size: usize,
    output_width: usize,
    horizon: usize,
    w_in: Vec<f64>,     // hidden x input
    w_rec: Vec<f64>,    // hidden x hidden
    w_out: Vec<f64>,    // output x hidden
    b_hidden: Vec<f64>, // hidden
    b_out: Vec<f64>,    // output
    state: Vec<f64>,    // hidden
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    input_width: usize,
    hidden_size: usize,
    output_width: usize,
    horizon: usize,
    w_in: Vec<f64>,
    w_rec: Vec<f64>,
    w_out: Vec<f64>,
    b_hidden: Vec<f64>,
    b_out: Vec<f64>,
}

struct Gradients {
    w_in: Vec<f64>,
    w_rec: Vec<f64>,
    w_out: Vec<f64>,
    b_hidden: Vec<f64>,
    b_out: Vec<f64>,
}

impl Gradients {
    fn zeros(net: &RecurrentPredictor) -> Self {
        Self {
            w_in: vec![0.0; net.w_in.len()],
            w_rec: vec![0.0; net.w_rec.len()],
            w_out: vec![0.0; net.w_out.len()],
            b_hidden: vec![0.0; net.b_hidden.len()],
            b_out: vec![0.0; net.b_out.len()],
        }
    }

    fn into_flat(self) -> Vec<f64> {
        let mut flat = self.w_in;
        flat.extend(self.w_rec);
        flat.extend(self.w_out);
        flat.extend(self.b_hidden);
        flat.extend(self.b_out);
        flat
    }
}

impl RecurrentPredictor {
    /// A predictor with all-zero weights and state: it outputs zero for any
    /// input until trained.
    pub fn new(input_width: usize, hidden_size: usize, output_width: usize, horizon: usize) -> Self {
        Self {
            input_width,
            hidden_size,
            output_width,
            horizon,
            w_in: vec![0.0; hidden_size * input_width],
            w_rec: vec![0.0; hidden_size * hidden_size],
            w_out: vec![0.0; output_width * hidden_size],
            b_hidden: vec![0.0; hidden_size],
            b_out: vec![0.0; output_width],
            state: vec![0.0; hidden_size],
        }
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn output_width(&self) -> usize {
        self.output_width
    }

    /// Forecast horizon in steps, the `r` of the shifted training targets.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Re-initialises all weights uniformly in `[-0.1, 0.1]` and zeroes the
    /// hidden state.
    pub fn randomize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in self
            .w_in
            .iter_mut()
            .chain(self.w_rec.iter_mut())
            .chain(self.w_out.iter_mut())
            .chain(self.b_hidden.iter_mut())
            .chain(self.b_out.iter_mut())
        {
            *w = rng.gen_range(-INIT_SCALE..INIT_SCALE);
        }
        self.reset();
    }

    /// Restores the initial (zero) hidden state.
    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|h| *h = 0.0);
    }

    fn check_row(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.input_width {
            return Err(Error::WidthMismatch {
                got: row.len(),
                expected: self.input_width,
            });
        }
        Ok(())
    }

    fn hidden_step(&self, row: &[f64], state: &[f64]) -> Vec<f64> {
        let mut next = vec![0.0; self.hidden_size];
        for h in 0..self.hidden_size {
            let mut z = self.b_hidden[h];
            for (i, &x) in row.iter().enumerate() {
                z += self.w_in[h * self.input_width + i] * x;
            }
            for (g, &s) in state.iter().enumerate() {
                z += self.w_rec[h * self.hidden_size + g] * s;
            }
            next[h] = z.tanh();
        }
        next
    }

    fn output_of(&self, hidden: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_width];
        for (o, out_o) in out.iter_mut().enumerate() {
            let mut y = self.b_out[o];
            for (h, &s) in hidden.iter().enumerate() {
                y += self.w_out[o * self.hidden_size + h] * s;
            }
            *out_o = y;
        }
        out
    }

    /// Advances the hidden state with one input row and returns all output
    /// heads.
    pub fn predict_heads(&mut self, row: &[f64]) -> Result<Vec<f64>> {
        self.check_row(row)?;
        self.state = self.hidden_step(row, &self.state);
        Ok(self.output_of(&self.state))
    }

    /// Scalar forecast for single-head predictors.
    pub fn predict(&mut self, row: &[f64]) -> Result<f64> {
        if self.output_width != 1 {
            return Err(Error::WidthMismatch {
                got: self.output_width,
                expected: 1,
            });
        }
        Ok(self.predict_heads(row)?[0])
    }

    /// Mean squared error of a forward pass from the zero state, without
    /// touching the predictor's own state.
    pub fn evaluate_loss(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
        self.check_training_data(inputs, targets)?;
        let mut state = vec![0.0; self.hidden_size];
        let mut total = 0.0;
        for (row, target) in inputs.iter().zip(targets) {
            state = self.hidden_step(row, &state);
            let out = self.output_of(&state);
            for (y, t) in out.iter().zip(target) {
                total += (y - t) * (y - t);
            }
        }
        Ok(total / (inputs.len() * self.output_width) as f64)
    }

    fn check_training_data(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<()> {
        if inputs.is_empty() {
            return Err(Error::SeriesTooShort {
                len: 0,
                required: 1,
            });
        }
        if inputs.len() != targets.len() {
            return Err(Error::WidthMismatch {
                got: targets.len(),
                expected: inputs.len(),
            });
        }
        for row in inputs {
            self.check_row(row)?;
        }
        for target in targets {
            if target.len() != self.output_width {
                return Err(Error::WidthMismatch {
                    got: target.len(),
                    expected: self.output_width,
                });
            }
        }
        Ok(())
    }

    /// One full pass over the sequence: mean squared error plus its gradient,
    /// backpropagated at most `window` steps inside each chunk. Gradients are
    /// returned flat in the order `w_in, w_rec, w_out, b_hidden, b_out`,
    /// unclipped. With `window >= inputs.len()` this is exact backpropagation
    /// through time.
    pub fn loss_and_gradients(
        &self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        window: usize,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_training_data(inputs, targets)?;
        let window = window.max(1);
        let n = inputs.len();
        let scale = 1.0 / (n * self.output_width) as f64;

        let mut grads = Gradients::zeros(self);
        let mut carry_state = vec![0.0; self.hidden_size];
        let mut total_loss = 0.0;

        let mut start = 0;
        while start < n {
            let end = (start + window).min(n);
            // Forward through the chunk, keeping every hidden state.
            let mut hiddens: Vec<Vec<f64>> = Vec::with_capacity(end - start);
            let mut errors: Vec<Vec<f64>> = Vec::with_capacity(end - start);
            let mut state = carry_state.clone();
            for t in start..end {
                state = self.hidden_step(&inputs[t], &state);
                let out = self.output_of(&state);
                let err: Vec<f64> = out
                    .iter()
                    .zip(&targets[t])
                    .map(|(y, target)| y - target)
                    .collect();
                total_loss += err.iter().map(|e| e * e).sum::<f64>();
                hiddens.push(state.clone());
                errors.push(err);
            }

            // Backward inside the chunk; the state entering the chunk is
            // treated as a constant (truncation point).
            let mut dh_carry = vec![0.0; self.hidden_size];
            for offset in (0..end - start).rev() {
                let t = start + offset;
                let hidden = &hiddens[offset];
                let previous: &[f64] = if offset == 0 {
                    &carry_state
                } else {
                    &hiddens[offset - 1]
                };

                let mut dh = dh_carry.clone();
                for (o, e) in errors[offset].iter().enumerate() {
                    let dy = 2.0 * e * scale;
                    grads.b_out[o] += dy;
                    for h in 0..self.hidden_size {
                        grads.w_out[o * self.hidden_size + h] += dy * hidden[h];
                        dh[h] += dy * self.w_out[o * self.hidden_size + h];
                    }
                }

                let mut dz = vec![0.0; self.hidden_size];
                for h in 0..self.hidden_size {
                    dz[h] = dh[h] * (1.0 - hidden[h] * hidden[h]);
                    grads.b_hidden[h] += dz[h];
                    for (i, &x) in inputs[t].iter().enumerate() {
                        grads.w_in[h * self.input_width + i] += dz[h] * x;
                    }
                    for (g, &s) in previous.iter().enumerate() {
                        grads.w_rec[h * self.hidden_size + g] += dz[h] * s;
                    }
                }

                dh_carry.iter_mut().for_each(|d| *d = 0.0);
                for h in 0..self.hidden_size {
                    for g in 0..self.hidden_size {
                        dh_carry[g] += dz[h] * self.w_rec[h * self.hidden_size + g];
                    }
                }
            }

            carry_state = hiddens.last().expect("chunk is non-empty").clone();
            start = end;
        }

        Ok((total_loss * scale, grads.into_flat()))
    }

    /// Trains from a fresh seeded initialisation by full-batch gradient
    /// descent over truncated-BPTT gradients. Deterministic for identical
    /// seed, data and hyperparameters.
    pub fn fit(
        &mut self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        config: &TrainConfig,
    ) -> Result<TrainingReport> {
        self.check_training_data(inputs, targets)?;
        self.randomize(config.seed);

        let mut losses = Vec::with_capacity(config.epochs);
        for epoch in 0..config.epochs {
            let (loss, mut grads) = self.loss_and_gradients(inputs, targets, config.tbptt_window)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            losses.push(loss);
            for g in grads.iter_mut() {
                *g = g.clamp(-GRADIENT_CLIP, GRADIENT_CLIP);
            }
            self.apply_flat_update(&grads, config.learning_rate);
        }
        self.reset();
        let final_loss = self.evaluate_loss(inputs, targets)?;
        if !final_loss.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch: config.epochs,
            });
        }
        losses.push(final_loss);
        Ok(TrainingReport { final_loss, losses })
    }

    fn apply_flat_update(&mut self, grads: &[f64], learning_rate: f64) {
        let mut cursor = grads.iter();
        for w in self
            .w_in
            .iter_mut()
            .chain(self.w_rec.iter_mut())
            .chain(self.w_out.iter_mut())
            .chain(self.b_hidden.iter_mut())
            .chain(self.b_out.iter_mut())
        {
            *w -= learning_rate * cursor.next().expect("gradient length matches");
        }
    }

    /// All weights flattened in the gradient order, for finite-difference
    /// verification.
    pub fn flat_weights(&self) -> Vec<f64> {
        let mut flat = self.w_in.clone();
        flat.extend(&self.w_rec);
        flat.extend(&self.w_out);
        flat.extend(&self.b_hidden);
        flat.extend(&self.b_out);
        flat
    }

    pub fn set_flat_weights(&mut self, weights: &[f64]) -> Result<()> {
        let expected = self.flat_weights().len();
        if weights.len() != expected {
            return Err(Error::WidthMismatch {
                got: weights.len(),
                expected,
            });
        }
        let mut cursor = weights.iter();
        for w in self
            .w_in
            .iter_mut()
            .chain(self.w_rec.iter_mut())
            .chain(self.w_out.iter_mut())
            .chain(self.b_hidden.iter_mut())
            .chain(self.b_out.iter_mut())
        {
            *w = *cursor.next().expect("length checked");
        }
        Ok(())
    }

    /// Writes weights and hyperparameters as a versioned JSON dump.
    pub fn save_checkpoint<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            input_width: self.input_width,
            hidden_size: self.hidden_size,
            output_width: self.output_width,
            horizon: self.horizon,
            w_in: self.w_in.clone(),
            w_rec: self.w_rec.clone(),
            w_out: self.w_out.clone(),
            b_hidden: self.b_hidden.clone(),
            b_out: self.b_out.clone(),
        };
        let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Serialize(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: CheckpointFile =
            serde_json::from_str(&text).map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                got: file.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let mut net = RecurrentPredictor::new(
            file.input_width,
            file.hidden_size,
            file.output_width,
            file.horizon,
        );
        if file.w_in.len() != net.w_in.len()
            || file.w_rec.len() != net.w_rec.len()
            || file.w_out.len() != net.w_out.len()
            || file.b_hidden.len() != net.b_hidden.len()
            || file.b_out.len() != net.b_out.len()
        {
            return Err(Error::MalformedCheckpoint(
                "weight array sizes do not match the declared dimensions".to_string(),
            ));
        }
        net.w_in = file.w_in;
        net.w_rec = file.w_rec;
        net.w_out = file.w_out;
        net.b_hidden = file.b_hidden;
        net.b_out = file.b_out;
        Ok(net)
    }
}

/// Trains a scalar predictor on an input matrix against a series shifted by
/// the forecast horizon: row `tau` is paired with `x(tau + r)`.
pub fn train(
    predictor: &mut RecurrentPredictor,
    matrix: &WaveletInputMatrix,
    targets: &[f64],
    config: &TrainConfig,
) -> Result<TrainingReport> {
    let rows: Vec<Vec<f64>> = matrix.rows().to_vec();
    let targets: Vec<Vec<f64>> = targets.iter().map(|t| vec![*t]).collect();
    predictor.fit(&rows, &targets, config)
}

/// Scalar forecast, the stateful counterpart of [`train`].
pub fn predict(predictor: &mut RecurrentPredictor, row: &[f64]) -> Result<f64> {
    predictor.predict(row)
}
