//! Wavelet-recurrent forecasting of swarm state.
//!
//! Observed per-fragment series (user totals, seeder counts, mean share
//! ratio) are wavelet-decomposed into a row-per-step coefficient matrix that
//! feeds a small recurrent network predicting the series `r` steps ahead.
//! The predictions are clamped back into valid swarm stats and turned into
//! altered permeability values that the scheduler substitutes for the
//! measured ones.

mod rnn;
pub mod synthetic;
mod wavelet;

pub use rnn::{
    predict, train, RecurrentPredictor, TrainConfig, TrainingReport, CHECKPOINT_VERSION,
    DEFAULT_TBPTT_WINDOW,
};
pub use wavelet::{
    build_input_matrix, wavelet_decompose, wavelet_reconstruct, SeriesKind, SwarmSeries,
    WaveletDecomposition, WaveletInputMatrix,
};

use crate::diffusion::{permeability_from_counts, FragmentId, PERMEABILITY_EPSILON};
use crate::error::{Error, Result};

/// Forecast swarm stats for one fragment at step `tau + r`, clamped so the
/// measured-stats invariants hold: everything non-negative and seeders never
/// above the user total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlteredSwarmStats {
    pub fragment: FragmentId,
    pub users_total: f64,
    pub seeders: f64,
    pub mean_share_ratio: f64,
}

impl AlteredSwarmStats {
    /// Clamps raw network outputs into a valid prediction.
    pub fn from_raw(fragment: FragmentId, users_total: f64, seeders: f64, share_ratio: f64) -> Self {
        let users_total = if users_total.is_finite() {
            users_total.max(0.0)
        } else {
            0.0
        };
        let seeders = if seeders.is_finite() {
            seeders.clamp(0.0, users_total)
        } else {
            0.0
        };
        let mean_share_ratio = if share_ratio.is_finite() {
            share_ratio.max(0.0)
        } else {
            0.0
        };
        Self {
            fragment,
            users_total,
            seeders,
            mean_share_ratio,
        }
    }
}

/// Permeability computed from forecast stats, substituted for the measured
/// value at scheduler refresh time.
pub fn altered_permeability(predictions: &AlteredSwarmStats) -> Result<f64> {
    if predictions.users_total < PERMEABILITY_EPSILON {
        return Err(Error::EmptySwarm(predictions.fragment.index()));
    }
    Ok(permeability_from_counts(
        predictions.users_total,
        predictions.seeders,
        predictions.mean_share_ratio,
    ))
}

/// In-process forecaster for one torrent: per fragment, one shared recurrent
/// network with three output heads (users, seeders, share ratio) over the
/// concatenated wavelet coefficients of the three observed series.
#[derive(Debug, Clone)]
pub struct StatsForecaster {
    pub levels: usize,
    pub hidden_size: usize,
    pub horizon: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl StatsForecaster {
    /// Shortest history the forecaster can train on: enough rows for at
    /// least one decomposition level and two (input, shifted-target) pairs.
    pub fn min_history(&self) -> usize {
        self.horizon.saturating_add(2).max(2)
    }

    fn effective_levels(&self, len: usize) -> usize {
        let mut levels = 1;
        while levels < self.levels && (1usize << (levels + 1)) <= len {
            levels += 1;
        }
        levels
    }

    /// Trains on the fragment's history and predicts its stats `horizon`
    /// steps past the last sample.
    pub fn forecast_fragment(
        &self,
        fragment: FragmentId,
        users: &[f64],
        seeders: &[f64],
        share_ratio: &[f64],
    ) -> Result<AlteredSwarmStats> {
        let len = users.len();
        if seeders.len() != len || share_ratio.len() != len {
            return Err(Error::WidthMismatch {
                got: seeders.len().min(share_ratio.len()),
                expected: len,
            });
        }
        let required = self.min_history().max(2);
        if len < required {
            return Err(Error::SeriesTooShort { len, required });
        }
        let levels = self.effective_levels(len);
        if len < (1usize << levels) {
            return Err(Error::SeriesTooShort {
                len,
                required: 1usize << levels,
            });
        }

        let quantities = [
            (SeriesKind::Requests, users),
            (SeriesKind::Availability, seeders),
            (SeriesKind::ShareRatio, share_ratio),
        ];
        let mut scales = [1.0f64; 3];
        let mut matrices = Vec::with_capacity(3);
        for (slot, (kind, samples)) in quantities.iter().enumerate() {
            let scale = samples.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            scales[slot] = scale;
            let normalized: Vec<f64> = samples.iter().map(|x| x / scale).collect();
            let series = SwarmSeries::new(*kind, normalized);
            let decomp = wavelet_decompose(&series, levels)?;
            matrices.push(build_input_matrix(&decomp));
        }

        let width = 3 * (levels + 1);
        let inputs: Vec<Vec<f64>> = (0..len)
            .map(|tau| {
                let mut row = Vec::with_capacity(width);
                for matrix in &matrices {
                    row.extend_from_slice(matrix.row(tau));
                }
                row
            })
            .collect();

        // The network forecasts the change over the horizon rather than the
        // absolute level: trends then map to near-constant targets and the
        // prediction extrapolates cleanly beyond the trained value range.
        let train_rows = len - self.horizon;
        let targets: Vec<Vec<f64>> = (0..train_rows)
            .map(|tau| {
                vec![
                    (users[tau + self.horizon] - users[tau]) / scales[0],
                    (seeders[tau + self.horizon] - seeders[tau]) / scales[1],
                    (share_ratio[tau + self.horizon] - share_ratio[tau]) / scales[2],
                ]
            })
            .collect();

        let mut net = RecurrentPredictor::new(width, self.hidden_size, 3, self.horizon);
        let config = TrainConfig::new(
            self.epochs,
            self.learning_rate,
            self.seed ^ (fragment.index() as u64).wrapping_mul(0x9E3779B97F4A7C15),
        );
        net.fit(&inputs[..train_rows], &targets, &config)?;

        // Replay the whole history; the final output is the forecast change
        // from the last observed sample to `horizon` steps past it.
        net.reset();
        let mut last = vec![0.0; 3];
        for row in &inputs {
            last = net.predict_heads(row)?;
        }
        Ok(AlteredSwarmStats::from_raw(
            fragment,
            users[len - 1] + last[0] * scales[0],
            seeders[len - 1] + last[1] * scales[1],
            share_ratio[len - 1] + last[2] * scales[2],
        ))
    }
}
