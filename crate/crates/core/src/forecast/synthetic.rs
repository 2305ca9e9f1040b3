//! Synthetic series generators for training and evaluating the forecaster at
//! desk scale: seasonal cycles plus trend plus uniform noise.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Parameters of a synthetic swarm observation series.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub len: usize,
    /// Samples per seasonal cycle.
    pub period: f64,
    pub amplitude: f64,
    pub offset: f64,
    /// Additive linear trend per sample.
    pub trend: f64,
    /// Uniform noise amplitude as a fraction of `amplitude`.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            len: 256,
            period: 24.0,
            amplitude: 10.0,
            offset: 20.0,
            trend: 0.0,
            noise: 0.1,
            seed: 0,
        }
    }
}

/// Seasonal + trend + noise series: the stand-in for real torrent traces.
pub fn seasonal_series(spec: &SyntheticSpec) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.len)
        .map(|tau| {
            let phase = 2.0 * std::f64::consts::PI * tau as f64 / spec.period;
            let noise = if spec.noise > 0.0 {
                rng.gen_range(-1.0..1.0) * spec.noise * spec.amplitude
            } else {
                0.0
            };
            spec.offset + spec.amplitude * phase.sin() + spec.trend * tau as f64 + noise
        })
        .collect()
}

/// Mean squared error of the persistence forecast `x~(tau + r) = x(tau)`,
/// the skill floor any trained predictor must beat.
pub fn persistence_mse(series: &[f64], horizon: usize) -> f64 {
    assert!(series.len() > horizon, "series shorter than the horizon");
    let n = series.len() - horizon;
    let sum: f64 = (0..n)
        .map(|tau| {
            let err = series[tau + horizon] - series[tau];
            err * err
        })
        .sum();
    sum / n as f64
}
