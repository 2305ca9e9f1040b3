//! Undecimated biorthogonal wavelet decomposition of swarm time series.
//!
//! The transform is the CDF(2,2) pair applied through lifting in its
//! redundant (a-trous) form: at level `i` the predict step subtracts half of
//! the two neighbours at hole distance `2^(i-1)` and the update step adds a
//! quarter of the neighbouring details. Keeping one coefficient per level per
//! time step gives the input matrix one row per series sample. Boundaries use
//! half-sample symmetric extension.

use std::time::Duration;

use crate::error::{Error, Result};

/// What a swarm series counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    /// Requests for the torrent coming from peers.
    Requests,
    /// Declarations of availability from peers and seeds.
    Availability,
    /// Mean share-ratio samples, forecast alongside the two counters.
    ShareRatio,
}

/// Uniformly sampled observation series for one torrent quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmSeries {
    pub kind: SeriesKind,
    pub samples: Vec<f64>,
    pub sample_interval: Duration,
}

impl SwarmSeries {
    /// Series sampled at the default one-hour interval.
    pub fn new(kind: SeriesKind, samples: Vec<f64>) -> Self {
        Self {
            kind,
            samples,
            sample_interval: Duration::from_secs(3600),
        }
    }

    pub fn with_interval(kind: SeriesKind, samples: Vec<f64>, interval: Duration) -> Self {
        Self {
            kind,
            samples,
            sample_interval: interval,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Full-length detail series `d_1..d_M` plus the approximation `a_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletDecomposition {
    kind: SeriesKind,
    sample_interval: Duration,
    details: Vec<Vec<f64>>,
    approximation: Vec<f64>,
}

impl WaveletDecomposition {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    pub fn len(&self) -> usize {
        self.approximation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.approximation.is_empty()
    }

    pub fn detail(&self, level: usize) -> &[f64] {
        &self.details[level - 1]
    }

    pub fn approximation(&self) -> &[f64] {
        &self.approximation
    }

    fn validate(&self) -> Result<()> {
        if self.details.is_empty() {
            return Err(Error::MalformedDecomposition(
                "no detail levels".to_string(),
            ));
        }
        for (i, d) in self.details.iter().enumerate() {
            if d.len() != self.approximation.len() {
                return Err(Error::MalformedDecomposition(format!(
                    "detail level {} has {} samples, approximation has {}",
                    i + 1,
                    d.len(),
                    self.approximation.len()
                )));
            }
        }
        Ok(())
    }
}

/// `N x (M+1)` matrix whose row `tau` is `[d_1(tau), .., d_M(tau), a_M(tau)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletInputMatrix {
    rows: Vec<Vec<f64>>,
}

impl WaveletInputMatrix {
    /// Builds a matrix from pre-assembled rows, e.g. a training slice of a
    /// longer decomposition.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        Self { rows }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, tau: usize) -> &[f64] {
        &self.rows[tau]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

/// Half-sample symmetric extension: `x[-1] = x[0]`, `x[len] = x[len-1]`.
fn reflect(index: isize, len: usize) -> usize {
    debug_assert!(len > 0);
    let len = len as isize;
    let mut i = index;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= len {
            i = 2 * len - i - 1;
        } else {
            return i as usize;
        }
    }
}

fn lift_level(input: &[f64], hole: usize) -> (Vec<f64>, Vec<f64>) {
    let len = input.len();
    let h = hole as isize;
    let mut detail = vec![0.0; len];
    for n in 0..len {
        let left = input[reflect(n as isize - h, len)];
        let right = input[reflect(n as isize + h, len)];
        detail[n] = input[n] - 0.5 * (left + right);
    }
    let mut approx = vec![0.0; len];
    for n in 0..len {
        let left = detail[reflect(n as isize - h, len)];
        let right = detail[reflect(n as isize + h, len)];
        approx[n] = input[n] + 0.25 * (left + right);
    }
    (detail, approx)
}

/// Decomposes a series into `levels` detail series plus one approximation,
/// all at the input length.
pub fn wavelet_decompose(series: &SwarmSeries, levels: usize) -> Result<WaveletDecomposition> {
    if !(1..=32).contains(&levels) {
        return Err(Error::MalformedDecomposition(format!(
            "levels must be in 1..=32, got {levels}"
        )));
    }
    let required = 1usize << levels;
    if series.len() < required {
        return Err(Error::SeriesTooShort {
            len: series.len(),
            required,
        });
    }
    let mut details = Vec::with_capacity(levels);
    let mut approx = series.samples.clone();
    for level in 1..=levels {
        let hole = 1usize << (level - 1);
        let (d, a) = lift_level(&approx, hole);
        details.push(d);
        approx = a;
    }
    Ok(WaveletDecomposition {
        kind: series.kind,
        sample_interval: series.sample_interval,
        details,
        approximation: approx,
    })
}

/// Inverse of [`wavelet_decompose`]: unwinds the update steps level by level.
pub fn wavelet_reconstruct(decomp: &WaveletDecomposition) -> Result<SwarmSeries> {
    decomp.validate()?;
    let len = decomp.len();
    let mut approx = decomp.approximation.clone();
    for level in (1..=decomp.levels()).rev() {
        let detail = decomp.detail(level);
        let h = (1usize << (level - 1)) as isize;
        let mut previous = vec![0.0; len];
        for n in 0..len {
            let left = detail[reflect(n as isize - h, len)];
            let right = detail[reflect(n as isize + h, len)];
            previous[n] = approx[n] - 0.25 * (left + right);
        }
        approx = previous;
    }
    Ok(SwarmSeries::with_interval(
        decomp.kind,
        approx,
        decomp.sample_interval,
    ))
}

/// Stacks the decomposition into the row-per-step input matrix.
pub fn build_input_matrix(decomp: &WaveletDecomposition) -> WaveletInputMatrix {
    let levels = decomp.levels();
    let rows = (0..decomp.len())
        .map(|tau| {
            let mut row = Vec::with_capacity(levels + 1);
            for level in 1..=levels {
                row.push(decomp.detail(level)[tau]);
            }
            row.push(decomp.approximation()[tau]);
            row
        })
        .collect();
    WaveletInputMatrix { rows }
}
