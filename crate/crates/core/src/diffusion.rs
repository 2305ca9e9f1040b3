//! Fick's-law analogy for fragment spreading.
//!
//! A fragment's likelihood of flowing from one node to another within an
//! elapsed time is modelled as a one-dimensional diffusion along the latency
//! axis. The concentration kernel uses a two-term pure-exponential
//! approximation of the complementary error function; the permeability of the
//! "medium" is derived from the fragment's swarm state so that scarce
//! fragments diffuse under higher osmotic pressure.
//!
//! Note on the kernel sign: the approximation is implemented as
//! `(1/6)·exp(-x²) + (1/2)·exp(-(4/3)x²)`, with both exponents negative. A
//! positive first exponent would diverge with distance, contradicting both
//! the decay behaviour of erfc and the physics being modelled.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guard threshold for the permeability denominator.
pub const PERMEABILITY_EPSILON: f64 = 1e-6;
/// Permeability returned when the denominator collapses (a brand-new rare
/// fragment with no seeders and zero share ratio). Large but finite so the
/// diffusion probability stays small and well-defined.
pub const PERMEABILITY_CEILING: f64 = 1e6;
/// Smallest probability a diffusion evaluation may underflow to.
pub const PROBABILITY_FLOOR: f64 = 1e-300;
/// Largest probability a diffusion evaluation may saturate to: the f64 just
/// below 1. Saturated pairs must stay distinguishable from the scheduler's
/// sentinel value 1, which marks non-candidates; clamping to exactly 1 would
/// make every short-latency pair unselectable and stall the whole swarm.
pub const PROBABILITY_CEILING: f64 = f64::from_bits(0x3FEF_FFFF_FFFF_FFFF);

/// Identifier of a torrent fragment, dense in `[0, fragment_count)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FragmentId(pub usize);

impl FragmentId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for FragmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "z{}", self.0)
    }
}

/// Swarm-wide counters for one fragment at one time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FragmentSwarmStats {
    fragment: FragmentId,
    users_total: u64,
    seeders: u64,
    mean_share_ratio: f64,
}

impl FragmentSwarmStats {
    pub fn new(
        fragment: FragmentId,
        users_total: u64,
        seeders: u64,
        mean_share_ratio: f64,
    ) -> Result<Self> {
        if seeders > users_total {
            return Err(Error::InvalidStats {
                fragment: fragment.index(),
                reason: format!("seeders {seeders} exceed users_total {users_total}"),
            });
        }
        if !(mean_share_ratio >= 0.0 && mean_share_ratio.is_finite()) {
            return Err(Error::InvalidStats {
                fragment: fragment.index(),
                reason: format!("mean_share_ratio {mean_share_ratio} must be finite and >= 0"),
            });
        }
        Ok(Self {
            fragment,
            users_total,
            seeders,
            mean_share_ratio,
        })
    }

    pub fn fragment(&self) -> FragmentId {
        self.fragment
    }

    pub fn users_total(&self) -> u64 {
        self.users_total
    }

    pub fn seeders(&self) -> u64 {
        self.seeders
    }

    pub fn mean_share_ratio(&self) -> f64 {
        self.mean_share_ratio
    }
}

/// A clamped diffusion probability in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct DiffusionProbability(f64);

impl DiffusionProbability {
    pub fn new(value: f64) -> Result<Self> {
        if !(value > 0.0 && value <= 1.0) {
            return Err(Error::NonPositive {
                name: "probability",
                value,
            });
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Two-term exponential approximation of the complementary error function,
/// valid for non-negative arguments.
///
/// Measured error profile against a high-accuracy erfc reference: the
/// maximum absolute deviation over `[0.5, 6]` is about `4.3e-2`, peaking
/// near `x = 0.8`. The low accuracy is irrelevant downstream: probabilities
/// built on this kernel only ever feed an argmax, which global positive
/// rescaling cannot change.
pub fn erfc_approx(x: f64) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::NegativeArgument(x));
    }
    Ok((1.0 / 6.0) * (-x * x).exp() + 0.5 * (-(4.0 / 3.0) * x * x).exp())
}

fn permeability_denominator(users_total: f64, seeders: f64, mean_share_ratio: f64) -> f64 {
    seeders + (users_total - seeders) * mean_share_ratio
}

/// Shared permeability formula over real-valued counts, used both for
/// measured (integer) stats and for forecast (real) stats.
pub(crate) fn permeability_from_counts(
    users_total: f64,
    seeders: f64,
    mean_share_ratio: f64,
) -> f64 {
    let denominator = permeability_denominator(users_total, seeders, mean_share_ratio);
    if denominator < PERMEABILITY_EPSILON {
        PERMEABILITY_CEILING
    } else {
        users_total / denominator
    }
}

/// Permeability of the swarm for one fragment: the scarcer the seeders and
/// share ratio, the higher the osmotic pressure to diffuse it.
pub fn permeability(stats: &FragmentSwarmStats) -> Result<f64> {
    if stats.users_total() == 0 {
        return Err(Error::EmptySwarm(stats.fragment().index()));
    }
    Ok(permeability_from_counts(
        stats.users_total() as f64,
        stats.seeders() as f64,
        stats.mean_share_ratio(),
    ))
}

/// Normalised kernel prefactor `1 / sqrt(4·pi·D·t)`.
///
/// The `4·pi` factor is kept even though it is a global positive constant; it
/// cannot change any urgency argmax, which the scheduler verifies as an
/// invariant.
pub fn permeability_prefactor(permeability: f64, elapsed: f64) -> Result<f64> {
    if !(permeability > 0.0 && permeability.is_finite()) {
        return Err(Error::NonPositive {
            name: "permeability",
            value: permeability,
        });
    }
    if !(elapsed > 0.0 && elapsed.is_finite()) {
        return Err(Error::NonPositive {
            name: "elapsed",
            value: elapsed,
        });
    }
    Ok(1.0 / (4.0 * std::f64::consts::PI * permeability * elapsed).sqrt())
}

/// Probability that a fragment diffuses across a link of latency `delta`
/// within the elapsed time carried by `prefactor`.
///
/// Exactly `prefactor * erfc_approx(prefactor * delta)`, clamped into
/// `(0, 1)`: values at or above one clamp to [`PROBABILITY_CEILING`],
/// underflow clamps to [`PROBABILITY_FLOOR`].
pub fn diffusion_probability(prefactor: f64, delta: f64) -> Result<DiffusionProbability> {
    if !(prefactor > 0.0 && prefactor.is_finite()) {
        return Err(Error::NonPositive {
            name: "prefactor",
            value: prefactor,
        });
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::NonPositive {
            name: "delta",
            value: delta,
        });
    }
    let raw = prefactor * erfc_approx(prefactor * delta)?;
    let clamped = if raw >= 1.0 {
        PROBABILITY_CEILING
    } else if raw < PROBABILITY_FLOOR {
        PROBABILITY_FLOOR
    } else {
        raw
    };
    Ok(DiffusionProbability(clamped))
}
