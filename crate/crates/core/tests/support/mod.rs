//! Shared test oracles, all deliberately independent of the library's own
//! computation paths: a high-accuracy erfc reference, a brute-force urgency
//! argmax, a direct-convolution wavelet filter bank and finite-difference
//! gradients.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use swarmdiff::diffusion::FragmentId;
use swarmdiff::forecast::RecurrentPredictor;
use swarmdiff::metric::{LatencyView, NodeId};
use swarmdiff::scheduler::PriorityMatrix;

/// High-accuracy complementary error function: Maclaurin series of erf for
/// small arguments, Lentz-evaluated continued fraction for large ones.
/// Worst relative error against libm erfc is below 1e-12 on [0, 6].
pub fn erfc_reference(x: f64) -> f64 {
    assert!(x >= 0.0, "reference only defined for non-negative x");
    if x < 2.0 {
        1.0 - erf_series(x)
    } else {
        erfc_continued_fraction(x)
    }
}

fn erf_series(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let mut sum = 0.0;
    let mut term = x;
    let mut n = 0u32;
    loop {
        let contribution = term / (2 * n + 1) as f64;
        if n.is_multiple_of(2) {
            sum += contribution;
        } else {
            sum -= contribution;
        }
        n += 1;
        term = term * x * x / n as f64;
        if (term / (2 * n + 1) as f64).abs() < 1e-300 + 1e-17 * sum.abs() {
            break;
        }
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

fn erfc_continued_fraction(x: f64) -> f64 {
    // erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ..))))
    let tiny = 1e-300;
    let mut f = tiny;
    let mut c = f;
    let mut d = 0.0;
    for i in 1..300 {
        let a = if i == 1 { 1.0 } else { (i - 1) as f64 / 2.0 };
        let b = x;
        d = b + a * d;
        if d == 0.0 {
            d = tiny;
        }
        c = b + a / c;
        if c == 0.0 {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    (-x * x).exp() / std::f64::consts::PI.sqrt() * f
}

/// One randomly generated selection problem, expressed in plain arrays so the
/// oracle never touches the library types.
#[derive(Debug, Clone)]
pub struct SelectionInstance {
    pub node_count: usize,
    pub fragment_count: usize,
    pub owner: usize,
    /// `entries[j][k]`; exactly 1.0 marks a sentinel, candidates are small.
    pub entries: Vec<Vec<f64>>,
    /// Measured latency per peer, seconds; the owner's slot is 0.
    pub deltas: Vec<f64>,
    /// Measurement staleness per peer, steps.
    pub ages: Vec<u64>,
    pub step: u64,
    pub c: f64,
}

pub fn random_selection_instance(rng: &mut ChaCha8Rng) -> SelectionInstance {
    let node_count = rng.gen_range(2..=20);
    let fragment_count = rng.gen_range(1..=10);
    let owner = rng.gen_range(0..node_count);
    let step = 10u64;
    let mut entries = vec![vec![1.0; fragment_count]; node_count];
    let mut deltas = vec![0.0; node_count];
    let mut ages = vec![0u64; node_count];
    for j in 0..node_count {
        if j == owner {
            continue;
        }
        deltas[j] = rng.gen_range(0.001..0.5);
        ages[j] = rng.gen_range(0..=step);
        for k in 0..fragment_count {
            if rng.gen_bool(0.6) {
                // Log-uniform in [1e-9, 1e-4]: small enough that a 1e3
                // rescale stays below the sentinel.
                let exponent = rng.gen_range(-9.0..-4.0f64);
                entries[j][k] = 10f64.powf(exponent);
            }
        }
    }
    SelectionInstance {
        node_count,
        fragment_count,
        owner,
        entries,
        deltas,
        ages,
        step,
        c: rng.gen_range(0.1..2.0),
    }
}

/// Exhaustive argmax over the instance, reimplementing the selection rules
/// (chi descending, then larger delta, smaller fragment, smaller peer) as a
/// plain scan.
pub fn oracle_select(instance: &SelectionInstance) -> Option<(usize, usize)> {
    let mut best: Option<(f64, f64, usize, usize)> = None;
    for j in 0..instance.node_count {
        if j == instance.owner {
            continue;
        }
        for k in 0..instance.fragment_count {
            let p = instance.entries[j][k];
            if p >= 1.0 {
                continue;
            }
            let chi =
                (-instance.c * instance.ages[j] as f64 * instance.deltas[j]).exp() / p;
            let delta = instance.deltas[j];
            let candidate = (chi, delta, k, j);
            let wins = match best {
                None => true,
                Some((best_chi, best_delta, best_k, best_j)) => {
                    if chi != best_chi {
                        chi > best_chi
                    } else if delta != best_delta {
                        delta > best_delta
                    } else if k != best_k {
                        k < best_k
                    } else {
                        j < best_j
                    }
                }
            };
            if wins {
                best = Some(candidate);
            }
        }
    }
    best.map(|(_, _, k, j)| (j, k))
}

/// Materialises the instance into library types for the production path.
pub fn instance_matrix_and_view(instance: &SelectionInstance) -> (PriorityMatrix, LatencyView) {
    let mut matrix = PriorityMatrix::all_ones(
        NodeId(instance.owner),
        instance.node_count,
        instance.fragment_count,
    );
    let mut view = LatencyView::new(NodeId(instance.owner));
    for j in 0..instance.node_count {
        if j == instance.owner {
            continue;
        }
        let measured_at = instance.step - instance.ages[j];
        view.record(NodeId(j), instance.deltas[j], measured_at)
            .unwrap();
        for k in 0..instance.fragment_count {
            matrix.set_entry(NodeId(j), FragmentId(k), instance.entries[j][k]);
        }
    }
    (matrix, view)
}

/// Direct-convolution implementation of the same undecimated filter bank:
/// detail kernel `[-1/2, 1, -1/2]` and update kernel `[1/4, _, 1/4]` at hole
/// distance `2^(level-1)`, applied to physically extended copies.
pub fn convolution_decompose(samples: &[f64], levels: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    fn extended(data: &[f64], pad: usize) -> Vec<f64> {
        // Half-sample symmetric extension, materialised.
        let len = data.len();
        let mut out = Vec::with_capacity(len + 2 * pad);
        for i in 0..pad {
            out.push(data[pad - 1 - i]);
        }
        out.extend_from_slice(data);
        for i in 0..pad {
            out.push(data[len - 1 - i]);
        }
        out
    }

    let mut details = Vec::with_capacity(levels);
    let mut approx = samples.to_vec();
    for level in 1..=levels {
        let hole = 1usize << (level - 1);
        let len = approx.len();
        let padded = extended(&approx, hole);
        let mut detail = vec![0.0; len];
        let detail_kernel = [(-(hole as isize), -0.5), (0, 1.0), (hole as isize, -0.5)];
        for n in 0..len {
            let mut acc = 0.0;
            for (offset, weight) in detail_kernel {
                acc += weight * padded[(n as isize + hole as isize + offset) as usize];
            }
            detail[n] = acc;
        }
        let padded_detail = extended(&detail, hole);
        let update_kernel = [(-(hole as isize), 0.25), (hole as isize, 0.25)];
        let mut next = vec![0.0; len];
        for n in 0..len {
            let mut acc = approx[n];
            for (offset, weight) in update_kernel {
                acc += weight * padded_detail[(n as isize + hole as isize + offset) as usize];
            }
            next[n] = acc;
        }
        details.push(detail);
        approx = next;
    }
    (details, approx)
}

/// Central finite-difference gradient of the full-BPTT training loss with
/// respect to every weight.
pub fn finite_difference_gradients(
    net: &RecurrentPredictor,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    epsilon: f64,
) -> Vec<f64> {
    let base = net.flat_weights();
    let mut grads = vec![0.0; base.len()];
    for i in 0..base.len() {
        let mut plus = net.clone();
        let mut weights = base.clone();
        weights[i] += epsilon;
        plus.set_flat_weights(&weights).unwrap();
        let loss_plus = plus.evaluate_loss(inputs, targets).unwrap();

        let mut minus = net.clone();
        weights[i] = base[i] - epsilon;
        minus.set_flat_weights(&weights).unwrap();
        let loss_minus = minus.evaluate_loss(inputs, targets).unwrap();

        grads[i] = (loss_plus - loss_minus) / (2.0 * epsilon);
    }
    grads
}

/// Seeded RNG for test data.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform random series in [-1, 1].
pub fn random_series(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Scenario family for the forecast-benefit experiment.
///
/// Node 0 holds both fragments. A large pool of "common" requesters wants
/// only fragment 0 and spreads it among themselves over slow internal links,
/// so fragment 0 stays the statistically better send for a long while. A
/// small disjoint pool wants only fragment 1, whose extra seeders (slow,
/// never-completing decorations) churn offline on a linear schedule. The
/// forecaster sees fragment 1's seeder decay (and fragment 0's growth)
/// coming and flips node 0's choice ahead of the measured crossover.
#[derive(Debug, Clone)]
pub struct DecaySpec {
    pub common_requesters: usize,
    pub q_requesters: usize,
    pub decorations: usize,
    pub churn_start: u64,
    pub churn_every: u64,
    pub steps: u64,
    pub seed: u64,
    pub forecast: bool,
    pub horizon: usize,
    pub forecast_interval: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub levels: usize,
    pub max_parallel_sends: usize,
}

impl Default for DecaySpec {
    fn default() -> Self {
        Self {
            common_requesters: 36,
            q_requesters: 6,
            decorations: 16,
            churn_start: 4,
            churn_every: 1,
            steps: 48,
            seed: 0,
            forecast: false,
            horizon: 8,
            forecast_interval: 2,
            epochs: 800,
            learning_rate: 0.08,
            hidden: 6,
            levels: 1,
            max_parallel_sends: 1,
        }
    }
}

/// The decaying fragment's index in [`decaying_seeders_scenario`].
pub const DECAYING_FRAGMENT: usize = 1;

pub fn decaying_seeders_scenario(spec: &DecaySpec) -> swarmdiff::engine::Scenario {
    use swarmdiff::engine::{ChurnAction, ChurnEvent, Params, Scenario, SCHEMA_VERSION};
    use swarmdiff::scheduler::ReachTimeMode;

    let fragments = 2usize;
    let q = DECAYING_FRAGMENT;
    let protagonist = 0usize;
    let first_common = 1usize;
    let first_q = first_common + spec.common_requesters;
    let first_deco = first_q + spec.q_requesters;
    let nodes = first_deco + spec.decorations;

    let mut rng = rng(spec.seed.wrapping_mul(0x9E37).wrapping_add(17));
    let is_deco = |i: usize| i >= first_deco;
    let is_common = |i: usize| (first_common..first_q).contains(&i);

    let mut latency_ms = vec![vec![0.0; nodes]; nodes];
    for i in 0..nodes {
        for j in 0..nodes {
            if i == j {
                continue;
            }
            latency_ms[i][j] = if is_deco(i) {
                // Decoration sends never complete within the run.
                rng.gen_range(4800.0..5200.0)
            } else if is_common(i) && is_common(j) {
                // Fragment 0 spreads pool-internally, but slowly.
                rng.gen_range(480.0..560.0)
            } else {
                rng.gen_range(100.0..150.0)
            };
        }
    }

    let mut ownership = vec![vec![0u8; fragments]; nodes];
    ownership[protagonist] = vec![1, 1];
    for d in 0..spec.decorations {
        ownership[first_deco + d][q] = 1;
    }

    let mut requests: Vec<Vec<usize>> = vec![Vec::new(); fragments];
    for i in 0..spec.common_requesters {
        requests[0].push(first_common + i);
    }
    for i in 0..spec.q_requesters {
        requests[q].push(first_q + i);
    }

    let churn = (0..spec.decorations)
        .map(|d| ChurnEvent {
            step: spec.churn_start + d as u64 * spec.churn_every,
            node: first_deco + d,
            action: ChurnAction::Offline,
        })
        .collect();

    Scenario {
        schema_version: SCHEMA_VERSION,
        node_count: nodes,
        fragment_count: fragments,
        latency_ms,
        ownership,
        requests,
        churn,
        params: Params {
            seed: spec.seed,
            steps: spec.steps,
            forecast_enabled: spec.forecast,
            forecast_interval: spec.forecast_interval,
            horizon: spec.horizon,
            wavelet_levels: spec.levels,
            hidden_size: spec.hidden,
            forecast_epochs: spec.epochs,
            forecast_learning_rate: spec.learning_rate,
            max_parallel_sends: spec.max_parallel_sends,
            reach_time_mode: ReachTimeMode::Literal,
            ..Params::default()
        },
    }
}

/// Instance generator that draws from tiny value pools so exact urgency ties
/// across peers and fragments actually occur, exercising the full
/// tie-breaking chain.
pub fn tie_prone_selection_instance(rng: &mut ChaCha8Rng) -> SelectionInstance {
    let node_count = rng.gen_range(2..=8);
    let fragment_count = rng.gen_range(1..=4);
    let owner = rng.gen_range(0..node_count);
    let step = 4u64;
    let deltas_pool = [0.01, 0.02];
    let entries_pool = [0.25, 0.5, 1.0];
    let mut entries = vec![vec![1.0; fragment_count]; node_count];
    let mut deltas = vec![0.0; node_count];
    let mut ages = vec![0u64; node_count];
    for j in 0..node_count {
        if j == owner {
            continue;
        }
        deltas[j] = deltas_pool[rng.gen_range(0..deltas_pool.len())];
        ages[j] = if rng.gen_bool(0.5) { 0 } else { 3 };
        for k in 0..fragment_count {
            entries[j][k] = entries_pool[rng.gen_range(0..entries_pool.len())];
        }
    }
    SelectionInstance {
        node_count,
        fragment_count,
        owner,
        entries,
        deltas,
        ages,
        step,
        c: 0.5,
    }
}
