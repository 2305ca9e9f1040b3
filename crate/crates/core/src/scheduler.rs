//! Per-node fragment scheduling.
//!
//! Each node maintains a dense priority matrix of diffusion probabilities
//! over (peer, fragment) pairs, with sentinel entries fixed at 1 for pairs
//! that are not transfer candidates (self, peers not queued for the
//! fragment, completed transfers, fragments the node does not hold). The
//! most urgent pair maximises the staleness-decayed urgency
//! `chi = exp(-c * age * delta) / P`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffusion::{
    diffusion_probability, permeability, permeability_prefactor, DiffusionProbability,
    FragmentId, FragmentSwarmStats,
};
use crate::error::{Error, Result};
use crate::metric::{staleness, LatencyView, NodeId, OrderedPeerList};

/// How many terms of the ordered-list prefix the reach-time sum uses.
///
/// `Served` counts the peers served so far for the fragment; `Literal`
/// follows the written summation bound and uses the global step counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReachTimeMode {
    #[default]
    Served,
    Literal,
}

impl fmt::Display for ReachTimeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReachTimeMode::Served => write!(f, "served"),
            ReachTimeMode::Literal => write!(f, "literal"),
        }
    }
}

impl FromStr for ReachTimeMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "served" => Ok(ReachTimeMode::Served),
            "literal" => Ok(ReachTimeMode::Literal),
            other => Err(format!("unknown reach_time_mode {other:?}")),
        }
    }
}

/// Cumulative time a fragment has already spent reaching peers, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ReachTime(f64);

impl ReachTime {
    pub fn seconds(self) -> f64 {
        self.0
    }
}

/// Prefix sum of the owner's latencies over the fragment's ordered peer list.
///
/// The first term is the owner's zero self-distance, so the sum starts
/// contributing from the first real peer. With `terms = 0` (nothing served
/// yet) the smallest latency in the owner's full view is returned instead,
/// keeping the elapsed time positive for the kernel prefactor. `terms` is
/// capped at the end of the restricted list.
pub fn reach_time(
    view: &LatencyView,
    restricted: &OrderedPeerList,
    terms: usize,
) -> Result<ReachTime> {
    if restricted.len() <= 1 {
        return Err(Error::NoInterestedPeers);
    }
    let last = terms.min(restricted.len() - 1);
    let mut sum = 0.0;
    for id in &restricted.sequence()[..=last] {
        sum += view.delta(*id)?;
    }
    if sum > 0.0 {
        Ok(ReachTime(sum))
    } else {
        // The restricted list held at least one real peer, so the view has
        // at least one positive latency to fall back on.
        let floor = view
            .min_peer_delta()
            .expect("view contains the restricted peers");
        Ok(ReachTime(floor))
    }
}

/// Staleness-decayed urgency of sending a fragment to a peer.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Urgency(f64);

impl Urgency {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// `chi = exp(-c * step_age * delta) / P`. The age is the staleness of the
/// latency measurement, so fresh measurements weigh the distance fully and
/// stale ones gradually stop binding the choice to it.
pub fn urgency(p: DiffusionProbability, delta: f64, step_age: u64, c: f64) -> Urgency {
    debug_assert!(delta > 0.0);
    debug_assert!(c > 0.0);
    Urgency((-c * step_age as f64 * delta).exp() / p.value())
}

/// Dense matrix of diffusion probabilities over (peer, fragment) for one
/// owner node. Sentinel entries are exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorityMatrix {
    owner: NodeId,
    nodes: usize,
    fragments: usize,
    entries: Vec<f64>,
}

impl PriorityMatrix {
    /// Matrix with every entry at the sentinel value 1.
    pub fn all_ones(owner: NodeId, nodes: usize, fragments: usize) -> Self {
        Self {
            owner,
            nodes,
            fragments,
            entries: vec![1.0; nodes * fragments],
        }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn fragment_count(&self) -> usize {
        self.fragments
    }

    pub fn entry(&self, peer: NodeId, fragment: FragmentId) -> f64 {
        self.entries[peer.index() * self.fragments + fragment.index()]
    }

    pub fn set_entry(&mut self, peer: NodeId, fragment: FragmentId, value: f64) {
        self.entries[peer.index() * self.fragments + fragment.index()] = value;
    }

    /// A pair is a transfer candidate iff its probability is below 1.
    pub fn is_candidate(&self, peer: NodeId, fragment: FragmentId) -> bool {
        self.entry(peer, fragment) < 1.0
    }

    /// Raw urgency values per (peer, fragment); sentinel entries map to 0,
    /// matching the convention that a served pair's urgency drops to zero.
    pub fn urgencies(&self, view: &LatencyView, step: u64, c: f64) -> Vec<Vec<f64>> {
        let mut rows = vec![vec![0.0; self.fragments]; self.nodes];
        for j in 0..self.nodes {
            let peer = NodeId(j);
            for k in 0..self.fragments {
                let fragment = FragmentId(k);
                let p = self.entry(peer, fragment);
                if p >= 1.0 {
                    continue;
                }
                let (Ok(delta), Ok(age)) = (view.delta(peer), staleness(view, peer, step)) else {
                    continue;
                };
                let probability = DiffusionProbability::new(p).expect("entry in (0, 1)");
                rows[j][k] = urgency(probability, delta, age, c).value();
            }
        }
        rows
    }
}

/// Everything a node needs to rebuild its priority matrix from a consistent
/// snapshot of the swarm.
pub struct ScheduleContext<'a> {
    pub owner: NodeId,
    pub node_count: usize,
    pub fragment_count: usize,
    /// Fragments the owner currently holds.
    pub owned: &'a BTreeSet<FragmentId>,
    /// Per-fragment permeability; fragments without an entry are inert and
    /// keep their column at 1.
    pub permeability: &'a BTreeMap<FragmentId, f64>,
    pub view: &'a LatencyView,
    /// Per-fragment set of peers currently queued for the fragment.
    pub queues: &'a [BTreeSet<NodeId>],
    /// Pairs the owner has already completed transferring.
    pub served: &'a BTreeSet<(NodeId, FragmentId)>,
    /// Per-fragment count of peers the owner has served, for the reach-time
    /// prefix length.
    pub served_counts: &'a [usize],
    pub reach_time_mode: ReachTimeMode,
    pub step: u64,
}

/// Permeability per fragment from measured swarm stats; fragments whose
/// swarm is empty are skipped and treated as inert.
pub fn fragment_permeabilities(
    stats: &BTreeMap<FragmentId, FragmentSwarmStats>,
) -> BTreeMap<FragmentId, f64> {
    stats
        .iter()
        .filter_map(|(id, s)| permeability(s).ok().map(|d| (*id, d)))
        .collect()
}

/// Rebuilds the owner's priority matrix for the current step.
///
/// Entries stay at 1 for the owner's own row, for fragments the owner does
/// not hold, for peers not queued for the fragment and for already-served
/// pairs; every other entry carries the diffusion probability for the
/// fragment's permeability, the owner's reach time and the measured latency.
pub fn rebuild_matrix(ctx: &ScheduleContext<'_>) -> PriorityMatrix {
    let mut matrix = PriorityMatrix::all_ones(ctx.owner, ctx.node_count, ctx.fragment_count);
    let ordered = crate::metric::ordered_peers(ctx.view);

    for k in 0..ctx.fragment_count {
        let fragment = FragmentId(k);
        if !ctx.owned.contains(&fragment) {
            continue;
        }
        let Some(&permeability) = ctx.permeability.get(&fragment) else {
            continue;
        };
        let queue = &ctx.queues[k];
        if queue.is_empty() {
            continue;
        }

        // The ordered set for this fragment: peers interested in it this
        // epoch, i.e. still queued or already served by the owner.
        let mut interested: BTreeSet<NodeId> = queue.clone();
        interested.extend(
            ctx.served
                .iter()
                .filter(|(_, f)| *f == fragment)
                .map(|(peer, _)| *peer),
        );
        let restricted = ordered.restricted_to(&interested);
        let terms = match ctx.reach_time_mode {
            ReachTimeMode::Served => ctx.served_counts[k],
            ReachTimeMode::Literal => ctx.step as usize,
        };
        let Ok(elapsed) = reach_time(ctx.view, &restricted, terms) else {
            continue;
        };
        let Ok(prefactor) = permeability_prefactor(permeability, elapsed.seconds()) else {
            continue;
        };

        for &peer in queue {
            if peer == ctx.owner || ctx.served.contains(&(peer, fragment)) {
                continue;
            }
            let Ok(delta) = ctx.view.delta(peer) else {
                continue;
            };
            if let Ok(p) = diffusion_probability(prefactor, delta) {
                matrix.set_entry(peer, fragment, p.value());
            }
        }
    }
    matrix
}

/// The winning (peer, fragment) pair of the urgency argmax.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub peer: NodeId,
    pub fragment: FragmentId,
    pub chi: Urgency,
}

/// Picks the pair maximising the urgency over all candidate entries.
///
/// Ties are broken towards the larger latency first (distant peers are
/// compensated for the longer transfer ahead), then the smaller fragment
/// index, then the smaller peer index. Returns `None` when every entry is at
/// the sentinel value, i.e. there is nothing to send.
pub fn select_most_urgent(
    matrix: &PriorityMatrix,
    view: &LatencyView,
    step: u64,
    c: f64,
) -> Option<Selection> {
    let mut best: Option<(Selection, f64)> = None;
    for j in 0..matrix.node_count() {
        let peer = NodeId(j);
        if peer == matrix.owner() {
            continue;
        }
        for k in 0..matrix.fragment_count() {
            let fragment = FragmentId(k);
            let p = matrix.entry(peer, fragment);
            if p >= 1.0 {
                continue;
            }
            let (Ok(delta), Ok(age)) = (view.delta(peer), staleness(view, peer, step)) else {
                continue;
            };
            let probability = DiffusionProbability::new(p).expect("entry in (0, 1)");
            let chi = urgency(probability, delta, age, c);
            let candidate = Selection { peer, fragment, chi };
            let better = match &best {
                None => true,
                Some((current, current_delta)) => {
                    match chi.value().partial_cmp(&current.chi.value()).expect("finite") {
                        std::cmp::Ordering::Greater => true,
                        std::cmp::Ordering::Less => false,
                        std::cmp::Ordering::Equal => {
                            match delta.partial_cmp(current_delta).expect("finite") {
                                std::cmp::Ordering::Greater => true,
                                std::cmp::Ordering::Less => false,
                                std::cmp::Ordering::Equal => {
                                    (fragment, peer) < (current.fragment, current.peer)
                                }
                            }
                        }
                    }
                }
            };
            if better {
                best = Some((candidate, delta));
            }
        }
    }
    best.map(|(selection, _)| selection)
}

/// Ranks the fragments a node could request, rarest (highest permeability)
/// first; ties prefer the smaller fragment index.
pub fn request_ranking(
    held: &BTreeSet<FragmentId>,
    stats: &BTreeMap<FragmentId, FragmentSwarmStats>,
) -> Vec<(FragmentId, f64)> {
    let mut ranked: Vec<(FragmentId, f64)> = stats
        .iter()
        .filter(|(id, s)| !held.contains(id) && s.users_total() >= 1)
        .filter_map(|(id, s)| permeability(s).ok().map(|d| (*id, d)))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("permeability is finite")
            .then(a.0.cmp(&b.0))
    });
    ranked
}

/// The single most valuable fragment to ask for, or `None` when the node
/// already holds everything that has a swarm.
pub fn select_fragment_to_request(
    held: &BTreeSet<FragmentId>,
    stats: &BTreeMap<FragmentId, FragmentSwarmStats>,
) -> Option<FragmentId> {
    request_ranking(held, stats).first().map(|(id, _)| *id)
}
