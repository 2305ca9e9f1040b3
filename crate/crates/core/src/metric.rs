//! Node population as a finite metric-like space under network latency.
//!
//! Every node keeps its own measured view of the latencies towards its peers
//! (no symmetry is assumed: the value i measures for j may differ from the
//! value j measures for i) and derives from it an ordered peer list with
//! itself in front.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of a node, dense in `[0, node_count)` within one scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Ground-truth one-way latencies between all node pairs, in seconds.
///
/// The diagonal is zero, every off-diagonal entry is positive, and the matrix
/// is not required to be symmetric.
#[derive(Debug, Clone)]
pub struct LatencyTable {
    seconds: Vec<Vec<f64>>,
}

impl LatencyTable {
    pub fn from_seconds(seconds: Vec<Vec<f64>>) -> Result<Self> {
        let n = seconds.len();
        for (i, row) in seconds.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidScenario {
                    violations: vec![format!(
                        "latency row {i} has {} entries, expected {n}",
                        row.len()
                    )],
                });
            }
            for (j, &delta) in row.iter().enumerate() {
                if i == j && delta != 0.0 {
                    return Err(Error::InvalidScenario {
                        violations: vec![format!("latency diagonal ({i},{j}) must be 0")],
                    });
                }
                if i != j && !(delta > 0.0 && delta.is_finite()) {
                    return Err(Error::InvalidScenario {
                        violations: vec![format!(
                            "latency ({i},{j}) must be positive and finite, got {delta}"
                        )],
                    });
                }
            }
        }
        Ok(Self { seconds })
    }

    /// Builds a table from a millisecond matrix, the unit scenario files use.
    pub fn from_millis(millis: &[Vec<f64>]) -> Result<Self> {
        let seconds = millis
            .iter()
            .map(|row| row.iter().map(|ms| ms / 1000.0).collect())
            .collect();
        Self::from_seconds(seconds)
    }

    pub fn node_count(&self) -> usize {
        self.seconds.len()
    }

    /// Ground-truth latency from `source` to `target`, in seconds.
    pub fn delta(&self, source: NodeId, target: NodeId) -> Result<f64> {
        let row = self
            .seconds
            .get(source.index())
            .ok_or(Error::UnknownNode(source.index()))?;
        row.get(target.index())
            .copied()
            .ok_or(Error::UnknownNode(target.index()))
    }
}

/// One latency sample: the measured delay and the step it was taken at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyMeasurement {
    pub delta: f64,
    pub measured_at: u64,
}

/// A node's own measured view of its latencies towards the other nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyView {
    owner: NodeId,
    entries: BTreeMap<NodeId, LatencyMeasurement>,
}

impl LatencyView {
    /// Creates a view containing only the owner's zero self-distance.
    pub fn new(owner: NodeId) -> Self {
        let mut entries = BTreeMap::new();
        entries.insert(
            owner,
            LatencyMeasurement {
                delta: 0.0,
                measured_at: 0,
            },
        );
        Self { owner, entries }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn record(&mut self, target: NodeId, delta: f64, step: u64) -> Result<()> {
        if target != self.owner && !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::NonPositive {
                name: "delta",
                value: delta,
            });
        }
        let delta = if target == self.owner { 0.0 } else { delta };
        self.entries.insert(
            target,
            LatencyMeasurement {
                delta,
                measured_at: step,
            },
        );
        Ok(())
    }

    pub fn contains(&self, target: NodeId) -> bool {
        self.entries.contains_key(&target)
    }

    pub fn measurement(&self, target: NodeId) -> Result<LatencyMeasurement> {
        self.entries
            .get(&target)
            .copied()
            .ok_or(Error::MissingLatency {
                owner: self.owner.index(),
                target: target.index(),
            })
    }

    /// Measured latency towards `target`, in seconds.
    pub fn delta(&self, target: NodeId) -> Result<f64> {
        Ok(self.measurement(target)?.delta)
    }

    /// Smallest measured peer latency, the floor used when no transfer has
    /// happened yet and a positive elapsed time is still needed.
    pub fn min_peer_delta(&self) -> Option<f64> {
        self.entries
            .iter()
            .filter(|(id, _)| **id != self.owner)
            .map(|(_, m)| m.delta)
            .min_by(|a, b| a.partial_cmp(b).expect("latencies are finite"))
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.entries.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A node's peers ordered by ascending measured latency, the node itself in
/// front. Ties are broken by ascending node id so the order is reproducible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderedPeerList {
    owner: NodeId,
    sequence: Vec<NodeId>,
}

impl OrderedPeerList {
    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn sequence(&self) -> &[NodeId] {
        &self.sequence
    }

    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    /// Keeps the owner plus the members of `keep`, preserving latency order.
    pub fn restricted_to(&self, keep: &std::collections::BTreeSet<NodeId>) -> OrderedPeerList {
        let sequence = self
            .sequence
            .iter()
            .copied()
            .filter(|id| *id == self.owner || keep.contains(id))
            .collect();
        OrderedPeerList {
            owner: self.owner,
            sequence,
        }
    }
}

/// Measures the latency from the view's owner towards `target` and records it.
///
/// The value comes from the scenario's ground-truth table, optionally scaled
/// by a multiplicative jitter factor drawn uniformly from
/// `[1 - jitter, 1 + jitter]`. The owner's self-distance is always zero and
/// consumes no random draw.
pub fn measure_latency<R: Rng + ?Sized>(
    table: &LatencyTable,
    jitter: f64,
    rng: &mut R,
    view: &mut LatencyView,
    target: NodeId,
    step: u64,
) -> Result<f64> {
    let source = view.owner();
    let base = table.delta(source, target)?;
    let delta = if source == target {
        0.0
    } else if jitter > 0.0 {
        base * rng.gen_range(1.0 - jitter..=1.0 + jitter)
    } else {
        base
    };
    view.record(target, delta, step)?;
    Ok(delta)
}

/// Builds the latency-ordered peer list from a view.
pub fn ordered_peers(view: &LatencyView) -> OrderedPeerList {
    let mut annotated: Vec<(f64, NodeId)> = view
        .nodes()
        .map(|id| (view.delta(id).expect("node taken from the view"), id))
        .collect();
    annotated.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("latencies are finite")
            .then(a.1.cmp(&b.1))
    });
    OrderedPeerList {
        owner: view.owner(),
        sequence: annotated.into_iter().map(|(_, id)| id).collect(),
    }
}

/// Steps elapsed since the view's measurement of `target` was taken.
pub fn staleness(view: &LatencyView, target: NodeId, step: u64) -> Result<u64> {
    let measurement = view.measurement(target)?;
    debug_assert!(
        measurement.measured_at <= step,
        "measurement from the future"
    );
    Ok(step.saturating_sub(measurement.measured_at))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table_3x3() -> LatencyTable {
        LatencyTable::from_seconds(vec![
            vec![0.0, 0.005, 0.003],
            vec![0.005, 0.0, 0.004],
            vec![0.003, 0.004, 0.0],
        ])
        .unwrap()
    }

    #[test]
    fn self_distance_is_zero() {
        let table = table_3x3();
        let mut view = LatencyView::new(NodeId(1));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = measure_latency(&table, 0.0, &mut rng, &mut view, NodeId(1), 7).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(view.delta(NodeId(1)).unwrap(), 0.0);
    }

    #[test]
    fn ground_truth_passes_through_without_jitter() {
        let table = LatencyTable::from_millis(&[vec![0.0, 80.0], vec![80.0, 0.0]]).unwrap();
        let mut view = LatencyView::new(NodeId(0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = measure_latency(&table, 0.0, &mut rng, &mut view, NodeId(1), 0).unwrap();
        assert_eq!(d, 0.080);
    }

    #[test]
    fn jitter_stays_in_band_and_matches_a_redraw() {
        let table = LatencyTable::from_millis(&[vec![0.0, 80.0], vec![80.0, 0.0]]).unwrap();
        let mut view = LatencyView::new(NodeId(0));
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let d = measure_latency(&table, 0.1, &mut rng, &mut view, NodeId(1), 0).unwrap();
        assert!((0.072..=0.088).contains(&d), "value {d} out of band");

        // Independent redraw with the same seeded generator reproduces it.
        let mut oracle_rng = ChaCha8Rng::seed_from_u64(1234);
        let factor = oracle_rng.gen_range(0.9..=1.1);
        assert_eq!(d, 0.080 * factor);
    }

    #[test]
    fn unknown_node_is_a_config_defect() {
        let table = table_3x3();
        let mut view = LatencyView::new(NodeId(0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = measure_latency(&table, 0.0, &mut rng, &mut view, NodeId(9), 0).unwrap_err();
        assert!(matches!(err, Error::UnknownNode(9)));
    }

    #[test]
    fn ordered_peers_sorts_by_delta_self_first() {
        let mut view = LatencyView::new(NodeId(0));
        view.record(NodeId(1), 0.005, 0).unwrap();
        view.record(NodeId(2), 0.003, 0).unwrap();
        let list = ordered_peers(&view);
        assert_eq!(list.sequence(), &[NodeId(0), NodeId(2), NodeId(1)]);
    }

    #[test]
    fn equal_deltas_break_ties_by_ascending_id() {
        let mut view = LatencyView::new(NodeId(2));
        for id in [0usize, 1, 3, 4] {
            view.record(NodeId(id), 0.010, 0).unwrap();
        }
        let list = ordered_peers(&view);
        assert_eq!(
            list.sequence(),
            &[NodeId(2), NodeId(0), NodeId(1), NodeId(3), NodeId(4)]
        );
    }

    #[test]
    fn staleness_counts_steps_since_measurement() {
        let mut view = LatencyView::new(NodeId(0));
        view.record(NodeId(1), 0.010, 0).unwrap();
        assert_eq!(staleness(&view, NodeId(1), 0).unwrap(), 0);
        view.record(NodeId(1), 0.010, 3).unwrap();
        assert_eq!(staleness(&view, NodeId(1), 7).unwrap(), 4);
        view.record(NodeId(1), 0.011, 7).unwrap();
        assert_eq!(staleness(&view, NodeId(1), 9).unwrap(), 2);
    }

    #[test]
    fn staleness_of_unknown_target_errors() {
        let view = LatencyView::new(NodeId(0));
        assert!(staleness(&view, NodeId(5), 1).is_err());
    }

    #[test]
    fn restriction_keeps_owner_and_order() {
        let mut view = LatencyView::new(NodeId(0));
        view.record(NodeId(1), 0.005, 0).unwrap();
        view.record(NodeId(2), 0.003, 0).unwrap();
        view.record(NodeId(3), 0.009, 0).unwrap();
        let list = ordered_peers(&view);
        let keep = [NodeId(1), NodeId(3)].into_iter().collect();
        let restricted = list.restricted_to(&keep);
        assert_eq!(restricted.sequence(), &[NodeId(0), NodeId(1), NodeId(3)]);
    }
}
