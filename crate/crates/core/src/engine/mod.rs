//! Discrete-time swarm simulation.
//!
//! Each step runs a fixed phase order: churn, latency refresh, forecast
//! refresh, per-node scheduling against one shared snapshot, transfer
//! progress, swarm accounting, metric logging. All randomness flows from the
//! scenario seed through dedicated streams, so a run is a pure function of
//! its scenario.

mod scenario;

pub use scenario::{ChurnAction, ChurnEvent, ForecastBlend, Params, Scenario, SCHEMA_VERSION};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use log::debug;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{FragmentId, FragmentSwarmStats};
use crate::error::{Error, Result};
use crate::forecast::{altered_permeability, AlteredSwarmStats, StatsForecaster};
use crate::metric::{measure_latency, LatencyTable, LatencyView, NodeId};
use crate::scheduler::{
    fragment_permeabilities, rebuild_matrix, select_most_urgent, PriorityMatrix, ScheduleContext,
    Selection,
};

/// Simulated wall time of one step, binding latencies to transfer durations.
pub const STEP_SECONDS: f64 = 0.1;

const MEASURE_SEED_SALT: u64 = 0x006d_6561_7375_7265;
const FORECAST_SEED_SALT: u64 = 0x0066_6f72_6563_6173;

/// Which node holds which fragment. Cells only ever flip from false to true;
/// churn hides a node's copies from the availability counts but never
/// deletes them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OwnershipMatrix {
    nodes: usize,
    fragments: usize,
    cells: Vec<bool>,
}

impl OwnershipMatrix {
    pub fn new(nodes: usize, fragments: usize) -> Self {
        Self {
            nodes,
            fragments,
            cells: vec![false; nodes * fragments],
        }
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Self {
        let nodes = rows.len();
        let fragments = rows.first().map_or(0, Vec::len);
        let mut matrix = Self::new(nodes, fragments);
        for (i, row) in rows.iter().enumerate() {
            for (k, &cell) in row.iter().enumerate() {
                if cell != 0 {
                    matrix.cells[i * fragments + k] = true;
                }
            }
        }
        matrix
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn fragment_count(&self) -> usize {
        self.fragments
    }

    pub fn holds(&self, node: NodeId, fragment: FragmentId) -> bool {
        self.cells[node.index() * self.fragments + fragment.index()]
    }

    fn grant(&mut self, node: NodeId, fragment: FragmentId) {
        self.cells[node.index() * self.fragments + fragment.index()] = true;
    }

    pub fn fragments_of(&self, node: NodeId) -> BTreeSet<FragmentId> {
        (0..self.fragments)
            .filter(|&k| self.holds(node, FragmentId(k)))
            .map(FragmentId)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferStatus {
    Launched,
    Completed,
    Aborted,
}

impl TransferStatus {
    fn label(self) -> &'static str {
        match self {
            TransferStatus::Launched => "launched",
            TransferStatus::Completed => "completed",
            TransferStatus::Aborted => "aborted",
        }
    }
}

/// One line of the transfer ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransferRecord {
    pub step: u64,
    pub status: TransferStatus,
    pub source: NodeId,
    pub destination: NodeId,
    pub fragment: FragmentId,
    pub duration_steps: u64,
}

#[derive(Debug, Clone)]
struct ActiveTransfer {
    source: NodeId,
    destination: NodeId,
    fragment: FragmentId,
    started_at: u64,
    duration: u64,
    remaining: u64,
}

/// Availability counters for one fragment at one logged instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FragmentAvailability {
    pub seeders: u64,
    pub users_total: u64,
    pub mean_share_ratio: f64,
}

/// Append-only record of a run: per-step availability, the observer node's
/// urgency matrices, and the transfer ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    node_count: usize,
    fragment_count: usize,
    observer: NodeId,
    /// Row 0 is the state at construction; row `s > 0` is the state after
    /// executing step `s - 1`.
    availability: Vec<Vec<FragmentAvailability>>,
    /// One matrix per executed step, `[peer][fragment]`, zero for sentinel
    /// entries and for steps where the observer was offline.
    chi: Vec<Vec<Vec<f64>>>,
    transfers: Vec<TransferRecord>,
}

impl MetricsLog {
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn fragment_count(&self) -> usize {
        self.fragment_count
    }

    pub fn observer(&self) -> NodeId {
        self.observer
    }

    /// Number of executed steps recorded in the log.
    pub fn steps_logged(&self) -> usize {
        self.chi.len()
    }

    /// Availability of a fragment at a logged instant; instant 0 is the
    /// initial state, instant `s` the state after step `s - 1`.
    pub fn availability(&self, fragment: FragmentId, instant: usize) -> Result<FragmentAvailability> {
        let row = self
            .availability
            .get(instant)
            .ok_or(Error::StepOutOfRange {
                step: instant,
                len: self.availability.len(),
            })?;
        row.get(fragment.index())
            .copied()
            .ok_or(Error::UnknownFragment(fragment.index()))
    }

    pub fn chi_matrix(&self, step: usize) -> Result<&Vec<Vec<f64>>> {
        self.chi.get(step).ok_or(Error::StepOutOfRange {
            step,
            len: self.chi.len(),
        })
    }

    pub fn transfers(&self) -> &[TransferRecord] {
        &self.transfers
    }

    /// Step at which the first transfer of the fragment completed.
    pub fn first_transfer_step(&self, fragment: FragmentId) -> Option<u64> {
        self.transfers
            .iter()
            .find(|t| t.status == TransferStatus::Completed && t.fragment == fragment)
            .map(|t| t.step)
    }

    /// Deterministic byte dump used for replay comparison; identical runs
    /// produce identical bytes.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "log,{},{},{}",
            self.node_count, self.fragment_count, self.observer.index()
        );
        for (instant, row) in self.availability.iter().enumerate() {
            for (k, a) in row.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "avail,{instant},{k},{},{},{}",
                    a.seeders, a.users_total, a.mean_share_ratio
                );
            }
        }
        for (step, matrix) in self.chi.iter().enumerate() {
            for (j, row) in matrix.iter().enumerate() {
                for (k, value) in row.iter().enumerate() {
                    let _ = writeln!(out, "chi,{step},{j},{k},{value}");
                }
            }
        }
        for t in &self.transfers {
            let _ = writeln!(
                out,
                "transfer,{},{},{},{},{},{}",
                t.step,
                t.status.label(),
                t.source.index(),
                t.destination.index(),
                t.fragment.index(),
                t.duration_steps
            );
        }
        out.into_bytes()
    }

    /// Long-format availability curves, one line per (instant, fragment).
    pub fn availability_csv(&self) -> String {
        let mut out = String::from("step,fragment,seeders,users_total,mean_share_ratio\n");
        for (instant, row) in self.availability.iter().enumerate() {
            for (k, a) in row.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{instant},{k},{},{},{}",
                    a.seeders, a.users_total, a.mean_share_ratio
                );
            }
        }
        out
    }

    pub fn transfers_csv(&self) -> String {
        let mut out = String::from("step,event,source,destination,fragment,duration_steps\n");
        for t in &self.transfers {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                t.step,
                t.status.label(),
                t.source.index(),
                t.destination.index(),
                t.fragment.index(),
                t.duration_steps
            );
        }
        out
    }

    /// One step's urgency heatmap, rows = peers, columns = fragments. With
    /// `normalized` the matrix is scaled by its own maximum so the brightest
    /// cell is 1.
    pub fn chi_csv(&self, step: usize, normalized: bool) -> Result<String> {
        let matrix = self.chi_matrix(step)?;
        let max = matrix
            .iter()
            .flat_map(|row| row.iter().copied())
            .fold(0.0f64, f64::max);
        let scale = if normalized && max > 0.0 { max } else { 1.0 };
        let mut out = String::from("peer");
        for k in 0..self.fragment_count {
            let _ = write!(out, ",z{k}");
        }
        out.push('\n');
        for (j, row) in matrix.iter().enumerate() {
            let _ = write!(out, "{j}");
            for value in row {
                let _ = write!(out, ",{}", value / scale);
            }
            out.push('\n');
        }
        Ok(out)
    }
}

/// Per-node share-ratio accounting: maps (fragments held, fragments
/// requested or held) to the node's share ratio.
pub type ShareRatioPolicy = fn(held: usize, involved: usize) -> f64;

/// Default accounting: held over requested-or-held, zero for uninvolved
/// nodes.
pub fn held_over_involved(held: usize, involved: usize) -> f64 {
    if involved == 0 {
        0.0
    } else {
        (held as f64 / involved as f64).max(0.0)
    }
}

/// Execution options orthogonal to the scenario itself.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Fan the per-node scheduling phase out to worker threads. The merge is
    /// canonical, so output is bit-identical to the single-threaded run.
    pub parallel_scheduling: bool,
    /// Iterate the scheduling phase in this node order instead of ascending
    /// ids. Results are merged canonically; any permutation must produce the
    /// identical log. Exists to verify the two-phase step contract.
    pub scheduling_order: Option<Vec<usize>>,
    /// How a node's share ratio is computed for the mean-share-ratio stats.
    pub share_ratio_policy: ShareRatioPolicy,
    /// Node whose urgency matrices are logged each step.
    pub observer: NodeId,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            parallel_scheduling: false,
            scheduling_order: None,
            share_ratio_policy: held_over_involved,
            observer: NodeId(0),
        }
    }
}

struct FragmentHistory {
    users: Vec<f64>,
    seeders: Vec<f64>,
    share_ratio: Vec<f64>,
}

/// Live simulation state; advance it with [`SimState::step`].
pub struct SimState {
    scenario: Scenario,
    options: RunOptions,
    table: LatencyTable,
    next_step: u64,
    online: Vec<bool>,
    ownership: OwnershipMatrix,
    views: Vec<LatencyView>,
    wanted: Vec<BTreeSet<NodeId>>,
    served_pairs: Vec<BTreeSet<(NodeId, FragmentId)>>,
    served_counts: Vec<Vec<usize>>,
    in_flight: Vec<ActiveTransfer>,
    rng_measure: ChaCha8Rng,
    histories: Vec<FragmentHistory>,
    altered: BTreeMap<FragmentId, AlteredSwarmStats>,
    log: MetricsLog,
}

impl SimState {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        Self::with_options(scenario, RunOptions::default())
    }

    pub fn with_options(scenario: &Scenario, options: RunOptions) -> Result<Self> {
        scenario.validate()?;
        if options.observer.index() >= scenario.node_count {
            return Err(Error::UnknownNode(options.observer.index()));
        }
        if let Some(order) = &options.scheduling_order {
            let mut seen = vec![false; scenario.node_count];
            if order.len() != scenario.node_count
                || order.iter().any(|&i| {
                    if i >= scenario.node_count || seen[i] {
                        true
                    } else {
                        seen[i] = true;
                        false
                    }
                })
            {
                return Err(Error::InvalidScenario {
                    violations: vec!["scheduling_order is not a permutation of the nodes".into()],
                });
            }
        }

        let table = LatencyTable::from_millis(&scenario.latency_ms)?;
        let nodes = scenario.node_count;
        let fragments = scenario.fragment_count;
        let ownership = OwnershipMatrix::from_rows(&scenario.ownership);
        let wanted = scenario
            .requests
            .iter()
            .map(|ids| ids.iter().map(|&i| NodeId(i)).collect())
            .collect();

        let observer = options.observer;
        let mut state = Self {
            scenario: scenario.clone(),
            options,
            table,
            next_step: 0,
            online: vec![true; nodes],
            ownership,
            views: (0..nodes).map(|i| LatencyView::new(NodeId(i))).collect(),
            wanted,
            served_pairs: vec![BTreeSet::new(); nodes],
            served_counts: vec![vec![0; fragments]; nodes],
            in_flight: Vec::new(),
            rng_measure: ChaCha8Rng::seed_from_u64(scenario.params.seed ^ MEASURE_SEED_SALT),
            histories: (0..fragments)
                .map(|_| FragmentHistory {
                    users: Vec::new(),
                    seeders: Vec::new(),
                    share_ratio: Vec::new(),
                })
                .collect(),
            altered: BTreeMap::new(),
            log: MetricsLog {
                node_count: nodes,
                fragment_count: fragments,
                observer,
                availability: Vec::new(),
                chi: Vec::new(),
                transfers: Vec::new(),
            },
        };
        for node in 0..nodes {
            state.measure_node(node, 0);
        }
        let initial = state.availability_row(&state.swarm_stats());
        state.log.availability.push(initial);
        Ok(state)
    }

    /// Index of the next step to execute.
    pub fn current_step(&self) -> u64 {
        self.next_step
    }

    pub fn is_online(&self, node: NodeId) -> bool {
        self.online[node.index()]
    }

    pub fn fragments_held(&self, node: NodeId) -> BTreeSet<FragmentId> {
        self.ownership.fragments_of(node)
    }

    pub fn ownership(&self) -> &OwnershipMatrix {
        &self.ownership
    }

    pub fn metrics(&self) -> &MetricsLog {
        &self.log
    }

    pub fn into_metrics(self) -> MetricsLog {
        self.log
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn view(&self, node: NodeId) -> &LatencyView {
        &self.views[node.index()]
    }

    pub fn served_count(&self, node: NodeId, fragment: FragmentId) -> usize {
        self.served_counts[node.index()][fragment.index()]
    }

    pub fn served_pairs(&self, node: NodeId) -> &BTreeSet<(NodeId, FragmentId)> {
        &self.served_pairs[node.index()]
    }

    /// Peers currently queued for a fragment: requesters that are online,
    /// still lack it and are not already being served.
    pub fn queue(&self, fragment: FragmentId) -> BTreeSet<NodeId> {
        self.build_queues()
            .swap_remove(fragment.index())
    }

    /// The priority matrix a node would build against the current snapshot.
    pub fn priority_matrix(&self, node: NodeId) -> PriorityMatrix {
        let stats = self.swarm_stats();
        let permeability = self.scheduling_permeabilities(&stats);
        let queues = self.build_queues();
        let owned = self.ownership.fragments_of(node);
        rebuild_matrix(&ScheduleContext {
            owner: node,
            node_count: self.scenario.node_count,
            fragment_count: self.scenario.fragment_count,
            owned: &owned,
            permeability: &permeability,
            view: &self.views[node.index()],
            queues: &queues,
            served: &self.served_pairs[node.index()],
            served_counts: &self.served_counts[node.index()],
            reach_time_mode: self.scenario.params.reach_time_mode,
            step: self.next_step,
        })
    }

    /// Permeability per fragment as the schedulers currently see it.
    pub fn effective_permeabilities(&self) -> BTreeMap<FragmentId, f64> {
        self.scheduling_permeabilities(&self.swarm_stats())
    }

    fn measure_node(&mut self, node: usize, step: u64) {
        for target in 0..self.scenario.node_count {
            if target == node {
                continue;
            }
            measure_latency(
                &self.table,
                self.scenario.params.jitter,
                &mut self.rng_measure,
                &mut self.views[node],
                NodeId(target),
                step,
            )
            .expect("nodes come from the validated scenario");
        }
    }

    fn abort_transfers_involving(&mut self, node: usize, step: u64) {
        let node = NodeId(node);
        let mut keep = Vec::with_capacity(self.in_flight.len());
        for transfer in self.in_flight.drain(..) {
            if transfer.source == node || transfer.destination == node {
                self.log.transfers.push(TransferRecord {
                    step,
                    status: TransferStatus::Aborted,
                    source: transfer.source,
                    destination: transfer.destination,
                    fragment: transfer.fragment,
                    duration_steps: transfer.duration,
                });
            } else {
                keep.push(transfer);
            }
        }
        self.in_flight = keep;
    }

    /// Share ratio of one node over the torrent, per the configured policy.
    fn node_share_ratio(&self, node: NodeId) -> f64 {
        let held = (0..self.scenario.fragment_count)
            .filter(|&k| self.ownership.holds(node, FragmentId(k)))
            .count();
        let involved = (0..self.scenario.fragment_count)
            .filter(|&k| {
                self.ownership.holds(node, FragmentId(k)) || self.wanted[k].contains(&node)
            })
            .count();
        (self.options.share_ratio_policy)(held, involved)
    }

    /// Measured swarm stats over the online population.
    pub fn swarm_stats(&self) -> BTreeMap<FragmentId, FragmentSwarmStats> {
        let mut stats = BTreeMap::new();
        for k in 0..self.scenario.fragment_count {
            let fragment = FragmentId(k);
            let mut seeders = 0u64;
            let mut users = 0u64;
            let mut leech_ratios = Vec::new();
            for i in 0..self.scenario.node_count {
                if !self.online[i] {
                    continue;
                }
                let node = NodeId(i);
                let holds = self.ownership.holds(node, fragment);
                let wants = self.wanted[k].contains(&node);
                if holds {
                    seeders += 1;
                }
                if holds || wants {
                    users += 1;
                }
                if wants && !holds {
                    leech_ratios.push(self.node_share_ratio(node));
                }
            }
            let mean_share_ratio = if leech_ratios.is_empty() {
                0.0
            } else {
                leech_ratios.iter().sum::<f64>() / leech_ratios.len() as f64
            };
            stats.insert(
                fragment,
                FragmentSwarmStats::new(fragment, users, seeders, mean_share_ratio)
                    .expect("seeders counted within users"),
            );
        }
        stats
    }

    fn availability_row(
        &self,
        stats: &BTreeMap<FragmentId, FragmentSwarmStats>,
    ) -> Vec<FragmentAvailability> {
        (0..self.scenario.fragment_count)
            .map(|k| {
                let s = &stats[&FragmentId(k)];
                FragmentAvailability {
                    seeders: s.seeders(),
                    users_total: s.users_total(),
                    mean_share_ratio: s.mean_share_ratio(),
                }
            })
            .collect()
    }

    /// Current queues: wanted, online, still lacking, not already being
    /// served by an in-flight transfer.
    fn build_queues(&self) -> Vec<BTreeSet<NodeId>> {
        let being_served: BTreeSet<(NodeId, FragmentId)> = self
            .in_flight
            .iter()
            .map(|t| (t.destination, t.fragment))
            .collect();
        (0..self.scenario.fragment_count)
            .map(|k| {
                let fragment = FragmentId(k);
                self.wanted[k]
                    .iter()
                    .copied()
                    .filter(|&node| {
                        self.online[node.index()]
                            && !self.ownership.holds(node, fragment)
                            && !being_served.contains(&(node, fragment))
                    })
                    .collect()
            })
            .collect()
    }

    /// Permeability per fragment as the schedulers see it: measured stats,
    /// with forecast values substituted (or blended) when available.
    fn scheduling_permeabilities(
        &self,
        stats: &BTreeMap<FragmentId, FragmentSwarmStats>,
    ) -> BTreeMap<FragmentId, f64> {
        let mut map = fragment_permeabilities(stats);
        if !self.scenario.params.forecast_enabled {
            return map;
        }
        for (fragment, predicted) in &self.altered {
            let effective = match self.scenario.params.forecast_blend {
                ForecastBlend::Replace => *predicted,
                ForecastBlend::Mean => match stats.get(fragment) {
                    Some(current) => AlteredSwarmStats::from_raw(
                        *fragment,
                        (current.users_total() as f64 + predicted.users_total) / 2.0,
                        (current.seeders() as f64 + predicted.seeders) / 2.0,
                        (current.mean_share_ratio() + predicted.mean_share_ratio) / 2.0,
                    ),
                    None => *predicted,
                },
            };
            // A prediction of an empty swarm keeps the measured value.
            if let Ok(d) = altered_permeability(&effective) {
                map.insert(*fragment, d);
            }
        }
        map
    }

    fn refresh_forecast(&mut self) {
        let params = &self.scenario.params;
        let forecaster = StatsForecaster {
            levels: params.wavelet_levels,
            hidden_size: params.hidden_size,
            horizon: params.horizon,
            epochs: params.forecast_epochs,
            learning_rate: params.forecast_learning_rate,
            seed: params.seed ^ FORECAST_SEED_SALT,
        };
        self.altered.clear();
        for k in 0..self.scenario.fragment_count {
            let history = &self.histories[k];
            match forecaster.forecast_fragment(
                FragmentId(k),
                &history.users,
                &history.seeders,
                &history.share_ratio,
            ) {
                Ok(predicted) => {
                    self.altered.insert(FragmentId(k), predicted);
                }
                Err(Error::SeriesTooShort { .. }) => {}
                Err(err) => debug!("forecast for fragment {k} failed: {err}"),
            }
        }
    }

    fn node_proposals(
        &self,
        node: usize,
        queues: &[BTreeSet<NodeId>],
        permeability: &BTreeMap<FragmentId, f64>,
        capacity: usize,
        step: u64,
    ) -> Vec<Selection> {
        let owner = NodeId(node);
        let owned = self.ownership.fragments_of(owner);
        let mut matrix = rebuild_matrix(&ScheduleContext {
            owner,
            node_count: self.scenario.node_count,
            fragment_count: self.scenario.fragment_count,
            owned: &owned,
            permeability,
            view: &self.views[node],
            queues,
            served: &self.served_pairs[node],
            served_counts: &self.served_counts[node],
            reach_time_mode: self.scenario.params.reach_time_mode,
            step,
        });
        let mut picks = Vec::new();
        for _ in 0..capacity {
            let Some(selection) =
                select_most_urgent(&matrix, &self.views[node], step, self.scenario.params.c)
            else {
                break;
            };
            matrix.set_entry(selection.peer, selection.fragment, 1.0);
            picks.push(selection);
        }
        picks
    }

    fn observer_chi(
        &self,
        queues: &[BTreeSet<NodeId>],
        permeability: &BTreeMap<FragmentId, f64>,
        step: u64,
    ) -> Vec<Vec<f64>> {
        let observer = self.log.observer;
        if !self.online[observer.index()] {
            return vec![vec![0.0; self.scenario.fragment_count]; self.scenario.node_count];
        }
        let owned = self.ownership.fragments_of(observer);
        let matrix: PriorityMatrix = rebuild_matrix(&ScheduleContext {
            owner: observer,
            node_count: self.scenario.node_count,
            fragment_count: self.scenario.fragment_count,
            owned: &owned,
            permeability,
            view: &self.views[observer.index()],
            queues,
            served: &self.served_pairs[observer.index()],
            served_counts: &self.served_counts[observer.index()],
            reach_time_mode: self.scenario.params.reach_time_mode,
            step,
        });
        matrix.urgencies(&self.views[observer.index()], step, self.scenario.params.c)
    }

    /// Executes one step: churn, refreshes, scheduling, transfer progress,
    /// accounting, logging.
    pub fn step(&mut self) -> Result<()> {
        let tau = self.next_step;
        let params = self.scenario.params.clone();

        // (1) Churn.
        let events: Vec<ChurnEvent> = self
            .scenario
            .churn
            .iter()
            .copied()
            .filter(|e| e.step == tau)
            .collect();
        for event in events {
            match event.action {
                ChurnAction::Online => {
                    if !self.online[event.node] {
                        self.online[event.node] = true;
                        self.measure_node(event.node, tau);
                    }
                }
                ChurnAction::Offline => {
                    if self.online[event.node] {
                        self.online[event.node] = false;
                        self.abort_transfers_involving(event.node, tau);
                    }
                }
            }
        }

        // (2) Periodic latency refresh; step 0 uses the measurements taken
        // at construction.
        if tau > 0 && tau.is_multiple_of(params.refresh_interval) {
            for node in 0..self.scenario.node_count {
                if self.online[node] {
                    self.measure_node(node, tau);
                }
            }
        }

        // (3) Periodic forecast refresh.
        if params.forecast_enabled && tau.is_multiple_of(params.forecast_interval) {
            self.refresh_forecast();
        }

        // (4) Scheduling against one shared snapshot.
        let stats = self.swarm_stats();
        let permeability = self.scheduling_permeabilities(&stats);
        let queues = self.build_queues();
        let chi = self.observer_chi(&queues, &permeability, tau);

        let mut outgoing = vec![0usize; self.scenario.node_count];
        for transfer in &self.in_flight {
            outgoing[transfer.source.index()] += 1;
        }
        let order: Vec<usize> = match &self.options.scheduling_order {
            Some(order) => order.clone(),
            None => (0..self.scenario.node_count).collect(),
        };
        let eligible: Vec<(usize, usize)> = order
            .into_iter()
            .filter(|&node| self.online[node])
            .map(|node| {
                (
                    node,
                    params.max_parallel_sends.saturating_sub(outgoing[node]),
                )
            })
            .filter(|&(_, capacity)| capacity > 0)
            .collect();

        let mut proposals: Vec<Vec<Selection>> = vec![Vec::new(); self.scenario.node_count];
        if self.options.parallel_scheduling && eligible.len() > 1 {
            let workers = std::thread::available_parallelism()
                .map(|p| p.get())
                .unwrap_or(1)
                .min(eligible.len())
                .max(1);
            let chunk = eligible.len().div_ceil(workers);
            let results: Vec<Vec<(usize, Vec<Selection>)>> = std::thread::scope(|scope| {
                let state = &*self;
                let queues = &queues;
                let permeability = &permeability;
                let handles: Vec<_> = eligible
                    .chunks(chunk)
                    .map(|part| {
                        scope.spawn(move || {
                            part.iter()
                                .map(|&(node, capacity)| {
                                    (
                                        node,
                                        state.node_proposals(
                                            node,
                                            queues,
                                            permeability,
                                            capacity,
                                            tau,
                                        ),
                                    )
                                })
                                .collect()
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().unwrap()).collect()
            });
            for (node, picks) in results.into_iter().flatten() {
                proposals[node] = picks;
            }
        } else {
            for &(node, capacity) in &eligible {
                proposals[node] = self.node_proposals(node, &queues, &permeability, capacity, tau);
            }
        }

        // Apply in canonical node order so any scheduling order yields the
        // same log.
        for node in 0..self.scenario.node_count {
            for selection in &proposals[node] {
                let delta = self.views[node]
                    .delta(selection.peer)
                    .expect("selection peers come from the view");
                let duration = ((delta / STEP_SECONDS).ceil() as u64).max(1);
                self.in_flight.push(ActiveTransfer {
                    source: NodeId(node),
                    destination: selection.peer,
                    fragment: selection.fragment,
                    started_at: tau,
                    duration,
                    remaining: duration,
                });
                self.log.transfers.push(TransferRecord {
                    step: tau,
                    status: TransferStatus::Launched,
                    source: NodeId(node),
                    destination: selection.peer,
                    fragment: selection.fragment,
                    duration_steps: duration,
                });
                debug!(
                    "step {tau}: {} -> {} fragment {} ({} steps)",
                    node,
                    selection.peer.index(),
                    selection.fragment.index(),
                    duration
                );
            }
        }

        // (5) Advance in-flight transfers and complete the finished ones.
        for transfer in &mut self.in_flight {
            transfer.remaining -= 1;
        }
        let (done, pending): (Vec<ActiveTransfer>, Vec<ActiveTransfer>) = self
            .in_flight
            .drain(..)
            .partition(|transfer| transfer.remaining == 0);
        self.in_flight = pending;
        for transfer in done {
            debug_assert!(
                self.online[transfer.source.index()] && self.online[transfer.destination.index()],
                "completed transfer with an offline endpoint"
            );
            self.ownership.grant(transfer.destination, transfer.fragment);
            self.served_pairs[transfer.source.index()]
                .insert((transfer.destination, transfer.fragment));
            self.served_counts[transfer.source.index()][transfer.fragment.index()] += 1;
            self.log.transfers.push(TransferRecord {
                step: tau,
                status: TransferStatus::Completed,
                source: transfer.source,
                destination: transfer.destination,
                fragment: transfer.fragment,
                duration_steps: transfer.duration,
            });
            debug_assert!(transfer.started_at + transfer.duration == tau + 1);
        }

        // (6) Swarm accounting.
        let end_stats = self.swarm_stats();
        for k in 0..self.scenario.fragment_count {
            let s = &end_stats[&FragmentId(k)];
            let history = &mut self.histories[k];
            history.users.push(s.users_total() as f64);
            history.seeders.push(s.seeders() as f64);
            history.share_ratio.push(s.mean_share_ratio());
        }

        // (7) Logging.
        let row = self.availability_row(&end_stats);
        self.log.availability.push(row);
        self.log.chi.push(chi);
        self.next_step += 1;
        Ok(())
    }
}

/// Runs a scenario to completion and returns its metrics log.
pub fn run(scenario: &Scenario) -> Result<MetricsLog> {
    run_with_options(scenario, RunOptions::default())
}

pub fn run_with_options(scenario: &Scenario, options: RunOptions) -> Result<MetricsLog> {
    let mut state = SimState::with_options(scenario, options)?;
    for _ in 0..scenario.params.steps {
        state.step()?;
    }
    Ok(state.into_metrics())
}
