//! Scenario files: the declarative description of one simulation run.
//!
//! Structured, human-editable TOML with an explicit schema version.
//! Latencies are given in milliseconds and converted to seconds on load;
//! ownership is a nodes-by-fragments 0/1 matrix; request queues list the
//! initial requester ids per fragment.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheduler::ReachTimeMode;

pub const SCHEMA_VERSION: u32 = 1;

/// How forecast stats combine with measured ones at refresh time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ForecastBlend {
    /// Predictions fully replace the measured stats.
    #[default]
    Replace,
    /// Field-wise mean of measured and predicted stats.
    Mean,
}

impl fmt::Display for ForecastBlend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ForecastBlend::Replace => write!(f, "replace"),
            ForecastBlend::Mean => write!(f, "mean"),
        }
    }
}

impl FromStr for ForecastBlend {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "replace" => Ok(ForecastBlend::Replace),
            "mean" => Ok(ForecastBlend::Mean),
            other => Err(format!("unknown forecast_blend {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChurnAction {
    Online,
    Offline,
}

/// One scheduled connectivity change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChurnEvent {
    pub step: u64,
    pub node: usize,
    pub action: ChurnAction,
}

/// Tunable simulation parameters, all overridable from the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Params {
    /// Urgency decay constant per (step * second).
    pub c: f64,
    /// Latency re-measurement period in steps.
    pub refresh_interval: u64,
    /// Forecast refresh period in steps.
    pub forecast_interval: u64,
    /// Wavelet decomposition depth.
    pub wavelet_levels: usize,
    /// Recurrent predictor hidden width.
    pub hidden_size: usize,
    /// Forecast horizon in steps.
    pub horizon: usize,
    /// Maximum concurrent outgoing transfers per node.
    pub max_parallel_sends: usize,
    /// Multiplicative latency jitter amplitude; 0 disables jitter.
    pub jitter: f64,
    pub seed: u64,
    /// Steps to simulate.
    pub steps: u64,
    pub reach_time_mode: ReachTimeMode,
    pub forecast_blend: ForecastBlend,
    pub forecast_enabled: bool,
    pub forecast_epochs: usize,
    pub forecast_learning_rate: f64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            c: 0.5,
            refresh_interval: 5,
            forecast_interval: 12,
            wavelet_levels: 4,
            hidden_size: 16,
            horizon: 6,
            max_parallel_sends: 1,
            jitter: 0.0,
            seed: 0,
            steps: 5,
            reach_time_mode: ReachTimeMode::Served,
            forecast_blend: ForecastBlend::Replace,
            forecast_enabled: false,
            forecast_epochs: 500,
            forecast_learning_rate: 0.01,
        }
    }
}

/// A complete simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub node_count: usize,
    pub fragment_count: usize,
    /// Ground-truth latency matrix in milliseconds, zero diagonal.
    pub latency_ms: Vec<Vec<f64>>,
    /// Initial ownership, one 0/1 row per node.
    pub ownership: Vec<Vec<u8>>,
    /// Initial requester ids per fragment.
    pub requests: Vec<Vec<usize>>,
    #[serde(default)]
    pub churn: Vec<ChurnEvent>,
    #[serde(default)]
    pub params: Params,
}

impl Scenario {
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let scenario: Scenario = toml::from_str(&text).map_err(Box::new)?;
        Ok(scenario)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Serialize(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Checks every structural constraint and returns the full list of
    /// violations, empty when the scenario is runnable.
    pub fn violations(&self) -> Vec<String> {
        let mut violations = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            violations.push(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.node_count == 0 {
            violations.push("node_count must be at least 1".to_string());
        }
        if self.fragment_count == 0 {
            violations.push("fragment_count must be at least 1".to_string());
        }

        if self.latency_ms.len() != self.node_count {
            violations.push(format!(
                "latency_ms has {} rows, expected {}",
                self.latency_ms.len(),
                self.node_count
            ));
        }
        for (i, row) in self.latency_ms.iter().enumerate() {
            if row.len() != self.node_count {
                violations.push(format!(
                    "latency_ms row {i} has {} entries, expected {}",
                    row.len(),
                    self.node_count
                ));
                continue;
            }
            for (j, &ms) in row.iter().enumerate() {
                if i == j && ms != 0.0 {
                    violations.push(format!("latency_ms diagonal ({i},{j}) must be 0"));
                }
                if i != j && !(ms > 0.0 && ms.is_finite()) {
                    violations.push(format!(
                        "latency_ms ({i},{j}) must be positive and finite, got {ms}"
                    ));
                }
            }
        }

        if self.ownership.len() != self.node_count {
            violations.push(format!(
                "ownership has {} rows, expected {}",
                self.ownership.len(),
                self.node_count
            ));
        }
        for (i, row) in self.ownership.iter().enumerate() {
            if row.len() != self.fragment_count {
                violations.push(format!(
                    "ownership row {i} has {} entries, expected {}",
                    row.len(),
                    self.fragment_count
                ));
                continue;
            }
            for (k, &cell) in row.iter().enumerate() {
                if cell > 1 {
                    violations.push(format!("ownership ({i},{k}) must be 0 or 1, got {cell}"));
                }
            }
        }

        if self.requests.len() != self.fragment_count {
            violations.push(format!(
                "requests has {} fragment entries, expected {}",
                self.requests.len(),
                self.fragment_count
            ));
        }
        for (k, requesters) in self.requests.iter().enumerate() {
            for &node in requesters {
                if node >= self.node_count {
                    violations.push(format!(
                        "requests for fragment {k} name unknown node {node}"
                    ));
                }
            }
        }

        for (i, event) in self.churn.iter().enumerate() {
            if event.node >= self.node_count {
                violations.push(format!("churn event {i} names unknown node {}", event.node));
            }
        }

        let p = &self.params;
        if !(p.c > 0.0 && p.c.is_finite()) {
            violations.push(format!("params.c must be positive, got {}", p.c));
        }
        if p.refresh_interval == 0 {
            violations.push("params.refresh_interval must be at least 1".to_string());
        }
        if p.forecast_interval == 0 {
            violations.push("params.forecast_interval must be at least 1".to_string());
        }
        if !(1..=16).contains(&p.wavelet_levels) {
            violations.push(format!(
                "params.wavelet_levels must be in 1..=16, got {}",
                p.wavelet_levels
            ));
        }
        if !(1..=1024).contains(&p.hidden_size) {
            violations.push(format!(
                "params.hidden_size must be in 1..=1024, got {}",
                p.hidden_size
            ));
        }
        if !(1..=1000).contains(&p.horizon) {
            violations.push(format!(
                "params.horizon must be in 1..=1000, got {}",
                p.horizon
            ));
        }
        if p.max_parallel_sends == 0 {
            violations.push("params.max_parallel_sends must be at least 1".to_string());
        }
        if !(0.0..0.95).contains(&p.jitter) {
            violations.push(format!(
                "params.jitter must be in [0, 0.95), got {}",
                p.jitter
            ));
        }
        if p.forecast_epochs == 0 {
            violations.push("params.forecast_epochs must be at least 1".to_string());
        }
        if !(p.forecast_learning_rate > 0.0 && p.forecast_learning_rate.is_finite()) {
            violations.push(format!(
                "params.forecast_learning_rate must be positive, got {}",
                p.forecast_learning_rate
            ));
        }
        violations
    }

    pub fn validate(&self) -> Result<()> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidScenario { violations })
        }
    }

    /// Applies one `key=value` override to the parameter set, type-checked.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: fmt::Display,
        {
            value.parse().map_err(|e: T::Err| Error::InvalidParameterValue {
                key: key.to_string(),
                value: value.to_string(),
                reason: e.to_string(),
            })
        }

        let p = &mut self.params;
        match key {
            "c" => p.c = parse(key, value)?,
            "refresh_interval" => p.refresh_interval = parse(key, value)?,
            "forecast_interval" => p.forecast_interval = parse(key, value)?,
            "wavelet_levels" => p.wavelet_levels = parse(key, value)?,
            "hidden_size" => p.hidden_size = parse(key, value)?,
            "horizon" => p.horizon = parse(key, value)?,
            "max_parallel_sends" => p.max_parallel_sends = parse(key, value)?,
            "jitter" => p.jitter = parse(key, value)?,
            "seed" => p.seed = parse(key, value)?,
            "steps" => p.steps = parse(key, value)?,
            "reach_time_mode" => {
                p.reach_time_mode =
                    value
                        .parse()
                        .map_err(|reason| Error::InvalidParameterValue {
                            key: key.to_string(),
                            value: value.to_string(),
                            reason,
                        })?
            }
            "forecast_blend" => {
                p.forecast_blend = value
                    .parse()
                    .map_err(|reason| Error::InvalidParameterValue {
                        key: key.to_string(),
                        value: value.to_string(),
                        reason,
                    })?
            }
            "forecast_enabled" => p.forecast_enabled = parse(key, value)?,
            "forecast_epochs" => p.forecast_epochs = parse(key, value)?,
            "forecast_learning_rate" => p.forecast_learning_rate = parse(key, value)?,
            other => return Err(Error::UnknownParameter(other.to_string())),
        }
        Ok(())
    }

    /// The experiment preset: 11 peers, 5 fragments, fragment 2 owned by no
    /// one, fragment 4 (the paper's 1-indexed fragment 5) held by exactly two
    /// nodes with slow outgoing links, remaining ownership randomized under
    /// the seed. Every node requests every fragment it lacks.
    pub fn fig2(seed: u64) -> Scenario {
        const NODES: usize = 11;
        const FRAGMENTS: usize = 5;
        const UNOWNED: usize = 2;
        const RARE: usize = 4;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut ownership = vec![vec![0u8; FRAGMENTS]; NODES];
        for k in 0..FRAGMENTS {
            if k == UNOWNED {
                continue;
            }
            if k == RARE {
                // Exactly two holders, never the observer node 0.
                let mut candidates: Vec<usize> = (1..NODES).collect();
                candidates.shuffle(&mut rng);
                for &holder in candidates.iter().take(2) {
                    ownership[holder][k] = 1;
                }
                continue;
            }
            let holders = rng.gen_range(5..=8);
            let mut candidates: Vec<usize> = (0..NODES).collect();
            candidates.shuffle(&mut rng);
            for &holder in candidates.iter().take(holders) {
                ownership[holder][k] = 1;
            }
        }
        if ownership[0].iter().all(|&cell| cell == 0) {
            ownership[0][0] = 1;
        }

        let rare_holders: Vec<usize> = (0..NODES).filter(|&i| ownership[i][RARE] == 1).collect();
        let mut latency_ms = vec![vec![0.0; NODES]; NODES];
        for (i, row) in latency_ms.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                if i == j {
                    continue;
                }
                // The rare holders sit behind slow links so the rare fragment
                // spreads slowly, matching its narrative role.
                *cell = if rare_holders.contains(&i) {
                    rng.gen_range(250.0..600.0)
                } else {
                    rng.gen_range(20.0..150.0)
                };
            }
        }

        let requests = (0..FRAGMENTS)
            .map(|k| {
                (0..NODES)
                    .filter(|&i| ownership[i][k] == 0)
                    .collect::<Vec<usize>>()
            })
            .collect();

        Scenario {
            schema_version: SCHEMA_VERSION,
            node_count: NODES,
            fragment_count: FRAGMENTS,
            latency_ms,
            ownership,
            requests,
            churn: Vec::new(),
            params: Params {
                seed,
                steps: 5,
                ..Params::default()
            },
        }
    }

    /// General random scenario: `rarity[k]` holders for fragment `k` (drawn
    /// per fragment when absent), uniform latencies, everyone requesting what
    /// they lack.
    pub fn generate(
        node_count: usize,
        fragment_count: usize,
        rarity: Option<&[usize]>,
        seed: u64,
    ) -> Result<Scenario> {
        if node_count == 0 || fragment_count == 0 {
            return Err(Error::InvalidScenario {
                violations: vec!["node and fragment counts must be at least 1".to_string()],
            });
        }
        if let Some(rarity) = rarity {
            if rarity.len() != fragment_count {
                return Err(Error::InvalidScenario {
                    violations: vec![format!(
                        "rarity profile has {} entries, expected {fragment_count}",
                        rarity.len()
                    )],
                });
            }
            if let Some(bad) = rarity.iter().find(|&&count| count > node_count) {
                return Err(Error::InvalidScenario {
                    violations: vec![format!(
                        "rarity count {bad} exceeds node_count {node_count}"
                    )],
                });
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ownership = vec![vec![0u8; fragment_count]; node_count];
        for k in 0..fragment_count {
            let holders = match rarity {
                Some(rarity) => rarity[k],
                None => rng.gen_range(1..=node_count),
            };
            let mut candidates: Vec<usize> = (0..node_count).collect();
            candidates.shuffle(&mut rng);
            for &holder in candidates.iter().take(holders) {
                ownership[holder][k] = 1;
            }
        }

        let mut latency_ms = vec![vec![0.0; node_count]; node_count];
        for (i, row) in latency_ms.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                if i != j {
                    *cell = rng.gen_range(20.0..150.0);
                }
            }
        }

        let requests = (0..fragment_count)
            .map(|k| {
                (0..node_count)
                    .filter(|&i| ownership[i][k] == 0)
                    .collect::<Vec<usize>>()
            })
            .collect();

        let scenario = Scenario {
            schema_version: SCHEMA_VERSION,
            node_count,
            fragment_count,
            latency_ms,
            ownership,
            requests,
            churn: Vec::new(),
            params: Params {
                seed,
                ..Params::default()
            },
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fig2_preset_matches_its_contract() {
        for seed in [0u64, 1, 42, 1234] {
            let scenario = Scenario::fig2(seed);
            scenario.validate().unwrap();
            assert_eq!(scenario.node_count, 11);
            assert_eq!(scenario.fragment_count, 5);
            // Column 2 all false.
            assert!(scenario.ownership.iter().all(|row| row[2] == 0));
            // The paper's 1-indexed fragment 5 has exactly two holders.
            let rare: usize = scenario.ownership.iter().map(|row| row[4] as usize).sum();
            assert_eq!(rare, 2);
            // The observer lacks the rare fragment and holds something.
            assert_eq!(scenario.ownership[0][4], 0);
            assert!(scenario.ownership[0].contains(&1));
        }
    }

    #[test]
    fn toml_round_trip_preserves_the_scenario() {
        let scenario = Scenario::fig2(7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fig2.toml");
        scenario.save(&path).unwrap();
        let loaded = Scenario::load(&path).unwrap();
        assert_eq!(scenario, loaded);
    }

    #[test]
    fn degenerate_single_node_scenario_is_valid() {
        let scenario = Scenario::generate(1, 3, Some(&[1, 1, 1]), 0).unwrap();
        scenario.validate().unwrap();
    }

    #[test]
    fn violations_are_collected_not_short_circuited() {
        let mut scenario = Scenario::fig2(0);
        scenario.latency_ms[0][0] = 5.0;
        scenario.ownership[3][1] = 9;
        scenario.params.c = -1.0;
        let violations = scenario.violations();
        assert!(violations.len() >= 3, "got {violations:?}");
    }

    #[test]
    fn overrides_are_type_checked() {
        let mut scenario = Scenario::fig2(0);
        scenario.apply_override("steps", "25").unwrap();
        assert_eq!(scenario.params.steps, 25);
        scenario.apply_override("reach_time_mode", "literal").unwrap();
        assert_eq!(scenario.params.reach_time_mode, ReachTimeMode::Literal);
        assert!(matches!(
            scenario.apply_override("steps", "many"),
            Err(Error::InvalidParameterValue { .. })
        ));
        assert!(matches!(
            scenario.apply_override("bogus", "1"),
            Err(Error::UnknownParameter(_))
        ));
    }

    #[test]
    fn unknown_requester_is_a_violation() {
        let mut scenario = Scenario::fig2(0);
        scenario.requests[0].push(99);
        assert!(scenario
            .violations()
            .iter()
            .any(|v| v.contains("unknown node 99")));
    }
}
