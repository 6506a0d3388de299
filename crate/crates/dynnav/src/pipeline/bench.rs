//! Benchmark harness: repeated episodes over a scenario suite with
//! aggregated metrics.
//!
//! A suite is a TOML file of `[[run]]` entries naming scenario files
//! (relative to the suite file). Each entry runs `repeats` times; by default
//! every repeat reuses the scenario's own seed, so its result rows are
//! identical — a built-in determinism check. With `vary_seeds = true` repeat
//! `k` runs with `seed + k` instead.
//!
//! The CSV rendering keeps per-run rows free of wall-clock content (timing
//! columns are left empty) so they are reproducible byte-for-byte; the
//! `mean`/`stddev` rows carry the timing averages, which depend on the
//! machine.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::sim::ScenarioConfig;
use crate::{Error, Result};

use super::{run_episode, PipelineConfig, RunMetrics};

/// One scenario entry of a benchmark suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchEntry {
    /// Scenario file, relative to the suite file.
    pub scenario: String,
    pub repeats: usize,
    /// Run repeat `k` with `seed + k` instead of reusing the scenario seed.
    pub vary_seeds: bool,
}

impl Default for BenchEntry {
    fn default() -> Self {
        Self {
            scenario: String::new(),
            repeats: 1,
            vary_seeds: false,
        }
    }
}

/// A parsed suite file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSuite {
    pub run: Vec<BenchEntry>,
}

impl BenchSuite {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let suite: BenchSuite =
            toml::from_str(s).map_err(|e| Error::Config(format!("suite parse: {e}")))?;
        if suite.run.is_empty() {
            return Err(Error::Config("suite has no [[run]] entries".into()));
        }
        if let Some(bad) = suite.run.iter().find(|e| e.scenario.is_empty() || e.repeats == 0) {
            return Err(Error::Config(format!(
                "suite entry {:?} needs a scenario and at least one repeat",
                bad.scenario
            )));
        }
        Ok(suite)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// Metrics of one benchmark run.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub scenario: String,
    pub rep: usize,
    pub seed: u64,
    pub metrics: RunMetrics,
}

/// All rows of a benchmark invocation, with CSV/JSON rendering.
#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

/// The metric columns aggregated per scenario, in CSV column order.
fn numeric_fields(m: &RunMetrics) -> [f64; 11] {
    [
        m.success() as u8 as f64,
        m.error_pos,
        m.error_vel,
        m.track_samples as f64,
        m.t_arrive,
        m.l_traj,
        m.v_mean,
        m.collision_count as f64,
        m.plans as f64,
        m.t_opt_ms,
        m.t_perception_ms,
    ]
}

const CSV_HEADER: &str = "kind,scenario,seed,status,success,error_pos,error_vel,\
                          track_samples,t_arrive,l_traj,v_mean,collisions,plans,\
                          t_opt_ms,t_perception_ms";

impl BenchReport {
    /// Per-run rows followed by `mean`/`stddev` rows per scenario. Run rows
    /// carry no repeat index and leave the timing columns empty, so repeats
    /// of one scenario at one seed render as byte-identical rows; aggregate
    /// rows include timing. `stddev` is the population standard deviation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let f = numeric_fields(&r.metrics);
            out.push_str(&format!(
                "run,{},{},{},{},{},{},{},{},{},{},{},{},,\n",
                r.scenario,
                r.seed,
                r.metrics.status.as_str(),
                f[0],
                f[1],
                f[2],
                f[3],
                f[4],
                f[5],
                f[6],
                f[7],
                f[8],
            ));
        }
        for (name, rows) in self.by_scenario() {
            let n = rows.len() as f64;
            let samples: Vec<[f64; 11]> = rows.iter().map(|r| numeric_fields(&r.metrics)).collect();
            let mut mean = [0.0f64; 11];
            let mut std = [0.0f64; 11];
            for s in &samples {
                for k in 0..11 {
                    mean[k] += s[k] / n;
                }
            }
            for s in &samples {
                for k in 0..11 {
                    std[k] += (s[k] - mean[k]).powi(2) / n;
                }
            }
            for v in &mut std {
                *v = v.sqrt();
            }
            for (kind, vals) in [("mean", mean), ("stddev", std)] {
                out.push_str(&format!(
                    "{kind},{name},,,{},{},{},{},{},{},{},{},{},{},{}\n",
                    vals[0],
                    vals[1],
                    vals[2],
                    vals[3],
                    vals[4],
                    vals[5],
                    vals[6],
                    vals[7],
                    vals[8],
                    vals[9],
                    vals[10],
                ));
            }
        }
        out
    }

    /// Same content as [`Self::to_csv`] in JSON form: deterministic per-run
    /// rows plus per-scenario aggregates.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct JsonRun<'a> {
            scenario: &'a str,
            rep: usize,
            seed: u64,
            status: &'static str,
            success: bool,
            error_pos: f64,
            error_vel: f64,
            track_samples: usize,
            t_arrive: f64,
            l_traj: f64,
            v_mean: f64,
            collisions: usize,
            plans: usize,
        }
        #[derive(Serialize)]
        struct JsonAggregate {
            scenario: String,
            runs: usize,
            mean: Vec<f64>,
            stddev: Vec<f64>,
            columns: Vec<&'static str>,
        }
        #[derive(Serialize)]
        struct JsonReport<'a> {
            rows: Vec<JsonRun<'a>>,
            aggregates: Vec<JsonAggregate>,
        }

        let columns = vec![
            "success",
            "error_pos",
            "error_vel",
            "track_samples",
            "t_arrive",
            "l_traj",
            "v_mean",
            "collisions",
            "plans",
            "t_opt_ms",
            "t_perception_ms",
        ];
        let rows = self
            .rows
            .iter()
            .map(|r| JsonRun {
                scenario: &r.scenario,
                rep: r.rep,
                seed: r.seed,
                status: r.metrics.status.as_str(),
                success: r.metrics.success(),
                error_pos: r.metrics.error_pos,
                error_vel: r.metrics.error_vel,
                track_samples: r.metrics.track_samples,
                t_arrive: r.metrics.t_arrive,
                l_traj: r.metrics.l_traj,
                v_mean: r.metrics.v_mean,
                collisions: r.metrics.collision_count,
                plans: r.metrics.plans,
            })
            .collect();
        let aggregates = self
            .by_scenario()
            .into_iter()
            .map(|(name, rows)| {
                let n = rows.len() as f64;
                let samples: Vec<[f64; 11]> =
                    rows.iter().map(|r| numeric_fields(&r.metrics)).collect();
                let mut mean = vec![0.0f64; 11];
                let mut std = vec![0.0f64; 11];
                for s in &samples {
                    for k in 0..11 {
                        mean[k] += s[k] / n;
                    }
                }
                for s in &samples {
                    for k in 0..11 {
                        std[k] += (s[k] - mean[k]).powi(2) / n;
                    }
                }
                for v in &mut std {
                    *v = v.sqrt();
                }
                JsonAggregate {
                    scenario: name,
                    runs: rows.len(),
                    mean,
                    stddev: std,
                    columns: columns.clone(),
                }
            })
            .collect();
        serde_json::to_string_pretty(&JsonReport { rows, aggregates })
            .expect("report serialization cannot fail")
    }

    /// Rows grouped by scenario name, in first-appearance order.
    fn by_scenario(&self) -> Vec<(String, Vec<&BenchRow>)> {
        let mut groups: Vec<(String, Vec<&BenchRow>)> = Vec::new();
        for r in &self.rows {
            match groups.iter_mut().find(|(n, _)| *n == r.scenario) {
                Some((_, v)) => v.push(r),
                None => groups.push((r.scenario.clone(), vec![r])),
            }
        }
        groups
    }

    /// Fraction of runs that reached the goal.
    pub fn success_rate(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.metrics.success()).count() as f64 / self.rows.len() as f64
    }
}

/// Runs every entry of a suite. Scenario paths are resolved against `base`
/// (normally the suite file's directory). No traces are written.
pub fn run_benchmark(
    suite: &BenchSuite,
    base: &Path,
    config: &PipelineConfig,
) -> Result<BenchReport> {
    let mut rows = Vec::new();
    for entry in &suite.run {
        let scenario = ScenarioConfig::load(&base.join(&entry.scenario))?;
        for rep in 0..entry.repeats {
            let mut sc = scenario.clone();
            if entry.vary_seeds {
                sc.seed = scenario.seed.wrapping_add(rep as u64);
            }
            let metrics = run_episode(&sc, config, None)?;
            rows.push(BenchRow {
                scenario: sc.name.clone(),
                rep,
                seed: sc.seed,
                metrics,
            });
        }
    }
    Ok(BenchReport { rows })
}
