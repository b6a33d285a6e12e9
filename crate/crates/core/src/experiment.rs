//! Monte-Carlo orchestration and result persistence.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_scenario, FadingSet, UserSpaceMap};
use crate::config::{ExperimentConfig, SchemeVariant, SurfaceChoice, SweepAxis};
use crate::error::{Error, Result};
use crate::framework::{run_scheme, ConvergenceCriteria, ObjectiveKind, ProblemSpec, RunTrace, SurfaceMode};
use crate::realdec::SystemIqi;
use crate::rispace::PhaseDraw;

/// Stream offset separating the surface draw from the fading draw of a trial.
const PHASE_STREAM: u64 = 0x5EED_0F_7E7A;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of trial `trial`; independent of scheme, sweep point and scheduling.
pub fn trial_seed(base_seed: u64, trial: u64) -> u64 {
    splitmix64(base_seed ^ splitmix64(trial))
}

pub fn dbw_to_watts(dbw: f64) -> f64 {
    10f64.powf(dbw / 10.0)
}

/// Scenario dimensions and targets at one sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Point {
    users_per_cell: usize,
    bs_antennas: usize,
    power_dbw: f64,
    target_rate: f64,
}

fn sweep_point(cfg: &ExperimentConfig, value: f64) -> Point {
    let mut p = Point {
        users_per_cell: cfg.scenario.users_per_cell,
        bs_antennas: cfg.scenario.bs_antennas,
        power_dbw: cfg.objective.power_dbw,
        target_rate: cfg.objective.target_rate,
    };
    match cfg.sweep.axis {
        SweepAxis::PowerDbw => p.power_dbw = value,
        SweepAxis::TargetRate => p.target_rate = value,
        SweepAxis::BsAntennas => p.bs_antennas = value as usize,
        SweepAxis::UsersPerCell => p.users_per_cell = value as usize,
    }
    p
}

fn problem_spec(cfg: &ExperimentConfig, v: &SchemeVariant, p: &Point, cells: usize) -> Result<ProblemSpec> {
    let k = p.users_per_cell;
    let o = &cfg.objective;
    let mut spec = ProblemSpec::new(o.kind, v.scheme, v.signaling, vec![dbw_to_watts(p.power_dbw); cells], k);
    if !o.weights.is_empty() {
        if o.weights.len() != cells * k {
            return Err(Error::Config(format!(
                "objective.weights: expected {} entries, got {}",
                cells * k,
                o.weights.len()
            )));
        }
        spec.weights = o.weights.chunks(k).map(<[f64]>::to_vec).collect();
    }
    spec.thresholds = vec![vec![p.target_rate; k]; cells];
    spec.iqi_aware = v.iqi_aware;
    spec.power_model = o.power_model();
    spec.set_params = cfg.scenario.surface.params();
    spec.convergence = ConvergenceCriteria {
        rel_tol: cfg.run.rel_tol,
        max_iter: cfg.run.max_iter,
    };
    Ok(spec)
}

/// Fading, devices and surface start shared by every scheme of one trial.
pub struct TrialScenario {
    pub fading: FadingSet,
    pub iqi: SystemIqi,
    pub draw: PhaseDraw,
}

fn trial_scenario(cfg: &ExperimentConfig, p: &Point, seed: u64) -> Result<TrialScenario> {
    let s = &cfg.scenario;
    let topo = s.topology(p.users_per_cell, p.bs_antennas);
    let fading = sample_scenario(&topo, &s.fading, seed)?.normalized(s.sigma2());
    let iqi = SystemIqi::uniform(&topo.bs_antennas, &topo.user_antennas, s.iqi.bs()?, s.iqi.user()?, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ PHASE_STREAM);
    let draw = PhaseDraw::sample(&fading.ris_elements(), &mut rng);
    Ok(TrialScenario { fading, iqi, draw })
}

/// Runs one scheme on one trial scenario.
fn run_variant(cfg: &ExperimentConfig, v: &SchemeVariant, p: &Point, sc: &TrialScenario) -> Result<RunTrace> {
    let spec = problem_spec(cfg, v, p, sc.fading.cells)?;
    let params = &spec.set_params;
    let mut fading = sc.fading.clone();
    let users = fading.num_users();
    if v.surface != SurfaceChoice::Star && !cfg.scenario.blocked_users.is_empty() {
        fading.block_ris_links(&cfg.scenario.blocked_users);
    }
    let map = (v.surface == SurfaceChoice::Star)
        .then(|| UserSpaceMap::with_transmission(users, &cfg.scenario.transmission_users));
    let surface = match (v.surface, v.surface.set_kind()) {
        (SurfaceChoice::None, _) | (_, None) => SurfaceMode::Absent,
        (SurfaceChoice::Random, Some(kind)) => SurfaceMode::Fixed(sc.draw.to_theta(kind, params)),
        (_, Some(kind)) => SurfaceMode::Optimized(sc.draw.to_theta(kind, params)),
    };
    run_scheme(&spec, &fading, surface, map.as_ref(), &sc.iqi)
}

/// Outcome of one (scheme, sweep point, trial).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub scheme: String,
    pub sweep_index: usize,
    pub sweep_value: f64,
    pub trial: usize,
    pub seed: u64,
    /// Reported metric; `None` when the run failed.
    pub value: Option<f64>,
    /// `ok`, `infeasible` (power minimization charged the power cap) or an error.
    pub status: String,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Option<RunTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scheme: String,
    pub sweep_value: f64,
    pub mean: f64,
    pub stderr: f64,
    /// Trials contributing to the mean.
    pub n: usize,
    pub trials: usize,
    pub failures: usize,
    pub infeasible: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn row(&self, scheme: &str, sweep_value: f64) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.scheme == scheme && r.sweep_value == sweep_value)
    }
}

pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Aggregates records into rows sorted by scheme label, then sweep value.
pub fn aggregate(records: &[TrialRecord]) -> ResultTable {
    let mut groups: BTreeMap<(String, usize), Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.scheme.clone(), r.sweep_index)).or_default().push(r);
    }
    let rows = groups
        .into_values()
        .map(|mut g| {
            g.sort_by_key(|r| r.trial);
            let values: Vec<f64> = g.iter().filter_map(|r| r.value).collect();
            let (mean, stderr) = mean_and_stderr(&values);
            ResultRow {
                scheme: g[0].scheme.clone(),
                sweep_value: g[0].sweep_value,
                mean,
                stderr,
                n: values.len(),
                trials: g.len(),
                failures: g.iter().filter(|r| r.value.is_none()).count(),
                infeasible: g.iter().filter(|r| r.status == "infeasible").count(),
                values,
            }
        })
        .collect();
    ResultTable { rows }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub table: ResultTable,
    pub records: Vec<TrialRecord>,
}

fn record(cfg: &ExperimentConfig, v: &SchemeVariant, sweep_index: usize, trial: usize) -> TrialRecord {
    let sweep_value = cfg.sweep.values[sweep_index];
    let seed = trial_seed(cfg.run.seed, trial as u64);
    let p = sweep_point(cfg, sweep_value);
    let cells = match cfg.scenario.topology {
        crate::config::TopologyKind::TwoCell => 2,
        crate::config::TopologyKind::SingleCell => 1,
    };
    let outcome = trial_scenario(cfg, &p, seed).and_then(|sc| run_variant(cfg, v, &p, &sc));
    let mut rec = TrialRecord {
        scheme: v.label(),
        sweep_index,
        sweep_value,
        trial,
        seed,
        value: None,
        status: "ok".into(),
        iterations: 0,
        converged: false,
        trace: None,
    };
    match outcome {
        Ok(t) => {
            rec.iterations = t.iterations;
            rec.converged = t.converged;
            if t.true_feasible {
                rec.value = Some(t.true_objective);
            } else if cfg.objective.kind == ObjectiveKind::PowerMin {
                rec.value = Some(cells as f64 * dbw_to_watts(p.power_dbw));
                rec.status = "infeasible".into();
            } else {
                rec.status = "infeasible".into();
            }
            rec.trace = Some(t);
        }
        Err(Error::Infeasible(msg)) if cfg.objective.kind == ObjectiveKind::PowerMin => {
            log::debug!("{} trial {trial}: {msg}", rec.scheme);
            rec.value = Some(cells as f64 * dbw_to_watts(p.power_dbw));
            rec.status = "infeasible".into();
        }
        Err(e) => {
            log::warn!("{} sweep {sweep_value} trial {trial}: {e}", rec.scheme);
            rec.status = format!("error: {e}");
        }
    }
    rec
}

/// Every (sweep point, trial, scheme) run; deterministic for a given config
/// regardless of thread count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let variants = cfg.schemes.variants();
    let nv = variants.len();
    let jobs: Vec<(usize, usize, usize)> = (0..cfg.sweep.values.len())
        .flat_map(|s| (0..cfg.run.trials).flat_map(move |t| (0..nv).map(move |v| (s, t, v))))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.threads)
        .build()
        .map_err(|e| Error::Config(format!("run.threads: {e}")))?;
    let records: Vec<TrialRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|&(s, t, v)| record(cfg, &variants[v], s, t))
            .collect()
    });
    Ok(ExperimentResult {
        table: aggregate(&records),
        records,
    })
}

/// Plot data as CSV with columns `scheme, sweep_value, mean, stderr, n`,
/// sorted by scheme label and sweep value.
pub fn plot_csv(table: &ResultTable) -> Result<String> {
    if table.rows.is_empty() {
        return Err(Error::InvalidParameter("result table is empty".into()));
    }
    let mut rows: Vec<&ResultRow> = table.rows.iter().collect();
    rows.sort_by(|a, b| a.scheme.cmp(&b.scheme).then(a.sweep_value.total_cmp(&b.sweep_value)));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scheme", "sweep_value", "mean", "stderr", "n"])?;
    for r in rows {
        w.write_record([
            r.scheme.clone(),
            r.sweep_value.to_string(),
            r.mean.to_string(),
            r.stderr.to_string(),
            r.n.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Writes `results.csv` under `dir`.
pub fn emit_plot_data(table: &ResultTable, dir: &Path) -> Result<PathBuf> {
    let text = plot_csv(table)?;
    fs::create_dir_all(dir)?;
    let path = dir.join("results.csv");
    fs::write(&path, text)?;
    Ok(path)
}

#[derive(Serialize)]
struct Summary<'a> {
    version: &'a str,
    config: &'a ExperimentConfig,
    table: &'a ResultTable,
    failures: Vec<(&'a str, f64, usize, &'a str)>,
}

/// Writes plot data, per-run traces and `summary.json` under `dir`.
pub fn write_outputs(cfg: &ExperimentConfig, result: &ExperimentResult, dir: &Path) -> Result<()> {
    emit_plot_data(&result.table, dir)?;
    if cfg.run.write_traces {
        let traces = dir.join("traces");
        fs::create_dir_all(&traces)?;
        for r in &result.records {
            let name = format!("{}_s{}_t{}.json", r.scheme, r.sweep_index, r.trial);
            fs::write(traces.join(name), serde_json::to_vec(r)?)?;
        }
    }
    let summary = Summary {
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        table: &result.table,
        failures: result
            .records
            .iter()
            .filter(|r| r.status != "ok")
            .map(|r| (r.scheme.as_str(), r.sweep_value, r.trial, r.status.as_str()))
            .collect(),
    };
    fs::write(dir.join("summary.json"), serde_json::to_vec_pretty(&summary)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig::from_toml_str(
            r#"
[scenario]
topology = "single_cell"
users_per_cell = 2
ris_elements = 2
[schemes]
signaling = ["IGS"]
scheme = ["RS", "TIN"]
surface = ["none"]
[sweep]
values = [10.0]
[run]
trials = 2
max_iter = 5
threads = 1
"#,
        )
        .unwrap()
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        assert_eq!(trial_seed(7, 3), trial_seed(7, 3));
        assert_ne!(trial_seed(7, 3), trial_seed(7, 4));
        assert_ne!(trial_seed(7, 3), trial_seed(8, 3));
    }

    #[test]
    fn stderr_of_constant_is_zero() {
        assert_eq!(mean_and_stderr(&[2.0, 2.0, 2.0]), (2.0, 0.0));
        let (m, s) = mean_and_stderr(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn schemes_share_fading_and_rerun_is_identical() {
        let cfg = tiny();
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.table, b.table);
        let seeds: Vec<u64> = a.records.iter().filter(|r| r.trial == 0).map(|r| r.seed).collect();
        assert!(seeds.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(a.table.rows.len(), 2);
        assert!(a.table.rows.iter().all(|r| r.trials == 2));
    }

    #[test]
    fn empty_table_emits_nothing() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_plot_data(&ResultTable::default(), dir.path()).is_err());
        assert!(!dir.path().join("results.csv").exists());
    }
}
