//! Outer MM and alternating-optimization drivers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{FadingSet, SetKind, ThetaSet, UserSpaceMap};
use crate::error::{Error, Result};
use crate::rates::{
    evaluate_rates, gee, max_min_allocation, threshold_allocation, weighted_sum_allocation, CovarianceSet, PowerModel,
    RateBundle, RealChannels, Signaling,
};
use crate::realdec::SystemIqi;
use crate::rispace::{monotone_update, project, SetParams};
use crate::solver::SolverOptions;
use crate::subproblems::{
    solve_p_step_gee, solve_p_step_mwee, solve_p_step_mwrm, solve_p_step_powermin, solve_p_step_wsrm, solve_theta_step,
    PStepInput, PStepOutput, ThetaObjective,
};
use crate::surrogates::ThetaExpansion;

/// Allocation slack tolerated when checking exact rates.
const RATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectiveKind {
    #[serde(rename = "mwrm")]
    Mwrm,
    #[serde(rename = "wsrm")]
    Wsrm,
    #[serde(rename = "gee")]
    Gee,
    #[serde(rename = "mwee")]
    Mwee,
    #[serde(rename = "powermin")]
    PowerMin,
}

impl ObjectiveKind {
    pub fn is_maximization(self) -> bool {
        !matches!(self, Self::PowerMin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "RS")]
    Rs,
    #[serde(rename = "TIN")]
    Tin,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Self::Rs => "RS",
            Self::Tin => "TIN",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCriteria {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for ConvergenceCriteria {
    fn default() -> Self {
        Self {
            rel_tol: 1e-4,
            max_iter: 50,
        }
    }
}

impl ConvergenceCriteria {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidParameter(format!(
                "convergence needs rel_tol > 0 and max_iter >= 1, got {} and {}",
                self.rel_tol, self.max_iter
            )));
        }
        Ok(())
    }

    fn converged(&self, prev: f64, next: f64) -> bool {
        (next - prev).abs() <= self.rel_tol * next.abs().max(1e-12)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub objective: ObjectiveKind,
    /// `lambda_lk` (max-min) or `w_lk` (weighted sum).
    pub weights: Vec<Vec<f64>>,
    /// `r^th_lk`; zeros when unused.
    pub thresholds: Vec<Vec<f64>>,
    pub scheme: Scheme,
    pub signaling: Signaling,
    pub iqi_aware: bool,
    /// Per-cell power budgets.
    pub budgets: Vec<f64>,
    pub power_model: PowerModel,
    pub set_params: SetParams,
    pub convergence: ConvergenceCriteria,
    pub solver: SolverOptions,
}

impl ProblemSpec {
    /// Unit weights, no thresholds, IQI-aware, default models.
    pub fn new(
        objective: ObjectiveKind,
        scheme: Scheme,
        signaling: Signaling,
        budgets: Vec<f64>,
        users_per_cell: usize,
    ) -> Self {
        let cells = budgets.len();
        Self {
            objective,
            weights: vec![vec![1.0; users_per_cell]; cells],
            thresholds: vec![vec![0.0; users_per_cell]; cells],
            scheme,
            signaling,
            iqi_aware: true,
            budgets,
            power_model: PowerModel::default(),
            set_params: SetParams::default(),
            convergence: ConvergenceCriteria::default(),
            solver: SolverOptions::default(),
        }
    }

    pub fn cells(&self) -> usize {
        self.budgets.len()
    }

    pub fn users_per_cell(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn with_common(&self) -> bool {
        self.scheme == Scheme::Rs
    }

    fn has_thresholds(&self) -> bool {
        self.thresholds.iter().flatten().any(|&t| t > 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let (l, k) = (self.cells(), self.users_per_cell());
        if l == 0 || k == 0 {
            return Err(Error::InvalidParameter(
                "problem needs at least one cell and one user".into(),
            ));
        }
        for (name, m) in [("weights", &self.weights), ("thresholds", &self.thresholds)] {
            if m.len() != l || m.iter().any(|r| r.len() != k) {
                return Err(Error::Dimension(format!("{name} must be {l} x {k}")));
            }
            if m.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and nonnegative"
                )));
            }
        }
        if self.budgets.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidParameter(
                "power budgets must be finite and nonnegative".into(),
            ));
        }
        match self.objective {
            ObjectiveKind::Mwrm if self.weights.iter().flatten().all(|&w| w == 0.0) => {
                return Err(Error::InvalidParameter("max-min weights are all zero".into()));
            }
            ObjectiveKind::PowerMin if !self.has_thresholds() => {
                return Err(Error::InvalidParameter(
                    "power minimization needs a positive rate target".into(),
                ));
            }
            _ => {}
        }
        self.power_model.validate()?;
        self.set_params.validate()?;
        self.convergence.validate()
    }

    pub fn initial_covariances(&self, bs_antennas: &[usize]) -> CovarianceSet {
        CovarianceSet::equal_split(
            self.signaling,
            bs_antennas,
            self.users_per_cell(),
            &self.budgets,
            self.with_common(),
        )
    }
}

/// Exact objective of an operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Objective in natural units (power for power minimization).
    pub value: f64,
    /// Whether rate targets are met.
    pub feasible: bool,
    pub bundle: RateBundle,
}

impl Evaluation {
    /// Objective in the maximization sense; infeasible points score `-inf`.
    pub fn score(&self, kind: ObjectiveKind) -> f64 {
        match (self.feasible, kind.is_maximization()) {
            (false, _) => f64::NEG_INFINITY,
            (true, true) => self.value,
            (true, false) => -self.value,
        }
    }
}

fn user_consumptions(spec: &ProblemSpec, cov: &CovarianceSet) -> Vec<Vec<f64>> {
    (0..spec.cells())
        .map(|l| {
            (0..spec.users_per_cell())
                .map(|k| spec.power_model.user_consumption(cov, l, k))
                .collect()
        })
        .collect()
}

pub fn evaluate_objective(spec: &ProblemSpec, cov: &CovarianceSet, ch: &RealChannels) -> Result<Evaluation> {
    let bundle = evaluate_rates(cov, ch)?;
    let thresholds_met = threshold_allocation(&bundle, &spec.thresholds, RATE_TOL);
    let (value, feasible, alloc) = match spec.objective {
        ObjectiveKind::Mwrm => {
            let (v, a) = max_min_allocation(&bundle, &spec.weights);
            (v, true, a)
        }
        ObjectiveKind::Wsrm => {
            let (v, a) = weighted_sum_allocation(&bundle, &spec.weights);
            (v, true, a)
        }
        ObjectiveKind::Gee => {
            let feasible = thresholds_met.is_some();
            let mut a = thresholds_met.unwrap_or_else(|| vec![vec![0.0; spec.users_per_cell()]; spec.cells()]);
            for (l, row) in a.iter_mut().enumerate() {
                let used: f64 = row.iter().sum();
                row[0] += (bundle.cell_common[l] - used).max(0.0);
            }
            let b = bundle.clone().with_allocation(a.clone(), RATE_TOL)?;
            (gee(cov, &b, &spec.power_model), feasible, a)
        }
        ObjectiveKind::Mwee => {
            let (v, a) = max_min_allocation(&bundle, &user_consumptions(spec, cov));
            (v, thresholds_met.is_some(), a)
        }
        ObjectiveKind::PowerMin => {
            let feasible = thresholds_met.is_some();
            let a = thresholds_met.unwrap_or_else(|| vec![vec![0.0; spec.users_per_cell()]; spec.cells()]);
            (cov.total_power(), feasible, a)
        }
    };
    let bundle = bundle.with_allocation(alloc, RATE_TOL)?;
    Ok(Evaluation {
        value,
        feasible,
        bundle,
    })
}

/// Score used to gate surface steps; power minimization ranks surfaces by
/// how far rates exceed their targets.
fn theta_score(spec: &ProblemSpec, cov: &CovarianceSet, ch: &RealChannels) -> Result<f64> {
    if spec.objective == ObjectiveKind::PowerMin {
        let bundle = evaluate_rates(cov, ch)?;
        return Ok(max_min_allocation(&bundle, &spec.thresholds).0);
    }
    Ok(evaluate_objective(spec, cov, ch)?.score(spec.objective))
}

fn theta_objective(spec: &ProblemSpec, cov: &CovarianceSet) -> ThetaObjective {
    match spec.objective {
        ObjectiveKind::Mwrm => ThetaObjective::MaxMin(spec.weights.clone()),
        ObjectiveKind::Wsrm => ThetaObjective::WeightedSum(spec.weights.clone()),
        ObjectiveKind::Gee => ThetaObjective::WeightedSum(vec![vec![1.0; spec.users_per_cell()]; spec.cells()]),
        ObjectiveKind::Mwee => ThetaObjective::MaxMin(user_consumptions(spec, cov)),
        ObjectiveKind::PowerMin => ThetaObjective::MaxMin(spec.thresholds.clone()),
    }
}

fn p_step(spec: &ProblemSpec, ch: &RealChannels, cov: &CovarianceSet) -> Result<PStepOutput> {
    let expansion = crate::surrogates::CovExpansion::new(cov, ch)?;
    let input = PStepInput {
        ch,
        expansion: &expansion,
        budgets: (spec.objective != ObjectiveKind::PowerMin).then_some(spec.budgets.as_slice()),
        with_common: spec.with_common(),
        opts: &spec.solver,
    };
    let th = spec.has_thresholds().then_some(spec.thresholds.as_slice());
    match spec.objective {
        ObjectiveKind::Mwrm => solve_p_step_mwrm(input, &spec.weights),
        ObjectiveKind::Wsrm => solve_p_step_wsrm(input, &spec.weights),
        ObjectiveKind::Gee => solve_p_step_gee(input, &spec.power_model, th),
        ObjectiveKind::Mwee => solve_p_step_mwee(input, &spec.power_model, th),
        ObjectiveKind::PowerMin => solve_p_step_powermin(input, &spec.thresholds),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    #[serde(rename = "init")]
    Init,
    #[serde(rename = "P")]
    Covariance,
    #[serde(rename = "Theta")]
    Surface,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub step: StepKind,
    /// Accepted objective after the step.
    pub objective: f64,
    pub accepted: bool,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub entries: Vec<TraceEntry>,
    pub cov: CovarianceSet,
    pub theta: Option<ThetaSet>,
    pub bundle: RateBundle,
    /// Final objective under the model used for optimization.
    pub objective: f64,
    pub feasible: bool,
    /// Final objective under the true hardware (differs for IQI-unaware runs).
    pub true_objective: f64,
    pub true_feasible: bool,
    pub converged: bool,
    pub iterations: usize,
}

impl RunTrace {
    /// Accepted objective after each outer iteration.
    pub fn objective_sequence(&self) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| e.accepted)
            .map(|e| e.objective)
            .collect()
    }
}

/// Link model seen by the driver: fixed channels or a surface to optimize.
#[derive(Clone, Copy)]
enum Links<'a> {
    Fixed(&'a RealChannels),
    Surface {
        fading: &'a FadingSet,
        map: Option<&'a UserSpaceMap>,
        iqi: &'a SystemIqi,
        optimize: bool,
    },
}

impl Links<'_> {
    fn channels(&self, theta: Option<&ThetaSet>) -> Result<RealChannels> {
        match (self, theta) {
            (Links::Fixed(ch), _) => Ok((*ch).clone()),
            (Links::Surface { fading, map, iqi, .. }, Some(t)) => RealChannels::build(fading, t, *map, iqi),
            (Links::Surface { .. }, None) => Err(Error::InvalidParameter("surface run without coefficients".into())),
        }
    }
}

struct DriveResult {
    trace: Vec<TraceEntry>,
    cov: CovarianceSet,
    theta: Option<ThetaSet>,
    eval: Evaluation,
    converged: bool,
    iterations: usize,
}

/// Outer loop shared by MM and AO; `target` stops as soon as the objective reaches it.
fn drive(
    spec: &ProblemSpec,
    links: Links<'_>,
    mut cov: CovarianceSet,
    mut theta: Option<ThetaSet>,
    target: Option<f64>,
) -> Result<DriveResult> {
    let kind = spec.objective;
    let mut ch = links.channels(theta.as_ref())?;
    let mut eval = evaluate_objective(spec, &cov, &ch)?;
    if kind != ObjectiveKind::PowerMin && !eval.feasible {
        return Err(Error::Infeasible("initial point misses the rate targets".into()));
    }
    let mut trace = vec![TraceEntry {
        iteration: 0,
        step: StepKind::Init,
        objective: eval.value,
        accepted: true,
        status: "ok".into(),
    }];
    let mut converged = false;
    let mut iterations = 0;
    if kind.is_maximization() && spec.budgets.iter().all(|&p| p == 0.0) {
        return Ok(DriveResult {
            trace,
            cov,
            theta,
            eval,
            converged: true,
            iterations,
        });
    }
    for it in 1..=spec.convergence.max_iter {
        iterations = it;
        let before = eval.value;
        let mut progressed = false;

        match p_step(spec, &ch, &cov) {
            Ok(out) => {
                let cand = evaluate_objective(spec, &out.cov, &ch)?;
                let accepted = cand.score(kind) >= eval.score(kind);
                if accepted {
                    progressed |= cand.score(kind) > eval.score(kind);
                    cov = out.cov;
                    eval = cand;
                }
                trace.push(TraceEntry {
                    iteration: it,
                    step: StepKind::Covariance,
                    objective: eval.value,
                    accepted,
                    status: format!("{:?}", out.report.status),
                });
            }
            Err(e) if it > 1 || theta.is_some() => {
                log::warn!("covariance step failed at iteration {it}: {e}");
                trace.push(TraceEntry {
                    iteration: it,
                    step: StepKind::Covariance,
                    objective: eval.value,
                    accepted: false,
                    status: format!("error: {e}"),
                });
            }
            Err(e) => return Err(e),
        }

        if let (
            Links::Surface {
                fading,
                map,
                iqi,
                optimize: true,
            },
            Some(t),
        ) = (links, theta.as_ref())
        {
            let step = ThetaExpansion::new(fading, t, map, iqi, &cov).and_then(|ep| {
                solve_theta_step(
                    &ep,
                    &theta_objective(spec, &cov),
                    &spec.set_params,
                    spec.with_common(),
                    &spec.solver,
                )
            });
            match step {
                Ok(out) => {
                    let cand = project(&out.candidate, &spec.set_params)?;
                    let score = |x: &ThetaSet| theta_score(spec, &cov, &RealChannels::build(fading, x, map, iqi)?);
                    let before_score = score(t)?;
                    let (next, value, accepted) = monotone_update(score, t, &cand)?;
                    if accepted {
                        progressed |= value > before_score;
                        ch = RealChannels::build(fading, &next, map, iqi)?;
                        eval = evaluate_objective(spec, &cov, &ch)?;
                        theta = Some(next);
                    }
                    trace.push(TraceEntry {
                        iteration: it,
                        step: StepKind::Surface,
                        objective: eval.value,
                        accepted,
                        status: format!("{:?}", out.report.status),
                    });
                }
                Err(e) => {
                    log::warn!("surface step failed at iteration {it}: {e}");
                    trace.push(TraceEntry {
                        iteration: it,
                        step: StepKind::Surface,
                        objective: eval.value,
                        accepted: false,
                        status: format!("error: {e}"),
                    });
                }
            }
        }

        if target.is_some_and(|t| eval.feasible && eval.value >= t) {
            break;
        }
        if !progressed || spec.convergence.converged(before, eval.value) {
            converged = true;
            break;
        }
    }
    Ok(DriveResult {
        trace,
        cov,
        theta,
        eval,
        converged,
        iterations,
    })
}

/// Rate targets are first reached by a max-min search with `lambda = r_th`,
/// which stops as soon as every target is met.
fn feasible_start(
    spec: &ProblemSpec,
    links: Links<'_>,
    cov: CovarianceSet,
    theta: Option<ThetaSet>,
) -> Result<(CovarianceSet, Option<ThetaSet>)> {
    let mut search = spec.clone();
    search.objective = ObjectiveKind::Mwrm;
    search.weights = spec.thresholds.clone();
    search.thresholds = vec![vec![0.0; spec.users_per_cell()]; spec.cells()];
    let margin = 1.0 + 1e-6;
    let res = drive(&search, links, cov, theta, Some(margin))?;
    if res.eval.value < 1.0 {
        return Err(Error::Infeasible(format!(
            "rate targets unreachable within the power budget (best fraction {:.4})",
            res.eval.value
        )));
    }
    Ok((res.cov, res.theta))
}

fn finish(spec: &ProblemSpec, links: Links<'_>, cov: CovarianceSet, theta: Option<ThetaSet>) -> Result<RunTrace> {
    let needs_start = spec.has_thresholds();
    let (cov, theta) = if needs_start {
        feasible_start(spec, links, cov, theta)?
    } else {
        (cov, theta)
    };
    let res = drive(spec, links, cov, theta, None)?;
    Ok(RunTrace {
        entries: res.trace,
        objective: res.eval.value,
        feasible: res.eval.feasible,
        true_objective: res.eval.value,
        true_feasible: res.eval.feasible,
        bundle: res.eval.bundle,
        cov: res.cov,
        theta: res.theta,
        converged: res.converged,
        iterations: res.iterations,
    })
}

/// MM over the covariances with fixed channels.
pub fn run_mm(spec: &ProblemSpec, ch: &RealChannels, cov0: CovarianceSet) -> Result<RunTrace> {
    spec.validate()?;
    finish(spec, Links::Fixed(ch), cov0, None)
}

/// Alternating covariance and surface steps.
pub fn run_ao(
    spec: &ProblemSpec,
    fading: &FadingSet,
    theta0: ThetaSet,
    map: Option<&UserSpaceMap>,
    iqi: &SystemIqi,
    cov0: CovarianceSet,
) -> Result<RunTrace> {
    spec.validate()?;
    finish(
        spec,
        Links::Surface {
            fading,
            map,
            iqi,
            optimize: true,
        },
        cov0,
        Some(theta0),
    )
}

/// How surfaces enter a run.
#[derive(Debug, Clone, PartialEq)]
pub enum SurfaceMode {
    /// Surfaces absent (all surface links zeroed).
    Absent,
    /// Fixed coefficients, e.g. a random draw.
    Fixed(ThetaSet),
    /// Coefficients optimized from this starting point.
    Optimized(ThetaSet),
}

/// One complete scheme run; IQI-unaware runs optimize against ideal devices
/// and are then scored under the true hardware.
pub fn run_scheme(
    spec: &ProblemSpec,
    fading: &FadingSet,
    surface: SurfaceMode,
    map: Option<&UserSpaceMap>,
    iqi: &SystemIqi,
) -> Result<RunTrace> {
    spec.validate()?;
    let model_iqi = if spec.iqi_aware { iqi.clone() } else { iqi.idealized() };
    let bs_antennas: Vec<usize> = fading.direct[0].iter().map(|f| f.ncols()).collect();
    let cov0 = spec.initial_covariances(&bs_antennas);
    let dark_fading;
    let (fading, theta, optimize) = match surface {
        SurfaceMode::Absent => {
            dark_fading = fading.without_ris();
            (
                &dark_fading,
                ThetaSet::dark(SetKind::Unit, &fading.ris_elements()),
                false,
            )
        }
        SurfaceMode::Fixed(t) => (fading, t, false),
        SurfaceMode::Optimized(t) => (fading, t, true),
    };
    let links = Links::Surface {
        fading,
        map,
        iqi: &model_iqi,
        optimize,
    };
    let mut trace = finish(spec, links, cov0, Some(theta))?;
    if !spec.iqi_aware {
        let t = trace.theta.as_ref().expect("surface runs keep their coefficients");
        let ch = RealChannels::build(fading, t, map, iqi)?;
        let eval = evaluate_objective(spec, &trace.cov, &ch)?;
        trace.true_objective = eval.value;
        trace.true_feasible = eval.feasible;
    }
    Ok(trace)
}

/// Max-min weighted runs over a grid of rate profiles; returns each run's
/// per-user rates, flattened cell by cell.
pub fn sweep_rate_region(base: &ProblemSpec, ch: &RealChannels, profiles: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    for p in profiles {
        let s: f64 = p.iter().flatten().sum();
        if p.iter().flatten().any(|&w| w < 0.0) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(
                "rate profiles must be nonnegative and sum to one".into(),
            ));
        }
    }
    let bs_antennas: Vec<usize> = ch.links[0].iter().map(|h| h.ncols() / 2).collect();
    profiles
        .par_iter()
        .map(|p| {
            let mut spec = base.clone();
            spec.objective = ObjectiveKind::Mwrm;
            spec.weights = p.clone();
            let trace = run_mm(&spec, ch, spec.initial_covariances(&bs_antennas))?;
            Ok(trace.bundle.totals().into_iter().flatten().collect())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RsMode {
    #[serde(rename = "TIN")]
    Tin,
    #[serde(rename = "NOMA-like")]
    NomaLike,
    #[serde(rename = "Broadcast")]
    Broadcast,
    #[serde(rename = "General-RS")]
    GeneralRs,
}

/// Operating mode of each cell from its allocated common and private rates.
pub fn classify_rs_mode(bundle: &RateBundle, tol: f64) -> Vec<RsMode> {
    (0..bundle.cells())
        .map(|l| {
            let c = &bundle.common_alloc[l];
            let p = &bundle.private[l];
            let zero = |v: f64| v.abs() <= tol;
            if c.iter().all(|&v| zero(v)) {
                RsMode::Tin
            } else if p.iter().all(|&v| zero(v)) {
                RsMode::Broadcast
            } else if c.len() == 2 && ((zero(c[0]) && zero(p[1])) || (zero(c[1]) && zero(p[0]))) {
                RsMode::NomaLike
            } else {
                RsMode::GeneralRs
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::RealMatrix;

    fn scalar_channels(h: &[&[f64]]) -> RealChannels {
        let cells = h[0].len();
        RealChannels {
            cells,
            users_per_cell: h.len() / cells,
            links: h
                .iter()
                .map(|row| row.iter().map(|&g| RealMatrix::identity(2, 2) * g).collect())
                .collect(),
            noise: vec![RealMatrix::identity(2, 2) * 0.5; h.len()],
        }
    }

    fn bundle(private: Vec<f64>, alloc: Vec<f64>) -> RateBundle {
        let s = alloc.iter().sum();
        RateBundle {
            common_caps: vec![vec![s; private.len()]],
            cell_common: vec![s],
            private: vec![private],
            common_alloc: vec![alloc],
        }
    }

    #[test]
    fn classify_modes() {
        assert_eq!(
            classify_rs_mode(&bundle(vec![1.0, 2.0], vec![0.0, 0.0]), 1e-9),
            vec![RsMode::Tin]
        );
        assert_eq!(
            classify_rs_mode(&bundle(vec![0.0, 0.0], vec![1.0, 0.5]), 1e-9),
            vec![RsMode::Broadcast]
        );
        assert_eq!(
            classify_rs_mode(&bundle(vec![1.0, 0.0], vec![0.0, 0.7]), 1e-9),
            vec![RsMode::NomaLike]
        );
        assert_eq!(
            classify_rs_mode(&bundle(vec![1.0, 0.3], vec![0.2, 0.7]), 1e-9),
            vec![RsMode::GeneralRs]
        );
    }

    #[test]
    fn zero_budget_converges_immediately() {
        let ch = scalar_channels(&[&[1.0], &[0.4]]);
        let spec = ProblemSpec::new(ObjectiveKind::Mwrm, Scheme::Rs, Signaling::Igs, vec![0.0], 2);
        let t = run_mm(&spec, &ch, spec.initial_covariances(&[1])).unwrap();
        assert!(t.converged);
        assert_eq!(t.objective, 0.0);
    }

    #[test]
    fn stationary_start_stays_put() {
        let g = 1.3;
        let p = 3.0;
        let ch = scalar_channels(&[&[g]]);
        let spec = ProblemSpec::new(ObjectiveKind::Mwrm, Scheme::Tin, Signaling::Igs, vec![p], 1);
        let mut cov = CovarianceSet::zeros(Signaling::Igs, &[1], 1);
        cov.private[0][0] = RealMatrix::identity(2, 2) * (p / 2.0);
        let t = run_mm(&spec, &ch, cov).unwrap();
        let start = t.entries[0].objective;
        assert!(t.iterations <= 2);
        assert!((t.objective - start).abs() < 1e-6);
        assert!((t.objective - (1.0 + p * g * g).log2()).abs() < 1e-6);
    }

    #[test]
    fn mwrm_sequence_monotone_and_rs_beats_tin() {
        let ch = scalar_channels(&[&[1.0, 0.3], &[0.8, 0.5], &[0.2, 1.1], &[0.6, 0.9]]);
        let mut out = Vec::new();
        for scheme in [Scheme::Rs, Scheme::Tin] {
            let spec = ProblemSpec::new(ObjectiveKind::Mwrm, scheme, Signaling::Igs, vec![10.0, 10.0], 2);
            let t = run_mm(&spec, &ch, spec.initial_covariances(&[1, 1])).unwrap();
            for w in t.objective_sequence().windows(2) {
                assert!(w[1] >= w[0]);
            }
            out.push(t.objective);
        }
        assert!(out[0] >= out[1] * (1.0 - 1e-4), "{out:?}");
    }

    #[test]
    fn powermin_single_user_matches_inverse_capacity() {
        let g: f64 = 0.9;
        let target = 1.2;
        let ch = scalar_channels(&[&[g]]);
        let mut spec = ProblemSpec::new(ObjectiveKind::PowerMin, Scheme::Tin, Signaling::Igs, vec![100.0], 1);
        spec.thresholds = vec![vec![target]];
        let t = run_mm(&spec, &ch, spec.initial_covariances(&[1])).unwrap();
        let expect = (2f64.powf(target) - 1.0) / (g * g);
        assert!(t.feasible);
        assert!(
            (t.objective - expect).abs() / expect < 1e-3,
            "{} vs {expect}",
            t.objective
        );
    }

    #[test]
    fn powermin_unreachable_target_is_infeasible() {
        let ch = scalar_channels(&[&[0.1]]);
        let mut spec = ProblemSpec::new(ObjectiveKind::PowerMin, Scheme::Tin, Signaling::Igs, vec![1.0], 1);
        spec.thresholds = vec![vec![5.0]];
        assert!(matches!(
            run_mm(&spec, &ch, spec.initial_covariances(&[1])),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn symmetric_profile_gives_equal_rates() {
        let ch = scalar_channels(&[&[1.0], &[1.0]]);
        let spec = ProblemSpec::new(ObjectiveKind::Mwrm, Scheme::Rs, Signaling::Igs, vec![4.0], 2);
        let pts = sweep_rate_region(&spec, &ch, &[vec![vec![0.5, 0.5]], vec![vec![1.0, 0.0]]]).unwrap();
        assert!((pts[0][0] - pts[0][1]).abs() < 1e-3);
        assert!(pts[1][0] >= pts[0][0]);
    }
}
