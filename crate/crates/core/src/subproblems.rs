//! Assembly and solution of the convex surrogate programs of each step.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::channel::ThetaSet;
use crate::error::{Error, Result};
use crate::linalg::{trace_of_product, RealMatrix, SymBasis};
use crate::rates::{CovarianceSet, PowerModel, RealChannels, Signaling};
use crate::rispace::{convexified_constraints, interior_start, CoefficientConstraint, SetParams};
use crate::solver::{
    solve, ConcaveExpr, LogDetTerm, MatrixIneq, Program, QuadTerm, SolveStatus, SolverOptions, SolverReport,
};
use crate::surrogates::{BlockId, CovExpansion, CovSurrogate, ThetaExpansion, ThetaSurrogate};

/// Slack added to every decodability constraint so a dark common layer
/// still leaves an interior.
const DECODE_SLACK: f64 = 1e-9;

/// Dinkelbach stopping tolerance on `F(mu)`.
pub const DINKELBACH_TOL: f64 = 1e-6;
pub const DINKELBACH_MAX_ITER: usize = 30;

/// Placement of the covariance blocks inside the decision vector.
#[derive(Debug, Clone)]
pub struct CovLayout {
    signaling: Signaling,
    bs_antennas: Vec<usize>,
    users_per_cell: usize,
    bases: Vec<SymBasis>,
    offsets: BTreeMap<BlockId, usize>,
    len: usize,
}

impl CovLayout {
    /// Blocks of inactive cells, and common blocks when `with_common` is off,
    /// are fixed at zero and get no variables.
    pub fn new(
        signaling: Signaling,
        bs_antennas: &[usize],
        users_per_cell: usize,
        active: &[bool],
        with_common: bool,
    ) -> Self {
        let bases: Vec<SymBasis> = bs_antennas
            .iter()
            .map(|&n| match signaling {
                Signaling::Igs => SymBasis::full(2 * n),
                Signaling::Pgs => SymBasis::proper(n),
            })
            .collect();
        let mut offsets = BTreeMap::new();
        let mut len = 0;
        for (l, basis) in bases.iter().enumerate() {
            if !active[l] {
                continue;
            }
            for k in 0..users_per_cell {
                offsets.insert(BlockId::Private(l, k), len);
                len += basis.len();
            }
            if with_common {
                offsets.insert(BlockId::Common(l), len);
                len += basis.len();
            }
        }
        Self {
            signaling,
            bs_antennas: bs_antennas.to_vec(),
            users_per_cell,
            bases,
            offsets,
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn cell(id: BlockId) -> usize {
        match id {
            BlockId::Private(l, _) | BlockId::Common(l) => l,
        }
    }

    fn vars(&self, id: BlockId) -> Option<(usize, &SymBasis)> {
        self.offsets.get(&id).map(|&o| (o, &self.bases[Self::cell(id)]))
    }

    pub fn has_block(&self, id: BlockId) -> bool {
        self.offsets.contains_key(&id)
    }

    pub fn encode(&self, cov: &CovarianceSet, z: &mut [f64]) {
        for (&id, &o) in &self.offsets {
            let basis = &self.bases[Self::cell(id)];
            for (j, c) in basis.coordinates(cov.block(id)).into_iter().enumerate() {
                z[o + j] = c;
            }
        }
    }

    pub fn decode(&self, z: &[f64]) -> CovarianceSet {
        let mut cov = CovarianceSet::zeros(self.signaling, &self.bs_antennas, self.users_per_cell);
        for (&id, &o) in &self.offsets {
            let basis = &self.bases[Self::cell(id)];
            *cov.block_mut(id) = basis.assemble(&z[o..o + basis.len()]);
        }
        cov
    }

    /// Coefficients `B E_j B^T` of the congruence terms.
    fn congruence(&self, terms: &[(BlockId, RealMatrix)]) -> Vec<(usize, RealMatrix)> {
        let mut acc: BTreeMap<usize, RealMatrix> = BTreeMap::new();
        for (id, b) in terms {
            let Some((o, basis)) = self.vars(*id) else { continue };
            if b.iter().all(|v| *v == 0.0) {
                continue;
            }
            for (j, e) in basis.matrices().iter().enumerate() {
                let a = b * e * b.transpose();
                match acc.get_mut(&(o + j)) {
                    Some(m) => *m += a,
                    None => {
                        acc.insert(o + j, a);
                    }
                }
            }
        }
        acc.into_iter().collect()
    }

    /// Coefficients of `sum_b Tr(G_b P_b)`.
    fn trace_linear(&self, linear: &[(BlockId, RealMatrix)]) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for (id, g) in linear {
            let Some((o, basis)) = self.vars(*id) else { continue };
            for (j, e) in basis.matrices().iter().enumerate() {
                let c = trace_of_product(g, e);
                if c != 0.0 {
                    out.push((o + j, c));
                }
            }
        }
        out
    }

    /// Coefficients of `Tr(P_b)` summed over the listed blocks, scaled by `scale`.
    fn trace_of_blocks(&self, ids: &[BlockId], scale: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for id in ids {
            let Some((o, basis)) = self.vars(*id) else { continue };
            for (j, e) in basis.matrices().iter().enumerate() {
                let t = e.trace();
                if t != 0.0 {
                    out.push((o + j, scale * t));
                }
            }
        }
        out
    }

    fn cell_blocks(&self, l: usize) -> Vec<BlockId> {
        let mut ids: Vec<BlockId> = (0..self.users_per_cell).map(|k| BlockId::Private(l, k)).collect();
        ids.push(BlockId::Common(l));
        ids
    }

    fn psd_constraints(&self) -> Vec<MatrixIneq> {
        self.offsets
            .iter()
            .map(|(&id, &o)| {
                let basis = &self.bases[Self::cell(id)];
                MatrixIneq {
                    base: RealMatrix::zeros(basis.dim(), basis.dim()),
                    coeffs: basis
                        .matrices()
                        .iter()
                        .enumerate()
                        .map(|(j, e)| (o + j, e.clone()))
                        .collect(),
                }
            })
            .collect()
    }

    fn surrogate_expr(&self, s: &CovSurrogate) -> ConcaveExpr {
        ConcaveExpr {
            constant: s.affine.constant,
            linear: self.trace_linear(&s.affine.linear),
            logdets: vec![LogDetTerm {
                weight: s.logdet.weight,
                base: s.logdet.base.clone(),
                coeffs: self.congruence(&s.logdet.terms),
            }],
            quad: None,
        }
    }
}

fn with_terms(mut e: ConcaveExpr, extra: &[(usize, f64)], shift: f64) -> ConcaveExpr {
    e.linear.extend_from_slice(extra);
    e.constant += shift;
    e
}

/// Inputs shared by every covariance-step problem.
#[derive(Debug, Clone, Copy)]
pub struct PStepInput<'a> {
    pub ch: &'a RealChannels,
    pub expansion: &'a CovExpansion,
    /// Per-cell power budgets; `None` leaves power unconstrained (power minimization).
    pub budgets: Option<&'a [f64]>,
    /// Rate splitting (`true`) or treating interference as noise.
    pub with_common: bool,
    pub opts: &'a SolverOptions,
}

/// One Dinkelbach iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DinkelbachStep {
    pub mu: f64,
    pub f_value: f64,
}

/// Result of a covariance step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PStepOutput {
    pub cov: CovarianceSet,
    /// Common-rate allocation chosen by the surrogate program.
    pub common_alloc: Vec<Vec<f64>>,
    /// Surrogate objective at the solution.
    pub value: f64,
    pub report: SolverReport,
    pub dinkelbach: Vec<DinkelbachStep>,
}

/// Assembled covariance-step program pieces.
struct PStep<'a> {
    input: PStepInput<'a>,
    layout: CovLayout,
    cells: usize,
    users: usize,
    /// Index of `r_lk,c` per user, `None` for TIN or inactive cells.
    rc_index: Vec<Vec<Option<usize>>>,
    num_vars: usize,
    private: Vec<Vec<ConcaveExpr>>,
    common: Vec<Vec<ConcaveExpr>>,
}

impl<'a> PStep<'a> {
    fn new(input: PStepInput<'a>) -> Result<Self> {
        let ch = input.ch;
        let cov = &input.expansion.cov;
        let cells = ch.cells;
        let users = ch.users_per_cell;
        let active: Vec<bool> = match input.budgets {
            Some(b) => {
                if b.len() != cells {
                    return Err(Error::Dimension(format!("{} budgets for {cells} cells", b.len())));
                }
                b.iter().map(|&p| p > 0.0).collect()
            }
            None => vec![true; cells],
        };
        let bs_antennas: Vec<usize> = cov.common.iter().map(|c| c.nrows() / 2).collect();
        let layout = CovLayout::new(cov.signaling, &bs_antennas, users, &active, input.with_common);
        let mut num_vars = layout.len();
        let mut rc_index = vec![vec![None; users]; cells];
        if input.with_common {
            for l in 0..cells {
                if active[l] {
                    for slot in rc_index[l].iter_mut() {
                        *slot = Some(num_vars);
                        num_vars += 1;
                    }
                }
            }
        }
        let mut private = Vec::with_capacity(cells);
        let mut common = Vec::with_capacity(cells);
        for l in 0..cells {
            let mut pr = Vec::with_capacity(users);
            let mut co = Vec::with_capacity(users);
            for k in 0..users {
                pr.push(layout.surrogate_expr(&input.expansion.private_surrogate(l, k, ch)?));
                if rc_index[l][k].is_some() {
                    co.push(layout.surrogate_expr(&input.expansion.common_surrogate(l, k, ch)?));
                }
            }
            private.push(pr);
            common.push(co);
        }
        Ok(Self {
            input,
            layout,
            cells,
            users,
            rc_index,
            num_vars,
            private,
            common,
        })
    }

    fn add_var(&mut self) -> usize {
        self.num_vars += 1;
        self.num_vars - 1
    }

    /// Decodability, nonnegative common rates, power budgets and PSD blocks.
    fn base_program(&self) -> Program {
        let mut p = Program::new(self.num_vars);
        for l in 0..self.cells {
            let rcs: Vec<usize> = self.rc_index[l].iter().flatten().copied().collect();
            if rcs.is_empty() {
                continue;
            }
            let minus: Vec<(usize, f64)> = rcs.iter().map(|&j| (j, -1.0)).collect();
            for e in &self.common[l] {
                p.constraints.push(with_terms(e.clone(), &minus, DECODE_SLACK));
            }
            for &j in &rcs {
                p.constraints.push(ConcaveExpr::affine(0.0, vec![(j, 1.0)]));
            }
        }
        if let Some(b) = self.input.budgets {
            for (l, &budget) in b.iter().enumerate() {
                if budget > 0.0 {
                    let tr = self.layout.trace_of_blocks(&self.layout.cell_blocks(l), -1.0);
                    p.constraints.push(ConcaveExpr::affine(budget, tr));
                }
            }
        }
        p.matrix_ineqs = self.layout.psd_constraints();
        p
    }

    /// `r_lk,c + r~_lk,p` plus extra linear terms.
    fn user_rate(&self, l: usize, k: usize, extra: &[(usize, f64)]) -> ConcaveExpr {
        let mut terms = extra.to_vec();
        if let Some(j) = self.rc_index[l][k] {
            terms.push((j, 1.0));
        }
        with_terms(self.private[l][k].clone(), &terms, 0.0)
    }

    /// Start point: expansion covariances pulled slightly towards an
    /// equal split so every block is positive definite and budgets hold strictly.
    fn start(&self) -> Vec<f64> {
        let cov = &self.input.expansion.cov;
        let bs_antennas: Vec<usize> = cov.common.iter().map(|c| c.nrows() / 2).collect();
        let budgets: Vec<f64> = match self.input.budgets {
            Some(b) => b.to_vec(),
            None => (0..self.cells).map(|l| cov.cell_power(l).max(1e-6)).collect(),
        };
        let split = CovarianceSet::equal_split(cov.signaling, &bs_antennas, self.users, &budgets, true);
        let mut mixed = cov.clone();
        let (keep, add) = if self.input.budgets.is_some() {
            (0.98, 0.01)
        } else {
            (1.0, 1e-3)
        };
        for l in 0..self.cells {
            for k in 0..self.users {
                mixed.private[l][k] = &cov.private[l][k] * keep + &split.private[l][k] * add;
            }
            mixed.common[l] = &cov.common[l] * keep + &split.common[l] * add;
        }
        let mut z = vec![0.0; self.num_vars];
        self.layout.encode(&mixed, &mut z);
        // Common rates: an even share of the smallest decodable surrogate rate.
        for l in 0..self.cells {
            let caps: Vec<f64> = self.common[l].iter().filter_map(|e| e.value(&z)).collect();
            let cap = caps.iter().cloned().fold(f64::INFINITY, f64::min);
            for j in self.rc_index[l].iter().flatten() {
                z[*j] = if cap.is_finite() && cap > 0.0 {
                    cap / (2.0 * self.users as f64)
                } else {
                    1e-12
                };
            }
        }
        z
    }

    fn surrogate_rate(&self, z: &[f64], l: usize, k: usize) -> f64 {
        self.user_rate(l, k, &[]).value(z).unwrap_or(f64::NEG_INFINITY)
    }

    fn allocation(&self, z: &[f64]) -> Vec<Vec<f64>> {
        self.rc_index
            .iter()
            .map(|row| row.iter().map(|j| j.map_or(0.0, |j| z[j].max(0.0))).collect())
            .collect()
    }

    fn output(&self, z: &[f64], value: f64, report: SolverReport, dinkelbach: Vec<DinkelbachStep>) -> PStepOutput {
        PStepOutput {
            cov: self.layout.decode(&z[..self.layout.len()]),
            common_alloc: self.allocation(z),
            value,
            report,
            dinkelbach,
        }
    }

    fn run(&self, prog: &Program, z0: &[f64]) -> Result<(Vec<f64>, SolverReport)> {
        let (z, report) = solve(prog, z0, self.input.opts)?;
        if report.status == SolveStatus::Infeasible {
            return Err(Error::Infeasible(
                "covariance-step program has no feasible point".into(),
            ));
        }
        Ok((z, report))
    }

    fn threshold_constraints(
        &self,
        prog: &mut Program,
        thresholds: Option<&[Vec<f64>]>,
        s_index: Option<&[Vec<usize>]>,
    ) {
        let Some(th) = thresholds else { return };
        for l in 0..self.cells {
            for k in 0..self.users {
                if th[l][k] > 0.0 {
                    let e = match s_index {
                        Some(s) => {
                            let mut terms = vec![(s[l][k], 1.0)];
                            if let Some(j) = self.rc_index[l][k] {
                                terms.push((j, 1.0));
                            }
                            ConcaveExpr::affine(-th[l][k], terms)
                        }
                        None => with_terms(self.user_rate(l, k, &[]), &[], -th[l][k]),
                    };
                    prog.constraints.push(e);
                }
            }
        }
    }
}

/// Max-min weighted rate: `max r` s.t. `r_lk,c + r~_lk,p >= lambda_lk r`.
pub fn solve_p_step_mwrm(input: PStepInput<'_>, weights: &[Vec<f64>]) -> Result<PStepOutput> {
    let mut st = PStep::new(input)?;
    let r = st.add_var();
    let mut prog = st.base_program();
    prog.objective = vec![(r, 1.0)];
    let mut z = st.start();
    let mut lowest = f64::INFINITY;
    for l in 0..st.cells {
        for k in 0..st.users {
            let w = weights[l][k];
            if w > 0.0 {
                prog.constraints.push(st.user_rate(l, k, &[(r, -w)]));
                lowest = lowest.min(st.surrogate_rate(&z, l, k) / w);
            }
        }
    }
    if !lowest.is_finite() {
        return Err(Error::InvalidParameter("max-min weights are all zero".into()));
    }
    z[r] = lowest - 1e-3 * (1.0 + lowest.abs());
    let (z, report) = st.run(&prog, &z)?;
    Ok(st.output(&z, z[r], report, Vec::new()))
}

/// Weighted sum rate: `max sum w_lk (r_lk,c + s_lk)` with `s_lk <= r~_lk,p`.
pub fn solve_p_step_wsrm(input: PStepInput<'_>, weights: &[Vec<f64>]) -> Result<PStepOutput> {
    let mut st = PStep::new(input)?;
    let s = epigraph_vars(&mut st);
    let mut prog = st.base_program();
    let mut z = st.start();
    z.resize(st.num_vars, 0.0);
    for l in 0..st.cells {
        for k in 0..st.users {
            prog.constraints
                .push(with_terms(st.private[l][k].clone(), &[(s[l][k], -1.0)], 0.0));
            let v = st.private[l][k].value(&z).unwrap_or(0.0);
            z[s[l][k]] = v - 1e-3 * (1.0 + v.abs());
            let w = weights[l][k];
            if w != 0.0 {
                prog.objective.push((s[l][k], w));
                if let Some(j) = st.rc_index[l][k] {
                    prog.objective.push((j, w));
                }
            }
        }
    }
    let (z, report) = st.run(&prog, &z)?;
    let value = prog.objective_value(&z);
    Ok(st.output(&z, value, report, Vec::new()))
}

fn epigraph_vars(st: &mut PStep<'_>) -> Vec<Vec<usize>> {
    (0..st.cells)
        .map(|_| (0..st.users).map(|_| st.add_var()).collect::<Vec<_>>())
        .collect()
}

/// Global energy efficiency by Dinkelbach iterations on the surrogate problem.
pub fn solve_p_step_gee(
    input: PStepInput<'_>,
    pm: &PowerModel,
    thresholds: Option<&[Vec<f64>]>,
) -> Result<PStepOutput> {
    let mut st = PStep::new(input)?;
    let s = epigraph_vars(&mut st);
    let mut prog = st.base_program();
    let mut z = st.start();
    z.resize(st.num_vars, 0.0);
    let mut numerator_terms = Vec::new();
    for l in 0..st.cells {
        for k in 0..st.users {
            prog.constraints
                .push(with_terms(st.private[l][k].clone(), &[(s[l][k], -1.0)], 0.0));
            let v = st.private[l][k].value(&z).unwrap_or(0.0);
            z[s[l][k]] = v - 1e-3 * (1.0 + v.abs());
            numerator_terms.push((s[l][k], 1.0));
            if let Some(j) = st.rc_index[l][k] {
                numerator_terms.push((j, 1.0));
            }
        }
    }
    st.threshold_constraints(&mut prog, thresholds, Some(&s));
    let all_blocks: Vec<BlockId> = (0..st.cells).flat_map(|l| st.layout.cell_blocks(l)).collect();
    let power_terms = st.layout.trace_of_blocks(&all_blocks, 1.0);
    let static_power = (st.cells * st.users) as f64 * pm.p_c;
    let eval = |z: &[f64]| -> (f64, f64) {
        let num: f64 = numerator_terms.iter().map(|(j, c)| c * z[*j]).sum();
        let den = static_power + pm.eta * power_terms.iter().map(|(j, c)| c * z[*j]).sum::<f64>();
        (num, den)
    };

    let mut mu = 0.0;
    let mut steps = Vec::new();
    let mut total_iters = 0;
    let mut last = None;
    for _ in 0..DINKELBACH_MAX_ITER {
        let mut objective = numerator_terms.clone();
        objective.extend(power_terms.iter().map(|(j, c)| (*j, -mu * pm.eta * c)));
        prog.objective = objective;
        let (zn, report) = st.run(&prog, &z)?;
        total_iters += report.iterations;
        let (num, den) = eval(&zn);
        let f_value = num - mu * den;
        steps.push(DinkelbachStep { mu, f_value });
        z = zn;
        last = Some(report);
        mu = num / den;
        if f_value < DINKELBACH_TOL {
            break;
        }
    }
    let mut report = last.expect("at least one Dinkelbach iteration");
    report.iterations = total_iters;
    if steps.last().is_some_and(|s| s.f_value >= DINKELBACH_TOL) {
        report.status = SolveStatus::MaxIterations;
    }
    let (num, den) = eval(&z);
    Ok(st.output(&z, num / den, report, steps))
}

/// Max-min energy efficiency by generalized Dinkelbach iterations.
pub fn solve_p_step_mwee(
    input: PStepInput<'_>,
    pm: &PowerModel,
    thresholds: Option<&[Vec<f64>]>,
) -> Result<PStepOutput> {
    let mut st = PStep::new(input)?;
    let tau = st.add_var();
    let mut base = st.base_program();
    st.threshold_constraints(&mut base, thresholds, None);
    let kk = st.users as f64;
    // Per-user consumption p_c + eta Tr P_lk + (eta/K) Tr P_lc as affine coefficients.
    let consumption: Vec<Vec<Vec<(usize, f64)>>> = (0..st.cells)
        .map(|l| {
            (0..st.users)
                .map(|k| {
                    let mut c = st.layout.trace_of_blocks(&[BlockId::Private(l, k)], pm.eta);
                    c.extend(st.layout.trace_of_blocks(&[BlockId::Common(l)], pm.eta / kk));
                    c
                })
                .collect()
        })
        .collect();
    let den = |z: &[f64], l: usize, k: usize| -> f64 {
        pm.p_c + consumption[l][k].iter().map(|(j, c)| c * z[*j]).sum::<f64>()
    };
    let min_ratio = |z: &[f64]| -> f64 {
        let mut m = f64::INFINITY;
        for l in 0..st.cells {
            for k in 0..st.users {
                m = m.min(st.surrogate_rate(z, l, k) / den(z, l, k));
            }
        }
        m
    };

    let mut z = st.start();
    let mut mu = min_ratio(&z).max(0.0);
    let mut steps = Vec::new();
    let mut total_iters = 0;
    let mut last = None;
    for _ in 0..DINKELBACH_MAX_ITER {
        let mut prog = base.clone();
        prog.objective = vec![(tau, 1.0)];
        let mut lowest = f64::INFINITY;
        for l in 0..st.cells {
            for k in 0..st.users {
                let mut extra: Vec<(usize, f64)> = consumption[l][k].iter().map(|(j, c)| (*j, -mu * c)).collect();
                extra.push((tau, -1.0));
                let e = with_terms(st.user_rate(l, k, &extra), &[], -mu * pm.p_c);
                z[tau] = 0.0;
                lowest = lowest.min(e.value(&z).unwrap_or(f64::NEG_INFINITY));
                prog.constraints.push(e);
            }
        }
        z[tau] = lowest - 1e-3 * (1.0 + lowest.abs());
        let (zn, report) = st.run(&prog, &z)?;
        total_iters += report.iterations;
        let f_value = zn[tau];
        steps.push(DinkelbachStep { mu, f_value });
        z = zn;
        last = Some(report);
        mu = min_ratio(&z);
        if f_value < DINKELBACH_TOL {
            break;
        }
    }
    let mut report = last.expect("at least one Dinkelbach iteration");
    report.iterations = total_iters;
    if steps.last().is_some_and(|s| s.f_value >= DINKELBACH_TOL) {
        report.status = SolveStatus::MaxIterations;
    }
    let value = min_ratio(&z);
    Ok(st.output(&z, value, report, steps))
}

/// Minimum total transmit power subject to per-user rate targets.
pub fn solve_p_step_powermin(input: PStepInput<'_>, thresholds: &[Vec<f64>]) -> Result<PStepOutput> {
    let st = PStep::new(input)?;
    let mut prog = st.base_program();
    let all_blocks: Vec<BlockId> = (0..st.cells).flat_map(|l| st.layout.cell_blocks(l)).collect();
    prog.objective = st.layout.trace_of_blocks(&all_blocks, -1.0);
    st.threshold_constraints(&mut prog, Some(thresholds), None);
    let z = st.start();
    let (z, report) = st.run(&prog, &z)?;
    let value = -prog.objective_value(&z);
    Ok(st.output(&z, value, report, Vec::new()))
}

/// Objective of a surface step; power is fixed so every outer objective
/// reduces to a weighted max-min or weighted sum of rates.
#[derive(Debug, Clone, PartialEq)]
pub enum ThetaObjective {
    MaxMin(Vec<Vec<f64>>),
    WeightedSum(Vec<Vec<f64>>),
}

#[derive(Debug, Clone)]
pub struct ThetaStepOutput {
    /// Unprojected candidate coefficients.
    pub candidate: ThetaSet,
    pub common_alloc: Vec<Vec<f64>>,
    pub value: f64,
    pub report: SolverReport,
}

fn theta_expr(s: &ThetaSurrogate) -> ConcaveExpr {
    let nx = s.center.len();
    let constant = s.constant - s.gradient.iter().zip(&s.center).map(|(g, x)| g * x).sum::<f64>();
    let linear = s
        .gradient
        .iter()
        .enumerate()
        .filter(|(_, g)| **g != 0.0)
        .map(|(j, g)| (j, *g))
        .collect();
    let quad = (s.curvature.iter().any(|q| *q != 0.0)).then(|| QuadTerm {
        indices: (0..nx).collect(),
        center: s.center.clone(),
        q: s.curvature.clone(),
    });
    ConcaveExpr {
        constant,
        linear,
        logdets: Vec::new(),
        quad,
    }
}

fn coefficient_expr(c: &CoefficientConstraint) -> ConcaveExpr {
    match c {
        CoefficientConstraint::Disk { indices } => ConcaveExpr {
            constant: 1.0,
            quad: Some(QuadTerm {
                indices: indices.clone(),
                center: vec![0.0; indices.len()],
                q: RealMatrix::identity(indices.len(), indices.len()) * 2.0,
            }),
            ..ConcaveExpr::default()
        },
        CoefficientConstraint::Linear { coeffs, rhs } => ConcaveExpr::affine(-rhs, coeffs.clone()),
    }
}

/// Surface step at fixed covariances over the convexified feasibility set.
pub fn solve_theta_step(
    ep: &ThetaExpansion,
    objective: &ThetaObjective,
    params: &SetParams,
    with_common: bool,
    opts: &SolverOptions,
) -> Result<ThetaStepOutput> {
    let nx = ep.num_params();
    let cells = ep.cells;
    let users = ep.users_per_cell;
    let mut num_vars = nx;
    let mut rc_index = vec![vec![None; users]; cells];
    if with_common {
        for l in 0..cells {
            if ep.cov.common[l].iter().any(|v| *v != 0.0) {
                for slot in rc_index[l].iter_mut() {
                    *slot = Some(num_vars);
                    num_vars += 1;
                }
            }
        }
    }
    let mut private = Vec::with_capacity(cells);
    for l in 0..cells {
        let mut row = Vec::with_capacity(users);
        for k in 0..users {
            row.push(theta_expr(&ep.private_surrogate(l, k)?));
        }
        private.push(row);
    }

    let mut z = interior_start(&ep.theta, params);
    z.resize(num_vars, 0.0);
    let mut prog = Program::new(num_vars);
    for c in convexified_constraints(&ep.theta, params)? {
        prog.constraints.push(coefficient_expr(&c));
    }
    for l in 0..cells {
        let rcs: Vec<usize> = rc_index[l].iter().flatten().copied().collect();
        if rcs.is_empty() {
            continue;
        }
        let minus: Vec<(usize, f64)> = rcs.iter().map(|&j| (j, -1.0)).collect();
        let mut cap = f64::INFINITY;
        for k in 0..users {
            let e = theta_expr(&ep.common_surrogate(l, k)?);
            cap = cap.min(e.value(&z).unwrap_or(0.0));
            prog.constraints.push(with_terms(e, &minus, DECODE_SLACK));
        }
        for &j in &rcs {
            prog.constraints.push(ConcaveExpr::affine(0.0, vec![(j, 1.0)]));
            z[j] = if cap > 0.0 { cap / (2.0 * users as f64) } else { 1e-12 };
        }
    }
    let rate = |l: usize, k: usize, extra: &[(usize, f64)]| -> ConcaveExpr {
        let mut terms = extra.to_vec();
        if let Some(j) = rc_index[l][k] {
            terms.push((j, 1.0));
        }
        with_terms(private[l][k].clone(), &terms, 0.0)
    };

    match objective {
        ThetaObjective::MaxMin(weights) => {
            let r = num_vars;
            prog.num_vars += 1;
            z.push(0.0);
            let mut lowest = f64::INFINITY;
            for l in 0..cells {
                for k in 0..users {
                    let w = weights[l][k];
                    if w > 0.0 {
                        let e = rate(l, k, &[]);
                        lowest = lowest.min(e.value(&z).unwrap_or(f64::NEG_INFINITY) / w);
                        prog.constraints.push(rate(l, k, &[(r, -w)]));
                    }
                }
            }
            if !lowest.is_finite() {
                return Err(Error::InvalidParameter("max-min weights are all zero".into()));
            }
            z[r] = lowest - 1e-3 * (1.0 + lowest.abs());
            prog.objective = vec![(r, 1.0)];
        }
        ThetaObjective::WeightedSum(weights) => {
            for l in 0..cells {
                for k in 0..users {
                    let s = prog.num_vars;
                    prog.num_vars += 1;
                    let v = private[l][k].value(&z).unwrap_or(0.0);
                    z.push(v - 1e-3 * (1.0 + v.abs()));
                    prog.constraints
                        .push(with_terms(private[l][k].clone(), &[(s, -1.0)], 0.0));
                    let w = weights[l][k];
                    if w != 0.0 {
                        prog.objective.push((s, w));
                        if let Some(j) = rc_index[l][k] {
                            prog.objective.push((j, w));
                        }
                    }
                }
            }
        }
    }

    let (z, report) = solve(&prog, &z, opts)?;
    if report.status == SolveStatus::Infeasible {
        return Err(Error::Infeasible("surface-step program has no feasible point".into()));
    }
    let candidate = ep.theta.with_real_params(&z[..nx])?;
    let common_alloc = rc_index
        .iter()
        .map(|row| row.iter().map(|j| j.map_or(0.0, |j| z[j].max(0.0))).collect())
        .collect();
    Ok(ThetaStepOutput {
        candidate,
        common_alloc,
        value: prog.objective_value(&z),
        report,
    })
}
