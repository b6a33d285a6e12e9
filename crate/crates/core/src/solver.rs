//! Path-following barrier method for the small concave programs of each step.
//!
//! Programs have the form
//!
//! ```text
//! maximize    c^T z
//! subject to  g_i(z) >= 0       (g_i concave: affine + log-det + concave quadratic)
//!             F_m(z) >= 0       (linear matrix inequalities)
//! ```
//!
//! and are solved by damped Newton centering on
//! `t c^T z + sum ln g_i(z) + sum ln det F_m(z)` with geometric increase of `t`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius_inner, symmetrize, RealMatrix};

/// `weight * ln det(base + sum_j z_j A_j)`, weight >= 0.
#[derive(Debug, Clone)]
pub struct LogDetTerm {
    pub weight: f64,
    pub base: RealMatrix,
    pub coeffs: Vec<(usize, RealMatrix)>,
}

impl LogDetTerm {
    fn matrix(&self, z: &[f64]) -> RealMatrix {
        let mut s = self.base.clone();
        for (j, a) in &self.coeffs {
            if z[*j] != 0.0 {
                s += a * z[*j];
            }
        }
        symmetrize(&s)
    }
}

/// `-1/2 (z_S - center)^T Q (z_S - center)` with `Q` PSD.
#[derive(Debug, Clone)]
pub struct QuadTerm {
    pub indices: Vec<usize>,
    pub center: Vec<f64>,
    pub q: RealMatrix,
}

/// Concave scalar function of the decision vector.
#[derive(Debug, Clone, Default)]
pub struct ConcaveExpr {
    pub constant: f64,
    pub linear: Vec<(usize, f64)>,
    pub logdets: Vec<LogDetTerm>,
    pub quad: Option<QuadTerm>,
}

impl ConcaveExpr {
    pub fn affine(constant: f64, linear: Vec<(usize, f64)>) -> Self {
        Self {
            constant,
            linear,
            ..Self::default()
        }
    }

    /// Value, or `None` outside the log-det domain.
    pub fn value(&self, z: &[f64]) -> Option<f64> {
        let mut v = self.constant;
        for (j, c) in &self.linear {
            v += c * z[*j];
        }
        for t in &self.logdets {
            let chol = t.matrix(z).cholesky()?;
            let l = chol.l_dirty();
            let mut acc = 0.0;
            for i in 0..l.nrows() {
                acc += l[(i, i)].ln();
            }
            v += t.weight * 2.0 * acc;
        }
        if let Some(q) = &self.quad {
            let d = quad_delta(q, z);
            v -= 0.5 * d.dot(&(&q.q * &d));
        }
        v.is_finite().then_some(v)
    }

    /// Adds the gradient and Hessian into `grad` and `hess`; returns the value.
    fn accumulate(&self, z: &[f64], grad: &mut DVector<f64>, hess: &mut RealMatrix) -> Option<f64> {
        let mut v = self.constant;
        for (j, c) in &self.linear {
            v += c * z[*j];
            grad[*j] += c;
        }
        for t in &self.logdets {
            let s = t.matrix(z);
            let chol = s.cholesky()?;
            let l = chol.l_dirty();
            let mut acc = 0.0;
            for i in 0..l.nrows() {
                acc += l[(i, i)].ln();
            }
            v += t.weight * 2.0 * acc;
            let s_inv = chol.inverse();
            let b: Vec<RealMatrix> = t.coeffs.iter().map(|(_, a)| &s_inv * a).collect();
            for (x, (j, _)) in t.coeffs.iter().enumerate() {
                grad[*j] += t.weight * b[x].trace();
                for (y, (k, _)) in t.coeffs.iter().enumerate().skip(x) {
                    let h = -t.weight * frobenius_inner(&b[x], &b[y].transpose());
                    hess[(*j, *k)] += h;
                    if x != y {
                        hess[(*k, *j)] += h;
                    }
                }
            }
        }
        if let Some(q) = &self.quad {
            let d = quad_delta(q, z);
            let qd = &q.q * &d;
            v -= 0.5 * d.dot(&qd);
            for (a, &ja) in q.indices.iter().enumerate() {
                grad[ja] -= qd[a];
                for (b, &jb) in q.indices.iter().enumerate() {
                    hess[(ja, jb)] -= q.q[(a, b)];
                }
            }
        }
        v.is_finite().then_some(v)
    }
}

fn quad_delta(q: &QuadTerm, z: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        q.indices.len(),
        q.indices.iter().zip(&q.center).map(|(&j, &c)| z[j] - c),
    )
}

/// `base + sum_j z_j A_j` positive semidefinite.
#[derive(Debug, Clone)]
pub struct MatrixIneq {
    pub base: RealMatrix,
    pub coeffs: Vec<(usize, RealMatrix)>,
}

impl MatrixIneq {
    fn as_logdet(&self) -> LogDetTerm {
        LogDetTerm {
            weight: 1.0,
            base: self.base.clone(),
            coeffs: self.coeffs.clone(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Program {
    pub num_vars: usize,
    /// Sparse linear objective to maximize.
    pub objective: Vec<(usize, f64)>,
    pub constraints: Vec<ConcaveExpr>,
    pub matrix_ineqs: Vec<MatrixIneq>,
}

impl Program {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            ..Self::default()
        }
    }

    pub fn objective_value(&self, z: &[f64]) -> f64 {
        self.objective.iter().map(|(j, c)| c * z[*j]).sum()
    }

    fn barrier_weight(&self) -> f64 {
        self.constraints.len() as f64 + self.matrix_ineqs.iter().map(|m| m.base.nrows() as f64).sum::<f64>()
    }

    /// Largest constraint violation at `z` (0 when feasible).
    pub fn max_violation(&self, z: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for g in &self.constraints {
            match g.value(z) {
                Some(v) => worst = worst.max(-v),
                None => return f64::INFINITY,
            }
        }
        for m in &self.matrix_ineqs {
            let f = m.as_logdet().matrix(z);
            worst = worst.max(-crate::linalg::min_eigenvalue(&f));
        }
        worst
    }

    fn strictly_feasible(&self, z: &[f64]) -> bool {
        self.matrix_ineqs
            .iter()
            .all(|m| m.as_logdet().matrix(z).cholesky().is_some())
            && self.constraints.iter().all(|g| g.value(z).is_some_and(|v| v > 0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIterations,
    /// Newton steps stopped making progress before the gap target.
    Stalled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Target relative barrier gap `m / t`.
    pub gap_tol: f64,
    /// Barrier parameter growth per outer round.
    pub growth: f64,
    pub max_newton: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-8,
            growth: 20.0,
            max_newton: 3000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub status: SolveStatus,
    pub objective: f64,
    pub gap: f64,
    pub max_violation: f64,
    pub iterations: usize,
}

impl SolverReport {
    pub fn is_usable(&self) -> bool {
        matches!(
            self.status,
            SolveStatus::Optimal | SolveStatus::Stalled | SolveStatus::MaxIterations
        )
    }
}

/// Barrier function value with gradient and Hessian.
struct Barrier<'a> {
    prog: &'a Program,
    lmis: Vec<LogDetTerm>,
}

impl<'a> Barrier<'a> {
    fn new(prog: &'a Program) -> Self {
        Self {
            prog,
            lmis: prog.matrix_ineqs.iter().map(MatrixIneq::as_logdet).collect(),
        }
    }

    fn value(&self, z: &[f64], t: f64) -> Option<f64> {
        let mut v = t * self.prog.objective_value(z);
        for g in &self.prog.constraints {
            let gv = g.value(z)?;
            if gv <= 0.0 {
                return None;
            }
            v += gv.ln();
        }
        for m in &self.lmis {
            let chol = m.matrix(z).cholesky()?;
            let l = chol.l_dirty();
            for i in 0..l.nrows() {
                v += 2.0 * l[(i, i)].ln();
            }
        }
        v.is_finite().then_some(v)
    }

    fn derivatives(&self, z: &[f64], t: f64) -> Option<(DVector<f64>, RealMatrix)> {
        let n = self.prog.num_vars;
        let mut grad = DVector::zeros(n);
        let mut hess = RealMatrix::zeros(n, n);
        for (j, c) in &self.prog.objective {
            grad[*j] += t * c;
        }
        let mut g_grad = DVector::zeros(n);
        let mut g_hess = RealMatrix::zeros(n, n);
        for g in &self.prog.constraints {
            g_grad.fill(0.0);
            g_hess.fill(0.0);
            let gv = g.accumulate(z, &mut g_grad, &mut g_hess)?;
            if gv <= 0.0 {
                return None;
            }
            grad.axpy(1.0 / gv, &g_grad, 1.0);
            hess += &g_hess / gv;
            hess.ger(-1.0 / (gv * gv), &g_grad, &g_grad, 1.0);
        }
        for m in &self.lmis {
            m.accumulate_into(z, &mut grad, &mut hess)?;
        }
        Some((grad, hess))
    }
}

impl LogDetTerm {
    fn accumulate_into(&self, z: &[f64], grad: &mut DVector<f64>, hess: &mut RealMatrix) -> Option<()> {
        let e = ConcaveExpr {
            constant: 0.0,
            linear: vec![],
            logdets: vec![self.clone()],
            quad: None,
        };
        e.accumulate(z, grad, hess).map(|_| ())
    }
}

/// Newton direction for maximizing a concave function with Hessian `hess`.
fn newton_direction(grad: &DVector<f64>, hess: &RealMatrix) -> Option<DVector<f64>> {
    let neg = -hess;
    let neg = symmetrize(&neg);
    if let Some(ch) = neg.clone().cholesky() {
        return Some(ch.solve(grad));
    }
    let scale = neg.diagonal().amax().max(1e-300);
    let mut reg = 1e-14 * scale;
    for _ in 0..12 {
        let mut m = neg.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += reg;
        }
        if let Some(ch) = m.cholesky() {
            return Some(ch.solve(grad));
        }
        reg *= 100.0;
    }
    None
}

enum Centering {
    Converged,
    Stalled,
}

/// Damped Newton centering; `stop` is checked after every accepted step.
fn center(
    bar: &Barrier<'_>,
    z: &mut [f64],
    t: f64,
    budget: &mut usize,
    mut stop: impl FnMut(&[f64]) -> bool,
) -> Result<Centering> {
    for _ in 0..200 {
        if *budget == 0 {
            return Ok(Centering::Stalled);
        }
        *budget -= 1;
        let (grad, hess) = bar
            .derivatives(z, t)
            .ok_or_else(|| Error::Solver("iterate left the barrier domain".into()))?;
        let Some(dir) = newton_direction(&grad, &hess) else {
            return Ok(Centering::Stalled);
        };
        let decrement = grad.dot(&dir);
        if !decrement.is_finite() {
            return Ok(Centering::Stalled);
        }
        let f0 = bar
            .value(z, t)
            .ok_or_else(|| Error::Solver("barrier undefined".into()))?;
        // The decrement cannot fall below the roundoff of the barrier value.
        if decrement / 2.0 < 1e-10f64.max(1e-14 * f0.abs()) {
            return Ok(Centering::Converged);
        }
        let mut alpha = 1.0;
        let mut trial = z.to_vec();
        let mut accepted = false;
        for _ in 0..60 {
            for (i, v) in trial.iter_mut().enumerate() {
                *v = z[i] + alpha * dir[i];
            }
            if let Some(f1) = bar.value(&trial, t) {
                if f1 >= f0 + 0.25 * alpha * decrement {
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted || alpha < 1e-8 {
            // Roundoff in the barrier value blocks further progress.
            if decrement / 2.0 < 1e-6 {
                return Ok(Centering::Converged);
            }
            return Ok(Centering::Stalled);
        }
        z.copy_from_slice(&trial);
        if stop(z) {
            return Ok(Centering::Converged);
        }
    }
    Ok(Centering::Stalled)
}

fn report(prog: &Program, z: &[f64], status: SolveStatus, gap: f64, iterations: usize) -> SolverReport {
    SolverReport {
        status,
        objective: prog.objective_value(z),
        gap,
        max_violation: prog.max_violation(z),
        iterations,
    }
}

/// Finds a strictly feasible point by maximizing `-s` subject to `g_i + s >= 0`.
fn phase_one(prog: &Program, z0: &[f64], opts: &SolverOptions, budget: &mut usize) -> Result<Option<Vec<f64>>> {
    let n = prog.num_vars;
    let mut worst = 0.0f64;
    for g in &prog.constraints {
        let v = g
            .value(z0)
            .ok_or_else(|| Error::Solver("starting point outside the log-det domain".into()))?;
        worst = worst.max(-v);
    }
    let mut aux = Program::new(n + 1);
    aux.objective = vec![(n, -1.0)];
    aux.matrix_ineqs = prog.matrix_ineqs.clone();
    for g in &prog.constraints {
        let mut h = g.clone();
        h.linear.push((n, 1.0));
        aux.constraints.push(h);
    }
    aux.constraints.push(ConcaveExpr::affine(1.0, vec![(n, 1.0)]));
    let mut z: Vec<f64> = z0.to_vec();
    z.push(worst + 1.0);
    let bar = Barrier::new(&aux);
    let m = aux.barrier_weight();
    let mut t = 1.0;
    let feasible = |z: &[f64]| prog.strictly_feasible(&z[..n]);
    loop {
        center(&bar, &mut z, t, budget, feasible)?;
        if feasible(&z) {
            z.truncate(n);
            return Ok(Some(z));
        }
        if m / t < opts.gap_tol || *budget == 0 {
            return Ok(None);
        }
        // Optimal slack bounded away from zero: infeasible.
        if z[n] - m / t > 1e-9 {
            return Ok(None);
        }
        t *= opts.growth;
    }
}

/// Solves `prog` from `z0`; a phase-one search runs when `z0` is not strictly feasible.
/// Matrix inequalities must hold strictly at `z0`.
pub fn solve(prog: &Program, z0: &[f64], opts: &SolverOptions) -> Result<(Vec<f64>, SolverReport)> {
    if z0.len() != prog.num_vars {
        return Err(Error::Dimension(format!(
            "start point has {} entries for {} variables",
            z0.len(),
            prog.num_vars
        )));
    }
    if z0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("solver start point".into()));
    }
    for m in &prog.matrix_ineqs {
        if m.as_logdet().matrix(z0).cholesky().is_none() {
            return Err(Error::Solver("matrix inequality not strict at the start point".into()));
        }
    }
    let mut budget = opts.max_newton;
    let mut z = if prog.strictly_feasible(z0) {
        z0.to_vec()
    } else {
        match phase_one(prog, z0, opts, &mut budget)? {
            Some(z) => z,
            None => {
                let used = opts.max_newton - budget;
                return Ok((
                    z0.to_vec(),
                    report(prog, z0, SolveStatus::Infeasible, f64::INFINITY, used),
                ));
            }
        }
    };
    let bar = Barrier::new(prog);
    let m = prog.barrier_weight();
    let mut t = m.max(1.0) / prog.objective_value(&z).abs().max(1.0);
    loop {
        let outcome = center(&bar, &mut z, t, &mut budget, |_| false)?;
        let used = opts.max_newton - budget;
        let obj = prog.objective_value(&z);
        if obj.abs() > 1e12 {
            return Err(Error::Solver("objective appears unbounded".into()));
        }
        let gap = m / t;
        if gap <= opts.gap_tol * obj.abs().max(1.0) {
            return Ok((z.clone(), report(prog, &z, SolveStatus::Optimal, gap, used)));
        }
        match outcome {
            Centering::Stalled if budget == 0 => {
                return Ok((z.clone(), report(prog, &z, SolveStatus::MaxIterations, gap, used)));
            }
            Centering::Stalled if gap <= 1e-5 * obj.abs().max(1.0) => {
                return Ok((z.clone(), report(prog, &z, SolveStatus::Stalled, gap, used)));
            }
            _ => {}
        }
        t *= opts.growth;
    }
}
