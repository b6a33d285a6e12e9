//! Feasibility sets of the surface coefficients: convex inner approximations
//! used by the surface step, projections back onto each set, and the
//! monotone acceptance rule.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{SetKind, ThetaSet};
use crate::error::{Error, Result};

/// Amplitude as a deterministic function of phase for practical surfaces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseAmplitudeLaw {
    pub theta_min: f64,
    pub alpha: f64,
    pub phi: f64,
}

impl Default for PhaseAmplitudeLaw {
    fn default() -> Self {
        Self {
            theta_min: 0.2,
            alpha: 1.6,
            phi: 0.43 * PI,
        }
    }
}

impl PhaseAmplitudeLaw {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta_min) {
            return Err(Error::InvalidParameter(format!(
                "theta_min must lie in [0, 1], got {}",
                self.theta_min
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) || !self.phi.is_finite() {
            return Err(Error::InvalidParameter("alpha must be > 0 and phi finite".into()));
        }
        Ok(())
    }
}

/// `theta_min + (1 - theta_min) ((sin(angle - phi) + 1) / 2)^alpha`.
pub fn amplitude_law(angle: f64, law: &PhaseAmplitudeLaw) -> f64 {
    let s = ((angle - law.phi).sin() + 1.0) / 2.0;
    law.theta_min + (1.0 - law.theta_min) * s.clamp(0.0, 1.0).powf(law.alpha)
}

/// Uniform phase grid `{2 pi n / N - pi}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscretePhaseGrid {
    pub levels: usize,
}

impl Default for DiscretePhaseGrid {
    fn default() -> Self {
        Self { levels: 16 }
    }
}

impl DiscretePhaseGrid {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::InvalidParameter(format!(
                "discrete grid needs >= 2 levels, got {}",
                self.levels
            )));
        }
        Ok(())
    }

    pub fn phase(&self, n: usize) -> f64 {
        2.0 * PI * n as f64 / self.levels as f64 - PI
    }

    pub fn nearest_index(&self, angle: f64) -> usize {
        let n = self.levels as f64;
        let idx = ((angle + PI) * n / (2.0 * PI)).round().rem_euclid(n);
        idx as usize % self.levels
    }

    pub fn nearest(&self, angle: f64) -> f64 {
        self.phase(self.nearest_index(angle))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelaxationParams {
    pub epsilon_relax: f64,
}

impl Default for RelaxationParams {
    fn default() -> Self {
        Self { epsilon_relax: 0.01 }
    }
}

impl RelaxationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_relax > 0.0 && self.epsilon_relax < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon_relax must lie in (0, 1), got {}",
                self.epsilon_relax
            )));
        }
        Ok(())
    }
}

/// Parameters shared by every set kind.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SetParams {
    pub law: PhaseAmplitudeLaw,
    pub grid: DiscretePhaseGrid,
    pub relax: RelaxationParams,
}

impl SetParams {
    pub fn validate(&self) -> Result<()> {
        self.law.validate()?;
        self.grid.validate()?;
        self.relax.validate()
    }
}

/// A convex constraint on the stacked real coefficient vector `x`.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientConstraint {
    /// `1 - sum_{j in idx} x_j^2 >= 0`.
    Disk { indices: Vec<usize> },
    /// `sum c_j x_j - rhs >= 0`.
    Linear { coeffs: Vec<(usize, f64)>, rhs: f64 },
}

impl CoefficientConstraint {
    /// Slack at `x`; nonnegative when satisfied.
    pub fn slack(&self, x: &[f64]) -> f64 {
        match self {
            CoefficientConstraint::Disk { indices } => 1.0 - indices.iter().map(|&j| x[j] * x[j]).sum::<f64>(),
            CoefficientConstraint::Linear { coeffs, rhs } => coeffs.iter().map(|(j, c)| c * x[*j]).sum::<f64>() - rhs,
        }
    }
}

/// Tangent lower bound `sum |t|^2 >= -sum|t0|^2 + 2 sum Re{conj(t0) t}` required to exceed `floor`.
fn linearized_floor(refs: &[(usize, Complex64)], floor: f64) -> CoefficientConstraint {
    let mut coeffs = Vec::with_capacity(2 * refs.len());
    let mut energy = 0.0;
    for &(off, t0) in refs {
        coeffs.push((off, 2.0 * t0.re));
        coeffs.push((off + 1, 2.0 * t0.im));
        energy += t0.norm_sqr();
    }
    CoefficientConstraint::Linear {
        coeffs,
        rhs: floor + energy,
    }
}

/// Convex inner approximation of the set around the current (feasible) coefficients.
pub fn convexified_constraints(prev: &ThetaSet, params: &SetParams) -> Result<Vec<CoefficientConstraint>> {
    let eps = params.relax.epsilon_relax;
    let mut out = Vec::new();
    for (m, row) in prev.reflect.iter().enumerate() {
        for (n, &r0) in row.iter().enumerate() {
            let off = prev.param_offset(m, n);
            match prev.kind {
                SetKind::Unit => out.push(CoefficientConstraint::Disk {
                    indices: vec![off, off + 1],
                }),
                SetKind::UnitModulus | SetKind::Discrete | SetKind::PhaseDependent => {
                    let floor = if prev.kind == SetKind::PhaseDependent {
                        params.law.theta_min * params.law.theta_min
                    } else {
                        1.0 - eps
                    };
                    if r0.norm_sqr() < floor {
                        return Err(Error::Infeasible(format!(
                            "expansion coefficient ({m}, {n}) has modulus {} below the set",
                            r0.norm()
                        )));
                    }
                    out.push(CoefficientConstraint::Disk {
                        indices: vec![off, off + 1],
                    });
                    out.push(linearized_floor(&[(off, r0)], floor));
                }
                SetKind::StarEnergySplit => {
                    let t0 = prev
                        .transmit
                        .as_ref()
                        .ok_or_else(|| Error::InvalidParameter("STAR set without transmit coefficients".into()))?[m][n];
                    if r0.norm_sqr() + t0.norm_sqr() < 1.0 - eps {
                        return Err(Error::Infeasible(format!(
                            "expansion pair ({m}, {n}) carries energy below the set"
                        )));
                    }
                    out.push(CoefficientConstraint::Disk {
                        indices: vec![off, off + 1, off + 2, off + 3],
                    });
                    out.push(linearized_floor(&[(off, r0), (off + 2, t0)], 1.0 - eps));
                }
            }
        }
    }
    Ok(out)
}

/// Tolerance within which an input already counts as a member (keeps projection idempotent).
const MEMBERSHIP_TOL: f64 = 1e-14;

fn project_scalar(z: Complex64, kind: SetKind, params: &SetParams) -> Complex64 {
    let one = Complex64::new(1.0, 0.0);
    match kind {
        SetKind::Unit => {
            let a = z.norm();
            if a > 1.0 + MEMBERSHIP_TOL {
                z / a
            } else {
                z
            }
        }
        SetKind::UnitModulus => {
            let a = z.norm();
            if a == 0.0 {
                one
            } else if (a - 1.0).abs() <= MEMBERSHIP_TOL {
                z
            } else {
                z / a
            }
        }
        SetKind::PhaseDependent => {
            let angle = if z.norm() == 0.0 { 0.0 } else { z.arg() };
            let target = amplitude_law(angle, &params.law);
            if (z.norm() - target).abs() <= MEMBERSHIP_TOL {
                z
            } else {
                Complex64::from_polar(target, angle)
            }
        }
        SetKind::Discrete => {
            let angle = if z.norm() == 0.0 { 0.0 } else { z.arg() };
            Complex64::from_polar(1.0, params.grid.nearest(angle))
        }
        SetKind::StarEnergySplit => unreachable!("STAR pairs are projected jointly"),
    }
}

/// Maps a candidate onto the exact set of its kind.
pub fn project(candidate: &ThetaSet, params: &SetParams) -> Result<ThetaSet> {
    let mut out = candidate.clone();
    if candidate
        .reflect
        .iter()
        .chain(candidate.transmit.iter().flatten())
        .flatten()
        .any(|z| !(z.re.is_finite() && z.im.is_finite()))
    {
        return Err(Error::NonFinite("surface coefficient".into()));
    }
    if candidate.kind.is_star() {
        let transmit = out
            .transmit
            .as_mut()
            .ok_or_else(|| Error::InvalidParameter("STAR set without transmit coefficients".into()))?;
        for (rrow, trow) in out.reflect.iter_mut().zip(transmit.iter_mut()) {
            for (r, t) in rrow.iter_mut().zip(trow.iter_mut()) {
                let e = r.norm_sqr() + t.norm_sqr();
                if e == 0.0 {
                    *r = Complex64::new(1.0, 0.0);
                    *t = Complex64::new(0.0, 0.0);
                } else if (e - 1.0).abs() > MEMBERSHIP_TOL {
                    let s = 1.0 / e.sqrt();
                    *r *= s;
                    *t *= s;
                }
            }
        }
    } else {
        for row in out.reflect.iter_mut() {
            for z in row.iter_mut() {
                *z = project_scalar(*z, candidate.kind, params);
            }
        }
    }
    Ok(out)
}

/// Exact membership test with tolerance `tol`.
pub fn is_member(t: &ThetaSet, params: &SetParams, tol: f64) -> bool {
    match t.kind {
        SetKind::Unit => t.reflect.iter().flatten().all(|z| z.norm() <= 1.0 + tol),
        SetKind::UnitModulus => t.reflect.iter().flatten().all(|z| (z.norm() - 1.0).abs() <= tol),
        SetKind::PhaseDependent => t
            .reflect
            .iter()
            .flatten()
            .all(|z| (z.norm() - amplitude_law(z.arg(), &params.law)).abs() <= tol),
        SetKind::Discrete => t.reflect.iter().flatten().all(|z| {
            let p = params.grid.nearest(z.arg());
            (z.norm() - 1.0).abs() <= tol && (*z - Complex64::from_polar(1.0, p)).norm() <= tol
        }),
        SetKind::StarEnergySplit => match &t.transmit {
            Some(tr) => t
                .reflect
                .iter()
                .flatten()
                .zip(tr.iter().flatten())
                .all(|(r, x)| (r.norm_sqr() + x.norm_sqr() - 1.0).abs() <= tol),
            None => false,
        },
    }
}

/// Keeps the candidate only if it does not lower the exact objective.
/// Returns `(state, objective, accepted)`.
pub fn monotone_update<F>(f: F, prev: &ThetaSet, candidate: &ThetaSet) -> Result<(ThetaSet, f64, bool)>
where
    F: Fn(&ThetaSet) -> Result<f64>,
{
    let f_prev = f(prev)?;
    let f_cand = f(candidate)?;
    let (state, value, accepted) = if f_cand >= f_prev {
        (candidate.clone(), f_cand, true)
    } else {
        (prev.clone(), f_prev, false)
    };
    debug_assert!(value >= f_prev);
    Ok((state, value, accepted))
}

/// Random draw shared by every set kind so that paired runs start alike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDraw {
    pub reflect: Vec<Vec<f64>>,
    pub transmit: Vec<Vec<f64>>,
    /// Fraction of energy reflected by each STAR element.
    pub split: Vec<Vec<f64>>,
}

impl PhaseDraw {
    pub fn sample<R: Rng + ?Sized>(elements: &[usize], rng: &mut R) -> Self {
        let mut draw =
            |n: usize, lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect() };
        let reflect = elements.iter().map(|&n| draw(n, -PI, PI)).collect();
        let transmit = elements.iter().map(|&n| draw(n, -PI, PI)).collect();
        let split = elements.iter().map(|&n| draw(n, 0.0, 1.0)).collect();
        Self {
            reflect,
            transmit,
            split,
        }
    }

    /// A member of `kind` built from the drawn phases.
    pub fn to_theta(&self, kind: SetKind, params: &SetParams) -> ThetaSet {
        let reflect: Vec<Vec<Complex64>> = self
            .reflect
            .iter()
            .enumerate()
            .map(|(m, row)| {
                row.iter()
                    .enumerate()
                    .map(|(n, &p)| match kind {
                        SetKind::Unit | SetKind::UnitModulus => Complex64::from_polar(1.0, p),
                        SetKind::PhaseDependent => Complex64::from_polar(amplitude_law(p, &params.law), p),
                        SetKind::Discrete => Complex64::from_polar(1.0, params.grid.nearest(p)),
                        SetKind::StarEnergySplit => Complex64::from_polar(self.split[m][n].sqrt(), p),
                    })
                    .collect()
            })
            .collect();
        let transmit = kind.is_star().then(|| {
            self.transmit
                .iter()
                .enumerate()
                .map(|(m, row)| {
                    row.iter()
                        .enumerate()
                        .map(|(n, &p)| Complex64::from_polar((1.0 - self.split[m][n]).sqrt(), p))
                        .collect()
                })
                .collect()
        });
        ThetaSet {
            kind,
            reflect,
            transmit,
        }
    }
}

/// Start point strictly inside the convexified constraints around `prev`:
/// each coefficient (pair for STAR) is shrunk slightly towards the origin, or
/// pushed outwards when it sits on the lower modulus bound.
pub fn interior_start(prev: &ThetaSet, params: &SetParams) -> Vec<f64> {
    let s = 1.0 - params.relax.epsilon_relax / 4.0;
    let floor = match prev.kind {
        SetKind::Unit => 0.0,
        SetKind::PhaseDependent => params.law.theta_min * params.law.theta_min,
        _ => 1.0 - params.relax.epsilon_relax,
    };
    let stride = if prev.transmit.is_some() { 4 } else { 2 };
    let mut x = prev.to_real_params();
    for chunk in x.chunks_mut(stride) {
        let energy: f64 = chunk.iter().map(|v| v * v).sum();
        let scale = if energy * (2.0 * s - 1.0) > floor || energy == 0.0 {
            s
        } else {
            // sqrt(energy) sits near the floor and below 1: move halfway to the unit circle.
            let a = energy.sqrt();
            (a + 1.0) / 2.0 / a
        };
        for v in chunk.iter_mut() {
            *v *= scale;
        }
    }
    x
}
