//! Minorizing surrogates of the achievable rates.
//!
//! Covariance step: the concave log-det part of each rate is kept and the
//! subtracted log-det is replaced by its tangent plane, which upper-bounds it.
//! Surface step: each rate `ln|Y + V V^T| - ln|Y|` is bounded from below by a
//! concave quadratic in the stacked real surface coefficients.

use num_complex::Complex64;

use crate::channel::{channel_derivatives, FadingSet, ThetaSet, UserSpaceMap};
use crate::error::{Error, Result};
use crate::linalg::{
    frobenius_inner, inverse_spd, logdet_spd, sym_sqrt, symmetrize, trace_of_product, RealMatrix, INVERSION_JITTER,
};
use crate::rates::{evaluate_rates, CovarianceSet, RateBundle, RealChannels, HALF_LOG2};
use crate::realdec::{apply_device_maps, to_real_composite, SystemIqi};

/// Identifies one covariance block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockId {
    Private(usize, usize),
    Common(usize),
}

impl CovarianceSet {
    pub fn block(&self, id: BlockId) -> &RealMatrix {
        match id {
            BlockId::Private(l, k) => &self.private[l][k],
            BlockId::Common(l) => &self.common[l],
        }
    }

    pub fn block_mut(&mut self, id: BlockId) -> &mut RealMatrix {
        match id {
            BlockId::Private(l, k) => &mut self.private[l][k],
            BlockId::Common(l) => &mut self.common[l],
        }
    }
}

/// `weight * ln det(base + sum_b B_b P_b B_b^T)`.
#[derive(Debug, Clone)]
pub struct LogDetForm {
    pub weight: f64,
    pub base: RealMatrix,
    pub terms: Vec<(BlockId, RealMatrix)>,
}

impl LogDetForm {
    pub fn matrix(&self, cov: &CovarianceSet) -> RealMatrix {
        let mut s = self.base.clone();
        for (id, b) in &self.terms {
            s += b * cov.block(*id) * b.transpose();
        }
        symmetrize(&s)
    }

    /// `-inf` outside the positive definite domain.
    pub fn value(&self, cov: &CovarianceSet) -> f64 {
        logdet_spd(&self.matrix(cov)).map_or(f64::NEG_INFINITY, |v| self.weight * v)
    }
}

/// `constant + sum_b Tr(G_b P_b)`.
#[derive(Debug, Clone)]
pub struct AffineForm {
    pub constant: f64,
    pub linear: Vec<(BlockId, RealMatrix)>,
}

impl AffineForm {
    pub fn value(&self, cov: &CovarianceSet) -> f64 {
        self.constant
            + self
                .linear
                .iter()
                .map(|(id, g)| trace_of_product(g, cov.block(*id)))
                .sum::<f64>()
    }
}

/// Tangent-plane upper bound of `ln|A + sum_b B_b P_b B_b^T|` at `at`.
pub fn logdet_linear_upper(a: &RealMatrix, terms: &[(BlockId, RealMatrix)], at: &CovarianceSet) -> Result<AffineForm> {
    let mut s = a.clone();
    for (id, b) in terms {
        s += b * at.block(*id) * b.transpose();
    }
    let s = symmetrize(&s);
    let f0 = logdet_spd(&s).ok_or_else(|| Error::NotPositiveDefinite("log-det expansion point".into()))?;
    let s_inv = inverse_spd(&s, INVERSION_JITTER)?;
    let mut constant = f0;
    let mut linear: Vec<(BlockId, RealMatrix)> = Vec::new();
    for (id, b) in terms {
        let g = symmetrize(&(b.transpose() * &s_inv * b));
        constant -= trace_of_product(&g, at.block(*id));
        match linear.iter_mut().find(|(j, _)| j == id) {
            Some((_, acc)) => *acc += g,
            None => linear.push((*id, g)),
        }
    }
    Ok(AffineForm { constant, linear })
}

/// Concave covariance-step surrogate: `logdet + affine`.
#[derive(Debug, Clone)]
pub struct CovSurrogate {
    pub logdet: LogDetForm,
    pub affine: AffineForm,
}

impl CovSurrogate {
    pub fn value(&self, cov: &CovarianceSet) -> f64 {
        self.logdet.value(cov) + self.affine.value(cov)
    }
}

/// Blocks whose signals reach user `(l, k)` as interference, with their channels.
fn interference_terms(l: usize, k: usize, ch: &RealChannels, cov: &CovarianceSet) -> Vec<(BlockId, RealMatrix)> {
    let u = l * ch.users_per_cell + k;
    let mut terms = Vec::new();
    for i in 0..ch.cells {
        if i == l {
            continue;
        }
        let h = &ch.links[u][i];
        for j in 0..cov.users_per_cell() {
            terms.push((BlockId::Private(i, j), h.clone()));
        }
        terms.push((BlockId::Common(i), h.clone()));
    }
    for j in 0..cov.users_per_cell() {
        if j != k {
            terms.push((BlockId::Private(l, j), ch.links[u][l].clone()));
        }
    }
    terms
}

/// Covariance-step expansion point.
#[derive(Debug, Clone)]
pub struct CovExpansion {
    pub cov: CovarianceSet,
    pub rates: RateBundle,
}

impl CovExpansion {
    pub fn new(cov: &CovarianceSet, ch: &RealChannels) -> Result<Self> {
        Ok(Self {
            cov: cov.clone(),
            rates: evaluate_rates(cov, ch)?,
        })
    }

    /// Lower bound on `r_lk,p`, tight at the expansion point.
    pub fn private_surrogate(&self, l: usize, k: usize, ch: &RealChannels) -> Result<CovSurrogate> {
        let u = l * ch.users_per_cell + k;
        let interf = interference_terms(l, k, ch, &self.cov);
        let mut concave_terms = interf.clone();
        concave_terms.push((BlockId::Private(l, k), ch.links[u][l].clone()));
        let upper = logdet_linear_upper(&ch.noise[u], &interf, &self.cov)?;
        Ok(CovSurrogate {
            logdet: LogDetForm {
                weight: HALF_LOG2,
                base: ch.noise[u].clone(),
                terms: concave_terms,
            },
            affine: scale_affine(&upper, -HALF_LOG2),
        })
    }

    /// Lower bound on `r_bar_lk,c`, tight at the expansion point.
    pub fn common_surrogate(&self, l: usize, k: usize, ch: &RealChannels) -> Result<CovSurrogate> {
        let u = l * ch.users_per_cell + k;
        let mut inner = interference_terms(l, k, ch, &self.cov);
        inner.push((BlockId::Private(l, k), ch.links[u][l].clone()));
        let mut concave_terms = inner.clone();
        concave_terms.push((BlockId::Common(l), ch.links[u][l].clone()));
        let upper = logdet_linear_upper(&ch.noise[u], &inner, &self.cov)?;
        Ok(CovSurrogate {
            logdet: LogDetForm {
                weight: HALF_LOG2,
                base: ch.noise[u].clone(),
                terms: concave_terms,
            },
            affine: scale_affine(&upper, -HALF_LOG2),
        })
    }
}

fn scale_affine(a: &AffineForm, s: f64) -> AffineForm {
    AffineForm {
        constant: a.constant * s,
        linear: a.linear.iter().map(|(id, g)| (*id, g * s)).collect(),
    }
}

/// Lower bound `sum|t|^2 >= sum|t0|^2 + 2 sum Re{conj(t0)(t - t0)}`,
/// stored as `constant + sum 2 Re{conj(c_i) t_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulusBound {
    pub constant: f64,
    pub coeffs: Vec<Complex64>,
}

impl ModulusBound {
    pub fn value(&self, t: &[Complex64]) -> f64 {
        self.constant
            + self
                .coeffs
                .iter()
                .zip(t)
                .map(|(c, z)| 2.0 * (c.conj() * z).re)
                .sum::<f64>()
    }
}

pub fn quadratic_modulus_lower(t_ref: &[Complex64]) -> ModulusBound {
    ModulusBound {
        constant: -t_ref.iter().map(|z| z.norm_sqr()).sum::<f64>(),
        coeffs: t_ref.to_vec(),
    }
}

/// Equivalent real channel that is affine in the surface coefficients:
/// `H(x) = at + sum_j (x_j - x0_j) E_j`.
#[derive(Debug, Clone)]
pub struct AffineChannel {
    pub at: RealMatrix,
    pub derivs: Vec<(usize, RealMatrix)>,
}

impl AffineChannel {
    pub fn eval(&self, delta: &[f64]) -> RealMatrix {
        let mut h = self.at.clone();
        for (j, e) in &self.derivs {
            if delta[*j] != 0.0 {
                h += e * delta[*j];
            }
        }
        h
    }
}

/// `constant + g^T d - 1/2 d^T Q d` with `d = x - center`.
#[derive(Debug, Clone)]
pub struct ThetaSurrogate {
    pub center: Vec<f64>,
    pub constant: f64,
    pub gradient: Vec<f64>,
    pub curvature: RealMatrix,
}

impl ThetaSurrogate {
    pub fn value(&self, x: &[f64]) -> f64 {
        let d: Vec<f64> = x.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        let lin: f64 = self.gradient.iter().zip(&d).map(|(g, v)| g * v).sum();
        let dv = nalgebra::DVector::from_column_slice(&d);
        self.constant + lin - 0.5 * (dv.transpose() * &self.curvature * &dv)[(0, 0)]
    }

    /// A constant function of `x`: no coefficient influences the rate.
    pub fn is_constant(&self) -> bool {
        self.gradient.iter().all(|g| *g == 0.0) && self.curvature.iter().all(|q| *q == 0.0)
    }
}

/// Surface-step expansion point: surface state, fixed covariances and the
/// affine channel model around the current coefficients.
#[derive(Debug, Clone)]
pub struct ThetaExpansion {
    pub theta: ThetaSet,
    pub center: Vec<f64>,
    pub cov: CovarianceSet,
    pub cells: usize,
    pub users_per_cell: usize,
    pub links: Vec<Vec<AffineChannel>>,
    pub noise: Vec<RealMatrix>,
    pub rates: RateBundle,
    sqrt_private: Vec<Vec<RealMatrix>>,
    sqrt_common: Vec<RealMatrix>,
}

impl ThetaExpansion {
    pub fn new(
        fading: &FadingSet,
        theta: &ThetaSet,
        map: Option<&UserSpaceMap>,
        iqi: &SystemIqi,
        cov: &CovarianceSet,
    ) -> Result<Self> {
        let ch = RealChannels::build(fading, theta, map, iqi)?;
        let tx_maps: Vec<RealMatrix> = iqi.bs.iter().map(|d| d.real_map()).collect();
        let mut links = Vec::with_capacity(ch.num_users());
        for u in 0..ch.num_users() {
            let rx_map = iqi.users[u].real_map();
            let mut row = Vec::with_capacity(ch.cells);
            for i in 0..ch.cells {
                let derivs = channel_derivatives(fading, theta, map, u, i)?
                    .into_iter()
                    .map(|(j, d)| Ok((j, apply_device_maps(&to_real_composite(&d)?, &tx_maps[i], &rx_map))))
                    .collect::<Result<Vec<_>>>()?;
                row.push(AffineChannel {
                    at: ch.links[u][i].clone(),
                    derivs,
                });
            }
            links.push(row);
        }
        let rates = evaluate_rates(cov, &ch)?;
        Ok(Self {
            center: theta.to_real_params(),
            theta: theta.clone(),
            cov: cov.clone(),
            cells: ch.cells,
            users_per_cell: ch.users_per_cell,
            links,
            noise: ch.noise,
            rates,
            sqrt_private: cov.private.iter().map(|r| r.iter().map(sym_sqrt).collect()).collect(),
            sqrt_common: cov.common.iter().map(sym_sqrt).collect(),
        })
    }

    pub fn num_params(&self) -> usize {
        self.center.len()
    }

    /// Exact equivalent channels at coefficients `x`.
    pub fn channels_at(&self, x: &[f64]) -> RealChannels {
        let delta: Vec<f64> = x.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        RealChannels {
            cells: self.cells,
            users_per_cell: self.users_per_cell,
            links: self
                .links
                .iter()
                .map(|row| row.iter().map(|a| a.eval(&delta)).collect())
                .collect(),
            noise: self.noise.clone(),
        }
    }

    /// Lower bound on `r_lk,p` as a function of the surface coefficients.
    pub fn private_surrogate(&self, l: usize, k: usize) -> Result<ThetaSurrogate> {
        let mut interf = Vec::new();
        for i in 0..self.cells {
            if i != l {
                interf.push((i, self.cov.cell_total(i)));
            }
        }
        let mut own = RealMatrix::zeros(self.cov.private[l][k].nrows(), self.cov.private[l][k].ncols());
        for (j, p) in self.cov.private[l].iter().enumerate() {
            if j != k {
                own += p;
            }
        }
        interf.push((l, own));
        self.quadratic_minorant(l, k, &interf, &self.sqrt_private[l][k])
    }

    /// Lower bound on `r_bar_lk,c` as a function of the surface coefficients.
    pub fn common_surrogate(&self, l: usize, k: usize) -> Result<ThetaSurrogate> {
        let mut interf = Vec::new();
        for i in 0..self.cells {
            if i != l {
                interf.push((i, self.cov.cell_total(i)));
            }
        }
        let own: RealMatrix = self.cov.private[l].iter().fold(
            RealMatrix::zeros(self.cov.common[l].nrows(), self.cov.common[l].ncols()),
            |acc, p| acc + p,
        );
        interf.push((l, own));
        self.quadratic_minorant(l, k, &interf, &self.sqrt_common[l])
    }

    /// Bound on `c0 (ln|Y + V V^T| - ln|Y|)` with `Y = C_n + sum_i H_i Q_i H_i^T`
    /// and `V = H_l S`.
    fn quadratic_minorant(
        &self,
        l: usize,
        k: usize,
        interf: &[(usize, RealMatrix)],
        s: &RealMatrix,
    ) -> Result<ThetaSurrogate> {
        let u = l * self.users_per_cell + k;
        let nx = self.num_params();
        let row = &self.links[u];

        let mut y = self.noise[u].clone();
        for (i, q) in interf {
            y += &row[*i].at * q * row[*i].at.transpose();
        }
        let y = symmetrize(&y);
        let v = &row[l].at * s;
        let yv = symmetrize(&(&y + &v * v.transpose()));
        let ld_y = logdet_spd(&y).ok_or_else(|| Error::NotPositiveDefinite("Y".into()))?;
        let ld_yv = logdet_spd(&yv).ok_or_else(|| Error::NotPositiveDefinite("Y + VV^T".into()))?;
        let rate = HALF_LOG2 * (ld_yv - ld_y);

        let y_inv = inverse_spd(&y, INVERSION_JITTER)?;
        let yv_inv = inverse_spd(&yv, INVERSION_JITTER)?;
        let m = symmetrize(&(&y_inv - &yv_inv));

        // Per-link totals of the quadratic forms inside Tr(M (V V^T + Y)).
        let mut q_tot: Vec<Option<RealMatrix>> = vec![None; self.cells];
        for (i, q) in interf {
            let slot = q_tot[*i].get_or_insert_with(|| RealMatrix::zeros(q.nrows(), q.ncols()));
            *slot += q;
        }
        let ss = s * s.transpose();
        match q_tot[l].as_mut() {
            Some(slot) => *slot += &ss,
            None => q_tot[l] = Some(ss),
        }

        let mut gradient = vec![0.0; nx];
        let mut curvature = RealMatrix::zeros(nx, nx);

        // 2 c0 Tr(V0^T Y0^-1 E_j S)
        let lin_coeff = s * v.transpose() * &y_inv;
        for (j, e) in &row[l].derivs {
            gradient[*j] += 2.0 * HALF_LOG2 * trace_of_product(&lin_coeff, e);
        }

        for (i, q) in q_tot.iter().enumerate() {
            let Some(q) = q else { continue };
            let link = &row[i];
            if link.derivs.is_empty() {
                continue;
            }
            let h_qt = q * link.at.transpose();
            let w: Vec<RealMatrix> = link.derivs.iter().map(|(_, e)| &m * e * q).collect();
            for (a, (j, e)) in link.derivs.iter().enumerate() {
                gradient[*j] -= 2.0 * HALF_LOG2 * trace_of_product(&(&m * e), &h_qt);
                for (b, (jj, eb)) in link.derivs.iter().enumerate().skip(a) {
                    let val = 2.0 * HALF_LOG2 * frobenius_inner(&w[a], eb);
                    curvature[(*j, *jj)] += val;
                    if a != b {
                        curvature[(*jj, *j)] += val;
                    }
                }
            }
        }

        Ok(ThetaSurrogate {
            center: self.center.clone(),
            constant: rate,
            gradient,
            curvature: symmetrize(&curvature),
        })
    }
}
