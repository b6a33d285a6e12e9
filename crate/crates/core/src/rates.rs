//! Achievable rates of one-layer rate splitting under real-decomposition signaling.
//!
//! All rates are in bits/s/Hz and use the `1/2 log2 det` form of real
//! Gaussian channels.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::channel::{effective_channel, FadingSet, ThetaSet, UserSpaceMap};
use crate::error::{Error, Result};
use crate::linalg::{is_proper_structured, logdet_spd, min_eigenvalue, symmetrize, RealMatrix};
use crate::realdec::{apply_device_maps, noise_covariance, to_real_composite, SystemIqi};

/// `1 / (2 ln 2)`: converts `ln det` to `1/2 log2 det`.
pub const HALF_LOG2: f64 = 0.5 / std::f64::consts::LN_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Signaling {
    /// Improper Gaussian signaling: unrestricted real covariances.
    #[serde(rename = "IGS")]
    Igs,
    /// Proper Gaussian signaling: covariances of the form `[[A, -B], [B, A]]`.
    #[serde(rename = "PGS")]
    Pgs,
}

impl fmt::Display for Signaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Signaling::Igs => "IGS",
            Signaling::Pgs => "PGS",
        })
    }
}

/// Private covariances `P_lk` and common covariances `P_lc` of every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSet {
    pub signaling: Signaling,
    /// `private[l][k]`, each `2N_BS x 2N_BS`.
    pub private: Vec<Vec<RealMatrix>>,
    /// `common[l]`.
    pub common: Vec<RealMatrix>,
}

impl CovarianceSet {
    pub fn zeros(signaling: Signaling, bs_antennas: &[usize], users_per_cell: usize) -> Self {
        let blk = |n: usize| RealMatrix::zeros(2 * n, 2 * n);
        Self {
            signaling,
            private: bs_antennas.iter().map(|&n| vec![blk(n); users_per_cell]).collect(),
            common: bs_antennas.iter().map(|&n| blk(n)).collect(),
        }
    }

    /// Each cell's budget split equally over its `K` private layers and the
    /// common layer (or over the private layers only when `with_common` is off).
    pub fn equal_split(
        signaling: Signaling,
        bs_antennas: &[usize],
        users_per_cell: usize,
        budgets: &[f64],
        with_common: bool,
    ) -> Self {
        let mut out = Self::zeros(signaling, bs_antennas, users_per_cell);
        for (l, &n) in bs_antennas.iter().enumerate() {
            let layers = users_per_cell + usize::from(with_common);
            let per = budgets[l].max(0.0) / layers as f64 / (2 * n) as f64;
            let eye = RealMatrix::identity(2 * n, 2 * n) * per;
            for p in out.private[l].iter_mut() {
                *p = eye.clone();
            }
            if with_common {
                out.common[l] = eye;
            }
        }
        out
    }

    pub fn cells(&self) -> usize {
        self.private.len()
    }

    pub fn users_per_cell(&self) -> usize {
        self.private.first().map_or(0, Vec::len)
    }

    /// `P_l = P_lc + sum_k P_lk`.
    pub fn cell_total(&self, l: usize) -> RealMatrix {
        let mut acc = self.common[l].clone();
        for p in &self.private[l] {
            acc += p;
        }
        acc
    }

    pub fn cell_power(&self, l: usize) -> f64 {
        self.common[l].trace() + self.private[l].iter().map(|p| p.trace()).sum::<f64>()
    }

    pub fn total_power(&self) -> f64 {
        (0..self.cells()).map(|l| self.cell_power(l)).sum()
    }

    pub fn has_common(&self) -> bool {
        self.common.iter().any(|c| c.iter().any(|&v| v != 0.0))
    }

    fn blocks(&self) -> impl Iterator<Item = &RealMatrix> {
        self.private.iter().flatten().chain(self.common.iter())
    }

    /// Checks PSD-ness, per-cell budgets and (for PGS) the proper structure.
    pub fn validate(&self, budgets: Option<&[f64]>, tol: f64) -> Result<()> {
        for m in self.blocks() {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("covariance entry".into()));
            }
            if (m - m.transpose()).amax() > tol.max(1e-12) * m.amax().max(1.0) {
                return Err(Error::InvalidParameter("covariance is not symmetric".into()));
            }
            if min_eigenvalue(m) < -tol {
                return Err(Error::NotPositiveDefinite("covariance is not PSD".into()));
            }
            if self.signaling == Signaling::Pgs && !is_proper_structured(m, tol.max(1e-12)) {
                return Err(Error::InvalidParameter(
                    "PGS covariance is not proper-structured".into(),
                ));
            }
        }
        if let Some(b) = budgets {
            for l in 0..self.cells() {
                let p = self.cell_power(l);
                if p > b[l] * (1.0 + tol) + tol {
                    return Err(Error::InvalidParameter(format!(
                        "cell {l} uses {p} W over a budget of {} W",
                        b[l]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Equivalent real channels `H_{u,i}` (`2N_u x 2N_BS`) and noise covariances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealChannels {
    pub cells: usize,
    pub users_per_cell: usize,
    /// `links[u][i]` with flat user index `u = l * K + k`.
    pub links: Vec<Vec<RealMatrix>>,
    pub noise: Vec<RealMatrix>,
}

impl RealChannels {
    /// Equivalent channels of the effective links under the given surface state.
    pub fn build(fading: &FadingSet, theta: &ThetaSet, map: Option<&UserSpaceMap>, iqi: &SystemIqi) -> Result<Self> {
        let users = fading.num_users();
        if iqi.users.len() != users || iqi.bs.len() != fading.cells {
            return Err(Error::Dimension(format!(
                "IQI setup covers {} users / {} BSs, scenario has {users} / {}",
                iqi.users.len(),
                iqi.bs.len(),
                fading.cells
            )));
        }
        let tx_maps: Vec<RealMatrix> = iqi.bs.iter().map(|d| d.real_map()).collect();
        let mut links = Vec::with_capacity(users);
        let mut noise = Vec::with_capacity(users);
        for u in 0..users {
            let rx_map = iqi.users[u].real_map();
            let mut row = Vec::with_capacity(fading.cells);
            for (i, tx_map) in tx_maps.iter().enumerate() {
                let h = effective_channel(fading, theta, map, u, i)?;
                if h.nrows() != iqi.users[u].len() || h.ncols() != iqi.bs[i].len() {
                    return Err(Error::Dimension(format!(
                        "link ({u}, {i}) is {}x{} but IQI covers {}x{}",
                        h.nrows(),
                        h.ncols(),
                        iqi.users[u].len(),
                        iqi.bs[i].len()
                    )));
                }
                row.push(apply_device_maps(&to_real_composite(&h)?, tx_map, &rx_map));
            }
            links.push(row);
            noise.push(noise_covariance(&iqi.noise_model(u)?, iqi.users[u].len())?);
        }
        Ok(Self {
            cells: fading.cells,
            users_per_cell: fading.users_per_cell,
            links,
            noise,
        })
    }

    pub fn num_users(&self) -> usize {
        self.cells * self.users_per_cell
    }

    pub fn link(&self, l: usize, k: usize, i: usize) -> &RealMatrix {
        &self.links[l * self.users_per_cell + k][i]
    }
}

/// Static and amplifier power consumption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerModel {
    /// Static power per served user, watts.
    pub p_c: f64,
    /// Inverse power-amplifier efficiency.
    pub eta: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        Self {
            p_c: 1.0,
            eta: 1.0 / 0.35,
        }
    }
}

impl PowerModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_c.is_finite() && self.p_c > 0.0) {
            return Err(Error::InvalidParameter(format!("p_c must be > 0, got {}", self.p_c)));
        }
        if !(self.eta.is_finite() && self.eta >= 1.0) {
            return Err(Error::InvalidParameter(format!("eta must be >= 1, got {}", self.eta)));
        }
        Ok(())
    }

    /// `p_c + eta Tr(P_lk) + (eta / K) Tr(P_lc)`.
    pub fn user_consumption(&self, cov: &CovarianceSet, l: usize, k: usize) -> f64 {
        let kk = cov.users_per_cell() as f64;
        self.p_c + self.eta * cov.private[l][k].trace() + self.eta / kk * cov.common[l].trace()
    }

    /// `L K p_c + eta sum_l Tr(P_l)`.
    pub fn total_consumption(&self, cov: &CovarianceSet) -> f64 {
        let users = (cov.cells() * cov.users_per_cell()) as f64;
        users * self.p_c + self.eta * cov.total_power()
    }
}

fn quad(h: &RealMatrix, p: &RealMatrix) -> RealMatrix {
    h * p * h.transpose()
}

fn logdet(m: &RealMatrix, what: &str) -> Result<f64> {
    logdet_spd(&symmetrize(m)).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

fn check_shapes(cov: &CovarianceSet, ch: &RealChannels) -> Result<()> {
    if cov.cells() != ch.cells || cov.users_per_cell() != ch.users_per_cell {
        return Err(Error::Dimension(format!(
            "covariances for {}x{} users, channels for {}x{}",
            cov.cells(),
            cov.users_per_cell(),
            ch.cells,
            ch.users_per_cell
        )));
    }
    Ok(())
}

/// `D_lk`: intercell interference, intracell private interference and noise.
pub fn interference_matrix(l: usize, k: usize, cov: &CovarianceSet, ch: &RealChannels) -> Result<RealMatrix> {
    check_shapes(cov, ch)?;
    let u = l * ch.users_per_cell + k;
    let mut d = ch.noise[u].clone();
    for i in 0..ch.cells {
        if i == l {
            continue;
        }
        d += quad(&ch.links[u][i], &cov.cell_total(i));
    }
    let h = &ch.links[u][l];
    for (j, p) in cov.private[l].iter().enumerate() {
        if j != k {
            d += quad(h, p);
        }
    }
    Ok(symmetrize(&d))
}

/// `r_lk,p = 1/2 log2 |I + D^-1 H P_lk H^T|`.
pub fn private_rate(l: usize, k: usize, cov: &CovarianceSet, ch: &RealChannels) -> Result<f64> {
    let d = interference_matrix(l, k, cov, ch)?;
    let s = quad(ch.link(l, k, l), &cov.private[l][k]);
    let num = logdet(&(&d + s), "signal-plus-interference matrix")?;
    let den = logdet(&d, "interference matrix")?;
    Ok((HALF_LOG2 * (num - den)).max(0.0))
}

/// Per-user common-rate caps `r_bar_lk,c` and the cell cap `r_lc = min_k r_bar_lk,c`.
pub fn common_rate_cap(l: usize, cov: &CovarianceSet, ch: &RealChannels) -> Result<(Vec<f64>, f64)> {
    let mut caps = Vec::with_capacity(ch.users_per_cell);
    for k in 0..ch.users_per_cell {
        let d = interference_matrix(l, k, cov, ch)?;
        let h = ch.link(l, k, l);
        let with_private = &d + quad(h, &cov.private[l][k]);
        let with_common = &with_private + quad(h, &cov.common[l]);
        let c1 = logdet(&with_common, "common-layer matrix")?;
        let c2 = logdet(&with_private, "private-layer matrix")?;
        caps.push((HALF_LOG2 * (c1 - c2)).max(0.0));
    }
    let min = caps.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok((caps, min))
}

/// Exact rates of one operating point together with a common-rate allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateBundle {
    /// `r_lk,p`.
    pub private: Vec<Vec<f64>>,
    /// `r_bar_lk,c`.
    pub common_caps: Vec<Vec<f64>>,
    /// `r_lc`.
    pub cell_common: Vec<f64>,
    /// `r_lk,c`, zero until an allocation is applied.
    pub common_alloc: Vec<Vec<f64>>,
}

impl RateBundle {
    pub fn cells(&self) -> usize {
        self.private.len()
    }

    pub fn users_per_cell(&self) -> usize {
        self.private.first().map_or(0, Vec::len)
    }

    /// Replaces the allocation after checking `r_lk,c >= 0` and `sum_k r_lk,c <= r_lc`.
    pub fn with_allocation(mut self, alloc: Vec<Vec<f64>>, tol: f64) -> Result<Self> {
        check_allocation(&self, &alloc, tol)?;
        self.common_alloc = alloc;
        Ok(self)
    }

    /// `r_lk = r_lk,c + r_lk,p` under the stored allocation.
    pub fn total(&self, l: usize, k: usize) -> f64 {
        self.common_alloc[l][k] + self.private[l][k]
    }

    pub fn totals(&self) -> Vec<Vec<f64>> {
        (0..self.cells())
            .map(|l| (0..self.users_per_cell()).map(|k| self.total(l, k)).collect())
            .collect()
    }

    pub fn sum_rate(&self) -> f64 {
        self.totals().iter().flatten().sum()
    }

    pub fn min_rate(&self) -> f64 {
        self.totals().iter().flatten().cloned().fold(f64::INFINITY, f64::min)
    }
}

fn check_allocation(bundle: &RateBundle, alloc: &[Vec<f64>], tol: f64) -> Result<()> {
    if alloc.len() != bundle.cells() {
        return Err(Error::Dimension("allocation covers the wrong number of cells".into()));
    }
    for (l, row) in alloc.iter().enumerate() {
        if row.len() != bundle.users_per_cell() {
            return Err(Error::Dimension(format!("allocation of cell {l} has wrong length")));
        }
        if row.iter().any(|&r| !(r >= -tol)) {
            return Err(Error::Infeasible(format!("negative common rate in cell {l}")));
        }
        let s: f64 = row.iter().sum();
        if s > bundle.cell_common[l] + tol {
            return Err(Error::Infeasible(format!(
                "cell {l} allocates {s} of a decodable common rate {}",
                bundle.cell_common[l]
            )));
        }
    }
    Ok(())
}

/// Private rates and common caps of every user; the allocation starts at zero.
pub fn evaluate_rates(cov: &CovarianceSet, ch: &RealChannels) -> Result<RateBundle> {
    check_shapes(cov, ch)?;
    let kk = ch.users_per_cell;
    let totals: Vec<RealMatrix> = (0..ch.cells).map(|i| cov.cell_total(i)).collect();
    let mut private = vec![vec![0.0; kk]; ch.cells];
    let mut caps = vec![vec![0.0; kk]; ch.cells];
    for l in 0..ch.cells {
        for k in 0..kk {
            let u = l * kk + k;
            let h = &ch.links[u][l];
            let mut d = ch.noise[u].clone();
            for i in 0..ch.cells {
                if i != l {
                    d += quad(&ch.links[u][i], &totals[i]);
                }
            }
            let own: Vec<RealMatrix> = cov.private[l].iter().map(|p| quad(h, p)).collect();
            for (j, s) in own.iter().enumerate() {
                if j != k {
                    d += s;
                }
            }
            let d = symmetrize(&d);
            let with_private = &d + &own[k];
            let with_common = &with_private + quad(h, &cov.common[l]);
            let ld = logdet(&d, "interference matrix")?;
            let lp = logdet(&with_private, "private-layer matrix")?;
            let lc = logdet(&with_common, "common-layer matrix")?;
            private[l][k] = (HALF_LOG2 * (lp - ld)).max(0.0);
            caps[l][k] = (HALF_LOG2 * (lc - lp)).max(0.0);
        }
    }
    let cell_common = caps
        .iter()
        .map(|c| c.iter().cloned().fold(f64::INFINITY, f64::min))
        .collect();
    Ok(RateBundle {
        private,
        common_caps: caps,
        cell_common,
        common_alloc: vec![vec![0.0; kk]; ch.cells],
    })
}

/// `r_lk = r_lk,c + r_lk,p` for a candidate allocation `r_c` of cell `l`.
pub fn user_rate(l: usize, k: usize, bundle: &RateBundle, r_c: &[Vec<f64>]) -> Result<f64> {
    check_allocation(bundle, r_c, 1e-9)?;
    Ok(r_c[l][k] + bundle.private[l][k])
}

/// `sum r_lk / (L K p_c + eta sum_l Tr P_l)`.
pub fn gee(cov: &CovarianceSet, bundle: &RateBundle, pm: &PowerModel) -> f64 {
    (bundle.sum_rate() / pm.total_consumption(cov)).max(0.0)
}

/// `r_lk / (p_c + eta Tr P_lk + (eta/K) Tr P_lc)`.
pub fn ee_user(l: usize, k: usize, cov: &CovarianceSet, bundle: &RateBundle, pm: &PowerModel) -> f64 {
    (bundle.total(l, k) / pm.user_consumption(cov, l, k)).max(0.0)
}

/// Largest `r` with `sum_k max(0, w_k r - p_k) <= budget`; users with zero
/// weight impose nothing. Returns `(r, allocation)`; `r` is infinite when
/// every weight is zero.
pub fn max_min_share(private: &[f64], weights: &[f64], budget: f64) -> (f64, Vec<f64>) {
    let budget = budget.max(0.0);
    let mut active: Vec<(f64, f64)> = private
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&p, &w)| (p / w, w))
        .collect();
    if active.is_empty() {
        return (f64::INFINITY, vec![0.0; private.len()]);
    }
    active.sort_by(|a, b| a.0.total_cmp(&b.0));
    // g(r) = sum over breakpoints below r of w (r - b); find g(r) = budget.
    let mut slope = 0.0;
    let mut used = 0.0;
    let mut r = active[0].0;
    let mut found = None;
    for (idx, &(b, w)) in active.iter().enumerate() {
        if idx > 0 {
            let step = slope * (b - r);
            if used + step >= budget {
                found = Some(r + (budget - used) / slope);
                break;
            }
            used += step;
            r = b;
        }
        slope += w;
    }
    let r = found.unwrap_or_else(|| r + (budget - used) / slope);
    let alloc = private
        .iter()
        .zip(weights)
        .map(|(&p, &w)| if w > 0.0 { (w * r - p).max(0.0) } else { 0.0 })
        .collect();
    (r, alloc)
}

/// Best common-rate allocation for `max min_k r_lk / w_lk` across all cells.
pub fn max_min_allocation(bundle: &RateBundle, weights: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    let per_cell: Vec<(f64, Vec<f64>)> = (0..bundle.cells())
        .map(|l| max_min_share(&bundle.private[l], &weights[l], bundle.cell_common[l]))
        .collect();
    let r = per_cell.iter().map(|(r, _)| *r).fold(f64::INFINITY, f64::min);
    if !r.is_finite() {
        return (r, per_cell.into_iter().map(|(_, a)| a).collect());
    }
    // Shares at the binding level; the slack of non-binding cells stays unused.
    let alloc = (0..bundle.cells())
        .map(|l| {
            bundle.private[l]
                .iter()
                .zip(&weights[l])
                .map(|(&p, &w)| if w > 0.0 { (w * r - p).max(0.0) } else { 0.0 })
                .collect()
        })
        .collect();
    (r, alloc)
}

/// Common rate of each cell handed entirely to its largest-weight user.
pub fn weighted_sum_allocation(bundle: &RateBundle, weights: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    let mut value = 0.0;
    let mut alloc = vec![vec![0.0; bundle.users_per_cell()]; bundle.cells()];
    for l in 0..bundle.cells() {
        let (best, w_best) =
            weights[l].iter().cloned().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |acc, (k, w)| if w > acc.1 { (k, w) } else { acc },
            );
        alloc[l][best] = bundle.cell_common[l];
        value += w_best.max(0.0) * bundle.cell_common[l];
        value += bundle.private[l]
            .iter()
            .zip(&weights[l])
            .map(|(p, w)| p * w)
            .sum::<f64>();
    }
    (value, alloc)
}

/// Whether thresholds `r_th` can be met: `sum_k max(0, th - r_p) <= r_lc` per cell.
/// Returns the allocation on success.
pub fn threshold_allocation(bundle: &RateBundle, thresholds: &[Vec<f64>], tol: f64) -> Option<Vec<Vec<f64>>> {
    let mut alloc = Vec::with_capacity(bundle.cells());
    for l in 0..bundle.cells() {
        let need: Vec<f64> = bundle.private[l]
            .iter()
            .zip(&thresholds[l])
            .map(|(&p, &t)| (t - p).max(0.0))
            .collect();
        if need.iter().sum::<f64>() > bundle.cell_common[l] + tol {
            return None;
        }
        alloc.push(need);
    }
    Some(alloc)
}
