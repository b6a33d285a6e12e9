//! Scenario geometry, fading generation and RIS-dependent effective channels.
//!
//! The effective channel from BS `i` to user `(l, k)` is
//! `sum_m G_{lk,m} diag(theta_m) G_{m,i} + F_{lk,i}`; for a STAR surface the
//! reflection or transmission coefficients are used depending on which side
//! of the surface the user sits on.

use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;

pub type Position = [f64; 3];

pub fn distance(a: &Position, b: &Position) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Node placement and antenna counts of a multicell deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub bs_positions: Vec<Position>,
    pub ris_positions: Vec<Position>,
    pub users_per_cell: usize,
    /// Antennas per BS.
    pub bs_antennas: Vec<usize>,
    /// Antennas per user, flat index `l * K + k`.
    pub user_antennas: Vec<usize>,
    /// Elements per RIS.
    pub ris_elements: Vec<usize>,
    pub user_height: f64,
    /// Side of the square (centred on the cell's RIS) users are dropped in.
    pub drop_side: f64,
    /// RIS whose square hosts each cell's users.
    pub cell_ris: Vec<usize>,
}

impl Topology {
    /// Two-cell layout with one RIS per cell and symmetric antenna counts.
    pub fn two_cell(users_per_cell: usize, n_bs: usize, n_u: usize, n_ris: usize) -> Self {
        Self {
            bs_positions: vec![[0.0, 0.0, 25.0], [400.0, 0.0, 25.0]],
            ris_positions: vec![[180.0, 0.0, 15.0], [220.0, 0.0, 15.0]],
            users_per_cell,
            bs_antennas: vec![n_bs; 2],
            user_antennas: vec![n_u; 2 * users_per_cell],
            ris_elements: vec![n_ris; 2],
            user_height: 1.5,
            drop_side: 20.0,
            cell_ris: vec![0, 1],
        }
    }

    /// Single cell with one surface, as used for STAR comparisons.
    pub fn single_cell(users_per_cell: usize, n_bs: usize, n_u: usize, n_ris: usize) -> Self {
        Self {
            bs_positions: vec![[0.0, 0.0, 25.0]],
            ris_positions: vec![[180.0, 0.0, 15.0]],
            users_per_cell,
            bs_antennas: vec![n_bs],
            user_antennas: vec![n_u; users_per_cell],
            ris_elements: vec![n_ris],
            user_height: 1.5,
            drop_side: 20.0,
            cell_ris: vec![0],
        }
    }

    pub fn cells(&self) -> usize {
        self.bs_positions.len()
    }

    pub fn num_ris(&self) -> usize {
        self.ris_positions.len()
    }

    pub fn num_users(&self) -> usize {
        self.cells() * self.users_per_cell
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.cells();
        let m = self.num_ris();
        if l == 0 {
            return Err(Error::InvalidParameter("at least one BS is required".into()));
        }
        if self.users_per_cell == 0 {
            return Err(Error::InvalidParameter("users_per_cell must be >= 1".into()));
        }
        if m < l {
            return Err(Error::InvalidParameter(format!(
                "need at least one RIS per cell (M = {m} < L = {l})"
            )));
        }
        if self.bs_antennas.len() != l || self.bs_antennas.iter().any(|&n| n == 0) {
            return Err(Error::InvalidParameter("bs_antennas must list >= 1 per BS".into()));
        }
        if self.user_antennas.len() != self.num_users() || self.user_antennas.iter().any(|&n| n == 0) {
            return Err(Error::InvalidParameter("user_antennas must list >= 1 per user".into()));
        }
        if self.ris_elements.len() != m {
            return Err(Error::InvalidParameter(
                "ris_elements must list one count per RIS".into(),
            ));
        }
        if self.cell_ris.len() != l || self.cell_ris.iter().any(|&r| r >= m) {
            return Err(Error::InvalidParameter("cell_ris must map every cell to a RIS".into()));
        }
        let heights_ok =
            self.bs_positions.iter().chain(&self.ris_positions).all(|p| p[2] > 0.0) && self.user_height > 0.0;
        if !heights_ok {
            return Err(Error::InvalidParameter("all heights must be positive".into()));
        }
        if !(self.drop_side > 0.0) {
            return Err(Error::InvalidParameter("drop_side must be positive".into()));
        }
        Ok(())
    }
}

/// Large- and small-scale fading laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FadingParams {
    /// Path loss at the 1 m reference distance, dB.
    pub reference_loss_db: f64,
    pub direct_exponent: f64,
    pub ris_exponent: f64,
    /// Rician factor of BS-RIS and RIS-user links, dB.
    pub rician_k_db: f64,
}

impl Default for FadingParams {
    fn default() -> Self {
        Self {
            reference_loss_db: -30.0,
            direct_exponent: 3.75,
            ris_exponent: 2.2,
            rician_k_db: 3.0,
        }
    }
}

impl FadingParams {
    pub fn path_gain(&self, d: f64, exponent: f64) -> f64 {
        10f64.powf(self.reference_loss_db / 10.0) * d.max(1.0).powf(-exponent)
    }
}

/// All small-scale-faded link matrices of one channel realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadingSet {
    pub cells: usize,
    pub users_per_cell: usize,
    /// `F_{u,i}`: BS `i` to user `u`, `N_u x N_BS`.
    pub direct: Vec<Vec<ComplexMatrix>>,
    /// `G_{u,m}`: RIS `m` to user `u`, `N_u x N_RIS`.
    pub ris_rx: Vec<Vec<ComplexMatrix>>,
    /// `G_{m,i}`: BS `i` to RIS `m`, `N_RIS x N_BS`.
    pub ris_tx: Vec<Vec<ComplexMatrix>>,
    pub user_positions: Vec<Position>,
}

impl FadingSet {
    pub fn num_users(&self) -> usize {
        self.cells * self.users_per_cell
    }

    pub fn num_ris(&self) -> usize {
        self.ris_tx.len()
    }

    pub fn ris_elements(&self) -> Vec<usize> {
        self.ris_tx
            .iter()
            .map(|links| links.first().map_or(0, |g| g.nrows()))
            .collect()
    }

    pub fn user_index(&self, l: usize, k: usize) -> usize {
        l * self.users_per_cell + k
    }

    /// Scales receiver-side links by `1/sqrt(sigma2)` so the noise becomes unit power.
    pub fn normalized(&self, sigma2: f64) -> Self {
        let s = 1.0 / sigma2.sqrt();
        let mut out = self.clone();
        for links in out.direct.iter_mut().chain(out.ris_rx.iter_mut()) {
            for g in links.iter_mut() {
                *g *= Complex64::new(s, 0.0);
            }
        }
        out
    }

    /// Zeroes every RIS-to-user link, leaving only direct paths.
    pub fn without_ris(&self) -> Self {
        let mut out = self.clone();
        for links in out.ris_rx.iter_mut() {
            for g in links.iter_mut() {
                g.fill(Complex64::new(0.0, 0.0));
            }
        }
        out
    }

    /// Zeroes the RIS links of the given users (blocked from every surface).
    pub fn block_ris_links(&mut self, users: &[usize]) {
        for &u in users {
            if let Some(links) = self.ris_rx.get_mut(u) {
                for g in links.iter_mut() {
                    g.fill(Complex64::new(0.0, 0.0));
                }
            }
        }
    }
}

fn complex_gaussian(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn rayleigh(rng: &mut ChaCha8Rng, rows: usize, cols: usize, gain: f64) -> ComplexMatrix {
    let amp = gain.sqrt();
    ComplexMatrix::from_fn(rows, cols, |_, _| complex_gaussian(rng) * amp)
}

/// Half-wavelength ULA response along the x axis.
fn ula_response(n: usize, from: &Position, to: &Position) -> Vec<Complex64> {
    let d = distance(from, to).max(1e-9);
    let cos_x = (to[0] - from[0]) / d;
    (0..n)
        .map(|idx| Complex64::from_polar(1.0, std::f64::consts::PI * idx as f64 * cos_x))
        .collect()
}

fn rician(
    rng: &mut ChaCha8Rng,
    rx_pos: &Position,
    n_rx: usize,
    tx_pos: &Position,
    n_tx: usize,
    gain: f64,
    k_lin: f64,
) -> ComplexMatrix {
    let a_rx = ula_response(n_rx, rx_pos, tx_pos);
    let a_tx = ula_response(n_tx, tx_pos, rx_pos);
    let los = (k_lin / (1.0 + k_lin)).sqrt();
    let nlos = (1.0 / (1.0 + k_lin)).sqrt();
    let amp = gain.sqrt();
    ComplexMatrix::from_fn(n_rx, n_tx, |r, c| {
        (a_rx[r] * a_tx[c].conj() * los + complex_gaussian(rng) * nlos) * amp
    })
}

/// Draws user positions and every link matrix; a pure function of its inputs.
pub fn sample_scenario(topology: &Topology, params: &FadingParams, seed: u64) -> Result<FadingSet> {
    topology.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l_cells = topology.cells();
    let k_users = topology.users_per_cell;
    let m_ris = topology.num_ris();
    let half = topology.drop_side / 2.0;

    let mut user_positions = Vec::with_capacity(topology.num_users());
    for l in 0..l_cells {
        let centre = topology.ris_positions[topology.cell_ris[l]];
        for _ in 0..k_users {
            let dx = rng.random::<f64>() * 2.0 * half - half;
            let dy = rng.random::<f64>() * 2.0 * half - half;
            user_positions.push([centre[0] + dx, centre[1] + dy, topology.user_height]);
        }
    }

    let k_lin = 10f64.powf(params.rician_k_db / 10.0);

    let ris_tx = (0..m_ris)
        .map(|m| {
            (0..l_cells)
                .map(|i| {
                    let rp = &topology.ris_positions[m];
                    let bp = &topology.bs_positions[i];
                    let g = params.path_gain(distance(rp, bp), params.ris_exponent);
                    rician(
                        &mut rng,
                        rp,
                        topology.ris_elements[m],
                        bp,
                        topology.bs_antennas[i],
                        g,
                        k_lin,
                    )
                })
                .collect()
        })
        .collect();

    let mut direct = Vec::with_capacity(user_positions.len());
    let mut ris_rx = Vec::with_capacity(user_positions.len());
    for (u, up) in user_positions.iter().enumerate() {
        let n_u = topology.user_antennas[u];
        direct.push(
            (0..l_cells)
                .map(|i| {
                    let g = params.path_gain(distance(up, &topology.bs_positions[i]), params.direct_exponent);
                    rayleigh(&mut rng, n_u, topology.bs_antennas[i], g)
                })
                .collect(),
        );
        ris_rx.push(
            (0..m_ris)
                .map(|m| {
                    let rp = &topology.ris_positions[m];
                    let g = params.path_gain(distance(up, rp), params.ris_exponent);
                    rician(&mut rng, up, n_u, rp, topology.ris_elements[m], g, k_lin)
                })
                .collect(),
        );
    }

    Ok(FadingSet {
        cells: l_cells,
        users_per_cell: k_users,
        direct,
        ris_rx,
        ris_tx,
        user_positions,
    })
}

/// Feasibility set of the reflecting coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SetKind {
    /// `|theta| <= 1`.
    #[serde(rename = "U")]
    Unit,
    /// `|theta| = 1`.
    #[serde(rename = "I")]
    UnitModulus,
    /// `|theta| = F(angle(theta))`.
    #[serde(rename = "C")]
    PhaseDependent,
    /// Unit modulus with phases on a uniform grid.
    #[serde(rename = "D")]
    Discrete,
    /// STAR energy splitting, `|theta_t|^2 + |theta_r|^2 = 1`.
    #[serde(rename = "star")]
    StarEnergySplit,
}

impl SetKind {
    pub fn short_name(&self) -> &'static str {
        match self {
            SetKind::Unit => "U",
            SetKind::UnitModulus => "I",
            SetKind::PhaseDependent => "C",
            SetKind::Discrete => "D",
            SetKind::StarEnergySplit => "star",
        }
    }

    pub fn is_star(&self) -> bool {
        matches!(self, SetKind::StarEnergySplit)
    }
}

impl fmt::Display for SetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Reflecting (and for STAR, transmitting) coefficients of every surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaSet {
    pub kind: SetKind,
    pub reflect: Vec<Vec<Complex64>>,
    pub transmit: Option<Vec<Vec<Complex64>>>,
}

impl ThetaSet {
    /// All-zero coefficients: every surface is dark.
    pub fn dark(kind: SetKind, elements: &[usize]) -> Self {
        let zeros: Vec<Vec<Complex64>> = elements.iter().map(|&n| vec![Complex64::new(0.0, 0.0); n]).collect();
        Self {
            kind,
            transmit: kind.is_star().then(|| zeros.clone()),
            reflect: zeros,
        }
    }

    pub fn elements(&self) -> Vec<usize> {
        self.reflect.iter().map(Vec::len).collect()
    }

    /// Number of real parameters in the stacked `[Re, Im]` representation.
    pub fn num_real_params(&self) -> usize {
        let n: usize = self.reflect.iter().map(Vec::len).sum();
        if self.transmit.is_some() {
            4 * n
        } else {
            2 * n
        }
    }

    /// Stacks coefficients as `[Re r, Im r, (Re t, Im t)]` per element.
    pub fn to_real_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_real_params());
        for (m, row) in self.reflect.iter().enumerate() {
            for (n, r) in row.iter().enumerate() {
                out.push(r.re);
                out.push(r.im);
                if let Some(t) = &self.transmit {
                    out.push(t[m][n].re);
                    out.push(t[m][n].im);
                }
            }
        }
        out
    }

    pub fn with_real_params(&self, x: &[f64]) -> Result<Self> {
        if x.len() != self.num_real_params() {
            return Err(Error::Dimension(format!(
                "expected {} coefficients, got {}",
                self.num_real_params(),
                x.len()
            )));
        }
        let mut out = self.clone();
        let stride = if self.transmit.is_some() { 4 } else { 2 };
        let mut idx = 0;
        for m in 0..out.reflect.len() {
            for n in 0..out.reflect[m].len() {
                out.reflect[m][n] = Complex64::new(x[idx], x[idx + 1]);
                if let Some(t) = out.transmit.as_mut() {
                    t[m][n] = Complex64::new(x[idx + 2], x[idx + 3]);
                }
                idx += stride;
            }
        }
        Ok(out)
    }

    /// Index of the real part of element `(m, n)` in the stacked vector;
    /// the imaginary part follows, then the transmit pair for STAR.
    pub fn param_offset(&self, m: usize, n: usize) -> usize {
        let stride = if self.transmit.is_some() { 4 } else { 2 };
        let before: usize = self.reflect[..m].iter().map(Vec::len).sum();
        (before + n) * stride
    }
}

/// Side of a STAR surface a user is served from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    Reflection,
    Transmission,
}

/// Per-user space assignment, flat user index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSpaceMap {
    pub spaces: Vec<Space>,
}

impl UserSpaceMap {
    pub fn all_reflection(users: usize) -> Self {
        Self {
            spaces: vec![Space::Reflection; users],
        }
    }

    /// Users listed (by flat index) are in the transmission space.
    pub fn with_transmission(users: usize, transmission: &[usize]) -> Self {
        let mut map = Self::all_reflection(users);
        for &u in transmission {
            if u < users {
                map.spaces[u] = Space::Transmission;
            }
        }
        map
    }

    pub fn space(&self, u: usize) -> Result<Space> {
        self.spaces
            .get(u)
            .copied()
            .ok_or_else(|| Error::InvalidParameter(format!("user {u} missing from space map")))
    }
}

fn check_link(f: &FadingSet, u: usize, i: usize) -> Result<()> {
    if u >= f.num_users() || i >= f.cells {
        return Err(Error::Dimension(format!("link (user {u}, bs {i}) out of range")));
    }
    Ok(())
}

fn accumulate_ris(f: &FadingSet, coeffs: &[Vec<Complex64>], u: usize, i: usize, out: &mut ComplexMatrix) -> Result<()> {
    if coeffs.len() != f.num_ris() {
        return Err(Error::Dimension(format!(
            "{} coefficient vectors for {} surfaces",
            coeffs.len(),
            f.num_ris()
        )));
    }
    for (m, theta) in coeffs.iter().enumerate() {
        let g_rx = &f.ris_rx[u][m];
        let g_tx = &f.ris_tx[m][i];
        if theta.len() != g_rx.ncols() || theta.len() != g_tx.nrows() {
            return Err(Error::Dimension(format!(
                "surface {m}: {} coefficients vs links {}x{} / {}x{}",
                theta.len(),
                g_rx.nrows(),
                g_rx.ncols(),
                g_tx.nrows(),
                g_tx.ncols()
            )));
        }
        for (n, &t) in theta.iter().enumerate() {
            if t == Complex64::new(0.0, 0.0) {
                continue;
            }
            for r in 0..out.nrows() {
                let a = g_rx[(r, n)] * t;
                for c in 0..out.ncols() {
                    out[(r, c)] += a * g_tx[(n, c)];
                }
            }
        }
    }
    Ok(())
}

/// `H_{lk,i} = sum_m G_{lk,m} Theta_m G_{m,i} + F_{lk,i}` using reflection coefficients.
pub fn assemble_effective_channel(f: &FadingSet, t: &ThetaSet, l: usize, k: usize, i: usize) -> Result<ComplexMatrix> {
    if k >= f.users_per_cell {
        return Err(Error::Dimension(format!("user index {k} out of range")));
    }
    let u = f.user_index(l, k);
    check_link(f, u, i)?;
    let mut h = f.direct[u][i].clone();
    accumulate_ris(f, &t.reflect, u, i, &mut h)?;
    Ok(h)
}

/// STAR variant: reflection-space users see `Theta^r`, transmission-space users `Theta^t`.
pub fn assemble_star_channel(
    f: &FadingSet,
    t: &ThetaSet,
    map: &UserSpaceMap,
    l: usize,
    k: usize,
    i: usize,
) -> Result<ComplexMatrix> {
    if k >= f.users_per_cell {
        return Err(Error::Dimension(format!("user index {k} out of range")));
    }
    let u = f.user_index(l, k);
    check_link(f, u, i)?;
    let transmit = t
        .transmit
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("STAR channel needs transmission coefficients".into()))?;
    let coeffs = match map.space(u)? {
        Space::Reflection => &t.reflect,
        Space::Transmission => transmit,
    };
    let mut h = f.direct[u][i].clone();
    accumulate_ris(f, coeffs, u, i, &mut h)?;
    Ok(h)
}

/// Effective channel of flat user `u` from BS `i`, dispatching on the set kind.
pub fn effective_channel(
    f: &FadingSet,
    t: &ThetaSet,
    map: Option<&UserSpaceMap>,
    u: usize,
    i: usize,
) -> Result<ComplexMatrix> {
    let (l, k) = (u / f.users_per_cell, u % f.users_per_cell);
    if t.kind.is_star() {
        let default_map;
        let map = match map {
            Some(m) => m,
            None => {
                default_map = UserSpaceMap::all_reflection(f.num_users());
                &default_map
            }
        };
        assemble_star_channel(f, t, map, l, k, i)
    } else {
        assemble_effective_channel(f, t, l, k, i)
    }
}

/// Partial derivatives of `H_{u,i}` with respect to the stacked real
/// coefficient vector of `t`; entries with no influence are omitted.
pub fn channel_derivatives(
    f: &FadingSet,
    t: &ThetaSet,
    map: Option<&UserSpaceMap>,
    u: usize,
    i: usize,
) -> Result<Vec<(usize, ComplexMatrix)>> {
    check_link(f, u, i)?;
    let space = match (t.kind.is_star(), map) {
        (true, Some(map)) => map.space(u)?,
        _ => Space::Reflection,
    };
    let mut out = Vec::new();
    for m in 0..f.num_ris() {
        let g_rx = &f.ris_rx[u][m];
        let g_tx = &f.ris_tx[m][i];
        for n in 0..g_rx.ncols() {
            let col = g_rx.column(n);
            let row = g_tx.row(n);
            let outer = col * row;
            if outer.iter().all(|z| z.norm_sqr() == 0.0) {
                continue;
            }
            let mut base = t.param_offset(m, n);
            if space == Space::Transmission {
                base += 2;
            }
            out.push((base + 1, outer.map(|z| z * Complex64::new(0.0, 1.0))));
            out.push((base, outer));
        }
    }
    out.sort_by_key(|(j, _)| *j);
    Ok(out)
}
