//! Real decomposition of complex and widely-linear maps, and the I/Q
//! imbalance device model.
//!
//! A complex matrix `M` maps to `[[Re M, -Im M], [Im M, Re M]]`, which acts
//! on stacked vectors `[Re x; Im x]`. A widely-linear map `x -> A x + B x*`
//! has the real form `[[Re(A+B), -Im(A-B)], [Im(A+B), Re(A-B)]]`, which is
//! how imbalanced front-ends enter the equivalent channel.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite_complex, ComplexMatrix, RealMatrix};

/// Real composite `[[Re M, -Im M], [Im M, Re M]]` of a complex matrix.
pub fn to_real_composite(m: &ComplexMatrix) -> Result<RealMatrix> {
    if !all_finite_complex(m) {
        return Err(Error::NonFinite("complex matrix entry".into()));
    }
    Ok(real_composite_unchecked(m))
}

pub(crate) fn real_composite_unchecked(m: &ComplexMatrix) -> RealMatrix {
    let (r, c) = m.shape();
    let mut out = RealMatrix::zeros(2 * r, 2 * c);
    for i in 0..r {
        for j in 0..c {
            let z = m[(i, j)];
            out[(i, j)] = z.re;
            out[(i, c + j)] = -z.im;
            out[(r + i, j)] = z.im;
            out[(r + i, c + j)] = z.re;
        }
    }
    out
}

/// Real form of the widely-linear map `x -> A x + B conj(x)`.
pub fn widely_linear_real(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<RealMatrix> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "widely-linear pair {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (r, c) = a.shape();
    let mut out = RealMatrix::zeros(2 * r, 2 * c);
    for i in 0..r {
        for j in 0..c {
            let s = a[(i, j)] + b[(i, j)];
            let d = a[(i, j)] - b[(i, j)];
            out[(i, j)] = s.re;
            out[(i, c + j)] = -d.im;
            out[(r + i, j)] = s.im;
            out[(r + i, c + j)] = d.re;
        }
    }
    Ok(out)
}

/// Stacks a complex vector as `[Re x; Im x]`.
pub fn stack_real(x: &[Complex64]) -> Vec<f64> {
    x.iter().map(|z| z.re).chain(x.iter().map(|z| z.im)).collect()
}

/// Amplitude/phase imbalance of one antenna branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IqiParams {
    /// Amplitude imbalance, 1 for an ideal branch.
    pub epsilon: f64,
    /// Phase imbalance in radians, 0 for an ideal branch.
    pub phi: f64,
}

impl IqiParams {
    pub const IDEAL: IqiParams = IqiParams { epsilon: 1.0, phi: 0.0 };

    pub fn new(epsilon: f64, phi: f64) -> Result<Self> {
        let p = Self { epsilon, phi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "IQI epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if !(self.phi.is_finite() && self.phi.abs() < std::f64::consts::FRAC_PI_2) {
            return Err(Error::InvalidParameter(format!(
                "IQI phi must satisfy |phi| < pi/2, got {}",
                self.phi
            )));
        }
        Ok(())
    }

    pub fn is_ideal(&self) -> bool {
        self.epsilon == 1.0 && self.phi == 0.0
    }

    /// Widely-linear coefficients `(mu, nu)`: the branch outputs `mu z + nu conj(z)`.
    pub fn widely_linear_coeffs(&self) -> (Complex64, Complex64) {
        let e_pos = Complex64::from_polar(self.epsilon, self.phi);
        let e_neg = Complex64::from_polar(self.epsilon, -self.phi);
        let mu = (Complex64::new(1.0, 0.0) + e_pos) * 0.5;
        let nu = (Complex64::new(1.0, 0.0) - e_neg) * 0.5;
        (mu, nu)
    }

    /// `|mu|^2 / |nu|^2`, infinite for an ideal branch.
    pub fn image_rejection_ratio(&self) -> f64 {
        let (mu, nu) = self.widely_linear_coeffs();
        let nn = nu.norm_sqr();
        if nn == 0.0 {
            f64::INFINITY
        } else {
            mu.norm_sqr() / nn
        }
    }
}

impl Default for IqiParams {
    fn default() -> Self {
        Self::IDEAL
    }
}

/// Per-antenna imbalance of one device (a BS or a user terminal).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceIqi {
    pub antennas: Vec<IqiParams>,
}

impl DeviceIqi {
    pub fn ideal(n: usize) -> Self {
        Self::uniform(n, IqiParams::IDEAL)
    }

    pub fn uniform(n: usize, p: IqiParams) -> Self {
        Self { antennas: vec![p; n] }
    }

    pub fn len(&self) -> usize {
        self.antennas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.antennas.is_empty()
    }

    pub fn is_ideal(&self) -> bool {
        self.antennas.iter().all(IqiParams::is_ideal)
    }

    /// Diagonal `(Gamma_1, Gamma_2)` of the device.
    pub fn gammas(&self) -> (ComplexMatrix, ComplexMatrix) {
        let n = self.antennas.len();
        let mut g1 = ComplexMatrix::zeros(n, n);
        let mut g2 = ComplexMatrix::zeros(n, n);
        for (i, p) in self.antennas.iter().enumerate() {
            let (mu, nu) = p.widely_linear_coeffs();
            g1[(i, i)] = mu;
            g2[(i, i)] = nu;
        }
        (g1, g2)
    }

    /// Real form of the device's widely-linear distortion.
    pub fn real_map(&self) -> RealMatrix {
        let (g1, g2) = self.gammas();
        widely_linear_real(&g1, &g2).expect("diagonal gammas share a shape")
    }
}

/// Receiver noise: circularly-symmetric thermal noise passed through the
/// receiver's imbalanced branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Thermal noise power per receive antenna in watts.
    pub sigma2: f64,
    pub rx_iqi: DeviceIqi,
}

impl NoiseModel {
    pub fn new(sigma2: f64, rx_iqi: DeviceIqi) -> Result<Self> {
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise power must be > 0, got {sigma2}"
            )));
        }
        for p in &rx_iqi.antennas {
            p.validate()?;
        }
        Ok(Self { sigma2, rx_iqi })
    }
}

/// Equivalent `2N_r x 2N_t` real channel of an IQI-impaired link:
/// `Gamma_r * to_real(H) * Gamma_t` with each `Gamma` the real form of a
/// widely-linear device map.
pub fn iqi_equivalent_channel(h: &ComplexMatrix, tx: &DeviceIqi, rx: &DeviceIqi) -> Result<RealMatrix> {
    if h.ncols() != tx.len() || h.nrows() != rx.len() {
        return Err(Error::Dimension(format!(
            "channel {}x{} with {} rx / {} tx IQI entries",
            h.nrows(),
            h.ncols(),
            rx.len(),
            tx.len()
        )));
    }
    let hr = to_real_composite(h)?;
    Ok(apply_device_maps(&hr, &tx.real_map(), &rx.real_map()))
}

pub(crate) fn apply_device_maps(h_real: &RealMatrix, tx_map: &RealMatrix, rx_map: &RealMatrix) -> RealMatrix {
    rx_map * h_real * tx_map
}

/// Real noise covariance `Gamma_r C_r Gamma_r^T` with `C_r = (sigma2/2) I`.
pub fn noise_covariance(nm: &NoiseModel, n_r: usize) -> Result<RealMatrix> {
    if nm.rx_iqi.len() != n_r {
        return Err(Error::Dimension(format!(
            "noise model has {} antennas, expected {n_r}",
            nm.rx_iqi.len()
        )));
    }
    let g = nm.rx_iqi.real_map();
    let c = &g * g.transpose() * (nm.sigma2 / 2.0);
    Ok(crate::linalg::symmetrize(&c))
}

/// Device impairments of a whole deployment plus the thermal noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemIqi {
    /// One entry per BS.
    pub bs: Vec<DeviceIqi>,
    /// One entry per user, flat index `l * K + k`.
    pub users: Vec<DeviceIqi>,
    pub sigma2: f64,
}

impl SystemIqi {
    pub fn ideal(bs_antennas: &[usize], user_antennas: &[usize], sigma2: f64) -> Self {
        Self::uniform(bs_antennas, user_antennas, IqiParams::IDEAL, IqiParams::IDEAL, sigma2)
    }

    pub fn uniform(bs_antennas: &[usize], user_antennas: &[usize], tx: IqiParams, rx: IqiParams, sigma2: f64) -> Self {
        Self {
            bs: bs_antennas.iter().map(|&n| DeviceIqi::uniform(n, tx)).collect(),
            users: user_antennas.iter().map(|&n| DeviceIqi::uniform(n, rx)).collect(),
            sigma2,
        }
    }

    /// Same antenna counts and noise, every branch ideal.
    pub fn idealized(&self) -> Self {
        Self {
            bs: self.bs.iter().map(|d| DeviceIqi::ideal(d.len())).collect(),
            users: self.users.iter().map(|d| DeviceIqi::ideal(d.len())).collect(),
            sigma2: self.sigma2,
        }
    }

    pub fn is_ideal(&self) -> bool {
        self.bs.iter().chain(&self.users).all(DeviceIqi::is_ideal)
    }

    pub fn noise_model(&self, u: usize) -> Result<NoiseModel> {
        let rx = self
            .users
            .get(u)
            .ok_or_else(|| Error::Dimension(format!("no IQI entry for user {u}")))?;
        NoiseModel::new(self.sigma2, rx.clone())
    }
}
