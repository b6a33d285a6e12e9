//! Experiment configuration: strict TOML schema with defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{FadingParams, SetKind, Topology};
use crate::error::{Error, Result};
use crate::framework::{ObjectiveKind, Scheme};
use crate::rates::{PowerModel, Signaling};
use crate::realdec::IqiParams;
use crate::rispace::{DiscretePhaseGrid, PhaseAmplitudeLaw, RelaxationParams, SetParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    TwoCell,
    SingleCell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IqiConfig {
    pub bs_epsilon: f64,
    pub bs_phi_deg: f64,
    pub user_epsilon: f64,
    pub user_phi_deg: f64,
}

impl Default for IqiConfig {
    fn default() -> Self {
        Self {
            bs_epsilon: 1.1,
            bs_phi_deg: 5.0,
            user_epsilon: 1.1,
            user_phi_deg: 5.0,
        }
    }
}

impl IqiConfig {
    pub fn bs(&self) -> Result<IqiParams> {
        IqiParams::new(self.bs_epsilon, self.bs_phi_deg.to_radians())
    }

    pub fn user(&self) -> Result<IqiParams> {
        IqiParams::new(self.user_epsilon, self.user_phi_deg.to_radians())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurfaceConfig {
    pub theta_min: f64,
    pub alpha: f64,
    /// Phase offset of the amplitude law, radians.
    pub phi: f64,
    pub levels: usize,
    pub epsilon_relax: f64,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        let law = PhaseAmplitudeLaw::default();
        Self {
            theta_min: law.theta_min,
            alpha: law.alpha,
            phi: law.phi,
            levels: DiscretePhaseGrid::default().levels,
            epsilon_relax: RelaxationParams::default().epsilon_relax,
        }
    }
}

impl SurfaceConfig {
    pub fn params(&self) -> SetParams {
        SetParams {
            law: PhaseAmplitudeLaw {
                theta_min: self.theta_min,
                alpha: self.alpha,
                phi: self.phi,
            },
            grid: DiscretePhaseGrid { levels: self.levels },
            relax: RelaxationParams {
                epsilon_relax: self.epsilon_relax,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub topology: TopologyKind,
    pub users_per_cell: usize,
    pub bs_antennas: usize,
    pub user_antennas: usize,
    pub ris_elements: usize,
    pub noise_power_dbm: f64,
    /// Users (flat index `l*K + k`) with no link to any surface.
    pub blocked_users: Vec<usize>,
    /// Users served from the transmission side of a STAR surface.
    pub transmission_users: Vec<usize>,
    pub fading: FadingParams,
    pub iqi: IqiConfig,
    pub surface: SurfaceConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            topology: TopologyKind::TwoCell,
            users_per_cell: 4,
            bs_antennas: 1,
            user_antennas: 1,
            ris_elements: 8,
            noise_power_dbm: -94.0,
            blocked_users: Vec::new(),
            transmission_users: Vec::new(),
            fading: FadingParams::default(),
            iqi: IqiConfig::default(),
            surface: SurfaceConfig::default(),
        }
    }
}

impl ScenarioConfig {
    /// Noise power per receive antenna, watts.
    pub fn sigma2(&self) -> f64 {
        10f64.powf((self.noise_power_dbm - 30.0) / 10.0)
    }

    pub fn topology(&self, users_per_cell: usize, bs_antennas: usize) -> Topology {
        match self.topology {
            TopologyKind::TwoCell => {
                Topology::two_cell(users_per_cell, bs_antennas, self.user_antennas, self.ris_elements)
            }
            TopologyKind::SingleCell => {
                Topology::single_cell(users_per_cell, bs_antennas, self.user_antennas, self.ris_elements)
            }
        }
    }
}

/// How the surfaces of a scheme are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SurfaceChoice {
    /// No surfaces.
    #[serde(rename = "none")]
    None,
    /// Random unit-modulus coefficients, not optimized.
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "U")]
    U,
    #[serde(rename = "I")]
    I,
    #[serde(rename = "C")]
    C,
    #[serde(rename = "D")]
    D,
    #[serde(rename = "star")]
    Star,
}

impl SurfaceChoice {
    pub fn name(self) -> &'static str {
        match self {
            Self::None => "noRIS",
            Self::Random => "randRIS",
            Self::U => "U",
            Self::I => "I",
            Self::C => "C",
            Self::D => "D",
            Self::Star => "STAR",
        }
    }

    /// Feasibility set of optimized or random coefficients.
    pub fn set_kind(self) -> Option<SetKind> {
        match self {
            Self::None => None,
            Self::Random | Self::I => Some(SetKind::UnitModulus),
            Self::U => Some(SetKind::Unit),
            Self::C => Some(SetKind::PhaseDependent),
            Self::D => Some(SetKind::Discrete),
            Self::Star => Some(SetKind::StarEnergySplit),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemesConfig {
    pub signaling: Vec<Signaling>,
    pub scheme: Vec<Scheme>,
    pub surface: Vec<SurfaceChoice>,
    pub iqi_aware: Vec<bool>,
    /// Keeps only variants whose label contains this string.
    pub filter: Option<String>,
}

impl Default for SchemesConfig {
    fn default() -> Self {
        Self {
            signaling: vec![Signaling::Igs, Signaling::Pgs],
            scheme: vec![Scheme::Rs, Scheme::Tin],
            surface: vec![SurfaceChoice::I],
            iqi_aware: vec![true],
            filter: None,
        }
    }
}

/// One cell of the scheme matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SchemeVariant {
    pub signaling: Signaling,
    pub scheme: Scheme,
    pub surface: SurfaceChoice,
    pub iqi_aware: bool,
}

impl SchemeVariant {
    pub fn label(&self) -> String {
        let mut s = format!("{}-{}-{}", self.signaling, self.scheme.name(), self.surface.name());
        if !self.iqi_aware {
            s.push_str("-unaware");
        }
        s
    }
}

impl SchemesConfig {
    pub fn variants(&self) -> Vec<SchemeVariant> {
        let mut out = Vec::new();
        for &signaling in &self.signaling {
            for &scheme in &self.scheme {
                for &surface in &self.surface {
                    for &iqi_aware in &self.iqi_aware {
                        let v = SchemeVariant {
                            signaling,
                            scheme,
                            surface,
                            iqi_aware,
                        };
                        if self.filter.as_ref().is_none_or(|f| v.label().contains(f.as_str())) {
                            out.push(v);
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    /// Per-user weights, flat `l*K + k`; empty means equal weights.
    pub weights: Vec<f64>,
    /// Per-user rate target, b/s/Hz.
    pub target_rate: f64,
    /// Per-cell power budget, dBW.
    pub power_dbw: f64,
    pub static_power: f64,
    pub amplifier_inefficiency: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        let pm = PowerModel::default();
        Self {
            kind: ObjectiveKind::Mwrm,
            weights: Vec::new(),
            target_rate: 0.0,
            power_dbw: 10.0,
            static_power: pm.p_c,
            amplifier_inefficiency: pm.eta,
        }
    }
}

impl ObjectiveConfig {
    pub fn power_model(&self) -> PowerModel {
        PowerModel {
            p_c: self.static_power,
            eta: self.amplifier_inefficiency,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    PowerDbw,
    TargetRate,
    BsAntennas,
    UsersPerCell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            axis: SweepAxis::PowerDbw,
            values: vec![-10.0, 0.0, 10.0, 20.0, 30.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub trials: usize,
    pub seed: u64,
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub out_dir: PathBuf,
    pub write_traces: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            trials: 20,
            seed: 1,
            rel_tol: 1e-4,
            max_iter: 50,
            threads: 0,
            out_dir: PathBuf::from("out"),
            write_traces: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub schemes: SchemesConfig,
    pub objective: ObjectiveConfig,
    pub sweep: SweepConfig,
    pub run: RunConfig,
}

fn range_error(field: &str, msg: &str) -> Error {
    Error::Config(format!("{field}: {msg}"))
}

/// Appends the closest valid key to serde's unknown-field message.
fn with_suggestion(msg: String) -> String {
    let Some(start) = msg.find("unknown field `") else {
        return msg;
    };
    let rest = &msg[start + "unknown field `".len()..];
    let Some(end) = rest.find('`') else { return msg };
    let unknown = &rest[..end];
    let expected: Vec<&str> = rest[end..].split('`').skip(2).step_by(2).collect();
    let best = expected
        .iter()
        .map(|k| (strsim::jaro_winkler(unknown, k), *k))
        .max_by(|a, b| a.0.total_cmp(&b.0));
    match best {
        Some((score, key)) if score > 0.7 => format!("{} (did you mean `{key}`?)", msg.trim_end()),
        _ => msg,
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(with_suggestion(e.to_string())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scenario;
        for (name, v) in [
            ("scenario.users_per_cell", s.users_per_cell),
            ("scenario.bs_antennas", s.bs_antennas),
            ("scenario.user_antennas", s.user_antennas),
        ] {
            if v == 0 {
                return Err(range_error(name, "must be at least 1"));
            }
        }
        if !s.noise_power_dbm.is_finite() {
            return Err(range_error("scenario.noise_power_dbm", "must be finite"));
        }
        let f = &s.fading;
        if !(f.reference_loss_db.is_finite()
            && f.direct_exponent > 0.0
            && f.ris_exponent > 0.0
            && f.rician_k_db.is_finite())
        {
            return Err(range_error(
                "scenario.fading",
                "exponents must be positive and gains finite",
            ));
        }
        s.iqi.bs().map_err(|e| range_error("scenario.iqi.bs", &e.to_string()))?;
        s.iqi
            .user()
            .map_err(|e| range_error("scenario.iqi.user", &e.to_string()))?;
        s.surface
            .params()
            .validate()
            .map_err(|e| range_error("scenario.surface", &e.to_string()))?;

        let sc = &self.schemes;
        for (name, empty) in [
            ("schemes.signaling", sc.signaling.is_empty()),
            ("schemes.scheme", sc.scheme.is_empty()),
            ("schemes.surface", sc.surface.is_empty()),
            ("schemes.iqi_aware", sc.iqi_aware.is_empty()),
        ] {
            if empty {
                return Err(range_error(name, "must list at least one entry"));
            }
        }
        if sc.variants().is_empty() {
            return Err(range_error("schemes.filter", "no scheme label matches"));
        }
        if sc.surface.iter().any(|&c| c != SurfaceChoice::None) && s.ris_elements == 0 {
            return Err(range_error(
                "scenario.ris_elements",
                "surface schemes need at least one element",
            ));
        }

        let o = &self.objective;
        if o.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(range_error("objective.weights", "must be finite and nonnegative"));
        }
        if !(o.target_rate.is_finite() && o.target_rate >= 0.0) {
            return Err(range_error("objective.target_rate", "must be finite and nonnegative"));
        }
        if o.kind == ObjectiveKind::PowerMin && o.target_rate <= 0.0 && self.sweep.axis != SweepAxis::TargetRate {
            return Err(range_error(
                "objective.target_rate",
                "power minimization needs a positive target",
            ));
        }
        if !o.power_dbw.is_finite() {
            return Err(range_error("objective.power_dbw", "must be finite"));
        }
        o.power_model()
            .validate()
            .map_err(|e| range_error("objective", &e.to_string()))?;

        let sw = &self.sweep;
        if sw.values.is_empty() {
            return Err(range_error("sweep.values", "sweep axis must be nonempty"));
        }
        if sw.values.iter().any(|v| !v.is_finite()) {
            return Err(range_error("sweep.values", "must be finite"));
        }
        if matches!(sw.axis, SweepAxis::BsAntennas | SweepAxis::UsersPerCell)
            && sw.values.iter().any(|v| *v < 1.0 || v.fract() != 0.0)
        {
            return Err(range_error(
                "sweep.values",
                "antenna and user counts must be positive integers",
            ));
        }
        if sw.axis == SweepAxis::TargetRate && sw.values.iter().any(|v| *v < 0.0) {
            return Err(range_error("sweep.values", "rate targets must be nonnegative"));
        }

        let r = &self.run;
        if r.trials == 0 {
            return Err(range_error("run.trials", "must be at least 1"));
        }
        if !(r.rel_tol > 0.0) {
            return Err(range_error("run.rel_tol", "must be positive"));
        }
        if r.max_iter == 0 {
            return Err(range_error("run.max_iter", "must be at least 1"));
        }
        Ok(())
    }
}

/// Reads, parses and validates a configuration file.
pub fn validate_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::from_toml_str(&text)
}
