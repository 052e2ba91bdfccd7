//! Experiment configuration: one versioned JSON document per run.

use crate::error::CliError;
use msq_core::dists::{ArrivalSpec, DistSpec, ServiceDistribution};
use msq_core::fluid::REGIME_TOL;
use msq_core::microsim::ResidualSampling;
use msq_core::scalestats::verify::{
    FcltCheck, FllnCheck, FluidInvarianceCheck, IdentityCheck, InsensitivityCheck, LipschitzCheck, MartingaleCheck,
    MomentCheck, RepresentationCheck, SaeCheck,
};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Sim,
    Fluid,
    Limit,
    Verify,
    Dists,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelBlock>,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub run: RunBlock,
    #[serde(default)]
    pub verify: VerifyBlock,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    #[serde(default = "unit_poisson")]
    pub arrival: ArrivalSpec,
    pub service: DistSpec,
    /// Server counts; `sim run` produces one set of replicates per entry.
    #[serde(default)]
    pub n: Vec<usize>,
    #[serde(default)]
    pub initial: InitialBlock,
}

fn unit_poisson() -> ArrivalSpec {
    ArrivalSpec::poisson(1.0, 0.0)
}

impl ModelBlock {
    pub fn with_service(service: DistSpec) -> Self {
        ModelBlock { arrival: unit_poisson(), service, n: vec![], initial: InitialBlock::default() }
    }
}

/// How the customers present at time 0 are aged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialAges {
    /// Drawn from the stationary age law (the invariant density in the fluid).
    #[default]
    Stationary,
    /// All zero; only meaningful for the stochastic system.
    Fresh,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialBlock {
    /// Initial number in system per server (`X(0) = round(x0 N)`).
    pub x0: f64,
    pub ages: InitialAges,
    pub residual_sampling: ResidualSampling,
    /// Starting value of the diffusion-scaled queue length.
    pub diffusion_x0: f64,
    /// Signed point masses `[age, weight]` of the diffusion-scaled initial ages.
    pub diffusion_atoms: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Numerics {
    pub horizon: f64,
    pub dt: f64,
    /// Age cell width; the limit grid uses square cells, so this must equal `dt`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dx: Option<f64>,
    /// Age truncation of the limit grid; chosen from the fluid tail when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_max: Option<f64>,
    /// Step of the fluid solver; `min(dt, 0.01)` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fluid_dt: Option<f64>,
    pub regime_tolerance: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics { horizon: 5.0, dt: 0.01, dx: None, x_max: None, fluid_dt: None, regime_tolerance: REGIME_TOL }
    }
}

impl Numerics {
    pub fn fluid_step(&self) -> f64 {
        self.fluid_dt.unwrap_or(self.dt.min(0.01))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunBlock {
    pub seeds: Vec<u64>,
    /// Used as `seeds = 0..replicates` when `seeds` is empty.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub snapshot_times: Vec<f64>,
    /// Limit runs: age test functions tracked by the measure-valued output.
    pub test_functions: Vec<String>,
    /// Limit runs: paths per seed.
    pub paths: u64,
    pub noise_off: bool,
}

impl Default for RunBlock {
    fn default() -> Self {
        RunBlock {
            seeds: vec![],
            replicates: None,
            out: None,
            snapshot_times: vec![],
            test_functions: vec!["one".into()],
            paths: 1,
            noise_off: false,
        }
    }
}

impl RunBlock {
    pub fn seed_list(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            (0..self.replicates.unwrap_or(0)).collect()
        } else {
            self.seeds.clone()
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyBlock {
    pub identities: IdentityCheck,
    pub martingale: MartingaleCheck,
    pub representation: RepresentationCheck,
    pub flln: FllnCheck,
    pub fluid: FluidInvarianceCheck,
    pub fclt: FcltCheck,
    pub insensitivity: InsensitivityCheck,
    pub moments: MomentCheck,
    pub lipschitz: LipschitzCheck,
    pub sae: SaeCheck,
}

impl ExperimentConfig {
    /// A config holding only defaults, for commands that can run without a file.
    pub fn defaults(kind: Kind) -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            kind,
            model: None,
            numerics: Numerics::default(),
            run: RunBlock::default(),
            verify: VerifyBlock::default(),
        }
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Schema(format!("{origin}: at `{path}`: {}", e.into_inner()))
        })?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Schema(format!(
                "{origin}: at `schema_version`: expected {SCHEMA_VERSION}, got {}",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Schema(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn expect_kind(&self, kind: Kind) -> Result<(), CliError> {
        if self.kind != kind {
            return Err(CliError::Schema(format!(
                "at `kind`: this command needs {kind:?}, the config says {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<&ModelBlock, CliError> {
        self.model.as_ref().ok_or_else(|| CliError::Schema("at `model`: missing, required for this command".into()))
    }

    pub fn service(&self) -> Result<Arc<ServiceDistribution>, CliError> {
        let spec = &self.model()?.service;
        ServiceDistribution::from_spec(spec)
            .map(Arc::new)
            .map_err(|e| CliError::Schema(format!("at `model.service`: {e}")))
    }

    pub fn seeds(&self) -> Result<Vec<u64>, CliError> {
        let s = self.run.seed_list();
        if s.is_empty() {
            return Err(CliError::Schema("at `run.seeds`: stochastic runs need at least one seed".into()));
        }
        Ok(s)
    }

    pub fn check_numerics(&self) -> Result<(), CliError> {
        let n = &self.numerics;
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(n.horizon) {
            return Err(CliError::Schema(format!("at `numerics.horizon`: must be positive, got {}", n.horizon)));
        }
        if !positive(n.dt) {
            return Err(CliError::Schema(format!("at `numerics.dt`: must be positive, got {}", n.dt)));
        }
        if let Some(dx) = n.dx {
            if (dx - n.dt).abs() > 1e-12 * n.dt {
                return Err(CliError::Schema(format!(
                    "at `numerics.dx`: age cells are square, dx must equal dt = {}",
                    n.dt
                )));
            }
        }
        if let Some(f) = n.fluid_dt.filter(|f| !positive(*f)) {
            return Err(CliError::Schema(format!("at `numerics.fluid_dt`: must be positive, got {f}")));
        }
        if let Some(t) = self.run.snapshot_times.iter().find(|t| !(0.0..=n.horizon).contains(*t)) {
            return Err(CliError::Schema(format!("at `run.snapshot_times`: {t} is outside [0, {}]", n.horizon)));
        }
        Ok(())
    }
}

/// `7`, `0..10`, `0..=9` or `1,4,9`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, String> {
    let num = |s: &str| s.trim().parse::<u64>().map_err(|e| format!("bad seed `{s}`: {e}"));
    if let Some((a, b)) = text.split_once("..=") {
        let (a, b) = (num(a)?, num(b)?);
        return if a <= b { Ok((a..=b).collect()) } else { Err(format!("empty seed range {text}")) };
    }
    if let Some((a, b)) = text.split_once("..") {
        let (a, b) = (num(a)?, num(b)?);
        return if a < b { Ok((a..b).collect()) } else { Err(format!("empty seed range {text}")) };
    }
    text.split(',').map(num).collect()
}
