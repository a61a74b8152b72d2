//! Scenario configuration: one TOML file per experiment, parsed strictly.
//! Unknown keys are fatal (the parser names them), so an archived config
//! is always replayable as written. Every scenario reads the common
//! sections; scenario-specific sections are ignored by the others.

use crate::error::{Error, Result};
use crate::integrator::Stepper;
use crate::kernel::KernelConfig;
use crate::velocity::Backend;
use serde::Deserialize;
use std::path::Path;

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Optional self-description; must match the subcommand when present.
    pub scenario: Option<String>,
    #[serde(default)]
    pub cloud: CloudSpec,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub backend: BackendSpec,
    #[serde(default)]
    pub stepper: StepperSpec,
    #[serde(default)]
    pub run: RunSpec,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub report: ReportSpec,
    #[serde(default)]
    pub stability: StabilitySpec,
    #[serde(default)]
    pub analyticity: AnalyticitySpec,
    #[serde(default)]
    pub picard: PicardSpec,
    #[serde(default)]
    pub hadamard: HadamardSpec,
    #[serde(default)]
    pub control: ControlSpec,
    #[serde(default)]
    pub bench: BenchSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CloudSpec {
    pub sampler: String,
    pub n: usize,
    pub seed: u64,
    pub center: [f64; 3],
    pub radius: f64,
}

impl Default for CloudSpec {
    fn default() -> Self {
        CloudSpec {
            sampler: "uniform_ball".into(),
            n: 64,
            seed: 0,
            center: [0.0; 3],
            radius: 1.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSpec {
    /// 0 selects the singular kernel.
    pub eps: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec { eps: 0.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendSpec {
    pub kind: String,
    pub theta: f64,
    pub leaf_size: usize,
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec {
            kind: "direct".into(),
            theta: 0.4,
            leaf_size: 32,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepperSpec {
    pub kind: String,
    pub dt: f64,
    pub order: usize,
}

impl Default for StepperSpec {
    fn default() -> Self {
        StepperSpec {
            kind: "rk4".into(),
            dt: 0.01,
            order: 8,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSpec {
    pub horizon: f64,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec { horizon: 1.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    pub every: usize,
    pub l3_bandwidth: Option<f64>,
    pub moduli_pairs: usize,
    pub moduli_range: [f64; 2],
    pub w1_vs_initial: bool,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            every: 0,
            l3_bandwidth: None,
            moduli_pairs: 0,
            moduli_range: [0.05, 0.5],
            w1_vs_initial: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSpec {
    /// Integrability exponent behind the reported settling-speed index
    /// mu = 1 - 3/p.
    pub p: f64,
}

impl Default for ReportSpec {
    fn default() -> Self {
        ReportSpec { p: 3.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilitySpec {
    pub perturbation: [f64; 3],
    pub moduli_pairs: usize,
}

impl Default for StabilitySpec {
    fn default() -> Self {
        StabilitySpec {
            perturbation: [1e-3, 0.0, 0.0],
            moduli_pairs: 2000,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticitySpec {
    pub order: usize,
}

impl Default for AnalyticitySpec {
    fn default() -> Self {
        AnalyticitySpec { order: 11 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardSpec {
    pub iterations: usize,
    /// Horizons for the threshold sweep; the full iteration runs at the
    /// largest one still contracting comfortably.
    pub horizons: Vec<f64>,
}

impl Default for PicardSpec {
    fn default() -> Self {
        PicardSpec {
            iterations: 4,
            horizons: vec![0.2, 0.4, 0.8, 1.6],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HadamardSpec {
    pub boundary_samples: usize,
    pub residual_tolerance: f64,
    pub drift_tolerance: f64,
    /// Cloud size for the center-velocity refinement check.
    pub center_n: usize,
    /// Blob radii (relative to the ball radius) swept for that check.
    pub center_eps: Vec<f64>,
}

impl Default for HadamardSpec {
    fn default() -> Self {
        HadamardSpec {
            boundary_samples: 256,
            residual_tolerance: 0.05,
            drift_tolerance: 0.05,
            center_n: 10_000,
            center_eps: vec![0.2, 0.1, 0.05],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlSpec {
    pub target_radius: f64,
    pub covering_radius: f64,
    pub region_centers: Vec<[f64; 3]>,
    pub region_radius: f64,
    pub absorb: bool,
    pub self_induction: bool,
    /// Two-timescale factor; 1 executes the plan as synthesized.
    pub time_scale: f64,
    pub schedule_dt: f64,
}

impl Default for ControlSpec {
    fn default() -> Self {
        ControlSpec {
            target_radius: 0.5,
            covering_radius: 0.3,
            region_centers: vec![[0.0, 0.0, 6.0]],
            region_radius: 1.0,
            absorb: true,
            self_induction: false,
            time_scale: 1.0,
            schedule_dt: 2e-4,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSpec {
    pub ns: Vec<usize>,
    pub thetas: Vec<f64>,
    pub leaf_size: usize,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            ns: vec![4000, 16000],
            thetas: vec![0.2, 0.4, 0.6],
            leaf_size: 32,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Config = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.cloud.sampler != "uniform_ball" {
            return bad(format!(
                "unknown cloud.sampler {:?}; only \"uniform_ball\" is available",
                self.cloud.sampler
            ));
        }
        if self.cloud.n == 0 {
            return bad("cloud.n must be at least 1".into());
        }
        if !(self.cloud.radius > 0.0) {
            return bad(format!("cloud.radius must be positive, got {}", self.cloud.radius));
        }
        if !(self.kernel.eps >= 0.0) || !self.kernel.eps.is_finite() {
            return bad(format!("kernel.eps must be finite and >= 0, got {}", self.kernel.eps));
        }
        match self.backend.kind.as_str() {
            "direct" => {}
            "treecode" => {
                if !(self.backend.theta > 0.0 && self.backend.theta < 1.0) {
                    return bad(format!(
                        "backend.theta must lie in (0, 1), got {}",
                        self.backend.theta
                    ));
                }
                if self.backend.leaf_size == 0 {
                    return bad("backend.leaf_size must be at least 1".into());
                }
            }
            other => {
                return bad(format!(
                    "unknown backend.kind {other:?}; expected \"direct\" or \"treecode\""
                ))
            }
        }
        match self.stepper.kind.as_str() {
            "rk4" => {}
            "taylor" => {
                if self.stepper.order < 2 {
                    return bad(format!(
                        "stepper.order must be at least 2, got {}",
                        self.stepper.order
                    ));
                }
            }
            other => {
                return bad(format!(
                    "unknown stepper.kind {other:?}; expected \"rk4\" or \"taylor\""
                ))
            }
        }
        if !(self.stepper.dt > 0.0) {
            return bad(format!("stepper.dt must be positive, got {}", self.stepper.dt));
        }
        if !(self.run.horizon > 0.0) {
            return bad(format!("run.horizon must be positive, got {}", self.run.horizon));
        }
        if let Some(h) = self.diagnostics.l3_bandwidth {
            if !(h > 0.0) {
                return bad(format!("diagnostics.l3_bandwidth must be positive, got {h}"));
            }
        }
        if !(self.diagnostics.moduli_range[0] > 0.0
            && self.diagnostics.moduli_range[1] > self.diagnostics.moduli_range[0])
        {
            return bad(format!(
                "diagnostics.moduli_range must be increasing and positive, got {:?}",
                self.diagnostics.moduli_range
            ));
        }
        if !(self.report.p > 0.0) {
            return bad(format!("report.p must be positive, got {}", self.report.p));
        }
        if self.analyticity.order < 4 {
            return bad(format!(
                "analyticity.order must be at least 4, got {}",
                self.analyticity.order
            ));
        }
        if self.picard.iterations < 2 {
            return bad(format!(
                "picard.iterations must be at least 2, got {}",
                self.picard.iterations
            ));
        }
        if self.picard.horizons.is_empty() || self.picard.horizons.iter().any(|&t| !(t > 0.0)) {
            return bad(format!(
                "picard.horizons must be nonempty and positive, got {:?}",
                self.picard.horizons
            ));
        }
        if self.hadamard.boundary_samples < 8 {
            return bad("hadamard.boundary_samples must be at least 8".into());
        }
        if self.hadamard.center_eps.is_empty()
            || self.hadamard.center_eps.iter().any(|&e| !(e > 0.0))
        {
            return bad(format!(
                "hadamard.center_eps must be nonempty and positive, got {:?}",
                self.hadamard.center_eps
            ));
        }
        for (name, v) in [
            ("control.target_radius", self.control.target_radius),
            ("control.covering_radius", self.control.covering_radius),
            ("control.region_radius", self.control.region_radius),
            ("control.time_scale", self.control.time_scale),
            ("control.schedule_dt", self.control.schedule_dt),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.bench.ns.is_empty() || self.bench.ns.iter().any(|&n| n < 2) {
            return bad(format!("bench.ns must be nonempty sizes >= 2, got {:?}", self.bench.ns));
        }
        if self.bench.thetas.is_empty()
            || self.bench.thetas.iter().any(|&t| !(t > 0.0 && t < 1.0))
        {
            return bad(format!(
                "bench.thetas must be nonempty values in (0, 1), got {:?}",
                self.bench.thetas
            ));
        }
        Ok(())
    }

    /// Replace the sampling seed (the `--seed` override).
    pub fn with_seed(mut self, seed: Option<u64>) -> Config {
        if let Some(s) = seed {
            self.cloud.seed = s;
        }
        self
    }

    pub fn kernel_config(&self) -> Result<KernelConfig> {
        if self.kernel.eps == 0.0 {
            Ok(KernelConfig::singular())
        } else {
            KernelConfig::regularized(self.kernel.eps)
        }
    }

    pub fn backend_config(&self) -> Backend {
        match self.backend.kind.as_str() {
            "treecode" => Backend::Treecode {
                theta: self.backend.theta,
                leaf_size: self.backend.leaf_size,
            },
            _ => Backend::Direct,
        }
    }

    pub fn stepper_config(&self) -> Stepper {
        match self.stepper.kind.as_str() {
            "taylor" => Stepper::Taylor {
                order: self.stepper.order,
            },
            _ => Stepper::Rk4,
        }
    }
}
