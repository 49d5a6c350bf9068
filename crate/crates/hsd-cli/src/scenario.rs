//! Declarative scenario files: a TOML document with a `model` name, a
//! `[sim]` section, and flat `[model_params]` / `[command_params]`
//! tables. Parsing is strict: unknown keys are rejected with the parser's
//! line-anchored message.

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use hsd_core::examples::{
    build_constant_kernel, build_logistic, build_lqg, build_pollution, ConstantKernelParams,
    LogisticParams, LqgCost, LqgParams, PollutionParams, WelfareSpec,
};
use hsd_core::model::{BoundSpec, HybridModel, Regime};
use hsd_core::SimConfig;

pub const DEFAULT_MASTER_SEED: u64 = hsd_core::verify::DEFAULT_MASTER_SEED;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    /// One of `logistic`, `pollution`, `lqg`, `custom-constant`.
    pub model: String,
    /// Optional command name; the CLI subcommand must agree when both are
    /// given.
    pub command: Option<String>,
    pub output_dir: Option<String>,
    pub sim: SimSection,
    #[serde(default)]
    pub model_params: ModelParams,
    #[serde(default)]
    pub command_params: CommandParams,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub horizon_t: f64,
    pub master_seed: Option<u64>,
    pub max_jumps: Option<u32>,
    pub explosion_threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Initial continuous state (all models; the initial segment is the
    /// constant function at this value).
    pub initial: Option<Vec<f64>>,
    pub initial_regime: Option<u32>,

    // custom-constant: per-regime affine coefficients and a square rate
    // matrix over the listed regimes.
    pub drift_lin: Option<Vec<f64>>,
    pub drift_const: Option<Vec<f64>>,
    pub noise_lin: Option<Vec<f64>>,
    pub noise_const: Option<Vec<f64>>,
    pub rates: Option<Vec<Vec<f64>>>,

    // logistic: per-regime tables (clamped to the last entry) and
    // constant history weights over a window of length delay_r.
    pub growth: Option<Vec<f64>>,
    pub competition: Option<Vec<f64>>,
    pub sigma: Option<Vec<f64>>,
    pub beta: Option<f64>,
    pub delta: Option<f64>,
    pub delay_r: Option<f64>,
    pub log_transformed: Option<bool>,

    // pollution: decay/policy tables, noise `base + slope |x|` capped,
    // consumption cap and utility exponent; switching via `rates`.
    pub decay: Option<Vec<f64>>,
    pub policy: Option<Vec<f64>>,
    pub consumption_cap: Option<f64>,
    pub utility_kappa: Option<f64>,
    pub noise_base: Option<f64>,
    pub noise_slope: Option<f64>,
    pub noise_cap: Option<f64>,

    // lqg: per-regime row-major matrices; switching via `rates`.
    pub n1: Option<usize>,
    pub n2: Option<usize>,
    pub d: Option<usize>,
    pub a_mats: Option<Vec<Vec<f64>>>,
    pub b_mats: Option<Vec<Vec<f64>>>,
    pub sigma_mats: Option<Vec<Vec<f64>>>,
    pub state_cost: Option<Vec<Vec<f64>>>,
    pub control_cost: Option<Vec<Vec<f64>>>,
    pub terminal_cost: Option<Vec<f64>>,
    pub gain: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandParams {
    pub n_paths: Option<u64>,
    pub n: Option<u64>,
    /// Jump-pattern targets for verify-measure; empty means "no jumps".
    pub pattern: Option<Vec<u32>>,
    pub radii: Option<Vec<f64>>,
    pub deltas: Option<Vec<f64>>,
    pub target_regime: Option<u32>,
    pub test_function: Option<String>,
    /// Half-space threshold for the strong continuity probe.
    pub threshold: Option<f64>,
}

/// Parse a scenario document from a string. Errors carry the TOML
/// parser's line and column.
pub fn parse_scenario_str(text: &str) -> Result<ScenarioFile> {
    let scenario: ScenarioFile = toml::from_str(text).map_err(|e| anyhow!("{e}"))?;
    validate_scenario(&scenario)?;
    Ok(scenario)
}

pub fn load_scenario(path: &std::path::Path) -> Result<ScenarioFile> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read scenario file {}", path.display()))?;
    parse_scenario_str(&text).with_context(|| format!("in scenario file {}", path.display()))
}

pub const COMMANDS: &[&str] = &[
    "simulate",
    "verify-measure",
    "probe-intensity",
    "probe-feller",
    "probe-strong-feller",
    "dynkin",
    "evaluate-cost",
    "validate",
];

fn validate_scenario(s: &ScenarioFile) -> Result<()> {
    match s.model.as_str() {
        "logistic" | "pollution" | "lqg" | "custom-constant" => {}
        other => bail!(
            "unknown model {other:?}; expected one of logistic, pollution, lqg, custom-constant"
        ),
    }
    if let Some(cmd) = &s.command {
        if !COMMANDS.contains(&cmd.as_str()) {
            bail!("unknown command {cmd:?}; expected one of {}", COMMANDS.join(", "));
        }
    }
    if !(s.sim.dt > 0.0) {
        bail!("sim.dt must be positive");
    }
    if !(s.sim.horizon_t >= s.sim.dt) {
        bail!("sim.horizon_t must be at least sim.dt");
    }
    if let Some(r) = &s.command_params.radii {
        if r.windows(2).any(|w| w[1] >= w[0]) || r.iter().any(|&x| x <= 0.0) {
            bail!("command_params.radii must be a decreasing list of positive reals");
        }
    }
    if let Some(d) = &s.command_params.deltas {
        if d.iter().any(|&x| x <= 0.0) {
            bail!("command_params.deltas must be positive");
        }
    }
    Ok(())
}

/// Everything a command needs: the model, the evaluator hooks that came
/// with it, and the initial data.
pub struct BuiltScenario {
    pub model: HybridModel,
    pub kind: ModelKind,
    pub x0: Vec<f64>,
    pub i0: Regime,
    pub delay_r: f64,
}

pub enum ModelKind {
    ConstantKernel,
    Logistic,
    Pollution(WelfareSpec),
    Lqg(LqgCost),
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::ConstantKernel => "custom-constant",
            ModelKind::Logistic => "logistic",
            ModelKind::Pollution(_) => "pollution",
            ModelKind::Lqg(_) => "lqg",
        }
    }
}

fn regime_table(v: &Option<Vec<f64>>, default: f64) -> Vec<f64> {
    match v {
        Some(t) if !t.is_empty() => t.clone(),
        _ => vec![default],
    }
}

fn lookup(table: &[f64]) -> impl Fn(Regime) -> f64 + Send + Sync {
    let table = table.to_vec();
    move |i: Regime| {
        let idx = (i.get() as usize - 1).min(table.len() - 1);
        table[idx]
    }
}

fn kernel_from_rates(
    rates: &Option<Vec<Vec<f64>>>,
) -> Result<(
    Box<dyn Fn(&hsd_core::Segment, Regime, Regime) -> f64 + Send + Sync>,
    Box<dyn Fn(&hsd_core::Segment, Regime) -> f64 + Send + Sync>,
    BoundSpec,
)> {
    let rates = rates
        .clone()
        .ok_or_else(|| anyhow!("model_params.rates (a square rate matrix) is required"))?;
    let k = rates.len();
    if k == 0 || rates.iter().any(|row| row.len() != k) {
        bail!("model_params.rates must be a nonempty square matrix");
    }
    let totals: Vec<f64> = rates
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, &q)| q).sum()
        })
        .collect();
    let m = totals.iter().cloned().fold(0.0, f64::max);
    let rates2 = rates.clone();
    let intensity = Box::new(move |_: &hsd_core::Segment, i: Regime, j: Regime| {
        let (i, j) = (i.get() as usize - 1, j.get() as usize - 1);
        if i < rates2.len() && j < rates2.len() {
            rates2[i][j]
        } else {
            0.0
        }
    });
    let total = Box::new(move |_: &hsd_core::Segment, i: Regime| {
        let i = i.get() as usize - 1;
        if i < totals.len() {
            totals[i]
        } else {
            0.0
        }
    });
    Ok((intensity, total, BoundSpec::Global { m }))
}

/// Construct the model named by the scenario.
pub fn build_scenario(s: &ScenarioFile) -> Result<BuiltScenario> {
    let i0 = Regime::new(s.model_params.initial_regime.unwrap_or(1))
        .map_err(|e| anyhow!("initial_regime: {e}"))?;
    match s.model.as_str() {
        "custom-constant" => {
            let params = ConstantKernelParams {
                drift_lin: regime_table(&s.model_params.drift_lin, 0.0),
                drift_const: regime_table(&s.model_params.drift_const, 0.0),
                noise_lin: regime_table(&s.model_params.noise_lin, 0.0),
                noise_const: regime_table(&s.model_params.noise_const, 0.0),
                rates: s
                    .model_params
                    .rates
                    .clone()
                    .ok_or_else(|| anyhow!("model_params.rates is required"))?,
            };
            let model = build_constant_kernel(params)?;
            let x0 = s.model_params.initial.clone().unwrap_or_else(|| vec![1.0]);
            if x0.len() != 1 {
                bail!("custom-constant is scalar: initial must have one entry");
            }
            Ok(BuiltScenario { model, kind: ModelKind::ConstantKernel, x0, i0, delay_r: 0.0 })
        }
        "logistic" => {
            let beta = s.model_params.beta.unwrap_or(1.0);
            let delta = s.model_params.delta.unwrap_or(0.5);
            let delay_r = s.model_params.delay_r.unwrap_or(0.1);
            let growth = regime_table(&s.model_params.growth, 0.5);
            let competition = regime_table(&s.model_params.competition, 0.3);
            let sigma = regime_table(&s.model_params.sigma, 0.3);
            let p = LogisticParams {
                growth: Box::new(lookup(&growth)),
                competition: Box::new(lookup(&competition)),
                noise: Box::new(lookup(&sigma)),
                beta_weight: Box::new(move |_, _| beta),
                delta_weight: Box::new(move |_, _| delta),
                beta_weight_sup: beta,
                delta_weight_sup: delta,
                delay_r,
            };
            let log_transformed = s.model_params.log_transformed.unwrap_or(true);
            let model = build_logistic(p, log_transformed)?;
            let x0 = s
                .model_params
                .initial
                .clone()
                .unwrap_or_else(|| vec![if log_transformed { 0.0 } else { 1.0 }]);
            if x0.len() != 1 {
                bail!("logistic is scalar: initial must have one entry");
            }
            Ok(BuiltScenario { model, kind: ModelKind::Logistic, x0, i0, delay_r })
        }
        "pollution" => {
            let (intensity, total, bound) = kernel_from_rates(&s.model_params.rates)?;
            let decay = regime_table(&s.model_params.decay, 1.0);
            let policy = regime_table(&s.model_params.policy, 0.5);
            let cap = s.model_params.consumption_cap.unwrap_or(2.0);
            let base = s.model_params.noise_base.unwrap_or(0.2);
            let slope = s.model_params.noise_slope.unwrap_or(0.2);
            let noise_cap = s.model_params.noise_cap.unwrap_or(2.0);
            let policy_fn = lookup(&policy);
            let p = PollutionParams {
                decay: Box::new(lookup(&decay)),
                noise: Box::new(move |x: f64, _| (base + slope * x.abs()).min(noise_cap)),
                policy: Box::new(move |_, i| policy_fn(i)),
                consumption_cap: cap,
                utility_kappa: s.model_params.utility_kappa.unwrap_or(0.5),
                disutility: Box::new(|x| x * x),
                kernel: intensity,
                kernel_total: total,
                bound,
                delay_r: 0.0,
            };
            let (model, welfare) = build_pollution(p)?;
            let x0 = s.model_params.initial.clone().unwrap_or_else(|| vec![0.0]);
            if x0.len() != 1 {
                bail!("pollution is scalar: initial must have one entry");
            }
            Ok(BuiltScenario { model, kind: ModelKind::Pollution(welfare), x0, i0, delay_r: 0.0 })
        }
        "lqg" => {
            let (intensity, total, bound) = kernel_from_rates(&s.model_params.rates)?;
            let n1 = s.model_params.n1.unwrap_or(1);
            let n2 = s.model_params.n2.unwrap_or(1);
            let d = s.model_params.d.unwrap_or(1);
            let p = LqgParams {
                n1,
                n2,
                d,
                a_mats: s.model_params.a_mats.clone().unwrap_or_else(|| vec![vec![-1.0]]),
                b_mats: s.model_params.b_mats.clone().unwrap_or_else(|| vec![vec![0.0]]),
                sigma_mats: s
                    .model_params
                    .sigma_mats
                    .clone()
                    .unwrap_or_else(|| vec![vec![0.2]]),
                state_cost: s.model_params.state_cost.clone().unwrap_or_else(|| vec![vec![1.0]]),
                control_cost: s
                    .model_params
                    .control_cost
                    .clone()
                    .unwrap_or_else(|| vec![vec![1.0]]),
                terminal_cost: s.model_params.terminal_cost.clone().unwrap_or_else(|| vec![0.0]),
                gain: s.model_params.gain.clone().unwrap_or_else(|| vec![vec![0.0]]),
                kernel: intensity,
                kernel_total: total,
                bound,
            };
            let x0 = s.model_params.initial.clone().unwrap_or_else(|| vec![1.0; n1]);
            if x0.len() != n1 {
                bail!("lqg: initial must have n1 = {n1} entries");
            }
            let (model, cost) = build_lqg(p)?;
            Ok(BuiltScenario { model, kind: ModelKind::Lqg(cost), x0, i0, delay_r: 0.0 })
        }
        other => bail!("unknown model {other:?}"),
    }
}

impl ScenarioFile {
    /// Effective master seed: CLI flag beats the environment beats the
    /// file beats the default.
    pub fn resolve_seed(&self, cli_seed: Option<u64>) -> u64 {
        cli_seed
            .or_else(|| std::env::var("HSD_SEED").ok().and_then(|v| v.parse().ok()))
            .or(self.sim.master_seed)
            .unwrap_or(DEFAULT_MASTER_SEED)
    }

    pub fn sim_config(&self, master_seed: u64) -> Result<SimConfig> {
        let mut cfg = SimConfig::new(self.sim.dt, self.sim.horizon_t, master_seed)?;
        if let Some(mj) = self.sim.max_jumps {
            cfg = cfg.with_max_jumps(mj);
        }
        if let Some(th) = self.sim.explosion_threshold {
            cfg = cfg.with_explosion_threshold(th);
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
model = "custom-constant"

[sim]
dt = 0.01
horizon_t = 1.0

[model_params]
rates = [[0.0, 1.0], [1.0, 0.0]]
"#;

    #[test]
    fn minimal_scenario_parses_and_builds() {
        let sc = parse_scenario_str(MINIMAL).unwrap();
        assert_eq!(sc.model, "custom-constant");
        let built = build_scenario(&sc).unwrap();
        assert_eq!(built.kind.name(), "custom-constant");
        assert_eq!(built.x0, vec![1.0]);
    }

    #[test]
    fn unknown_key_is_rejected_with_location() {
        let bad = MINIMAL.replace("[model_params]", "[model_params]\nbogus_key = 3");
        let err = parse_scenario_str(&bad).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("bogus_key"), "{msg}");
    }

    #[test]
    fn bad_command_is_rejected() {
        let bad = MINIMAL.replace("model = \"custom-constant\"",
            "model = \"custom-constant\"\ncommand = \"explode\"");
        assert!(parse_scenario_str(&bad).is_err());
    }

    #[test]
    fn seed_resolution_order() {
        let sc = parse_scenario_str(MINIMAL).unwrap();
        assert_eq!(sc.resolve_seed(Some(7)), 7);
        // no env set in tests: falls through to default
        assert_eq!(sc.resolve_seed(None), DEFAULT_MASTER_SEED);
    }

    #[test]
    fn increasing_radii_rejected() {
        let bad = format!("{MINIMAL}\n[command_params]\nradii = [0.1, 0.2]\n");
        assert!(parse_scenario_str(&bad).is_err());
    }
}
