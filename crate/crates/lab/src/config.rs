//! The run configuration: one TOML file holding every scientific input.
//!
//! Relative input paths (`experiment.store`) resolve against the directory
//! of the config file; the checkpoint path resolves against the output
//! directory, where `train` writes it.

use std::path::{Path, PathBuf};

use icgps_core::flow::FlowShape;
use icgps_core::icgps::IcgpsConfig;
use icgps_core::rng::{derive_seed, tag_hash};
use icgps_core::train::{BehaviorPolicy, TrainConfig};
use icgps_core::{CostParams, DemandModel, TaskPrior};
use serde::{Deserialize, Serialize};

use crate::error::{ConfigContext, LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random stream is derived from it.
    #[serde(default)]
    pub seed: u64,
    /// Demand and order cap `B`. Defaults to the prior's high quantile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    /// Per-unit overage cost `h`; the underage cost follows from each service level.
    #[serde(default = "one")]
    pub overage_cost: f64,
    /// Output directory, overridden by `--out`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default = "default_checkpoint")]
    pub checkpoint: PathBuf,
    pub prior: TaskPrior,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub icgps: IcgpsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentConfig>,
}

fn one() -> f64 {
    1.0
}

fn default_checkpoint() -> PathBuf {
    PathBuf::from("model.ckpt")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    pub bins: usize,
    pub latent_bound: f64,
}

impl Default for FlowSection {
    fn default() -> Self {
        FlowSection {
            bins: 8,
            latent_bound: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub episodes: usize,
    pub horizon: usize,
    pub behavior: BehaviorPolicy,
    /// Also write the generated corpus as CSV next to the checkpoint.
    pub write_csv: bool,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            episodes: 200,
            horizon: 600,
            behavior: BehaviorPolicy::default(),
            write_csv: false,
        }
    }
}

/// Shape and Gamma prior of a conjugate Weibull Thompson sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaHyper {
    pub shape: f64,
    pub rate: f64,
}

/// A reference policy entry in an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaselineSpec {
    /// Conjugate TS with known Weibull shape and a Gamma prior on the rate.
    TsWeibull { name: String, shape: f64, prior: GammaHyper },
    /// Conjugate TS whose rate prior (and shape, unless fixed) is fitted to
    /// draws from the training prior.
    TsWeibullFit {
        name: String,
        #[serde(default)]
        shape: Option<f64>,
        #[serde(default = "fit_tasks")]
        tasks: usize,
        #[serde(default = "fit_draws")]
        draws: usize,
    },
    MyopicMle { name: String, shape: f64 },
    Ucb {
        name: String,
        shape: f64,
        #[serde(default = "ucb_level")]
        level: f64,
    },
    Saa { name: String },
    KaplanMeier { name: String },
}

fn fit_tasks() -> usize {
    200
}

fn fit_draws() -> usize {
    500
}

fn ucb_level() -> f64 {
    0.05
}

impl BaselineSpec {
    pub fn name(&self) -> &str {
        match self {
            BaselineSpec::TsWeibull { name, .. }
            | BaselineSpec::TsWeibullFit { name, .. }
            | BaselineSpec::MyopicMle { name, .. }
            | BaselineSpec::Ucb { name, .. }
            | BaselineSpec::Saa { name }
            | BaselineSpec::KaplanMeier { name } => name,
        }
    }
}

/// Trials against one fixed test task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegretSpec {
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub horizon: usize,
    pub gammas: Vec<f64>,
    pub task: DemandModel,
    #[serde(default = "icgps_name")]
    pub icgps_name: String,
    #[serde(default)]
    pub baselines: Vec<BaselineSpec>,
}

/// Offline-to-online sweep: one trained model per sweep value, each
/// scored by its held-out Δ̂_obs and its Bayesian regret on prior-drawn tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub horizon: usize,
    pub gammas: Vec<f64>,
    /// Corpus sizes (data sweep) or hidden widths (capacity sweep).
    pub values: Vec<usize>,
    /// Held-out episodes for Δ̂_obs, shared by every sweep point.
    #[serde(default = "eval_episodes")]
    pub eval_episodes: usize,
}

/// Replay of logged episodes from an ingested store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSpec {
    pub store: PathBuf,
    pub gamma: f64,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default = "icgps_name")]
    pub icgps_name: String,
    #[serde(default)]
    pub baselines: Vec<BaselineSpec>,
}

fn default_trials() -> usize {
    20
}

fn eval_episodes() -> usize {
    50
}

fn default_seeds() -> usize {
    5
}

fn icgps_name() -> String {
    "icgps".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExperimentConfig {
    Q1(RegretSpec),
    Q2Data(SweepSpec),
    Q2Capacity(SweepSpec),
    Q3Shift(RegretSpec),
    Q3Prior(RegretSpec),
    IngestEval(IngestSpec),
}

impl ExperimentConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentConfig::Q1(_) => "q1",
            ExperimentConfig::Q2Data(_) => "q2-data",
            ExperimentConfig::Q2Capacity(_) => "q2-capacity",
            ExperimentConfig::Q3Shift(_) => "q3-shift",
            ExperimentConfig::Q3Prior(_) => "q3-prior",
            ExperimentConfig::IngestEval(_) => "ingest-eval",
        }
    }

    /// Whether `run` needs a checkpoint produced by `train`.
    pub fn needs_checkpoint(&self) -> bool {
        !matches!(self, ExperimentConfig::Q2Data(_) | ExperimentConfig::Q2Capacity(_))
    }
}

/// Parse a config from TOML text, reporting the key path of any schema error.
pub fn parse(text: &str) -> Result<RunConfig> {
    let de = toml::Deserializer::new(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let mut key = e.path().to_string();
        let msg = e.inner().message().trim().to_string();
        if let Some(field) = backticked(&msg, "missing field `").or_else(|| backticked(&msg, "unknown field `")) {
            if key == "." {
                key = field;
            } else if key.rsplit('.').next() != Some(field.as_str()) {
                key = format!("{key}.{field}");
            }
        }
        LabError::config(key, msg)
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn backticked(msg: &str, prefix: &str) -> Option<String> {
    let rest = msg.strip_prefix(prefix)?;
    Some(rest[..rest.find('`')?].to_string())
}

pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    parse(&text)
}

fn check_gammas(key: &str, gammas: &[f64]) -> Result<()> {
    if gammas.is_empty() {
        return Err(LabError::config(key, "needs at least one service level"));
    }
    for g in gammas {
        if !(*g > 0.0 && *g < 1.0) {
            return Err(LabError::config(key, format!("service level {g} outside (0, 1)")));
        }
    }
    Ok(())
}

fn check_baselines(key: &str, icgps: &str, list: &[BaselineSpec]) -> Result<()> {
    let mut names = vec![icgps];
    for b in list {
        if names.contains(&b.name()) {
            return Err(LabError::config(key, format!("duplicate policy name `{}`", b.name())));
        }
        names.push(b.name());
        let ok = match b {
            BaselineSpec::TsWeibull { shape, prior, .. } => *shape > 0.0 && prior.shape > 0.0 && prior.rate > 0.0,
            BaselineSpec::TsWeibullFit { tasks, draws, shape, .. } => {
                *tasks >= 2 && *draws >= 2 && shape.is_none_or(|k| k > 0.0 && k.is_finite())
            }
            BaselineSpec::MyopicMle { shape, .. } => *shape > 0.0,
            BaselineSpec::Ucb { shape, level, .. } => *shape > 0.0 && *level > 0.0 && *level < 1.0,
            BaselineSpec::Saa { .. } | BaselineSpec::KaplanMeier { .. } => true,
        };
        if !ok {
            return Err(LabError::config(key, format!("invalid parameters for `{}`", b.name())));
        }
    }
    Ok(())
}

fn check_regret(key: &str, s: &RegretSpec) -> Result<()> {
    if s.trials < 2 || s.horizon == 0 {
        return Err(LabError::config(key, "needs trials ≥ 2 and horizon ≥ 1"));
    }
    check_gammas(&format!("{key}.gammas"), &s.gammas)?;
    s.task.validate().at(&format!("{key}.task"))?;
    check_baselines(&format!("{key}.baselines"), &s.icgps_name, &s.baselines)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.prior.validate().at("prior")?;
        if let Some(b) = self.bound {
            if !(b > 0.0 && b.is_finite()) {
                return Err(LabError::config("bound", "must be positive and finite"));
            }
        }
        if !(self.overage_cost > 0.0 && self.overage_cost.is_finite()) {
            return Err(LabError::config("overage_cost", "must be positive and finite"));
        }
        self.flow_shape()?;
        if self.corpus.episodes == 0 || self.corpus.horizon == 0 {
            return Err(LabError::config("corpus", "episodes and horizon must be positive"));
        }
        self.corpus.behavior.validate().at("corpus.behavior")?;
        self.train.validate().at("train")?;
        self.icgps.validate().at("icgps")?;
        match &self.experiment {
            None => Ok(()),
            Some(ExperimentConfig::Q1(s) | ExperimentConfig::Q3Shift(s) | ExperimentConfig::Q3Prior(s)) => {
                check_regret("experiment", s)
            }
            Some(ExperimentConfig::Q2Data(s) | ExperimentConfig::Q2Capacity(s)) => {
                if s.trials < 2 || s.horizon == 0 || s.eval_episodes == 0 {
                    return Err(LabError::config("experiment", "needs trials ≥ 2, horizon ≥ 1, eval_episodes ≥ 1"));
                }
                if s.values.len() < 2 || s.values.contains(&0) {
                    return Err(LabError::config("experiment.values", "needs at least two positive sweep values"));
                }
                check_gammas("experiment.gammas", &s.gammas)
            }
            Some(ExperimentConfig::IngestEval(s)) => {
                check_gammas("experiment.gamma", &[s.gamma])?;
                if s.seeds == 0 {
                    return Err(LabError::config("experiment.seeds", "must be positive"));
                }
                check_baselines("experiment.baselines", &s.icgps_name, &s.baselines)
            }
        }
    }

    /// The resolved demand cap.
    pub fn bound(&self) -> f64 {
        self.bound.unwrap_or_else(|| self.prior.default_bound())
    }

    pub fn flow_shape(&self) -> Result<FlowShape> {
        FlowShape::new(self.flow.bins, self.flow.latent_bound, self.bound()).at("flow")
    }

    pub fn costs(&self, gamma: f64) -> Result<CostParams> {
        let b = self.overage_cost * gamma / (1.0 - gamma);
        CostParams::new(self.overage_cost, b, self.bound()).at("overage_cost")
    }

    /// Seed for one named purpose, derived from the master seed.
    pub fn derived_seed(&self, tag: &str, parts: &[u64]) -> u64 {
        let mut all = Vec::with_capacity(parts.len() + 1);
        all.push(tag_hash(tag));
        all.extend_from_slice(parts);
        derive_seed(self.seed, &all)
    }

    /// Training settings with the seed tied to the master seed.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = self.derived_seed("train", &[self.train.seed]);
        t
    }

    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn checkpoint_path(&self, out: &Path) -> PathBuf {
        if self.checkpoint.is_absolute() {
            self.checkpoint.clone()
        } else {
            out.join(&self.checkpoint)
        }
    }

    /// The config as TOML, with the resolved bound filled in.
    pub fn resolved_toml(&self) -> Result<String> {
        let mut c = self.clone();
        c.bound = Some(self.bound());
        toml::to_string(&c).map_err(|e| LabError::config("", format!("cannot echo config: {e}")))
    }
}

/// Resolve a path given relative to the config file.
pub fn relative_to(config_path: Option<&Path>, p: &Path) -> PathBuf {
    match config_path.and_then(Path::parent) {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3
[[prior.components]]
model = { family = "weibull", rate = { gamma = { shape = 4.0, rate = 8.0 } }, shape = { fixed = 1.5 } }
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.flow.bins, 8);
        assert_eq!(c.train.batch_size, 2048);
        assert!((c.bound() - 7.3838).abs() < 1e-3, "{}", c.bound());
    }

    #[test]
    fn missing_prior_names_the_key() {
        match parse("seed = 1\n") {
            Err(LabError::Config { key, .. }) => assert_eq!(key, "prior"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected_with_path() {
        let text = format!("{MINIMAL}\n[train]\nepochz = 3\n");
        match parse(&text) {
            Err(LabError::Config { key, .. }) => assert_eq!(key, "train.epochz"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn experiment_tag_and_round_trip() {
        let text = format!(
            "{MINIMAL}\n[experiment]\nkind = \"q1\"\nhorizon = 50\ngammas = [0.9]\ntask = {{ family = \"weibull\", rate = 0.5, shape = 1.5 }}\n\
             [[experiment.baselines]]\nkind = \"ucb\"\nname = \"ucb\"\nshape = 1.5\n"
        );
        let c = parse(&text).unwrap();
        let Some(ExperimentConfig::Q1(s)) = &c.experiment else { panic!() };
        assert_eq!(s.trials, 20);
        assert_eq!(s.baselines[0].name(), "ucb");
        let again = parse(&c.resolved_toml().unwrap()).unwrap();
        assert_eq!(again.experiment, c.experiment);
        assert_eq!(again.bound, Some(c.bound()));
    }

    #[test]
    fn bad_service_level_is_a_config_error() {
        let text = format!(
            "{MINIMAL}\n[experiment]\nkind = \"q1\"\nhorizon = 50\ngammas = [1.5]\ntask = {{ family = \"weibull\", rate = 0.5, shape = 1.5 }}\n"
        );
        match parse(&text) {
            Err(LabError::Config { key, .. }) => assert_eq!(key, "experiment.gammas"),
            other => panic!("{other:?}"),
        }
    }
}
