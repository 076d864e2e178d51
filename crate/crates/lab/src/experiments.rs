//! Experiment presets: Q1 (well-specified Weibull), Q2 sweeps (offline fit
//! against online regret), Q3 (family shift and prior mismatch), and cost
//! evaluation on an ingested store.
//!
//! Trials run in parallel; each trial's randomness is derived from
//! `(master seed, trial)` only, so every service level and every sweep
//! point sees the same tasks and demand streams.

use icgps_core::baselines::{BaselineKind, BaselinePolicy};
use icgps_core::flow::CompletionModel;
use icgps_core::harness::{aggregate, evaluate_episodes, run_trial, spearman, CostRow, Policy, RegretCurve, TrialResult};
use icgps_core::icgps::{FlowKernel, IcgpsConfig, IcgpsPolicy};
use icgps_core::rng::stream;
use icgps_core::train::{delta_obs_hat, generate_corpus, train, DeltaObs, Episode, TrainReport};
use icgps_core::{math, DemandModel, TaskPrior};
use rayon::prelude::*;

use crate::config::{BaselineSpec, ExperimentConfig, GammaHyper, IngestSpec, RegretSpec, RunConfig, SweepSpec};
use crate::error::{ConfigContext, LabError, Result};
use crate::store::Store;

/// One row of the diagnostics table.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub name: String,
    pub statistic: f64,
    pub threshold: String,
    pub pass: bool,
}

impl Diagnostic {
    pub fn new(name: impl Into<String>, statistic: f64, threshold: impl Into<String>, pass: bool) -> Self {
        Diagnostic {
            name: name.into(),
            statistic,
            threshold: threshold.into(),
            pass,
        }
    }
}

/// All trials at one service level, ordered by trial then policy.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretRun {
    pub gamma: f64,
    pub policies: Vec<String>,
    pub results: Vec<TrialResult>,
}

impl RegretRun {
    pub fn of(&self, policy: &str) -> Vec<&TrialResult> {
        self.results.iter().filter(|r| r.policy == policy).collect()
    }

    pub fn curve(&self, policy: &str) -> Result<RegretCurve> {
        Ok(aggregate(&self.of(policy))?)
    }
}

/// One sweep point of a Q2 experiment at one service level.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: usize,
    pub gamma: f64,
    pub delta_obs: DeltaObs,
    pub breg: f64,
    pub breg_se: f64,
}

/// Mean per-step cost of one policy on one group for one replay seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeededCost {
    pub seed: usize,
    pub row: CostRow,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub experiment: String,
    pub runs: Vec<RegretRun>,
    pub sweep: Vec<SweepPoint>,
    pub costs: Vec<SeededCost>,
    pub diagnostics: Vec<Diagnostic>,
    /// Models trained inside the experiment (Q2), with their reports.
    pub models: Vec<(String, CompletionModel, TrainReport)>,
}

/// Generate the offline corpus and train the completion model.
pub fn train_from_config(cfg: &RunConfig) -> Result<(Vec<Episode>, CompletionModel, TrainReport)> {
    let corpus = corpus(cfg, &cfg.prior, cfg.corpus.episodes, "corpus")?;
    let (model, report) = train(&corpus, cfg.flow_shape()?, &cfg.train_config())?;
    Ok((corpus, model, report))
}

fn corpus(cfg: &RunConfig, prior: &TaskPrior, n: usize, tag: &str) -> Result<Vec<Episode>> {
    let costs = cfg.costs(0.5)?;
    Ok(generate_corpus(
        prior,
        &cfg.corpus.behavior,
        n,
        cfg.corpus.horizon,
        &costs,
        cfg.derived_seed(tag, &[]),
    )?)
}

/// Fitted conjugate-TS prior: shape by pooled profile likelihood (or
/// `fixed_shape`), rate prior by moment matching the per-task rate
/// estimates at that shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeibullFit {
    pub shape: f64,
    pub prior: GammaHyper,
}

pub fn fit_weibull_prior(
    prior: &TaskPrior,
    fixed_shape: Option<f64>,
    tasks: usize,
    draws: usize,
    bound: f64,
    seed: u64,
) -> Result<WeibullFit> {
    if tasks < 2 || draws < 2 {
        return Err(LabError::config("baselines", "fitting needs at least 2 tasks and 2 draws"));
    }
    let logs: Vec<Vec<f64>> = (0..tasks)
        .map(|i| {
            let mut rng = stream(seed, "fit", i as u64, 0, 0);
            let task = prior.sample(&mut rng);
            (0..draws)
                .map(|_| math::ln(task.sample(&mut rng, bound).max(1e-12)))
                .collect()
        })
        .collect();
    let n = draws as f64;
    let rate = |ls: &[f64], k: f64| n / ls.iter().map(|l| math::exp(k * l)).sum::<f64>();
    let profile = |lk: f64| {
        let k = math::exp(lk);
        logs.iter()
            .map(|ls| n * math::ln(k) + (k - 1.0) * ls.iter().sum::<f64>() + n * math::ln(rate(ls, k)) - n)
            .sum::<f64>()
    };
    let k = match fixed_shape {
        Some(k) => k,
        None => math::exp(golden_max(profile, math::ln(0.05), math::ln(20.0))),
    };
    let rates: Vec<f64> = logs.iter().map(|ls| rate(ls, k)).collect();
    let m = rates.iter().sum::<f64>() / rates.len() as f64;
    let v = rates.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / (rates.len() as f64 - 1.0);
    Ok(WeibullFit {
        shape: k,
        prior: GammaHyper {
            shape: m * m / v,
            rate: m / v,
        },
    })
}

/// Maximizer of a unimodal function on `[a, b]` by golden-section search.
fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-7 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Baselines with fitted priors resolved once per experiment.
#[derive(Debug, Clone)]
struct Roster {
    entries: Vec<(String, BaselineKind, f64)>,
}

impl Roster {
    fn new(cfg: &RunConfig, specs: &[BaselineSpec]) -> Result<Self> {
        let mut entries = Vec::with_capacity(specs.len());
        for s in specs {
            let (kind, k) = match s {
                BaselineSpec::TsWeibull { shape, prior, .. } => (
                    BaselineKind::TsWeibull {
                        a0: prior.shape,
                        b0: prior.rate,
                    },
                    *shape,
                ),
                BaselineSpec::TsWeibullFit { tasks, draws, name, shape } => {
                    let fit = fit_weibull_prior(&cfg.prior, *shape, *tasks, *draws, cfg.bound(), cfg.derived_seed("fit", &[]))?;
                    if !(fit.prior.shape > 0.0 && fit.prior.rate > 0.0 && fit.prior.shape.is_finite()) {
                        return Err(LabError::config(
                            "experiment.baselines",
                            format!("could not fit a rate prior for `{name}`"),
                        ));
                    }
                    (
                        BaselineKind::TsWeibull {
                            a0: fit.prior.shape,
                            b0: fit.prior.rate,
                        },
                        fit.shape,
                    )
                }
                BaselineSpec::MyopicMle { shape, .. } => (BaselineKind::MyopicMle, *shape),
                BaselineSpec::Ucb { shape, level, .. } => (BaselineKind::Ucb { level: *level }, *shape),
                BaselineSpec::Saa { .. } => (BaselineKind::Saa, 1.0),
                BaselineSpec::KaplanMeier { .. } => (BaselineKind::KaplanMeier, 1.0),
            };
            entries.push((s.name().to_string(), kind, k));
        }
        Ok(Roster { entries })
    }

    fn build(&self, gamma: f64, bound: f64, warmup: usize) -> Result<Vec<BaselinePolicy>> {
        self.entries
            .iter()
            .map(|(name, kind, k)| Ok(BaselinePolicy::new(name, *kind, *k, gamma, bound)?.with_warmup(warmup)))
            .collect()
    }
}

fn check_model(cfg: &RunConfig, model: &CompletionModel) -> Result<()> {
    let (a, b) = (model.shape.demand_bound, cfg.bound());
    if (a - b).abs() > 1e-9 * b.max(1.0) {
        return Err(LabError::config(
            "bound",
            format!("checkpoint was trained with B = {a}, config resolves B = {b}"),
        ));
    }
    FlowKernel::new(model).at("checkpoint")?;
    Ok(())
}

fn icgps_config(cfg: &RunConfig, horizon: usize) -> IcgpsConfig {
    IcgpsConfig {
        horizon,
        ..cfg.icgps.clone()
    }
}

/// Trials of ICGPS and the baselines on tasks drawn by `task_of(trial)`.
fn regret_trials(
    cfg: &RunConfig,
    model: &CompletionModel,
    icgps_name: &str,
    roster: &Roster,
    gamma: f64,
    trials: usize,
    horizon: usize,
    task_of: &(dyn Fn(usize) -> DemandModel + Sync),
) -> Result<RegretRun> {
    let costs = cfg.costs(gamma)?;
    let icfg = icgps_config(cfg, horizon);
    let per_trial: Vec<Result<Vec<TrialResult>>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut ic = IcgpsPolicy::new(icgps_name, FlowKernel::new(model)?, icfg.clone(), gamma)?;
            let mut baselines = roster.build(gamma, costs.bound, icfg.warmup)?;
            let mut policies: Vec<&mut dyn Policy> = vec![&mut ic];
            policies.extend(baselines.iter_mut().map(|b| b as &mut dyn Policy));
            let task = task_of(trial);
            Ok(run_trial(trial, &task, &mut policies, horizon, &costs, cfg.derived_seed("trial", &[trial as u64]))?)
        })
        .collect();
    let mut results = Vec::with_capacity(trials * (roster.entries.len() + 1));
    for r in per_trial {
        results.extend(r?);
    }
    let mut policies = vec![icgps_name.to_string()];
    policies.extend(roster.entries.iter().map(|e| e.0.clone()));
    Ok(RegretRun { gamma, policies, results })
}

fn fmt_gamma(g: f64) -> String {
    format!("{g}")
}

fn final_mean(run: &RegretRun, policy: &str) -> Result<f64> {
    Ok(run.curve(policy)?.final_mean())
}

/// Second-half growth of the mean regret curve over first-half growth.
pub fn growth_ratio(curve: &RegretCurve) -> f64 {
    let t = curve.mean.len();
    let half = curve.mean[t / 2 - 1];
    (curve.final_mean() - half) / half
}

fn first_of<'a>(specs: &'a [BaselineSpec], pick: impl Fn(&BaselineSpec) -> bool) -> Option<&'a str> {
    specs.iter().find(|s| pick(s)).map(|s| s.name())
}

fn regret_experiment(cfg: &RunConfig, name: &str, spec: &RegretSpec, model: &CompletionModel) -> Result<ExperimentOutput> {
    check_model(cfg, model)?;
    let roster = Roster::new(cfg, &spec.baselines)?;
    let mut out = ExperimentOutput {
        experiment: name.to_string(),
        ..Default::default()
    };
    let task = spec.task.clone();
    for &gamma in &spec.gammas {
        let run = regret_trials(cfg, model, &spec.icgps_name, &roster, gamma, spec.trials, spec.horizon, &|_| task.clone())?;
        out.runs.push(run);
    }
    out.diagnostics = regret_diagnostics(name, spec, &out.runs)?;
    Ok(out)
}

fn regret_diagnostics(name: &str, spec: &RegretSpec, runs: &[RegretRun]) -> Result<Vec<Diagnostic>> {
    let ic = spec.icgps_name.as_str();
    let ts = first_of(&spec.baselines, |s| matches!(s, BaselineSpec::TsWeibull { .. }));
    let fitted = first_of(&spec.baselines, |s| matches!(s, BaselineSpec::TsWeibullFit { .. }));
    let mut d = Vec::new();
    for run in runs {
        let g = fmt_gamma(run.gamma);
        let ric = final_mean(run, ic)?;
        match name {
            "q1" => {
                if let Some(ts) = ts {
                    let rts = final_mean(run, ts)?;
                    let ratio = ric / rts;
                    d.push(Diagnostic::new(
                        format!("q1.ratio_{ic}_{ts}.gamma{g}"),
                        ratio,
                        "[0.5, 1.5]",
                        (0.5..=1.5).contains(&ratio),
                    ));
                    if run.gamma == 0.5 {
                        for other in spec.baselines.iter().filter(|s| {
                            matches!(s, BaselineSpec::MyopicMle { .. } | BaselineSpec::Ucb { .. })
                        }) {
                            let ro = final_mean(run, other.name())?;
                            for (who, r) in [(ic, ric), (ts, rts)] {
                                let rel = r / ro;
                                d.push(Diagnostic::new(
                                    format!("q1.beats_{}.{who}.gamma{g}", other.name()),
                                    rel,
                                    "<= 0.8",
                                    rel <= 0.8,
                                ));
                            }
                        }
                    }
                    if run.gamma == 0.9 {
                        for who in [ic, ts] {
                            let gr = growth_ratio(&run.curve(who)?);
                            d.push(Diagnostic::new(format!("q1.concavity.{who}.gamma{g}"), gr, "< 0.75", gr < 0.75));
                        }
                    }
                }
            }
            "q3-prior" => {
                if let (Some(ts), Some(fit)) = (ts, fitted) {
                    let rts = final_mean(run, ts)?;
                    let rf = final_mean(run, fit)?;
                    d.push(Diagnostic::new(format!("q3-prior.ratio_{fit}_{ts}.gamma{g}"), rf / rts, ">= 2", rf / rts >= 2.0));
                    d.push(Diagnostic::new(format!("q3-prior.ratio_{ic}_{ts}.gamma{g}"), ric / rts, "<= 1.5", ric / rts <= 1.5));
                }
            }
            "q3-shift" => {
                if let Some(fit) = fitted {
                    let rf = final_mean(run, fit)?;
                    d.push(Diagnostic::new(format!("q3-shift.ratio_{ic}_{fit}.gamma{g}"), ric / rf, "< 1", ric < rf));
                }
            }
            _ => {}
        }
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Data,
    Capacity,
}

/// Q2: train one model per sweep value, score it by Δ̂_obs on a shared
/// held-out corpus, and by its Bayesian regret on prior-drawn tasks.
pub fn run_sweep(cfg: &RunConfig, spec: &SweepSpec, axis: SweepAxis) -> Result<ExperimentOutput> {
    let name = match axis {
        SweepAxis::Data => "q2-data",
        SweepAxis::Capacity => "q2-capacity",
    };
    let mut out = ExperimentOutput {
        experiment: name.to_string(),
        ..Default::default()
    };
    let eval = corpus(cfg, &cfg.prior, spec.eval_episodes, "q2-eval")?;
    let shape = cfg.flow_shape()?;
    let task_seed = cfg.derived_seed("task", &[]);
    let prior = cfg.prior.clone();
    let task_of = move |trial: usize| prior.sample(&mut stream(task_seed, "task", trial as u64, 0, 0));
    let roster = Roster { entries: Vec::new() };
    let mut runs: Vec<Vec<RegretRun>> = vec![Vec::new(); spec.gammas.len()];
    for &value in &spec.values {
        let mut tcfg = cfg.train_config();
        let n = match axis {
            SweepAxis::Data => value,
            SweepAxis::Capacity => {
                let depth = cfg.train.hidden.len().max(1);
                tcfg.hidden = vec![value; depth];
                cfg.corpus.episodes
            }
        };
        // Nested corpora: episode i is the same for every size.
        let data = corpus(cfg, &cfg.prior, n, "corpus")?;
        let (model, report) = train(&data, shape, &tcfg)?;
        let delta = delta_obs_hat(&model, &eval)?;
        let label = format!("{}-{value}", match axis {
            SweepAxis::Data => "n",
            SweepAxis::Capacity => "w",
        });
        let pname = format!("icgps-{label}");
        for (gi, &gamma) in spec.gammas.iter().enumerate() {
            let run = regret_trials(cfg, &model, &pname, &roster, gamma, spec.trials, spec.horizon, &task_of)?;
            let curve = run.curve(&pname)?;
            out.sweep.push(SweepPoint {
                value,
                gamma,
                delta_obs: delta,
                breg: curve.final_mean(),
                breg_se: curve.final_se(),
            });
            runs[gi].push(run);
        }
        out.models.push((label, model, report));
    }
    for (gi, &gamma) in spec.gammas.iter().enumerate() {
        let pts: Vec<&SweepPoint> = out.sweep.iter().filter(|p| p.gamma == gamma).collect();
        let x: Vec<f64> = pts.iter().map(|p| p.delta_obs.mean).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.breg).collect();
        let rho = spearman(&x, &y)?;
        out.diagnostics.push(Diagnostic::new(
            format!("{name}.spearman.gamma{}", fmt_gamma(gamma)),
            rho,
            ">= 0.5",
            rho >= 0.5,
        ));
        // One run per service level with every sweep point as a policy.
        let merged = std::mem::take(&mut runs[gi]);
        let mut policies = Vec::new();
        let mut results = Vec::new();
        for r in &merged {
            policies.extend(r.policies.iter().cloned());
        }
        for trial in 0..spec.trials {
            for r in &merged {
                results.extend(r.results.iter().filter(|x| x.trial == trial).cloned());
            }
        }
        out.runs.push(RegretRun { gamma, policies, results });
    }
    Ok(out)
}

/// Replay an ingested store under ICGPS and the configured baselines.
pub fn run_ingest(cfg: &RunConfig, spec: &IngestSpec, model: &CompletionModel, store: &Store) -> Result<ExperimentOutput> {
    check_model(cfg, model)?;
    if store.max_value() > cfg.bound() {
        return Err(LabError::config(
            "bound",
            format!("store values reach {} above B = {}", store.max_value(), cfg.bound()),
        ));
    }
    let costs = cfg.costs(spec.gamma)?;
    let horizon = store.episodes.iter().map(|e| e.episode.len()).max().unwrap_or(1).max(1);
    let icfg = icgps_config(cfg, horizon);
    let roster = Roster::new(cfg, &spec.baselines)?;
    let per_seed: Vec<Result<Vec<SeededCost>>> = (0..spec.seeds)
        .into_par_iter()
        .map(|seed| {
            let mut ic = IcgpsPolicy::new(&spec.icgps_name, FlowKernel::new(model)?, icfg.clone(), spec.gamma)?;
            let mut baselines = roster.build(spec.gamma, costs.bound, icfg.warmup)?;
            let mut policies: Vec<&mut dyn Policy> = vec![&mut ic];
            policies.extend(baselines.iter_mut().map(|b| b as &mut dyn Policy));
            let rows = evaluate_episodes(&store.episodes, &mut policies, &costs, cfg.derived_seed("replay", &[seed as u64]))?;
            Ok(rows.into_iter().map(|row| SeededCost { seed, row }).collect())
        })
        .collect();
    let mut out = ExperimentOutput {
        experiment: "ingest-eval".into(),
        ..Default::default()
    };
    for r in per_seed {
        out.costs.extend(r?);
    }
    let mut means = Vec::new();
    for name in std::iter::once(spec.icgps_name.as_str()).chain(spec.baselines.iter().map(BaselineSpec::name)) {
        let m = overall_cost(&out.costs, name);
        out.diagnostics.push(Diagnostic::new(format!("ingest-eval.mean_cost.{name}"), m, "report", true));
        means.push((name, m));
    }
    let km = first_of(&spec.baselines, |s| matches!(s, BaselineSpec::KaplanMeier { .. }));
    let saa = first_of(&spec.baselines, |s| matches!(s, BaselineSpec::Saa { .. }));
    if let (Some(km), Some(saa)) = (km, saa) {
        let get = |n: &str| means.iter().find(|m| m.0 == n).unwrap().1;
        let (ic, k, s) = (get(&spec.icgps_name), get(km), get(saa));
        out.diagnostics.push(Diagnostic::new(format!("ingest-eval.{}_le_{km}", spec.icgps_name), ic - k, "<= 0", ic <= k));
        out.diagnostics.push(Diagnostic::new(format!("ingest-eval.{km}_le_{saa}"), k - s, "<= 0", k <= s));
    }
    Ok(out)
}

/// Step-weighted mean cost of a policy over every group and seed.
pub fn overall_cost(costs: &[SeededCost], policy: &str) -> f64 {
    let (mut total, mut steps) = (0.0, 0usize);
    for c in costs.iter().filter(|c| c.row.policy == policy) {
        total += c.row.mean_cost * c.row.steps as f64;
        steps += c.row.steps;
    }
    total / steps.max(1) as f64
}

/// Run the configured experiment. `model` is required unless the
/// experiment trains its own; `store` only for ingest evaluation.
pub fn run_experiment(cfg: &RunConfig, model: Option<&CompletionModel>, store: Option<&Store>) -> Result<ExperimentOutput> {
    let exp = cfg
        .experiment
        .as_ref()
        .ok_or_else(|| LabError::config("experiment", "missing section"))?;
    let need = || model.ok_or_else(|| LabError::config("checkpoint", "this experiment needs a trained model"));
    match exp {
        ExperimentConfig::Q1(s) => regret_experiment(cfg, "q1", s, need()?),
        ExperimentConfig::Q3Shift(s) => regret_experiment(cfg, "q3-shift", s, need()?),
        ExperimentConfig::Q3Prior(s) => regret_experiment(cfg, "q3-prior", s, need()?),
        ExperimentConfig::Q2Data(s) => run_sweep(cfg, s, SweepAxis::Data),
        ExperimentConfig::Q2Capacity(s) => run_sweep(cfg, s, SweepAxis::Capacity),
        ExperimentConfig::IngestEval(s) => {
            let store = store.ok_or_else(|| LabError::config("experiment.store", "no store loaded"))?;
            run_ingest(cfg, s, need()?, store)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use icgps_core::{FamilyPrior, ParamPrior};

    #[test]
    fn fitted_prior_recovers_a_known_weibull_family() {
        let prior = TaskPrior::single(FamilyPrior::Weibull {
            rate: ParamPrior::Gamma { shape: 4.0, rate: 8.0 },
            shape: ParamPrior::Fixed(1.5),
        });
        let fit = fit_weibull_prior(&prior, None, 300, 400, 50.0, 1).unwrap();
        assert!((fit.shape - 1.5).abs() < 0.03, "{fit:?}");
        let mean = fit.prior.shape / fit.prior.rate;
        assert!((mean - 0.5).abs() < 0.05, "{fit:?}");
        assert!((fit.prior.shape - 4.0).abs() < 1.5, "{fit:?}");
    }

    #[test]
    fn growth_ratio_of_a_line_and_a_square_root() {
        let line = RegretCurve {
            mean: (1..=100).map(|t| t as f64).collect(),
            se: vec![0.0; 100],
            trials: 2,
        };
        assert!((growth_ratio(&line) - 1.0).abs() < 1e-12);
        let root = RegretCurve {
            mean: (1..=100).map(|t| (t as f64).sqrt()).collect(),
            se: vec![0.0; 100],
            trials: 2,
        };
        assert!((growth_ratio(&root) - (2f64.sqrt() - 1.0)).abs() < 1e-12);
    }
}
