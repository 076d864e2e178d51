//! CSV artifacts and the output directory guard.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use icgps_core::train::TrainReport;

use crate::error::{LabError, Result};
use crate::experiments::{Diagnostic, ExperimentOutput};

/// An output directory that refuses to replace existing files unless forced.
#[derive(Debug, Clone)]
pub struct OutDir {
    root: PathBuf,
    force: bool,
}

impl OutDir {
    pub fn new(root: impl Into<PathBuf>, force: bool) -> Self {
        OutDir {
            root: root.into(),
            force,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Fail before any work starts if one of `rels` already exists.
    pub fn claim(&self, rels: &[String]) -> Result<()> {
        if self.force {
            return Ok(());
        }
        for r in rels {
            let p = self.path(r);
            if p.exists() {
                return Err(LabError::WouldOverwrite(p));
            }
        }
        Ok(())
    }

    pub fn create(&self, rel: &str) -> Result<BufWriter<File>> {
        let p = self.path(rel);
        if !self.force && p.exists() {
            return Err(LabError::WouldOverwrite(p));
        }
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
        }
        let f = File::create(&p).map_err(|e| LabError::io(&p, e))?;
        Ok(BufWriter::new(f))
    }

    pub fn write(&self, rel: &str, body: &[u8]) -> Result<()> {
        let mut w = self.create(rel)?;
        let p = self.path(rel);
        w.write_all(body).and_then(|_| w.flush()).map_err(|e| LabError::io(&p, e))
    }

    pub fn csv(&self, rel: &str) -> Result<csv::Writer<BufWriter<File>>> {
        Ok(csv::Writer::from_writer(self.create(rel)?))
    }
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| LabError::Io {
        path: PathBuf::from("<csv>"),
        source: e,
    })
}

pub const RESULTS: &str = "results.csv";
pub const CURVES: &str = "curves.csv";
pub const DIAGNOSTICS: &str = "diagnostics.csv";
pub const SWEEP: &str = "sweep.csv";
pub const COSTS: &str = "costs.csv";
pub const TRAIN_REPORT: &str = "train_report.csv";
pub const RESOLVED: &str = "config.resolved.toml";

/// Per-step rows ordered by service level, policy, trial and round.
pub fn write_results<W: Write>(out: &ExperimentOutput, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["experiment", "gamma", "policy", "trial", "t", "order", "cum_regret"])?;
    for run in &out.runs {
        for policy in &run.policies {
            let mut rows = run.of(policy);
            rows.sort_by_key(|r| r.trial);
            for r in rows {
                for (t, (x, c)) in r.orders.iter().zip(&r.cum_regret).enumerate() {
                    wtr.write_record([
                        out.experiment.as_str(),
                        &run.gamma.to_string(),
                        policy,
                        &r.trial.to_string(),
                        &(t + 1).to_string(),
                        &x.to_string(),
                        &c.to_string(),
                    ])?;
                }
            }
        }
    }
    finish(wtr)
}

pub fn write_curves<W: Write>(out: &ExperimentOutput, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["experiment", "gamma", "policy", "t", "mean", "se", "trials"])?;
    for run in &out.runs {
        for policy in &run.policies {
            let c = run.curve(policy)?;
            for (t, (m, s)) in c.mean.iter().zip(&c.se).enumerate() {
                wtr.write_record([
                    out.experiment.as_str(),
                    &run.gamma.to_string(),
                    policy,
                    &(t + 1).to_string(),
                    &m.to_string(),
                    &s.to_string(),
                    &c.trials.to_string(),
                ])?;
            }
        }
    }
    finish(wtr)
}

pub fn write_diagnostics<W: Write>(diags: &[Diagnostic], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["check_name", "statistic", "threshold", "pass"])?;
    for d in diags {
        wtr.write_record([d.name.as_str(), &d.statistic.to_string(), &d.threshold, if d.pass { "true" } else { "false" }])?;
    }
    finish(wtr)
}

pub fn write_sweep<W: Write>(out: &ExperimentOutput, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["experiment", "value", "gamma", "delta_obs", "delta_obs_se", "breg", "breg_se"])?;
    for p in &out.sweep {
        wtr.write_record([
            out.experiment.as_str(),
            &p.value.to_string(),
            &p.gamma.to_string(),
            &p.delta_obs.mean.to_string(),
            &p.delta_obs.se.to_string(),
            &p.breg.to_string(),
            &p.breg_se.to_string(),
        ])?;
    }
    finish(wtr)
}

pub fn write_costs<W: Write>(out: &ExperimentOutput, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["experiment", "seed", "policy", "group", "episodes", "steps", "mean_cost", "lower_bound_steps"])?;
    for c in &out.costs {
        wtr.write_record([
            out.experiment.as_str(),
            &c.seed.to_string(),
            &c.row.policy,
            &c.row.group,
            &c.row.episodes.to_string(),
            &c.row.steps.to_string(),
            &c.row.mean_cost.to_string(),
            &c.row.lower_bound_steps.to_string(),
        ])?;
    }
    finish(wtr)
}

pub fn write_train_report<W: Write>(report: &TrainReport, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["epoch", "train_nll", "val_nll", "selected"])?;
    for (e, (tr, va)) in report.train_nll.iter().zip(&report.val_nll).enumerate() {
        wtr.write_record([
            e.to_string(),
            tr.to_string(),
            va.to_string(),
            (e == report.best_epoch).to_string(),
        ])?;
    }
    finish(wtr)
}

/// Files `run` would write for this output, relative to the output root.
pub fn run_artifacts(out: &ExperimentOutput) -> Vec<String> {
    let mut v = vec![DIAGNOSTICS.to_string()];
    if !out.runs.is_empty() {
        v.push(RESULTS.into());
        v.push(CURVES.into());
        for r in &out.runs {
            v.push(crate::plot::file_name(&out.experiment, r.gamma));
        }
    }
    if !out.sweep.is_empty() {
        v.push(SWEEP.into());
    }
    if !out.costs.is_empty() {
        v.push(COSTS.into());
    }
    for (label, _, _) in &out.models {
        v.push(format!("models/{label}.ckpt"));
        v.push(format!("models/{label}.train_report.csv"));
    }
    v
}

/// Write every artifact of an experiment run.
pub fn write_run(dir: &OutDir, out: &ExperimentOutput) -> Result<Vec<PathBuf>> {
    dir.claim(&run_artifacts(out))?;
    let mut written = Vec::new();
    if !out.runs.is_empty() {
        write_results(out, dir.create(RESULTS)?)?;
        write_curves(out, dir.create(CURVES)?)?;
        written.extend([dir.path(RESULTS), dir.path(CURVES)]);
        for r in &out.runs {
            let name = crate::plot::file_name(&out.experiment, r.gamma);
            dir.write(&name, crate::plot::regret_svg(&out.experiment, r)?.as_bytes())?;
            written.push(dir.path(&name));
        }
    }
    if !out.sweep.is_empty() {
        write_sweep(out, dir.create(SWEEP)?)?;
        written.push(dir.path(SWEEP));
    }
    if !out.costs.is_empty() {
        write_costs(out, dir.create(COSTS)?)?;
        written.push(dir.path(COSTS));
    }
    for (label, model, report) in &out.models {
        let ck = format!("models/{label}.ckpt");
        dir.write(&ck, crate::checkpoint::to_text(model).as_bytes())?;
        let rep = format!("models/{label}.train_report.csv");
        write_train_report(report, dir.create(&rep)?)?;
        written.extend([dir.path(&ck), dir.path(&rep)]);
    }
    write_diagnostics(&out.diagnostics, dir.create(DIAGNOSTICS)?)?;
    written.push(dir.path(DIAGNOSTICS));
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::RegretRun;
    use icgps_core::harness::TrialResult;

    fn trial(trial: usize, policy: &str, regrets: &[f64]) -> TrialResult {
        TrialResult {
            trial,
            policy: policy.into(),
            orders: vec![1.0; regrets.len()],
            demands: vec![1.0; regrets.len()],
            losses: vec![0.0; regrets.len()],
            cum_regret: regrets.to_vec(),
        }
    }

    #[test]
    fn results_rows_are_policy_trial_round_ordered() {
        let out = ExperimentOutput {
            experiment: "q1".into(),
            runs: vec![RegretRun {
                gamma: 0.9,
                policies: vec!["a".into(), "b".into()],
                results: vec![
                    trial(0, "a", &[0.0, 1.0]),
                    trial(0, "b", &[0.5, 0.5]),
                    trial(1, "a", &[0.0, 2.0]),
                    trial(1, "b", &[1.0, 1.0]),
                ],
            }],
            ..Default::default()
        };
        let mut buf = Vec::new();
        write_results(&out, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 2 * 2 * 2);
        assert_eq!(lines[0], "experiment,gamma,policy,trial,t,order,cum_regret");
        assert_eq!(lines[1], "q1,0.9,a,0,1,1,0");
        assert_eq!(lines[4], "q1,0.9,a,1,2,1,2");
        assert_eq!(lines[5], "q1,0.9,b,0,1,1,0.5");

        let mut buf = Vec::new();
        write_curves(&out, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().any(|l| l == "q1,0.9,a,2,1.5,0.5,2"), "{text}");
    }

    #[test]
    fn guard_refuses_overwrite_unless_forced() {
        let tmp = tempfile::tempdir().unwrap();
        let d = OutDir::new(tmp.path(), false);
        d.write("x.csv", b"1").unwrap();
        assert!(matches!(d.write("x.csv", b"2"), Err(LabError::WouldOverwrite(_))));
        assert!(matches!(d.claim(&["x.csv".into()]), Err(LabError::WouldOverwrite(_))));
        OutDir::new(tmp.path(), true).write("x.csv", b"2").unwrap();
        assert_eq!(std::fs::read(tmp.path().join("x.csv")).unwrap(), b"2");
    }
}
