//! Theory-vs-simulation tables over finished runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ssl_dynamics::ode::{self, critical_time, IntegratorOptions, OdeProblem};
use ssl_dynamics::Objective;

use crate::config::{Experiment, ExperimentKind};
use crate::error::{LabError, Result};
use crate::runner::{masking_spec, Metadata, OrderRecord, RatioRecord};
use crate::schema::{read_rows, CriticalTimeRow, GenerativeRow, Schema, TrajectoryRow};

pub const FIXED_POINT_RTOL: f64 = 1e-3;
pub const CRITICAL_TIME_RTOL: f64 = 0.2;
pub const JEPA_RATIO_RTOL: f64 = 0.15;
pub const MASKING_RTOL: f64 = 0.05;
pub const CROSSING_RTOL: f64 = 0.1;
/// Temporal estimates must lie within this many seed standard deviations.
pub const TEMPORAL_SD_BAND: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub inputs: String,
    pub quantity: String,
    pub theory: f64,
    pub measured: f64,
    pub relative_error: f64,
    /// Compared against `tolerance`; equals `relative_error` unless the rule
    /// says otherwise.
    pub check_value: f64,
    pub tolerance: f64,
    pub rule: String,
    pub flagged: bool,
}

impl ReportRow {
    fn relative(run: &str, inputs: String, quantity: &str, theory: f64, measured: f64, tolerance: f64) -> Self {
        let rel = rel_err(measured, theory);
        Self::new(run, inputs, quantity, theory, measured, rel, tolerance, "relative error")
    }

    #[allow(clippy::too_many_arguments)]
    fn new(run: &str, inputs: String, quantity: &str, theory: f64, measured: f64, check: f64, tolerance: f64, rule: &str) -> Self {
        ReportRow {
            run: run.to_string(),
            inputs,
            quantity: quantity.to_string(),
            theory,
            measured,
            relative_error: rel_err(measured, theory),
            check_value: check,
            tolerance,
            rule: rule.to_string(),
            flagged: !(check <= tolerance),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub kind: ExperimentKind,
    pub runs: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn flagged(&self) -> usize {
        self.rows.iter().filter(|r| r.flagged).count()
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# Theory vs simulation: {}\n", self.kind);
        let _ = writeln!(s, "Runs: {}\n", self.runs.join(", "));
        let _ = writeln!(s, "| run | inputs | quantity | theory | measured | rel. error | check | tolerance | status |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {:.6e} | {:.6e} | {:.3e} | {:.3e} ({}) | {:.3e} | {} |",
                r.run,
                r.inputs,
                r.quantity,
                r.theory,
                r.measured,
                r.relative_error,
                r.check_value,
                r.rule,
                r.tolerance,
                if r.flagged { "FLAG" } else { "ok" }
            );
        }
        let _ = writeln!(s, "\n{} of {} rows flagged.", self.flagged(), self.rows.len());
        s
    }
}

fn rel_err(measured: f64, theory: f64) -> f64 {
    ((measured - theory) / theory).abs()
}

/// Builds the report for `run_dirs`, which must all hold runs of one kind
/// (`kind` if given).
pub fn report_theory_vs_sim(run_dirs: &[PathBuf], kind: Option<ExperimentKind>) -> Result<Report> {
    if run_dirs.is_empty() {
        return Err(LabError::Usage("report needs at least one run directory".into()));
    }
    let metas: Vec<Metadata> = run_dirs.iter().map(|d| Metadata::read(d)).collect::<Result<_>>()?;
    let kind = kind.unwrap_or(metas[0].kind);
    if let Some(m) = metas.iter().find(|m| m.kind != kind) {
        return Err(LabError::Usage(format!("run `{}` has kind {}, expected {kind}", m.name, m.kind)));
    }
    let mut rows = vec![];
    for (dir, meta) in run_dirs.iter().zip(&metas) {
        let config = meta.config()?;
        let run = meta.name.as_str();
        match &config.experiment {
            Experiment::OdeSweep(p) => {
                for &o in &p.objectives {
                    for &l in &p.depths {
                        for (i, f) in p.features.iter().enumerate() {
                            let traj: Vec<TrajectoryRow> = read_rows(&dir.join(format!("traj_{o}_L{l}_f{i}.csv")), Schema::Trajectory)?;
                            let last = traj.last().ok_or_else(|| LabError::format(dir, "empty trajectory"))?;
                            let fp = ode::fixed_point(o, f.rho, l);
                            rows.push(ReportRow::relative(run, format!("{o} L={l} λ={} ρ={} t={:.4e}", f.lambda, f.rho, last.time), "final w_bar", fp, last.w_bar, FIXED_POINT_RTOL));
                        }
                    }
                }
                critical_rows(run, dir, &mut rows)?;
            }
            Experiment::CriticalTimeStudy(_) => critical_rows(run, dir, &mut rows)?,
            Experiment::RatioStudy(_) => {
                let ratios: Vec<RatioRecord> = serde_json::from_value(meta.details["ratios"].clone()).map_err(|e| LabError::format(dir.join(crate::runner::METADATA_FILE), e.to_string()))?;
                for r in ratios {
                    rows.push(ratio_row(run, &r));
                }
            }
            Experiment::NetTrain(p) => {
                let path = dir.join("order_report.json");
                let text = std::fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))?;
                let records: Vec<OrderRecord> = serde_json::from_str(&text).map_err(|e| LabError::format(&path, e.to_string()))?;
                for rec in records {
                    for (j, f) in p.features.iter().enumerate() {
                        let inputs = format!("{} seed {} feature {} λ={} ρ={}", rec.objective, rec.seed, f.index, f.lambda, f.rho);
                        let depth = p.depth as u32;
                        let w0 = rec.initial_projections[j];
                        let theory = OdeProblem::auto(rec.objective, depth, f.lambda, f.rho, w0)
                            .and_then(|prob| critical_time(&prob, p.p, &IntegratorOptions::default()))
                            .map(|t| t / f64::from(depth))
                            .map_err(|e| LabError::numeric(format!("report for `{run}` ({inputs})"), e))?;
                        let measured = rec.crossing_times[j].unwrap_or(f64::INFINITY);
                        rows.push(ReportRow::relative(run, inputs, "crossing time (network)", theory, measured, CROSSING_RTOL));
                    }
                }
            }
            Experiment::GenmodelTemporal(_) => {
                let data: Vec<GenerativeRow> = read_rows(&dir.join("temporal.csv"), Schema::Generative)?;
                temporal_rows(run, &data, &mut rows);
            }
            Experiment::GenmodelMasking(p) => {
                let data: Vec<GenerativeRow> = read_rows(&dir.join("masking.csv"), Schema::Generative)?;
                let spec = masking_spec(p);
                let threshold = 2.0 * spec.mean_coeff_var();
                for r in data.iter().filter(|r| spec.coeff_vars[r.feature] >= threshold) {
                    let inputs = format!("seed {} factor {} n={}", r.run_seed, r.feature, r.t_or_n);
                    rows.push(ReportRow::relative(run, inputs.clone(), "lambda", r.lambda_theory, r.lambda_hat, MASKING_RTOL));
                    let (s_th, s_hat) = (r.lambda_theory / r.rho_theory, r.lambda_hat / r.rho_hat);
                    rows.push(ReportRow::relative(run, inputs, "sigma^2", s_th, s_hat, MASKING_RTOL));
                }
            }
        }
    }
    Ok(Report { kind, runs: metas.iter().map(|m| m.name.clone()).collect(), rows })
}

fn critical_rows(run: &str, dir: &Path, rows: &mut Vec<ReportRow>) -> Result<()> {
    let data: Vec<CriticalTimeRow> = read_rows(&dir.join("critical_times.csv"), Schema::CriticalTime)?;
    for r in data {
        let inputs = format!("{} L={} ε={:e} λ={} ρ={} p={}", r.objective, r.depth, r.epsilon, r.lambda, r.rho, r.p);
        rows.push(ReportRow::relative(run, inputs, "t*", r.t_star_formula, r.t_star_measured, CRITICAL_TIME_RTOL));
    }
    Ok(())
}

/// JEPA compares the excess over 1 at 15%; MAE checks `|ratio − 1|` against
/// the band `3 ε^{(L−1)/L}`.
fn ratio_row(run: &str, r: &RatioRecord) -> ReportRow {
    let inputs = format!("{} L={} ε={:e}", r.objective, r.depth, r.epsilon);
    match (r.objective, r.formula_ratio) {
        (Objective::Jepa, Some(f)) => {
            let check = rel_err(r.measured_ratio - 1.0, f - 1.0);
            ReportRow::new(run, inputs, "t* ratio", f, r.measured_ratio, check, JEPA_RATIO_RTOL, "excess over 1, relative")
        }
        (Objective::Mae, _) => {
            let band = 3.0 * r.epsilon.powf(f64::from(r.depth - 1) / f64::from(r.depth));
            ReportRow::new(run, inputs, "t* ratio", 1.0, r.measured_ratio, (r.measured_ratio - 1.0).abs(), band, "|ratio - 1|")
        }
        (Objective::Jepa, None) => ReportRow::new(run, inputs, "t* ratio", f64::NAN, r.measured_ratio, f64::NAN, JEPA_RATIO_RTOL, "no formula at this depth"),
    }
}

/// Seed-mean estimates at each length against theory, banded by the seed
/// standard deviation.
fn temporal_rows(run: &str, data: &[GenerativeRow], rows: &mut Vec<ReportRow>) {
    let mut groups: BTreeMap<(usize, usize), Vec<&GenerativeRow>> = BTreeMap::new();
    for r in data {
        groups.entry((r.t_or_n, r.feature)).or_default().push(r);
    }
    for ((t, a), g) in groups {
        let inputs = format!("feature {a} T={t} seeds={}", g.len());
        for (q, theory, vals) in [
            ("lambda", g[0].lambda_theory, g.iter().map(|r| r.lambda_hat).collect::<Vec<_>>()),
            ("rho", g[0].rho_theory, g.iter().map(|r| r.rho_hat).collect()),
        ] {
            let (mean, sd) = mean_sd(&vals);
            let rule = format!("|mean - theory| vs {TEMPORAL_SD_BAND} sd");
            rows.push(ReportRow::new(run, inputs.clone(), q, theory, mean, (mean - theory).abs(), TEMPORAL_SD_BAND * sd, &rule));
        }
    }
}

/// Mean and sample standard deviation.
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use crate::runner::{run, RunOptions};
    use serde_json::json;

    fn run_dir(root: &Path, v: serde_json::Value) -> PathBuf {
        let c = ExperimentConfig::from_value(v).unwrap();
        run(&c, &RunOptions { output_root: Some(root.to_path_buf()), seed_override: None }).unwrap().dir
    }

    #[test]
    fn empty_list_is_usage_error() {
        let e = report_theory_vs_sim(&[], None).unwrap_err();
        assert_eq!(e.exit_code(), crate::error::EXIT_USAGE);
    }

    #[test]
    fn missing_run_is_io_error() {
        let e = report_theory_vs_sim(&[PathBuf::from("/nonexistent/run")], None).unwrap_err();
        assert!(matches!(e, LabError::Io { .. }), "{e}");
    }

    #[test]
    fn mae_critical_errors_shrink_with_epsilon() {
        let dir = tempfile::tempdir().unwrap();
        let d = run_dir(
            dir.path(),
            json!({"name": "c", "kind": "critical_time_study", "parameters": {
                "seeds": [0], "objectives": ["mae"], "depths": [5], "lambdas": [1.0], "rhos": [1.0],
                "epsilons": [1e-2, 1e-3, 1e-4], "p": 0.5}}),
        );
        let r = report_theory_vs_sim(&[d], None).unwrap();
        assert_eq!(r.rows.len(), 3);
        assert!(r.rows[0].relative_error > r.rows[1].relative_error && r.rows[1].relative_error > r.rows[2].relative_error);
        assert!(!r.rows[2].flagged);
        assert!(r.to_markdown().contains("| c | mae L=5 ε=1e-4"));
    }

    #[test]
    fn jepa_ratio_row() {
        let dir = tempfile::tempdir().unwrap();
        let d = run_dir(
            dir.path(),
            json!({"name": "r", "kind": "ratio_study", "parameters": {
                "seeds": [0], "objectives": ["jepa"], "depths": [2], "lambda": 1.0, "rho": 1.0, "rho_prime": 2.0,
                "epsilons": [1e-4], "p": 0.5}}),
        );
        let r = report_theory_vs_sim(&[d], None).unwrap();
        let row = &r.rows[0];
        assert!(!row.flagged, "{row:?}");
        assert!(((row.measured - 1.0) / 1e-2 - 0.75).abs() < 0.15 * 0.75);
    }

    #[test]
    fn kind_mismatch_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let d = run_dir(
            dir.path(),
            json!({"name": "c", "kind": "critical_time_study", "parameters": {
                "seeds": [0], "objectives": ["mae"], "depths": [1], "lambdas": [1.0], "rhos": [1.0],
                "epsilons": [1e-2]}}),
        );
        let e = report_theory_vs_sim(&[d], Some(ExperimentKind::RatioStudy)).unwrap_err();
        assert_eq!(e.exit_code(), crate::error::EXIT_USAGE);
    }

    #[test]
    fn mean_sd_basic() {
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
