//! Experiment orchestration. Sweep points run on the rayon pool and return
//! their rows; only this module writes files, in a fixed order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use ssl_dynamics::closed_form::{critical_time_formula, critical_time_ratio_formula};
use ssl_dynamics::data::FeatureParams;
use ssl_dynamics::generative::{
    consecutive_pairs, diagonalizability_error, directional_params, empirical_covariances, masked_view_covariances, masked_view_projections,
    masking_theoretical_params, rotated_cross_covariance, simulate_temporal, temporal_theoretical_params, MaskingSpec, TemporalSpec,
};
use ssl_dynamics::network::{init_balanced, init_gaussian, init_structured, learning_order, train, NetworkError, TrainData, TrainTrace};
use ssl_dynamics::ode::{self, critical_time, empirical_critical_time, integrate_with, Horizon, IntegratorOptions, OdeProblem, OdeTrajectory};
use ssl_dynamics::{GaussianDataSpec, Objective};

use crate::config::{AxisScale, CriticalTimeParams, Experiment, ExperimentConfig, ExperimentKind, InitSpec, MaskingParams, NetTrainParams, OdeSweepParams, RatioStudyParams, TemporalParams, TrainingMode};
use crate::error::{LabError, Result};
use crate::plot::{critical_time_svg, generative_svg, heatmap_svg, line_svg, PlotStyle, Series};
use crate::schema::{to_csv, CriticalTimeRow, GenerativeRow, MatrixRow, Schema, TrajectoryRow};

pub const METADATA_FILE: &str = "metadata.json";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Root directory; the run goes to `<root>/<name>`.
    pub output_root: Option<PathBuf>,
    pub seed_override: Option<u64>,
}

/// Run metadata, written as `metadata.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub name: String,
    pub kind: ExperimentKind,
    /// The config exactly as read.
    pub config: Value,
    pub seed_override: Option<u64>,
    pub library_version: String,
    pub cli_version: String,
    /// Depths `L` of this run; ODE time is `L` times network time.
    pub time_rescaling_l: Vec<u32>,
    /// Data rows (excluding the header) of every CSV file.
    pub records: BTreeMap<String, usize>,
    pub plots: Vec<String>,
    pub details: Value,
    pub wall_time_seconds: f64,
}

impl Metadata {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(METADATA_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| LabError::format(&path, e.to_string()))
    }

    /// The config echo, re-validated.
    pub fn config(&self) -> Result<ExperimentConfig> {
        let mut c = ExperimentConfig::from_value(self.config.clone())?;
        if let Some(s) = self.seed_override {
            c.override_seed(s);
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub csv_files: Vec<PathBuf>,
    pub svg_files: Vec<PathBuf>,
    pub other_files: Vec<PathBuf>,
    pub metadata: Metadata,
}

enum Artifact {
    Csv { name: String, bytes: Vec<u8>, records: usize },
    Svg { name: String, text: String },
    Json { name: String, value: Value },
}

#[derive(Default)]
struct Outputs {
    files: Vec<Artifact>,
    details: Value,
}

impl Outputs {
    fn csv<T: Serialize>(&mut self, name: String, rows: &[T], schema: Schema) -> Result<()> {
        let bytes = to_csv(rows, schema)?;
        self.files.push(Artifact::Csv { name, bytes, records: rows.len() });
        Ok(())
    }

    fn svg(&mut self, name: String, text: String) {
        self.files.push(Artifact::Svg { name, text });
    }
}

/// Where a run writes: `<root>/<name>`, else the config's `output_dir`,
/// else `runs/<name>`.
pub fn resolve_dir(config: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    match (&opts.output_root, &config.output_dir) {
        (Some(root), _) => root.join(&config.name),
        (None, Some(dir)) => dir.clone(),
        (None, None) => PathBuf::from("runs").join(&config.name),
    }
}

pub fn run(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunArtifacts> {
    let start = Instant::now();
    let mut effective = config.clone();
    if let Some(seed) = opts.seed_override {
        effective.override_seed(seed);
    }
    let name = effective.name.clone();
    let outputs = match &effective.experiment {
        Experiment::OdeSweep(p) => ode_sweep(&name, p)?,
        Experiment::NetTrain(p) => net_train(&name, p)?,
        Experiment::CriticalTimeStudy(p) => critical_time_study(&name, p)?,
        Experiment::RatioStudy(p) => ratio_study(&name, p)?,
        Experiment::GenmodelTemporal(p) => temporal(&name, p)?,
        Experiment::GenmodelMasking(p) => masking(&name, p)?,
    };

    let dir = resolve_dir(config, opts);
    std::fs::create_dir_all(&dir).map_err(|e| LabError::io(&dir, e))?;
    let mut records = BTreeMap::new();
    let (mut csv_files, mut svg_files, mut other_files, mut plots) = (vec![], vec![], vec![], vec![]);
    for artifact in outputs.files {
        let (file, bytes) = match artifact {
            Artifact::Csv { name, bytes, records: n } => {
                records.insert(name.clone(), n);
                csv_files.push(dir.join(&name));
                (name, bytes)
            }
            Artifact::Svg { name, text } => {
                plots.push(name.clone());
                svg_files.push(dir.join(&name));
                (name, text.into_bytes())
            }
            Artifact::Json { name, value } => {
                other_files.push(dir.join(&name));
                (name, pretty(&value))
            }
        };
        let path = dir.join(&file);
        std::fs::write(&path, bytes).map_err(|e| LabError::io(&path, e))?;
    }
    let metadata = Metadata {
        name,
        kind: effective.kind(),
        config: config.raw.clone(),
        seed_override: opts.seed_override,
        library_version: ssl_dynamics::VERSION.to_string(),
        cli_version: env!("CARGO_PKG_VERSION").to_string(),
        time_rescaling_l: effective.experiment.depths(),
        records,
        plots,
        details: outputs.details,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    let path = dir.join(METADATA_FILE);
    std::fs::write(&path, pretty(&serde_json::to_value(&metadata).expect("metadata serialises"))).map_err(|e| LabError::io(&path, e))?;
    Ok(RunArtifacts { dir, csv_files, svg_files, other_files, metadata })
}

fn pretty(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("json value serialises");
    s.push(b'\n');
    s
}

fn style(axis: AxisScale, log_y: bool, title: String) -> PlotStyle {
    PlotStyle { log_x: axis == AxisScale::Log, log_y, title: Some(title) }
}

// ------------------------------------------------------------ ode sweep

fn sample_times(traj: &OdeTrajectory, samples: usize, axis: AxisScale) -> Vec<f64> {
    let t_end = traj.times.last().copied().unwrap_or(0.0);
    let mut times = vec![0.0];
    match axis {
        AxisScale::Linear => times.extend((1..samples).map(|k| t_end * k as f64 / (samples - 1) as f64)),
        AxisScale::Log => {
            let first = traj.times.iter().copied().find(|&t| t > 0.0).unwrap_or(t_end).max(t_end * 1e-6);
            let (a, b) = (first.ln(), t_end.ln());
            times.extend((0..samples).map(|k| (a + (b - a) * k as f64 / (samples - 1) as f64).exp()));
            if let Some(last) = times.last_mut() {
                *last = t_end;
            }
        }
    }
    times
}

fn ode_context(name: &str, o: Objective, l: u32, lambda: f64, rho: f64, eps: f64) -> String {
    format!("experiment `{name}` ({o}, L={l}, lambda={lambda}, rho={rho}, epsilon={eps})")
}

fn ode_sweep(name: &str, p: &OdeSweepParams) -> Result<Outputs> {
    let mut points = vec![];
    for &o in &p.objectives {
        for &l in &p.depths {
            for (i, f) in p.features.iter().enumerate() {
                points.push((o, l, i, *f));
            }
        }
    }
    let opts = IntegratorOptions::default();
    let results: Vec<Result<(Vec<TrajectoryRow>, CriticalTimeRow, f64)>> = points
        .par_iter()
        .map(|&(o, l, i, f)| {
            let ctx = || ode_context(name, o, l, f.lambda, f.rho, p.epsilon);
            let horizon = p.horizon.map_or(Horizon::Auto, Horizon::Fixed);
            let problem = OdeProblem::new(o, l, f.lambda, f.rho, p.epsilon, horizon).map_err(|e| LabError::numeric(ctx(), e))?;
            let traj = integrate_with(&problem, &opts).map_err(|e| LabError::numeric(ctx(), e))?;
            let rows = sample_times(&traj, p.samples, p.axis).into_iter().map(|t| TrajectoryRow { time: t, feature_index: i, w_bar: traj.interpolate(t) }).collect();
            let measured = empirical_critical_time(&traj, p.p).unwrap_or(f64::NAN);
            let formula = critical_time_formula(o, p.epsilon, f.lambda, f.rho, l).map_err(|e| LabError::numeric(ctx(), e))?.leading;
            let row = CriticalTimeRow { objective: o, depth: l, epsilon: p.epsilon, lambda: f.lambda, rho: f.rho, p: p.p, t_star_measured: measured, t_star_formula: formula };
            Ok((rows, row, traj.last_value()))
        })
        .collect();
    let mut out = Outputs::default();
    let mut ct_rows = vec![];
    let mut finals = vec![];
    let mut series: BTreeMap<(Objective, u32), Vec<Series>> = BTreeMap::new();
    for (&(o, l, i, f), r) in points.iter().zip(results) {
        let (rows, ct, last) = r?;
        finals.push(json!({"objective": o, "L": l, "feature_index": i, "w_final": last, "fixed_point": ode::fixed_point(o, f.rho, l)}));
        series.entry((o, l)).or_default().push(Series {
            label: format!("λ={} ρ={}", f.lambda, f.rho),
            points: rows.iter().map(|r| (r.time, r.w_bar)).collect(),
            dashed: false,
        });
        out.csv(format!("traj_{o}_L{l}_f{i}.csv"), &rows, Schema::Trajectory)?;
        ct_rows.push(ct);
    }
    out.csv("critical_times.csv".into(), &ct_rows, Schema::CriticalTime)?;
    for ((o, l), s) in series {
        let svg = line_svg(&s, &style(p.axis, false, format!("{o} L={l}")), "time", "w_bar")?;
        out.svg(format!("traj_{o}_L{l}.svg"), svg);
    }
    out.details = json!({ "final_values": finals });
    Ok(out)
}

// ------------------------------------------------------ critical times

fn critical_row(name: &str, o: Objective, l: u32, lambda: f64, rho: f64, eps: f64, p: f64) -> Result<CriticalTimeRow> {
    let ctx = || ode_context(name, o, l, lambda, rho, eps);
    let problem = OdeProblem::auto(o, l, lambda, rho, eps).map_err(|e| LabError::numeric(ctx(), e))?;
    let measured = critical_time(&problem, p, &IntegratorOptions::default()).map_err(|e| LabError::numeric(ctx(), e))?;
    let formula = critical_time_formula(o, eps, lambda, rho, l).map_err(|e| LabError::numeric(ctx(), e))?.leading;
    Ok(CriticalTimeRow { objective: o, depth: l, epsilon: eps, lambda, rho, p, t_star_measured: measured, t_star_formula: formula })
}

fn critical_time_study(name: &str, p: &CriticalTimeParams) -> Result<Outputs> {
    let mut points = vec![];
    for &o in &p.objectives {
        for &l in &p.depths {
            for &lambda in &p.lambdas {
                for &rho in &p.rhos {
                    for &eps in &p.epsilons {
                        points.push((o, l, lambda, rho, eps));
                    }
                }
            }
        }
    }
    let rows: Vec<CriticalTimeRow> = points.par_iter().map(|&(o, l, lambda, rho, eps)| critical_row(name, o, l, lambda, rho, eps, p.p)).collect::<Result<_>>()?;
    let mut out = Outputs::default();
    out.csv("critical_times.csv".into(), &rows, Schema::CriticalTime)?;
    out.svg("critical_times.svg".into(), critical_svg(&rows, name)?);
    Ok(out)
}

fn critical_svg(rows: &[CriticalTimeRow], name: &str) -> Result<String> {
    critical_time_svg(rows, &PlotStyle { log_x: true, log_y: true, title: Some(name.to_string()) })
}

/// Measured and leading-order ratios `t*(ρ)/t*(ρ′)` of a ratio study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioRecord {
    pub objective: Objective,
    #[serde(rename = "L")]
    pub depth: u32,
    pub epsilon: f64,
    pub measured_ratio: f64,
    pub formula_ratio: Option<f64>,
}

fn ratio_study(name: &str, p: &RatioStudyParams) -> Result<Outputs> {
    let mut points = vec![];
    for &o in &p.objectives {
        for &l in &p.depths {
            for &eps in &p.epsilons {
                points.push((o, l, eps, p.rho));
                points.push((o, l, eps, p.rho_prime));
            }
        }
    }
    let rows: Vec<CriticalTimeRow> = points.par_iter().map(|&(o, l, eps, rho)| critical_row(name, o, l, p.lambda, rho, eps, p.p)).collect::<Result<_>>()?;
    let ratios: Vec<RatioRecord> = rows
        .chunks(2)
        .map(|pair| RatioRecord {
            objective: pair[0].objective,
            depth: pair[0].depth,
            epsilon: pair[0].epsilon,
            measured_ratio: pair[0].t_star_measured / pair[1].t_star_measured,
            formula_ratio: critical_time_ratio_formula(pair[0].epsilon, p.lambda, p.rho, p.rho_prime, pair[0].depth, pair[0].objective).ok(),
        })
        .collect();
    let mut out = Outputs::default();
    out.csv("critical_times.csv".into(), &rows, Schema::CriticalTime)?;
    out.svg("critical_times.svg".into(), critical_svg(&rows, name)?);
    out.details = json!({ "ratios": ratios });
    Ok(out)
}

// -------------------------------------------------------- network runs

/// One network training run in an order report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderRecord {
    pub objective: Objective,
    pub seed: u64,
    pub lr_used: f64,
    pub lr_halvings: u32,
    /// Tracked feature indices, earliest learned first.
    pub order: Vec<usize>,
    /// Network-time crossings of `p · fixed point`, per tracked feature in
    /// config order.
    pub crossing_times: Vec<Option<f64>>,
    pub initial_projections: Vec<f64>,
    pub final_projections: Vec<f64>,
    pub fixed_points: Vec<f64>,
    /// Tracked indices sorted by descending `λ`.
    pub descending_lambda: Vec<usize>,
}

fn net_spec(p: &NetTrainParams) -> GaussianDataSpec {
    let mut feats = vec![FeatureParams::new(0.0, p.background_variance); p.d];
    for f in &p.features {
        feats[f.index] = FeatureParams::from_lambda_rho(f.lambda, f.rho);
    }
    GaussianDataSpec::new(feats)
}

fn train_with_fallback(p: &NetTrainParams, spec: &GaussianDataSpec, o: Objective, seed: u64) -> std::result::Result<(TrainTrace, f64, u32), NetworkError> {
    let mut lr = p.lr;
    let mut halvings = 0;
    loop {
        let mut model = match p.init {
            InitSpec::Structured { epsilon } => init_structured(p.d, p.depth, epsilon, o, seed)?,
            InitSpec::Gaussian { scale } => init_gaussian(p.d, p.depth, scale, o, seed)?,
            InitSpec::Balanced { scale } => init_balanced(p.d, p.depth, scale, o, seed)?,
        };
        let data = match p.training {
            TrainingMode::Population => TrainData::Population(spec.clone()),
            TrainingMode::Sgd { batch_size } => TrainData::Sampled { spec: spec.clone(), batch_size, seed },
        };
        match train(&mut model, &data, lr, p.steps, p.record_every) {
            Ok(trace) => return Ok((trace, lr, halvings)),
            Err(NetworkError::Divergence { .. }) if halvings < p.max_lr_halvings => {
                lr /= 2.0;
                halvings += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

fn net_train(name: &str, p: &NetTrainParams) -> Result<Outputs> {
    let spec = net_spec(p);
    let idx: Vec<usize> = p.features.iter().map(|f| f.index).collect();
    let mut runs = vec![];
    for &o in &p.objectives {
        for &seed in &p.seeds {
            runs.push((o, seed));
        }
    }
    let results: Vec<Result<(Vec<TrajectoryRow>, OrderRecord)>> = runs
        .par_iter()
        .map(|&(o, seed)| {
            let ctx = || format!("experiment `{name}` ({o}, seed {seed})");
            let (trace, lr_used, lr_halvings) = train_with_fallback(p, &spec, o, seed).map_err(|e| LabError::numeric(ctx(), e))?;
            let tracked = trace.select_features(&idx);
            let fixed: Vec<f64> = p.features.iter().map(|f| ode::fixed_point(o, f.rho, p.depth as u32)).collect();
            let lo = learning_order(&tracked, p.p, &fixed).map_err(|e| LabError::numeric(ctx(), e))?;
            let mut rows = vec![];
            for (k, t) in tracked.step_times.iter().enumerate() {
                for (j, &i) in idx.iter().enumerate() {
                    rows.push(TrajectoryRow { time: *t, feature_index: i, w_bar: tracked.projections[k][j] });
                }
            }
            let mut by_lambda: Vec<usize> = (0..idx.len()).collect();
            by_lambda.sort_by(|&a, &b| p.features[b].lambda.total_cmp(&p.features[a].lambda).then(a.cmp(&b)));
            Ok((
                rows,
                OrderRecord {
                    objective: o,
                    seed,
                    lr_used,
                    lr_halvings,
                    order: lo.order.iter().map(|&j| idx[j]).collect(),
                    crossing_times: lo.crossing_times,
                    initial_projections: tracked.projections[0].clone(),
                    final_projections: tracked.last_projections().to_vec(),
                    fixed_points: fixed,
                    descending_lambda: by_lambda.iter().map(|&j| idx[j]).collect(),
                },
            ))
        })
        .collect();
    let mut out = Outputs::default();
    let mut records = vec![];
    for (&(o, seed), r) in runs.iter().zip(results) {
        let (rows, rec) = r?;
        let file = format!("projections_{o}_s{seed}");
        let series: Vec<Series> = idx
            .iter()
            .map(|&i| Series {
                label: format!("feature {i}"),
                points: rows.iter().filter(|r| r.feature_index == i).map(|r| (r.time, r.w_bar)).collect(),
                dashed: false,
            })
            .collect();
        out.csv(format!("{file}.csv"), &rows, Schema::Trajectory)?;
        out.svg(format!("{file}.svg"), line_svg(&series, &style(p.axis, false, format!("{o} seed {seed}")), "step * lr", "||W e_i||")?);
        records.push(rec);
    }
    let report = serde_json::to_value(&records).expect("order records serialise");
    out.files.push(Artifact::Json { name: "order_report.json".into(), value: report.clone() });
    out.details = json!({ "time_unit": "network time step*lr; ODE time is L times this", "runs": report });
    Ok(out)
}

// --------------------------------------------------- generative models

fn temporal(name: &str, p: &TemporalParams) -> Result<Outputs> {
    let t_max = *p.lengths.iter().max().expect("validated non-empty");
    let mut spec = TemporalSpec::blocks(&p.norms_sq, p.block_len, p.autocorr.clone(), p.noise_std.clone(), t_max);
    spec.burn_in = p.burn_in;
    let theory = temporal_theoretical_params(&spec).map_err(|e| LabError::numeric(format!("experiment `{name}`"), e))?;
    let dirs = spec.directions();
    let results: Vec<Result<Vec<GenerativeRow>>> = p
        .seeds
        .par_iter()
        .map(|&seed| {
            let ctx = || format!("experiment `{name}` (seed {seed})");
            let seq = simulate_temporal(&spec, seed).map_err(|e| LabError::numeric(ctx(), e))?;
            let mut rows = vec![];
            for &t in &p.lengths {
                let frames = seq.frames.rows(0, t).into_owned();
                let est = empirical_covariances(&consecutive_pairs(&frames).map_err(|e| LabError::numeric(ctx(), e))?).map_err(|e| LabError::numeric(ctx(), e))?;
                let diag = diagonalizability_error(&est).map_err(|e| LabError::numeric(ctx(), e))?;
                for (a, th) in theory.iter().enumerate() {
                    let (s2, l) = directional_params(&est, dirs.column(a).as_slice()).map_err(|e| LabError::numeric(ctx(), e))?;
                    rows.push(GenerativeRow { run_seed: seed, feature: a, lambda_hat: l, rho_hat: l / s2, lambda_theory: th.lambda, rho_theory: th.rho(), diag_error: diag, t_or_n: t });
                }
            }
            Ok(rows)
        })
        .collect();
    let mut rows = vec![];
    for r in results {
        rows.extend(r?);
    }
    let mut out = Outputs::default();
    out.csv("temporal.csv".into(), &rows, Schema::Generative)?;
    out.svg("temporal.svg".into(), generative_svg(&rows, &PlotStyle { log_x: true, log_y: true, title: Some(name.to_string()) })?);
    if p.heatmap {
        let seq = simulate_temporal(&spec, p.seeds[0]).map_err(|e| LabError::numeric(format!("experiment `{name}`"), e))?;
        let est = empirical_covariances(&consecutive_pairs(&seq.frames).map_err(|e| LabError::numeric(name, e))?).map_err(|e| LabError::numeric(name, e))?;
        let m = rotated_cross_covariance(&est).map_err(|e| LabError::numeric(name, e))?;
        let cells: Vec<MatrixRow> = (0..m.nrows()).flat_map(|r| (0..m.ncols()).map(move |c| (r, c))).map(|(row, col)| MatrixRow { row, col, value: m[(row, col)] }).collect();
        out.csv("heatmap.csv".into(), &cells, Schema::Matrix)?;
        out.svg("heatmap.svg".into(), heatmap_svg(&cells, &PlotStyle { title: Some(format!("|QᵀΣxyQ|, T={t_max}, seed {}", p.seeds[0])), ..Default::default() })?);
    }
    Ok(out)
}

/// Masking spec of a config.
pub fn masking_spec(p: &MaskingParams) -> MaskingSpec {
    let coeff_vars = (0..p.d).map(|k| if k < p.active_count { p.active_var } else { p.inactive_var }).collect();
    MaskingSpec { d: p.d, f: p.f, coeff_vars, noise_var: p.noise_var, basis_seed: p.basis_seed }
}

fn masking(name: &str, p: &MaskingParams) -> Result<Outputs> {
    let spec = masking_spec(p);
    let ctx = |extra: String| format!("experiment `{name}`{extra}");
    let theory = masking_theoretical_params(&spec).map_err(|e| LabError::numeric(ctx(String::new()), e))?;
    let included: Vec<usize> = (0..p.d).filter(|&k| theory[k].lambda > 0.0).collect();
    let basis = spec.basis();
    let mut rows = vec![];
    for &seed in &p.seeds {
        for &n in &p.sample_sizes {
            let c = || ctx(format!(" (seed {seed}, n {n})"));
            let (params, diag) = if p.diag_error {
                let est = masked_view_covariances(&spec, &basis, n, seed).map_err(|e| LabError::numeric(c(), e))?;
                let diag = diagonalizability_error(&est).map_err(|e| LabError::numeric(c(), e))?;
                let bx = basis.transpose() * &est.xx * &basis;
                let by = basis.transpose() * &est.xy * &basis;
                (included.iter().map(|&k| (bx[(k, k)], by[(k, k)])).collect::<Vec<_>>(), diag)
            } else {
                let dirs = basis.select_columns(&included);
                (masked_view_projections(&spec, &basis, n, seed, &dirs).map_err(|e| LabError::numeric(c(), e))?, f64::NAN)
            };
            for (&k, &(s2, l)) in included.iter().zip(&params) {
                rows.push(GenerativeRow { run_seed: seed, feature: k, lambda_hat: l, rho_hat: l / s2, lambda_theory: theory[k].lambda, rho_theory: theory[k].rho(), diag_error: diag, t_or_n: n });
            }
        }
    }
    let mut out = Outputs::default();
    out.csv("masking.csv".into(), &rows, Schema::Generative)?;
    out.svg("masking.svg".into(), generative_svg(&rows, &PlotStyle { log_x: true, log_y: true, title: Some(name.to_string()) })?);
    out.details = json!({
        "excluded_factors": p.d - included.len(),
        "exclusion_rule": "factors with lambda_theory <= 0 (at or below the mean factor variance) are not compared with theory",
        "mean_coeff_var": spec.mean_coeff_var(),
    });
    Ok(out)
}
