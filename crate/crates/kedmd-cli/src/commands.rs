//! Pipeline orchestration behind the CLI subcommands: grid, data, fit,
//! closed loop, analysis tables and figure reproduction.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use kedmd::analysis::{
    compute_alpha, compute_b_eps, convergence_study, estimate_growth_bounds, estimate_modulus,
    plant_lipschitz,
};
use kedmd::bounds::AxisBox;
use kedmd::kernel::fill_distance;
use kedmd::mpc::{mpc_closed_loop, ClosedLoopTrace};
use kedmd::nalgebra::DVector;
use kedmd::surrogate::{fit_control_surrogate, validate_dataset, ErrorConstants};
use kedmd::systems::{chebyshev_grid, generate_cluster_data_with, grid_to_csv};
use kedmd::{ControlSurrogate, PredictionModel};

use crate::config::{eps_c_over_d, ConfigError, RunConfig};
use crate::plot::{svg_log_plot, PlotSeries};
use crate::stats::{summarize, TraceSummary};

/// Errors with their process exit code: configuration problems exit with 2,
/// numerical/infeasibility failures with 1.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Run(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl From<kedmd::Error> for CliError {
    fn from(e: kedmd::Error) -> Self {
        match e {
            kedmd::Error::InvalidArgument { .. } | kedmd::Error::UnsupportedKernel { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Run(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(format!("io error: {e}"))
    }
}

fn ensure_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    Ok(())
}

/// Fits the surrogate of the configured experiment: cluster grid, dataset,
/// two-step identification, error-constant diagnostics. Writes `grid.csv`,
/// `dataset.csv`, `model.bin`, `fit_diagnostics.{csv,txt}`.
pub struct FitOutcome {
    pub model_path: PathBuf,
    pub constants: ErrorConstants,
    pub total_samples: usize,
}

pub fn cmd_fit(cfg: &RunConfig, out: &Path) -> Result<FitOutcome, CliError> {
    ensure_dir(out)?;
    let plant = cfg.plant()?;
    let experiment = cfg.experiment()?;
    let root = experiment.grid_root()?;
    let half_width = cfg.domain_half_width()?;
    let clusters = chebyshev_grid(root, half_width)?;
    fs::write(out.join("grid.csv"), grid_to_csv(&clusters))?;

    let data = generate_cluster_data_with(
        &plant,
        &clusters,
        experiment.cluster_radius,
        experiment.samples_per_cluster,
        experiment.seed,
        cfg.ball_sampling,
    )?;
    let report = validate_dataset(&data);
    if !report.passed {
        return Err(CliError::Run(format!(
            "dataset validation failed:\n{report}"
        )));
    }
    let escaped: usize = (0..clusters.len())
        .map(|i| {
            data.samples(i)
                .iter()
                .filter(|s| !plant.domain.contains(&s.successor))
                .count()
        })
        .sum();
    if escaped > 0 {
        eprintln!(
            "warning: {escaped} of {} sampled successors leave the domain (forward invariance does not hold on the box); proceeding",
            data.total_samples()
        );
    }
    data.save_csv(out.join("dataset.csv"))?;

    let surrogate = fit_control_surrogate(&data, &experiment.kernel, experiment.lambda)?;
    let model_path = out.join("model.bin");
    surrogate.save(&model_path)?;

    let constants = surrogate.error_constants(&plant.domain, cfg.fill_resolution)?;
    fs::write(out.join("fit_diagnostics.txt"), format!("{constants}\n"))?;
    fs::write(
        out.join("fit_diagnostics.csv"),
        format!(
            "fill_distance,eps_h,inverse_norm,max_pinv_norm,cube_quadratic_max,cube_bound_exact,regression_constant,eps_c,lambda,log10_condition\n{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            constants.fill_distance,
            constants.eps_h,
            constants.inverse_norm,
            constants.max_pinv_norm,
            constants.cube_quadratic_max,
            if constants.cube_bound_exact { "exact" } else { "lower" },
            constants.regression_constant,
            constants.cluster_radius,
            constants.lambda,
            constants.log10_condition,
        ),
    )?;
    Ok(FitOutcome {
        model_path,
        constants,
        total_samples: data.total_samples(),
    })
}

/// Runs the receding-horizon loop against the true plant, predicting either
/// with a fitted surrogate (`model` path) or with the exact plant
/// (`exact_plant = true`). Writes `trace.csv` and `summary.txt`.
pub struct MpcOutcome {
    pub summary: TraceSummary,
    pub trace_path: PathBuf,
}

pub fn cmd_mpc(cfg: &RunConfig, model: Option<&Path>, out: &Path) -> Result<MpcOutcome, CliError> {
    ensure_dir(out)?;
    let plant = cfg.plant()?;
    let x0 = cfg.initial_state();
    if !plant.domain.contains(&x0) {
        eprintln!(
            "warning: initial state lies outside the sampling domain; surrogate predictions decay to zero there"
        );
    }
    let surrogate;
    let model_ref: &dyn PredictionModel = if cfg.exact_plant {
        &plant
    } else {
        let path = model.ok_or_else(|| {
            CliError::Config("surrogate mode needs --model (or set exact_plant = true)".into())
        })?;
        surrogate = ControlSurrogate::load(path)?;
        &surrogate
    };
    let trace = mpc_closed_loop(
        &plant,
        model_ref,
        &x0,
        cfg.steps,
        &cfg.stage_cost()?,
        &cfg.ocp_config()?,
    )?;
    let trace_path = out.join("trace.csv");
    fs::write(&trace_path, trace.to_csv())?;
    let summary = summarize(&trace);
    fs::write(out.join("summary.txt"), summary.to_text())?;
    Ok(MpcOutcome {
        summary,
        trace_path,
    })
}

/// Stability analysis around a fitted model: growth bounds on the true
/// plant, the horizon-degradation table, the perturbed-bound sensitivity
/// table, modulus and convergence diagnostics. Writes CSV tables plus a
/// human-readable `report.txt`.
pub fn cmd_analyze(cfg: &RunConfig, model: &Path, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let plant = cfg.plant()?;
    let surrogate = ControlSurrogate::load(model)?;
    let cost = cfg.stage_cost()?;
    let ocp = cfg.ocp_config()?;
    let mut report = String::new();

    // growth bounds over the sample grid, origin excluded
    let samples: Vec<DVector<f64>> = AxisBox::cube(plant.state_dim(), 1.0)
        .grid(cfg.growth_grid)
        .into_iter()
        .filter(|x| x.norm() > 1e-9)
        .collect();
    let n_max = cfg.n_max.max(2);
    let bounds = estimate_growth_bounds(&plant, &cost, &ocp, &samples, n_max)?;
    let mut csv = String::from("k,B_k,attaining_sample\n");
    for k in 1..=n_max {
        csv.push_str(&format!(
            "{k},{:.16e},{}\n",
            bounds.bound(k),
            bounds.attaining[k - 1]
        ));
    }
    fs::write(out.join("growth_bounds.csv"), csv)?;
    report.push_str(&format!(
        "growth bounds over {} samples ({} dropped), k = 1..{n_max}\n",
        bounds.samples_used,
        bounds.dropped.len()
    ));
    report.push_str(&format!(
        "  B_1 = {:.6}\n  B_{n_max} = {:.6}\n",
        bounds.bound(1),
        bounds.bound(n_max)
    ));

    // horizon-degradation table
    let mut csv = String::from("N,alpha_N\n");
    let mut minimal_positive: Option<usize> = None;
    for n in 2..=n_max {
        let alpha = compute_alpha(&bounds.values, n)?;
        if alpha > 0.0 && minimal_positive.is_none() {
            minimal_positive = Some(n);
        }
        csv.push_str(&format!("{n},{alpha:.16e}\n"));
    }
    fs::write(out.join("alpha_table.csv"), csv)?;
    match minimal_positive {
        Some(n) => report.push_str(&format!("minimal N with alpha_N > 0: {n}\n")),
        None => report.push_str("no N in [2:n_max] reaches alpha_N > 0\n"),
    }

    // perturbed growth bound sensitivity in eps_h (C = 1 by convention; the
    // true proportionality constant is not identifiable from data)
    let lipschitz = plant_lipschitz(&plant, 41);
    let horizon = cfg.horizon.clamp(1, n_max);
    let mut csv = String::from("eps_h,B_N_eps\n");
    report.push_str(&format!(
        "perturbed bound B_N^eps at N = {horizon}, L_F = {lipschitz:.4}, C = 1\n"
    ));
    for eps_h in [0.0, 1e-3, 1e-2, 0.05, 0.1, 0.2, 0.5] {
        let value = compute_b_eps(
            &bounds.values,
            horizon,
            lipschitz,
            1.0,
            eps_h,
            cost.lambda_max(),
            cost.lambda_min(),
        )?;
        csv.push_str(&format!("{eps_h:.16e},{value:.16e}\n"));
    }
    fs::write(out.join("b_eps_table.csv"), csv)?;

    // empirical modulus of continuity
    let modulus = estimate_modulus(
        &surrogate,
        &plant.domain,
        &plant.control_box,
        cfg.modulus_pairs,
        cfg.seed,
    )?;
    report.push_str(&format!(
        "empirical modulus-of-continuity constant: {modulus:.6}\n"
    ));

    // error constants of the loaded surrogate
    let constants = surrogate.error_constants(&plant.domain, cfg.fill_resolution)?;
    report.push_str("error constants:\n");
    for line in constants.to_string().lines() {
        report.push_str(&format!("  {line}\n"));
    }

    // convergence study at cluster radius zero
    let mut base = cfg.experiment()?;
    base.cluster_radius = 0.0;
    let test_points = state_control_grid(&plant, 100, 5);
    let study = convergence_study(
        &plant,
        &base,
        &cfg.convergence_d,
        &test_points,
        cfg.fill_resolution,
    )?;
    let mut csv = String::from("d,fill_distance,sup_error\n");
    for row in &study.rows {
        csv.push_str(&format!(
            "{},{:.16e},{:.16e}\n",
            row.cluster_count, row.fill_distance, row.sup_error
        ));
    }
    fs::write(out.join("convergence.csv"), csv)?;
    report.push_str(&format!(
        "convergence study: log-log slope {:.3} (rms residual {:.3})\n",
        study.slope, study.slope_residual
    ));

    fs::write(out.join("report.txt"), report)?;
    Ok(())
}

/// Deterministic test set: a `resolution^n` state grid crossed with
/// `control_levels` evenly spaced controls, cycled pointwise.
pub fn state_control_grid(
    plant: &kedmd::ControlAffinePlant,
    resolution: usize,
    control_levels: usize,
) -> Vec<(DVector<f64>, DVector<f64>)> {
    let m = plant.control_dim();
    let lo = plant.control_box.lo();
    let hi = plant.control_box.hi();
    plant
        .domain
        .grid(resolution)
        .into_iter()
        .enumerate()
        .map(|(i, x)| {
            let level = (i % control_levels) as f64 / (control_levels - 1).max(1) as f64;
            let u = DVector::from_fn(m, |a, _| lo[a] + (hi[a] - lo[a]) * level);
            (x, u)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    One,
    Two,
}

impl Figure {
    pub fn parse(name: &str) -> Result<Self, CliError> {
        match name {
            "fig1" => Ok(Figure::One),
            "fig2" => Ok(Figure::Two),
            other => Err(CliError::Config(format!(
                "unknown figure `{other}` (expected fig1 or fig2)"
            ))),
        }
    }

    fn file_stem(self) -> &'static str {
        match self {
            Figure::One => "fig1",
            Figure::Two => "fig2",
        }
    }
}

/// One closed-loop scenario of a figure.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub label: String,
    pub file_tag: String,
    pub cluster_count: usize,
    pub eps_c: f64,
    pub horizon: usize,
}

pub fn figure_scenarios(figure: Figure) -> Vec<ScenarioSpec> {
    let spec = |d: usize, eps_c: f64, horizon: usize| {
        let eps_label = if eps_c == 0.0 {
            "eps_c=0".to_string()
        } else {
            "eps_c=sqrt(2)/d".to_string()
        };
        let tag = if eps_c == 0.0 { "eps0" } else { "epsc" };
        ScenarioSpec {
            label: format!("d={d}, {eps_label}, N={horizon}"),
            file_tag: format!("d{d}_{tag}"),
            cluster_count: d,
            eps_c,
            horizon,
        }
    };
    match figure {
        Figure::One => vec![
            spec(441, 0.0, 10),
            spec(441, eps_c_over_d(441), 10),
            spec(1681, 0.0, 10),
            spec(1681, eps_c_over_d(1681), 10),
        ],
        Figure::Two => vec![spec(441, 0.0, 20), spec(441, eps_c_over_d(441), 20)],
    }
}

pub struct ScenarioOutcome {
    pub spec: ScenarioSpec,
    pub trace: ClosedLoopTrace,
    pub summary: TraceSummary,
}

/// Fits the scenario's surrogate and runs the closed loop. Cluster counts of
/// 1681 and beyond get a floor of `lambda = 1e-10`: conditioning of the
/// kernel matrix degrades with the fill distance.
pub fn run_scenario(cfg: &RunConfig, spec: &ScenarioSpec) -> Result<ScenarioOutcome, CliError> {
    let plant = cfg.plant()?;
    let root = (spec.cluster_count as f64).sqrt().round() as usize;
    if root * root != spec.cluster_count {
        return Err(CliError::Config(format!(
            "cluster count {} is not a perfect square",
            spec.cluster_count
        )));
    }
    let clusters = chebyshev_grid(root, cfg.domain_half_width()?)?;
    let data = generate_cluster_data_with(
        &plant,
        &clusters,
        spec.eps_c,
        cfg.samples_per_cluster,
        cfg.seed,
        cfg.ball_sampling,
    )?;
    let lambda = if spec.cluster_count >= 1681 {
        cfg.lambda.max(1e-10)
    } else {
        cfg.lambda
    };
    let surrogate = fit_control_surrogate(&data, &cfg.kernel()?, lambda)?;
    let mut ocp = cfg.ocp_config()?;
    ocp.horizon = spec.horizon;
    let trace = mpc_closed_loop(
        &plant,
        &surrogate,
        &cfg.initial_state(),
        cfg.steps,
        &cfg.stage_cost()?,
        &ocp,
    )?;
    let summary = summarize(&trace);
    Ok(ScenarioOutcome {
        spec: spec.clone(),
        trace,
        summary,
    })
}

/// Reproduces the closed-loop experiment figures: per-scenario trace CSVs,
/// one SVG per figure (log-scale `|x(k)|`), and a summary file. Scenarios
/// run concurrently; outputs are deterministic per seed.
pub fn cmd_reproduce(
    cfg: &RunConfig,
    figure: Figure,
    out: &Path,
) -> Result<Vec<ScenarioOutcome>, CliError> {
    ensure_dir(out)?;
    let specs = figure_scenarios(figure);
    let mut slots: Vec<Option<Result<ScenarioOutcome, CliError>>> =
        (0..specs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (spec, slot) in specs.iter().zip(slots.iter_mut()) {
            scope.spawn(move || {
                *slot = Some(run_scenario(cfg, spec));
            });
        }
    });
    let mut outcomes = Vec::with_capacity(specs.len());
    for slot in slots {
        outcomes.push(slot.expect("scenario thread finished")?);
    }

    let stem = figure.file_stem();
    let mut summary_text = String::new();
    for outcome in &outcomes {
        let csv_path = out.join(format!("{stem}_{}.csv", outcome.spec.file_tag));
        fs::write(&csv_path, outcome.trace.to_csv())?;
        summary_text.push_str(&format!(
            "[{}]\n{}\n",
            outcome.spec.label,
            outcome.summary.to_text()
        ));
    }
    if cfg.plots {
        let series: Vec<PlotSeries> = outcomes
            .iter()
            .map(|o| PlotSeries {
                label: o.spec.label.clone(),
                norms: o.trace.norms(),
            })
            .collect();
        let title = match figure {
            Figure::One => "kEDMD-MPC closed-loop error, N = 10",
            Figure::Two => "kEDMD-MPC closed-loop error, N = 20, d = 441",
        };
        fs::write(
            out.join(format!("{stem}.svg")),
            svg_log_plot(title, &series),
        )?;
    }
    fs::write(out.join(format!("{stem}_summary.txt")), summary_text)?;
    Ok(outcomes)
}

/// Infeasibility or an aborted trace maps to exit code 1 at the CLI surface.
pub fn abort_to_error(summary: &TraceSummary) -> Result<(), CliError> {
    match &summary.aborted {
        Some((step, why)) => Err(CliError::Run(format!(
            "closed loop aborted at step {step}: {why}"
        ))),
        None => Ok(()),
    }
}

/// Fill-distance helper shared with diagnostics output.
pub fn grid_fill_distance(cfg: &RunConfig) -> Result<f64, CliError> {
    let experiment = cfg.experiment()?;
    let clusters = chebyshev_grid(experiment.grid_root()?, cfg.domain_half_width()?)?;
    let plant = cfg.plant()?;
    Ok(fill_distance(
        &clusters,
        &plant.domain,
        cfg.fill_resolution,
    )?)
}
