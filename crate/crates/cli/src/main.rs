//! `sdploc`: scenario generation, bound inspection, single-shot localization
//! and Monte Carlo batches.
//!
//! Exit codes: 0 success, 2 input error, 3 degraded solve (artifacts are
//! still written).

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sdploc::io::{
    bounds_from_csv, bounds_to_csv, format_sig9, measurements_from_csv, measurements_to_csv, positions_to_csv,
    read_text, to_json_sig9,
};
use sdploc::sim::{
    measure, paper_scenario_with, random_scenario, run_batch, split_seed, Connectivity, NoiseModel, Scenario,
    ScenarioSpec,
};
use sdploc::{
    derive_bounds, localize, localize_bounds, AnchorInput, AnchorVariant, CoefficientMode, EstimatorConfig,
    Formulation, NoiseBoundPolicy, SolverSettings, Status,
};

use manifest::{sibling, RunManifest};

#[derive(Parser)]
#[command(name = "sdploc", version, about = "Sensor localization from NLOS-corrupted ranges")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a scenario file, optionally with a set of noisy measurements.
    Generate(GenerateArgs),
    /// Write the per-edge distance intervals for a set of measurements.
    Bounds(BoundsArgs),
    /// Localize the sensors of one scenario.
    Localize(LocalizeArgs),
    /// Run a Monte Carlo batch.
    Simulate(SimulateArgs),
}

#[derive(Args)]
#[group(id = "layout", required = true, multiple = false)]
struct LayoutArgs {
    /// The 40 m x 40 m layout with 18 fixed anchors.
    #[arg(long, group = "layout")]
    paper_layout: bool,
    /// M anchors drawn uniformly in the field.
    #[arg(long, value_name = "M", group = "layout")]
    random_anchors: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 80)]
    sensors: usize,
    #[command(flatten)]
    layout: LayoutArgs,
    /// Side of the square field for random layouts, meters.
    #[arg(long, default_value_t = 40.0)]
    side: f64,
    /// full, sensor-anchor-only or radius:<meters>.
    #[arg(long, default_value = "full", value_parser = parse_connectivity)]
    connectivity: Connectivity,
    #[arg(long)]
    out: PathBuf,
    /// Also draw measurements and write them here.
    #[arg(long)]
    measurements_out: Option<PathBuf>,
    #[arg(long, default_value = "sigma=0.01,bias=0:0.5,frac=1.0", value_parser = parse_noise)]
    noise: NoiseModel,
    /// Defaults to the second split of the scenario seed.
    #[arg(long)]
    noise_seed: Option<u64>,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    measurements: PathBuf,
    /// abs:<meters> or sigma:<multiplier>.
    #[arg(long, default_value = "sigma:3")]
    nu: String,
    /// LOS noise standard deviation for sigma-multiple bounds.
    #[arg(long, default_value_t = 0.01)]
    sigma: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormulationArg {
    Esdp,
    Fullsdp,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Known,
    Uncertain,
}

#[derive(Args)]
struct EstimatorArgs {
    #[arg(long, value_enum, default_value = "esdp")]
    formulation: FormulationArg,
    #[arg(long, value_enum, default_value = "known")]
    variant: VariantArg,
    /// paper or midpoint.
    #[arg(long, default_value = "midpoint")]
    coeff: String,
    /// abs:<meters> or sigma:<multiplier>.
    #[arg(long, default_value = "sigma:3")]
    nu: String,
    /// LOS noise standard deviation for sigma-multiple bounds.
    #[arg(long, default_value_t = 0.01)]
    sigma: f64,
    /// Polish the relaxation estimate by local descent.
    #[arg(long)]
    refine: bool,
    #[arg(long, default_value_t = 500)]
    refine_iters: usize,
    /// Gap and feasibility tolerance.
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    /// Prior radius of every anchor in the uncertain variant, meters.
    #[arg(long, default_value_t = 0.0)]
    anchor_radius: f64,
    /// Constrain uncertain anchors to their prior discs.
    #[arg(long)]
    enforce_ball: bool,
    /// Print the solver iteration log to stderr.
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Args)]
struct LocalizeArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Measurement CSV; drawn from the scenario when neither this nor --bounds is given.
    #[arg(long, conflicts_with = "bounds")]
    measurements: Option<PathBuf>,
    /// Precomputed interval CSV, used as is.
    #[arg(long)]
    bounds: Option<PathBuf>,
    #[arg(long, default_value = "sigma=0.01,bias=0:0.5,frac=1.0", value_parser = parse_noise)]
    noise: NoiseModel,
    #[arg(long)]
    noise_seed: Option<u64>,
    /// Skip error metrics against the sensor positions stored in the scenario.
    #[arg(long)]
    no_truth: bool,
    #[command(flatten)]
    estimator: EstimatorArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[group(id = "source", required = true, multiple = false)]
struct SourceArgs {
    /// Paper layout with fresh sensors per trial.
    #[arg(long, group = "source")]
    paper_experiment: bool,
    /// Fixed scenario; only the noise changes between trials.
    #[arg(long, group = "source")]
    scenario: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Sensor count for --paper-experiment.
    #[arg(long, default_value_t = 80)]
    sensors: usize,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    master_seed: u64,
    #[arg(long, default_value = "sigma=0.01,bias=0:0.5,frac=1.0", value_parser = parse_noise)]
    noise: NoiseModel,
    #[command(flatten)]
    estimator: EstimatorArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

enum Failure {
    Input(String),
    Degraded(String),
}

impl From<sdploc::Error> for Failure {
    fn from(e: sdploc::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Bounds(a) => bounds(a),
        Command::Localize(a) => localize_cmd(a),
        Command::Simulate(a) => simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Degraded(msg)) => {
            eprintln!("warning: {msg}");
            ExitCode::from(3)
        }
    }
}

fn parse_connectivity(s: &str) -> Result<Connectivity, String> {
    match s {
        "full" => Ok(Connectivity::Full),
        "sensor-anchor-only" => Ok(Connectivity::SensorAnchorOnly),
        _ => match s.strip_prefix("radius:").map(str::parse::<f64>) {
            Some(Ok(r)) if r > 0.0 => Ok(Connectivity::RadiusLimited(r)),
            _ => Err(format!("expected full, sensor-anchor-only or radius:<m>, got '{s}'")),
        },
    }
}

/// `sigma=<m>,bias=<lo>:<hi>,frac=<p>[,floor=<m>]`; omitted keys keep defaults.
fn parse_noise(s: &str) -> Result<NoiseModel, String> {
    let mut noise = NoiseModel::default();
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("bad number '{v}' in --noise"));
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let (key, value) = part.split_once('=').ok_or_else(|| format!("expected key=value, got '{part}'"))?;
        match key.trim() {
            "sigma" => noise.sigma = num(value)?,
            "frac" => noise.nlos_fraction = num(value)?,
            "floor" => noise.floor = num(value)?,
            "bias" => {
                let (lo, hi) = value.split_once(':').ok_or_else(|| format!("bias takes lo:hi, got '{value}'"))?;
                noise.nlos_bias = (num(lo)?, num(hi)?);
            }
            other => return Err(format!("unknown noise key '{other}'")),
        }
    }
    noise.validate().map_err(|e| e.to_string())?;
    Ok(noise)
}

fn read_scenario(path: &Path) -> Result<Scenario, Failure> {
    Ok(Scenario::from_json(&read_text(path)?)?)
}

fn policy(nu: &str) -> Result<NoiseBoundPolicy, Failure> {
    Ok(nu.parse::<NoiseBoundPolicy>()?)
}

fn generate(a: GenerateArgs) -> Outcome {
    let mut m = RunManifest::start("generate");
    let mut scenario = match a.layout.random_anchors {
        Some(k) => random_scenario(a.seed, a.sensors, k, a.side, a.connectivity),
        None => paper_scenario_with(a.seed, a.sensors),
    };
    scenario.connectivity = a.connectivity;
    scenario.validate()?;
    m.seed("scenario", a.seed);
    m.emit(&a.out, &to_json_sig9(&scenario)?)?;
    if let Some(path) = &a.measurements_out {
        let seed = a.noise_seed.unwrap_or_else(|| split_seed(a.seed, 1));
        m.seed("noise", seed);
        let ms = measure(&scenario, &a.noise, seed)?;
        m.emit(path, &measurements_to_csv(&ms)?)?;
    }
    m.finish(&sibling(&a.out))?;
    Ok(())
}

fn bounds(a: BoundsArgs) -> Outcome {
    let mut m = RunManifest::start("bounds");
    let scenario = read_scenario(&a.scenario)?;
    m.seed("scenario", scenario.seed);
    let ms = measurements_from_csv(&read_text(&a.measurements)?)?;
    let bs = derive_bounds(&ms, &scenario.anchor_map(), policy(&a.nu)?, a.sigma)?;
    m.emit(&a.out, &bounds_to_csv(&bs)?)?;
    m.finish(&sibling(&a.out))?;
    Ok(())
}

fn estimator_config(a: &EstimatorArgs) -> Result<EstimatorConfig, Failure> {
    let config = EstimatorConfig {
        formulation: match a.formulation {
            FormulationArg::Esdp => Formulation::Esdp,
            FormulationArg::Fullsdp => Formulation::Fullsdp,
        },
        variant: match a.variant {
            VariantArg::Known => AnchorVariant::KnownAnchors,
            VariantArg::Uncertain => AnchorVariant::UncertainAnchors,
        },
        mode: a.coeff.parse::<CoefficientMode>()?,
        noise_policy: policy(&a.nu)?,
        sigma: a.sigma,
        solver: SolverSettings {
            gap_tol: a.tol,
            feas_tol: a.tol,
            max_iters: a.max_iters,
            verbosity: u8::from(a.verbose),
        },
        refine: a.refine,
        refine_iterations: a.refine_iters,
        anchor_radius: a.anchor_radius,
        enforce_ball: a.enforce_ball,
    };
    config.solver.validate()?;
    Ok(config)
}

fn describe(m: &mut RunManifest, c: &EstimatorConfig) {
    m.formulation = Some(format!("{:?}", c.formulation).to_lowercase());
    m.variant = Some(
        match c.variant {
            AnchorVariant::KnownAnchors => "known-anchors",
            AnchorVariant::UncertainAnchors => "uncertain-anchors",
        }
        .into(),
    );
    m.mode = Some(c.mode.as_str().into());
}

fn anchor_input(scenario: &Scenario, c: &EstimatorConfig) -> AnchorInput {
    match c.variant {
        AnchorVariant::KnownAnchors => AnchorInput::Known(scenario.anchor_map()),
        AnchorVariant::UncertainAnchors => AnchorInput::priors_from(&scenario.anchor_map(), c.anchor_radius, c.enforce_ball),
    }
}

fn localize_cmd(a: LocalizeArgs) -> Outcome {
    let mut m = RunManifest::start("localize");
    let config = estimator_config(&a.estimator)?;
    describe(&mut m, &config);
    let scenario = read_scenario(&a.scenario)?;
    m.seed("scenario", scenario.seed);
    let anchors = anchor_input(&scenario, &config);
    let truth = (!a.no_truth).then(|| scenario.truth());
    let n = scenario.n_sensors();
    fs::create_dir_all(&a.out)?;

    let report = if let Some(path) = &a.bounds {
        let bs = bounds_from_csv(&read_text(path)?)?;
        localize_bounds(&bs, &anchors, n, truth.as_ref(), &config)?
    } else {
        let ms = match &a.measurements {
            Some(path) => measurements_from_csv(&read_text(path)?)?,
            None => {
                let seed = a.noise_seed.unwrap_or_else(|| split_seed(scenario.seed, 1));
                m.seed("noise", seed);
                let ms = measure(&scenario, &a.noise, seed)?;
                m.emit(&a.out.join("measurements.csv"), &measurements_to_csv(&ms)?)?;
                ms
            }
        };
        localize(&ms, &anchors, n, truth.as_ref(), &config)?
    };

    m.status = Some(report.status.as_str().into());
    m.emit(&a.out.join("report.json"), &to_json_sig9(&report)?)?;
    m.emit(&a.out.join("positions.csv"), &positions_to_csv(&report.positions, truth.as_ref())?)?;
    if let Some(est) = &report.anchor_estimates {
        m.emit(&a.out.join("anchors.csv"), &positions_to_csv(est, Some(&scenario.anchor_map()))?)?;
    }
    m.finish(&a.out.join("manifest.json"))?;
    if let Some(mse) = report.mse {
        println!("status {} mse {} m^2", report.status.as_str(), format_sig9(mse));
    } else {
        println!("status {}", report.status.as_str());
    }
    if report.status != Status::Optimal {
        return Err(Failure::Degraded(format!("solver finished with status {}", report.status.as_str())));
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> Outcome {
    let mut m = RunManifest::start("simulate");
    let config = estimator_config(&a.estimator)?;
    describe(&mut m, &config);
    let spec = match &a.source.scenario {
        Some(path) => {
            let scenario = read_scenario(path)?;
            m.seed("scenario", scenario.seed);
            ScenarioSpec::Fixed { scenario }
        }
        None => ScenarioSpec::Paper { n_sensors: a.sensors },
    };
    m.seed("master", a.master_seed);
    let batch = run_batch(&spec, &a.noise, &config, a.trials, a.master_seed)?;
    let trial_dir = a.out_dir.join("trials");
    fs::create_dir_all(&trial_dir)?;

    let mut scatter = csv::Writer::from_writer(Vec::new());
    scatter
        .write_record(["trial", "id", "true_x", "true_y", "est_x", "est_y"])
        .map_err(|e| Failure::Input(e.to_string()))?;
    for t in &batch.trials {
        let (Some(scenario), Some(report)) = (&t.scenario, &t.report) else {
            continue;
        };
        let truth = scenario.truth();
        let name = format!("trial_{:03}.csv", t.index);
        m.emit(&trial_dir.join(name), &positions_to_csv(&report.positions, Some(&truth))?)?;
        for (id, est) in &report.positions {
            let tp = truth[id];
            scatter
                .write_record([
                    t.index.to_string(),
                    id.to_string(),
                    format_sig9(tp.x),
                    format_sig9(tp.y),
                    format_sig9(est.x),
                    format_sig9(est.y),
                ])
                .map_err(|e| Failure::Input(e.to_string()))?;
        }
    }
    let scatter = scatter.into_inner().map_err(|e| Failure::Input(e.to_string()))?;
    m.emit(&a.out_dir.join("scatter.csv"), &String::from_utf8_lossy(&scatter))?;
    m.emit(&a.out_dir.join("batch.json"), &to_json_sig9(&batch)?)?;
    m.status = Some(if batch.all_optimal { "optimal" } else { "degraded" }.into());
    m.finish(&a.out_dir.join("manifest.json"))?;
    println!(
        "trials {} mean mse {} m^2 (std {}, min {}, max {})",
        batch.trials.len(),
        format_sig9(batch.mse.mean),
        format_sig9(batch.mse.std),
        format_sig9(batch.mse.min),
        format_sig9(batch.mse.max)
    );
    if !batch.all_optimal {
        return Err(Failure::Degraded("at least one trial did not reach an optimal solve".into()));
    }
    Ok(())
}
