use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use conslaw_core::closure::{ParamsFile, PARAMS_SCHEMA_VERSION};
use conslaw_core::data::{
    generate, load_dataset, save_dataset, solve_plan, verify_pairs, write_field_csv, write_solution_csv, Dataset,
};
use conslaw_core::evaluation::evaluate;
use conslaw_core::sampling::{axis_variation, compare, data_points, reference_closure, write_closure_csv, Region};
use conslaw_core::training::train;
use serde_json::json;

mod config;
mod error;

use config::{load, relative_to, EvaluateConfig, ForwardConfig, GenDataConfig, SampleConfig, TrainFileConfig};
use error::CliError;

/// Godunov solvers for 1-D conservation laws and learned flux closures.
#[derive(Debug, Parser)]
#[command(name = "conslaw", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one initial condition and write solution.csv.
    Forward(Common),
    /// Generate a snapshot-pair dataset.
    GenData(Common),
    /// Learn a closure from a dataset.
    Train(Common),
    /// Roll out a learned closure and write its error field.
    Evaluate(Common),
    /// Sample a learned closure over the data hull.
    SampleClosure(Common),
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn load_data(config: &Path, p: &Path) -> Result<Dataset, CliError> {
    Ok(load_dataset(&relative_to(config, p))?)
}

fn load_params(config: &Path, p: &Path) -> Result<ParamsFile, CliError> {
    let file: ParamsFile = load(&relative_to(config, p))?;
    if file.schema_version != PARAMS_SCHEMA_VERSION {
        return Err(CliError::Config(format!(
            "params schema version {} (expected {PARAMS_SCHEMA_VERSION})",
            file.schema_version
        )));
    }
    Ok(file)
}

fn forward(c: &Common) -> Result<(), CliError> {
    let cfg: ForwardConfig = load(&c.config)?;
    let plan = cfg.source.resolve()?;
    let ic = plan.initial_conditions.get(cfg.initial_condition).ok_or_else(|| {
        CliError::Config(format!(
            "initial_condition {} out of range ({} defined)",
            cfg.initial_condition,
            plan.initial_conditions.len()
        ))
    })?;
    let grid = plan.grid().map_err(|e| CliError::Config(e.to_string()))?;
    let traj = solve_plan(&plan, ic)?;
    write_solution_csv(&c.out.join("solution.csv"), &grid.centers(), &traj)?;
    let totals = traj.totals(grid.dx);
    let (first, last) = (&totals[0], &totals[totals.len() - 1]);
    let drift: Vec<f64> = first
        .iter()
        .zip(last)
        .map(|(a, b)| (b - a).abs() / a.abs().max(f64::MIN_POSITIVE))
        .collect();
    write_json(
        &c.out.join("report.json"),
        &json!({
            "model": plan.model.name(),
            "n_steps": traj.cfl.len(),
            "dt": plan.dt,
            "dx": grid.dx,
            "max_cfl": traj.cfl.iter().copied().fold(0.0, f64::max),
            "cfl": traj.cfl,
            "initial_totals": first,
            "final_totals": last,
            "relative_drift": drift,
        }),
    )
}

fn gen_data(c: &Common) -> Result<(), CliError> {
    let cfg: GenDataConfig = load(&c.config)?;
    let mut plan = cfg.source.resolve()?;
    if let Some(seed) = c.seed {
        plan.seed = seed;
    }
    let ds = generate(&plan)?;
    let deviation = verify_pairs(&ds)?;
    save_dataset(&ds, &c.out)?;
    write_json(
        &c.out.join("report.json"),
        &json!({ "counts": ds.meta.counts, "max_replay_deviation": deviation }),
    )
}

fn train_cmd(c: &Common) -> Result<(), CliError> {
    let mut cfg: TrainFileConfig = load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.training.seed = seed;
    }
    cfg.training.validate()?;
    let ds = load_data(&c.config, &cfg.dataset)?;
    let out = train(&ds, cfg.form, &cfg.training)?;
    let params = ParamsFile {
        schema_version: PARAMS_SCHEMA_VERSION,
        form: cfg.form,
        network: out.network,
        hyperparameters: serde_json::to_value(&cfg.training)?,
    };
    write_json(&c.out.join("params.json"), &params)?;
    write_json(&c.out.join("report.json"), &out.report)?;
    fs::write(c.out.join("train.log"), out.report.log_lines().join("\n") + "\n")?;
    Ok(())
}

fn evaluate_cmd(c: &Common) -> Result<(), CliError> {
    let cfg: EvaluateConfig = load(&c.config)?;
    let ds = load_data(&c.config, &cfg.dataset)?;
    let params = load_params(&c.config, &cfg.params)?;
    let plan = &ds.meta.plan;
    let ic = plan.initial_conditions.get(cfg.initial_condition).ok_or_else(|| {
        CliError::Config(format!("initial_condition {} out of range", cfg.initial_condition))
    })?;
    let ev = evaluate(plan, params.form, &params.network, ic)?;
    let x = ds.cell_centers();
    write_field_csv(&c.out.join("errors.csv"), &x, &ev.errors, "abs_err_")?;
    write_solution_csv(&c.out.join("learned_solution.csv"), &x, &ev.learned)?;
    write_json(
        &c.out.join("report.json"),
        &json!({
            "form": params.form,
            "initial_condition": cfg.initial_condition,
            "summary": ev.summary,
        }),
    )
}

fn sample_closure(c: &Common) -> Result<(), CliError> {
    let cfg: SampleConfig = load(&c.config)?;
    if cfg.grid < 2 || !(cfg.hull_fraction > 0.0 && cfg.hull_fraction <= 1.0) {
        return Err(CliError::Config("grid must be >= 2 and hull_fraction in (0, 1]".into()));
    }
    let ds = load_data(&c.config, &cfg.dataset)?;
    let params = load_params(&c.config, &cfg.params)?;
    let form = params.form;
    let region = Region::hull(&data_points(&ds, form), form.net_input_dim(), cfg.hull_fraction);
    let inputs = region.sample(cfg.grid);
    let reference = reference_closure(form, &ds.meta.plan.model);
    let comparison = reference.map(|r| compare(form, &params.network, &r, &inputs));
    let offset = comparison.map_or(0.0, |c| c.offset);
    write_closure_csv(&c.out.join("closure.csv"), &inputs, &params.network, reference.as_ref(), offset)?;
    let variation = match &region {
        Region::Polygon { vertices } => Some(axis_variation(&params.network, vertices, cfg.grid)),
        Region::Interval { .. } => None,
    };
    write_json(
        &c.out.join("report.json"),
        &json!({
            "form": form,
            "region": region,
            "comparison": comparison,
            "axis_variation": variation,
        }),
    )
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let (Command::Forward(c)
    | Command::GenData(c)
    | Command::Train(c)
    | Command::Evaluate(c)
    | Command::SampleClosure(c)) = &cli.command;
    if let Some(n) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    fs::create_dir_all(&c.out)?;
    match &cli.command {
        Command::Forward(c) => forward(c),
        Command::GenData(c) => gen_data(c),
        Command::Train(c) => train_cmd(c),
        Command::Evaluate(c) => evaluate_cmd(c),
        Command::SampleClosure(c) => sample_closure(c),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
