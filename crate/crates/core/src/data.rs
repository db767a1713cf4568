//! Dataset generation from forward solves, train/validation/test splits and
//! the on-disk formats (JSON manifests, CSV payloads).

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::godunov::{self, LimiterKind, RunError, SourceIntegrator, StepConfig};
use crate::grid::{BoundaryKind, CellField, Grid, GridError};
use crate::models::{InitialCondition, Lwr, Model, ModelError, PayneWhitham, ShallowWater};
use crate::system::{HyperbolicSystem, SolverKind};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// Smallest depth accepted in generated shallow-water data.
pub const MIN_DEPTH: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("initial condition {ic}: {source}")]
    Run { ic: usize, source: RunError },
    #[error("initial condition {ic}, level {level}, cell {cell}: {reason}")]
    Inadmissible {
        ic: usize,
        level: usize,
        cell: usize,
        reason: String,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("corrupted payload {file}: {reason}")]
    Corrupted { file: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    Burgers,
    Lwr,
    ShallowWater,
    PayneWhitham,
}

impl Benchmark {
    pub const ALL: [Benchmark; 4] = [
        Benchmark::Burgers,
        Benchmark::Lwr,
        Benchmark::ShallowWater,
        Benchmark::PayneWhitham,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn counts(&self, total: usize) -> (usize, usize, usize) {
        let train = (self.train * total as f64).round() as usize;
        let val = ((self.val * total as f64).round() as usize).min(total - train);
        (train, val, total - train - val)
    }
}

/// Everything needed to regenerate a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationPlan {
    pub model: Model,
    pub x_left: f64,
    pub x_right: f64,
    pub n_cells: usize,
    pub bc: BoundaryKind,
    pub dt: f64,
    pub t_end: f64,
    pub limiter: LimiterKind,
    pub solver: SolverKind,
    pub source_integrator: SourceIntegrator,
    pub initial_conditions: Vec<InitialCondition>,
    pub split: SplitRatios,
    pub seed: u64,
}

impl GenerationPlan {
    pub fn preset(benchmark: Benchmark) -> Self {
        let split = SplitRatios {
            train: 0.15,
            val: 0.15,
            test: 0.70,
        };
        match benchmark {
            Benchmark::Burgers => Self {
                model: Model::Burgers,
                x_left: -1.0,
                x_right: 1.0,
                n_cells: 100,
                bc: BoundaryKind::Periodic,
                dt: 0.005,
                t_end: 3.0,
                limiter: LimiterKind::VanLeer,
                solver: SolverKind::Roe,
                source_integrator: SourceIntegrator::None,
                initial_conditions: [1.0, 4.0 / 3.0, 5.0 / 3.0, 2.0]
                    .map(|mu| InitialCondition::Gaussian {
                        mu,
                        sigma: 0.2,
                        x0: 0.0,
                        base: 0.0,
                    })
                    .to_vec(),
                split,
                seed: 1,
            },
            Benchmark::Lwr => Self {
                model: Model::Lwr(Lwr::default()),
                x_left: -20.0,
                x_right: 20.0,
                n_cells: 100,
                bc: BoundaryKind::Outflow,
                dt: 0.1,
                t_end: 60.0,
                limiter: LimiterKind::VanLeer,
                solver: SolverKind::Roe,
                source_integrator: SourceIntegrator::None,
                initial_conditions: [1.0, 1.5, 2.0, 2.5]
                    .map(|sigma| InitialCondition::Gaussian {
                        mu: 1.0,
                        sigma,
                        x0: -10.0,
                        base: 0.0,
                    })
                    .to_vec(),
                split,
                seed: 2,
            },
            Benchmark::ShallowWater => Self {
                model: Model::ShallowWater(ShallowWater::default()),
                x_left: -5.0,
                x_right: 5.0,
                n_cells: 200,
                bc: BoundaryKind::Periodic,
                dt: 0.01,
                t_end: 3.0,
                limiter: LimiterKind::VanLeer,
                solver: SolverKind::Roe,
                source_integrator: SourceIntegrator::None,
                // a still background of depth 1 keeps the bed wet
                initial_conditions: [0.2, 0.4, 0.6, 0.8]
                    .map(|sigma| InitialCondition::Gaussian {
                        mu: 0.5,
                        sigma,
                        x0: 0.0,
                        base: 1.0,
                    })
                    .to_vec(),
                split,
                seed: 3,
            },
            Benchmark::PayneWhitham => Self {
                model: Model::PayneWhitham(PayneWhitham::default()),
                x_left: 0.0,
                x_right: 800.0,
                n_cells: 100,
                bc: BoundaryKind::Periodic,
                // dt = 0.5 gives CFL numbers near 1.5 with these parameters
                dt: 0.25,
                t_end: 600.0,
                limiter: LimiterKind::VanLeer,
                solver: SolverKind::Hlle,
                source_integrator: SourceIntegrator::ExactRelaxation,
                initial_conditions: [0.1, 0.2, 0.3, 0.4]
                    .map(|mu| InitialCondition::Sinusoid {
                        rho_star: 0.1,
                        mu,
                        length: 800.0,
                        q0: 0.1,
                    })
                    .to_vec(),
                split: SplitRatios {
                    train: 0.075,
                    val: 0.075,
                    test: 0.85,
                },
                seed: 4,
            },
        }
    }

    pub fn grid(&self) -> Result<Grid, GridError> {
        Grid::new(self.x_left, self.x_right, self.n_cells)
    }

    pub fn n_steps(&self) -> usize {
        godunov::step_count(self.t_end, self.dt)
    }

    pub fn step_config(&self) -> StepConfig {
        StepConfig {
            dt: self.dt,
            dx: (self.x_right - self.x_left) / self.n_cells as f64,
            limiter: self.limiter,
            solver: self.solver,
            bc: self.bc,
            source_integrator: self.source_integrator,
            enforce_cfl: true,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        self.grid()?;
        self.model.validate()?;
        let plan_err = |m: &str| Err(DataError::Plan(m.to_string()));
        if !(self.dt > 0.0 && self.t_end > 0.0) {
            return plan_err("dt and t_end must be positive");
        }
        if ((self.t_end / self.dt).round() - self.t_end / self.dt).abs() > 1e-9 {
            return plan_err("t_end must be a whole number of steps");
        }
        let s = self.split;
        if [s.train, s.val, s.test].iter().any(|r| !(*r >= 0.0)) || (s.train + s.val + s.test - 1.0).abs() > 1e-9 {
            return plan_err("split ratios must be non-negative and sum to 1");
        }
        if self.initial_conditions.is_empty() {
            return plan_err("at least one initial condition is required");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn file_name(&self) -> &'static str {
        match self {
            Split::Train => "train.csv",
            Split::Val => "val.csv",
            Split::Test => "test.csv",
        }
    }
}

/// A full-domain snapshot and the one that follows it, flattened cell-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotPair {
    pub ic: usize,
    pub step: usize,
    pub time: f64,
    pub current: Vec<f64>,
    pub next: Vec<f64>,
}

impl SnapshotPair {
    pub fn typed<const D: usize>(values: &[f64]) -> Vec<[f64; D]> {
        values
            .chunks_exact(D)
            .map(|c| {
                let mut q = [0.0; D];
                q.copy_from_slice(c);
                q
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub schema_version: u32,
    pub plan: GenerationPlan,
    pub n_components: usize,
    pub dx: f64,
    pub counts: SplitCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub train: Vec<SnapshotPair>,
    pub val: Vec<SnapshotPair>,
    pub test: Vec<SnapshotPair>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[SnapshotPair] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn cell_centers(&self) -> Vec<f64> {
        crate::grid::uniform_centers(self.meta.plan.x_left, self.meta.plan.x_right, self.meta.plan.n_cells)
    }
}

/// All levels of a forward run, flattened cell-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatTrajectory {
    pub n_components: usize,
    pub times: Vec<f64>,
    pub levels: Vec<Vec<f64>>,
    pub cfl: Vec<f64>,
}

impl FlatTrajectory {
    fn from_typed<const D: usize>(t: godunov::Trajectory<D>) -> Self {
        Self {
            n_components: D,
            times: t.levels.iter().map(|l| l.time).collect(),
            levels: t
                .levels
                .into_iter()
                .map(|l| l.values.into_iter().flatten().collect())
                .collect(),
            cfl: t.cfl,
        }
    }

    /// Per-component `sum_i Q_i dx` at every level.
    pub fn totals(&self, dx: f64) -> Vec<Vec<f64>> {
        let d = self.n_components;
        self.levels
            .iter()
            .map(|l| (0..d).map(|c| l.iter().skip(c).step_by(d).sum::<f64>() * dx).collect())
            .collect()
    }
}

pub(crate) fn solve_typed<const D: usize, S: HyperbolicSystem<D>>(
    sys: &S,
    plan: &GenerationPlan,
    ic: &InitialCondition,
) -> Result<FlatTrajectory, DataError> {
    let grid = plan.grid()?;
    let q0: Vec<[f64; D]> = ic.sample(&plan.model, &grid)?;
    let traj = godunov::simulate(sys, CellField::new(q0, 0.0), &plan.step_config(), plan.n_steps())
        .map_err(|source| DataError::Run { ic: 0, source })?;
    Ok(FlatTrajectory::from_typed(traj))
}

/// Forward solve of one initial condition with the plan's model.
pub fn solve_plan(plan: &GenerationPlan, ic: &InitialCondition) -> Result<FlatTrajectory, DataError> {
    plan.validate()?;
    match plan.model {
        Model::Burgers => solve_typed::<1, _>(&crate::models::Burgers, plan, ic),
        Model::Lwr(m) => solve_typed::<1, _>(&m, plan, ic),
        Model::ShallowWater(m) => solve_typed::<2, _>(&m, plan, ic),
        Model::PayneWhitham(m) => solve_typed::<2, _>(&m, plan, ic),
    }
}

fn check_admissible(plan: &GenerationPlan, ic: usize, traj: &FlatTrajectory) -> Result<(), DataError> {
    let d = traj.n_components;
    for (level, values) in traj.levels.iter().enumerate() {
        for (cell, q) in values.chunks_exact(d).enumerate() {
            let bad = |reason: &str| DataError::Inadmissible {
                ic,
                level,
                cell: cell + 1,
                reason: reason.to_string(),
            };
            if !q.iter().all(|v| v.is_finite()) {
                return Err(bad("non-finite value"));
            }
            match plan.model {
                Model::ShallowWater(_) if q[0] < MIN_DEPTH => return Err(bad("depth below 1e-10")),
                Model::Lwr(_) | Model::PayneWhitham(_) if q[0] < 0.0 => {
                    return Err(bad("negative density"))
                }
                _ => {}
            }
        }
    }
    Ok(())
}

/// Runs every initial condition of the plan and splits the consecutive-step
/// pairs at random (seeded) into train, validation and test sets.
pub fn generate(plan: &GenerationPlan) -> Result<Dataset, DataError> {
    plan.validate()?;
    let mut trajectories = Vec::with_capacity(plan.initial_conditions.len());
    for (ic, cond) in plan.initial_conditions.iter().enumerate() {
        let traj = solve_plan(plan, cond).map_err(|e| match e {
            DataError::Run { source, .. } => DataError::Run { ic, source },
            other => other,
        })?;
        check_admissible(plan, ic, &traj)?;
        trajectories.push(traj);
    }

    let mut index: Vec<(usize, usize)> = trajectories
        .iter()
        .enumerate()
        .flat_map(|(ic, t)| (0..t.levels.len() - 1).map(move |n| (ic, n)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    index.shuffle(&mut rng);
    let (n_train, n_val, _) = plan.split.counts(index.len());

    let make = |mut ids: Vec<(usize, usize)>| -> Vec<SnapshotPair> {
        ids.sort_unstable();
        ids.into_iter()
            .map(|(ic, n)| SnapshotPair {
                ic,
                step: n,
                time: trajectories[ic].times[n],
                current: trajectories[ic].levels[n].clone(),
                next: trajectories[ic].levels[n + 1].clone(),
            })
            .collect()
    };
    let test = make(index.split_off(n_train + n_val));
    let val = make(index.split_off(n_train));
    let train = make(index);

    Ok(Dataset {
        meta: DatasetMeta {
            schema_version: DATASET_SCHEMA_VERSION,
            plan: plan.clone(),
            n_components: plan.model.n_components(),
            dx: (plan.x_right - plan.x_left) / plan.n_cells as f64,
            counts: SplitCounts {
                train: train.len(),
                val: val.len(),
                test: test.len(),
            },
        },
        train,
        val,
        test,
    })
}

fn verify_typed<const D: usize, S: HyperbolicSystem<D>>(sys: &S, ds: &Dataset) -> Result<f64, DataError> {
    let cfg = ds.meta.plan.step_config();
    let mut worst = 0.0_f64;
    for split in Split::ALL {
        for pair in ds.split(split) {
            let q = SnapshotPair::typed::<D>(&pair.current);
            let (next, _) = godunov::advance(sys, &q, &cfg).map_err(|e| DataError::Run {
                ic: pair.ic,
                source: RunError {
                    step: pair.step + 1,
                    time: pair.time,
                    error: e,
                },
            })?;
            for (a, b) in next.iter().flatten().zip(&pair.next) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(worst)
}

/// Largest deviation between each stored `Q^{n+1}` and a fresh step from `Q^n`.
pub fn verify_pairs(ds: &Dataset) -> Result<f64, DataError> {
    match ds.meta.plan.model {
        Model::Burgers => verify_typed::<1, _>(&crate::models::Burgers, ds),
        Model::Lwr(m) => verify_typed::<1, _>(&m, ds),
        Model::ShallowWater(m) => verify_typed::<2, _>(&m, ds),
        Model::PayneWhitham(m) => verify_typed::<2, _>(&m, ds),
    }
}

fn component_headers(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|c| format!("{prefix}q{c}")).collect()
}

/// Shortest decimal representation that parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

fn write_pairs(path: &Path, ds: &Dataset, pairs: &[SnapshotPair]) -> Result<(), DataError> {
    let d = ds.meta.n_components;
    let x = ds.cell_centers();
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["pair", "ic", "step", "t", "x"].map(String::from).to_vec();
    header.extend(component_headers("", d));
    header.extend(component_headers("next_", d));
    w.write_record(&header)?;
    for (k, pair) in pairs.iter().enumerate() {
        for (i, xi) in x.iter().enumerate() {
            let mut row = vec![
                k.to_string(),
                pair.ic.to_string(),
                pair.step.to_string(),
                fmt_f64(pair.time),
                fmt_f64(*xi),
            ];
            row.extend(pair.current[i * d..(i + 1) * d].iter().map(|v| fmt_f64(*v)));
            row.extend(pair.next[i * d..(i + 1) * d].iter().map(|v| fmt_f64(*v)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `manifest.json` and one CSV per split into `dir`.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&ds.meta)?)?;
    for split in Split::ALL {
        write_pairs(&dir.join(split.file_name()), ds, ds.split(split))?;
    }
    Ok(())
}

/// Parses a manifest, reporting missing keys and version mismatches as schema errors.
pub fn parse_manifest(text: &str) -> Result<DatasetMeta, DataError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        None => return Err(DataError::Schema("missing field `schema_version`".into())),
        Some(v) if v != DATASET_SCHEMA_VERSION as u64 => {
            return Err(DataError::Schema(format!(
                "schema version {v}, expected {DATASET_SCHEMA_VERSION}"
            )))
        }
        _ => {}
    }
    serde_json::from_value(value).map_err(|e| DataError::Schema(e.to_string()))
}

fn read_pairs(path: &Path, meta: &DatasetMeta, expected: usize) -> Result<Vec<SnapshotPair>, DataError> {
    let file = path.display().to_string();
    let corrupted = |reason: String| DataError::Corrupted {
        file: file.clone(),
        reason,
    };
    let d = meta.n_components;
    let n = meta.plan.n_cells;
    let mut r = csv::Reader::from_path(path)?;
    let width = 5 + 2 * d;
    if r.headers()?.len() != width {
        return Err(corrupted(format!("expected {width} columns")));
    }
    let mut pairs: Vec<SnapshotPair> = Vec::with_capacity(expected);
    for (row_idx, record) in r.records().enumerate() {
        let record = record?;
        let num = |k: usize| -> Result<f64, DataError> {
            record[k]
                .parse::<f64>()
                .map_err(|e| corrupted(format!("row {row_idx}, column {k}: {e}")))
        };
        let int = |k: usize| -> Result<usize, DataError> {
            record[k]
                .parse::<usize>()
                .map_err(|e| corrupted(format!("row {row_idx}, column {k}: {e}")))
        };
        let k = int(0)?;
        if k == pairs.len() {
            pairs.push(SnapshotPair {
                ic: int(1)?,
                step: int(2)?,
                time: num(3)?,
                current: Vec::with_capacity(n * d),
                next: Vec::with_capacity(n * d),
            });
        } else if k + 1 != pairs.len() {
            return Err(corrupted(format!("row {row_idx}: pair index {k} out of order")));
        }
        let pair = pairs.last_mut().expect("pushed above");
        for c in 0..d {
            pair.current.push(num(5 + c)?);
            pair.next.push(num(5 + d + c)?);
        }
    }
    if pairs.len() != expected {
        return Err(corrupted(format!("{} pairs, manifest says {expected}", pairs.len())));
    }
    if let Some(p) = pairs.iter().position(|p| p.current.len() != n * d) {
        return Err(corrupted(format!("pair {p} does not have {n} cells")));
    }
    Ok(pairs)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let meta = parse_manifest(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let train = read_pairs(&dir.join(Split::Train.file_name()), &meta, meta.counts.train)?;
    let val = read_pairs(&dir.join(Split::Val.file_name()), &meta, meta.counts.val)?;
    let test = read_pairs(&dir.join(Split::Test.file_name()), &meta, meta.counts.test)?;
    Ok(Dataset {
        meta,
        train,
        val,
        test,
    })
}

/// Writes a trajectory as `t, x, q1..qD`, one row per cell and level.
pub fn write_solution_csv(path: &Path, x: &[f64], traj: &FlatTrajectory) -> Result<(), DataError> {
    write_field_csv(path, x, traj, "")
}

/// Like [`write_solution_csv`] with the component columns named `{prefix}q1..`.
pub fn write_field_csv(path: &Path, x: &[f64], traj: &FlatTrajectory, prefix: &str) -> Result<(), DataError> {
    let d = traj.n_components;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string(), "x".to_string()];
    header.extend(component_headers(prefix, d));
    w.write_record(&header)?;
    for (t, level) in traj.times.iter().zip(&traj.levels) {
        for (i, xi) in x.iter().enumerate() {
            let mut row = vec![fmt_f64(*t), fmt_f64(*xi)];
            row.extend(level[i * d..(i + 1) * d].iter().map(|v| fmt_f64(*v)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_solution_csv(path: &Path) -> Result<(Vec<f64>, FlatTrajectory), DataError> {
    let file = path.display().to_string();
    let corrupted = |reason: String| DataError::Corrupted {
        file: file.clone(),
        reason,
    };
    let mut r = csv::Reader::from_path(path)?;
    let d = r.headers()?.len().checked_sub(2).filter(|d| *d >= 1).ok_or_else(|| corrupted("too few columns".into()))?;
    let mut times: Vec<f64> = Vec::new();
    let mut levels: Vec<Vec<f64>> = Vec::new();
    let mut x: Vec<f64> = Vec::new();
    for record in r.records() {
        let record = record?;
        let vals: Vec<f64> = record
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| corrupted(e.to_string())))
            .collect::<Result<_, _>>()?;
        if times.last() != Some(&vals[0]) {
            times.push(vals[0]);
            levels.push(Vec::new());
        }
        if levels.len() == 1 {
            x.push(vals[1]);
        }
        levels.last_mut().expect("pushed").extend_from_slice(&vals[2..]);
    }
    if levels.iter().any(|l| l.len() != x.len() * d) {
        return Err(corrupted("levels have different cell counts".into()));
    }
    Ok((
        x,
        FlatTrajectory {
            n_components: d,
            times,
            levels,
            cfl: Vec::new(),
        },
    ))
}
