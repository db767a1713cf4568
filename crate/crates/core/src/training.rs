//! Learning a closure from snapshot pairs: one-step residuals plus RH
//! residuals, minimized with Levenberg-Marquardt over a finite-difference
//! Jacobian.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::closure::{rh_residuals, Closure, ClosureForm, ClosureSystem, NetworkParams, Scaling};
use crate::data::{Dataset, GenerationPlan, SnapshotPair, Split};
use crate::godunov::{self, StepConfig, StepError};
use crate::grid::fill_ghost;
use crate::models::{InitialCondition, Model, PayneWhitham};
use crate::system::{HyperbolicSystem, SolverKind, SystemError};

/// Validation error checked against `val_tol` and used to pick the returned parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValMetric {
    /// l2 norm of the one-step validation errors.
    L2Norm,
    /// Sum of squared one-step errors, the training loss evaluated on the validation set.
    SumSquares,
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_neurons: usize,
    pub max_epochs: usize,
    pub rel_loss_tol: f64,
    pub val_tol: f64,
    pub val_metric: ValMetric,
    pub val_every: usize,
    pub val_patience: usize,
    pub lambda0: f64,
    /// Rejected trial steps allowed per epoch before giving up.
    pub max_rejections: usize,
    /// Smallest accepted ratio of actual to predicted objective decrease.
    pub min_gain_ratio: f64,
    /// Weight of the RH residuals in the objective.
    pub rh_weight: f64,
    /// Initial parameters are drawn uniformly from `[-init_scale, init_scale]`.
    pub init_scale: f64,
    pub max_init_draws: usize,
    /// Network scales; chosen from the dataset when absent.
    pub scaling: Option<Scaling>,
    /// Independent runs from different initial guesses.
    pub restarts: usize,
    /// Epoch limit of the first round of successive halving over restarts.
    pub screen_epochs: usize,
    pub seed: u64,
    pub verbose: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_neurons: 5,
            max_epochs: 500,
            rel_loss_tol: 1e-9,
            val_tol: 1e-9,
            val_metric: ValMetric::L2Norm,
            val_every: 20,
            val_patience: 3,
            lambda0: 0.01,
            max_rejections: 10,
            min_gain_ratio: 0.75,
            rh_weight: 1.0,
            init_scale: 0.5,
            max_init_draws: 1000,
            scaling: None,
            restarts: 8,
            screen_epochs: 50,
            seed: 0,
            verbose: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = [
            ("rel_loss_tol", self.rel_loss_tol),
            ("val_tol", self.val_tol),
            ("lambda0", self.lambda0),
            ("init_scale", self.init_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(TrainError::Config(format!("{name} must be positive")));
            }
        }
        if self.n_neurons == 0
            || self.val_every == 0
            || self.max_init_draws == 0
            || self.restarts == 0
            || self.screen_epochs == 0
        {
            return Err(TrainError::Config(
                "n_neurons, val_every, max_init_draws, restarts and screen_epochs must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.min_gain_ratio) {
            return Err(TrainError::Config("min_gain_ratio must lie in [0, 1)".into()));
        }
        if self.scaling.is_some_and(|s| !s.is_valid()) {
            return Err(TrainError::Config("scales must be positive".into()));
        }
        if !(self.rh_weight >= 0.0) {
            return Err(TrainError::Config("rh_weight must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("pair {pair}: {error}")]
    Step { pair: usize, error: StepError },
    #[error("pair {pair}, interface {interface}: {error}")]
    Hyperbolicity {
        pair: usize,
        interface: usize,
        error: SystemError,
    },
    #[error("no hyperbolic initial guess in {draws} draws")]
    Init { draws: usize },
    #[error("finite-difference column {column} could not be evaluated: {source}")]
    Jacobian {
        column: usize,
        source: Box<TrainError>,
    },
}

impl TrainError {
    pub fn is_hyperbolicity_loss(&self) -> bool {
        match self {
            TrainError::Hyperbolicity { error, .. } => error.is_hyperbolicity_loss(),
            TrainError::Step { error, .. } => error.is_hyperbolicity_loss(),
            TrainError::Jacobian { source, .. } => source.is_hyperbolicity_loss(),
            _ => false,
        }
    }
}

/// Error statistics of one-step predictions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    /// Largest l1 norm of the per-cell error vector.
    pub max_l1: f64,
    pub mean_l1: f64,
    /// Mean of squared errors over all cells, steps and components.
    pub mse: f64,
}

impl Metrics {
    /// Statistics of `predicted - observed`, both flattened cell-major with `d` components.
    pub fn accumulate(errors: impl Iterator<Item = f64>, d: usize) -> Self {
        let mut max_l1 = 0.0_f64;
        let mut sum_l1 = 0.0;
        let mut sum_sq = 0.0;
        let mut cells = 0usize;
        let mut entries = 0usize;
        let mut l1 = 0.0;
        for (k, e) in errors.enumerate() {
            l1 += e.abs();
            sum_sq += e * e;
            entries += 1;
            if (k + 1) % d == 0 {
                max_l1 = max_l1.max(l1);
                sum_l1 += l1;
                cells += 1;
                l1 = 0.0;
            }
        }
        if cells == 0 {
            return Self::default();
        }
        Self {
            max_l1,
            mean_l1: sum_l1 / cells as f64,
            mse: sum_sq / entries as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    RelativeLossTolerance,
    ValidationTolerance,
    Stalled,
    JacobianFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub objective: f64,
    pub lambda: f64,
    pub rejections: usize,
    pub val_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub train: Metrics,
    pub val: Metrics,
    pub test: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub form: ClosureForm,
    pub n_params: usize,
    pub n_residuals: usize,
    pub init_draws: usize,
    pub initial_objective: f64,
    pub epochs: Vec<EpochLog>,
    pub stop_reason: StopReason,
    /// Epoch whose parameters were returned (best validation MSE).
    pub best_epoch: usize,
    pub chosen_restart: usize,
    /// Every run, without its epoch log.
    pub restarts: Vec<RunSummary>,
    pub metrics: SplitMetrics,
    /// Largest absolute RH residual on the training set.
    pub max_rh_residual: f64,
    pub elapsed_seconds: f64,
    pub config: TrainConfig,
}

impl TrainReport {
    /// Line-oriented log: epoch, objective, damping, validation MSE.
    pub fn log_lines(&self) -> Vec<String> {
        self.epochs
            .iter()
            .map(|e| {
                let val = e.val_error.map_or("-".to_string(), |v| format!("{v:.6e}"));
                format!(
                    "epoch {} objective {:.6e} lambda {:.3e} rejections {} val_error {}",
                    e.epoch, e.objective, e.lambda, e.rejections, val
                )
            })
            .collect()
    }
}

/// The fixed parts of the learning problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setup {
    pub form: ClosureForm,
    pub step: StepConfig,
    pub relaxation: Option<PayneWhitham>,
    pub n_neurons: usize,
    pub rh_weight: f64,
    pub scaling: Scaling,
}

/// Unit scales except for PW, whose closure is expressed in units of the
/// background density and the desired speed.
pub fn default_scaling(plan: &GenerationPlan) -> Scaling {
    match (&plan.model, plan.initial_conditions.first()) {
        (Model::PayneWhitham(pw), Some(InitialCondition::Sinusoid { rho_star, .. })) => Scaling {
            input: [*rho_star, rho_star * pw.v0],
            output: rho_star * pw.v0 * pw.v0,
        },
        _ => Scaling::default(),
    }
}

impl Setup {
    /// Derives the setup from a dataset; CFL is monitored by the data, not enforced in training.
    pub fn for_dataset(ds: &Dataset, form: ClosureForm, cfg: &TrainConfig) -> Result<Self, TrainError> {
        if form.n_components() != ds.meta.n_components {
            return Err(TrainError::Config(format!(
                "form {form:?} has {} components, dataset has {}",
                form.n_components(),
                ds.meta.n_components
            )));
        }
        let relaxation = match (form.has_source(), ds.meta.plan.model) {
            (true, Model::PayneWhitham(pw)) => Some(pw),
            (false, Model::PayneWhitham(_)) => {
                return Err(TrainError::Config(format!("form {form:?} has no relaxation source")))
            }
            (true, m) => {
                return Err(TrainError::Config(format!(
                    "form {form:?} needs relaxation data, dataset model is {}",
                    m.name()
                )))
            }
            (false, _) => None,
        };
        let mut step = ds.meta.plan.step_config();
        step.enforce_cfl = false;
        Ok(Self {
            form,
            step,
            relaxation,
            n_neurons: cfg.n_neurons,
            rh_weight: cfg.rh_weight,
            scaling: cfg.scaling.unwrap_or_else(|| default_scaling(&ds.meta.plan)),
        })
    }

    pub fn n_params(&self) -> usize {
        NetworkParams::n_params(self.n_neurons, self.form.net_input_dim())
    }

    pub fn network(&self, p: &[f64]) -> NetworkParams {
        NetworkParams::from_slice(self.n_neurons, self.form.net_input_dim(), p)
            .expect("parameter vector length checked by caller")
            .with_scaling(self.scaling)
    }
}

type TypedPair<const D: usize> = (Vec<[f64; D]>, Vec<[f64; D]>);

/// Snapshot pairs of one split with a fixed setup.
pub struct Problem<const D: usize> {
    pub setup: Setup,
    pub pairs: Vec<TypedPair<D>>,
}

impl<const D: usize> Problem<D> {
    pub fn new(setup: Setup, pairs: &[SnapshotPair]) -> Self {
        Self {
            setup,
            pairs: pairs
                .iter()
                .map(|p| (SnapshotPair::typed::<D>(&p.current), SnapshotPair::typed::<D>(&p.next)))
                .collect(),
        }
    }

    pub fn n_cells(&self) -> usize {
        self.pairs.first().map_or(0, |p| p.0.len())
    }

    pub fn n_residuals(&self) -> usize {
        let per_pair = if self.setup.form.has_rh_loss() { D + 1 } else { D };
        per_pair * self.n_cells() * self.pairs.len()
    }

    fn system<'a, C: Closure>(&self, closure: &'a C) -> ClosureSystem<'a, C> {
        ClosureSystem::new(self.setup.form, closure, self.setup.relaxation)
    }

    /// One-step prediction from every pair's current snapshot.
    pub fn predict<C: Closure>(&self, closure: &C) -> Result<Vec<Vec<[f64; D]>>, TrainError>
    where
        for<'a> ClosureSystem<'a, C>: HyperbolicSystem<D>,
    {
        let sys = self.system(closure);
        let out: Vec<_> = self
            .pairs
            .par_iter()
            .map(|(q, _)| godunov::advance(&sys, q, &self.setup.step).map(|r| r.0))
            .collect();
        out.into_iter()
            .enumerate()
            .map(|(pair, r)| r.map_err(|error| step_error(pair, error)))
            .collect()
    }

    /// `[F_FVG, sqrt(w) F_RH]`, pair-major, in a fixed order.
    pub fn residuals<C: Closure>(&self, closure: &C) -> Result<Vec<f64>, TrainError>
    where
        for<'a> ClosureSystem<'a, C>: HyperbolicSystem<D>,
    {
        let sys = self.system(closure);
        let with_rh = self.setup.form.has_rh_loss();
        let w = self.setup.rh_weight.sqrt();
        let parts: Vec<Result<(Vec<f64>, Vec<f64>), TrainError>> = self
            .pairs
            .par_iter()
            .enumerate()
            .map(|(pair, (q, q_next))| {
                let (pred, _) =
                    godunov::advance(&sys, q, &self.setup.step).map_err(|e| step_error(pair, e))?;
                let fvg: Vec<f64> = q_next
                    .iter()
                    .flatten()
                    .zip(pred.iter().flatten())
                    .map(|(obs, p)| obs - p)
                    .collect();
                let mut rh = Vec::new();
                if with_rh {
                    let ext = fill_ghost(q, self.setup.step.bc);
                    rh_residuals(&sys, &ext, &mut rh)
                        .map_err(|error| TrainError::Hyperbolicity { pair, interface: 0, error })?;
                    rh.iter_mut().for_each(|r| *r *= w);
                }
                Ok((fvg, rh))
            })
            .collect();
        let mut fvg = Vec::with_capacity(self.n_residuals());
        let mut rh = Vec::new();
        for part in parts {
            let (a, b) = part?;
            fvg.extend(a);
            rh.extend(b);
        }
        fvg.extend(rh);
        Ok(fvg)
    }

    pub fn residuals_at(&self, p: &[f64]) -> Result<Vec<f64>, TrainError>
    where
        for<'a> ClosureSystem<'a, NetworkParams>: HyperbolicSystem<D>,
    {
        self.residuals(&self.setup.network(p))
    }

    pub fn metrics<C: Closure>(&self, closure: &C) -> Result<Metrics, TrainError>
    where
        for<'a> ClosureSystem<'a, C>: HyperbolicSystem<D>,
    {
        let pred = self.predict(closure)?;
        let errors = pred
            .iter()
            .zip(&self.pairs)
            .flat_map(|(p, (_, obs))| p.iter().flatten().zip(obs.iter().flatten()).map(|(a, b)| a - b));
        Ok(Metrics::accumulate(errors, D))
    }

    /// Largest absolute RH residual over all pairs.
    pub fn max_rh_residual<C: Closure>(&self, closure: &C) -> Result<f64, TrainError> {
        let sys = self.system(closure);
        let mut worst = 0.0_f64;
        let mut buf = Vec::new();
        for (pair, (q, _)) in self.pairs.iter().enumerate() {
            buf.clear();
            let ext = fill_ghost(q, self.setup.step.bc);
            rh_residuals(&sys, &ext, &mut buf)
                .map_err(|error| TrainError::Hyperbolicity { pair, interface: 0, error })?;
            worst = buf.iter().fold(worst, |m, r| m.max(r.abs()));
        }
        Ok(worst)
    }

    /// Whether the linearization has real eigenvalues at every interface of
    /// every snapshot (and, for HLLE, the cell Jacobians too).
    pub fn check_hyperbolic(&self, net: &NetworkParams) -> Result<(), TrainError>
    where
        for<'a> ClosureSystem<'a, NetworkParams>: HyperbolicSystem<D>,
    {
        let sys = self.system(net);
        for (pair, (q, _)) in self.pairs.iter().enumerate() {
            let ext = fill_ghost(q, self.setup.step.bc);
            for (interface, w) in ext.windows(2).enumerate() {
                sys.linearize(&w[0], &w[1])
                    .map_err(|error| TrainError::Hyperbolicity { pair, interface, error })?;
            }
            if self.setup.step.solver == SolverKind::Hlle {
                for (cell, v) in ext.iter().enumerate() {
                    sys.jacobian_eigenvalues(v).map_err(|error| TrainError::Hyperbolicity {
                        pair,
                        interface: cell,
                        error,
                    })?;
                }
            }
        }
        Ok(())
    }
}

fn step_error(pair: usize, error: StepError) -> TrainError {
    match error {
        StepError::Interface { interface, error } => TrainError::Hyperbolicity {
            pair,
            interface,
            error,
        },
        error => TrainError::Step { pair, error },
    }
}

pub fn sum_squares(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Forward-difference Jacobian, column `j` with step `sqrt(eps) (1 + |p_j|)`.
///
/// Columns whose forward evaluation fails are retried with a central
/// difference at half the step. Returns the columns.
pub fn fd_jacobian<F>(f: F, p: &[f64], f0: &[f64]) -> Result<Vec<Vec<f64>>, TrainError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, TrainError>,
{
    let root_eps = f64::EPSILON.sqrt();
    (0..p.len())
        .map(|j| {
            let h = root_eps * (1.0 + p[j].abs());
            let mut x = p.to_vec();
            x[j] = p[j] + h;
            let h_fwd = x[j] - p[j];
            match f(&x) {
                Ok(fp) => Ok(fp.iter().zip(f0).map(|(a, b)| (a - b) / h_fwd).collect()),
                Err(_) => {
                    x[j] = p[j] + 0.5 * h;
                    let plus = f(&x);
                    x[j] = p[j] - 0.5 * h;
                    let minus = f(&x);
                    match (plus, minus) {
                        (Ok(a), Ok(b)) => Ok(a.iter().zip(&b).map(|(u, v)| (u - v) / h).collect()),
                        (Err(e), _) | (_, Err(e)) => Err(TrainError::Jacobian {
                            column: j,
                            source: Box::new(e),
                        }),
                    }
                }
            }
        })
        .collect()
}

/// Normal equations `J^T J` and `J^T F` from Jacobian columns.
pub fn normal_equations(cols: &[Vec<f64>], f: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let n = cols.len();
    let mut a = DMatrix::zeros(n, n);
    let mut g = DVector::zeros(n);
    for i in 0..n {
        g[i] = cols[i].iter().zip(f).map(|(x, y)| x * y).sum();
        for j in 0..=i {
            let v: f64 = cols[i].iter().zip(&cols[j]).map(|(x, y)| x * y).sum();
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    (a, g)
}

/// Solves `(A + lambda diag(A)) dp = -g`; `None` if the system is not positive definite.
pub fn lm_step(a: &DMatrix<f64>, g: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    let n = a.nrows();
    let floor = (0..n).map(|i| a[(i, i)]).fold(0.0_f64, f64::max) * 1e-15;
    let mut m = a.clone();
    for i in 0..n {
        m[(i, i)] += lambda * a[(i, i)].max(floor);
    }
    let chol = m.cholesky()?;
    let dp = -chol.solve(g);
    dp.iter().all(|v| v.is_finite()).then_some(dp)
}

/// Draws parameters until the training problem is hyperbolic and evaluable.
/// Restart `k` draws from stream `k` of the seeded generator.
pub fn hyperbolic_init<const D: usize>(
    problem: &Problem<D>,
    cfg: &TrainConfig,
    restart: u64,
) -> Result<(Vec<f64>, usize), TrainError>
where
    for<'a> ClosureSystem<'a, NetworkParams>: HyperbolicSystem<D>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(restart);
    let n = problem.setup.n_params();
    for draw in 1..=cfg.max_init_draws {
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-cfg.init_scale..=cfg.init_scale)).collect();
        let net = problem.setup.network(&p);
        if problem.check_hyperbolic(&net).is_ok() && problem.residuals(&net).is_ok() {
            return Ok((p, draw));
        }
    }
    Err(TrainError::Init {
        draws: cfg.max_init_draws,
    })
}

/// Outcome of one LM run from one initial guess.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub restart: usize,
    pub init_draws: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub stop_reason: StopReason,
    pub best_epoch: usize,
    pub best_val_error: f64,
    pub epochs: Vec<EpochLog>,
}

/// A trained closure and the record of how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub network: NetworkParams,
    pub report: TrainReport,
}

/// One Levenberg-Marquardt run that can be paused and resumed.
pub struct LmRun<'p, const D: usize> {
    train: &'p Problem<D>,
    val: &'p Problem<D>,
    restart: usize,
    init_draws: usize,
    initial_objective: f64,
    p: Vec<f64>,
    f: Vec<f64>,
    objective: f64,
    lambda: f64,
    epoch: usize,
    below_tol: usize,
    best: Option<(f64, Vec<f64>, usize)>,
    epochs: Vec<EpochLog>,
    stop: Option<StopReason>,
}

impl<'p, const D: usize> LmRun<'p, D>
where
    for<'a> ClosureSystem<'a, NetworkParams>: HyperbolicSystem<D>,
{
    /// Starts from a hyperbolic initial guess drawn for `restart`.
    pub fn start(train: &'p Problem<D>, val: &'p Problem<D>, cfg: &TrainConfig, restart: usize) -> Result<Self, TrainError> {
        let (p, init_draws) = hyperbolic_init(train, cfg, restart as u64)?;
        let f = train.residuals_at(&p)?;
        let objective = sum_squares(&f);
        Ok(Self {
            train,
            val,
            restart,
            init_draws,
            initial_objective: objective,
            p,
            f,
            objective,
            lambda: cfg.lambda0,
            epoch: 0,
            below_tol: 0,
            best: None,
            epochs: Vec::new(),
            stop: None,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.stop.is_some()
    }

    /// Validation error of parameters `p` under the configured metric.
    fn val_error(&self, p: &[f64], metric: ValMetric) -> f64 {
        let n = (self.val.pairs.len() * self.val.n_cells() * D) as f64;
        self.val
            .metrics(&self.train.setup.network(p))
            .map_or(f64::INFINITY, |m| match metric {
                ValMetric::L2Norm => (m.mse * n).sqrt(),
                ValMetric::SumSquares => m.mse * n,
                ValMetric::Mse => m.mse,
            })
    }

    fn record_validation(&mut self, cfg: &TrainConfig) -> f64 {
        let v = self.val_error(&self.p, cfg.val_metric);
        if self.best.as_ref().map_or(true, |b| v < b.0) {
            self.best = Some((v, self.p.clone(), self.epoch));
        }
        v
    }

    /// One epoch: a Jacobian and up to `max_rejections` trial steps.
    fn epoch(&mut self, cfg: &TrainConfig) {
        self.epoch += 1;
        let epoch = self.epoch;
        let train = self.train;
        let cols = match fd_jacobian(|x| train.residuals_at(x), &self.p, &self.f) {
            Ok(c) => c,
            Err(_) => {
                self.stop = Some(StopReason::JacobianFailure);
                return;
            }
        };
        let (a, g) = normal_equations(&cols, &self.f);
        drop(cols);

        let mut rejections = 0;
        let mut accepted = None;
        while rejections < cfg.max_rejections {
            let trial = lm_step(&a, &g, self.lambda).and_then(|dp| {
                let x: Vec<f64> = self.p.iter().zip(dp.iter()).map(|(a, b)| a + b).collect();
                let fx = train.residuals_at(&x).ok()?;
                let obj = sum_squares(&fx);
                let predicted = -(2.0 * g.dot(&dp) + dp.dot(&(&a * &dp)));
                let gain = (self.objective - obj) / predicted;
                (obj < self.objective && gain >= cfg.min_gain_ratio).then_some((x, fx, obj))
            });
            match trial {
                Some(t) => {
                    self.lambda /= 10.0;
                    accepted = Some(t);
                    break;
                }
                None => {
                    self.lambda *= 10.0;
                    rejections += 1;
                }
            }
        }
        let mut log = EpochLog {
            epoch,
            objective: self.objective,
            lambda: self.lambda,
            rejections,
            val_error: None,
        };
        let Some((x, fx, obj)) = accepted else {
            self.epochs.push(log);
            self.stop = Some(StopReason::Stalled);
            return;
        };
        let relative_change = (self.objective - obj).abs() / self.objective;
        self.p = x;
        self.f = fx;
        self.objective = obj;
        log.objective = obj;

        if epoch % cfg.val_every == 0 {
            let v = self.record_validation(cfg);
            log.val_error = Some(v);
            self.below_tol = if v < cfg.val_tol { self.below_tol + 1 } else { 0 };
        }
        if cfg.verbose {
            let val = log.val_error.map_or(String::new(), |v| format!(" val_error {v:.3e}"));
            eprintln!(
                "[{:?} restart {}] epoch {epoch} objective {obj:.6e} lambda {:.1e}{val}",
                train.setup.form, self.restart, self.lambda
            );
        }
        self.epochs.push(log);
        if self.below_tol >= cfg.val_patience {
            self.stop = Some(StopReason::ValidationTolerance);
        } else if relative_change < cfg.rel_loss_tol {
            self.stop = Some(StopReason::RelativeLossTolerance);
        } else if epoch >= cfg.max_epochs {
            self.stop = Some(StopReason::MaxEpochs);
        }
    }

    /// Runs epochs until a stopping criterion fires or `epoch_limit` is reached.
    pub fn run_until(&mut self, cfg: &TrainConfig, epoch_limit: usize) {
        while self.stop.is_none() && self.epoch < epoch_limit.min(cfg.max_epochs) {
            self.epoch(cfg);
        }
        if self.epoch >= cfg.max_epochs && self.stop.is_none() {
            self.stop = Some(StopReason::MaxEpochs);
        }
    }

    /// Best validation error so far, validating the current parameters if
    /// they have not been checked.
    pub fn best_val_error(&mut self, cfg: &TrainConfig) -> f64 {
        if self.best.as_ref().map_or(true, |b| b.2 != self.epoch) {
            self.record_validation(cfg);
        }
        self.best.as_ref().expect("validated").0
    }

    /// Best parameters and a summary of the run.
    pub fn finish(mut self, cfg: &TrainConfig) -> (Vec<f64>, RunSummary) {
        let best_val_error = self.best_val_error(cfg);
        let (_, p_best, best_epoch) = self.best.take().expect("validated");
        (
            p_best,
            RunSummary {
                restart: self.restart,
                init_draws: self.init_draws,
                initial_objective: self.initial_objective,
                final_objective: self.objective,
                stop_reason: self.stop.unwrap_or(StopReason::MaxEpochs),
                best_epoch,
                best_val_error,
                epochs: self.epochs,
            },
        )
    }
}

/// Levenberg-Marquardt from one hyperbolic initial guess; returns the
/// parameters with the lowest validation error among the checks performed.
pub fn lm_run<const D: usize>(
    train: &Problem<D>,
    val: &Problem<D>,
    cfg: &TrainConfig,
    restart: usize,
) -> Result<(Vec<f64>, RunSummary), TrainError>
where
    for<'a> ClosureSystem<'a, NetworkParams>: HyperbolicSystem<D>,
{
    let mut run = LmRun::start(train, val, cfg, restart)?;
    run.run_until(cfg, cfg.max_epochs);
    Ok(run.finish(cfg))
}

/// Multi-start training by successive halving. Every restart runs to
/// `screen_epochs`; the better half by validation error survives and the
/// epoch limit doubles, until one run is left to continue to `max_epochs`.
pub fn train_problem<const D: usize>(
    train: &Problem<D>,
    val: &Problem<D>,
    test: &Problem<D>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError>
where
    for<'a> ClosureSystem<'a, NetworkParams>: HyperbolicSystem<D>,
{
    cfg.validate()?;
    let started = Instant::now();
    let setup = train.setup;
    let mut alive = Vec::new();
    let mut last_error = None;
    for restart in 0..cfg.restarts {
        match LmRun::start(train, val, cfg, restart) {
            Ok(run) => alive.push(run),
            Err(e) => last_error = Some(e),
        }
    }
    if alive.is_empty() {
        return Err(last_error.expect("restarts >= 1"));
    }
    let mut summaries = Vec::new();
    let mut limit = cfg.screen_epochs;
    while alive.len() > 1 && limit < cfg.max_epochs {
        let mut ranked: Vec<(f64, LmRun<D>)> = alive
            .into_iter()
            .map(|mut run| {
                run.run_until(cfg, limit);
                (run.best_val_error(cfg), run)
            })
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
        let keep = ranked.len().div_ceil(2);
        for (_, run) in ranked.drain(keep..) {
            summaries.push(run.finish(cfg).1);
        }
        alive = ranked.into_iter().map(|(_, run)| run).collect();
        limit *= 2;
    }
    let mut finals: Vec<(Vec<f64>, RunSummary)> = alive
        .into_iter()
        .map(|mut run| {
            run.run_until(cfg, cfg.max_epochs);
            run.finish(cfg)
        })
        .collect();
    finals.sort_by(|a, b| a.1.best_val_error.total_cmp(&b.1.best_val_error));
    let (p_best, run) = finals.remove(0);
    summaries.extend(finals.into_iter().map(|(_, s)| s));
    summaries.push(run.clone());
    summaries.sort_by_key(|s| s.restart);
    for s in &mut summaries {
        s.epochs = Vec::new();
    }
    let network = setup.network(&p_best);
    let metrics = SplitMetrics {
        train: train.metrics(&network)?,
        val: val.metrics(&network)?,
        test: test.metrics(&network)?,
    };
    let max_rh_residual = train.max_rh_residual(&network)?;
    Ok(TrainOutcome {
        network,
        report: TrainReport {
            form: setup.form,
            n_params: setup.n_params(),
            n_residuals: train.n_residuals(),
            init_draws: run.init_draws,
            initial_objective: run.initial_objective,
            stop_reason: run.stop_reason,
            best_epoch: run.best_epoch,
            chosen_restart: run.restart,
            epochs: run.epochs,
            restarts: summaries,
            metrics,
            max_rh_residual,
            elapsed_seconds: started.elapsed().as_secs_f64(),
            config: cfg.clone(),
        },
    })
}

fn problems<const D: usize>(ds: &Dataset, setup: Setup) -> [Problem<D>; 3] {
    Split::ALL.map(|s| Problem::new(setup, ds.split(s)))
}

/// Trains `form` on a dataset.
pub fn train(ds: &Dataset, form: ClosureForm, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let setup = Setup::for_dataset(ds, form, cfg)?;
    match form.n_components() {
        1 => {
            let [tr, va, te] = problems::<1>(ds, setup);
            train_problem(&tr, &va, &te, cfg)
        }
        _ => {
            let [tr, va, te] = problems::<2>(ds, setup);
            train_problem(&tr, &va, &te, cfg)
        }
    }
}

/// One-step metrics of any closure on one split of a dataset.
pub fn split_metrics<C: Closure>(
    ds: &Dataset,
    split: Split,
    form: ClosureForm,
    closure: &C,
) -> Result<Metrics, TrainError> {
    let mut setup = Setup::for_dataset(ds, form, &TrainConfig::default())?;
    setup.n_neurons = 0;
    match form.n_components() {
        1 => Problem::<1>::new(setup, ds.split(split)).metrics(closure),
        _ => Problem::<2>::new(setup, ds.split(split)).metrics(closure),
    }
}

/// Residual vector of any closure on the training split.
pub fn split_residuals<C: Closure>(
    ds: &Dataset,
    split: Split,
    form: ClosureForm,
    closure: &C,
) -> Result<Vec<f64>, TrainError> {
    let setup = Setup::for_dataset(ds, form, &TrainConfig::default())?;
    match form.n_components() {
        1 => Problem::<1>::new(setup, ds.split(split)).residuals(closure),
        _ => Problem::<2>::new(setup, ds.split(split)).residuals(closure),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closure::AnalyticClosure;
    use crate::data::{generate, Benchmark, GenerationPlan};

    fn small_burgers() -> Dataset {
        let mut plan = GenerationPlan::preset(Benchmark::Burgers);
        plan.n_cells = 20;
        plan.dt = 0.02;
        plan.t_end = 1.0;
        generate(&plan).unwrap()
    }

    #[test]
    fn metrics_convention() {
        let m = Metrics::accumulate([3e-3, -4e-3].into_iter(), 2);
        assert!((m.max_l1 - 7e-3).abs() < 1e-18);
        assert!((m.mse - 12.5e-6).abs() < 1e-18);
        let zero = Metrics::accumulate([0.0; 6].into_iter(), 1);
        assert_eq!(zero, Metrics::default());
    }

    #[test]
    fn bypass_closure_has_zero_data_residual() {
        let ds = small_burgers();
        let f = split_residuals(&ds, Split::Train, ClosureForm::BurgersFull, &AnalyticClosure::BurgersFlux).unwrap();
        let n = 20 * ds.train.len();
        assert_eq!(f.len(), 2 * n);
        assert!(f.iter().all(|r| r.abs() < 1e-14), "{:e}", f.iter().fold(0.0_f64, |m, r| m.max(r.abs())));
    }

    #[test]
    fn zero_network_residual_is_time_difference() {
        let ds = small_burgers();
        let net = NetworkParams::zeros(5, 1);
        let f = split_residuals(&ds, Split::Train, ClosureForm::BurgersFull, &net).unwrap();
        let expect: Vec<f64> = ds.train.iter().flat_map(|p| p.next.iter().zip(&p.current).map(|(a, b)| a - b)).collect();
        assert_eq!(&f[..expect.len()], expect.as_slice());
        assert!(f[expect.len()..].iter().all(|r| *r == 0.0));
    }

    #[test]
    fn residual_assembly_is_deterministic() {
        let ds = small_burgers();
        let p: Vec<f64> = (0..15).map(|k| (k as f64 * 0.37).sin() * 0.5).collect();
        let net = NetworkParams::from_slice(5, 1, &p).unwrap();
        let a = split_residuals(&ds, Split::Train, ClosureForm::BurgersFull, &net).unwrap();
        let b = split_residuals(&ds, Split::Train, ClosureForm::BurgersFull, &net).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fd_jacobian_of_linear_map() {
        let m = [[1.0, 2.0, -1.0], [0.5, -3.0, 4.0]];
        let f = |p: &[f64]| -> Result<Vec<f64>, TrainError> {
            Ok(m.iter().map(|row| row.iter().zip(p).map(|(a, b)| a * b).sum()).collect())
        };
        let p = [0.3, -1.2, 2.0];
        let f0 = f(&p).unwrap();
        let cols = fd_jacobian(f, &p, &f0).unwrap();
        for j in 0..3 {
            for i in 0..2 {
                assert!((cols[j][i] - m[i][j]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn fd_jacobian_retries_with_central_difference() {
        // fails for p > 1, so the forward step from p = 1 fails
        let f = |p: &[f64]| -> Result<Vec<f64>, TrainError> {
            if p[0] > 1.0 {
                Err(TrainError::Config("outside".into()))
            } else {
                Ok(vec![p[0] * p[0]])
            }
        };
        let cols = fd_jacobian(f, &[1.0], &[1.0]);
        assert!(matches!(cols, Err(TrainError::Jacobian { column: 0, .. })));
        let g = |p: &[f64]| -> Result<Vec<f64>, TrainError> {
            if p[0] > 1.0 + 2e-8 {
                Err(TrainError::Config("outside".into()))
            } else {
                Ok(vec![p[0] * p[0]])
            }
        };
        let cols = fd_jacobian(g, &[1.0], &[1.0]).unwrap();
        assert!((cols[0][0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn lm_step_limits() {
        // linear least squares: J p - y
        let j = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 2.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let p0 = DVector::zeros(2);
        let f = &j * &p0 - &y;
        let a = j.transpose() * &j;
        let g = j.transpose() * &f;
        let dp = lm_step(&a, &g, 0.0).unwrap();
        let exact = (j.transpose() * &j).try_inverse().unwrap() * j.transpose() * &y;
        assert!((dp - exact).norm() < 1e-12);
        let tiny = lm_step(&a, &g, 1e12).unwrap();
        assert!(tiny.norm() < 1e-10);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.lambda0 = 0.0;
        assert!(c.validate().is_err());
        for bad in [r#"{"min_gain_ratio": 1.0}"#, r#"{"screen_epochs": 0}"#, r#"{"restarts": 0}"#] {
            let c: TrainConfig = serde_json::from_str(bad).unwrap();
            assert!(c.validate().is_err(), "{bad}");
        }
        let c: TrainConfig = serde_json::from_str(r#"{"max_epochs": 3}"#).unwrap();
        assert_eq!(c.max_epochs, 3);
        assert_eq!(c.n_neurons, 5);
    }

    #[test]
    fn short_training_decreases_objective() {
        let ds = small_burgers();
        let cfg = TrainConfig {
            max_epochs: 15,
            val_every: 5,
            seed: 5,
            restarts: 1,
            min_gain_ratio: 0.0,
            ..TrainConfig::default()
        };
        let out = train(&ds, ClosureForm::BurgersFull, &cfg).unwrap();
        let r = &out.report;
        assert_eq!(out.network.to_vec().len(), 15);
        assert_eq!(r.init_draws, 1);
        let objs: Vec<f64> = std::iter::once(r.initial_objective).chain(r.epochs.iter().map(|e| e.objective)).collect();
        assert!(objs.windows(2).all(|w| w[1] <= w[0]));
        assert!(objs.last().unwrap() < &(0.1 * r.initial_objective));
        let again = train(&ds, ClosureForm::BurgersFull, &cfg).unwrap();
        assert_eq!(again.network, out.network);
    }

    #[test]
    fn screening_continues_only_the_best_restart() {
        let ds = small_burgers();
        let cfg = TrainConfig {
            max_epochs: 12,
            val_every: 2,
            restarts: 3,
            screen_epochs: 4,
            seed: 1,
            ..TrainConfig::default()
        };
        let out = train(&ds, ClosureForm::BurgersFull, &cfg).unwrap();
        let r = &out.report;
        assert_eq!(r.restarts.len(), 3);
        let chosen = &r.restarts[r.chosen_restart];
        let best = r.restarts.iter().map(|s| s.best_val_error).fold(f64::INFINITY, f64::min);
        assert!(chosen.best_val_error <= best);
        for s in &r.restarts {
            assert!(s.epochs.is_empty());
        }
        assert!(r.epochs.len() > 4 || r.stop_reason != StopReason::MaxEpochs);
        assert!(r.epochs.len() <= 12);
        let again = train(&ds, ClosureForm::BurgersFull, &cfg).unwrap();
        assert_eq!(again.network, out.network);
    }

    #[test]
    fn mismatched_form_is_rejected() {
        let ds = small_burgers();
        assert!(matches!(
            train(&ds, ClosureForm::SwPressure2d, &TrainConfig::default()),
            Err(TrainError::Config(_))
        ));
        assert!(matches!(
            train(&ds, ClosureForm::PwPressureRhoOnly, &TrainConfig::default()),
            Err(TrainError::Config(_))
        ));
    }
}
