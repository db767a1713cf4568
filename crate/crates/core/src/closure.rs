//! Shallow-network closures and the conservative schemes built around them.
//!
//! The unknown part of the flux is a scalar function `N` of the state. Each
//! [`ClosureForm`] fixes how `N` enters the flux and how the average state of
//! the linearization is chosen, so that the resulting Roe-type matrix is
//! consistent with the composite flux and, up to the RH residual, conservative.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{roe_momentum, scalar_roe, PayneWhitham, EPS_V};
use crate::riemann::{eigenvalues, Matrix, RoeData, WaveFan};
use crate::system::{solve_with, HlleInputs, HyperbolicSystem, SolverKind, SystemError};

pub const PARAMS_SCHEMA_VERSION: u32 = 1;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fixed characteristic scales of a network's inputs and output. They are not
/// trained; they express the same closure in variables of order one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub input: [f64; 2],
    pub output: f64,
}

impl Default for Scaling {
    fn default() -> Self {
        Self {
            input: [1.0, 1.0],
            output: 1.0,
        }
    }
}

impl Scaling {
    pub fn is_valid(&self) -> bool {
        self.input.iter().chain([&self.output]).all(|v| v.is_finite() && *v > 0.0)
    }
}

/// `N(u) = c w_o . sigmoid(W (u / s) + b)` with `L` hidden units and no output
/// bias; `s` and `c` come from the [`Scaling`] and are 1 unless set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub n_neurons: usize,
    pub input_dim: usize,
    pub output_weights: Vec<f64>,
    /// `L x input_dim`, row-major.
    pub input_weights: Vec<f64>,
    pub biases: Vec<f64>,
    #[serde(default)]
    pub scaling: Scaling,
}

#[derive(Debug, Error, PartialEq)]
pub enum ParamsError {
    #[error("expected {expected} parameters for L = {n_neurons}, input dim {input_dim}; got {got}")]
    Length {
        expected: usize,
        got: usize,
        n_neurons: usize,
        input_dim: usize,
    },
    #[error("input dimension {0} is not supported (1 or 2)")]
    InputDim(usize),
}

impl NetworkParams {
    pub fn n_params(n_neurons: usize, input_dim: usize) -> usize {
        n_neurons * (input_dim + 2)
    }

    pub fn zeros(n_neurons: usize, input_dim: usize) -> Self {
        Self {
            n_neurons,
            input_dim,
            output_weights: vec![0.0; n_neurons],
            input_weights: vec![0.0; n_neurons * input_dim],
            biases: vec![0.0; n_neurons],
            scaling: Scaling::default(),
        }
    }

    /// Unpacks `[w_o, W (row-major), b]`.
    pub fn from_slice(n_neurons: usize, input_dim: usize, p: &[f64]) -> Result<Self, ParamsError> {
        if !(1..=2).contains(&input_dim) {
            return Err(ParamsError::InputDim(input_dim));
        }
        let expected = Self::n_params(n_neurons, input_dim);
        if p.len() != expected {
            return Err(ParamsError::Length {
                expected,
                got: p.len(),
                n_neurons,
                input_dim,
            });
        }
        let (wo, rest) = p.split_at(n_neurons);
        let (w, b) = rest.split_at(n_neurons * input_dim);
        Ok(Self {
            n_neurons,
            input_dim,
            output_weights: wo.to_vec(),
            input_weights: w.to_vec(),
            biases: b.to_vec(),
            scaling: Scaling::default(),
        })
    }

    pub fn with_scaling(mut self, scaling: Scaling) -> Self {
        self.scaling = scaling;
        self
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::n_params(self.n_neurons, self.input_dim));
        out.extend_from_slice(&self.output_weights);
        out.extend_from_slice(&self.input_weights);
        out.extend_from_slice(&self.biases);
        out
    }

    fn activation(&self, k: usize, u: &[f64]) -> f64 {
        let row = &self.input_weights[k * self.input_dim..(k + 1) * self.input_dim];
        let scale = &self.scaling.input;
        let z: f64 = self.biases[k]
            + row
                .iter()
                .zip(u)
                .zip(scale)
                .map(|((w, x), s)| w * x / s)
                .sum::<f64>();
        sigmoid(z)
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        self.scaling.output
            * (0..self.n_neurons)
                .map(|k| self.output_weights[k] * self.activation(k, u))
                .sum::<f64>()
    }

    /// Value and gradient `c W^T diag(s (1 - s)) w_o / s`; unused gradient slots are zero.
    pub fn eval_with_grad(&self, u: &[f64]) -> (f64, [f64; 2]) {
        let mut value = 0.0;
        let mut grad = [0.0; 2];
        for k in 0..self.n_neurons {
            let s = self.activation(k, u);
            value += self.output_weights[k] * s;
            let ds = self.output_weights[k] * s * (1.0 - s);
            for j in 0..self.input_dim {
                grad[j] += self.input_weights[k * self.input_dim + j] * ds;
            }
        }
        let c = self.scaling.output;
        for j in 0..self.input_dim {
            grad[j] *= c / self.scaling.input[j];
        }
        (c * value, grad)
    }
}

/// The scalar unknown term of a flux.
pub trait Closure: Sync {
    fn value(&self, u: &[f64]) -> f64;
    fn value_grad(&self, u: &[f64]) -> (f64, [f64; 2]);
}

impl Closure for NetworkParams {
    fn value(&self, u: &[f64]) -> f64 {
        self.eval(u)
    }

    fn value_grad(&self, u: &[f64]) -> (f64, [f64; 2]) {
        self.eval_with_grad(u)
    }
}

/// The true closures of the benchmark systems, used to check the learning
/// pipeline end to end and as reference curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticClosure {
    /// `u^2 / 2`.
    BurgersFlux,
    /// `v_max (1 - rho)`.
    LwrVelocity { v_max: f64 },
    /// `g h^2 / 2`, ignoring a second input.
    SwPressure { g: f64 },
    /// `(v0 - Ve(rho)) / (2 tau)`, ignoring a second input.
    PwPressure(PayneWhitham),
}

impl Closure for AnalyticClosure {
    fn value(&self, u: &[f64]) -> f64 {
        self.value_grad(u).0
    }

    fn value_grad(&self, u: &[f64]) -> (f64, [f64; 2]) {
        match *self {
            AnalyticClosure::BurgersFlux => (0.5 * u[0] * u[0], [u[0], 0.0]),
            AnalyticClosure::LwrVelocity { v_max } => (v_max * (1.0 - u[0]), [-v_max, 0.0]),
            AnalyticClosure::SwPressure { g } => (0.5 * g * u[0] * u[0], [g * u[0], 0.0]),
            AnalyticClosure::PwPressure(pw) => (pw.pressure(u[0]), [pw.pressure_slope(u[0]), 0.0]),
        }
    }
}

/// How the learned scalar enters the flux.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosureForm {
    /// `f = N(u)`.
    BurgersFull,
    /// `f = rho N(rho)`.
    LwrVelocity,
    /// `f = [q, q^2/h + N(h, q)]`.
    SwPressure2d,
    /// `f = [q, q^2/rho + N(rho, q)]` with the relaxation source.
    PwPressure2d,
    /// `f = [q, q^2/rho + N(rho)]` with the relaxation source; exactly conservative.
    PwPressureRhoOnly,
}

impl ClosureForm {
    pub fn n_components(&self) -> usize {
        match self {
            ClosureForm::BurgersFull | ClosureForm::LwrVelocity => 1,
            _ => 2,
        }
    }

    pub fn net_input_dim(&self) -> usize {
        match self {
            ClosureForm::SwPressure2d | ClosureForm::PwPressure2d => 2,
            _ => 1,
        }
    }

    /// Whether the RH residual is part of the loss.
    pub fn has_rh_loss(&self) -> bool {
        *self != ClosureForm::PwPressureRhoOnly
    }

    pub fn has_source(&self) -> bool {
        matches!(self, ClosureForm::PwPressure2d | ClosureForm::PwPressureRhoOnly)
    }

    pub fn default_solver(&self) -> SolverKind {
        if self.has_source() {
            SolverKind::Hlle
        } else {
            SolverKind::Roe
        }
    }

    /// Whether `N` only enters through differences, so it is identified up to a constant.
    pub fn shift_invariant(&self) -> bool {
        *self != ClosureForm::LwrVelocity
    }

    fn net_input<'a>(&self, q: &'a [f64]) -> &'a [f64] {
        &q[..self.net_input_dim()]
    }
}

/// Average state of the linearization between `q_l` and `q_r`.
pub fn average_state(form: ClosureForm, q_l: &[f64], q_r: &[f64]) -> Result<Vec<f64>, SystemError> {
    match form.n_components() {
        1 => Ok(vec![0.5 * (q_l[0] + q_r[0])]),
        _ => {
            for q in [q_l, q_r] {
                if !(q[0] > 0.0) {
                    return Err(SystemError::inadmissible(q, "density must be positive"));
                }
            }
            let ql = [q_l[0], q_l[1]];
            let qr = [q_r[0], q_r[1]];
            Ok(vec![0.5 * (q_l[0] + q_r[0]), roe_momentum(&ql, &qr)])
        }
    }
}

/// A conservation law whose flux contains a closure `N`.
#[derive(Debug, Clone, Copy)]
pub struct ClosureSystem<'a, C: Closure> {
    pub form: ClosureForm,
    pub closure: &'a C,
    /// Relaxation source for the PW forms.
    pub relaxation: Option<PayneWhitham>,
}

impl<'a, C: Closure> ClosureSystem<'a, C> {
    pub fn new(form: ClosureForm, closure: &'a C, relaxation: Option<PayneWhitham>) -> Self {
        Self {
            form,
            closure,
            relaxation,
        }
    }

    fn check_positive(q: &[f64]) -> Result<(), SystemError> {
        if q[0] > 0.0 {
            Ok(())
        } else {
            Err(SystemError::inadmissible(q, "density must be positive"))
        }
    }

    /// Average state and linearized matrix given `N` at the two cells (only
    /// read by the rho-only form).
    fn linear_matrix(&self, q_l: &[f64; 2], q_r: &[f64; 2], n_l: f64, n_r: f64) -> Result<([f64; 2], Matrix<2>), SystemError> {
        Self::check_positive(q_l)?;
        Self::check_positive(q_r)?;
        let rho = 0.5 * (q_l[0] + q_r[0]);
        let m = roe_momentum(q_l, q_r);
        let avg = [rho, m];
        let v = m / rho;
        let gap = q_r[0] - q_l[0];
        let (slope, g_q) = if self.form == ClosureForm::PwPressureRhoOnly && gap.abs() >= EPS_V * rho {
            ((n_r - n_l) / gap, 0.0)
        } else {
            let (_, g) = self.closure.value_grad(self.form.net_input(&avg));
            (g[0], g[1])
        };
        Ok((avg, [[0.0, 1.0], [-v * v + slope, 2.0 * v + g_q]]))
    }

    fn linearize_with(&self, q_l: &[f64; 2], q_r: &[f64; 2], n_l: f64, n_r: f64) -> Result<RoeData<2>, SystemError> {
        let (avg, matrix) = self.linear_matrix(q_l, q_r, n_l, n_r)?;
        Ok(RoeData::from_matrix(avg, matrix)?)
    }

    /// `N` at a cell when the linearization needs it.
    fn cell_value(&self, q: &[f64; 2]) -> f64 {
        if self.form == ClosureForm::PwPressureRhoOnly {
            self.closure.value(&q[..1])
        } else {
            0.0
        }
    }

    /// RH residual of the linearization between two neighbouring states.
    pub fn rh_residual_pair(&self, q_l: &[f64], q_r: &[f64]) -> Result<f64, SystemError> {
        let c = self.closure;
        match self.form {
            ClosureForm::BurgersFull => {
                let (_, g) = c.value_grad(&[0.5 * (q_l[0] + q_r[0])]);
                Ok(g[0] * (q_r[0] - q_l[0]) - (c.value(&q_r[..1]) - c.value(&q_l[..1])))
            }
            ClosureForm::LwrVelocity => {
                let m = 0.5 * (q_l[0] + q_r[0]);
                let (v, g) = c.value_grad(&[m]);
                let lhs = (v + m * g[0]) * (q_r[0] - q_l[0]);
                Ok(lhs - (q_r[0] * c.value(&q_r[..1]) - q_l[0] * c.value(&q_l[..1])))
            }
            ClosureForm::PwPressureRhoOnly => Ok(0.0),
            ClosureForm::SwPressure2d | ClosureForm::PwPressure2d => {
                let avg = average_state(self.form, q_l, q_r)?;
                let (_, g) = c.value_grad(&avg);
                let lhs = g[0] * (q_r[0] - q_l[0]) + g[1] * (q_r[1] - q_l[1]);
                Ok(lhs - (c.value(&q_r[..2]) - c.value(&q_l[..2])))
            }
        }
    }
}

impl<C: Closure> HyperbolicSystem<1> for ClosureSystem<'_, C> {
    fn flux(&self, q: &[f64; 1]) -> [f64; 1] {
        match self.form {
            ClosureForm::BurgersFull => [self.closure.value(q)],
            ClosureForm::LwrVelocity => [q[0] * self.closure.value(q)],
            f => unreachable!("{f:?} has two components"),
        }
    }

    fn jacobian(&self, q: &[f64; 1]) -> Matrix<1> {
        let (v, g) = self.closure.value_grad(q);
        match self.form {
            ClosureForm::BurgersFull => [[g[0]]],
            ClosureForm::LwrVelocity => [[v + q[0] * g[0]]],
            f => unreachable!("{f:?} has two components"),
        }
    }

    fn linearize(&self, q_l: &[f64; 1], q_r: &[f64; 1]) -> Result<RoeData<1>, SystemError> {
        let m = [0.5 * (q_l[0] + q_r[0])];
        let a = self.jacobian(&m)[0][0];
        if !a.is_finite() {
            return Err(SystemError::inadmissible(&m, "non-finite linearization"));
        }
        Ok(scalar_roe(m[0], a))
    }
}

impl<C: Closure> HyperbolicSystem<2> for ClosureSystem<'_, C> {
    fn flux(&self, q: &[f64; 2]) -> [f64; 2] {
        [q[1], q[1] * q[1] / q[0] + self.closure.value(self.form.net_input(q))]
    }

    fn jacobian(&self, q: &[f64; 2]) -> Matrix<2> {
        let v = q[1] / q[0];
        let (_, g) = self.closure.value_grad(self.form.net_input(q));
        [[0.0, 1.0], [-v * v + g[0], 2.0 * v + g[1]]]
    }

    fn check_state(&self, q: &[f64; 2]) -> Result<(), SystemError> {
        Self::check_positive(q)
    }

    fn linearize(&self, q_l: &[f64; 2], q_r: &[f64; 2]) -> Result<RoeData<2>, SystemError> {
        self.linearize_with(q_l, q_r, self.cell_value(q_l), self.cell_value(q_r))
    }

    /// Computes `N` and its gradient once per cell and shares them between
    /// the two interfaces of the cell.
    fn interface_fans(&self, ext: &[[f64; 2]], kind: SolverKind) -> Result<Vec<WaveFan<2>>, (usize, SystemError)> {
        // the Roe path only needs cell values for the rho-only secant or an HLLE fallback
        let precompute = kind == SolverKind::Hlle || self.form == ClosureForm::PwPressureRhoOnly;
        let cells: Vec<(f64, [f64; 2])> = if precompute {
            ext.iter().map(|q| self.closure.value_grad(self.form.net_input(q))).collect()
        } else {
            Vec::new()
        };
        let cell = |k: usize| {
            cells
                .get(k)
                .copied()
                .unwrap_or_else(|| self.closure.value_grad(self.form.net_input(&ext[k])))
        };
        let eig = |q: &[f64; 2], g: &[f64; 2]| -> Result<[f64; 2], SystemError> {
            let v = q[1] / q[0];
            Ok(eigenvalues(&[[0.0, 1.0], [-v * v + g[0], 2.0 * v + g[1]]])?)
        };
        let flux = |q: &[f64; 2], n: f64| [q[1], q[1] * q[1] / q[0] + n];
        (0..ext.len() - 1)
            .map(|k| {
                let (q_l, q_r) = (&ext[k], &ext[k + 1]);
                let (n_l, n_r) = if precompute { (cells[k].0, cells[k + 1].0) } else { (0.0, 0.0) };
                self.linearize_with(q_l, q_r, n_l, n_r)
                    .and_then(|roe| {
                        solve_with(&roe, q_l, q_r, kind, || {
                            let ((n_l, g_l), (n_r, g_r)) = (cell(k), cell(k + 1));
                            Ok(HlleInputs {
                                flux_l: flux(q_l, n_l),
                                flux_r: flux(q_r, n_r),
                                eig_l: eig(q_l, &g_l)?,
                                eig_r: eig(q_r, &g_r)?,
                            })
                        })
                    })
                    .map_err(|e| (k, e))
            })
            .collect()
    }

    fn source(&self, q: &[f64; 2]) -> Option<[f64; 2]> {
        self.relaxation.and_then(|pw| pw.source(q[0], q[1]).ok())
    }

    fn source_jacobian(&self, q: &[f64; 2]) -> Matrix<2> {
        match self.relaxation {
            Some(pw) => HyperbolicSystem::<2>::source_jacobian(&pw, q),
            None => [[0.0; 2]; 2],
        }
    }

    fn relax_exact(&self, q: &[f64; 2], dt: f64) -> Option<[f64; 2]> {
        self.relaxation.map(|pw| [q[0], pw.relax(q[0], q[1], dt)])
    }
}

/// Per-cell RH residuals of a field: entry `i - 1` uses cells `i - 1` and `i`,
/// with `Q_0` taken from the ghost extension.
pub fn rh_residuals<const D: usize, C: Closure>(
    sys: &ClosureSystem<'_, C>,
    ext: &[[f64; D]],
    out: &mut Vec<f64>,
) -> Result<(), SystemError> {
    // ext holds Q_{-1}..Q_{N+2}; cells 0..=N live at ext[1..=N+1]
    let n = ext.len() - 4;
    for i in 1..=n {
        out.push(sys.rh_residual_pair(&ext[i], &ext[i + 1])?);
    }
    Ok(())
}

/// A learned closure with the metadata needed to use it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub schema_version: u32,
    pub form: ClosureForm,
    pub network: NetworkParams,
    #[serde(default)]
    pub hyperparameters: serde_json::Value,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riemann::mat_vec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut ChaCha8Rng, l: usize, d: usize, scale: f64) -> NetworkParams {
        let p: Vec<f64> = (0..NetworkParams::n_params(l, d))
            .map(|_| scale * rng.gen_range(-1.0..1.0))
            .collect();
        NetworkParams::from_slice(l, d, &p).unwrap()
    }

    #[test]
    fn network_examples() {
        let mut p = NetworkParams::zeros(3, 2);
        assert_eq!(p.eval(&[0.3, -1.0]), 0.0);
        assert_eq!(p.eval_with_grad(&[0.3, -1.0]).1, [0.0, 0.0]);
        p.output_weights = vec![1.0, 2.0, -1.0];
        p.biases = vec![0.1, -0.4, 2.0];
        let expect: f64 = sigmoid(0.1) + 2.0 * sigmoid(-0.4) - sigmoid(2.0);
        assert!((p.eval(&[5.0, 7.0]) - expect).abs() < 1e-15);
        assert!((p.eval(&[-2.0, 0.5]) - expect).abs() < 1e-15);

        let one = NetworkParams::from_slice(1, 1, &[1.0, 1.0, 0.0]).unwrap();
        assert_eq!(one.eval(&[0.0]), 0.5);
        assert_eq!(one.eval_with_grad(&[0.0]).1[0], 0.25);
    }

    #[test]
    fn parameter_layout() {
        assert_eq!(NetworkParams::n_params(5, 1), 15);
        assert_eq!(NetworkParams::n_params(5, 2), 20);
        let v: Vec<f64> = (0..20).map(f64::from).collect();
        let p = NetworkParams::from_slice(5, 2, &v).unwrap();
        assert_eq!(p.output_weights, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(p.input_weights[..2], [5.0, 6.0]);
        assert_eq!(p.biases[0], 15.0);
        assert_eq!(p.to_vec(), v);
        assert!(NetworkParams::from_slice(5, 2, &v[..19]).is_err());
        assert!(NetworkParams::from_slice(5, 3, &v).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = random_params(&mut rng, 5, 2, 3.0);
        let file = ParamsFile {
            schema_version: PARAMS_SCHEMA_VERSION,
            form: ClosureForm::SwPressure2d,
            network: net,
            hyperparameters: serde_json::json!({"lambda0": 0.01}),
        };
        let text = serde_json::to_string_pretty(&file).unwrap();
        assert!(text.contains("\"sw_pressure2d\""));
        let back: ParamsFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back, file);
    }

    #[test]
    fn average_state_examples() {
        assert_eq!(average_state(ClosureForm::BurgersFull, &[1.0], &[3.0]).unwrap(), vec![2.0]);
        let a = average_state(ClosureForm::SwPressure2d, &[1.0, 1.0], &[4.0, 8.0]).unwrap();
        assert_eq!(a[0], 2.5);
        assert!((a[1] - 25.0 / 6.0).abs() < 1e-14);
        let same = average_state(ClosureForm::PwPressure2d, &[0.1, 0.4], &[0.1, 0.4]).unwrap();
        assert!((same[0] - 0.1).abs() < 1e-16 && (same[1] - 0.4).abs() < 1e-15);
        assert!(average_state(ClosureForm::PwPressure2d, &[0.0, 0.4], &[0.1, 0.4]).is_err());
    }

    #[test]
    fn constant_closure_has_zero_residual() {
        let mut p = NetworkParams::zeros(3, 1);
        p.output_weights = vec![0.4, -1.0, 2.0];
        let sys = ClosureSystem::new(ClosureForm::BurgersFull, &p, None);
        assert_eq!(sys.rh_residual_pair(&[0.3], &[1.7]).unwrap(), 0.0);
    }

    #[test]
    fn constant_field_has_zero_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = random_params(&mut rng, 5, 2, 1.0);
        let sys = ClosureSystem::new(ClosureForm::SwPressure2d, &net, None);
        let ext = vec![[1.2, 0.3]; 12];
        let mut out = Vec::new();
        rh_residuals(&sys, &ext, &mut out).unwrap();
        assert_eq!(out, vec![0.0; 8]);
    }

    #[test]
    fn analytic_closures_reproduce_models() {
        use crate::models::{Burgers, Lwr, ShallowWater};
        let pw = PayneWhitham::default();
        let b = AnalyticClosure::BurgersFlux;
        let sys = ClosureSystem::new(ClosureForm::BurgersFull, &b, None);
        let (ql, qr) = ([0.3], [1.9]);
        assert_eq!(sys.linearize(&ql, &qr).unwrap(), Burgers.linearize(&ql, &qr).unwrap());
        assert!(sys.rh_residual_pair(&ql, &qr).unwrap().abs() < 1e-15);

        let l = AnalyticClosure::LwrVelocity { v_max: 0.7 };
        let sys = ClosureSystem::new(ClosureForm::LwrVelocity, &l, None);
        let m = Lwr::default().linearize(&[0.2], &[0.6]).unwrap();
        assert!((sys.linearize(&[0.2], &[0.6]).unwrap().matrix[0][0] - m.matrix[0][0]).abs() < 1e-15);
        assert!(sys.rh_residual_pair(&[0.2], &[0.6]).unwrap().abs() < 1e-15);

        let s = AnalyticClosure::SwPressure { g: 1.0 };
        let sys = ClosureSystem::new(ClosureForm::SwPressure2d, &s, None);
        let (ql, qr) = ([1.0, 1.0], [4.0, 8.0]);
        let a = sys.linearize(&ql, &qr).unwrap();
        let b = ShallowWater::default().linearize(&ql, &qr).unwrap();
        for p in 0..2 {
            assert!((a.eigenvalues[p] - b.eigenvalues[p]).abs() < 1e-14);
        }
        assert!(sys.rh_residual_pair(&ql, &qr).unwrap().abs() < 1e-14);

        let c = AnalyticClosure::PwPressure(pw);
        let sys = ClosureSystem::new(ClosureForm::PwPressureRhoOnly, &c, Some(pw));
        let (ql, qr) = ([0.08, 0.5], [0.13, 0.4]);
        let a = sys.linearize(&ql, &qr).unwrap();
        let b = pw.linearize(&ql, &qr).unwrap();
        for p in 0..2 {
            assert!((a.eigenvalues[p] - b.eigenvalues[p]).abs() < 1e-12);
        }
        assert_eq!(sys.relax_exact(&ql, 0.5), pw.relax_exact(&ql, 0.5));
    }

    fn fd_grad(net: &NetworkParams, u: &[f64]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for j in 0..net.input_dim {
            let h = 1e-6 * (1.0 + u[j].abs());
            let (mut p, mut m) = (u.to_vec(), u.to_vec());
            p[j] += h;
            m[j] -= h;
            out[j] = (net.eval(&p) - net.eval(&m)) / (2.0 * h);
        }
        out
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let d = rng.gen_range(1..=2);
            let net = random_params(&mut rng, 5, d, 1.0);
            let u: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (_, g) = net.eval_with_grad(&u);
            let fd = fd_grad(&net, &u);
            for j in 0..d {
                assert!((g[j] - fd[j]).abs() <= 1e-6 * g[j].abs().max(1e-3), "{g:?} {fd:?}");
            }
        }
    }

    #[test]
    fn scaling_is_a_change_of_variables() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let scaling = Scaling {
            input: [0.1, 1.5],
            output: 22.5,
        };
        for _ in 0..20 {
            let net = random_params(&mut rng, 5, 2, 1.0);
            let scaled = net.clone().with_scaling(scaling);
            let u = [rng.gen_range(0.05..0.2), rng.gen_range(0.2..0.8)];
            let (v, g) = scaled.eval_with_grad(&u);
            let (v0, g0) = net.eval_with_grad(&[u[0] / 0.1, u[1] / 1.5]);
            assert!((v - 22.5 * v0).abs() <= 1e-12 * v.abs().max(1.0));
            assert!((g[0] - 225.0 * g0[0]).abs() <= 1e-12 * g[0].abs().max(1.0));
            assert!((g[1] - 15.0 * g0[1]).abs() <= 1e-12 * g[1].abs().max(1.0));
            let fd = fd_grad(&scaled, &u);
            for j in 0..2 {
                assert!((g[j] - fd[j]).abs() <= 1e-6 * g[j].abs().max(1e-3), "{g:?} {fd:?}");
            }
        }
        let json = serde_json::to_string(&NetworkParams::zeros(2, 1)).unwrap();
        let back: NetworkParams = serde_json::from_str(&json.replace(r#","scaling":{"input":[1.0,1.0],"output":1.0}"#, "")).unwrap();
        assert_eq!(back.scaling, Scaling::default());
    }

    #[test]
    fn cached_fans_match_per_interface_solves() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let ext: Vec<[f64; 2]> = (0..12)
            .map(|k| [0.5 + 0.3 * (k as f64 * 0.9).sin(), 0.2 * (k as f64 * 0.4).cos()])
            .collect();
        for form in [ClosureForm::SwPressure2d, ClosureForm::PwPressure2d, ClosureForm::PwPressureRhoOnly] {
            let mut net = random_params(&mut rng, 5, form.net_input_dim(), 0.5);
            // increasing in rho keeps the rho-only form hyperbolic
            net.output_weights = vec![2.0; 5];
            net.input_weights.iter_mut().step_by(form.net_input_dim()).for_each(|w| *w = w.abs() + 0.5);
            let sys = ClosureSystem::new(form, &net, None);
            for kind in [SolverKind::Roe, SolverKind::Hlle] {
                let cached = HyperbolicSystem::<2>::interface_fans(&sys, &ext, kind).unwrap();
                for (k, fan) in cached.iter().enumerate() {
                    let direct = sys.solve_riemann(&ext[k], &ext[k + 1], kind).unwrap();
                    for p in 0..2 {
                        assert!((fan.speeds[p] - direct.speeds[p]).abs() < 1e-12);
                        for d in 0..2 {
                            assert!((fan.waves[p][d] - direct.waves[p][d]).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    fn composite_fd_jacobian<C: Closure>(sys: &ClosureSystem<'_, C>, q: &[f64; 2]) -> Matrix<2> {
        let mut out = [[0.0; 2]; 2];
        for j in 0..2 {
            let h = 1e-6 * (1.0 + q[j].abs());
            let (mut p, mut m) = (*q, *q);
            p[j] += h;
            m[j] -= h;
            let (fp, fm) = (sys.flux(&p), sys.flux(&m));
            for i in 0..2 {
                out[i][j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        out
    }

    proptest! {
        #[test]
        fn consistency_for_all_forms(seed in 0u64..1000, rho in 0.2..2.0f64, q in -1.0..1.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for form in [ClosureForm::SwPressure2d, ClosureForm::PwPressure2d, ClosureForm::PwPressureRhoOnly] {
                let net = random_params(&mut rng, 5, form.net_input_dim(), 1.0);
                let sys = ClosureSystem::new(form, &net, None);
                let Ok(roe) = sys.linearize(&[rho, q], &[rho, q]) else { continue };
                let jac = sys.jacobian(&[rho, q]);
                let fd = composite_fd_jacobian(&sys, &[rho, q]);
                for i in 0..2 {
                    for j in 0..2 {
                        prop_assert!((roe.matrix[i][j] - jac[i][j]).abs() <= 1e-10 * (1.0 + jac[i][j].abs()));
                        prop_assert!((fd[i][j] - jac[i][j]).abs() <= 1e-6 * (1.0 + jac[i][j].abs()));
                    }
                }
            }
            for form in [ClosureForm::BurgersFull, ClosureForm::LwrVelocity] {
                let net = random_params(&mut rng, 5, 1, 1.0);
                let sys = ClosureSystem::new(form, &net, None);
                let roe = sys.linearize(&[rho], &[rho]).unwrap();
                let h = 1e-6;
                let fd = (sys.flux(&[rho + h])[0] - sys.flux(&[rho - h])[0]) / (2.0 * h);
                prop_assert!((roe.matrix[0][0] - sys.jacobian(&[rho])[0][0]).abs() < 1e-10);
                prop_assert!((fd - roe.matrix[0][0]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }

        #[test]
        fn rho_only_form_is_exactly_conservative(
            seed in 0u64..10_000,
            rl in 0.02..1.0f64, ql in -2.0..2.0f64,
            rr in 0.02..1.0f64, qr in -2.0..2.0f64,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = random_params(&mut rng, 5, 1, 4.0);
            let sys = ClosureSystem::new(ClosureForm::PwPressureRhoOnly, &net, None);
            let (l, r) = ([rl, ql], [rr, qr]);
            // complex pairs are allowed; the RH identity is about the matrix
            let (_, matrix) = sys.linear_matrix(&l, &r, sys.cell_value(&l), sys.cell_value(&r)).unwrap();
            let lhs = mat_vec(&matrix, &[rr - rl, qr - ql]);
            let (fl, fr) = (sys.flux(&l), sys.flux(&r));
            for d in 0..2 {
                let scale = 1.0 + fl[d].abs() + fr[d].abs();
                prop_assert!((lhs[d] - (fr[d] - fl[d])).abs() < 1e-12 * scale);
            }
        }

        #[test]
        fn residual_ignores_constant_shift(seed in 0u64..1000, a in 0.2..2.0f64, b in 0.2..2.0f64, c in -1.0..1.0f64, d in -1.0..1.0f64) {
            // appending a saturated unit adds (almost exactly) a constant to N
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for form in [ClosureForm::BurgersFull, ClosureForm::SwPressure2d, ClosureForm::PwPressure2d] {
                let k = form.net_input_dim();
                let net = random_params(&mut rng, 4, k, 1.0);
                let mut shifted = NetworkParams::zeros(5, k);
                shifted.output_weights[..4].copy_from_slice(&net.output_weights);
                shifted.output_weights[4] = 3.0;
                shifted.input_weights[..4 * k].copy_from_slice(&net.input_weights);
                shifted.biases[..4].copy_from_slice(&net.biases);
                shifted.biases[4] = 60.0;
                let s1 = ClosureSystem::new(form, &net, None);
                let s2 = ClosureSystem::new(form, &shifted, None);
                let (l, r): (Vec<f64>, Vec<f64>) = if k == 1 && form.n_components() == 1 { (vec![a], vec![b]) } else { (vec![a, c], vec![b, d]) };
                let r1 = s1.rh_residual_pair(&l, &r).unwrap();
                let r2 = s2.rh_residual_pair(&l, &r).unwrap();
                prop_assert!((r1 - r2).abs() < 1e-12);
            }
        }
    }
}
