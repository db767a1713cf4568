//! The four benchmark systems: fluxes, Jacobians, sources, closed-form Roe
//! linearizations and initial-condition families.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::riemann::{Matrix, RiemannError, RoeData};
use crate::system::{HyperbolicSystem, SystemError};

/// Relative density gap below which the PW secant slope is replaced by its limit.
pub const EPS_V: f64 = 1e-8;

pub fn flux_burgers(u: f64) -> f64 {
    0.5 * u * u
}

pub fn flux_lwr(rho: f64, v_max: f64) -> f64 {
    v_max * rho * (1.0 - rho)
}

pub fn roe_scalar_burgers(u_l: f64, u_r: f64) -> RoeData<1> {
    let a = 0.5 * (u_l + u_r);
    scalar_roe(a, a)
}

pub fn roe_scalar_lwr(rho_l: f64, rho_r: f64, v_max: f64) -> RoeData<1> {
    scalar_roe(0.5 * (rho_l + rho_r), v_max * (1.0 - rho_l - rho_r))
}

pub(crate) fn scalar_roe(average: f64, speed: f64) -> RoeData<1> {
    RoeData {
        average: [average],
        matrix: [[speed]],
        eigenvalues: [speed],
        eigenvectors: [[1.0]],
    }
}

/// Square-root weighted momentum average shared by SW and PW.
pub fn roe_momentum(q_l: &[f64; 2], q_r: &[f64; 2]) -> f64 {
    let mean = 0.5 * (q_l[0] + q_r[0]);
    let (sl, sr) = (q_l[0].sqrt(), q_r[0].sqrt());
    mean * (q_l[1] / sl + q_r[1] / sr) / (sl + sr)
}

/// Roe data for `[[0, 1], [c, 2v]]` with eigenvalues `v -+ sqrt(root_arg)`.
pub(crate) fn momentum_roe(
    average: [f64; 2],
    v: f64,
    c: f64,
    root_arg: f64,
) -> Result<RoeData<2>, RiemannError> {
    if !(root_arg >= 0.0) {
        return Err(RiemannError::ComplexEigenvalues {
            discriminant: 4.0 * root_arg,
        });
    }
    let root = root_arg.sqrt();
    let (l1, l2) = (v - root, v + root);
    Ok(RoeData {
        average,
        matrix: [[0.0, 1.0], [c, 2.0 * v]],
        eigenvalues: [l1, l2],
        eigenvectors: [[1.0, l1], [1.0, l2]],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Burgers;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lwr {
    pub v_max: f64,
}

impl Default for Lwr {
    fn default() -> Self {
        Self { v_max: 0.7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShallowWater {
    pub g: f64,
}

impl Default for ShallowWater {
    fn default() -> Self {
        Self { g: 1.0 }
    }
}

/// Payne-Whitham traffic model with the optimal-velocity equilibrium speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayneWhitham {
    pub tau: f64,
    pub v0: f64,
    pub gamma: f64,
    pub beta: f64,
}

impl Default for PayneWhitham {
    fn default() -> Self {
        Self {
            tau: 0.65,
            v0: 15.0,
            gamma: 1.0 / 8.0,
            beta: 1.5,
        }
    }
}

impl ShallowWater {
    pub fn flux(&self, h: f64, q: f64) -> Result<[f64; 2], SystemError> {
        if !(h > 0.0) {
            return Err(SystemError::inadmissible(&[h, q], "depth must be positive"));
        }
        Ok([q, q * q / h + 0.5 * self.g * h * h])
    }

    pub fn pressure(&self, h: f64) -> f64 {
        0.5 * self.g * h * h
    }

    pub fn roe(&self, q_l: &[f64; 2], q_r: &[f64; 2]) -> Result<RoeData<2>, SystemError> {
        for q in [q_l, q_r] {
            if !(q[0] > 0.0) {
                return Err(SystemError::inadmissible(q, "depth must be positive"));
            }
        }
        let h = 0.5 * (q_l[0] + q_r[0]);
        let m = roe_momentum(q_l, q_r);
        let v = m / h;
        Ok(momentum_roe([h, m], v, -v * v + self.g * h, self.g * h)?)
    }
}

impl PayneWhitham {
    /// Optimal velocity as a function of the spacing `s = 1/rho`.
    pub fn ov_of_spacing(&self, s: f64) -> f64 {
        let tb = self.beta.tanh();
        self.v0 * ((self.gamma * s - self.beta).tanh() + tb) / (1.0 + tb)
    }

    /// `dV/ds`.
    pub fn ov_of_spacing_slope(&self, s: f64) -> f64 {
        let c = (self.gamma * s - self.beta).cosh();
        self.v0 * self.gamma / ((1.0 + self.beta.tanh()) * c * c)
    }

    /// Equilibrium speed `Ve(rho) = V(1/rho)`.
    pub fn ov_velocity(&self, rho: f64) -> Result<f64, SystemError> {
        if !(rho > 0.0) {
            return Err(SystemError::inadmissible(&[rho], "density must be positive"));
        }
        Ok(self.ov_of_spacing(1.0 / rho))
    }

    /// Traffic pressure `(v0 - Ve(rho)) / (2 tau)`.
    pub fn pressure(&self, rho: f64) -> f64 {
        (self.v0 - self.ov_of_spacing(1.0 / rho)) / (2.0 * self.tau)
    }

    /// `dP/drho = V'(1/rho) / (2 tau rho^2)`.
    pub fn pressure_slope(&self, rho: f64) -> f64 {
        self.ov_of_spacing_slope(1.0 / rho) / (2.0 * self.tau * rho * rho)
    }

    pub fn flux(&self, rho: f64, q: f64) -> Result<[f64; 2], SystemError> {
        if !(rho > 0.0) {
            return Err(SystemError::inadmissible(&[rho, q], "density must be positive"));
        }
        Ok([q, q * q / rho + self.pressure(rho)])
    }

    pub fn source(&self, rho: f64, q: f64) -> Result<[f64; 2], SystemError> {
        let ve = self.ov_velocity(rho)?;
        Ok([0.0, (rho * ve - q) / self.tau])
    }

    /// The `V-bar` term of the Roe matrix: minus the secant slope of the pressure.
    pub fn v_bar(&self, rho_l: f64, rho_r: f64) -> f64 {
        let mean = 0.5 * (rho_l + rho_r);
        if (rho_l - rho_r).abs() < EPS_V * mean {
            -self.ov_of_spacing_slope(1.0 / mean) / (2.0 * self.tau * mean * mean)
        } else {
            (self.ov_of_spacing(1.0 / rho_l) - self.ov_of_spacing(1.0 / rho_r))
                / (2.0 * self.tau * (rho_l - rho_r))
        }
    }

    pub fn roe(&self, q_l: &[f64; 2], q_r: &[f64; 2]) -> Result<RoeData<2>, SystemError> {
        for q in [q_l, q_r] {
            if !(q[0] > 0.0) {
                return Err(SystemError::inadmissible(q, "density must be positive"));
            }
        }
        let rho = 0.5 * (q_l[0] + q_r[0]);
        let m = roe_momentum(q_l, q_r);
        let v = m / rho;
        let vb = self.v_bar(q_l[0], q_r[0]);
        Ok(momentum_roe([rho, m], v, -v * v - vb, (-vb).max(0.0))?)
    }

    /// Exact relaxation of `q` toward `rho Ve(rho)` over `dt` with `rho` frozen.
    pub fn relax(&self, rho: f64, q: f64, dt: f64) -> f64 {
        let eq = rho * self.ov_of_spacing(1.0 / rho);
        eq + (q - eq) * (-dt / self.tau).exp()
    }
}

impl HyperbolicSystem<1> for Burgers {
    fn flux(&self, q: &[f64; 1]) -> [f64; 1] {
        [flux_burgers(q[0])]
    }

    fn jacobian(&self, q: &[f64; 1]) -> Matrix<1> {
        [[q[0]]]
    }

    fn linearize(&self, q_l: &[f64; 1], q_r: &[f64; 1]) -> Result<RoeData<1>, SystemError> {
        Ok(roe_scalar_burgers(q_l[0], q_r[0]))
    }
}

impl HyperbolicSystem<1> for Lwr {
    fn flux(&self, q: &[f64; 1]) -> [f64; 1] {
        [flux_lwr(q[0], self.v_max)]
    }

    fn jacobian(&self, q: &[f64; 1]) -> Matrix<1> {
        [[self.v_max * (1.0 - 2.0 * q[0])]]
    }

    fn linearize(&self, q_l: &[f64; 1], q_r: &[f64; 1]) -> Result<RoeData<1>, SystemError> {
        Ok(roe_scalar_lwr(q_l[0], q_r[0], self.v_max))
    }
}

impl HyperbolicSystem<2> for ShallowWater {
    fn flux(&self, q: &[f64; 2]) -> [f64; 2] {
        [q[1], q[1] * q[1] / q[0] + self.pressure(q[0])]
    }

    fn jacobian(&self, q: &[f64; 2]) -> Matrix<2> {
        let v = q[1] / q[0];
        [[0.0, 1.0], [-v * v + self.g * q[0], 2.0 * v]]
    }

    fn check_state(&self, q: &[f64; 2]) -> Result<(), SystemError> {
        self.flux(q[0], q[1]).map(|_| ())
    }

    fn jacobian_eigenvalues(&self, q: &[f64; 2]) -> Result<[f64; 2], SystemError> {
        let v = q[1] / q[0];
        let c = (self.g * q[0]).sqrt();
        Ok([v - c, v + c])
    }

    fn linearize(&self, q_l: &[f64; 2], q_r: &[f64; 2]) -> Result<RoeData<2>, SystemError> {
        self.roe(q_l, q_r)
    }
}

impl HyperbolicSystem<2> for PayneWhitham {
    fn flux(&self, q: &[f64; 2]) -> [f64; 2] {
        [q[1], q[1] * q[1] / q[0] + self.pressure(q[0])]
    }

    fn jacobian(&self, q: &[f64; 2]) -> Matrix<2> {
        let v = q[1] / q[0];
        [[0.0, 1.0], [-v * v + self.pressure_slope(q[0]), 2.0 * v]]
    }

    fn check_state(&self, q: &[f64; 2]) -> Result<(), SystemError> {
        self.flux(q[0], q[1]).map(|_| ())
    }

    fn jacobian_eigenvalues(&self, q: &[f64; 2]) -> Result<[f64; 2], SystemError> {
        let v = q[1] / q[0];
        let c = self.pressure_slope(q[0]).max(0.0).sqrt();
        Ok([v - c, v + c])
    }

    fn linearize(&self, q_l: &[f64; 2], q_r: &[f64; 2]) -> Result<RoeData<2>, SystemError> {
        self.roe(q_l, q_r)
    }

    fn source(&self, q: &[f64; 2]) -> Option<[f64; 2]> {
        self.source(q[0], q[1]).ok()
    }

    fn source_jacobian(&self, q: &[f64; 2]) -> Matrix<2> {
        let rho = q[0];
        let ve = self.ov_of_spacing(1.0 / rho);
        let dve = -self.ov_of_spacing_slope(1.0 / rho) / (rho * rho);
        [[0.0, 0.0], [(ve + rho * dve) / self.tau, -1.0 / self.tau]]
    }

    fn relax_exact(&self, q: &[f64; 2], dt: f64) -> Option<[f64; 2]> {
        Some([q[0], self.relax(q[0], q[1], dt)])
    }
}

/// One of the four benchmark systems with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Burgers,
    Lwr(Lwr),
    ShallowWater(ShallowWater),
    PayneWhitham(PayneWhitham),
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter {name} = {value}: must be positive")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("initial condition family `{family}` does not apply to model `{model}`")]
    FamilyMismatch {
        family: &'static str,
        model: &'static str,
    },
}

impl Model {
    pub fn name(&self) -> &'static str {
        match self {
            Model::Burgers => "burgers",
            Model::Lwr(_) => "lwr",
            Model::ShallowWater(_) => "shallow_water",
            Model::PayneWhitham(_) => "payne_whitham",
        }
    }

    pub fn n_components(&self) -> usize {
        match self {
            Model::Burgers | Model::Lwr(_) => 1,
            _ => 2,
        }
    }

    pub fn has_source(&self) -> bool {
        matches!(self, Model::PayneWhitham(_))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let checks: Vec<(&'static str, f64)> = match self {
            Model::Burgers => vec![],
            Model::Lwr(m) => vec![("v_max", m.v_max)],
            Model::ShallowWater(m) => vec![("g", m.g)],
            Model::PayneWhitham(m) => {
                vec![("tau", m.tau), ("v0", m.v0), ("gamma", m.gamma)]
            }
        };
        for (name, value) in checks {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ModelError::InvalidParameter { name, value });
            }
        }
        Ok(())
    }
}

/// Analytic initial profiles, sampled at cell centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum InitialCondition {
    /// `base + mu exp(-(x - x0)^2 / (2 sigma^2))` in the first component, zero in the second.
    Gaussian {
        mu: f64,
        sigma: f64,
        #[serde(default)]
        x0: f64,
        #[serde(default)]
        base: f64,
    },
    /// `rho_star (1 + mu sin(2 pi x / length))` with constant momentum `q0`.
    Sinusoid {
        rho_star: f64,
        mu: f64,
        length: f64,
        q0: f64,
    },
}

impl InitialCondition {
    pub fn family(&self) -> &'static str {
        match self {
            InitialCondition::Gaussian { .. } => "gaussian",
            InitialCondition::Sinusoid { .. } => "sinusoid",
        }
    }

    /// The state at `x` as a vector of `n_components` entries.
    pub fn evaluate(&self, x: f64, n_components: usize) -> Result<Vec<f64>, ModelError> {
        match *self {
            InitialCondition::Gaussian { mu, sigma, x0, base } => {
                let first = base + mu * (-(x - x0).powi(2) / (2.0 * sigma * sigma)).exp();
                let mut out = vec![0.0; n_components];
                out[0] = first;
                Ok(out)
            }
            InitialCondition::Sinusoid {
                rho_star,
                mu,
                length,
                q0,
            } => {
                if n_components != 2 {
                    return Err(ModelError::FamilyMismatch {
                        family: self.family(),
                        model: "scalar",
                    });
                }
                let rho = rho_star * (1.0 + mu * (2.0 * std::f64::consts::PI * x / length).sin());
                Ok(vec![rho, q0])
            }
        }
    }

    pub fn sample<const D: usize>(&self, model: &Model, grid: &Grid) -> Result<Vec<[f64; D]>, ModelError> {
        if D != model.n_components() {
            return Err(ModelError::FamilyMismatch {
                family: self.family(),
                model: model.name(),
            });
        }
        if let InitialCondition::Sinusoid { .. } = self {
            if D != 2 {
                return Err(ModelError::FamilyMismatch {
                    family: self.family(),
                    model: model.name(),
                });
            }
        }
        grid.centers()
            .into_iter()
            .map(|x| {
                let v = self.evaluate(x, D)?;
                let mut q = [0.0; D];
                q.copy_from_slice(&v);
                Ok(q)
            })
            .collect()
    }
}
