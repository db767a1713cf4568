//! High-resolution Godunov-type update in fluctuation form, with flux-limited
//! second-order corrections and Godunov splitting for source terms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{fill_ghost, BoundaryKind, CellField};
use crate::riemann::WaveFan;
use crate::system::{HyperbolicSystem, SolverKind, SystemError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimiterKind {
    VanLeer,
    Minmod,
    Superbee,
    /// `phi = 0`: the first-order Godunov method.
    FirstOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceIntegrator {
    None,
    /// Closed-form solution of the source ODE, falling back to implicit Euler.
    ExactRelaxation,
    ImplicitEuler,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub dt: f64,
    pub dx: f64,
    pub limiter: LimiterKind,
    pub solver: SolverKind,
    pub bc: BoundaryKind,
    pub source_integrator: SourceIntegrator,
    /// Reject steps whose CFL number exceeds one.
    pub enforce_cfl: bool,
}

impl StepConfig {
    pub fn ratio(&self) -> f64 {
        self.dt / self.dx
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("CFL number {cfl} exceeds 1")]
    Cfl { cfl: f64 },
    #[error("non-finite value in cell {cell}")]
    NonFinite { cell: usize },
    /// `interface` is `i` for the interface at `i - 1/2`.
    #[error("interface {interface}: {error}")]
    Interface { interface: usize, error: SystemError },
    #[error("source integration did not converge in cell {cell}")]
    SourceNonConvergence { cell: usize },
}

impl StepError {
    pub fn is_hyperbolicity_loss(&self) -> bool {
        matches!(self, StepError::Interface { error, .. } if error.is_hyperbolicity_loss())
    }
}

pub fn limiter(kind: LimiterKind, theta: f64) -> f64 {
    match kind {
        LimiterKind::VanLeer => (theta + theta.abs()) / (1.0 + theta.abs()),
        LimiterKind::Minmod => theta.min(1.0).max(0.0),
        LimiterKind::Superbee => 0.0_f64.max((2.0 * theta).min(1.0)).max(theta.min(2.0)),
        LimiterKind::FirstOrder => 0.0,
    }
}

/// `(A^- dQ, A^+ dQ)` of a fan.
pub fn fluctuations<const D: usize>(fan: &WaveFan<D>) -> ([f64; D], [f64; D]) {
    let mut left = [0.0; D];
    let mut right = [0.0; D];
    for p in 0..fan.n_waves {
        let s = fan.speeds[p];
        for d in 0..D {
            left[d] += s.min(0.0) * fan.waves[p][d];
            right[d] += s.max(0.0) * fan.waves[p][d];
        }
    }
    (left, right)
}

fn dot<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    (0..D).map(|d| a[d] * b[d]).sum()
}

/// Correction flux at one interface.
///
/// `upwind_left` and `upwind_right` are the fans one interface to the left and
/// to the right; wave `p` is compared with the one on its upwind side.
pub fn hr_correction<const D: usize>(
    here: &WaveFan<D>,
    upwind_left: &WaveFan<D>,
    upwind_right: &WaveFan<D>,
    ratio: f64,
    kind: LimiterKind,
) -> [f64; D] {
    let mut out = [0.0; D];
    for p in 0..here.n_waves {
        let s = here.speeds[p];
        let w = &here.waves[p];
        let ww = dot(w, w);
        let theta = if ww == 0.0 {
            0.0
        } else {
            let up = if s < 0.0 { upwind_right } else { upwind_left };
            dot(&up.waves[p], w) / ww
        };
        let factor = 0.5 * s.abs() * (1.0 - ratio * s.abs()) * limiter(kind, theta);
        for d in 0..D {
            out[d] += factor * w[d];
        }
    }
    out
}

/// Fans at every interface of a ghost-extended array; entry `k` is the
/// interface at `k - 1/2`, for `k = 0..=N+2`.
pub fn interface_fans<const D: usize, S: HyperbolicSystem<D> + ?Sized>(
    sys: &S,
    ext: &[[f64; D]],
    solver: SolverKind,
) -> Result<Vec<WaveFan<D>>, StepError> {
    sys.interface_fans(ext, solver)
        .map_err(|(interface, error)| StepError::Interface { interface, error })
}

/// Largest `|s| dt / dx` over the interfaces adjacent to interior cells.
pub fn cfl_of_fans<const D: usize>(fans: &[WaveFan<D>], ratio: f64) -> f64 {
    let n = fans.len() - 3;
    fans[1..=n + 1]
        .iter()
        .fold(0.0_f64, |m, f| m.max(f.max_speed() * ratio))
}

pub fn cfl_number<const D: usize, S: HyperbolicSystem<D> + ?Sized>(
    sys: &S,
    q: &[[f64; D]],
    cfg: &StepConfig,
) -> Result<f64, StepError> {
    let ext = fill_ghost(q, cfg.bc);
    let fans = interface_fans(sys, &ext, cfg.solver)?;
    Ok(cfl_of_fans(&fans, cfg.ratio()))
}

/// One homogeneous update. Returns the new cell values and the CFL number.
pub fn step_homogeneous<const D: usize, S: HyperbolicSystem<D> + ?Sized>(
    sys: &S,
    q: &[[f64; D]],
    cfg: &StepConfig,
) -> Result<(Vec<[f64; D]>, f64), StepError> {
    let n = q.len();
    let ext = fill_ghost(q, cfg.bc);
    let fans = interface_fans(sys, &ext, cfg.solver)?;
    let ratio = cfg.ratio();
    let cfl = cfl_of_fans(&fans, ratio);
    if cfg.enforce_cfl && cfl > 1.0 {
        return Err(StepError::Cfl { cfl });
    }

    let fluct: Vec<_> = fans.iter().map(fluctuations).collect();
    let mut corr = vec![[0.0; D]; n + 3];
    if cfg.limiter != LimiterKind::FirstOrder {
        for k in 1..=n + 1 {
            corr[k] = hr_correction(&fans[k], &fans[k - 1], &fans[k + 1], ratio, cfg.limiter);
        }
    }

    let mut out = Vec::with_capacity(n);
    for i in 1..=n {
        let mut v = q[i - 1];
        let apdq = fluct[i].1;
        let amdq = fluct[i + 1].0;
        for d in 0..D {
            v[d] -= ratio * (apdq[d] + amdq[d]) + ratio * (corr[i + 1][d] - corr[i][d]);
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(StepError::NonFinite { cell: i });
        }
        out.push(v);
    }
    Ok((out, cfl))
}

fn solve_linear<const D: usize>(m: &[[f64; D]; D], rhs: &[f64; D]) -> Option<[f64; D]> {
    match D {
        1 => {
            let mut out = [0.0; D];
            out[0] = rhs[0] / m[0][0];
            out[0].is_finite().then_some(out)
        }
        2 => {
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            if det == 0.0 {
                return None;
            }
            let mut out = [0.0; D];
            out[0] = (rhs[0] * m[1][1] - m[0][1] * rhs[1]) / det;
            out[1] = (m[0][0] * rhs[1] - rhs[0] * m[1][0]) / det;
            out.iter().all(|x| x.is_finite()).then_some(out)
        }
        _ => None,
    }
}

/// Backward Euler for `du/dt = s(u)` solved with Newton iterations.
pub fn implicit_euler<const D: usize, S: HyperbolicSystem<D> + ?Sized>(
    sys: &S,
    q0: &[f64; D],
    dt: f64,
) -> Option<[f64; D]> {
    let scale = 1.0 + q0.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut u = *q0;
    for _ in 0..50 {
        let s = sys.source(&u)?;
        let mut g = [0.0; D];
        for d in 0..D {
            g[d] = u[d] - q0[d] - dt * s[d];
        }
        if g.iter().fold(0.0_f64, |m, v| m.max(v.abs())) <= 1e-12 * scale {
            return Some(u);
        }
        let js = sys.source_jacobian(&u);
        let mut jac = [[0.0; D]; D];
        for i in 0..D {
            for j in 0..D {
                jac[i][j] = if i == j { 1.0 } else { 0.0 } - dt * js[i][j];
            }
        }
        let delta = solve_linear(&jac, &g)?;
        for d in 0..D {
            u[d] -= delta[d];
        }
    }
    None
}

/// Integrates the source term over `dt` in every cell.
pub fn step_source<const D: usize, S: HyperbolicSystem<D> + ?Sized>(
    sys: &S,
    q: &mut [[f64; D]],
    dt: f64,
    integrator: SourceIntegrator,
) -> Result<(), StepError> {
    if integrator == SourceIntegrator::None {
        return Ok(());
    }
    for (idx, cell) in q.iter_mut().enumerate() {
        if sys.source(cell).is_none() {
            continue;
        }
        let exact = match integrator {
            SourceIntegrator::ExactRelaxation => sys.relax_exact(cell, dt),
            _ => None,
        };
        let next = match exact {
            Some(v) => v,
            None => implicit_euler(sys, cell, dt)
                .ok_or(StepError::SourceNonConvergence { cell: idx + 1 })?,
        };
        if !next.iter().all(|x| x.is_finite()) {
            return Err(StepError::NonFinite { cell: idx + 1 });
        }
        *cell = next;
    }
    Ok(())
}

/// A full time step: homogeneous update followed by the source step.
pub fn advance<const D: usize, S: HyperbolicSystem<D> + ?Sized>(
    sys: &S,
    q: &[[f64; D]],
    cfg: &StepConfig,
) -> Result<(Vec<[f64; D]>, f64), StepError> {
    let (mut next, cfl) = step_homogeneous(sys, q, cfg)?;
    step_source(sys, &mut next, cfg.dt, cfg.source_integrator)?;
    Ok((next, cfl))
}

/// Every time level of a forward run plus the CFL number of each step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<const D: usize> {
    pub levels: Vec<CellField<D>>,
    pub cfl: Vec<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("step {step} (t = {time}): {error}")]
pub struct RunError {
    pub step: usize,
    pub time: f64,
    pub error: StepError,
}

/// Runs `n_steps` steps from `initial`, keeping every level.
pub fn simulate<const D: usize, S: HyperbolicSystem<D> + ?Sized>(
    sys: &S,
    initial: CellField<D>,
    cfg: &StepConfig,
    n_steps: usize,
) -> Result<Trajectory<D>, RunError> {
    let mut levels = Vec::with_capacity(n_steps + 1);
    let mut cfl = Vec::with_capacity(n_steps);
    levels.push(initial);
    for step in 1..=n_steps {
        let last = levels.last().expect("non-empty");
        let (next, c) = advance(sys, &last.values, cfg).map_err(|error| RunError {
            step,
            time: last.time,
            error,
        })?;
        cfl.push(c);
        let time = levels[0].time + step as f64 * cfg.dt;
        levels.push(CellField::new(next, time));
    }
    Ok(Trajectory { levels, cfl })
}

/// Number of whole steps covering `[0, t_end]` with step `dt`.
pub fn step_count(t_end: f64, dt: f64) -> usize {
    (t_end / dt).round() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Burgers, PayneWhitham, ShallowWater};
    use proptest::prelude::*;

    fn cfg(dt: f64, dx: f64, bc: BoundaryKind) -> StepConfig {
        StepConfig {
            dt,
            dx,
            limiter: LimiterKind::VanLeer,
            solver: SolverKind::Roe,
            bc,
            source_integrator: SourceIntegrator::None,
            enforce_cfl: true,
        }
    }

    #[test]
    fn limiter_examples() {
        for k in [LimiterKind::VanLeer, LimiterKind::Minmod, LimiterKind::Superbee] {
            assert_eq!(limiter(k, 1.0), 1.0);
            assert_eq!(limiter(k, -2.0), 0.0);
        }
        assert_eq!(limiter(LimiterKind::VanLeer, 3.0), 1.5);
        assert_eq!(limiter(LimiterKind::Superbee, 0.25), 0.5);
        assert_eq!(limiter(LimiterKind::Superbee, 5.0), 2.0);
        assert_eq!(limiter(LimiterKind::Minmod, 0.3), 0.3);
    }

    #[test]
    fn fluctuation_signs() {
        let fan = WaveFan { n_waves: 2, speeds: [1.0, 2.0], waves: [[1.0], [1.0]] };
        assert_eq!(fluctuations(&fan), ([0.0], [3.0]));
        let fan = WaveFan { n_waves: 2, speeds: [-1.0, -2.0], waves: [[1.0], [1.0]] };
        assert_eq!(fluctuations(&fan), ([-3.0], [0.0]));
    }

    #[test]
    fn correction_examples() {
        let zero = WaveFan::<1>::zero(1);
        assert_eq!(hr_correction(&zero, &zero, &zero, 0.5, LimiterKind::VanLeer), [0.0]);
        let fan = WaveFan { n_waves: 1, speeds: [2.0, 0.0], waves: [[1.0], [0.0]] };
        // nu = 1 kills the correction
        assert_eq!(hr_correction(&fan, &fan, &fan, 0.5, LimiterKind::VanLeer), [0.0]);
        // identical neighbours give theta = 1 and the full correction
        let c = hr_correction(&fan, &fan, &zero, 0.25, LimiterKind::Minmod);
        assert_eq!(c, [0.5 * 2.0 * 0.5]);
        // a negative speed looks right
        let neg = WaveFan { n_waves: 1, speeds: [-2.0, 0.0], waves: [[1.0], [0.0]] };
        assert_eq!(hr_correction(&neg, &neg, &zero, 0.25, LimiterKind::Minmod), [0.0]);
    }

    #[test]
    fn constant_field_unchanged() {
        let q = vec![[0.7]; 20];
        for bc in [BoundaryKind::Periodic, BoundaryKind::Outflow] {
            let (next, _) = step_homogeneous(&Burgers, &q, &cfg(0.01, 0.05, bc)).unwrap();
            assert_eq!(next, q);
        }
        let sw = vec![[1.3, 0.4]; 12];
        let (next, _) = step_homogeneous(&ShallowWater::default(), &sw, &cfg(0.01, 0.05, BoundaryKind::Periodic)).unwrap();
        assert_eq!(next, sw);
    }

    #[test]
    fn cfl_examples() {
        let zero = vec![[0.0]; 10];
        assert_eq!(cfl_number(&Burgers, &zero, &cfg(0.005, 0.02, BoundaryKind::Periodic)).unwrap(), 0.0);
        let c = cfl_number(&Burgers, &vec![[2.0]; 10], &cfg(0.005, 0.02, BoundaryKind::Periodic)).unwrap();
        assert!((c - 0.5).abs() < 1e-15);
        let still = vec![[1.0, 0.0]; 10];
        let c = cfl_number(&ShallowWater::default(), &still, &cfg(0.01, 0.05, BoundaryKind::Periodic)).unwrap();
        assert!((c - 0.2).abs() < 1e-15);
        let err = step_homogeneous(&Burgers, &vec![[2.0]; 10], &cfg(0.02, 0.02, BoundaryKind::Periodic));
        assert!(matches!(err, Err(StepError::Cfl { .. })));
    }

    /// Independent first-order Godunov with the Roe flux for Burgers.
    fn first_order_burgers(q: &[f64], ratio: f64) -> Vec<f64> {
        let n = q.len();
        let get = |i: isize| q[i.rem_euclid(n as isize) as usize];
        let flux = |l: f64, r: f64| {
            let a = 0.5 * (l + r);
            0.5 * (0.5 * l * l + 0.5 * r * r) - 0.5 * a.abs() * (r - l)
        };
        (0..n as isize)
            .map(|i| get(i) - ratio * (flux(get(i), get(i + 1)) - flux(get(i - 1), get(i))))
            .collect()
    }

    #[test]
    fn first_order_matches_reference() {
        let n = 40;
        let q: Vec<[f64; 1]> = (0..n).map(|i| [(i as f64 * 0.4).sin() + 0.2]).collect();
        let mut c = cfg(0.01, 0.05, BoundaryKind::Periodic);
        c.limiter = LimiterKind::FirstOrder;
        let (next, _) = step_homogeneous(&Burgers, &q, &c).unwrap();
        let flat: Vec<f64> = q.iter().map(|v| v[0]).collect();
        let reference = first_order_burgers(&flat, 0.2);
        for (a, b) in next.iter().zip(&reference) {
            assert!((a[0] - b).abs() < 1e-14);
        }
    }

    #[test]
    fn source_step_examples() {
        let pw = PayneWhitham::default();
        let rho = 0.1;
        let eq = rho * pw.ov_velocity(rho).unwrap();
        let mut q = vec![[rho, eq]; 6];
        step_source(&pw, &mut q, 0.5, SourceIntegrator::ExactRelaxation).unwrap();
        assert!(q.iter().all(|v| (v[1] - eq).abs() < 1e-15));
        let mut q = vec![[rho, 0.1]; 3];
        step_source(&pw, &mut q, 1e4, SourceIntegrator::ExactRelaxation).unwrap();
        assert!((q[0][1] - eq).abs() < 1e-12);
        let mut b = vec![[0.3]; 4];
        step_source(&Burgers, &mut b, 0.1, SourceIntegrator::ImplicitEuler).unwrap();
        assert_eq!(b, vec![[0.3]; 4]);
    }

    #[test]
    fn implicit_euler_is_backward_euler() {
        let pw = PayneWhitham::default();
        let q0 = [0.12, 0.5];
        let dt = 0.5;
        let u = implicit_euler(&pw, &q0, dt).unwrap();
        let eq = q0[0] * pw.ov_velocity(q0[0]).unwrap();
        // linear ODE in q: closed-form backward Euler
        let expect = (q0[1] + dt / pw.tau * eq) / (1.0 + dt / pw.tau);
        assert_eq!(u[0], q0[0]);
        assert!((u[1] - expect).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_pw_state_is_steady() {
        let pw = PayneWhitham::default();
        let rho = 0.1;
        let q = vec![[rho, rho * pw.ov_velocity(rho).unwrap()]; 10];
        let mut c = cfg(0.5, 8.0, BoundaryKind::Periodic);
        c.solver = SolverKind::Hlle;
        c.source_integrator = SourceIntegrator::ExactRelaxation;
        let (next, _) = advance(&pw, &q, &c).unwrap();
        for (a, b) in next.iter().zip(&q) {
            assert!((a[1] - b[1]).abs() < 1e-15 && a[0] == b[0]);
        }
    }

    proptest! {
        #[test]
        fn periodic_step_conserves(values in prop::collection::vec(-1.0..1.0f64, 8..30)) {
            let q: Vec<[f64; 1]> = values.iter().map(|v| [*v]).collect();
            let (next, _) = step_homogeneous(&Burgers, &q, &cfg(0.01, 0.05, BoundaryKind::Periodic)).unwrap();
            let before: f64 = values.iter().sum();
            let after: f64 = next.iter().map(|v| v[0]).sum();
            prop_assert!((before - after).abs() <= 1e-12 * (1.0 + before.abs() + values.len() as f64));
        }

        #[test]
        fn sw_step_conserves(values in prop::collection::vec((0.5..2.0f64, -0.5..0.5f64), 8..30)) {
            let q: Vec<[f64; 2]> = values.iter().map(|(h, m)| [*h, *m]).collect();
            let mut c = cfg(0.005, 0.05, BoundaryKind::Periodic);
            c.enforce_cfl = false;
            let (next, _) = step_homogeneous(&ShallowWater::default(), &q, &c).unwrap();
            for d in 0..2 {
                let before: f64 = q.iter().map(|v| v[d]).sum();
                let after: f64 = next.iter().map(|v| v[d]).sum();
                prop_assert!((before - after).abs() <= 1e-12 * q.len() as f64 * 2.0);
            }
        }
    }
}
