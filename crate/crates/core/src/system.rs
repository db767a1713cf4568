//! The interface between a hyperbolic system and the finite-volume scheme.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::riemann::{self, Matrix, RiemannError, RoeData, WaveFan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Roe,
    Hlle,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("inadmissible state {state:?}: {reason}")]
    Inadmissible { state: Vec<f64>, reason: &'static str },
    #[error(transparent)]
    Riemann(#[from] RiemannError),
}

impl SystemError {
    pub fn inadmissible(state: &[f64], reason: &'static str) -> Self {
        Self::Inadmissible {
            state: state.to_vec(),
            reason,
        }
    }

    /// True when the failure is a loss of hyperbolicity (complex eigenvalues).
    pub fn is_hyperbolicity_loss(&self) -> bool {
        matches!(
            self,
            Self::Riemann(RiemannError::ComplexEigenvalues { .. })
        )
    }
}

/// A system `u_t + f(u)_x = s(u)` with `D` components and a Roe-type linearization.
pub trait HyperbolicSystem<const D: usize>: Sync {
    fn flux(&self, q: &[f64; D]) -> [f64; D];

    fn jacobian(&self, q: &[f64; D]) -> Matrix<D>;

    /// The linearized matrix between two states, with its eigenstructure.
    fn linearize(&self, q_l: &[f64; D], q_r: &[f64; D]) -> Result<RoeData<D>, SystemError>;

    fn check_state(&self, _q: &[f64; D]) -> Result<(), SystemError> {
        Ok(())
    }

    fn jacobian_eigenvalues(&self, q: &[f64; D]) -> Result<[f64; D], SystemError> {
        Ok(riemann::eigenvalues(&self.jacobian(q))?)
    }

    /// Source term `s(u)`; `None` for homogeneous systems.
    fn source(&self, _q: &[f64; D]) -> Option<[f64; D]> {
        None
    }

    /// `ds/du`, by central differences unless overridden.
    fn source_jacobian(&self, q: &[f64; D]) -> Matrix<D> {
        let mut jac = [[0.0; D]; D];
        for j in 0..D {
            let h = 1e-6 * (1.0 + q[j].abs());
            let mut plus = *q;
            let mut minus = *q;
            plus[j] += h;
            minus[j] -= h;
            let (Some(sp), Some(sm)) = (self.source(&plus), self.source(&minus)) else {
                return jac;
            };
            for i in 0..D {
                jac[i][j] = (sp[i] - sm[i]) / (2.0 * h);
            }
        }
        jac
    }

    /// Exact solution of `du/dt = s(u)` over `dt`, when one is known in closed form.
    fn relax_exact(&self, _q: &[f64; D], _dt: f64) -> Option<[f64; D]> {
        None
    }

    /// Speeds and waves at the interface between `q_l` and `q_r`.
    ///
    /// The Roe solver falls back to HLLE when the eigenvector basis is singular.
    fn solve_riemann(
        &self,
        q_l: &[f64; D],
        q_r: &[f64; D],
        kind: SolverKind,
    ) -> Result<WaveFan<D>, SystemError> {
        let roe = self.linearize(q_l, q_r)?;
        solve_with(&roe, q_l, q_r, kind, || {
            Ok(HlleInputs {
                flux_l: self.flux(q_l),
                flux_r: self.flux(q_r),
                eig_l: self.jacobian_eigenvalues(q_l)?,
                eig_r: self.jacobian_eigenvalues(q_r)?,
            })
        })
    }

    /// Fans at every interface of a ghost-extended array; entry `k` joins
    /// `ext[k]` and `ext[k + 1]`. Errors carry the interface index.
    fn interface_fans(&self, ext: &[[f64; D]], kind: SolverKind) -> Result<Vec<WaveFan<D>>, (usize, SystemError)> {
        ext.windows(2)
            .enumerate()
            .map(|(k, pair)| self.solve_riemann(&pair[0], &pair[1], kind).map_err(|e| (k, e)))
            .collect()
    }
}

/// Cell quantities the HLLE solver needs on both sides of an interface.
pub struct HlleInputs<const D: usize> {
    pub flux_l: [f64; D],
    pub flux_r: [f64; D],
    pub eig_l: [f64; D],
    pub eig_r: [f64; D],
}

/// Roe fan from a linearization, or HLLE when asked for or when the
/// eigenvector basis is singular. `hlle` is only called in the second case.
pub fn solve_with<const D: usize>(
    roe: &RoeData<D>,
    q_l: &[f64; D],
    q_r: &[f64; D],
    kind: SolverKind,
    hlle: impl FnOnce() -> Result<HlleInputs<D>, SystemError>,
) -> Result<WaveFan<D>, SystemError> {
    if kind == SolverKind::Roe {
        match riemann::roe_solve(roe, q_l, q_r) {
            Ok(fan) => return Ok(fan),
            Err(RiemannError::Degenerate(..)) => {}
            Err(e) => return Err(e.into()),
        }
    }
    let h = hlle()?;
    Ok(riemann::hlle_solve(
        q_l,
        q_r,
        &h.flux_l,
        &h.flux_r,
        &h.eig_l,
        &h.eig_r,
        &roe.eigenvalues,
    ))
}
