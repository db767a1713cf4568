//! Approximate Riemann solvers built from a linearization of the flux.
//!
//! Two solvers are provided: the Roe solver, which decomposes the jump on the
//! eigenvectors of a linearized matrix, and the two-wave HLLE solver. Only
//! systems with one or two components are supported; 2x2 eigenproblems are
//! solved in closed form.

use thiserror::Error;

pub type Matrix<const D: usize> = [[f64; D]; D];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiemannError {
    #[error("linearized matrix has complex eigenvalues (discriminant {discriminant:e})")]
    ComplexEigenvalues { discriminant: f64 },
    #[error("eigenvalues {0:e} and {1:e} coincide; eigenvector basis is singular")]
    Degenerate(f64, f64),
    #[error("systems with {0} components are not supported")]
    Unsupported(usize),
}

/// A linearization of the flux between two states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoeData<const D: usize> {
    pub average: [f64; D],
    pub matrix: Matrix<D>,
    /// Sorted ascending.
    pub eigenvalues: [f64; D],
    /// `eigenvectors[p]` is the right eigenvector for `eigenvalues[p]`.
    pub eigenvectors: [[f64; D]; D],
}

impl<const D: usize> RoeData<D> {
    /// Eigendecomposes `matrix`; fails if the eigenvalues are complex.
    pub fn from_matrix(average: [f64; D], matrix: Matrix<D>) -> Result<Self, RiemannError> {
        let (eigenvalues, eigenvectors) = eigen_decompose(&matrix)?;
        Ok(Self {
            average,
            matrix,
            eigenvalues,
            eigenvectors,
        })
    }

    /// `matrix * v`.
    pub fn apply(&self, v: &[f64; D]) -> [f64; D] {
        mat_vec(&self.matrix, v)
    }
}

pub fn mat_vec<const D: usize>(m: &Matrix<D>, v: &[f64; D]) -> [f64; D] {
    let mut out = [0.0; D];
    for i in 0..D {
        for j in 0..D {
            out[i] += m[i][j] * v[j];
        }
    }
    out
}

/// Real eigenvalues of a 1x1 or 2x2 matrix, sorted ascending.
pub fn eigenvalues<const D: usize>(m: &Matrix<D>) -> Result<[f64; D], RiemannError> {
    let mut out = [0.0; D];
    match D {
        1 => out[0] = m[0][0],
        2 => {
            let (a, b, c, d) = (m[0][0], m[0][1], m[1][0], m[1][1]);
            let disc = (a - d) * (a - d) + 4.0 * b * c;
            if !(disc >= 0.0) {
                return Err(RiemannError::ComplexEigenvalues { discriminant: disc });
            }
            let root = disc.sqrt();
            let half_trace = 0.5 * (a + d);
            out[0] = half_trace - 0.5 * root;
            out[1] = half_trace + 0.5 * root;
        }
        n => return Err(RiemannError::Unsupported(n)),
    }
    Ok(out)
}

/// Real eigenvalues (ascending) and right eigenvectors of a 1x1 or 2x2 matrix.
pub fn eigen_decompose<const D: usize>(
    m: &Matrix<D>,
) -> Result<([f64; D], [[f64; D]; D]), RiemannError> {
    let lambda = eigenvalues(m)?;
    let mut vectors = [[0.0; D]; D];
    match D {
        1 => vectors[0][0] = 1.0,
        _ => {
            let (a, b, c, d) = (m[0][0], m[0][1], m[1][0], m[1][1]);
            for p in 0..2 {
                let l = lambda[p];
                if b != 0.0 && b.abs() >= c.abs() {
                    vectors[p][0] = b;
                    vectors[p][1] = l - a;
                } else if c != 0.0 {
                    vectors[p][0] = l - d;
                    vectors[p][1] = c;
                } else {
                    // diagonal: eigenvalues are a and d
                    let first_is_a = a <= d;
                    let along_x = (p == 0) == first_is_a;
                    vectors[p] = [0.0; D];
                    vectors[p][if along_x { 0 } else { 1 }] = 1.0;
                }
            }
            // normalize so the first non-zero entry is 1 where possible
            for v in vectors.iter_mut() {
                if v[0] != 0.0 {
                    let s = v[0];
                    v[0] = 1.0;
                    v[1] /= s;
                }
            }
        }
    }
    Ok((lambda, vectors))
}

/// Speeds and waves of an approximate Riemann solution at one interface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveFan<const D: usize> {
    pub n_waves: usize,
    pub speeds: [f64; 2],
    pub waves: [[f64; D]; 2],
}

impl<const D: usize> WaveFan<D> {
    pub fn zero(n_waves: usize) -> Self {
        Self {
            n_waves,
            speeds: [0.0; 2],
            waves: [[0.0; D]; 2],
        }
    }

    /// `sum_p W^p`, which resolves the jump `q_r - q_l`.
    pub fn total_jump(&self) -> [f64; D] {
        let mut out = [0.0; D];
        for p in 0..self.n_waves {
            for d in 0..D {
                out[d] += self.waves[p][d];
            }
        }
        out
    }

    /// `sum_p s^p W^p`, which equals the flux difference for a conservative solver.
    pub fn flux_difference(&self) -> [f64; D] {
        let mut out = [0.0; D];
        for p in 0..self.n_waves {
            for d in 0..D {
                out[d] += self.speeds[p] * self.waves[p][d];
            }
        }
        out
    }

    pub fn max_speed(&self) -> f64 {
        self.speeds[..self.n_waves]
            .iter()
            .fold(0.0_f64, |m, s| m.max(s.abs()))
    }
}

/// Roe solver: decompose `q_r - q_l` on the eigenvectors of the linearization.
pub fn roe_solve<const D: usize>(
    roe: &RoeData<D>,
    q_l: &[f64; D],
    q_r: &[f64; D],
) -> Result<WaveFan<D>, RiemannError> {
    let mut fan = WaveFan::zero(D);
    let mut jump = [0.0; D];
    for d in 0..D {
        jump[d] = q_r[d] - q_l[d];
    }
    match D {
        1 => {
            fan.speeds[0] = roe.eigenvalues[0];
            fan.waves[0] = jump;
        }
        2 => {
            let (l1, l2) = (roe.eigenvalues[0], roe.eigenvalues[1]);
            let scale = 1.0_f64.max(l1.abs()).max(l2.abs());
            if (l2 - l1).abs() < 1e-12 * scale {
                return Err(RiemannError::Degenerate(l1, l2));
            }
            let r1 = roe.eigenvectors[0];
            let r2 = roe.eigenvectors[1];
            let det = r1[0] * r2[1] - r2[0] * r1[1];
            if det == 0.0 || !det.is_finite() {
                return Err(RiemannError::Degenerate(l1, l2));
            }
            let a1 = (jump[0] * r2[1] - r2[0] * jump[1]) / det;
            let a2 = (r1[0] * jump[1] - jump[0] * r1[1]) / det;
            fan.speeds = [l1, l2];
            for d in 0..D {
                fan.waves[0][d] = a1 * r1[d];
                fan.waves[1][d] = a2 * r2[d];
            }
        }
        n => return Err(RiemannError::Unsupported(n)),
    }
    Ok(fan)
}

/// Two-wave HLLE solver.
///
/// `eig_l` and `eig_r` are the eigenvalues of the flux Jacobian at the left and
/// right states, `eig_roe` those of the linearization between them.
pub fn hlle_solve<const D: usize>(
    q_l: &[f64; D],
    q_r: &[f64; D],
    f_l: &[f64; D],
    f_r: &[f64; D],
    eig_l: &[f64; D],
    eig_r: &[f64; D],
    eig_roe: &[f64; D],
) -> WaveFan<D> {
    let mut s1 = f64::INFINITY;
    let mut s2 = f64::NEG_INFINITY;
    for p in 0..D {
        s1 = s1.min(eig_l[p].min(eig_roe[p]));
        s2 = s2.max(eig_r[p].max(eig_roe[p]));
    }
    let mut fan = WaveFan::zero(2);
    fan.speeds = [s1, s2];
    if !(s2 > s1) || q_l == q_r {
        return fan;
    }
    let mut q_m = [0.0; D];
    for d in 0..D {
        q_m[d] = (f_r[d] - f_l[d] - s2 * q_r[d] + s1 * q_l[d]) / (s1 - s2);
        fan.waves[0][d] = q_m[d] - q_l[d];
        fan.waves[1][d] = q_r[d] - q_m[d];
    }
    fan
}
