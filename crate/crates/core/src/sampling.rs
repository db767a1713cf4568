//! Sampling a closure over the region covered by the data and comparing it
//! with a reference.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::closure::{AnalyticClosure, Closure, ClosureForm};
use crate::data::{fmt_f64, DataError, Dataset, Split};
use crate::models::Model;

/// Fraction of the data hull treated as its interior.
pub const INTERIOR_FRACTION: f64 = 0.9;

/// The analytic closure a form recovers on a given model.
pub fn reference_closure(form: ClosureForm, model: &Model) -> Option<AnalyticClosure> {
    match (form, model) {
        (ClosureForm::BurgersFull, Model::Burgers) => Some(AnalyticClosure::BurgersFlux),
        (ClosureForm::LwrVelocity, Model::Lwr(m)) => Some(AnalyticClosure::LwrVelocity { v_max: m.v_max }),
        (ClosureForm::SwPressure2d, Model::ShallowWater(m)) => Some(AnalyticClosure::SwPressure { g: m.g }),
        (ClosureForm::PwPressure2d | ClosureForm::PwPressureRhoOnly, Model::PayneWhitham(m)) => {
            Some(AnalyticClosure::PwPressure(*m))
        }
        _ => None,
    }
}

/// Network inputs seen in the training snapshots; the second coordinate is 0 for 1-input forms.
pub fn data_points(ds: &Dataset, form: ClosureForm) -> Vec<[f64; 2]> {
    let d = ds.meta.n_components;
    let two = form.net_input_dim() == 2;
    ds.split(Split::Train)
        .iter()
        .flat_map(|p| p.current.chunks(d))
        .map(|q| [q[0], if two { q[1] } else { 0.0 }])
        .collect()
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Convex hull by the monotone chain, counter-clockwise without repeated endpoint.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Area centroid of a counter-clockwise polygon.
pub fn polygon_centroid(poly: &[[f64; 2]]) -> [f64; 2] {
    let mut area = 0.0;
    let mut c = [0.0, 0.0];
    for (k, &a) in poly.iter().enumerate() {
        let b = poly[(k + 1) % poly.len()];
        let w = a[0] * b[1] - b[0] * a[1];
        area += w;
        c[0] += (a[0] + b[0]) * w;
        c[1] += (a[1] + b[1]) * w;
    }
    if area.abs() < f64::MIN_POSITIVE {
        let n = poly.len() as f64;
        return [
            poly.iter().map(|p| p[0]).sum::<f64>() / n,
            poly.iter().map(|p| p[1]).sum::<f64>() / n,
        ];
    }
    [c[0] / (3.0 * area), c[1] / (3.0 * area)]
}

/// Inclusive containment test for a counter-clockwise convex polygon.
pub fn in_convex(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
    (0..poly.len()).all(|k| cross(poly[k], poly[(k + 1) % poly.len()], p) >= 0.0)
}

/// Part of input space over which a closure is sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Interval { lo: f64, hi: f64 },
    Polygon { vertices: Vec<[f64; 2]> },
}

impl Region {
    /// Hull of the points shrunk about its center to `fraction` of its extent.
    pub fn hull(points: &[[f64; 2]], input_dim: usize, fraction: f64) -> Self {
        if input_dim == 1 {
            let lo = points.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let hi = points.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo) * fraction);
            return Region::Interval {
                lo: mid - half,
                hi: mid + half,
            };
        }
        let hull = convex_hull(points);
        let c = polygon_centroid(&hull);
        Region::Polygon {
            vertices: hull
                .iter()
                .map(|v| [c[0] + fraction * (v[0] - c[0]), c[1] + fraction * (v[1] - c[1])])
                .collect(),
        }
    }

    /// `n` evenly spaced points, or the points of an `n x n` bounding-box grid inside the polygon.
    pub fn sample(&self, n: usize) -> Vec<Vec<f64>> {
        let lin = |lo: f64, hi: f64, k: usize| {
            if n <= 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * k as f64 / (n - 1) as f64
            }
        };
        match self {
            Region::Interval { lo, hi } => (0..n).map(|k| vec![lin(*lo, *hi, k)]).collect(),
            Region::Polygon { vertices } => {
                let (lo, hi) = bounding_box(vertices);
                let mut out = Vec::new();
                for i in 0..n {
                    for j in 0..n {
                        let p = [lin(lo[0], hi[0], i), lin(lo[1], hi[1], j)];
                        if in_convex(vertices, p) {
                            out.push(p.to_vec());
                        }
                    }
                }
                out
            }
        }
    }
}

fn bounding_box(v: &[[f64; 2]]) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in v {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

/// Deviation of a learned closure from a reference on a set of inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Constant removed from the learned values before comparing.
    pub offset: f64,
    pub max_abs_deviation: f64,
    pub n_samples: usize,
}

/// Compares on `inputs`; for shift-invariant forms the mean difference is removed first.
pub fn compare<A: Closure, B: Closure>(
    form: ClosureForm,
    learned: &A,
    reference: &B,
    inputs: &[Vec<f64>],
) -> Comparison {
    let diffs: Vec<f64> = inputs.iter().map(|u| learned.value(u) - reference.value(u)).collect();
    let offset = if form.shift_invariant() && !diffs.is_empty() {
        diffs.iter().sum::<f64>() / diffs.len() as f64
    } else {
        0.0
    };
    Comparison {
        offset,
        max_abs_deviation: diffs.iter().fold(0.0, |m, d| f64::max(m, (d - offset).abs())),
        n_samples: diffs.len(),
    }
}

/// Largest variation of `closure` along each input axis over a polygon,
/// taken along the grid lines of an `n x n` sampling.
pub fn axis_variation<C: Closure>(closure: &C, vertices: &[[f64; 2]], n: usize) -> [f64; 2] {
    let (lo, hi) = bounding_box(vertices);
    let at = |axis: usize, k: usize| lo[axis] + (hi[axis] - lo[axis]) * k as f64 / (n - 1).max(1) as f64;
    let mut out = [0.0_f64; 2];
    for (axis, slot) in out.iter_mut().enumerate() {
        for i in 0..n {
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for j in 0..n {
                let p = if axis == 0 { [at(0, j), at(1, i)] } else { [at(0, i), at(1, j)] };
                if in_convex(vertices, p) {
                    let v = closure.value(&p);
                    min = min.min(v);
                    max = max.max(v);
                }
            }
            if max >= min {
                *slot = slot.max(max - min);
            }
        }
    }
    out
}

/// Writes `u1[,u2],learned,reference,deviation` rows; deviation has the offset removed.
pub fn write_closure_csv<A: Closure, B: Closure>(
    path: &Path,
    inputs: &[Vec<f64>],
    learned: &A,
    reference: Option<&B>,
    offset: f64,
) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    let dim = inputs.first().map_or(1, |u| u.len());
    let mut header: Vec<String> = (1..=dim).map(|k| format!("u{k}")).collect();
    header.extend(["learned", "reference", "deviation"].map(String::from));
    w.write_record(&header)?;
    for u in inputs {
        let mut row: Vec<String> = u.iter().map(|v| fmt_f64(*v)).collect();
        let l = learned.value(u);
        row.push(fmt_f64(l));
        match reference {
            Some(r) => {
                let rv = r.value(u);
                row.push(fmt_f64(rv));
                row.push(fmt_f64(l - offset - rv));
            }
            None => row.extend([String::new(), String::new()]),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closure::NetworkParams;
    use proptest::prelude::*;

    #[test]
    fn square_hull() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5], [0.2, 0.7]];
        let h = convex_hull(&pts);
        assert_eq!(h.len(), 4);
        assert_eq!(polygon_centroid(&h), [0.5, 0.5]);
        assert!(in_convex(&h, [0.5, 0.5]));
        assert!(in_convex(&h, [1.0, 0.5]));
        assert!(!in_convex(&h, [1.01, 0.5]));
    }

    #[test]
    fn interval_interior() {
        let pts: Vec<[f64; 2]> = [0.0, 2.0, 1.0].iter().map(|&u| [u, 0.0]).collect();
        let Region::Interval { lo, hi } = Region::hull(&pts, 1, 0.9) else { panic!() };
        assert!((lo - 0.1).abs() < 1e-15 && (hi - 1.9).abs() < 1e-15);
        let s = Region::Interval { lo: 0.0, hi: 1.0 }.sample(5);
        assert_eq!(s[1], vec![0.25]);
    }

    #[test]
    fn shrunk_polygon_grid() {
        let pts = [[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]];
        let r = Region::hull(&pts, 2, 0.5);
        let Region::Polygon { vertices } = &r else { panic!() };
        assert!(vertices.iter().all(|v| (0.5..=1.5).contains(&v[0]) && (0.5..=1.5).contains(&v[1])));
        assert_eq!(r.sample(3).len(), 9);
    }

    #[test]
    fn comparison_removes_offset_only_when_shift_invariant() {
        let reference = AnalyticClosure::BurgersFlux;
        let shifted = NetworkParams::zeros(1, 1);
        let inputs: Vec<Vec<f64>> = vec![vec![0.0], vec![1.0]];
        // zero network vs u^2/2: differences 0 and -0.5
        let c = compare(ClosureForm::BurgersFull, &shifted, &reference, &inputs);
        assert!((c.offset + 0.25).abs() < 1e-15);
        assert!((c.max_abs_deviation - 0.25).abs() < 1e-15);
        let c = compare(ClosureForm::LwrVelocity, &shifted, &AnalyticClosure::LwrVelocity { v_max: 1.0 }, &inputs);
        assert_eq!(c.offset, 0.0);
        assert_eq!(c.max_abs_deviation, 1.0);
    }

    #[test]
    fn sw_pressure_varies_along_h_only() {
        let sq = [[1.0, -0.5], [2.0, -0.5], [2.0, 0.5], [1.0, 0.5]];
        let v = axis_variation(&AnalyticClosure::SwPressure { g: 1.0 }, &sq, 11);
        assert!((v[0] - 1.5).abs() < 1e-12);
        assert_eq!(v[1], 0.0);
    }

    proptest! {
        #[test]
        fn hull_contains_all_points(pts in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 3..40)) {
            let pts: Vec<[f64; 2]> = pts.into_iter().map(|(a, b)| [a, b]).collect();
            let h = convex_hull(&pts);
            prop_assume!(h.len() >= 3);
            for p in &pts {
                // tolerance for points on an edge
                let inside = (0..h.len()).all(|k| cross(h[k], h[(k + 1) % h.len()], *p) >= -1e-9);
                prop_assert!(inside);
            }
        }
    }
}
