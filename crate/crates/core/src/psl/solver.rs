//! MAP inference over the probability simplex of the three target atoms.
//!
//! Projected (sub)gradient descent with exact Euclidean projection. Every
//! run carries an optimality certificate:
//! - all-linear problems: the objective is piecewise linear, so its minimum
//!   sits on a vertex of the arrangement cut out by the hinge lines and the
//!   simplex edges, and enumerating those vertices gives the exact optimum;
//! - otherwise: convexity gives `f* ≥ f(y) − max_j g·(y − e_j)` for any
//!   subgradient `g`, and the best such bound over all iterates is kept.

use serde::{Deserialize, Serialize};

use super::ground::HingePotential;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
}

fn default_tolerance() -> f64 {
    1e-6
}
fn default_max_iters() -> usize {
    10_000
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: default_tolerance(),
            max_iters: default_max_iters(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FusionProblem {
    pub potentials: Vec<HingePotential>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub y: [f64; 3],
    pub objective: f64,
    /// Certified upper bound on `objective − f*`.
    pub gap: f64,
    pub iterations: usize,
}

const UNIFORM: [f64; 3] = [1.0 / 3.0; 3];
const VERTICES: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl FusionProblem {
    pub fn objective(&self, y: &[f64; 3]) -> f64 {
        self.potentials.iter().map(|p| p.value(y)).sum()
    }

    fn subgradient(&self, y: &[f64; 3]) -> [f64; 3] {
        let mut g = [0.0; 3];
        for p in &self.potentials {
            for (gi, pi) in g.iter_mut().zip(p.subgradient(y)) {
                *gi += pi;
            }
        }
        g
    }

    fn validate(&self) -> Result<()> {
        for (i, p) in self.potentials.iter().enumerate() {
            let finite = p.offset.is_finite() && p.coeffs.iter().all(|c| c.is_finite());
            if !finite || !(p.weight.is_finite() && p.weight >= 0.0) || !matches!(p.exponent, 1 | 2) {
                return Err(Error::InvalidArgument(format!("potential {i} is invalid: {p:?}")));
            }
        }
        Ok(())
    }

    fn active(&self) -> impl Iterator<Item = &HingePotential> {
        self.potentials.iter().filter(|p| p.weight > 0.0)
    }
}

/// Euclidean projection onto `{y ≥ 0, Σy = 1}` (sort-based).
pub fn project_simplex(v: &[f64; 3]) -> [f64; 3] {
    let mut u = *v;
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `max_j g·(y − e_j)`; non-negative, and zero exactly at KKT points.
fn frank_wolfe_gap(g: &[f64; 3], y: &[f64; 3]) -> f64 {
    let gmin = g.iter().copied().fold(f64::INFINITY, f64::min);
    (dot(g, y) - gmin).max(0.0)
}

/// Vertices of the arrangement of hinge lines and simplex edges, in
/// simplex coordinates. Parametrized as `y = (u, v, 1 − u − v)`.
fn arrangement_vertices(potentials: &[&HingePotential]) -> Vec<[f64; 3]> {
    // each line: a·u + b·v = c
    let mut lines: Vec<(f64, f64, f64)> = vec![(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (1.0, 1.0, 1.0)];
    for p in potentials {
        let (a, b) = (p.coeffs[0] - p.coeffs[2], p.coeffs[1] - p.coeffs[2]);
        if a.abs().max(b.abs()) > 1e-14 {
            lines.push((a, b, -(p.offset + p.coeffs[2])));
        }
    }
    let mut out = Vec::new();
    for i in 0..lines.len() {
        for j in i + 1..lines.len() {
            let (a1, b1, c1) = lines[i];
            let (a2, b2, c2) = lines[j];
            let det = a1 * b2 - a2 * b1;
            if det.abs() < 1e-14 {
                continue;
            }
            let u = (c1 * b2 - c2 * b1) / det;
            let v = (a1 * c2 - a2 * c1) / det;
            let w = 1.0 - u - v;
            const SLACK: f64 = 1e-12;
            if u >= -SLACK && v >= -SLACK && w >= -SLACK {
                out.push(project_simplex(&[u, v, w]));
            }
        }
    }
    out
}

/// Minimizes the summed potentials over the simplex.
///
/// Returns the uniform point when the objective vanishes identically.
/// Fails with [`Error::NotConverged`] (carrying the best iterate and its
/// certified gap) if the gap stays above `tolerance` after `max_iters`.
pub fn map_inference(problem: &FusionProblem, cfg: &SolverConfig) -> Result<Solution> {
    problem.validate()?;
    if !(cfg.tolerance > 0.0) {
        return Err(Error::InvalidArgument("solver tolerance must be positive".into()));
    }
    // convex and non-negative: zero at every vertex means zero everywhere
    if VERTICES.iter().all(|v| problem.objective(v) <= 0.0) {
        return Ok(Solution {
            y: UNIFORM,
            objective: problem.objective(&UNIFORM),
            gap: 0.0,
            iterations: 0,
        });
    }

    let active: Vec<&HingePotential> = problem.active().collect();
    let linear = active.iter().all(|p| p.exponent == 1);
    let candidates = if linear { arrangement_vertices(&active) } else { Vec::new() };
    let exact_min = candidates
        .iter()
        .map(|c| problem.objective(c))
        .fold(f64::INFINITY, f64::min);

    let lipschitz: f64 = active
        .iter()
        .map(|p| {
            let n2 = dot(&p.coeffs, &p.coeffs);
            if p.exponent == 2 { 2.0 * p.weight * n2 } else { p.weight * n2.sqrt() }
        })
        .sum();
    let smooth = active.iter().all(|p| p.exponent == 2);

    let mut y = UNIFORM;
    let mut best = (y, problem.objective(&y));
    let mut lower = if linear { exact_min } else { f64::NEG_INFINITY };
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let g = problem.subgradient(&y);
        let f = problem.objective(&y);
        if f < best.1 {
            best = (y, f);
        }
        if !linear {
            lower = lower.max(f - frank_wolfe_gap(&g, &y));
        }
        if best.1 - lower <= cfg.tolerance {
            break;
        }
        let step = if smooth {
            1.0 / lipschitz
        } else {
            // diminishing step scaled by the simplex diameter over the
            // subgradient bound
            std::f64::consts::SQRT_2 / (lipschitz * ((iterations + 1) as f64).sqrt())
        };
        let next = project_simplex(&[y[0] - step * g[0], y[1] - step * g[1], y[2] - step * g[2]]);
        iterations += 1;
        if next == y {
            // a fixed point of the projected step is a minimizer
            if !linear {
                lower = lower.max(problem.objective(&y));
            }
            break;
        }
        y = next;
    }
    let f = problem.objective(&y);
    if f < best.1 {
        best = (y, f);
    }

    if linear && best.1 - exact_min > cfg.tolerance {
        // descent stalled near a kink; snap to the nearest optimal vertex
        let anchor = best.0;
        let snapped = candidates
            .iter()
            .filter(|c| problem.objective(c) <= exact_min + cfg.tolerance)
            .min_by(|a, b| dist2(a, &anchor).total_cmp(&dist2(b, &anchor)))
            .copied()
            .expect("arrangement always contains an optimal vertex");
        best = (snapped, problem.objective(&snapped));
    }

    let gap = (best.1 - lower).max(0.0);
    if gap > cfg.tolerance {
        return Err(Error::NotConverged {
            iterations,
            gap,
            best: best.0,
        });
    }
    Ok(Solution {
        y: best.0,
        objective: best.1,
        gap,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pot(coeffs: [f64; 3], offset: f64, weight: f64, exponent: u8) -> HingePotential {
        HingePotential { coeffs, offset, weight, exponent }
    }

    #[test]
    fn projection_lands_on_simplex() {
        assert_eq!(project_simplex(&[0.2, 0.3, 0.5]), [0.2, 0.3, 0.5]);
        assert_eq!(project_simplex(&[2.0, 0.0, 0.0]), [1.0, 0.0, 0.0]);
        let p = project_simplex(&[0.5, 0.5, -3.0]);
        assert!((p[0] - 0.5).abs() < 1e-15 && p[2] == 0.0);
    }

    #[test]
    fn zero_objective_returns_uniform() {
        let s = map_inference(&FusionProblem::default(), &SolverConfig::default()).unwrap();
        assert_eq!(s.y, UNIFORM);
        let satisfied = FusionProblem { potentials: vec![pot([0.0, 0.0, -1.0], -0.5, 1.0, 1)] };
        assert_eq!(map_inference(&satisfied, &SolverConfig::default()).unwrap().y, UNIFORM);
    }

    #[test]
    fn single_push_reaches_vertex() {
        for p in [1, 2] {
            let problem = FusionProblem { potentials: vec![pot([0.0, 0.0, -1.0], 1.0, 1.0, p)] };
            let s = map_inference(&problem, &SolverConfig::default()).unwrap();
            assert!(s.objective <= 1e-6, "p={p}: {s:?}");
            assert!(s.y[2] > 1.0 - 1e-3);
        }
    }

    #[test]
    fn exhausted_budget_reports_best_iterate() {
        let problem = FusionProblem {
            potentials: vec![pot([0.0, 0.0, -1.0], 1.0, 1.0, 2), pot([0.0, -1.0, 0.0], 0.9, 0.5, 1)],
        };
        let cfg = SolverConfig { tolerance: 1e-12, max_iters: 3 };
        match map_inference(&problem, &cfg) {
            Err(Error::NotConverged { iterations, best, .. }) => {
                assert_eq!(iterations, 3);
                assert!((best.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
