//! Exact 1-Wasserstein distance between uniform discrete distributions.
//!
//! The transportation problem is scaled to integer supplies (`m / g` per
//! source point, `n / g` per sink point with `g = gcd(n, m)`) and solved as a
//! min-cost flow by successive shortest augmenting paths.

use crate::error::{Error, Result};

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `W_1` between the uniform distributions over `set_a` and `set_b` with
/// Euclidean ground cost.
pub fn wasserstein(set_a: &[Vec<f64>], set_b: &[Vec<f64>]) -> Result<f64> {
    if set_a.is_empty() || set_b.is_empty() {
        return Err(Error::InvalidArgument(
            "wasserstein requires two nonempty point sets".into(),
        ));
    }
    let dim = set_a[0].len();
    for p in set_a.iter().chain(set_b) {
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: p.len(),
            });
        }
    }
    let cost: Vec<Vec<f64>> = set_a
        .iter()
        .map(|a| set_b.iter().map(|b| euclidean(a, b)).collect())
        .collect();
    Ok(transport_cost(&cost))
}

/// Optimal transport cost for a dense `n × m` cost matrix with uniform
/// marginals.
pub fn transport_cost(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    let m = cost[0].len();
    let g = gcd(n, m);
    let supply = (m / g) as i64;
    let demand = (n / g) as i64;
    let total = supply * n as i64;

    let mut flow = FlowNetwork::new(n + m + 2);
    let (src, sink) = (0, n + m + 1);
    for i in 0..n {
        flow.add_edge(src, 1 + i, supply, 0.0);
        for j in 0..m {
            flow.add_edge(1 + i, 1 + n + j, total, cost[i][j]);
        }
    }
    for j in 0..m {
        flow.add_edge(1 + n + j, sink, demand, 0.0);
    }
    let moved = flow.min_cost_flow(src, sink, total);
    debug_assert_eq!(moved.0, total);
    moved.1 / total as f64
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

struct Edge {
    to: usize,
    cap: i64,
    cost: f64,
}

struct FlowNetwork {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl FlowNetwork {
    fn new(nodes: usize) -> Self {
        Self {
            edges: Vec::new(),
            adj: vec![Vec::new(); nodes],
        }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: i64, cost: f64) {
        self.adj[from].push(self.edges.len());
        self.edges.push(Edge { to, cap, cost });
        self.adj[to].push(self.edges.len());
        self.edges.push(Edge {
            to: from,
            cap: 0,
            cost: -cost,
        });
    }

    /// Pushes up to `limit` units; returns `(flow, cost)`.
    fn min_cost_flow(&mut self, src: usize, sink: usize, limit: i64) -> (i64, f64) {
        let nodes = self.adj.len();
        let (mut flow, mut cost) = (0i64, 0.0);
        while flow < limit {
            // Bellman-Ford over the residual graph; costs may be negative on
            // reverse edges but the residual graph has no negative cycles.
            let mut dist = vec![f64::INFINITY; nodes];
            let mut via = vec![usize::MAX; nodes];
            dist[src] = 0.0;
            for _ in 0..nodes {
                let mut changed = false;
                for u in 0..nodes {
                    if dist[u].is_infinite() {
                        continue;
                    }
                    for &e in &self.adj[u] {
                        let edge = &self.edges[e];
                        if edge.cap > 0 && dist[u] + edge.cost < dist[edge.to] - 1e-12 {
                            dist[edge.to] = dist[u] + edge.cost;
                            via[edge.to] = e;
                            changed = true;
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
            if dist[sink].is_infinite() {
                break;
            }
            let mut push = limit - flow;
            let mut v = sink;
            while v != src {
                let e = via[v];
                push = push.min(self.edges[e].cap);
                v = self.edges[e ^ 1].to;
            }
            let mut v = sink;
            while v != src {
                let e = via[v];
                self.edges[e].cap -= push;
                self.edges[e ^ 1].cap += push;
                cost += push as f64 * self.edges[e].cost;
                v = self.edges[e ^ 1].to;
            }
            flow += push;
        }
        (flow, cost)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sets_have_zero_distance() {
        let a = vec![vec![0.0, 1.0], vec![2.0, -1.0], vec![0.5, 0.5]];
        assert!(wasserstein(&a, &a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn singletons_reduce_to_euclidean() {
        let w = wasserstein(&[vec![0.0, 0.0]], &[vec![3.0, 4.0]]).unwrap();
        assert!((w - 5.0).abs() < 1e-12);
    }

    #[test]
    fn unequal_sizes_split_mass() {
        // one point at 0 against two points at -1 and +1 on a line
        let w = wasserstein(&[vec![0.0]], &[vec![-1.0], vec![1.0]]).unwrap();
        assert!((w - 1.0).abs() < 1e-12);
        // two points at 0 and 3 against three at 0: mass 1/2 travels 3 total
        let w = wasserstein(&[vec![0.0], vec![3.0]], &[vec![0.0], vec![0.0], vec![0.0]]).unwrap();
        assert!((w - 1.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(wasserstein(&[], &[vec![1.0]]).is_err());
        assert!(matches!(
            wasserstein(&[vec![1.0]], &[vec![1.0, 2.0]]),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
