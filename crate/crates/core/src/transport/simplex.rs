//! Primal network simplex for the uncapacitated transportation problem.
//!
//! Sources `0..m` and sinks `m..m+n` are joined by the complete bipartite set
//! of arcs, plus one artificial arc per node to an extra root. The spanning
//! tree is kept strongly feasible (Cunningham's leaving-arc rule), which rules
//! out cycling under degeneracy. Entering arcs are chosen by block search.

use crate::error::{Error, Result};

/// Optimal flows of a transportation problem.
#[derive(Debug, Clone)]
pub struct FlowSolution {
    /// `(source, sink, mass)` with positive mass.
    pub flows: Vec<(usize, usize, f64)>,
    pub cost: f64,
    pub pivots: usize,
    /// Node potentials at optimality: `cost(i, j) ≥ v_j − u_i` on every arc,
    /// with equality on arcs that carry flow.
    pub source_potential: Vec<f64>,
    pub sink_potential: Vec<f64>,
}

struct Solver<'a> {
    m: usize,
    n: usize,
    cost: &'a [f64],
    art_cost: f64,
    eps: f64,
    // per arc (real arcs first, then one artificial arc per node)
    flow: Vec<f64>,
    in_tree: Vec<bool>,
    // per node (root last)
    parent: Vec<usize>,
    pred: Vec<usize>,
    up: Vec<bool>,
    depth: Vec<usize>,
    pi: Vec<f64>,
    children: Vec<Vec<usize>>,
    block: usize,
    next_arc: usize,
}

impl Solver<'_> {
    fn real_arcs(&self) -> usize {
        self.m * self.n
    }

    fn root(&self) -> usize {
        self.m + self.n
    }

    /// Tail and head of an arc.
    fn ends(&self, e: usize) -> (usize, usize) {
        let a = self.real_arcs();
        if e < a {
            (e / self.n, self.m + e % self.n)
        } else {
            let v = e - a;
            // artificial arcs leave sources and enter sinks
            if v < self.m {
                (v, self.root())
            } else {
                (self.root(), v)
            }
        }
    }

    fn arc_cost(&self, e: usize) -> f64 {
        if e < self.real_arcs() {
            self.cost[e]
        } else if e - self.real_arcs() < self.m {
            0.0
        } else {
            self.art_cost
        }
    }

    fn reduced(&self, e: usize) -> f64 {
        let (s, t) = self.ends(e);
        self.arc_cost(e) + self.pi[s] - self.pi[t]
    }

    fn find_entering(&mut self) -> Option<usize> {
        let total = self.real_arcs();
        let mut best = None;
        let mut min = -self.eps;
        let mut count = self.block;
        for k in 0..total {
            let e = (self.next_arc + k) % total;
            if !self.in_tree[e] {
                let c = self.reduced(e);
                if c < min {
                    min = c;
                    best = Some(e);
                }
            }
            count -= 1;
            if count == 0 {
                if best.is_some() {
                    self.next_arc = (e + 1) % total;
                    return best;
                }
                count = self.block;
            }
        }
        best
    }

    fn join(&self, mut a: usize, mut b: usize) -> usize {
        while a != b {
            if self.depth[a] > self.depth[b] {
                a = self.parent[a];
            } else if self.depth[b] > self.depth[a] {
                b = self.parent[b];
            } else {
                a = self.parent[a];
                b = self.parent[b];
            }
        }
        a
    }

    fn pivot(&mut self, e_in: usize) -> Result<()> {
        let (first, second) = self.ends(e_in);
        let join = self.join(first, second);
        // Flow runs join -> first -> second -> join. Ties go to the last
        // blocking arc in that order, which keeps the tree strongly feasible.
        let mut delta = f64::INFINITY;
        let mut u_out = usize::MAX;
        let mut side_first = true;
        let mut u = first;
        while u != join {
            // flow moves parent -> u, so an upward arc loses flow
            if self.up[u] {
                let d = self.flow[self.pred[u]];
                if d < delta {
                    delta = d;
                    u_out = u;
                }
            }
            u = self.parent[u];
        }
        u = second;
        while u != join {
            if !self.up[u] {
                let d = self.flow[self.pred[u]];
                if d <= delta {
                    delta = d;
                    u_out = u;
                    side_first = false;
                }
            }
            u = self.parent[u];
        }
        if !delta.is_finite() {
            return Err(Error::Invariant("transportation cycle without a blocking arc".into()));
        }

        if delta > 0.0 {
            self.flow[e_in] += delta;
            let mut u = first;
            while u != join {
                let p = self.pred[u];
                if self.up[u] {
                    self.flow[p] -= delta;
                } else {
                    self.flow[p] += delta;
                }
                u = self.parent[u];
            }
            u = second;
            while u != join {
                let p = self.pred[u];
                if self.up[u] {
                    self.flow[p] += delta;
                } else {
                    self.flow[p] -= delta;
                }
                u = self.parent[u];
            }
        }
        let e_out = self.pred[u_out];
        if e_out < self.real_arcs() {
            self.in_tree[e_out] = false;
        }
        self.in_tree[e_in] = true;

        // Hang the detached subtree from the entering arc.
        let (u_in, v_in) = if side_first { (first, second) } else { (second, first) };
        let mut prev = v_in;
        let mut arc = e_in;
        let mut arc_up = self.ends(e_in).0 == u_in;
        let mut cur = u_in;
        loop {
            let old_parent = self.parent[cur];
            let old_arc = self.pred[cur];
            let old_up = self.up[cur];
            let kids = &mut self.children[old_parent];
            let pos = kids.iter().position(|&c| c == cur).expect("child link");
            kids.swap_remove(pos);
            self.parent[cur] = prev;
            self.pred[cur] = arc;
            self.up[cur] = arc_up;
            self.children[prev].push(cur);
            if cur == u_out {
                break;
            }
            prev = cur;
            arc = old_arc;
            arc_up = !old_up;
            cur = old_parent;
        }

        let c = self.arc_cost(e_in);
        let target = if self.up[u_in] { self.pi[v_in] - c } else { self.pi[v_in] + c };
        let shift = target - self.pi[u_in];
        let mut stack = vec![u_in];
        while let Some(w) = stack.pop() {
            self.pi[w] += shift;
            self.depth[w] = self.depth[self.parent[w]] + 1;
            stack.extend_from_slice(&self.children[w]);
        }
        Ok(())
    }
}

/// Solves `min Σ c_ij π_ij` over couplings of `supply` (length `m`) and
/// `demand` (length `n`), with `cost` row-major `m × n`. Total masses must
/// agree to rounding; weights must be positive.
pub fn solve_transport(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<FlowSolution> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 {
        return Err(Error::param("transport needs atoms on both sides"));
    }
    if cost.len() != m * n {
        return Err(Error::DimensionMismatch {
            expected: m * n,
            got: cost.len(),
        });
    }
    if supply.iter().chain(demand).any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::param("transport weights must be positive and finite"));
    }
    if cost.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::param("transport costs must be finite and nonnegative"));
    }
    let max_cost = cost.iter().copied().fold(0.0, f64::max);
    let nodes = m + n + 1;
    let root = m + n;
    let a = m * n;
    let mut s = Solver {
        m,
        n,
        cost,
        art_cost: (max_cost + 1.0) * nodes as f64,
        eps: 1e-11 * (max_cost + 1.0),
        flow: vec![0.0; a + m + n],
        in_tree: vec![false; a],
        parent: vec![root; nodes],
        pred: (0..nodes).map(|v| a + v).collect(),
        up: (0..nodes).map(|v| v < m).collect(),
        depth: vec![1; nodes],
        pi: vec![0.0; nodes],
        children: vec![Vec::new(); nodes],
        block: ((a as f64).sqrt().ceil() as usize).max(10),
        next_arc: 0,
    };
    s.depth[root] = 0;
    s.pred[root] = usize::MAX;
    s.children[root] = (0..m + n).collect();
    for i in 0..m {
        s.flow[a + i] = supply[i];
    }
    for j in 0..n {
        s.flow[a + m + j] = demand[j];
        s.pi[m + j] = s.art_cost;
    }

    let limit = 200 * (m + n) * ((m + n) as f64).log2().ceil().max(1.0) as usize;
    let mut pivots = 0;
    while let Some(e) = s.find_entering() {
        s.pivot(e)?;
        pivots += 1;
        if pivots > limit {
            return Err(Error::Invariant(format!("network simplex exceeded {limit} pivots")));
        }
    }

    let total: f64 = supply.iter().sum();
    let residual: f64 = s.flow[a..].iter().map(|f| f.abs()).sum();
    if residual > 1e-9 * total.max(1.0) {
        return Err(Error::Invariant(format!(
            "artificial flow {residual:.3e} left at optimum; masses are unbalanced"
        )));
    }
    let floor = 1e-15 * total;
    let mut flows = Vec::new();
    let mut total_cost = 0.0;
    for e in 0..a {
        if s.in_tree[e] && s.flow[e] > floor {
            let (i, j) = (e / n, e % n);
            flows.push((i, j, s.flow[e]));
            total_cost += s.flow[e] * cost[e];
        }
    }
    Ok(FlowSolution {
        flows,
        cost: total_cost,
        pivots,
        source_potential: s.pi[..m].to_vec(),
        sink_potential: s.pi[m..m + n].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_assignment(cost: &[f64], k: usize) -> f64 {
        fn rec(cost: &[f64], k: usize, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == k {
                *best = best.min(acc);
                return;
            }
            for j in 0..k {
                if !used[j] {
                    used[j] = true;
                    rec(cost, k, row + 1, used, acc + cost[row * k + j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, k, 0, &mut vec![false; k], 0.0, &mut best);
        best
    }

    fn lcg(state: &mut u64) -> f64 {
        *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (*state >> 11) as f64 / (1u64 << 53) as f64
    }

    #[test]
    fn uniform_weights_match_assignment() {
        let mut st = 7u64;
        for k in 2..=6 {
            for _ in 0..20 {
                let cost: Vec<f64> = (0..k * k).map(|_| lcg(&mut st)).collect();
                let w = vec![1.0 / k as f64; k];
                let sol = solve_transport(&w, &w, &cost).unwrap();
                let exact = brute_force_assignment(&cost, k) / k as f64;
                assert!((sol.cost - exact).abs() < 1e-12, "k={k}: {} vs {exact}", sol.cost);
            }
        }
    }

    #[test]
    fn marginals_and_complementary_slackness() {
        let mut st = 11u64;
        let (m, n) = (30, 45);
        let sup: Vec<f64> = (0..m).map(|_| 0.1 + lcg(&mut st)).collect();
        let mut dem: Vec<f64> = (0..n).map(|_| 0.1 + lcg(&mut st)).collect();
        let scale = sup.iter().sum::<f64>() / dem.iter().sum::<f64>();
        dem.iter_mut().for_each(|d| *d *= scale);
        let cost: Vec<f64> = (0..m * n).map(|_| lcg(&mut st)).collect();
        let sol = solve_transport(&sup, &dem, &cost).unwrap();
        let mut rows = vec![0.0; m];
        let mut cols = vec![0.0; n];
        for &(i, j, f) in &sol.flows {
            rows[i] += f;
            cols[j] += f;
        }
        for i in 0..m {
            assert!((rows[i] - sup[i]).abs() < 1e-9);
        }
        for j in 0..n {
            assert!((cols[j] - dem[j]).abs() < 1e-9);
        }
        // dual feasibility and equal objective values certify optimality
        let (u, v) = (&sol.source_potential, &sol.sink_potential);
        for i in 0..m {
            for j in 0..n {
                assert!(cost[i * n + j] + u[i] - v[j] > -1e-9);
            }
        }
        let dual: f64 = (0..n).map(|j| v[j] * dem[j]).sum::<f64>() - (0..m).map(|i| u[i] * sup[i]).sum::<f64>();
        assert!((dual - sol.cost).abs() < 1e-8 * sol.cost.max(1.0));
    }

    #[test]
    fn degenerate_identical_measures() {
        let k = 50;
        let w = vec![0.02; k];
        let cost: Vec<f64> = (0..k * k).map(|e| ((e / k) as f64 - (e % k) as f64).abs()).collect();
        let sol = solve_transport(&w, &w, &cost).unwrap();
        assert!(sol.cost.abs() < 1e-12);
    }
}
