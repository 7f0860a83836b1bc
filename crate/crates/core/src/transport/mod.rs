//! The affine projection on `L₂(B_X)`, half-ball measures and exact
//! Wasserstein-1 distances.
//!
//! For an isotropic space (`|B_X| = 1`, second moments `L_X²·|θ|²`) the
//! orthogonal projection onto affine maps satisfies
//! `L_X²·‖Proj‖_{Lip→Lip} = sup_{‖x‖_X = 1} W₁(ν_x⁺, ν_x⁻)` where `ν_x^±` have
//! densities `(x·y)^±` on `B_X`. [`proj_norm_estimate`] evaluates the right
//! side over sampled directions.

mod simplex;

pub use simplex::{solve_transport, FlowSolution};

use crate::error::{Error, Result};
use crate::fields::GridField;
use crate::heat::AffineMap;
use crate::rng::{self, tags};
use crate::spaces::{draw_sphere, NormedSpace};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

/// Atoms per side accepted by the flow solver (dense cost matrix).
pub const MAX_ATOMS: usize = 2000;

/// Band constant for the comparison between the projection norm and the
/// normalized half-ball distances.
pub const SYMMETRY_BAND: f64 = 5.0;

/// Largest relative change of W₁ under atom doubling accepted in a report.
pub const REFINEMENT_TOLERANCE: f64 = 0.02;

/// Sub-samples per axis and cell when discretizing densities.
const SUBCELLS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteMeasure {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub total: f64,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::param("measure weights must be finite and nonnegative"));
        }
        if let Some(d) = points.first().map(Vec::len) {
            if points.iter().any(|p| p.len() != d) {
                return Err(Error::param("measure atoms must share one dimension"));
            }
        }
        let total = rng::pairwise_sum(&weights);
        Ok(DiscreteMeasure { points, weights, total })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    /// Same atoms with weights divided by the total mass.
    pub fn normalized(&self) -> Self {
        let weights = self.weights.iter().map(|w| w / self.total).collect();
        DiscreteMeasure::new(self.points.clone(), weights).expect("rescaled weights stay valid")
    }

    /// `∫ g dμ`.
    pub fn integrate(&self, g: impl Fn(&[f64]) -> f64) -> f64 {
        let terms: Vec<f64> = self.points.iter().zip(&self.weights).map(|(p, w)| w * g(p)).collect();
        rng::pairwise_sum(&terms)
    }

    fn positive(&self) -> (Vec<usize>, Vec<f64>) {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(i, w)| (i, *w))
            .unzip()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportPlan {
    /// `(source atom, sink atom, mass)`.
    pub flows: Vec<(usize, usize, f64)>,
    pub cost: f64,
}

impl TransportPlan {
    /// Largest marginal mismatch against the two measures.
    pub fn marginal_error(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
        let mut rows = vec![0.0; mu.len()];
        let mut cols = vec![0.0; nu.len()];
        for &(i, j, f) in &self.flows {
            rows[i] += f;
            cols[j] += f;
        }
        let r = rows.iter().zip(&mu.weights).map(|(a, b)| (a - b).abs());
        let c = cols.iter().zip(&nu.weights).map(|(a, b)| (a - b).abs());
        r.chain(c).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum W1Method {
    Quantile,
    NetworkSimplex,
}

#[derive(Debug, Clone, Serialize)]
pub struct W1Result {
    pub value: f64,
    pub plan: TransportPlan,
    pub method: W1Method,
}

fn check_balanced(mu: &DiscreteMeasure, nu: &DiscreteMeasure, space: &NormedSpace) -> Result<()> {
    let n = space.dim();
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::param("measures must have atoms"));
    }
    if mu.dim() != n || nu.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: if mu.dim() != n { mu.dim() } else { nu.dim() },
        });
    }
    if (mu.total - nu.total).abs() > 1e-9 * mu.total.max(nu.total).max(1.0) {
        return Err(Error::param(format!(
            "unbalanced masses {:.12e} and {:.12e}",
            mu.total, nu.total
        )));
    }
    Ok(())
}

/// Wasserstein-1 distance for the ground metric `‖·‖_X`. On the line this is
/// the integrated gap between distribution functions with the monotone
/// coupling as plan; otherwise the exact transportation problem is solved.
pub fn w1_distance(mu: &DiscreteMeasure, nu: &DiscreteMeasure, space: &NormedSpace) -> Result<W1Result> {
    check_balanced(mu, nu, space)?;
    if space.dim() == 1 {
        w1_quantile(mu, nu, space)
    } else {
        w1_flow(mu, nu, space)
    }
}

/// Line case: `W₁ = ‖1‖_X·∫|F_μ − F_ν|`.
pub fn w1_quantile(mu: &DiscreteMeasure, nu: &DiscreteMeasure, space: &NormedSpace) -> Result<W1Result> {
    check_balanced(mu, nu, space)?;
    if space.dim() != 1 {
        return Err(Error::param("the quantile formula is one-dimensional"));
    }
    let unit = space.norm_unchecked(&[1.0]);
    let order = |m: &DiscreteMeasure| {
        let mut idx: Vec<usize> = (0..m.len()).filter(|&i| m.weights[i] > 0.0).collect();
        idx.sort_by(|&a, &b| m.points[a][0].total_cmp(&m.points[b][0]));
        idx
    };
    let (a, b) = (order(mu), order(nu));
    let rescale = mu.total / nu.total;

    // distribution-function gap over the merged breakpoints
    let mut events: Vec<(f64, f64)> = a.iter().map(|&i| (mu.points[i][0], mu.weights[i])).collect();
    events.extend(b.iter().map(|&j| (nu.points[j][0], -nu.weights[j] * rescale)));
    events.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut gap = 0.0;
    let mut terms = Vec::with_capacity(events.len());
    for w in events.windows(2) {
        gap += w[0].1;
        terms.push(gap.abs() * (w[1].0 - w[0].0));
    }
    let value = unit * rng::pairwise_sum(&terms);

    // monotone coupling
    let mut flows = Vec::new();
    let (mut i, mut j) = (0, 0);
    let mut left_a = a.first().map_or(0.0, |&k| mu.weights[k]);
    let mut left_b = b.first().map_or(0.0, |&k| nu.weights[k] * rescale);
    let mut cost = 0.0;
    while i < a.len() && j < b.len() {
        let f = left_a.min(left_b);
        if f > 0.0 {
            flows.push((a[i], b[j], f));
            cost += f * unit * (mu.points[a[i]][0] - nu.points[b[j]][0]).abs();
        }
        left_a -= f;
        left_b -= f;
        if left_a <= left_b {
            i += 1;
            if i < a.len() {
                left_a = mu.weights[a[i]];
            }
        } else {
            j += 1;
            if j < b.len() {
                left_b = nu.weights[b[j]] * rescale;
            }
        }
    }
    Ok(W1Result {
        value,
        plan: TransportPlan { flows, cost },
        method: W1Method::Quantile,
    })
}

/// Exact W₁ through the transportation simplex, in any dimension.
pub fn w1_flow(mu: &DiscreteMeasure, nu: &DiscreteMeasure, space: &NormedSpace) -> Result<W1Result> {
    check_balanced(mu, nu, space)?;
    let (ia, wa) = mu.positive();
    let (ib, mut wb) = nu.positive();
    if ia.len() > MAX_ATOMS || ib.len() > MAX_ATOMS {
        return Err(Error::inadmissible(format!(
            "{} and {} atoms exceed the flow solver cap of {MAX_ATOMS} per side",
            ia.len(),
            ib.len()
        )));
    }
    let rescale = mu.total / nu.total;
    wb.iter_mut().for_each(|w| *w *= rescale);
    let n = space.dim();
    let mut diff = vec![0.0; n];
    let mut cost = vec![0.0; ia.len() * ib.len()];
    for (r, &i) in ia.iter().enumerate() {
        for (c, &j) in ib.iter().enumerate() {
            for k in 0..n {
                diff[k] = mu.points[i][k] - nu.points[j][k];
            }
            cost[r * ib.len() + c] = space.norm_unchecked(&diff);
        }
    }
    let sol = solve_transport(&wa, &wb, &cost)?;
    let flows = sol.flows.iter().map(|&(r, c, f)| (ia[r], ib[c], f)).collect();
    Ok(W1Result {
        value: sol.cost,
        plan: TransportPlan { flows, cost: sol.cost },
        method: W1Method::NetworkSimplex,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectionReport {
    /// One affine map per output component, based at the origin.
    #[serde(skip)]
    pub map: AffineMap,
    pub ball_volume: f64,
    /// Largest relative gap between the discrete second moments on the ball
    /// mask and `L_X²`.
    pub moment_deviation: f64,
    pub mask_points: usize,
}

/// Discrete moments `∫_{B_X} 1`, `∫ z_j`, `∫ z_i z_j` on the ball mask.
fn ball_gram(points: &[Vec<f64>], w: f64, n: usize) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(n + 1, n + 1);
    let mut basis = vec![1.0; n + 1];
    for p in points {
        basis[1..].copy_from_slice(p);
        for i in 0..=n {
            for j in 0..=n {
                g[(i, j)] += w * basis[i] * basis[j];
            }
        }
    }
    g
}

/// Orthogonal projection of `f|_{B_X}` onto affine maps, computed on the ball
/// mask of the grid. The normal equations use the discrete moments of the
/// mask, so the projection is exactly idempotent and fixes affine fields; in
/// the continuum limit they reduce to `diag(1, L_X², …, L_X²)`.
pub fn proj_operator(f: &GridField, space: &NormedSpace, l_x: f64) -> Result<ProjectionReport> {
    let n = space.dim();
    if f.dim_in() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: f.dim_in(),
        });
    }
    if !(l_x > 0.0) {
        return Err(Error::param("isotropic constant must be positive"));
    }
    let mut e = vec![0.0; n];
    for i in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[i] = 1.0;
        let reach = space.dual_norm(&e);
        if -reach < f.lo() || reach > f.hi() {
            return Err(Error::param("the grid box must contain B_X"));
        }
    }
    let w = f.cell_volume();
    let res = f.res();
    let m = f.dim_out();
    let mut idx = Vec::new();
    let mut pts = Vec::new();
    let mut y = vec![0.0; n];
    for k in 0..f.num_points() {
        let mut r = k;
        for d in (0..n).rev() {
            y[d] = f.lo() + (r % res) as f64 * f.spacing();
            r /= res;
        }
        if space.contains(&y) {
            idx.push(k);
            pts.push(y.clone());
        }
    }
    let gram = ball_gram(&pts, w, n);
    let volume = gram[(0, 0)];
    if let Some(exact) = space.volume_exact() {
        if (exact - 1.0).abs() > 1e-6 {
            return Err(Error::param(format!("B_X has volume {exact:.6}, not 1; normalize first")));
        }
    }
    if (volume - 1.0).abs() > 0.05 {
        return Err(Error::param(format!("ball mask volume {volume:.4} is not 1; normalize first")));
    }
    let l2 = l_x * l_x;
    let moment_deviation = (1..=n)
        .flat_map(|i| (1..=n).map(move |j| (i, j)))
        .map(|(i, j)| {
            let target = if i == j { l2 } else { 0.0 };
            (gram[(i, j)] / volume - target).abs() / l2
        })
        .fold(0.0, f64::max);

    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Invariant("ball moment matrix is singular".into()))?;
    let mut value = vec![0.0; m];
    let mut linear = vec![0.0; m * n];
    for c in 0..m {
        let mut rhs = DVector::zeros(n + 1);
        for (k, p) in idx.iter().zip(&pts) {
            let v = f.at(*k)[c] * w;
            rhs[0] += v;
            for j in 0..n {
                rhs[j + 1] += v * p[j];
            }
        }
        let coef = chol.solve(&rhs);
        value[c] = coef[0];
        for j in 0..n {
            linear[c * n + j] = coef[j + 1];
        }
    }
    Ok(ProjectionReport {
        map: AffineMap {
            base_point: vec![0.0; n],
            value,
            linear,
        },
        ball_volume: volume,
        moment_deviation,
        mask_points: pts.len(),
    })
}

/// The measures `ν_x^±` with densities `(x·y)^±` on `B_X` and their
/// normalizations `μ_x^±`.
#[derive(Debug, Clone, Serialize)]
pub struct HalfBallMeasures {
    pub mu_plus: DiscreteMeasure,
    pub mu_minus: DiscreteMeasure,
    pub nu_plus: DiscreteMeasure,
    pub nu_minus: DiscreteMeasure,
    /// Cell side along each axis.
    pub spacing: Vec<f64>,
}

/// Discretizes `(x·y)^±` on cells of the bounding box of `B_X`. Each cell
/// carries the mass of its sub-samples inside the ball, placed at their
/// weighted centroid. The cell grid is centrally symmetric, so for symmetric
/// balls `μ_x⁺` is the reflection of `μ_x⁻` through the origin.
pub fn half_ball_measures(space: &NormedSpace, x: &[f64], atoms_per_measure: usize) -> Result<HalfBallMeasures> {
    let n = space.dim();
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.len(),
        });
    }
    if x.iter().all(|v| *v == 0.0) {
        return Err(Error::param("the direction x must be nonzero"));
    }
    if atoms_per_measure < 2 {
        return Err(Error::param("atoms_per_measure must be at least 2"));
    }
    let mut e = vec![0.0; n];
    let reach: Vec<f64> = (0..n)
        .map(|i| {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[i] = 1.0;
            space.dual_norm(&e)
        })
        .collect();
    let box_volume: f64 = reach.iter().map(|r| 2.0 * r).product();
    let ball_volume = space.volume_exact().unwrap_or(box_volume / 2.0);
    // half the ball carries each measure
    let side = (ball_volume / (2.0 * atoms_per_measure as f64)).powf(1.0 / n as f64);
    let counts: Vec<usize> = reach.iter().map(|r| ((2.0 * r / side).round() as usize).max(1)).collect();
    let spacing: Vec<f64> = reach.iter().zip(&counts).map(|(r, c)| 2.0 * r / *c as f64).collect();
    let sub_volume: f64 = spacing.iter().map(|h| h / SUBCELLS as f64).product();
    let half_sub: Vec<f64> = spacing.iter().map(|h| h / (2 * SUBCELLS) as f64).collect();
    let cells: usize = counts.iter().product();
    let subs = SUBCELLS.pow(n as u32);

    let per_cell: Vec<[(f64, Vec<f64>); 2]> = (0..cells)
        .into_par_iter()
        .map(|cell| {
            let mut first = vec![0usize; n];
            let mut r = cell;
            for d in (0..n).rev() {
                first[d] = (r % counts[d]) * SUBCELLS;
                r /= counts[d];
            }
            let mut acc = [(0.0, vec![0.0; n]), (0.0, vec![0.0; n])];
            let mut y = vec![0.0; n];
            for s in 0..subs {
                let mut r = s;
                for d in (0..n).rev() {
                    let k = first[d] + r % SUBCELLS;
                    r /= SUBCELLS;
                    // odd integer offsets from the centre, so that −y is exact
                    let odd = 2 * k as i64 + 1 - (counts[d] * SUBCELLS) as i64;
                    y[d] = odd as f64 * half_sub[d];
                }
                if !space.contains(&y) {
                    continue;
                }
                let d = dot(x, &y);
                let side = usize::from(d < 0.0);
                let mass = d.abs() * sub_volume;
                acc[side].0 += mass;
                for k in 0..n {
                    acc[side].1[k] += mass * y[k];
                }
            }
            acc
        })
        .collect();

    let build = |side: usize| -> Result<DiscreteMeasure> {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for c in &per_cell {
            let (mass, ref moment) = c[side];
            if mass > 0.0 {
                points.push(moment.iter().map(|v| v / mass).collect());
                weights.push(mass);
            }
        }
        DiscreteMeasure::new(points, weights)
    };
    let nu_plus = build(0)?;
    let nu_minus = build(1)?;
    if nu_plus.is_empty() || nu_minus.is_empty() {
        return Err(Error::inadmissible("half-ball discretization produced no atoms"));
    }
    Ok(HalfBallMeasures {
        mu_plus: nu_plus.normalized(),
        mu_minus: nu_minus.normalized(),
        nu_plus,
        nu_minus,
        spacing,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DirectionRow {
    /// Direction on the unit sphere of `X`.
    pub x: Vec<f64>,
    /// `W₁(ν_x⁺, ν_x⁻)`.
    pub w1: f64,
    /// `|x|/(L_X‖x‖_X)·W₁(μ_x⁺, μ_x⁻)`.
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjNormReport {
    /// `sup_x W₁(ν_x⁺, ν_x⁻)/L_X²` over the probed directions.
    pub proj_norm: f64,
    /// The same supremum direction evaluated with twice the atoms.
    pub refined_proj_norm: f64,
    pub refinement_change: f64,
    pub maximizer: Vec<f64>,
    pub max_ratio: f64,
    pub band_constant: f64,
    pub band_holds: bool,
    pub atoms: usize,
    pub directions_probed: usize,
    pub per_direction: Vec<DirectionRow>,
}

fn evaluate_direction(space: &NormedSpace, l_x: f64, dir: &[f64], atoms: usize) -> Result<DirectionRow> {
    let norm = space.norm_unchecked(dir);
    let x: Vec<f64> = dir.iter().map(|v| v / norm).collect();
    let hb = half_ball_measures(space, &x, atoms)?;
    let nu = w1_distance(&hb.nu_plus, &hb.nu_minus, space)?;
    let euclid = dot(&x, &x).sqrt();
    // W₁(μ) = W₁(ν)/total, and ‖x‖_X = 1
    let ratio = euclid / l_x * nu.value / hb.nu_plus.total;
    Ok(DirectionRow { x, w1: nu.value, ratio })
}

fn probe_directions(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    match n {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => rng::draw(count, seed, tags::TRANSPORT, |r| {
            let mut v = vec![0.0; n];
            draw_sphere(r, &mut v);
            v
        }),
    }
}

/// Estimates `‖Proj‖_{Lip→Lip}` through the duality identity, taking the
/// supremum over probed directions refined by a local search (golden section
/// in the angle for `n = 2`, tangent-step ascent for `n = 3`). The best
/// direction is re-solved with doubled atoms; a change above
/// [`REFINEMENT_TOLERANCE`] is reported as an unresolved discretization.
pub fn proj_norm_estimate(
    space: &NormedSpace,
    l_x: f64,
    directions: usize,
    atoms: usize,
    seed: u64,
) -> Result<ProjNormReport> {
    let n = space.dim();
    if n > 3 {
        return Err(Error::inadmissible(format!("dimension {n} is beyond the flow solver scale (n <= 3)")));
    }
    if !(l_x > 0.0) {
        return Err(Error::param("isotropic constant must be positive"));
    }
    if directions == 0 {
        return Err(Error::param("need at least one direction"));
    }
    if 2 * atoms > MAX_ATOMS {
        return Err(Error::inadmissible(format!(
            "refinement needs {} atoms, above the cap {MAX_ATOMS}",
            2 * atoms
        )));
    }
    let probes = probe_directions(n, directions, seed);
    let mut rows: Vec<DirectionRow> = probes
        .par_iter()
        .map(|d| evaluate_direction(space, l_x, d, atoms))
        .collect::<Result<_>>()?;
    let argmax = |rows: &[DirectionRow]| {
        (0..rows.len()).fold(0, |b, i| if rows[i].w1 > rows[b].w1 { i } else { b })
    };
    let best = argmax(&rows);

    match n {
        2 => {
            let step = 2.0 * std::f64::consts::PI / directions as f64;
            let centre = rows[best].x[1].atan2(rows[best].x[0]);
            let at = |a: f64| evaluate_direction(space, l_x, &[a.cos(), a.sin()], atoms);
            let phi = (5f64.sqrt() - 1.0) / 2.0;
            let (mut a, mut b) = (centre - step, centre + step);
            let mut c = b - phi * (b - a);
            let mut d = a + phi * (b - a);
            let mut rc = at(c)?;
            let mut rd = at(d)?;
            for _ in 0..16 {
                if rc.w1 >= rd.w1 {
                    b = d;
                    d = c;
                    rd = rc;
                    c = b - phi * (b - a);
                    rc = at(c)?;
                } else {
                    a = c;
                    c = d;
                    rc = rd;
                    d = a + phi * (b - a);
                    rd = at(d)?;
                }
            }
            rows.push(rc);
            rows.push(rd);
        }
        3 => {
            let mut x = rows[best].x.clone();
            let mut fx = rows[best].w1;
            let mut step = 0.2;
            for _ in 0..8 {
                // two tangent directions at x
                let pivot = if x[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
                let u = normalize(&cross(&x, &pivot));
                let v = normalize(&cross(&x, &u));
                let mut moved = false;
                for t in [&u, &v] {
                    for s in [step, -step] {
                        let cand: Vec<f64> = (0..3).map(|k| x[k] + s * t[k]).collect();
                        let row = evaluate_direction(space, l_x, &cand, atoms)?;
                        if row.w1 > fx {
                            fx = row.w1;
                            x = row.x.clone();
                            rows.push(row);
                            moved = true;
                        }
                    }
                }
                if !moved {
                    step *= 0.5;
                }
            }
        }
        _ => {}
    }

    let best = argmax(&rows);
    let l2 = l_x * l_x;
    let proj_norm = rows[best].w1 / l2;
    let refined = evaluate_direction(space, l_x, &rows[best].x, 2 * atoms)?;
    let refined_proj_norm = refined.w1 / l2;
    let refinement_change = (refined_proj_norm - proj_norm).abs() / proj_norm;
    if refinement_change > REFINEMENT_TOLERANCE {
        return Err(Error::inadmissible(format!(
            "W1 moved by {:.2}% under atom doubling; raise the atom count",
            100.0 * refinement_change
        )));
    }
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let band_holds = max_ratio >= proj_norm / SYMMETRY_BAND && max_ratio <= SYMMETRY_BAND * proj_norm;
    Ok(ProjNormReport {
        proj_norm,
        refined_proj_norm,
        refinement_change,
        maximizer: rows[best].x.clone(),
        max_ratio,
        band_constant: SYMMETRY_BAND,
        band_holds,
        atoms,
        directions_probed: rows.len(),
        per_direction: rows,
    })
}

fn cross(a: &[f64], b: &[f64]) -> Vec<f64> {
    vec![a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let r = dot(v, v).sqrt();
    v.iter().map(|x| x / r).collect()
}
