//! Multiscale affine-approximation functionals: the Carleson integral of the
//! heat-Taylor defect, its two-part split, the local version on the unit
//! ball and the search for a ball where a field is nearly affine.

use crate::error::{Error, Result};
use crate::fields::{lipschitz_constant, GridField, TargetNorm};
use crate::heat::{affine_lip, evolute_lip_threshold_with, log_dim, max_heat_time, AffineMap, Spectrum};
use crate::lps::{integrate_scales, padded_lq_pow, FunctionalReport, ScaleGrid, GRID_SLACK};
use crate::quadrature::gauss_legendre;
use crate::rng::{self, pairwise_sum, tags};
use crate::spaces::{invariant_b, invariant_i_q, invariant_m_p, sample_sphere, BallSampler, NormKind, NormedSpace};
use crate::spectral::sin_minus_identity;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

/// How the heat time `γt²` is tied to the radius `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum GammaChoice {
    Fixed(f64),
    /// `I_q(X) / (√n M(X))`.
    Space,
    /// The field-adapted [`optimal_gamma`].
    Auto,
}

#[derive(Debug, Clone)]
pub struct DorroConfig {
    pub space: NormedSpace,
    pub target: TargetNorm,
    pub q: f64,
    pub gamma: GammaChoice,
    /// Every `x_stride`-th grid point along each axis enters the `x` integral
    /// (physical path only).
    pub x_stride: usize,
    /// Radii `t`; the default runs from `h/2` to the top admissible radius.
    pub scale_grid: Option<ScaleGrid>,
    pub per_decade: usize,
    /// Nodes of the rule for the inner ball average.
    pub ball_samples: usize,
    pub seed: u64,
    pub kappa: f64,
    /// Martingale cotype constant of the target, `1` for Euclidean targets.
    pub martingale_constant: f64,
    /// Samples for the Monte Carlo space invariants.
    pub invariant_samples: usize,
    /// Also try a least-squares affine fit per ball in the local functional.
    pub least_squares: bool,
}

impl DorroConfig {
    pub fn new(space: NormedSpace, q: f64) -> Self {
        let ball_samples = match space.dim() {
            1 => 32,
            2 => 256,
            _ => 512,
        };
        DorroConfig {
            space,
            target: TargetNorm::euclidean(),
            q,
            gamma: GammaChoice::Space,
            x_stride: 1,
            scale_grid: None,
            per_decade: 48,
            ball_samples,
            seed: 0,
            kappa: 1.0,
            martingale_constant: 1.0,
            invariant_samples: 200_000,
            least_squares: false,
        }
    }

    fn validate(&self, f: &GridField) -> Result<()> {
        if self.space.dim() != f.dim_in() {
            return Err(Error::DimensionMismatch {
                expected: f.dim_in(),
                got: self.space.dim(),
            });
        }
        if !(self.q >= 2.0) || !self.q.is_finite() {
            return Err(Error::param(format!("q = {} must be finite and >= 2", self.q)));
        }
        if let GammaChoice::Fixed(g) = self.gamma {
            if !(g > 0.0) || !g.is_finite() {
                return Err(Error::param(format!("γ = {g} must be positive")));
            }
        }
        if self.x_stride == 0 || self.ball_samples == 0 || self.per_decade == 0 {
            return Err(Error::param("x_stride, ball_samples and per_decade must be positive"));
        }
        Ok(())
    }

    /// The resolved `γ` for a field.
    pub fn resolve_gamma(&self, f: &GridField) -> Result<f64> {
        match self.gamma {
            GammaChoice::Fixed(g) => Ok(g),
            GammaChoice::Space => space_gamma(self.q, &self.space, self.invariant_samples, self.seed),
            GammaChoice::Auto => optimal_gamma(f, self),
        }
    }

    /// Default radii: from `h/2` to `√(max heat time / γ)`.
    pub fn radii(&self, f: &GridField, gamma: f64) -> Result<ScaleGrid> {
        let top = (max_heat_time(f) / gamma).sqrt();
        match self.scale_grid {
            Some(g) => {
                if g.t_max > top * (1.0 + 1e-12) {
                    return Err(Error::inadmissible(format!(
                        "top radius {:.6e} gives heat time γt² = {:.6e} outside the admissible range [0, {:.6e}]",
                        g.t_max,
                        gamma * g.t_max * g.t_max,
                        max_heat_time(f)
                    )));
                }
                Ok(g)
            }
            None => ScaleGrid::per_decade(0.5 * f.spacing(), top, self.per_decade),
        }
    }
}

/// Normalized quadrature for averages over the unit ball of a space, in
/// Euclidean coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct BallRule {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// False when the points are seeded uniform samples.
    pub deterministic: bool,
}

impl BallRule {
    /// Product Gauss rules for intervals, discs, squares and diamonds;
    /// seeded uniform samples otherwise.
    pub fn new(space: &NormedSpace, samples: usize, seed: u64) -> Result<Self> {
        let n = space.dim();
        let samples = samples.max(1);
        let native = match (space.kind(), n) {
            (NormKind::Lp { .. } | NormKind::WeightedLp { .. }, 1) => Some(interval_rule(samples.max(2))),
            (NormKind::Lp { p } | NormKind::WeightedLp { p, .. }, 2) if *p == 2.0 => Some(disc_rule(samples)),
            (NormKind::Lp { p } | NormKind::WeightedLp { p, .. }, _) if p.is_infinite() && n <= 3 => {
                Some(cube_rule(n, samples))
            }
            (NormKind::Lp { p } | NormKind::WeightedLp { p, .. }, 2) if *p == 1.0 => {
                // the diamond is the image of the square under (a, b) ↦ ((a+b)/2, (a−b)/2)
                let (pts, w) = cube_rule(2, samples);
                Some((pts.into_iter().map(|v| vec![0.5 * (v[0] + v[1]), 0.5 * (v[0] - v[1])]).collect(), w))
            }
            _ => None,
        };
        match native {
            Some((pts, weights)) => {
                let scale = space.weights();
                let points = pts
                    .into_iter()
                    .map(|mut x| {
                        if let Some(w) = &scale {
                            x.iter_mut().zip(w).for_each(|(v, w)| *v /= w);
                        }
                        let mut y = vec![0.0; n];
                        space.to_euclidean(&x, &mut y);
                        y
                    })
                    .collect();
                Ok(BallRule {
                    points,
                    weights,
                    deterministic: true,
                })
            }
            None => {
                let sampler = BallSampler::new(space, seed)?;
                let points = rng::draw(samples, seed, tags::BALL_RULE, |r| {
                    let mut v = vec![0.0; n];
                    sampler.draw(r, &mut v);
                    v
                });
                Ok(BallRule {
                    points,
                    weights: vec![1.0 / samples as f64; samples],
                    deterministic: false,
                })
            }
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn average(&self, g: impl Fn(&[f64]) -> f64) -> f64 {
        let terms: Vec<f64> = self.points.iter().zip(&self.weights).map(|(p, w)| w * g(p)).collect();
        pairwise_sum(&terms)
    }
}

fn normalized(weights: Vec<f64>) -> Vec<f64> {
    let s = pairwise_sum(&weights);
    weights.into_iter().map(|w| w / s).collect()
}

fn interval_rule(k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let r = gauss_legendre(k);
    (r.nodes.iter().map(|&x| vec![x]).collect(), normalized(r.weights.clone()))
}

fn disc_rule(samples: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let nr = ((samples as f64 / 4.0).sqrt().round() as usize).max(4);
    let na = (samples / nr).max(8);
    let r = gauss_legendre(nr).mapped(0.0, 1.0);
    let mut pts = Vec::with_capacity(nr * na);
    let mut w = Vec::with_capacity(nr * na);
    for (&rho, &wr) in r.nodes.iter().zip(&r.weights) {
        for j in 0..na {
            let phi = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / na as f64;
            pts.push(vec![rho * phi.cos(), rho * phi.sin()]);
            w.push(wr * rho);
        }
    }
    (pts, normalized(w))
}

fn cube_rule(n: usize, samples: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let k = ((samples as f64).powf(1.0 / n as f64).ceil() as usize).max(2);
    let r = gauss_legendre(k);
    let total = k.pow(n as u32);
    let mut pts = Vec::with_capacity(total);
    let mut w = Vec::with_capacity(total);
    for code in 0..total {
        let mut c = code;
        let mut p = vec![0.0; n];
        let mut wt = 1.0;
        for v in p.iter_mut() {
            *v = r.nodes[c % k];
            wt *= r.weights[c % k];
            c /= k;
        }
        pts.push(p);
        w.push(wt);
    }
    (pts, normalized(w))
}

/// `I_q(X) / (√n M(X))`.
pub fn space_gamma(q: f64, space: &NormedSpace, samples: usize, seed: u64) -> Result<f64> {
    let i = invariant_i_q(space, q, samples, seed)?.value;
    let m = invariant_m_p(space, 1.0, samples, seed)?.value;
    Ok(i / ((space.dim() as f64).sqrt() * m))
}

/// `κ n^{1/4} m_q √(I_q(X) M(X))`.
pub fn carleson_constant(q: f64, space: &NormedSpace, martingale_constant: f64, kappa: f64, samples: usize, seed: u64) -> Result<f64> {
    if !(martingale_constant > 0.0) || !(kappa > 0.0) {
        return Err(Error::param("m_q and κ must be positive"));
    }
    let i = invariant_i_q(space, q, samples, seed)?;
    let m = invariant_m_p(space, 1.0, samples, seed)?;
    carleson_constant_from(space.dim(), i.value * m.value, martingale_constant, kappa)
}

/// The same constant from a known product `I_q(X) M(X)`.
pub fn carleson_constant_from(n: usize, iq_m: f64, martingale_constant: f64, kappa: f64) -> Result<f64> {
    // I_q M >= 1/2 always; a smaller value means a broken estimate
    if iq_m < 0.5 * (1.0 - 1e-3) {
        return Err(Error::Invariant(format!("I_q(X) M(X) = {iq_m} below 1/2")));
    }
    Ok(kappa * (n as f64).powf(0.25) * martingale_constant * iq_m.sqrt())
}

/// Which part of the defect a multiplier measures.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Part {
    Total,
    /// Evolute minus its Taylor polynomial.
    Taylor,
    /// Field minus evolute.
    Smoothing,
}

impl Part {
    /// Decay exponent of `g(t)` beyond the top radius.
    fn tail_exponent(self, n: usize, q: f64) -> f64 {
        match self {
            Part::Total | Part::Smoothing => q,
            Part::Taylor => q + n as f64 * (q - 1.0),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Part::Total => "carleson",
            Part::Taylor => "carleson-taylor-part",
            Part::Smoothing => "carleson-smoothing-part",
        }
    }

    fn multiplier(self, theta: f64, d: f64) -> Complex64 {
        let em = (-d).exp_m1();
        let half = (0.5 * theta).sin();
        match self {
            Part::Total => Complex64::new(-2.0 * half * half - em, sin_minus_identity(theta) - theta * em),
            Part::Taylor => {
                let e = (-d).exp();
                Complex64::new(-2.0 * half * half * e, sin_minus_identity(theta) * e)
            }
            Part::Smoothing => Complex64::new(0.0, theta).exp() * (-em),
        }
    }
}

/// Spectral data shared by every scale.
struct Prepared {
    spec: Spectrum,
    /// `ξ` per spectral index, axis-major.
    xi: Vec<Vec<f64>>,
    /// Indices kept by the Parseval path with their power `Σ_c |F̂_c|² hⁿ/N`;
    /// modes at the rounding floor are dropped.
    active: Vec<(usize, f64)>,
    parseval: bool,
}

impl Prepared {
    fn new(f: &GridField, cfg: &DorroConfig) -> Self {
        let spec = Spectrum::new(f);
        let n = f.dim_in();
        let xi: Vec<Vec<f64>> = (0..n).map(|a| spec.torus().frequency_component(a)).collect();
        let parseval = cfg.q == 2.0 && cfg.target.p.value() == 2.0 && cfg.x_stride == 1;
        let mut active = Vec::new();
        if parseval {
            let total = spec.torus().total();
            let scale = f.cell_volume() / total as f64;
            let power: Vec<f64> = (0..total)
                .map(|k| (0..f.dim_out()).map(|c| spec.coefficients(c)[k].norm_sqr()).sum::<f64>() * scale)
                .collect();
            let max = power.iter().copied().fold(0.0, f64::max);
            active = power
                .into_iter()
                .enumerate()
                .filter(|(_, p)| *p > 1e-26 * max)
                .collect();
        }
        Prepared {
            spec,
            xi,
            active,
            parseval,
        }
    }

    fn xi_dot(&self, z: &[f64], k: usize) -> f64 {
        z.iter().zip(&self.xi).map(|(a, x)| a * x[k]).sum()
    }

    /// `⨍_z ∫ ‖residual‖_Y^q dx` at radius `t`.
    fn ball_average(&self, part: Part, t: f64, gamma: f64, rule: &BallRule, cfg: &DorroConfig) -> f64 {
        let xi_sq = self.spec.frequency_norm_sq();
        let gt2 = gamma * t * t;
        if self.parseval {
            // damping beyond e^{-40} leaves |m|² = 1 for the total and smoothing parts
            let n = self.xi.len();
            let mut plain = 0.0;
            let mut xi: Vec<Vec<f64>> = vec![Vec::new(); n];
            let mut pw = Vec::new();
            let mut em = Vec::new();
            for &(k, p) in &self.active {
                let d = gt2 * xi_sq[k];
                if d > 40.0 {
                    if part != Part::Taylor {
                        plain += p;
                    }
                    continue;
                }
                for a in 0..n {
                    xi[a].push(t * self.xi[a][k]);
                }
                pw.push(p);
                em.push((-d).exp_m1());
            }
            if part == Part::Smoothing {
                let terms: Vec<f64> = pw.iter().zip(&em).map(|(p, e)| p * e * e).collect();
                return pairwise_sum(&terms) + plain;
            }
            let mut theta = vec![0.0; pw.len()];
            let per_z: Vec<f64> = rule
                .points
                .iter()
                .map(|z| {
                    theta.iter_mut().for_each(|v| *v = 0.0);
                    for a in 0..n {
                        theta.iter_mut().zip(&xi[a]).for_each(|(v, x)| *v += z[a] * x);
                    }
                    let mut s = 0.0;
                    for ((&th, &p), &e) in theta.iter().zip(&pw).zip(&em) {
                        let (sh, ch) = (0.5 * th).sin_cos();
                        let sm = if th.abs() < 0.1 { sin_minus_identity(th) } else { 2.0 * sh * ch - th };
                        let m2 = match part {
                            Part::Total => {
                                let re = -2.0 * sh * sh - e;
                                let im = sm - th * e;
                                re * re + im * im
                            }
                            _ => {
                                let big = 1.0 + e;
                                let re = 2.0 * sh * sh;
                                big * big * (re * re + sm * sm)
                            }
                        };
                        s += p * m2;
                    }
                    s
                })
                .collect();
            let weighted: Vec<f64> = per_z.iter().zip(&rule.weights).map(|(v, w)| v * w).collect();
            pairwise_sum(&weighted) + plain
        } else {
            let base = self.spec.base();
            let cell = base.cell_volume() * (cfg.x_stride.pow(base.dim_in() as u32)) as f64;
            let per_z: Vec<f64> = rule
                .points
                .iter()
                .map(|z| {
                    let mult: Vec<Complex64> = xi_sq
                        .iter()
                        .enumerate()
                        .map(|(k, s)| part.multiplier(t * self.xi_dot(z, k), gt2 * s))
                        .collect();
                    let comps: Vec<Vec<f64>> = (0..base.dim_out())
                        .map(|c| strided(&self.spec.apply_padded(c, &mult), self.spec.torus().len, base.dim_in(), cfg.x_stride))
                        .collect();
                    padded_lq_pow(&comps, cfg.q, cfg.target, cell)
                })
                .collect();
            let weighted: Vec<f64> = per_z.iter().zip(&rule.weights).map(|(v, w)| v * w).collect();
            pairwise_sum(&weighted)
        }
    }
}

fn strided(values: &[f64], len: usize, n: usize, stride: usize) -> Vec<f64> {
    if stride == 1 {
        return values.to_vec();
    }
    values
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            let mut i = *i;
            (0..n).all(|_| {
                let ok = (i % len).is_multiple_of(stride);
                i /= len;
                ok
            })
        })
        .map(|(_, v)| *v)
        .collect()
}

/// Scale samples `g(t) = t^{-q} ⨍_z ∫‖·‖^q` for one part.
fn part_samples(prep: &Prepared, part: Part, grid: &ScaleGrid, gamma: f64, rule: &BallRule, cfg: &DorroConfig) -> Vec<f64> {
    grid.times()
        .par_iter()
        .map(|&t| t.powf(-cfg.q) * prep.ball_average(part, t, gamma, rule, cfg))
        .collect()
}

struct Setup {
    prep: Prepared,
    gamma: f64,
    grid: ScaleGrid,
    rule: BallRule,
}

fn setup(f: &GridField, cfg: &DorroConfig) -> Result<Setup> {
    cfg.validate(f)?;
    let gamma = cfg.resolve_gamma(f)?;
    let grid = cfg.radii(f, gamma)?;
    let rule = BallRule::new(&cfg.space, cfg.ball_samples, cfg.seed)?;
    Ok(Setup {
        prep: Prepared::new(f, cfg),
        gamma,
        grid,
        rule,
    })
}

fn part_report(s: &Setup, f: &GridField, part: Part, cfg: &DorroConfig) -> (FunctionalReport, Vec<f64>) {
    let g = part_samples(&s.prep, part, &s.grid, s.gamma, &s.rule, cfg);
    let integral = integrate_scales(&s.grid, &g, Some(part.tail_exponent(f.dim_in(), cfg.q)));
    let mut r = FunctionalReport::from_integral(part.name(), s.grid, cfg.q, integral, None).with_samples(&s.grid, &g);
    r.details.insert("gamma".into(), s.gamma);
    r.details.insert("ball_nodes".into(), s.rule.len() as f64);
    r.details
        .insert("parseval_path".into(), if s.prep.parseval { 1.0 } else { 0.0 });
    (r, g)
}

/// `(∫∫ ⨍_{x+tB_X} ‖f(y) − T¹ₓ(H_{γt²}f)(y)‖_Y^q t^{-q-1} dy dt dx)^{1/q}`, with
/// the bound `K |supp f|^{1/q} Lip(f)`.
pub fn carleson_functional(f: &GridField, cfg: &DorroConfig) -> Result<FunctionalReport> {
    let s = setup(f, cfg)?;
    let (mut r, _) = part_report(&s, f, Part::Total, cfg);
    let k = carleson_constant(cfg.q, &cfg.space, cfg.martingale_constant, cfg.kappa, cfg.invariant_samples, cfg.seed)?;
    let lip = lipschitz_constant(f, &cfg.space, cfg.target)?;
    let supp = f.support_volume();
    let bound = k * supp.powf(1.0 / cfg.q) * lip;
    r.bound_value = Some(bound);
    r.ratio = (bound > 0.0).then(|| r.value / bound);
    r.details.insert("K".into(), k);
    r.details.insert("kappa".into(), cfg.kappa);
    r.details.insert("support_volume".into(), supp);
    r.details.insert("lipschitz".into(), lip);
    Ok(r)
}

/// The Carleson integral without the bound, which needs no space invariants.
pub fn carleson_value(f: &GridField, cfg: &DorroConfig) -> Result<FunctionalReport> {
    let s = setup(f, cfg)?;
    Ok(part_report(&s, f, Part::Total, cfg).0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JSplit {
    pub total: f64,
    /// Evolute against its Taylor polynomial.
    pub j1: f64,
    /// Field against its evolute.
    pub j2: f64,
    /// Minkowski on the common quadrature, before the scale closures.
    pub discrete_total: f64,
    pub discrete_j1: f64,
    pub discrete_j2: f64,
    pub triangle_holds: bool,
}

/// Splits the Carleson integral into the Taylor and smoothing parts.
pub fn j_split(f: &GridField, cfg: &DorroConfig) -> Result<JSplit> {
    let s = setup(f, cfg)?;
    let (total, gt) = part_report(&s, f, Part::Total, cfg);
    let (j1, g1) = part_report(&s, f, Part::Taylor, cfg);
    let (j2, g2) = part_report(&s, f, Part::Smoothing, cfg);
    // the same positive weights for all three: a weighted L_q norm
    let dv = s.grid.log_step();
    let disc = |g: &[f64]| -> f64 {
        let last = g.len() - 1;
        let terms: Vec<f64> = g
            .iter()
            .enumerate()
            .map(|(i, v)| if i == 0 || i == last { 0.5 * v * dv } else { v * dv })
            .collect();
        pairwise_sum(&terms).max(0.0).powf(1.0 / cfg.q)
    };
    let (dt, d1, d2) = (disc(&gt), disc(&g1), disc(&g2));
    let triangle_holds = dt <= (d1 + d2) * (1.0 + 1e-9);
    if !triangle_holds {
        return Err(Error::Invariant(format!("Minkowski fails: {dt} > {d1} + {d2}")));
    }
    Ok(JSplit {
        total: total.value,
        j1: j1.value,
        j2: j2.value,
        discrete_total: dt,
        discrete_j1: d1,
        discrete_j2: d2,
        triangle_holds,
    })
}

/// Gradient components of a field, component `c*n + a` = `∂_a f_c`.
fn spectral_gradient(f: &GridField) -> GridField {
    Spectrum::new(f).gradient_radial(|_| 1.0)
}

/// `‖Σ_a z_a ∂_a f‖_{L_q(Y)}` on the field grid.
fn directional_norm(grad: &GridField, n: usize, z: &[f64], q: f64, target: TargetNorm) -> f64 {
    let m = grad.dim_out() / n;
    let pows: Vec<f64> = (0..grad.num_points())
        .map(|i| {
            let g = grad.at(i);
            let mut buf = [0.0f64; 16];
            let mut heap = Vec::new();
            let v: &mut [f64] = if m <= 16 {
                &mut buf[..m]
            } else {
                heap.resize(m, 0.0);
                &mut heap
            };
            for (c, o) in v.iter_mut().enumerate() {
                *o = (0..n).map(|a| z[a] * g[c * n + a]).sum();
            }
            target.norm(v).powf(q)
        })
        .collect();
    (pairwise_sum(&pows) * grad.cell_volume()).powf(1.0 / q)
}

/// Euclidean sphere rule: `±1` for `n = 1`, the angular trapezoid for
/// `n = 2`, seeded uniform directions otherwise.
fn sphere_rule(n: usize, seed: u64) -> Vec<Vec<f64>> {
    match n {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..64)
            .map(|j| {
                let phi = 2.0 * std::f64::consts::PI * j as f64 / 64.0;
                vec![phi.cos(), phi.sin()]
            })
            .collect(),
        _ => sample_sphere(n, 256, seed),
    }
}

/// `γ(f) = (⨍_{B_X} |x|^q ‖x·∇f‖_q^q dx)^{1/q} / (√n ⨍_S ‖σ·∇f‖_q dσ)`.
pub fn optimal_gamma(f: &GridField, cfg: &DorroConfig) -> Result<f64> {
    let n = f.dim_in();
    if cfg.space.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: cfg.space.dim(),
        });
    }
    let grad = spectral_gradient(f);
    let q = cfg.q;
    let rule = BallRule::new(&cfg.space, cfg.ball_samples, cfg.seed)?;
    let num = rule.average(|x| {
        let e = x.iter().map(|v| v * v).sum::<f64>().powf(0.5 * q);
        e * directional_norm(&grad, n, x, q, cfg.target).powf(q)
    });
    let dirs = sphere_rule(n, cfg.seed);
    let den = dirs
        .iter()
        .map(|s| directional_norm(&grad, n, s, q, cfg.target))
        .sum::<f64>()
        / dirs.len() as f64;
    if !(den > 0.0) || !(num > 0.0) {
        return Err(Error::param("the field has zero gradient"));
    }
    Ok(num.powf(1.0 / q) / ((n as f64).sqrt() * den))
}

/// The cutoff constant `c` in the top radius of the local functional.
pub const LOCAL_RADIUS_CONSTANT: f64 = 0.25;

/// `c / (n^{5/4} √(I_q M log n))`.
pub fn local_top_radius(n: usize, iq_m: f64, c: f64) -> Result<f64> {
    let t = c / ((n as f64).powf(1.25) * (iq_m * log_dim(n)).sqrt());
    if t > 1.0 / (2.0 * n as f64) * (1.0 + 1e-12) {
        return Err(Error::Invariant(format!("top radius {t} exceeds 1/(2n)")));
    }
    Ok(t)
}

#[derive(Debug, Clone)]
pub struct ExtensionReport {
    pub field: GridField,
    /// `f(0)`, subtracted before extending.
    pub center_value: Vec<f64>,
    pub lipschitz: f64,
    /// `n + 2`, the extension bound for 1-Lipschitz input.
    pub lipschitz_bound: f64,
    pub lipschitz_ok: bool,
    /// Largest `‖x‖_X` over the support.
    pub support_radius: f64,
    pub support_ok: bool,
}

/// `F = f − f(0)` on `B_X` and `max(0, n+1−n‖x‖_X)(f(x/‖x‖_X) − f(0))`
/// outside, on the grid of `f`.
pub fn extend_to_global(f: &GridField, space: &NormedSpace, target: TargetNorm) -> Result<ExtensionReport> {
    let n = f.dim_in();
    if space.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: space.dim(),
        });
    }
    let zero = vec![0.0; n];
    if !f.contains(&zero) {
        return Err(Error::param("the origin lies outside the field box"));
    }
    let m = f.dim_out();
    let mut f0 = vec![0.0; m];
    f.interpolate(&zero, &mut f0);
    let nf = n as f64;
    let values: Vec<f64> = (0..f.num_points())
        .into_par_iter()
        .flat_map_iter(|idx| {
            let mut x = vec![0.0; n];
            f.point(idx, &mut x);
            let r = space.norm_unchecked(&x);
            let mut out = vec![0.0; m];
            if r <= 1.0 {
                out.iter_mut().zip(f.at(idx)).zip(&f0).for_each(|((o, v), c)| *o = v - c);
            } else {
                let w = (nf + 1.0 - nf * r).max(0.0);
                if w > 0.0 {
                    let y: Vec<f64> = x.iter().map(|v| v / r).collect();
                    f.interpolate(&y, &mut out);
                    out.iter_mut().zip(&f0).for_each(|(o, c)| *o = w * (*o - c));
                }
            }
            out
        })
        .collect();
    let field = f.with_values(m, values)?;
    let lipschitz = lipschitz_constant(&field, space, target)?;
    let lipschitz_bound = nf + 2.0;
    let mut support_radius = 0.0f64;
    let mut x = vec![0.0; n];
    for idx in 0..field.num_points() {
        if field.at(idx).iter().any(|v| *v != 0.0) {
            field.point(idx, &mut x);
            support_radius = support_radius.max(space.norm_unchecked(&x));
        }
    }
    Ok(ExtensionReport {
        lipschitz_ok: lipschitz <= lipschitz_bound * (1.0 + GRID_SLACK),
        support_ok: support_radius <= (1.0 + 1.0 / nf) * (1.0 + GRID_SLACK),
        field,
        center_value: f0,
        lipschitz,
        lipschitz_bound,
        support_radius,
    })
}

/// Grid points of `f` in `radius·B_X`, every `stride`-th along each axis.
fn ball_grid_points(f: &GridField, space: &NormedSpace, radius: f64, stride: usize) -> Vec<Vec<f64>> {
    let n = f.dim_in();
    let mut multi = vec![0usize; n];
    let mut out = Vec::new();
    for idx in 0..f.num_points() {
        f.multi_index(idx, &mut multi);
        if multi.iter().any(|k| k % stride != 0) {
            continue;
        }
        let mut x = vec![0.0; n];
        f.point(idx, &mut x);
        if space.norm_unchecked(&x) <= radius {
            out.push(x);
        }
    }
    out
}

/// `(⨍_{x+ρB} ‖F − Λ‖^q)^{1/q}` by the ball rule and, when asked, the largest
/// deviation at the rule nodes and at the grid points of the ball.
fn ball_errors(
    field: &GridField,
    lam: &AffineMap,
    x: &[f64],
    rho: f64,
    rule: &BallRule,
    space: &NormedSpace,
    q: f64,
    target: TargetNorm,
    with_sup: bool,
) -> (f64, f64) {
    let n = x.len();
    let m = field.dim_out();
    let mut y = vec![0.0; n];
    let mut fv = vec![0.0; m];
    let mut lv = vec![0.0; m];
    let mut sup = 0.0f64;
    let dev = |y: &[f64], fv: &mut [f64], lv: &mut [f64]| -> f64 {
        field.interpolate(y, fv);
        lam.eval(y, lv);
        fv.iter_mut().zip(lv.iter()).for_each(|(a, b)| *a -= b);
        target.norm(fv)
    };
    let terms: Vec<f64> = rule
        .points
        .iter()
        .zip(&rule.weights)
        .map(|(z, w)| {
            for a in 0..n {
                y[a] = x[a] + rho * z[a];
            }
            let d = dev(&y, &mut fv, &mut lv);
            sup = sup.max(d);
            w * d.powf(q)
        })
        .collect();
    let lq = pairwise_sum(&terms).powf(1.0 / q);
    if with_sup {
        let h = field.spacing();
        let span = (rho * space.circumradius_exact().unwrap_or(1.0) / h).ceil() as i64 + 1;
        let base: Vec<i64> = x.iter().map(|v| ((v - field.lo()) / h).round() as i64).collect();
        let count = (2 * span + 1).pow(n as u32);
        let mut off = vec![0.0; n];
        for code in 0..count {
            let mut c = code;
            for a in 0..n {
                let k = base[a] + (c % (2 * span + 1)) - span;
                c /= 2 * span + 1;
                y[a] = field.lo() + k as f64 * h;
                off[a] = y[a] - x[a];
            }
            if space.norm_unchecked(&off) <= rho && field.contains(&y) {
                sup = sup.max(dev(&y, &mut fv, &mut lv));
            }
        }
    }
    (lq, sup)
}

/// Least-squares affine fit to `F` on `x + ρB` at the rule nodes.
fn least_squares_fit(field: &GridField, x: &[f64], rho: f64, rule: &BallRule) -> Option<AffineMap> {
    let n = x.len();
    let m = field.dim_out();
    let k = rule.len();
    let mut a = DMatrix::zeros(k, n + 1);
    let mut b = DMatrix::zeros(k, m);
    let mut y = vec![0.0; n];
    let mut fv = vec![0.0; m];
    for (i, (z, w)) in rule.points.iter().zip(&rule.weights).enumerate() {
        let sw = w.sqrt();
        a[(i, 0)] = sw;
        for j in 0..n {
            y[j] = x[j] + rho * z[j];
            a[(i, j + 1)] = sw * rho * z[j];
        }
        field.interpolate(&y, &mut fv);
        for c in 0..m {
            b[(i, c)] = sw * fv[c];
        }
    }
    let sol = a.svd(true, true).solve(&b, 1e-12).ok()?;
    let value = (0..m).map(|c| sol[(0, c)]).collect();
    let mut linear = vec![0.0; m * n];
    for c in 0..m {
        for j in 0..n {
            linear[c * n + j] = sol[(j + 1, c)];
        }
    }
    Some(AffineMap {
        base_point: x.to_vec(),
        value,
        linear,
    })
}

/// `(9Kn)^q / |log r|`.
pub fn local_bound(k: f64, n: usize, q: f64, r: f64) -> f64 {
    (9.0 * k * n as f64).powf(q) / r.ln().abs()
}

/// Everything the local scans share.
struct LocalSetup {
    field: GridField,
    spec: Spectrum,
    gamma: f64,
    top: f64,
    k: f64,
    rule: BallRule,
    x_points: Vec<Vec<f64>>,
}

fn local_setup(f: &GridField, cfg: &DorroConfig) -> Result<LocalSetup> {
    let n = f.dim_in();
    if cfg.space.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: cfg.space.dim(),
        });
    }
    if !(cfg.q >= 2.0) {
        return Err(Error::param("q must be >= 2"));
    }
    let i = invariant_i_q(&cfg.space, cfg.q, cfg.invariant_samples, cfg.seed)?.value;
    let m = invariant_m_p(&cfg.space, 1.0, cfg.invariant_samples, cfg.seed)?.value;
    let k = carleson_constant_from(n, i * m, cfg.martingale_constant, cfg.kappa)?;
    let top = local_top_radius(n, i * m, LOCAL_RADIUS_CONSTANT)?;
    let ext = extend_to_global(f, &cfg.space, cfg.target)?;
    let gamma = match cfg.gamma {
        GammaChoice::Fixed(g) => g,
        GammaChoice::Space => i / ((n as f64).sqrt() * m),
        GammaChoice::Auto => optimal_gamma(&ext.field, cfg)?,
    };
    if gamma * top * top > max_heat_time(&ext.field) {
        return Err(Error::inadmissible(format!(
            "heat time γT² = {:.6e} outside the admissible range [0, {:.6e}]",
            gamma * top * top,
            max_heat_time(&ext.field)
        )));
    }
    let rule = BallRule::new(&cfg.space, cfg.ball_samples, cfg.seed)?;
    let x_points = ball_grid_points(&ext.field, &cfg.space, 1.0 - 1.0 / (2.0 * n as f64), cfg.x_stride);
    if x_points.is_empty() {
        return Err(Error::inadmissible("no grid point in (1 − 1/2n)B_X"));
    }
    let spec = Spectrum::new(&ext.field);
    Ok(LocalSetup {
        field: ext.field,
        spec,
        gamma,
        top,
        k,
        rule,
        x_points,
    })
}

/// Heat-Taylor candidates at radius `ρ` for every scan point.
fn candidates(s: &LocalSetup, rho: f64) -> Result<Vec<AffineMap>> {
    let ev = s.spec.evolute(crate::heat::SemigroupKind::Heat, s.gamma * rho * rho)?;
    s.x_points.iter().map(|x| ev.taylor_at(x)).collect()
}

/// `⨍_r^T ⨍_{(1−1/2n)B_X} min_Λ ⨍_{x+ρB_X} ‖f − Λ‖^q / ρ^q dx dρ/ρ` with the
/// heat-Taylor candidate (and optionally a least-squares one), against
/// `(9Kn)^q / |log r|`.
pub fn local_functional(f: &GridField, cfg: &DorroConfig, r: f64) -> Result<FunctionalReport> {
    local_functional_with(f, cfg, r, |_, _| None)
}

/// As [`local_functional`], also offering `extra(x, ρ)` as a candidate; the
/// inner term is the least error over the admissible candidates.
pub fn local_functional_with(
    f: &GridField,
    cfg: &DorroConfig,
    r: f64,
    extra: impl Fn(&[f64], f64) -> Option<AffineMap> + Sync,
) -> Result<FunctionalReport> {
    let s = local_setup(f, cfg)?;
    if !(r > 0.0) || r > s.top * s.top {
        return Err(Error::param(format!("r = {r} must lie in (0, T²] with T = {}", s.top)));
    }
    let points = match cfg.scale_grid {
        Some(g) => g.points,
        None => ((s.top / r).log10() * cfg.per_decade as f64).ceil().max(16.0) as usize,
    };
    let grid = ScaleGrid::new(r, s.top, points)?;
    let q = cfg.q;
    let lip_seed = cfg.seed;
    let rows: Vec<Result<(f64, f64, usize)>> = grid
        .times()
        .par_iter()
        .map(|&rho| {
            let cands = candidates(&s, rho)?;
            let mut terms = Vec::with_capacity(cands.len());
            let mut max_lip = 0.0f64;
            let mut ls_wins = 0usize;
            for (x, lam) in s.x_points.iter().zip(&cands) {
                max_lip = max_lip.max(affine_lip(lam, &cfg.space, cfg.target, 256, lip_seed)?);
                let mut best = ball_errors(&s.field, lam, x, rho, &s.rule, &cfg.space, q, cfg.target, false).0;
                let mut others: Vec<AffineMap> = extra(x, rho).into_iter().collect();
                if cfg.least_squares {
                    if let Some(ls) = least_squares_fit(&s.field, x, rho, &s.rule) {
                        others.push(ls);
                    }
                }
                for (i, c) in others.iter().enumerate() {
                    if affine_lip(c, &cfg.space, cfg.target, 256, lip_seed)? <= 2.0 {
                        let e = ball_errors(&s.field, c, x, rho, &s.rule, &cfg.space, q, cfg.target, false).0;
                        if e < best {
                            best = e;
                            if cfg.least_squares && i + 1 == others.len() {
                                ls_wins += 1;
                            }
                        }
                    }
                }
                terms.push((best / rho).powf(q));
            }
            Ok((pairwise_sum(&terms) / terms.len() as f64, max_lip, ls_wins))
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let g: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let max_lip = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let ls_wins: usize = rows.iter().map(|r| r.2).sum();
    // average against dρ/ρ over [r, T]
    let dv = grid.log_step();
    let last = g.len() - 1;
    let w: Vec<f64> = g
        .iter()
        .enumerate()
        .map(|(i, v)| if i == 0 || i == last { 0.5 * v * dv } else { v * dv })
        .collect();
    let span = (s.top / r).ln();
    let value = pairwise_sum(&w) / span;
    // trapezoid on every other node over the same span
    let even = last - last % 2;
    let trap = |step: usize| -> f64 {
        let h = dv * step as f64;
        let t: Vec<f64> = (0..=even)
            .step_by(step)
            .map(|i| if i == 0 || i == even { 0.5 * g[i] * h } else { g[i] * h })
            .collect();
        pairwise_sum(&t)
    };
    let err = if even >= 2 { (trap(1) - trap(2)).abs() / 3.0 / span } else { 0.0 };
    let bound = local_bound(s.k, f.dim_in(), q, r);
    let mut details = std::collections::BTreeMap::new();
    details.insert("top_radius".into(), s.top);
    details.insert("r".into(), r);
    details.insert("gamma".into(), s.gamma);
    details.insert("K".into(), s.k);
    details.insert("max_candidate_lip".into(), max_lip);
    details.insert("x_points".into(), s.x_points.len() as f64);
    if cfg.least_squares {
        details.insert("least_squares_wins".into(), ls_wins as f64);
    }
    Ok(FunctionalReport {
        functional: "local".into(),
        value,
        discretization_error_estimate: err,
        scale_grid: grid,
        bound_value: Some(bound),
        ratio: Some(value / bound),
        details,
        per_scale: grid.times().into_iter().zip(g).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApproximationResult {
    pub x: Vec<f64>,
    pub rho: f64,
    pub lambda: AffineMap,
    /// `(⨍_{x+ρB} ‖f − Λ‖^q)^{1/q} / ρ`.
    pub lq_error: f64,
    /// `sup_{x+ρB} ‖f − Λ‖ / ρ`.
    pub linf_error: f64,
    pub lip_of_lambda: f64,
    /// Whether `linf_error ≤ ε` was reached.
    pub hit: bool,
    /// `max linf_error / lq_error^{q/(n+q)}` over every scanned cell.
    pub upgrade_constant: f64,
    pub scanned_cells: usize,
}

/// Scans radii from `T` down to `4h` and the points of `(1 − 1/2n)B_X`, and
/// returns the first (largest-ρ) heat-Taylor candidate with `linf_error ≤ ε`
/// and Lipschitz constant at most 2, or else the best one seen.
pub fn affine_search(f: &GridField, epsilon: f64, cfg: &DorroConfig) -> Result<ApproximationResult> {
    if !(epsilon > 0.0 && epsilon <= 0.5) {
        return Err(Error::param(format!("ε = {epsilon} must lie in (0, 1/2]")));
    }
    let s = local_setup(f, cfg)?;
    let n = f.dim_in();
    let floor = 4.0 * f.spacing();
    if s.top < floor {
        return Err(Error::inadmissible(format!(
            "unresolved scale: top radius {:.4e} below 4h = {floor:.4e}",
            s.top
        )));
    }
    let points = (((s.top / floor).log10() * cfg.per_decade as f64).ceil() as usize + 1).max(2);
    let step = (s.top / floor).ln() / (points - 1) as f64;
    let q = cfg.q;
    let expo = q / (n as f64 + q);
    let mut best: Option<ApproximationResult> = None;
    let mut upgrade = 0.0f64;
    let mut scanned = 0usize;
    for j in 0..points {
        let rho = s.top * (-(j as f64) * step).exp();
        let cands = candidates(&s, rho)?;
        let cells: Vec<Result<(f64, f64, f64)>> = s
            .x_points
            .par_iter()
            .zip(cands.par_iter())
            .map(|(x, lam)| {
                let lip = affine_lip(lam, &cfg.space, cfg.target, 256, cfg.seed)?;
                let (lq, sup) = ball_errors(&s.field, lam, x, rho, &s.rule, &cfg.space, q, cfg.target, true);
                Ok((lq / rho, sup / rho, lip))
            })
            .collect();
        let cells = cells.into_iter().collect::<Result<Vec<_>>>()?;
        scanned += cells.len();
        for &(lq, sup, _) in &cells {
            if lq > 0.0 {
                upgrade = upgrade.max(sup / lq.powf(expo));
            }
        }
        let make = |i: usize, hit: bool| ApproximationResult {
            x: s.x_points[i].clone(),
            rho,
            lambda: cands[i].clone(),
            lq_error: cells[i].0,
            linf_error: cells[i].1,
            lip_of_lambda: cells[i].2,
            hit,
            upgrade_constant: 0.0,
            scanned_cells: 0,
        };
        // among the hits at the largest radius, the closest fit
        let hit = (0..cells.len())
            .filter(|&i| cells[i].1 <= epsilon && cells[i].2 <= 2.0)
            .min_by(|&a, &b| cells[a].1.total_cmp(&cells[b].1));
        if let Some(i) = hit {
            let mut r = make(i, true);
            r.upgrade_constant = upgrade;
            r.scanned_cells = scanned;
            return Ok(r);
        }
        let mut order: Vec<usize> = (0..cells.len()).filter(|&i| cells[i].2 <= 2.0).collect();
        order.sort_by(|&a, &b| cells[a].1.total_cmp(&cells[b].1));
        if let Some(&i) = order.first() {
            if best.as_ref().is_none_or(|b| cells[i].1 < b.linf_error) {
                best = Some(make(i, false));
            }
        }
    }
    let mut r = best.ok_or_else(|| Error::Invariant("no candidate with Lipschitz constant <= 2".into()))?;
    r.upgrade_constant = upgrade;
    r.scanned_cells = scanned;
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CandidateLipScan {
    pub points: usize,
    pub checks: usize,
    pub violations: usize,
    pub max_lip: f64,
    pub field_lipschitz: f64,
    pub threshold_constant: f64,
}

/// For every point of a `lattice^n` grid in the open unit ball and `scales`
/// heat times log-spaced in `[1e−3, 1]` times the small-time threshold at that
/// point, measures the Lipschitz constant of the heat-Taylor candidate.
pub fn candidate_lip_scan(
    field: &GridField,
    space: &NormedSpace,
    target: TargetNorm,
    lattice: usize,
    scales: usize,
    c: f64,
    seed: u64,
) -> Result<CandidateLipScan> {
    let n = field.dim_in();
    if space.dim() != n || lattice == 0 || scales < 2 {
        return Err(Error::param("need a matching space, a lattice and at least two scales"));
    }
    let lip = lipschitz_constant(field, space, target)?.max(1.0);
    let m1 = invariant_m_p(space, 1.0, 200_000, seed)?.value;
    let b = invariant_b(space, 64, seed).value;
    // lattice points grouped by their threshold
    let mut groups: Vec<(u64, f64, Vec<Vec<f64>>)> = Vec::new();
    let total = lattice.pow(n as u32);
    for code in 0..total {
        let mut k = code;
        let x: Vec<f64> = (0..n)
            .map(|_| {
                let v = (2.0 * (k % lattice) as f64 + 1.0) / lattice as f64 - 1.0;
                k /= lattice;
                v
            })
            .collect();
        let r = space.norm_unchecked(&x);
        if r >= 1.0 {
            continue;
        }
        let thr = evolute_lip_threshold_with(m1, b, n, r, lip, c)?;
        match groups.iter_mut().find(|g| g.0 == thr.to_bits()) {
            Some(g) => g.2.push(x),
            None => groups.push((thr.to_bits(), thr, vec![x])),
        }
    }
    let max_t = max_heat_time(field);
    let spec = Spectrum::new(field);
    let m = field.dim_out();
    let jobs: Vec<(f64, usize)> = (0..groups.len())
        .flat_map(|g| (0..scales).map(move |j| (g, j)))
        .map(|(g, j)| (groups[g].1 * 10f64.powf(-3.0 + 3.0 * j as f64 / (scales - 1) as f64), g))
        .collect();
    let results: Vec<Result<(usize, usize, f64)>> = jobs
        .par_iter()
        .map(|&(t, g)| {
            if t > max_t {
                return Err(Error::inadmissible(format!("heat time {t:.4e} above {max_t:.4e}")));
            }
            let grad = spec.gradient_radial(|s| (-t * s).exp());
            let mut worst = 0.0f64;
            let mut bad = 0;
            for x in &groups[g].2 {
                let mut linear = vec![0.0; m * n];
                grad.interpolate(x, &mut linear);
                let map = AffineMap {
                    base_point: x.clone(),
                    value: vec![0.0; m],
                    linear,
                };
                let l = affine_lip(&map, space, target, 256, seed)?;
                worst = worst.max(l);
                if l > 2.0 {
                    bad += 1;
                }
            }
            Ok((groups[g].2.len(), bad, worst))
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(CandidateLipScan {
        points: groups.iter().map(|g| g.2.len()).sum(),
        checks: results.iter().map(|r| r.0).sum(),
        violations: results.iter().map(|r| r.1).sum(),
        max_lip: results.iter().map(|r| r.2).fold(0.0, f64::max),
        field_lipschitz: lip,
        threshold_constant: c,
    })
}

/// Right-hand side of the Hilbert identity as a bound in a report, for
/// closing the loop with the spectral side.
pub fn with_bound(mut report: FunctionalReport, bound: f64) -> FunctionalReport {
    report.bound_value = Some(bound);
    report.ratio = (bound > 0.0).then(|| report.value / bound);
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{make_field, GridBox, TestFunctionSpec};

    fn bump1(s: f64, res: usize, half: f64) -> GridField {
        make_field(
            &TestFunctionSpec::GaussianBump {
                center: Some(vec![0.0]),
                s,
                amplitudes: vec![1.0],
            },
            GridBox::symmetric(1, half),
            res,
        )
        .unwrap()
    }

    fn cfg1(gamma: f64) -> DorroConfig {
        DorroConfig {
            gamma: GammaChoice::Fixed(gamma),
            ..DorroConfig::new(NormedSpace::euclidean(1), 2.0)
        }
    }

    #[test]
    fn ball_rules_integrate_moments() {
        // ⨍_{B} |x|² over disc, square, diamond and interval
        let cases: Vec<(NormedSpace, f64)> = vec![
            (NormedSpace::euclidean(1), 1.0 / 3.0),
            (NormedSpace::euclidean(2), 0.5),
            (NormedSpace::lp(2, f64::INFINITY).unwrap(), 2.0 / 3.0),
            (NormedSpace::lp(2, 1.0).unwrap(), 1.0 / 3.0),
            (NormedSpace::lp(3, f64::INFINITY).unwrap(), 1.0),
        ];
        for (sp, want) in cases {
            let rule = BallRule::new(&sp, 256, 1).unwrap();
            assert!(rule.deterministic);
            let got = rule.average(|x| x.iter().map(|v| v * v).sum());
            assert!((got - want).abs() < 1e-12, "{sp:?}: {got} {want}");
            assert!(rule.points.iter().all(|p| sp.norm_unchecked(p) <= 1.0 + 1e-12));
        }
        let sampled = BallRule::new(&NormedSpace::lp(3, 1.5).unwrap(), 64, 3).unwrap();
        assert!(!sampled.deterministic && sampled.len() == 64);
    }

    #[test]
    fn parseval_path_matches_physical_path() {
        let f = bump1(0.05, 256, 4.0);
        let a = carleson_value(&f, &cfg1(1.0)).unwrap();
        let c = cfg1(1.0);
        let prep_phys = {
            let mut p = Prepared::new(&f, &c);
            p.parseval = false;
            p
        };
        let rule = BallRule::new(&c.space, c.ball_samples, 0).unwrap();
        let grid = c.radii(&f, 1.0).unwrap();
        let prep = Prepared::new(&f, &c);
        for &t in grid.times().iter().step_by(17) {
            let u = prep.ball_average(Part::Total, t, 1.0, &rule, &c);
            let v = prep_phys.ball_average(Part::Total, t, 1.0, &rule, &c);
            assert!((u - v).abs() <= 1e-9 * u.abs().max(1e-30), "t={t}: {u} {v}");
        }
        assert!(a.value > 0.0);
    }

    #[test]
    fn affine_plateau_vanishes() {
        let f = make_field(
            &TestFunctionSpec::CoordinateAffine {
                value: vec![0.3],
                slope: vec![vec![0.8]],
                plateau: 4.0,
                taper: 3.0,
            },
            GridBox::symmetric(1, 16.0),
            1024,
        )
        .unwrap();
        // radii small enough that every ball and kernel stays on the plateau
        let mut c = cfg1(1.0);
        c.scale_grid = Some(ScaleGrid::new(0.05, 0.3, 24).unwrap());
        let prep = Prepared::new(&f, &c);
        let rule = BallRule::new(&c.space, c.ball_samples, 0).unwrap();
        // the Fourier sums cover the whole torus, so check a local physical residual instead
        let ev = prep.spec.evolute(crate::heat::SemigroupKind::Heat, 0.09).unwrap();
        let lam = ev.taylor_at(&[0.5]).unwrap();
        let (lq, sup) = ball_errors(&f, &lam, &[0.5], 0.3, &rule, &c.space, 2.0, c.target, true);
        assert!(lq < 1e-8 && sup < 1e-8, "{lq} {sup}");
    }

    #[test]
    fn smoothing_part_matches_closed_form() {
        let f = bump1(0.25, 1024, 8.0);
        let g = 0.7;
        let split = j_split(&f, &cfg1(g)).unwrap();
        let fp = crate::spectral::gradient_energy(&f);
        let want = (g * 2f64.ln()).sqrt() * fp;
        assert!((split.j2 / want - 1.0).abs() < 0.02, "{} {}", split.j2, want);
        assert!(split.triangle_holds);
        assert!(split.total <= (split.j1 + split.j2) * (1.0 + 1e-6));
    }

    #[test]
    fn dilation_scaling() {
        let f = bump1(0.2, 1024, 8.0);
        let c = cfg1(1.0);
        let base = carleson_value(&f, &c).unwrap().value;
        for lam in [2.0, 4.0] {
            let g = make_field(
                &TestFunctionSpec::Dilated {
                    inner: Box::new(TestFunctionSpec::GaussianBump {
                        center: Some(vec![0.0]),
                        s: 0.2,
                        amplitudes: vec![1.0],
                    }),
                    lambda: lam,
                },
                GridBox::symmetric(1, 8.0),
                1024,
            )
            .unwrap();
            let v = carleson_value(&g, &c).unwrap().value;
            let ratio = v / (lam.powf(-0.5) * base);
            assert!((ratio - 1.0).abs() < 0.02, "λ={lam}: {ratio}");
        }
    }

    #[test]
    fn gamma_choices() {
        let f = bump1(0.05, 256, 4.0);
        let c = cfg1(1.0);
        let g = optimal_gamma(&f, &c).unwrap();
        assert!((g - 0.2f64.sqrt()).abs() < 1e-10, "{g}");
        let mut scaled = f.clone();
        let v: Vec<f64> = f.values().iter().map(|x| 3.0 * x).collect();
        scaled = scaled.with_values(1, v).unwrap();
        assert!((optimal_gamma(&scaled, &c).unwrap() - g).abs() < 1e-12);
        let zero = f.with_values(1, vec![0.0; f.num_points()]).unwrap();
        assert!(optimal_gamma(&zero, &c).is_err());
        // ‖x‖_X on a disc: the cutoff moments give (⨍|x|^q ‖x‖^q)^{1/q}/(√n M) <= I_q/(√n M)
        let sp = NormedSpace::euclidean(2);
        let sg = space_gamma(2.0, &sp, 1000, 0).unwrap();
        assert!((sg - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_formula() {
        for n in 1..=5 {
            let sp = NormedSpace::euclidean(n);
            let k = carleson_constant(2.0, &sp, 1.0, 1.0, 1000, 0).unwrap();
            let nf = n as f64;
            let want = nf.powf(0.25) * (nf / (nf + 2.0)).powf(0.25);
            assert!((k - want).abs() < 1e-12);
            assert!(carleson_constant(2.0, &sp, 1.0, 2.0, 1000, 0).unwrap() > k);
        }
        assert!(carleson_constant_from(1, 0.3, 1.0, 1.0).is_err());
        assert!(local_top_radius(2, 0.5f64.sqrt(), 0.25).unwrap() <= 0.25);
    }

    fn half_norm_disc(res: usize) -> GridField {
        make_field(
            &TestFunctionSpec::BallExtension {
                inner: Box::new(TestFunctionSpec::NormValue {
                    space: None,
                    amplitudes: vec![0.5],
                }),
                space: None,
            },
            GridBox::symmetric(2, 3.0),
            res,
        )
        .unwrap()
    }

    #[test]
    fn extension_properties() {
        let sp = NormedSpace::euclidean(2);
        let f = half_norm_disc(128);
        let ext = extend_to_global(&f, &sp, TargetNorm::euclidean()).unwrap();
        // the input already is the extension of ½‖x‖, up to interpolation at the sphere
        let gap = f
            .values()
            .iter()
            .zip(ext.field.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(gap <= 2.0 * f.spacing(), "{gap}");
        assert!(ext.support_ok && ext.support_radius <= 1.5 * (1.0 + GRID_SLACK));
        assert!(ext.lipschitz_ok, "{}", ext.lipschitz);
        let zero = f.with_values(1, vec![0.0; f.num_points()]).unwrap();
        let z = extend_to_global(&zero, &sp, TargetNorm::euclidean()).unwrap();
        assert!(z.field.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn local_functional_on_affine_is_small() {
        let sp = NormedSpace::euclidean(1);
        let f = make_field(
            &TestFunctionSpec::CoordinateAffine {
                value: vec![0.0],
                slope: vec![vec![1.0]],
                plateau: 1.5,
                taper: 1.0,
            },
            GridBox::symmetric(1, 4.0),
            1024,
        )
        .unwrap();
        let mut c = DorroConfig::new(sp, 2.0);
        c.per_decade = 8;
        let top = local_top_radius(1, (1.0f64 / 3.0).sqrt(), LOCAL_RADIUS_CONSTANT).unwrap();
        let r = 0.5 * top * top;
        let rep = local_functional(&f, &c, r).unwrap();
        assert!(rep.value < 1e-3, "{rep:?}");
        assert!(rep.details["max_candidate_lip"] <= 2.0);
        assert!(local_functional(&f, &c, 2.0 * top * top).is_err());
        // supplying the exact map can only lower the inner term
        let exact = local_functional_with(&f, &c, r, |x, _| {
            Some(AffineMap {
                base_point: x.to_vec(),
                value: vec![x[0]],
                linear: vec![1.0],
            })
        })
        .unwrap();
        assert!(exact.value <= rep.value);
    }

    #[test]
    fn affine_search_hits() {
        let sp = NormedSpace::euclidean(1);
        let mut c = DorroConfig::new(sp, 2.0);
        c.per_decade = 8;
        c.x_stride = 8;
        let f = make_field(
            &TestFunctionSpec::CoordinateAffine {
                value: vec![0.0],
                slope: vec![vec![1.0]],
                plateau: 1.5,
                taper: 1.0,
            },
            GridBox::symmetric(1, 4.0),
            1024,
        )
        .unwrap();
        let a = affine_search(&f, 0.25, &c).unwrap();
        let top = local_top_radius(1, (1.0f64 / 3.0).sqrt(), LOCAL_RADIUS_CONSTANT).unwrap();
        assert!(a.hit && (a.rho - top).abs() < 1e-12);
        assert!(a.linf_error < 0.05 && a.lq_error <= a.linf_error + GRID_SLACK);
        assert!(affine_search(&f, 0.7, &c).is_err());
    }
}
