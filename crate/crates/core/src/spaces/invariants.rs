//! Sphere and ball averages of a norm, extremal values, volumes and the
//! isotropic constant.

use super::sampling::{draw_gaussian, draw_sphere, BallSampler};
use super::{
    euclidean_ball_volume, lp_ball_coordinate_moment, lp_ball_volume, lp_max_on_sphere,
    lp_min_on_sphere, NormKind, NormedSpace,
};
use crate::error::{Error, Result};
use crate::rng::{self, tags, BATCH};
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateMethod {
    ClosedForm,
    MonteCarlo,
    Quadrature,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantEstimate {
    pub value: f64,
    pub std_error: f64,
    pub method: EstimateMethod,
    pub samples: usize,
    pub seed: u64,
}

impl InvariantEstimate {
    pub fn exact(value: f64, seed: u64) -> Self {
        InvariantEstimate {
            value,
            std_error: 0.0,
            method: EstimateMethod::ClosedForm,
            samples: 0,
            seed,
        }
    }
}

/// Width of the band `[1/C, C]` accepted for the moment-comparison ratio.
pub const LMS_BAND: f64 = 5.0;

/// Sphere points used by the dense search for the sup of the norm.
pub const DENSE_SPHERE_SAMPLES: usize = 1_000_000;

fn unit_vector_norm(space: &NormedSpace) -> f64 {
    space.norm_unchecked(&[1.0])
}

/// Mean of `‖σ‖_X^p` over the sphere with its standard error.
fn sphere_power_mean(space: &NormedSpace, p: f64, count: usize, seed: u64, tag: u64) -> (f64, f64) {
    let n = space.dim();
    let mc = rng::monte_carlo(count, seed, tag, 1, |r, out| {
        let mut s = [0.0f64; 64];
        let s = &mut s[..n.min(64)];
        if n <= 64 {
            draw_sphere(r, s);
            out[0] = space.norm_unchecked(s).powf(p);
        } else {
            let mut v = vec![0.0; n];
            draw_sphere(r, &mut v);
            out[0] = space.norm_unchecked(&v).powf(p);
        }
    });
    (mc.mean[0], mc.std_error[0])
}

/// `M_p(X) = (⨍_{S^{n-1}} ‖σ‖^p dσ)^{1/p}`; `p = ∞` gives `b(X)`.
pub fn invariant_m_p(space: &NormedSpace, p: f64, count: usize, seed: u64) -> Result<InvariantEstimate> {
    if p.is_infinite() {
        return Ok(invariant_b(space, 64, seed));
    }
    if !(p >= 1.0) {
        return Err(Error::param(format!("M_p needs p >= 1, got {p}")));
    }
    if space.dim() == 1 {
        return Ok(InvariantEstimate::exact(unit_vector_norm(space), seed));
    }
    if let Some(c) = space.is_euclidean_multiple() {
        return Ok(InvariantEstimate::exact(c, seed));
    }
    if count == 0 {
        return Err(Error::param("sample count must be positive"));
    }
    let (m, se) = sphere_power_mean(space, p, count, seed, tags::SPHERE);
    let value = m.powf(1.0 / p);
    Ok(InvariantEstimate {
        value,
        std_error: se / (p * m.powf(1.0 - 1.0 / p)),
        method: EstimateMethod::MonteCarlo,
        samples: count,
        seed,
    })
}

/// `I_q(X) = (⨍_{B_X} |x|^q dx)^{1/q}`; `q = ∞` gives the circumradius.
pub fn invariant_i_q(space: &NormedSpace, q: f64, count: usize, seed: u64) -> Result<InvariantEstimate> {
    if !(q > 0.0) {
        return Err(Error::param(format!("I_q needs q > 0, got {q}")));
    }
    let n = space.dim() as f64;
    if q.is_infinite() {
        return Ok(match space.circumradius_exact() {
            Some(r) => InvariantEstimate::exact(r, seed),
            None => {
                let (v, evals) = sphere_extreme(space, false, 64, seed);
                InvariantEstimate {
                    value: 1.0 / v,
                    std_error: 0.0,
                    method: EstimateMethod::MonteCarlo,
                    samples: evals,
                    seed,
                }
            }
        });
    }
    if space.dim() == 1 {
        let r = 1.0 / unit_vector_norm(space);
        return Ok(InvariantEstimate::exact(r * (1.0 / (1.0 + q)).powf(1.0 / q), seed));
    }
    if let Some(c) = space.is_euclidean_multiple() {
        return Ok(InvariantEstimate::exact((n / (n + q)).powf(1.0 / q) / c, seed));
    }
    if count == 0 {
        return Err(Error::param("sample count must be positive"));
    }
    let sampler = BallSampler::new(space, seed)?;
    let dim = space.dim();
    let mc = rng::monte_carlo(count, seed, tags::BALL, 1, |r, out| {
        let mut y = vec![0.0; dim];
        sampler.draw(r, &mut y);
        out[0] = y.iter().map(|v| v * v).sum::<f64>().powf(q / 2.0);
    });
    let m = mc.mean[0];
    Ok(InvariantEstimate {
        value: m.powf(1.0 / q),
        std_error: mc.std_error[0] / (q * m.powf(1.0 - 1.0 / q)),
        method: EstimateMethod::MonteCarlo,
        samples: count,
        seed,
    })
}

/// `b(X) = sup_{σ ∈ S^{n-1}} ‖σ‖_X`.
pub fn invariant_b(space: &NormedSpace, starts: usize, seed: u64) -> InvariantEstimate {
    if space.dim() == 1 {
        return InvariantEstimate::exact(unit_vector_norm(space), seed);
    }
    if let (Some(lam), Some(p), Some(w)) = (space.scalar_scale(), space.lp_exponent(), space.weights()) {
        return InvariantEstimate::exact(lp_max_on_sphere(p, &w) / lam, seed);
    }
    if let NormKind::Polytope { facets } = space.kind() {
        // ‖σ‖ = max_k |(S⁻ᵀ a_k)·σ|
        let n = space.dim();
        let s_inv = space
            .euclid_scale()
            .try_inverse()
            .expect("scale is invertible by construction");
        let v = facets
            .iter()
            .map(|a| {
                (0..n)
                    .map(|j| (0..n).map(|i| s_inv[(i, j)] * a[i]).sum::<f64>().powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        return InvariantEstimate::exact(v, seed);
    }
    let (v, evals) = sphere_extreme(space, true, starts, seed);
    InvariantEstimate {
        value: v,
        std_error: 0.0,
        method: EstimateMethod::MonteCarlo,
        samples: evals,
        seed,
    }
}

/// Maximum (or minimum) of the norm over the Euclidean sphere by multi-start
/// projected ascent with step halving, plus dense sampling for `n <= 4`.
/// Returns the extremal value and the number of evaluations.
pub fn sphere_extreme(space: &NormedSpace, maximize: bool, starts: usize, seed: u64) -> (f64, usize) {
    let n = space.dim();
    let sign = if maximize { 1.0 } else { -1.0 };
    let f = |x: &[f64]| sign * space.norm_unchecked(x);
    let starts_pts: Vec<Vec<f64>> = rng::draw(starts.max(1), seed, tags::ASCENT, |r| {
        let mut v = vec![0.0; n];
        draw_sphere(r, &mut v);
        v
    });
    let results: Vec<(f64, usize)> = starts_pts
        .into_par_iter()
        .map(|x0| local_ascent(&f, x0))
        .collect();
    let mut best = results.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    let mut evals: usize = results.iter().map(|r| r.1).sum();
    if n <= 4 {
        let batches = DENSE_SPHERE_SAMPLES.div_ceil(BATCH);
        let dense = (0..batches)
            .into_par_iter()
            .map(|b| {
                let mut r = rng::stream(seed, tags::SPACES_SCAN, b as u64);
                let mut v = vec![0.0; n];
                let mut m = f64::NEG_INFINITY;
                for _ in 0..BATCH.min(DENSE_SPHERE_SAMPLES - b * BATCH) {
                    draw_sphere(&mut r, &mut v);
                    m = m.max(f(&v));
                }
                m
            })
            .reduce(|| f64::NEG_INFINITY, f64::max);
        best = best.max(dense);
        evals += DENSE_SPHERE_SAMPLES;
    }
    (sign * best, evals)
}

pub(crate) fn local_ascent(f: &impl Fn(&[f64]) -> f64, mut x: Vec<f64>) -> (f64, usize) {
    let n = x.len();
    let mut fx = f(&x);
    let mut evals = 1;
    let mut step = 0.25;
    let h = 1e-7;
    let mut probe = vec![0.0; n];
    let mut g = vec![0.0; n];
    for _ in 0..5000 {
        for i in 0..n {
            probe.copy_from_slice(&x);
            probe[i] += h;
            let up = f(&probe);
            probe[i] -= 2.0 * h;
            let down = f(&probe);
            g[i] = (up - down) / (2.0 * h);
        }
        evals += 2 * n;
        let radial: f64 = g.iter().zip(&x).map(|(a, b)| a * b).sum();
        for (gi, xi) in g.iter_mut().zip(&x) {
            *gi -= radial * xi;
        }
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn < 1e-10 {
            break;
        }
        let mut moved = false;
        while step > 1e-12 {
            for i in 0..n {
                probe[i] = x[i] + step * g[i] / gn;
            }
            let r = probe.iter().map(|v| v * v).sum::<f64>().sqrt();
            probe.iter_mut().for_each(|v| *v /= r);
            let fc = f(&probe);
            evals += 1;
            if fc > fx {
                x.copy_from_slice(&probe);
                fx = fc;
                step *= 1.5;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    (fx, evals)
}

/// Volume of `B_X` in Euclidean coordinates.
pub fn volume(space: &NormedSpace, count: usize, seed: u64) -> Result<InvariantEstimate> {
    if let Some(v) = space.volume_exact() {
        return Ok(InvariantEstimate::exact(v, seed));
    }
    let n = space.dim();
    let radius = space
        .circumradius_exact()
        .ok_or_else(|| Error::param("volume needs a circumradius"))?;
    let mc = rng::monte_carlo(count, seed, tags::VOLUME, 1, |r, out| {
        let mut y = vec![0.0; n];
        draw_sphere(r, &mut y);
        let rad = radius * rand::Rng::random::<f64>(r).powf(1.0 / n as f64);
        y.iter_mut().for_each(|v| *v *= rad);
        out[0] = if space.norm_unchecked(&y) <= 1.0 { 1.0 } else { 0.0 };
    });
    let outer = euclidean_ball_volume(n) * radius.powi(n as i32);
    Ok(InvariantEstimate {
        value: mc.mean[0] * outer,
        std_error: mc.std_error[0] * outer,
        method: EstimateMethod::MonteCarlo,
        samples: count,
        seed,
    })
}

/// `2^{p/2} Γ((n+p)/2) / Γ(n/2)`, the radial factor relating Gaussian and
/// sphere moments.
pub fn gaussian_radial_factor(n: usize, p: f64) -> f64 {
    let nf = n as f64;
    (0.5 * p * 2f64.ln() + ln_gamma((nf + p) / 2.0) - ln_gamma(nf / 2.0)).exp()
}

#[derive(Debug, Clone, Serialize)]
pub struct GaussianMomentReport {
    pub p: f64,
    /// Direct estimate of `E‖G‖_X^p`.
    pub monte_carlo: InvariantEstimate,
    /// Radial factor times `M_p(X)^p`.
    pub closed_form: f64,
    pub closed_form_std_error: f64,
    pub consistent: bool,
}

pub fn gaussian_norm_moment(
    space: &NormedSpace,
    p: f64,
    count: usize,
    seed: u64,
) -> Result<GaussianMomentReport> {
    if !(p >= 1.0) || p.is_infinite() {
        return Err(Error::param(format!("Gaussian moment needs finite p >= 1, got {p}")));
    }
    let n = space.dim();
    let mc = rng::monte_carlo(count, seed, tags::GAUSS, 1, |r, out| {
        let mut g = vec![0.0; n];
        draw_gaussian(r, &mut g);
        out[0] = space.norm_unchecked(&g).powf(p);
    });
    let factor = gaussian_radial_factor(n, p);
    let (mpp, mpp_se) = if n == 1 {
        (unit_vector_norm(space).powf(p), 0.0)
    } else if let Some(c) = space.is_euclidean_multiple() {
        (c.powf(p), 0.0)
    } else {
        sphere_power_mean(space, p, count, seed, tags::MOMENT_CHECK)
    };
    let closed_form = factor * mpp;
    let closed_form_std_error = factor * mpp_se;
    let combined = (mc.std_error[0].powi(2) + closed_form_std_error.powi(2)).sqrt();
    let consistent = (mc.mean[0] - closed_form).abs() <= 3.0 * combined + 1e-12 * closed_form;
    Ok(GaussianMomentReport {
        p,
        monte_carlo: InvariantEstimate {
            value: mc.mean[0],
            std_error: mc.std_error[0],
            method: EstimateMethod::MonteCarlo,
            samples: count,
            seed,
        },
        closed_form,
        closed_form_std_error,
        consistent,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LmsEntry {
    pub p: f64,
    pub m_p: f64,
    pub m: f64,
    pub b: f64,
    pub ratio: f64,
    pub within_band: bool,
}

/// `M_p / (M + √(p/(n+p)) b)` for each `p`, with the band check `[1/5, 5]`.
pub fn check_lms_ratio(space: &NormedSpace, p_list: &[f64], count: usize, seed: u64) -> Result<Vec<LmsEntry>> {
    let n = space.dim() as f64;
    let m = invariant_m_p(space, 1.0, count, seed)?.value;
    let b = invariant_b(space, 64, seed).value;
    p_list
        .iter()
        .map(|&p| {
            let m_p = invariant_m_p(space, p, count, seed)?.value;
            let ratio = m_p / (m + (p / (n + p)).sqrt() * b);
            Ok(LmsEntry {
                p,
                m_p,
                m,
                b,
                ratio,
                within_band: (1.0 / LMS_BAND..=LMS_BAND).contains(&ratio),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct LowerBoundCheck {
    pub estimate: InvariantEstimate,
    pub bound: f64,
    pub pass: bool,
}

/// `(⨍_{B_U} ‖u‖_V^q du)^{1/q}` against `(n/(n+q))^{1/q} (|B_U|/|B_V|)^{1/n}`.
pub fn uv_moment(u: &NormedSpace, v: &NormedSpace, q: f64, count: usize, seed: u64) -> Result<LowerBoundCheck> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            got: v.dim(),
        });
    }
    if !(q > 0.0) || q.is_infinite() {
        return Err(Error::param("q must be finite and positive"));
    }
    let n = u.dim();
    let nf = n as f64;
    let radial = (nf / (nf + q)).powf(1.0 / q);
    let vu = volume(u, count, seed)?;
    let vv = volume(v, count, seed ^ 0x5151)?;
    let ratio = (vu.value / vv.value).powf(1.0 / nf);
    let bound = radial * ratio;
    let bound_se = bound / nf
        * ((vu.std_error / vu.value).powi(2) + (vv.std_error / vv.value).powi(2)).sqrt();
    let estimate = if u == v {
        InvariantEstimate::exact(radial, seed)
    } else {
        let sampler = BallSampler::new(u, seed)?;
        let mc = rng::monte_carlo(count, seed, tags::BALL, 1, |r, out| {
            let mut y = vec![0.0; n];
            sampler.draw(r, &mut y);
            out[0] = v.norm_unchecked(&y).powf(q);
        });
        let m = mc.mean[0];
        InvariantEstimate {
            value: m.powf(1.0 / q),
            std_error: mc.std_error[0] / (q * m.powf(1.0 - 1.0 / q)),
            method: EstimateMethod::MonteCarlo,
            samples: count,
            seed,
        }
    };
    let slack = 3.0 * (estimate.std_error + bound_se) + 1e-12 * bound;
    Ok(LowerBoundCheck {
        pass: estimate.value >= bound - slack,
        estimate,
        bound,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ProductReport {
    pub i_q: InvariantEstimate,
    pub m_p: InvariantEstimate,
    pub product: f64,
    pub product_std_error: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Checks `I_q(X) M_p(X) >= (n/(n+q))^{1/q}`.
pub fn product_lower_bound(space: &NormedSpace, p: f64, q: f64, count: usize, seed: u64) -> Result<ProductReport> {
    let i_q = invariant_i_q(space, q, count, seed)?;
    let m_p = invariant_m_p(space, p, count, seed)?;
    let nf = space.dim() as f64;
    let bound = (nf / (nf + q)).powf(1.0 / q);
    let product = i_q.value * m_p.value;
    let product_std_error =
        ((m_p.value * i_q.std_error).powi(2) + (i_q.value * m_p.std_error).powi(2)).sqrt();
    let pass = product >= bound * (1.0 - 1e-12) - 3.0 * product_std_error;
    Ok(ProductReport {
        i_q,
        m_p,
        product,
        product_std_error,
        bound,
        pass,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct IsotropicReport {
    #[serde(skip)]
    pub space: NormedSpace,
    pub isotropic_constant: InvariantEstimate,
    pub volume: f64,
    /// Relative spread of `∫_{B_X} (x·θ)² dx` across sampled unit directions.
    pub direction_spread: f64,
    /// Spread allowed by three standard errors.
    pub direction_spread_tolerance: f64,
    pub direction_independent: bool,
    pub preprocessing: Option<String>,
}

/// Directions probed when checking that the second moments are isotropic.
const ISOTROPY_DIRECTIONS: usize = 8;

/// Rescales the Euclidean structure so that `|B_X| = 1` with isotropic second
/// moments, and returns the isotropic constant `L_X`.
pub fn isotropic_normalize(space: &NormedSpace, count: usize, seed: u64) -> Result<IsotropicReport> {
    let n = space.dim();
    let nf = n as f64;
    let (normalized, l_x, preprocessing) = match space.kind() {
        NormKind::Lp { p } | NormKind::WeightedLp { p, .. } => {
            let vol = lp_ball_volume(n, *p);
            let lam = vol.powf(-1.0 / nf);
            let w = space.weights().expect("ℓ_p kinds carry weights");
            let s = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(w)) * lam;
            let out = NormedSpace::new(n, space.kind().clone())?.with_euclid_scale(s)?;
            let l2 = lp_ball_coordinate_moment(n, *p, 2.0) * lam * lam;
            (out, InvariantEstimate::exact(l2.sqrt(), seed), None)
        }
        NormKind::Polytope { .. } => {
            let native = NormedSpace::new(n, space.kind().clone())?;
            let sampler = BallSampler::new(&native, seed)?;
            let k = n + n * n;
            let mc = rng::monte_carlo(count, seed, tags::BALL, k, |r, out| {
                let mut y = vec![0.0; n];
                sampler.draw(r, &mut y);
                out[..n].copy_from_slice(&y);
                for i in 0..n {
                    for j in 0..n {
                        out[n + i * n + j] = y[i] * y[j];
                    }
                }
            });
            let mut cov = DMatrix::from_fn(n, n, |i, j| mc.mean[n + i * n + j] - mc.mean[i] * mc.mean[j]);
            cov = (&cov + cov.transpose()) * 0.5;
            let eig = SymmetricEigen::new(cov);
            let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
            let whiten = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
            let vol = volume(&native, count, seed)?;
            let det_w = whiten.determinant().abs();
            let lam = (det_w * vol.value).powf(-1.0 / nf);
            let s = &whiten * lam;
            let s = (&s + s.transpose()) * 0.5;
            let out = native.with_euclid_scale(s)?;
            let l = lam;
            let est = InvariantEstimate {
                value: l,
                std_error: l / nf * vol.std_error / vol.value,
                method: EstimateMethod::MonteCarlo,
                samples: count,
                seed,
            };
            (out, est, Some("covariance-diagonalization".to_string()))
        }
    };
    let vol = volume(&normalized, count, seed)?;
    // Direction check on fresh samples.
    let dirs: Vec<Vec<f64>> = rng::draw(ISOTROPY_DIRECTIONS, seed, tags::DIRECTIONS, |r| {
        let mut v = vec![0.0; n];
        draw_sphere(r, &mut v);
        v
    });
    let sampler = BallSampler::new(&normalized, seed)?;
    let mc = rng::monte_carlo(count, seed ^ 0x1507, tags::BALL, ISOTROPY_DIRECTIONS, |r, out| {
        let mut y = vec![0.0; n];
        sampler.draw(r, &mut y);
        for (o, d) in out.iter_mut().zip(&dirs) {
            let dot: f64 = y.iter().zip(d).map(|(a, b)| a * b).sum();
            *o = dot * dot;
        }
    });
    let mean = rng::pairwise_sum(&mc.mean) / ISOTROPY_DIRECTIONS as f64;
    let lo = mc.mean.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mc.mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let se = mc.std_error.iter().copied().fold(0.0, f64::max);
    let direction_spread = (hi - lo) / mean;
    // Pairwise differences of correlated estimates: allow 3σ on each end plus
    // the error of the covariance used for whitening.
    let direction_spread_tolerance = 6.0 * se / mean + 6.0 / (count as f64).sqrt();
    Ok(IsotropicReport {
        space: normalized,
        isotropic_constant: l_x,
        volume: vol.value,
        direction_spread,
        direction_spread_tolerance,
        direction_independent: direction_spread <= direction_spread_tolerance,
        preprocessing,
    })
}

/// `min_{|σ|=1} ‖σ‖_X` in closed form for ℓ_p kinds with scalar scale.
pub fn sphere_min_exact(space: &NormedSpace) -> Option<f64> {
    let lam = space.scalar_scale()?;
    Some(lp_min_on_sphere(space.lp_exponent()?, &space.weights()?) / lam)
}
