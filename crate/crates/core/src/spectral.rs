//! Fourier-side constants: the heat-Taylor defect constant `k(n, γ)`, its
//! upper-bound profile, the Hilbert-space identity check and the Poisson
//! divergence scan.

use crate::dorronsoro::{carleson_functional, DorroConfig, GammaChoice};
use crate::error::{Error, Result};
use crate::fields::{GridField, TargetNorm};
use crate::heat::Spectrum;
use crate::quadrature::{gauss_jacobi, gauss_legendre, Rule};
use crate::rng::pairwise_sum;
use crate::spaces::{euclidean_ball_volume, NormKind, NormedSpace};
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// `|e^{iθ} − (1 + iθ) e^{−d}|²`, accurate when `θ` and `d` are small.
pub fn taylor_defect_sq(theta: f64, d: f64) -> f64 {
    let em = (-d).exp_m1();
    let half = (0.5 * theta).sin();
    let re = -2.0 * half * half - em;
    let im = sin_minus_identity(theta) - theta * em;
    re * re + im * im
}

/// `sin θ − θ` without cancellation.
pub fn sin_minus_identity(theta: f64) -> f64 {
    if theta.abs() < 0.1 {
        let t2 = theta * theta;
        -theta * t2 / 6.0 * (1.0 - t2 / 20.0 * (1.0 - t2 / 42.0 * (1.0 - t2 / 72.0)))
    } else {
        theta.sin() - theta
    }
}

/// `|e^{iθ} − 1 − iθ|²`.
pub fn exponential_remainder_sq(theta: f64) -> f64 {
    let half = (0.5 * theta).sin();
    let re = -2.0 * half * half;
    let im = sin_minus_identity(theta);
    re * re + im * im
}

/// `n |B^{n−1}| / |B^n|` from the ball volumes.
pub fn slice_prefactor(n: usize) -> f64 {
    let lower = if n == 1 { 1.0 } else { euclidean_ball_volume(n - 1) };
    n as f64 * lower / euclidean_ball_volume(n)
}

/// `n Γ(n/2 + 1) / (√π Γ((n+1)/2))`, the same constant through Gamma functions.
pub fn gamma_prefactor(n: usize) -> f64 {
    let nf = n as f64;
    nf * (ln_gamma(nf / 2.0 + 1.0) - ln_gamma((nf + 1.0) / 2.0) - 0.5 * std::f64::consts::PI.ln()).exp()
}

/// `∫₋₁¹ (1 − u²)^{(n−1)/2} du`.
pub fn slice_weight_mass(n: usize) -> f64 {
    let a = (n as f64 - 1.0) / 2.0;
    (0.5 * std::f64::consts::PI.ln() + ln_gamma(a + 1.0) - ln_gamma(a + 1.5)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KReport {
    pub n: usize,
    pub gamma: f64,
    pub k_value: f64,
    pub quadrature_error: f64,
    pub bound_rhs: f64,
    pub ratio: f64,
}

/// Largest `k(n,γ) / k_bound_rhs(n,γ)` over `n ≤ 10`, `γ ∈ [1e−3, 1e3]`,
/// measured once on the half-decade scan of [`k_ratio_scan`] and frozen.
pub const K_BOUND_CONSTANT: f64 = 1.4380;

/// Levels of the u-rules: `24 · 2^level` nodes.
const U_LEVELS: usize = 6;

/// Gauss–Jacobi rule with `24 · 2^level` nodes for the weight
/// `(1 − u²)^{(n−1)/2}`, built once per `(n, level)`.
fn jacobi_rule(n: usize, level: usize) -> &'static Rule {
    type Cache = Mutex<HashMap<(usize, usize), &'static Rule>>;
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut guard = cache.lock().expect("rule cache");
    guard.entry((n, level)).or_insert_with(|| {
        let a = (n as f64 - 1.0) / 2.0;
        Box::leak(Box::new(gauss_jacobi(24 << level, a, a)))
    })
}

fn u_rule(n: usize, s: f64, refine: usize) -> &'static Rule {
    // the integrand in u oscillates like cos(su)
    let need = 0.75 * s + 24.0;
    let mut level = 0;
    while level + 1 < U_LEVELS && ((24usize << level) as f64) < need {
        level += 1;
    }
    jacobi_rule(n, (level + refine).min(U_LEVELS - 1))
}

/// Panels of `[0, s_end]`: dyadic below `min(1, s_end)`, width ½ above 1.
fn s_panels(s_end: f64) -> Vec<(f64, f64)> {
    let mut panels = Vec::new();
    let top = s_end.min(1.0);
    let mut b = top;
    for _ in 0..60 {
        panels.push((0.5 * b, b));
        b *= 0.5;
    }
    if s_end > 1.0 {
        let k = ((s_end - 1.0) / 0.5).ceil() as usize;
        let w = (s_end - 1.0) / k as f64;
        for j in 0..k {
            panels.push((1.0 + j as f64 * w, 1.0 + (j + 1) as f64 * w));
        }
    }
    panels
}

/// Beyond this `γs²` the damped terms are below `e^{−40}`.
const DAMPING_CUTOFF: f64 = 40.0;

fn k_integral(n: usize, gamma: f64, refine: usize) -> f64 {
    let s_cut = (DAMPING_CUTOFF / gamma).sqrt();
    let gl = gauss_legendre(16 << refine);
    let parts: Vec<f64> = s_panels(s_cut)
        .into_par_iter()
        .map(|(a, b)| {
            let r = gl.mapped(a, b);
            let terms: Vec<f64> = r
                .nodes
                .iter()
                .zip(&r.weights)
                .map(|(&s, &w)| {
                    let ur = u_rule(n, s, refine);
                    let d = gamma * s * s;
                    let inner: f64 = ur
                        .nodes
                        .iter()
                        .zip(&ur.weights)
                        .map(|(&u, &wu)| wu * taylor_defect_sq(s * u, d))
                        .sum();
                    w * inner / (s * s * s)
                })
                .collect();
            pairwise_sum(&terms)
        })
        .collect();
    // |D|² = 1 beyond s_cut, so the tail is W ∫ ds/s³
    pairwise_sum(&parts) + slice_weight_mass(n) / (2.0 * s_cut * s_cut)
}

/// `k(n, γ)` by Gauss–Jacobi in `u` and Gauss–Legendre panels in `s`, with the
/// error taken from one mesh doubling.
pub fn k_constant(n: usize, gamma: f64) -> Result<KReport> {
    if n == 0 {
        return Err(Error::param("n must be >= 1"));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::param(format!(
            "γ = {gamma} must be positive (the defect integral diverges at γ = 0)"
        )));
    }
    let pre = gamma_prefactor(n);
    let coarse = pre * k_integral(n, gamma, 0);
    let fine = pre * k_integral(n, gamma, 1);
    let bound_rhs = k_bound_rhs(n, gamma)?;
    Ok(KReport {
        n,
        gamma,
        k_value: fine,
        quadrature_error: (fine - coarse).abs(),
        bound_rhs,
        ratio: fine / bound_rhs,
    })
}

/// `γn + ∫₀^∞ v² e^{−v²} log(2 + (v² + γn)/(v√(γn))) dv`.
pub fn k_bound_rhs(n: usize, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) || n == 0 {
        return Err(Error::param("need γ > 0 and n >= 1"));
    }
    let c = gamma * n as f64;
    let sc = c.sqrt();
    let f = |v: f64| v * v * (-v * v).exp() * (2.0 + (v * v + c) / (v * sc)).ln();
    let gl = gauss_legendre(24);
    let mut terms = Vec::new();
    let mut b = 1.0;
    for _ in 0..80 {
        terms.push(gl.mapped(0.5 * b, b).integrate(f));
        b *= 0.5;
    }
    for j in 0..36 {
        let a = 1.0 + 0.25 * j as f64;
        terms.push(gl.mapped(a, a + 0.25).integrate(f));
    }
    Ok(c + pairwise_sum(&terms))
}

/// `γ` values of the ratio scan: half decades from 1e−3 to 1e3.
pub fn k_scan_gammas() -> Vec<f64> {
    (0..=12).map(|j| 10f64.powf(-3.0 + 0.5 * j as f64)).collect()
}

/// `k(n,γ)/k_bound_rhs(n,γ)` over `n ≤ n_max` and [`k_scan_gammas`].
pub fn k_ratio_scan(n_max: usize) -> Result<Vec<KReport>> {
    let mut out = Vec::new();
    for n in 1..=n_max {
        for g in k_scan_gammas() {
            out.push(k_constant(n, g)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub n: usize,
    pub gamma: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub rel_gap: f64,
    pub k_value: f64,
    pub lhs_error_estimate: f64,
}

/// `(∫|ξ|² |f̂|² dξ)^{1/2}` summed over components, on the padded torus.
pub fn gradient_energy(f: &GridField) -> f64 {
    let spec = Spectrum::new(f);
    let xi = spec.frequency_norm_sq();
    let total = spec.torus().total() as f64;
    let parts: Vec<f64> = (0..f.dim_out())
        .map(|c| {
            let terms: Vec<f64> = spec.coefficients(c).iter().zip(xi).map(|(v, s)| s * v.norm_sqr()).collect();
            pairwise_sum(&terms)
        })
        .collect();
    (pairwise_sum(&parts) * f.cell_volume() / total).sqrt()
}

/// Compares the Carleson integral for `q = 2`, `X = Y = ℓ_2` (computed in
/// physical space scale by scale) with `√(k(n,γ)/n) ‖|ξ| f̂‖₂`.
pub fn verify_heat_identity(f: &GridField, gamma: f64, ball_samples: usize, seed: u64) -> Result<IdentityCheck> {
    let n = f.dim_in();
    let cfg = DorroConfig {
        gamma: GammaChoice::Fixed(gamma),
        ball_samples,
        seed,
        ..DorroConfig::new(NormedSpace::euclidean(n), 2.0)
    };
    verify_heat_identity_with(f, &cfg)
}

pub fn verify_heat_identity_with(f: &GridField, cfg: &DorroConfig) -> Result<IdentityCheck> {
    let n = f.dim_in();
    if cfg.q != 2.0 {
        return Err(Error::param("the identity holds for q = 2 only"));
    }
    let euclid = matches!(cfg.space.kind(), NormKind::Lp { p } if *p == 2.0) && cfg.space.is_euclidean_multiple() == Some(1.0);
    if !euclid || cfg.target != TargetNorm::euclidean() {
        return Err(Error::param("the identity needs X = ℓ_2^n with the reference structure and Y Euclidean"));
    }
    let GammaChoice::Fixed(gamma) = cfg.gamma else {
        return Err(Error::param("the identity check needs a fixed γ"));
    };
    let report = carleson_functional(f, cfg)?;
    let k = k_constant(n, gamma)?;
    let rhs = (k.k_value / n as f64).sqrt() * gradient_energy(f);
    let lhs = report.value;
    let rel_gap = if rhs > 0.0 {
        (lhs - rhs).abs() / rhs
    } else if lhs == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(IdentityCheck {
        n,
        gamma,
        lhs,
        rhs,
        rel_gap,
        k_value: k.k_value,
        lhs_error_estimate: report.discretization_error_estimate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DivergenceRow {
    pub epsilon: f64,
    pub poisson: f64,
    pub heat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceScan {
    pub n: usize,
    pub gamma: f64,
    pub rows: Vec<DivergenceRow>,
    pub slope: f64,
    pub intercept: f64,
    pub fit_residual: f64,
    pub expected_slope: f64,
    pub slope_rel_error: f64,
    pub heat_gap: f64,
}

/// `∫_ε^1 ∫₋₁¹ |e^{isu} − (1+isu) e^{−d(s)}|² (1−u²)^{(n−1)/2} du ds/s³`.
fn truncated_defect(n: usize, eps: f64, decay: impl Fn(f64) -> f64 + Sync) -> f64 {
    let ur = jacobi_rule(n, 0);
    let gl = gauss_legendre(16);
    // s = e^v, ds/s³ = e^{−2v} dv
    let lo = eps.ln();
    let panels = ((-lo) * 4.0).ceil().max(1.0) as usize;
    let w = -lo / panels as f64;
    let parts: Vec<f64> = (0..panels)
        .into_par_iter()
        .map(|j| {
            let r = gl.mapped(lo + j as f64 * w, lo + (j + 1) as f64 * w);
            let terms: Vec<f64> = r
                .nodes
                .iter()
                .zip(&r.weights)
                .map(|(&v, &wv)| {
                    let s = v.exp();
                    let d = decay(s);
                    let inner: f64 = ur
                        .nodes
                        .iter()
                        .zip(&ur.weights)
                        .map(|(&u, &wu)| wu * taylor_defect_sq(s * u, d))
                        .sum();
                    wv * inner * (-2.0 * v).exp()
                })
                .collect();
            pairwise_sum(&terms)
        })
        .collect();
    pairwise_sum(&parts)
}

/// Truncated Poisson-defect integrals, which grow like `γ² W log(1/ε)`, next
/// to the heat-defect integrals, which converge.
pub fn poisson_divergence_scan(n: usize, gamma: f64, cutoffs: &[f64]) -> Result<DivergenceScan> {
    if !(gamma > 0.0) || n == 0 {
        return Err(Error::param("need γ > 0 and n >= 1"));
    }
    if cutoffs.len() < 3 {
        return Err(Error::param("need at least three cutoffs"));
    }
    if cutoffs.windows(2).any(|w| !(w[1] < w[0])) || cutoffs.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        return Err(Error::param("cutoffs must be decreasing and lie in (0, 1)"));
    }
    let rows: Vec<DivergenceRow> = cutoffs
        .iter()
        .map(|&eps| DivergenceRow {
            epsilon: eps,
            poisson: truncated_defect(n, eps, |s| gamma * s),
            heat: truncated_defect(n, eps, |s| gamma * s * s),
        })
        .collect();
    let last = &rows[rows.len() - 3..];
    let xs: Vec<f64> = last.iter().map(|r| (1.0 / r.epsilon).ln()).collect();
    let ys: Vec<f64> = last.iter().map(|r| r.poisson).collect();
    let mx = xs.iter().sum::<f64>() / 3.0;
    let my = ys.iter().sum::<f64>() / 3.0;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / 3.0)
        .sqrt();
    let span = slope.abs() * (xs[2] - xs[0]);
    let fit_residual = if span > 0.0 { rms / span } else { f64::INFINITY };
    let expected_slope = gamma * gamma * slice_weight_mass(n);
    let h = &rows[rows.len() - 2..];
    let heat_gap = (h[1].heat - h[0].heat).abs() / h[1].heat.abs();
    Ok(DivergenceScan {
        n,
        gamma,
        slope,
        intercept,
        fit_residual,
        expected_slope,
        slope_rel_error: (slope - expected_slope).abs() / expected_slope,
        heat_gap,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{make_field, GridBox, TestFunctionSpec};
    use crate::quadrature::adaptive_composite;

    #[test]
    fn prefactor_paths_agree() {
        for n in 1..=12 {
            let a = slice_prefactor(n);
            let b = gamma_prefactor(n);
            assert!((a - b).abs() <= 1e-12 * a, "n={n}: {a} {b}");
        }
        assert!((slice_prefactor(1) - 0.5).abs() < 1e-15);
        assert!((slice_weight_mass(1) - 2.0).abs() < 1e-14);
        assert!((slice_weight_mass(2) - std::f64::consts::FRAC_PI_2).abs() < 1e-14);
    }

    #[test]
    fn defect_formula_matches_complex_evaluation() {
        for &(th, d) in &[(0.3, 0.2), (2.0, 1.5), (1e-4, 1e-6), (7.0, 0.01)] {
            let z = num_complex::Complex64::new(0.0, th).exp() - num_complex::Complex64::new(1.0, th) * (-d as f64).exp();
            assert!((taylor_defect_sq(th, d) - z.norm_sqr()).abs() < 1e-12 * (1.0 + z.norm_sqr()));
        }
        // u = 0 slice: only the damping term survives
        let d: f64 = 0.7;
        assert!((taylor_defect_sq(0.0, d) - (1.0 - (-d).exp()).powi(2)).abs() < 1e-15);
        assert!((sin_minus_identity(0.05) - (0.05f64.sin() - 0.05)).abs() < 1e-18);
    }

    #[test]
    fn k_is_stable_under_refinement() {
        for n in 1..=4 {
            for g in [0.1, 1.0, 10.0] {
                let k = k_constant(n, g).unwrap();
                assert!(k.k_value > 0.0);
                assert!(k.quadrature_error <= 1e-6 * k.k_value, "{k:?}");
            }
        }
        assert!(k_constant(1, 0.0).is_err());
    }

    #[test]
    fn k_matches_independent_adaptive_quadrature() {
        // n = 1: weight 1, plain adaptive Gauss–Legendre in both variables
        let gamma = 1.0;
        let inner = |s: f64| {
            let (v, _) = adaptive_composite(|u| taylor_defect_sq(s * u, gamma * s * s), -1.0, 1.0, 8, 1e-13);
            v / (s * s * s)
        };
        let (a, _) = adaptive_composite(inner, 1e-9, 1.0, 16, 1e-12);
        let (b, _) = adaptive_composite(inner, 1.0, 40f64.sqrt(), 32, 1e-12);
        let tail = 2.0 / (2.0 * 40.0);
        let want = 0.5 * (a + b + tail);
        let k = k_constant(1, gamma).unwrap();
        assert!((k.k_value - want).abs() < 1e-7 * want, "{} {}", k.k_value, want);
    }

    #[test]
    fn k_diverges_at_both_ends() {
        let vals: Vec<f64> = k_scan_gammas().iter().map(|&g| k_constant(1, g).unwrap().k_value).collect();
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(vals[12] >= 10.0 * min, "{vals:?}");
        // small γ: |e^{iθ} − 1 − iθ|² ≈ θ² on 1 ≪ s ≪ γ^{-1/2} gives k ≈ (1/6) ln(1/γ)
        let slope = (vals[0] - vals[2]) / 10f64.ln();
        assert!((slope * 6.0 - 1.0).abs() < 0.05, "{slope}");
        assert!(vals[0] > vals[1] && vals[1] > vals[2] && vals[0] >= 5.0 * min);
    }

    #[test]
    fn bound_profile() {
        let big = k_bound_rhs(1, 1e3).unwrap();
        assert!((big / 1e3 - 1.0).abs() < 0.1);
        let one = k_bound_rhs(1, 1.0).unwrap();
        let lo = std::f64::consts::PI.sqrt() / 4.0 * 2f64.ln() + 1.0;
        assert!(one >= lo && one <= 10.0, "{one}");
    }

    #[test]
    fn frozen_bound_constant() {
        let scan = k_ratio_scan(10).unwrap();
        let max = scan.iter().map(|r| r.ratio).fold(0.0, f64::max);
        assert!(max <= K_BOUND_CONSTANT && max >= 0.999 * K_BOUND_CONSTANT, "{max}");
    }

    #[test]
    fn poisson_diverges_heat_converges() {
        let eps = [1e-1, 1e-2, 1e-3, 1e-4];
        let a = poisson_divergence_scan(1, 1.0, &eps).unwrap();
        assert!(a.slope > 0.0 && a.fit_residual <= 0.1);
        assert!(a.slope_rel_error <= 0.15, "{a:?}");
        assert!(a.heat_gap <= 0.01);
        let b = poisson_divergence_scan(1, 2.0, &eps).unwrap();
        assert!((b.slope / a.slope / 4.0 - 1.0).abs() < 0.15);
        assert!(poisson_divergence_scan(1, 1.0, &[1e-1, 1e-2]).is_err());
    }

    fn field(spec: TestFunctionSpec, n: usize, half: f64, res: usize) -> GridField {
        make_field(&spec, GridBox::symmetric(n, half), res).unwrap()
    }

    #[test]
    fn heat_identity_one_dimension() {
        let f = field(
            TestFunctionSpec::GaussianBump {
                center: None,
                s: 0.05,
                amplitudes: vec![1.0],
            },
            1,
            4.0,
            512,
        );
        for gamma in [1.0, 0.3] {
            let c = verify_heat_identity(&f, gamma, 32, 0).unwrap();
            assert!(c.rel_gap <= 0.03, "{c:?}");
        }
        let zero = f.with_values(1, vec![0.0; f.num_points()]).unwrap();
        let z = verify_heat_identity(&zero, 1.0, 32, 0).unwrap();
        assert_eq!((z.lhs, z.rhs, z.rel_gap), (0.0, 0.0, 0.0));
    }

    #[test]
    fn heat_identity_two_dimensions() {
        let f = field(
            TestFunctionSpec::RandomBandlimited {
                seed: 5,
                modes: 8,
                max_frequency: 3.0,
                envelope: 0.25,
                dim_out: 1,
            },
            2,
            8.0,
            128,
        );
        let c = verify_heat_identity(&f, 0.5, 256, 0).unwrap();
        assert!(c.rel_gap <= 0.05, "{c:?}");
        assert!(verify_heat_identity_with(
            &f,
            &DorroConfig {
                gamma: GammaChoice::Fixed(0.5),
                ..DorroConfig::new(NormedSpace::lp(2, 1.0).unwrap(), 2.0)
            }
        )
        .is_err());
    }
}
