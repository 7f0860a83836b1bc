//! Heat and Poisson evolutes on zero-padded Fourier grids, gradients,
//! first-order Taylor approximants and kernel constants.

use crate::error::{Error, Result};
use crate::fft::Torus;
use crate::fields::{GridField, TargetNorm};
use crate::quadrature;
use crate::spaces::{draw_sphere, invariant_b, invariant_m_p, local_ascent, NormedSpace};
use crate::rng::{self, tags};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SemigroupKind {
    Heat,
    Poisson,
}

/// Largest heat time with `√t <= half-width / 4`.
pub fn max_heat_time(f: &GridField) -> f64 {
    let half = 0.5 * (f.hi() - f.lo());
    (half / 4.0).powi(2)
}

/// Largest Poisson time, `half-width / 8`.
pub fn max_poisson_time(f: &GridField) -> f64 {
    0.5 * (f.hi() - f.lo()) / 8.0
}

fn check_time(kind: SemigroupKind, f: &GridField, t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::param(format!("time t = {t} must be finite and >= 0")));
    }
    let max = match kind {
        SemigroupKind::Heat => max_heat_time(f),
        SemigroupKind::Poisson => max_poisson_time(f),
    };
    if t > max {
        return Err(Error::inadmissible(format!(
            "{kind:?} time t = {t:.6e} outside the admissible range [0, {max:.6e}] for box [{}, {}]",
            f.lo(),
            f.hi()
        )));
    }
    Ok(())
}

/// Fourier transform of a field on the doubly padded periodic grid.
pub struct Spectrum {
    torus: Torus,
    base: GridField,
    coeffs: Vec<Vec<Complex64>>,
    xi_sq: Vec<f64>,
}

impl Spectrum {
    pub fn new(f: &GridField) -> Self {
        let n = f.dim_in();
        let res = f.res();
        let len = 2 * res;
        let torus = Torus::new(n, len, f.spacing());
        let total = torus.total();
        let coeffs = (0..f.dim_out())
            .map(|c| {
                let mut data = vec![Complex64::new(0.0, 0.0); total];
                let mut multi = vec![0usize; n];
                for idx in 0..f.num_points() {
                    f.multi_index(idx, &mut multi);
                    let p = multi.iter().fold(0, |acc, &k| acc * len + k);
                    data[p] = Complex64::new(f.at(idx)[c], 0.0);
                }
                torus.forward(&mut data);
                data
            })
            .collect();
        let xi_sq = torus.frequency_norm_sq();
        Spectrum {
            torus,
            base: f.clone(),
            coeffs,
            xi_sq,
        }
    }

    pub fn base(&self) -> &GridField {
        &self.base
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn coefficients(&self, component: usize) -> &[Complex64] {
        &self.coeffs[component]
    }

    /// `|ξ|²` at every spectral index.
    pub fn frequency_norm_sq(&self) -> &[f64] {
        &self.xi_sq
    }

    /// Applies a multiplier to one component and returns the real part of
    /// the inverse transform on the whole padded torus.
    pub fn apply_padded(&self, component: usize, mult: &[Complex64]) -> Vec<f64> {
        let mut data: Vec<Complex64> = self.coeffs[component]
            .par_iter()
            .zip(mult.par_iter())
            .map(|(a, b)| a * b)
            .collect();
        self.torus.inverse(&mut data);
        data.into_iter().map(|v| v.re).collect()
    }

    /// Crops a padded array back to the field grid.
    pub fn crop(&self, padded: &[f64]) -> Vec<f64> {
        let n = self.base.dim_in();
        let len = self.torus.len;
        let mut multi = vec![0usize; n];
        (0..self.base.num_points())
            .map(|idx| {
                self.base.multi_index(idx, &mut multi);
                padded[multi.iter().fold(0, |acc, &k| acc * len + k)]
            })
            .collect()
    }

    /// Applies a radial real multiplier `m(|ξ|²)` to every component and
    /// crops to the field grid.
    pub fn apply_radial(&self, m: impl Fn(f64) -> f64 + Sync) -> GridField {
        let mult: Vec<Complex64> = self.xi_sq.par_iter().map(|&s| Complex64::new(m(s), 0.0)).collect();
        self.apply_to_all(&mult)
    }

    fn apply_to_all(&self, mult: &[Complex64]) -> GridField {
        let mdim = self.base.dim_out();
        let comps: Vec<Vec<f64>> = (0..mdim).map(|c| self.crop(&self.apply_padded(c, mult))).collect();
        let mut values = vec![0.0; self.base.num_points() * mdim];
        for (c, comp) in comps.iter().enumerate() {
            for (i, v) in comp.iter().enumerate() {
                values[i * mdim + c] = *v;
            }
        }
        self.base
            .with_values(mdim, values)
            .expect("same grid as the base field")
    }

    /// Gradient of the multiplier-filtered field: component `c*n + a` holds
    /// `∂_a` of output component `c`.
    pub fn gradient_radial(&self, m: impl Fn(f64) -> f64 + Sync) -> GridField {
        let n = self.base.dim_in();
        let mdim = self.base.dim_out();
        let radial: Vec<f64> = self.xi_sq.par_iter().map(|&s| m(s)).collect();
        let mut values = vec![0.0; self.base.num_points() * mdim * n];
        for a in 0..n {
            let comp = self.torus.frequency_component(a);
            let mult: Vec<Complex64> = comp
                .iter()
                .zip(&radial)
                .map(|(xi, r)| Complex64::new(0.0, xi * r))
                .collect();
            for c in 0..mdim {
                let g = self.crop(&self.apply_padded(c, &mult));
                for (i, v) in g.iter().enumerate() {
                    values[i * mdim * n + c * n + a] = *v;
                }
            }
        }
        self.base
            .with_values(mdim * n, values)
            .expect("same grid as the base field")
    }

    fn multiplier(kind: SemigroupKind, t: f64) -> impl Fn(f64) -> f64 + Sync {
        move |s: f64| match kind {
            SemigroupKind::Heat => (-t * s).exp(),
            SemigroupKind::Poisson => (-t * s.sqrt()).exp(),
        }
    }

    /// Evolute at time `t`, with its gradient.
    pub fn evolute(&self, kind: SemigroupKind, t: f64) -> Result<Evolute> {
        check_time(kind, &self.base, t)?;
        Ok(self.evolute_unchecked(kind, t))
    }

    pub(crate) fn evolute_unchecked(&self, kind: SemigroupKind, t: f64) -> Evolute {
        let values = if t == 0.0 {
            self.base.clone()
        } else {
            self.apply_radial(Self::multiplier(kind, t))
        };
        let gradient = self.gradient_radial(Self::multiplier(kind, t));
        Evolute {
            kind,
            t,
            values,
            gradient,
        }
    }
}

/// The image of a field under the heat or Poisson semigroup.
#[derive(Debug, Clone)]
pub struct Evolute {
    pub kind: SemigroupKind,
    pub t: f64,
    pub values: GridField,
    /// Component `c*n + a` is `∂_a` of component `c`.
    pub gradient: GridField,
}

impl Evolute {
    /// Value and gradient interpolated at `x`, packed as an affine map.
    pub fn taylor_at(&self, x: &[f64]) -> Result<AffineMap> {
        if !self.values.contains(x) {
            return Err(Error::param(format!("point {x:?} lies outside the field box")));
        }
        let m = self.values.dim_out();
        let n = self.values.dim_in();
        let mut value = vec![0.0; m];
        let mut linear = vec![0.0; m * n];
        self.values.interpolate(x, &mut value);
        self.gradient.interpolate(x, &mut linear);
        Ok(AffineMap {
            base_point: x.to_vec(),
            value,
            linear,
        })
    }
}

pub fn heat_convolve(f: &GridField, t: f64) -> Result<Evolute> {
    Spectrum::new(f).evolute(SemigroupKind::Heat, t)
}

pub fn poisson_convolve(f: &GridField, t: f64) -> Result<Evolute> {
    Spectrum::new(f).evolute(SemigroupKind::Poisson, t)
}

/// Heat-smoothed values without admissibility checks or gradient.
pub fn heat_convolve_unchecked(f: &GridField, t: f64) -> GridField {
    Spectrum::new(f).apply_radial(|s| (-t * s).exp())
}

/// Spectral gradient of an evolute (already carried by it).
pub fn gradient(e: &Evolute) -> &GridField {
    &e.gradient
}

/// Central finite differences (one-sided at the box edge), same layout as the
/// spectral gradient.
pub fn gradient_fd(f: &GridField) -> GridField {
    let n = f.dim_in();
    let m = f.dim_out();
    let h = f.spacing();
    let res = f.res();
    let mut values = vec![0.0; f.num_points() * m * n];
    let mut multi = vec![0usize; n];
    for idx in 0..f.num_points() {
        f.multi_index(idx, &mut multi);
        for a in 0..n {
            let k = multi[a];
            let (lo, hi, span) = if k == 0 {
                (k, k + 1, 1.0)
            } else if k == res - 1 {
                (k - 1, k, 1.0)
            } else {
                (k - 1, k + 1, 2.0)
            };
            let mut ml = multi.clone();
            ml[a] = lo;
            let mut mh = multi.clone();
            mh[a] = hi;
            let (il, ih) = (f.flat_index(&ml), f.flat_index(&mh));
            for c in 0..m {
                values[idx * m * n + c * n + a] = (f.at(ih)[c] - f.at(il)[c]) / (span * h);
            }
        }
    }
    f.with_values(m * n, values).expect("same grid")
}

/// Direct heat-kernel quadrature `Σ hⁿ h_t(x - y) f(y)` at one point.
pub fn heat_convolve_direct(f: &GridField, t: f64, x: &[f64]) -> Vec<f64> {
    let n = f.dim_in();
    let m = f.dim_out();
    let norm = (4.0 * std::f64::consts::PI * t).powf(-(n as f64) / 2.0) * f.cell_volume();
    let mut out = vec![0.0; m];
    let mut y = vec![0.0; n];
    for idx in 0..f.num_points() {
        if !f.support_mask()[idx] {
            continue;
        }
        f.point(idx, &mut y);
        let r2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
        let k = norm * (-r2 / (4.0 * t)).exp();
        for (o, v) in out.iter_mut().zip(f.at(idx)) {
            *o += k * v;
        }
    }
    out
}

/// `y ↦ c + A (y - x₀)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffineMap {
    pub base_point: Vec<f64>,
    pub value: Vec<f64>,
    /// Row-major `m × n`.
    pub linear: Vec<f64>,
}

impl AffineMap {
    pub fn dim_in(&self) -> usize {
        self.base_point.len()
    }

    pub fn dim_out(&self) -> usize {
        self.value.len()
    }

    pub fn eval(&self, y: &[f64], out: &mut [f64]) {
        let n = self.dim_in();
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.linear[j * n..(j + 1) * n];
            *o = self.value[j]
                + row
                    .iter()
                    .zip(y.iter().zip(&self.base_point))
                    .map(|(a, (p, q))| a * (p - q))
                    .sum::<f64>();
        }
    }

    /// `A z`.
    pub fn apply_linear(&self, z: &[f64], out: &mut [f64]) {
        let n = self.dim_in();
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.linear[j * n..(j + 1) * n].iter().zip(z).map(|(a, b)| a * b).sum();
        }
    }
}

/// Heat Taylor polynomial `T¹ₓ(H_{γt²} f)`.
pub fn taylor_evolute(f: &GridField, x: &[f64], t: f64, gamma: f64) -> Result<AffineMap> {
    if x.len() != f.dim_in() {
        return Err(Error::DimensionMismatch {
            expected: f.dim_in(),
            got: x.len(),
        });
    }
    if !f.contains(x) {
        return Err(Error::param(format!("point {x:?} lies outside the field box")));
    }
    heat_convolve(f, gamma * t * t)?.taylor_at(x)
}

/// `sup_{z ∈ ∂B_X} ‖A z‖_Y`.
pub fn affine_lip(map: &AffineMap, space: &NormedSpace, target: TargetNorm, samples: usize, seed: u64) -> Result<f64> {
    let n = map.dim_in();
    let m = map.dim_out();
    if space.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: space.dim(),
        });
    }
    if m == 1 {
        // the dual norm of the single row: sup_{‖z‖ ≤ 1} |a·z|
        return Ok(space.dual_norm(&map.linear));
    }
    if let (Some(c), 2.0) = (space.is_euclidean_multiple(), target.p.value()) {
        let a = DMatrix::from_row_slice(m, n, &map.linear);
        let sv = a.singular_values();
        return Ok(sv.iter().copied().fold(0.0, f64::max) / c);
    }
    let ratio = |s: &[f64]| -> f64 {
        let mut out = [0.0f64; 16];
        let mut v = vec![0.0; m];
        let buf: &mut [f64] = if m <= 16 { &mut out[..m] } else { &mut v };
        map.apply_linear(s, buf);
        let d = space.norm_unchecked(s);
        if d == 0.0 {
            0.0
        } else {
            target.norm(buf) / d
        }
    };
    let pts: Vec<Vec<f64>> = rng::draw(samples.max(1), seed, tags::LIP_SAMPLES, |r| {
        let mut v = vec![0.0; n];
        draw_sphere(r, &mut v);
        v
    });
    let mut scored: Vec<(f64, usize)> = pts.iter().enumerate().map(|(i, p)| (ratio(p), i)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let refined = scored
        .iter()
        .take(8)
        .map(|(_, i)| local_ascent(&ratio, pts[*i].clone()).0)
        .fold(0.0, f64::max);
    Ok(refined.max(scored[0].0))
}

/// Natural logarithm with the convention `log 1 := 1` used for dimensions.
pub fn log_dim(n: usize) -> f64 {
    if n == 1 {
        1.0
    } else {
        (n as f64).ln()
    }
}

/// Universal constant used for the small-time Lipschitz threshold.
pub const LIP_THRESHOLD_C: f64 = 64.0;

/// `(1 - ‖x‖_X)² / (C (M₁ √n + b √log L)²)`.
pub fn evolute_lip_threshold_with(m1: f64, b: f64, n: usize, x_norm: f64, lip: f64, c: f64) -> Result<f64> {
    if !(x_norm < 1.0) {
        return Err(Error::param(format!("point norm {x_norm} must be < 1")));
    }
    if !(lip >= 1.0) {
        return Err(Error::param("L must be >= 1"));
    }
    let d = m1 * (n as f64).sqrt() + b * lip.ln().sqrt();
    Ok((1.0 - x_norm).powi(2) / (c * d * d))
}

pub fn evolute_lip_threshold(
    space: &NormedSpace,
    x: &[f64],
    lip: f64,
    c: f64,
    count: usize,
    seed: u64,
) -> Result<f64> {
    let m1 = invariant_m_p(space, 1.0, count, seed)?.value;
    let b = invariant_b(space, 64, seed).value;
    evolute_lip_threshold_with(m1, b, space.dim(), space.norm(x)?, lip, c)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct KernelConstant {
    pub closed_form: f64,
    pub quadrature: f64,
    pub quadrature_error: f64,
}

/// `∫|t ∂_t h_t|`: closed form `2/Γ(n/2) (n/2e)^{n/2}` and radial quadrature.
pub fn heat_time_derivative_l1(n: usize, t: f64) -> Result<KernelConstant> {
    if n == 0 || !(t > 0.0) {
        return Err(Error::param("need n >= 1 and t > 0"));
    }
    let nf = n as f64;
    let closed_form = (2f64.ln() - ln_gamma(nf / 2.0) + nf / 2.0 * (nf / (2.0 * std::f64::consts::E)).ln()).exp();
    // surface area of S^{n-1}
    let area = (2f64.ln() + nf / 2.0 * std::f64::consts::PI.ln() - ln_gamma(nf / 2.0)).exp();
    let kern_norm = (4.0 * std::f64::consts::PI * t).powf(-nf / 2.0);
    let integrand = |r: f64| {
        let h = kern_norm * (-r * r / (4.0 * t)).exp();
        area * h * (r * r / (4.0 * t) - nf / 2.0).abs() * r.powi(n as i32 - 1)
    };
    let kink = (2.0 * nf * t).sqrt();
    let upper = kink + 2.0 * t.sqrt() * (12.0 + nf.sqrt());
    let (a, ea) = quadrature::adaptive_composite(integrand, 0.0, kink, 4, 1e-14);
    let (b, eb) = quadrature::adaptive_composite(integrand, kink, upper, 8, 1e-14);
    Ok(KernelConstant {
        closed_form,
        quadrature: a + b,
        quadrature_error: ea + eb,
    })
}
