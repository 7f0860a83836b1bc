//! Finite-dimensional normed spaces with a reference Euclidean structure.
//!
//! A space is a norm `N` on coordinates `x ∈ ℝⁿ` together with an invertible
//! map `S` (the Euclidean scale). Points handed to [`NormedSpace::norm`] live
//! in Euclidean coordinates `y = S x`, so that `|y|` is the Hilbertian norm
//! and `‖y‖_X = N(S⁻¹ y)`. Changing `S` changes the position of the body but
//! not the abstract normed space.

mod invariants;
mod sampling;

pub use invariants::*;
pub use sampling::*;

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

/// Shape of the unit ball in the `x` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum NormKind {
    /// `(Σ|x_i|^p)^{1/p}`; `p = ∞` is the max norm.
    Lp { p: f64 },
    /// `(Σ|w_i x_i|^p)^{1/p}` with positive weights.
    WeightedLp { p: f64, weights: Vec<f64> },
    /// `max_k |a_k · x|` over a spanning family of functionals.
    Polytope { facets: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
enum Scale {
    Identity,
    Scalar(f64),
    Matrix { s: DMatrix<f64>, s_inv: DMatrix<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormedSpace {
    dim: usize,
    kind: NormKind,
    scale: Scale,
}

/// Exponent that serializes as a number or the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Exponent {
    Finite(f64),
    Named(InfTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InfTag {
    #[serde(rename = "inf")]
    Inf,
}

impl Exponent {
    pub fn value(self) -> f64 {
        match self {
            Exponent::Finite(p) => p,
            Exponent::Named(_) => f64::INFINITY,
        }
    }

    pub fn from_value(p: f64) -> Self {
        if p.is_infinite() {
            Exponent::Named(InfTag::Inf)
        } else {
            Exponent::Finite(p)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindTag {
    Lp,
    WeightedLp,
    Polytope,
}

/// JSON form of a space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceDescriptor {
    pub dim: usize,
    pub kind: KindTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Exponent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub facets: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub euclid_scale: Option<Vec<Vec<f64>>>,
}

fn lp_value(x: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        return x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    }
    if p == 1.0 {
        return x.iter().map(|v| v.abs()).sum();
    }
    if p == 2.0 {
        return x.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m == 0.0 {
        return 0.0;
    }
    m * x.iter().map(|v| (v.abs() / m).powf(p)).sum::<f64>().powf(1.0 / p)
}

/// `ℓ_p` norm of a vector; `p` may be infinite.
pub fn lp_norm(x: &[f64], p: f64) -> f64 {
    lp_value(x, p)
}

/// Volume of the unit ball of `ℓ_p^n`.
pub fn lp_ball_volume(n: usize, p: f64) -> f64 {
    ln_lp_ball_volume(n, p).exp()
}

fn ln_lp_ball_volume(n: usize, p: f64) -> f64 {
    let nf = n as f64;
    if p.is_infinite() {
        return nf * 2f64.ln();
    }
    nf * (2f64.ln() + ln_gamma(1.0 + 1.0 / p)) - ln_gamma(1.0 + nf / p)
}

/// `E|x_1|^k` for `x` uniform in the unit ball of `ℓ_p^n`.
pub fn lp_ball_coordinate_moment(n: usize, p: f64, k: f64) -> f64 {
    let nf = n as f64;
    if p.is_infinite() {
        return 1.0 / (k + 1.0);
    }
    (ln_gamma((k + 1.0) / p) - ln_gamma(1.0 / p) + ln_gamma(1.0 + nf / p)
        - ln_gamma(1.0 + (nf + k) / p))
        .exp()
}

/// Volume of the Euclidean unit ball `B^n`.
pub fn euclidean_ball_volume(n: usize) -> f64 {
    let nf = n as f64;
    (0.5 * nf * std::f64::consts::PI.ln() - ln_gamma(nf / 2.0 + 1.0)).exp()
}

impl NormedSpace {
    pub fn lp(dim: usize, p: f64) -> Result<Self> {
        Self::new(dim, NormKind::Lp { p })
    }

    pub fn euclidean(dim: usize) -> Self {
        Self::lp(dim, 2.0).expect("valid Euclidean space")
    }

    pub fn weighted_lp(p: f64, weights: Vec<f64>) -> Result<Self> {
        Self::new(weights.len(), NormKind::WeightedLp { p, weights })
    }

    pub fn polytope(facets: Vec<Vec<f64>>) -> Result<Self> {
        let dim = facets.first().map(|f| f.len()).unwrap_or(0);
        Self::new(dim, NormKind::Polytope { facets })
    }

    pub fn new(dim: usize, kind: NormKind) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dimension must be positive"));
        }
        match &kind {
            NormKind::Lp { p } => check_p(*p)?,
            NormKind::WeightedLp { p, weights } => {
                check_p(*p)?;
                if weights.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: weights.len(),
                    });
                }
                if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    return Err(Error::param("weights must be positive and finite"));
                }
            }
            NormKind::Polytope { facets } => {
                if facets.is_empty() {
                    return Err(Error::param("polytope needs at least one facet"));
                }
                for f in facets {
                    if f.len() != dim {
                        return Err(Error::DimensionMismatch {
                            expected: dim,
                            got: f.len(),
                        });
                    }
                }
                let a = DMatrix::from_fn(facets.len(), dim, |i, j| facets[i][j]);
                if a.rank(1e-10) < dim {
                    return Err(Error::param(
                        "polytope facets must span the dual space (bounded ball)",
                    ));
                }
            }
        }
        Ok(NormedSpace {
            dim,
            kind,
            scale: Scale::Identity,
        })
    }

    /// Replaces the Euclidean structure by `y = S x`.
    pub fn with_euclid_scale(mut self, s: DMatrix<f64>) -> Result<Self> {
        if s.nrows() != self.dim || s.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: s.nrows(),
            });
        }
        let diag0 = s[(0, 0)];
        let is_scalar = (0..self.dim).all(|i| {
            (0..self.dim).all(|j| {
                let want = if i == j { diag0 } else { 0.0 };
                s[(i, j)] == want
            })
        });
        self.scale = if is_scalar {
            if !(diag0 > 0.0 && diag0.is_finite()) {
                return Err(Error::param("euclid_scale must be positive definite"));
            }
            if diag0 == 1.0 {
                Scale::Identity
            } else {
                Scale::Scalar(diag0)
            }
        } else {
            if (&s - s.transpose()).abs().max() > 1e-12 * s.abs().max() {
                return Err(Error::param("euclid_scale must be symmetric"));
            }
            if s.clone().cholesky().is_none() {
                return Err(Error::param("euclid_scale must be positive definite"));
            }
            let s_inv = s
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::param("euclid_scale must be invertible"))?;
            Scale::Matrix { s, s_inv }
        };
        Ok(self)
    }

    /// Multiplies the Euclidean scale by `c > 0`, dilating the body by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.scale = match &self.scale {
            Scale::Identity => Scale::Scalar(c),
            Scale::Scalar(l) => Scale::Scalar(l * c),
            Scale::Matrix { s, s_inv } => Scale::Matrix {
                s: s * c,
                s_inv: s_inv / c,
            },
        };
        if let Scale::Scalar(l) = out.scale {
            if l == 1.0 {
                out.scale = Scale::Identity;
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &NormKind {
        &self.kind
    }

    /// The Euclidean scale as a matrix.
    pub fn euclid_scale(&self) -> DMatrix<f64> {
        match &self.scale {
            Scale::Identity => DMatrix::identity(self.dim, self.dim),
            Scale::Scalar(l) => DMatrix::identity(self.dim, self.dim) * *l,
            Scale::Matrix { s, .. } => s.clone(),
        }
    }

    pub(crate) fn scalar_scale(&self) -> Option<f64> {
        match self.scale {
            Scale::Identity => Some(1.0),
            Scale::Scalar(l) => Some(l),
            Scale::Matrix { .. } => None,
        }
    }

    pub fn scale_determinant(&self) -> f64 {
        match &self.scale {
            Scale::Identity => 1.0,
            Scale::Scalar(l) => l.powi(self.dim as i32),
            Scale::Matrix { s, .. } => s.determinant().abs(),
        }
    }

    /// Exponent `p` for the ℓ_p kinds.
    pub fn lp_exponent(&self) -> Option<f64> {
        match &self.kind {
            NormKind::Lp { p } | NormKind::WeightedLp { p, .. } => Some(*p),
            NormKind::Polytope { .. } => None,
        }
    }

    pub(crate) fn weights(&self) -> Option<Vec<f64>> {
        match &self.kind {
            NormKind::Lp { .. } => Some(vec![1.0; self.dim]),
            NormKind::WeightedLp { weights, .. } => Some(weights.clone()),
            NormKind::Polytope { .. } => None,
        }
    }

    /// True for plain ℓ_2 (equal weights) with a scalar Euclidean scale, where
    /// `‖y‖_X` is a multiple of `|y|`.
    pub fn is_euclidean_multiple(&self) -> Option<f64> {
        let lam = self.scalar_scale()?;
        match &self.kind {
            NormKind::Lp { p } if *p == 2.0 => Some(1.0 / lam),
            NormKind::WeightedLp { p, weights } if *p == 2.0 => {
                let w0 = weights[0];
                weights.iter().all(|w| *w == w0).then_some(w0 / lam)
            }
            _ => None,
        }
    }

    /// Norm in the native coordinates `x`.
    pub fn base_norm(&self, x: &[f64]) -> f64 {
        match &self.kind {
            NormKind::Lp { p } => lp_value(x, *p),
            NormKind::WeightedLp { p, weights } => {
                let mut buf = [0.0f64; 16];
                if x.len() <= 16 {
                    for i in 0..x.len() {
                        buf[i] = x[i] * weights[i];
                    }
                    lp_value(&buf[..x.len()], *p)
                } else {
                    let v: Vec<f64> = x.iter().zip(weights).map(|(a, w)| a * w).collect();
                    lp_value(&v, *p)
                }
            }
            NormKind::Polytope { facets } => facets.iter().fold(0.0f64, |m, a| {
                m.max(a.iter().zip(x).map(|(ai, xi)| ai * xi).sum::<f64>().abs())
            }),
        }
    }

    /// Maps Euclidean coordinates to native coordinates.
    pub fn to_native(&self, y: &[f64], out: &mut [f64]) {
        match &self.scale {
            Scale::Identity => out.copy_from_slice(y),
            Scale::Scalar(l) => {
                for (o, v) in out.iter_mut().zip(y) {
                    *o = v / l;
                }
            }
            Scale::Matrix { s_inv, .. } => {
                for i in 0..self.dim {
                    out[i] = (0..self.dim).map(|j| s_inv[(i, j)] * y[j]).sum();
                }
            }
        }
    }

    /// Maps native coordinates to Euclidean coordinates.
    pub fn to_euclidean(&self, x: &[f64], out: &mut [f64]) {
        match &self.scale {
            Scale::Identity => out.copy_from_slice(x),
            Scale::Scalar(l) => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = v * l;
                }
            }
            Scale::Matrix { s, .. } => {
                for i in 0..self.dim {
                    out[i] = (0..self.dim).map(|j| s[(i, j)] * x[j]).sum();
                }
            }
        }
    }

    /// `‖y‖_X` without a dimension check.
    #[inline]
    pub fn norm_unchecked(&self, y: &[f64]) -> f64 {
        match &self.scale {
            Scale::Identity => self.base_norm(y),
            Scale::Scalar(l) => self.base_norm(y) / l,
            Scale::Matrix { .. } => {
                let mut buf = vec![0.0; self.dim];
                self.to_native(y, &mut buf);
                self.base_norm(&buf)
            }
        }
    }

    /// `‖y‖_X` for `y` in Euclidean coordinates.
    pub fn norm(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: y.len(),
            });
        }
        Ok(self.norm_unchecked(y))
    }

    /// Membership in the closed unit ball, from the defining inequalities.
    pub fn contains(&self, y: &[f64]) -> bool {
        let mut x = vec![0.0; self.dim];
        self.to_native(y, &mut x);
        match &self.kind {
            NormKind::Lp { p } => ball_inequality(x.iter().copied(), *p),
            NormKind::WeightedLp { p, weights } => {
                ball_inequality(x.iter().zip(weights).map(|(a, w)| a * w), *p)
            }
            NormKind::Polytope { facets } => facets
                .iter()
                .all(|a| a.iter().zip(&x).map(|(ai, xi)| ai * xi).sum::<f64>().abs() <= 1.0),
        }
    }

    /// Minkowski gauge of the unit ball, computed by bisection on membership.
    /// Independent of the closed-form evaluation path.
    pub fn gauge(&self, y: &[f64]) -> f64 {
        let e = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if e == 0.0 {
            return 0.0;
        }
        let scaled = |lam: f64| -> Vec<f64> { y.iter().map(|v| v / lam).collect() };
        let mut lo = e * 1e-3;
        let mut hi = e;
        while !self.contains(&scaled(hi)) {
            lo = hi;
            hi *= 2.0;
        }
        while self.contains(&scaled(lo)) {
            hi = lo;
            lo *= 0.5;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.contains(&scaled(mid)) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    /// Dual norm `sup_{‖y‖_X ≤ 1} a·y`.
    pub fn dual_norm(&self, a: &[f64]) -> f64 {
        // a·S x = (Sᵀa)·x
        let st_a: Vec<f64> = match &self.scale {
            Scale::Identity => a.to_vec(),
            Scale::Scalar(l) => a.iter().map(|v| v * l).collect(),
            Scale::Matrix { s, .. } => (0..self.dim)
                .map(|j| (0..self.dim).map(|i| s[(i, j)] * a[i]).sum())
                .collect(),
        };
        match &self.kind {
            NormKind::Lp { p } => lp_value(&st_a, conjugate(*p)),
            NormKind::WeightedLp { p, weights } => {
                let v: Vec<f64> = st_a.iter().zip(weights).map(|(x, w)| x / w).collect();
                lp_value(&v, conjugate(*p))
            }
            NormKind::Polytope { .. } => self
                .native_vertices()
                .iter()
                .map(|v| v.iter().zip(&st_a).map(|(x, y)| x * y).sum::<f64>().abs())
                .fold(0.0, f64::max),
        }
    }

    /// Vertices of a polytope ball in native coordinates.
    pub(crate) fn native_vertices(&self) -> Vec<Vec<f64>> {
        let NormKind::Polytope { facets } = &self.kind else {
            return Vec::new();
        };
        let n = self.dim;
        let k = facets.len();
        let mut out: Vec<Vec<f64>> = Vec::new();
        let mut idx: Vec<usize> = (0..n).collect();
        loop {
            let a = DMatrix::from_fn(n, n, |i, j| facets[idx[i]][j]);
            if let Some(lu) = Some(a.lu()).filter(|lu| lu.determinant().abs() > 1e-12) {
                for signs in 0..(1usize << n) {
                    let b = DVector::from_fn(n, |i, _| if signs >> i & 1 == 1 { -1.0 } else { 1.0 });
                    if let Some(x) = lu.solve(&b) {
                        let xs: Vec<f64> = x.iter().copied().collect();
                        if self.base_norm(&xs) <= 1.0 + 1e-9
                            && !out.iter().any(|v| {
                                v.iter().zip(&xs).all(|(p, q)| (p - q).abs() < 1e-10)
                            })
                        {
                            out.push(xs);
                        }
                    }
                }
            }
            // next combination
            let mut i = n;
            while i > 0 && idx[i - 1] == k - n + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for j in i..n {
                idx[j] = idx[j - 1] + 1;
            }
        }
        out
    }

    /// Circumradius `max_{y ∈ B_X} |y|` when it is available exactly.
    pub fn circumradius_exact(&self) -> Option<f64> {
        match &self.kind {
            NormKind::Polytope { .. } => {
                let mut y = vec![0.0; self.dim];
                let r = self
                    .native_vertices()
                    .iter()
                    .map(|v| {
                        self.to_euclidean(v, &mut y);
                        y.iter().map(|a| a * a).sum::<f64>().sqrt()
                    })
                    .fold(0.0, f64::max);
                Some(r)
            }
            _ => {
                let lam = self.scalar_scale()?;
                let (p, w) = (self.lp_exponent()?, self.weights()?);
                Some(lam / lp_min_on_sphere(p, &w))
            }
        }
    }

    /// Volume of `B_X` in Euclidean coordinates, when it has a closed form.
    pub fn volume_exact(&self) -> Option<f64> {
        let p = self.lp_exponent()?;
        let w = self.weights()?;
        let prod: f64 = w.iter().product();
        Some(lp_ball_volume(self.dim, p) / prod * self.scale_determinant())
    }

    pub fn descriptor(&self) -> SpaceDescriptor {
        let euclid_scale = match &self.scale {
            Scale::Identity => None,
            _ => {
                let s = self.euclid_scale();
                Some((0..self.dim).map(|i| (0..self.dim).map(|j| s[(i, j)]).collect()).collect())
            }
        };
        let (kind, p, weights, facets) = match &self.kind {
            NormKind::Lp { p } => (KindTag::Lp, Some(Exponent::from_value(*p)), None, None),
            NormKind::WeightedLp { p, weights } => (
                KindTag::WeightedLp,
                Some(Exponent::from_value(*p)),
                Some(weights.clone()),
                None,
            ),
            NormKind::Polytope { facets } => (KindTag::Polytope, None, None, Some(facets.clone())),
        };
        SpaceDescriptor {
            dim: self.dim,
            kind,
            p,
            weights,
            facets,
            euclid_scale,
        }
    }

    pub fn from_descriptor(d: &SpaceDescriptor) -> Result<Self> {
        let cfg = |field: &str, msg: &str| Error::config(format!("space.{field}"), msg);
        let kind = match d.kind {
            KindTag::Lp => {
                if d.weights.is_some() || d.facets.is_some() {
                    return Err(cfg("kind", "lp takes neither weights nor facets"));
                }
                let p = d.p.ok_or_else(|| cfg("p", "missing exponent"))?.value();
                NormKind::Lp { p }
            }
            KindTag::WeightedLp => {
                let p = d.p.ok_or_else(|| cfg("p", "missing exponent"))?.value();
                let weights = d.weights.clone().ok_or_else(|| cfg("weights", "missing weights"))?;
                NormKind::WeightedLp { p, weights }
            }
            KindTag::Polytope => {
                let facets = d.facets.clone().ok_or_else(|| cfg("facets", "missing facets"))?;
                NormKind::Polytope { facets }
            }
        };
        let space = NormedSpace::new(d.dim, kind).map_err(|e| cfg("kind", &e.to_string()))?;
        match &d.euclid_scale {
            None => Ok(space),
            Some(rows) => {
                if rows.len() != d.dim || rows.iter().any(|r| r.len() != d.dim) {
                    return Err(cfg("euclid_scale", "must be a dim x dim matrix"));
                }
                let s = DMatrix::from_fn(d.dim, d.dim, |i, j| rows[i][j]);
                space
                    .with_euclid_scale(s)
                    .map_err(|e| cfg("euclid_scale", &e.to_string()))
            }
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: SpaceDescriptor = serde_json::from_str(text).map_err(|e| {
            Error::config(format!("space (line {}, column {})", e.line(), e.column()), e.to_string())
        })?;
        Self::from_descriptor(&d)
    }
}

fn check_p(p: f64) -> Result<()> {
    if p >= 1.0 && !p.is_nan() {
        Ok(())
    } else {
        Err(Error::param(format!("exponent p = {p} must lie in [1, ∞]")))
    }
}

fn ball_inequality(it: impl Iterator<Item = f64>, p: f64) -> bool {
    if p.is_infinite() {
        let mut ok = true;
        for v in it {
            ok &= v.abs() <= 1.0;
        }
        ok
    } else {
        it.map(|v| v.abs().powf(p)).sum::<f64>() <= 1.0
    }
}

/// Hölder conjugate exponent.
pub fn conjugate(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    }
}

/// `max_{|σ|=1} ‖diag(w) σ‖_p`.
pub(crate) fn lp_max_on_sphere(p: f64, w: &[f64]) -> f64 {
    if p >= 2.0 {
        w.iter().copied().fold(0.0, f64::max)
    } else {
        let r = 2.0 * p / (2.0 - p);
        lp_value(w, r)
    }
}

/// `min_{|σ|=1} ‖diag(w) σ‖_p`.
pub(crate) fn lp_min_on_sphere(p: f64, w: &[f64]) -> f64 {
    if p <= 2.0 {
        w.iter().copied().fold(f64::INFINITY, f64::min)
    } else {
        let r = if p.is_infinite() { 2.0 } else { 2.0 * p / (p - 2.0) };
        let inv: Vec<f64> = w.iter().map(|x| 1.0 / x).collect();
        1.0 / lp_value(&inv, r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn trivial_norms() {
        assert_eq!(NormedSpace::lp(3, 2.0).unwrap().norm(&[1.0, 2.0, 2.0]).unwrap(), 3.0);
        let inf = NormedSpace::lp(2, f64::INFINITY).unwrap();
        assert_eq!(inf.norm(&[0.3, -0.7]).unwrap(), 0.7);
        let one = NormedSpace::lp(2, 1.0).unwrap();
        assert_relative_eq!(one.norm(&[0.3, -0.7]).unwrap(), 1.0, epsilon = 1e-15);
        assert!(matches!(
            one.norm(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn dual_norms() {
        let one = NormedSpace::lp(2, 1.0).unwrap();
        assert_eq!(one.dual_norm(&[1.0, 1.0]), 1.0);
        let sq = NormedSpace::polytope(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_relative_eq!(sq.dual_norm(&[1.0, -2.0]), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn polytope_vertices_and_radius() {
        let sq = NormedSpace::polytope(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(sq.native_vertices().len(), 4);
        assert_relative_eq!(sq.circumradius_exact().unwrap(), 2f64.sqrt(), epsilon = 1e-12);
        let hex = NormedSpace::polytope(vec![
            vec![1.0, 0.0],
            vec![0.5, 0.75f64.sqrt()],
            vec![-0.5, 0.75f64.sqrt()],
        ])
        .unwrap();
        assert_eq!(hex.native_vertices().len(), 6);
    }

    #[test]
    fn unbounded_polytope_rejected() {
        assert!(NormedSpace::polytope(vec![vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn volumes() {
        assert_relative_eq!(lp_ball_volume(2, 2.0), std::f64::consts::PI, max_relative = 1e-13);
        assert_relative_eq!(lp_ball_volume(3, 1.0), 8.0 / 6.0, max_relative = 1e-13);
        assert_relative_eq!(lp_ball_volume(3, f64::INFINITY), 8.0);
        let w = NormedSpace::weighted_lp(2.0, vec![2.0, 0.5]).unwrap().scaled(3.0);
        assert_relative_eq!(w.volume_exact().unwrap(), std::f64::consts::PI * 9.0, max_relative = 1e-12);
        // E x_1² in the disc is 1/4
        assert_relative_eq!(lp_ball_coordinate_moment(2, 2.0, 2.0), 0.25, epsilon = 1e-14);
    }

    #[test]
    fn descriptor_round_trip() {
        let text = r#"{"dim":2,"kind":"weighted_lp","p":"inf","weights":[1,2],
                       "euclid_scale":[[2,0.5],[0.5,1]]}"#;
        let s = NormedSpace::from_json(text).unwrap();
        assert_eq!(s.lp_exponent(), Some(f64::INFINITY));
        let back = NormedSpace::from_descriptor(&s.descriptor()).unwrap();
        assert_eq!(s, back);
        let bad = NormedSpace::from_json(r#"{"dim":2,"kind":"lp","p":2,"colour":1}"#);
        assert!(matches!(bad, Err(Error::Config { .. })));
        let bad_p = NormedSpace::from_json(r#"{"dim":2,"kind":"lp","p":0.5}"#);
        match bad_p {
            Err(Error::Config { path, .. }) => assert_eq!(path, "space.kind"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sphere_extremes() {
        assert_relative_eq!(lp_max_on_sphere(1.0, &[1.0; 4]), 2.0, epsilon = 1e-14);
        assert_relative_eq!(lp_min_on_sphere(f64::INFINITY, &[1.0; 4]), 0.5, epsilon = 1e-14);
        assert_eq!(lp_max_on_sphere(4.0, &[1.0, 3.0]), 3.0);
    }

    fn any_space() -> impl Strategy<Value = NormedSpace> {
        let p = prop_oneof![Just(1.0), Just(2.0), Just(f64::INFINITY), 1.0f64..8.0];
        (1usize..5, p, proptest::collection::vec(0.2f64..5.0, 4), any::<bool>()).prop_map(
            |(n, p, w, weighted)| {
                if weighted {
                    NormedSpace::weighted_lp(p, w[..n].to_vec()).unwrap()
                } else {
                    NormedSpace::lp(n, p).unwrap()
                }
            },
        )
    }

    proptest! {
        #[test]
        fn homogeneity_and_triangle(
            s in any_space(),
            a in proptest::collection::vec(-3.0f64..3.0, 4),
            b in proptest::collection::vec(-3.0f64..3.0, 4),
            lam in -10.0f64..10.0,
        ) {
            let n = s.dim();
            let (a, b) = (&a[..n], &b[..n]);
            let na = s.norm(a).unwrap();
            let la: Vec<f64> = a.iter().map(|v| lam * v).collect();
            prop_assert!((s.norm(&la).unwrap() - lam.abs() * na).abs() <= 1e-12 * (1.0 + lam.abs() * na));
            let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
            prop_assert!(s.norm(&ab).unwrap() <= na + s.norm(b).unwrap() + 1e-12);
        }

        #[test]
        fn gauge_agrees_with_closed_form(
            s in any_space(),
            a in proptest::collection::vec(-3.0f64..3.0, 4),
        ) {
            let a = &a[..s.dim()];
            let direct = s.norm(a).unwrap();
            let gauge = s.gauge(a);
            prop_assert!((direct - gauge).abs() <= 1e-12 * direct.max(1e-300), "{direct} vs {gauge}");
        }

        #[test]
        fn scaled_matrix_path_matches_scalar(
            a in proptest::collection::vec(-3.0f64..3.0, 3),
            c in 0.1f64..4.0,
        ) {
            let base = NormedSpace::lp(3, 3.0).unwrap();
            let scalar = base.scaled(c);
            let mut m = DMatrix::identity(3, 3) * c;
            m[(0, 1)] = 1e-300; // forces the general matrix path
            m[(1, 0)] = 1e-300;
            let matrix = base.with_euclid_scale(m).unwrap();
            let x = scalar.norm(&a).unwrap();
            let y = matrix.norm(&a).unwrap();
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x));
        }
    }
}
