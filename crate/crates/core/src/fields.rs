//! Vector-valued functions sampled on regular box grids.
//!
//! A [`GridField`] holds `res^n` points of the cube `[lo, hi]^n` with spacing
//! `h = (hi - lo)/(res - 1)`. Values are stored row-major over the grid (last
//! axis fastest) with the `m` output components innermost.

use crate::error::{Error, Result};
use crate::rng;
use crate::spaces::{lp_norm, Exponent, NormedSpace, SpaceDescriptor};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

/// Points with `|v| <= SUPPORT_TOL · max|v|` count as outside the support.
pub const SUPPORT_TOL: f64 = 1e-12;

/// Version of the binary field layout.
pub const FIELD_FORMAT_VERSION: u32 = 1;

/// Values with `|v| <= BOUNDARY_TOL · max|v|` count as vanished in the
/// boundary-layer check, which admits Gaussian tails.
pub const BOUNDARY_TOL: f64 = 1e-10;

/// The target norm `ℓ_p^m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetNorm {
    pub p: Exponent,
}

impl TargetNorm {
    pub fn lp(p: f64) -> Self {
        TargetNorm {
            p: Exponent::from_value(p),
        }
    }

    pub fn euclidean() -> Self {
        Self::lp(2.0)
    }

    pub fn norm(&self, v: &[f64]) -> f64 {
        lp_norm(v, self.p.value())
    }
}

impl Default for TargetNorm {
    fn default() -> Self {
        Self::euclidean()
    }
}

/// The cube `[lo, hi]^dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridBox {
    pub dim: usize,
    pub lo: f64,
    pub hi: f64,
}

impl GridBox {
    pub fn new(dim: usize, lo: f64, hi: f64) -> Self {
        GridBox { dim, lo, hi }
    }

    pub fn symmetric(dim: usize, half_width: f64) -> Self {
        GridBox {
            dim,
            lo: -half_width,
            hi: half_width,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    dim_in: usize,
    dim_out: usize,
    lo: f64,
    hi: f64,
    res: usize,
    values: Vec<f64>,
    support: Vec<bool>,
}

impl GridField {
    /// Builds a field from raw values. The support mask is derived from the
    /// values; the boundary-layer condition is checked by [`make_field`] and
    /// [`GridField::check_boundary_layer`], not here.
    pub fn new(grid: GridBox, res: usize, dim_out: usize, values: Vec<f64>) -> Result<Self> {
        if grid.dim == 0 || dim_out == 0 {
            return Err(Error::param("field dimensions must be positive"));
        }
        if !res.is_power_of_two() || res < 2 {
            return Err(Error::param(format!("res = {res} must be a power of two >= 2")));
        }
        if !(grid.hi > grid.lo) || !grid.lo.is_finite() || !grid.hi.is_finite() {
            return Err(Error::param("box must satisfy lo < hi"));
        }
        let expected = res.pow(grid.dim as u32) * dim_out;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("field values must be finite"));
        }
        let mut f = GridField {
            dim_in: grid.dim,
            dim_out,
            lo: grid.lo,
            hi: grid.hi,
            res,
            values,
            support: Vec::new(),
        };
        f.support = f.compute_support();
        Ok(f)
    }

    pub fn zeros(grid: GridBox, res: usize, dim_out: usize) -> Result<Self> {
        Self::new(grid, res, dim_out, vec![0.0; res.pow(grid.dim as u32) * dim_out])
    }

    fn compute_support(&self) -> Vec<bool> {
        let m = self.dim_out;
        let max = self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let tol = SUPPORT_TOL * max;
        self.values
            .chunks(m)
            .map(|c| max > 0.0 && c.iter().any(|v| v.abs() > tol))
            .collect()
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn grid_box(&self) -> GridBox {
        GridBox::new(self.dim_in, self.lo, self.hi)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.res - 1) as f64
    }

    /// Volume of one grid cell, `h^n`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim_in as i32)
    }

    pub fn num_points(&self) -> usize {
        self.res.pow(self.dim_in as u32)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn support_mask(&self) -> &[bool] {
        &self.support
    }

    /// Values at grid point `idx`.
    pub fn at(&self, idx: usize) -> &[f64] {
        &self.values[idx * self.dim_out..(idx + 1) * self.dim_out]
    }

    /// One output component as a scalar array.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(self.dim_out).copied().collect()
    }

    /// Grid multi-index of a flat index (slowest axis first).
    pub fn multi_index(&self, mut idx: usize, out: &mut [usize]) {
        for a in (0..self.dim_in).rev() {
            out[a] = idx % self.res;
            idx /= self.res;
        }
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().fold(0, |acc, &k| acc * self.res + k)
    }

    /// Coordinates of grid point `idx`.
    pub fn point(&self, idx: usize, out: &mut [f64]) {
        let h = self.spacing();
        let mut idx = idx;
        for a in (0..self.dim_in).rev() {
            out[a] = self.lo + (idx % self.res) as f64 * h;
            idx /= self.res;
        }
    }

    pub fn coordinate(&self, k: usize) -> f64 {
        self.lo + k as f64 * self.spacing()
    }

    /// Nearest grid index to `x` along one axis, if inside.
    pub fn nearest_index(&self, x: f64) -> Option<usize> {
        let u = ((x - self.lo) / self.spacing()).round();
        (u >= 0.0 && u <= (self.res - 1) as f64).then_some(u as usize)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().all(|v| *v >= self.lo && *v <= self.hi)
    }

    /// Multilinear interpolation; points outside the box evaluate to 0.
    pub fn interpolate(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if !self.contains(x) {
            return;
        }
        let n = self.dim_in;
        let h = self.spacing();
        let mut base = [0usize; 8];
        let mut frac = [0.0f64; 8];
        for a in 0..n {
            let u = (x[a] - self.lo) / h;
            let k = (u.floor() as usize).min(self.res - 2);
            base[a] = k;
            frac[a] = u - k as f64;
        }
        let mut multi = [0usize; 8];
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            for a in 0..n {
                let bit = corner >> a & 1;
                multi[a] = base[a] + bit;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if w == 0.0 {
                continue;
            }
            let idx = self.flat_index(&multi[..n]);
            for (o, v) in out.iter_mut().zip(self.at(idx)) {
                *o += w * v;
            }
        }
    }

    /// Discrete `L_q` norm `(Σ hⁿ ‖v‖_Y^q)^{1/q}`.
    pub fn lq_norm(&self, q: f64, target: TargetNorm) -> f64 {
        let cell = self.cell_volume();
        let terms: Vec<f64> = self
            .values
            .par_chunks(self.dim_out)
            .map(|c| target.norm(c).powf(q))
            .collect();
        (cell * rng::pairwise_sum(&terms)).powf(1.0 / q)
    }

    /// `Σ hⁿ v` per component.
    pub fn integral(&self) -> Vec<f64> {
        let cell = self.cell_volume();
        (0..self.dim_out)
            .map(|c| cell * rng::pairwise_sum(&self.component(c)))
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Same grid, new values.
    pub fn with_values(&self, dim_out: usize, values: Vec<f64>) -> Result<GridField> {
        GridField::new(self.grid_box(), self.res, dim_out, values)
    }

    /// Linear combination `a·self + b·other` on a shared grid.
    pub fn axpby(&self, a: f64, other: &GridField, b: f64) -> Result<GridField> {
        if self.values.len() != other.values.len() || self.res != other.res {
            return Err(Error::param("fields live on different grids"));
        }
        let v = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        self.with_values(self.dim_out, v)
    }

    /// Translates the values by whole grid cells (positive = towards `hi`).
    pub fn shift_cells(&self, cells: &[i64]) -> Result<GridField> {
        if cells.len() != self.dim_in {
            return Err(Error::DimensionMismatch {
                expected: self.dim_in,
                got: cells.len(),
            });
        }
        let m = self.dim_out;
        let mut out = vec![0.0; self.values.len()];
        let mut multi = vec![0usize; self.dim_in];
        let mut target = vec![0usize; self.dim_in];
        for idx in 0..self.num_points() {
            if !self.support[idx] {
                continue;
            }
            self.multi_index(idx, &mut multi);
            for a in 0..self.dim_in {
                let k = multi[a] as i64 + cells[a];
                if k < 0 || k >= self.res as i64 {
                    return Err(Error::param("shift moves the support out of the box"));
                }
                target[a] = k as usize;
            }
            let t = self.flat_index(&target);
            out[t * m..(t + 1) * m].copy_from_slice(self.at(idx));
        }
        self.with_values(m, out)
    }

    /// Grid points per side of the boundary layer that must stay empty.
    pub fn boundary_layer(&self) -> usize {
        (self.res / 8).max(1)
    }

    /// Fails when the field is non-negligible inside the boundary layer of
    /// width `res/8`.
    pub fn check_boundary_layer(&self) -> Result<()> {
        let layer = self.boundary_layer();
        let mut multi = vec![0usize; self.dim_in];
        let mut extent = 0.0f64;
        let mut touches = false;
        let center = 0.5 * (self.lo + self.hi);
        let mut x = vec![0.0; self.dim_in];
        let tol = BOUNDARY_TOL * self.max_abs();
        for idx in 0..self.num_points() {
            if !self.at(idx).iter().any(|v| v.abs() > tol) {
                continue;
            }
            self.multi_index(idx, &mut multi);
            self.point(idx, &mut x);
            for a in 0..self.dim_in {
                extent = extent.max((x[a] - center).abs());
                if multi[a] < layer || multi[a] >= self.res - layer {
                    touches = true;
                }
            }
        }
        if touches {
            let half = 0.5 * (self.hi - self.lo);
            let need = extent * half / (half - layer as f64 * self.spacing());
            return Err(Error::param(format!(
                "support reaches the boundary layer of box [{}, {}]^{} (support extends {:.4} from the centre); \
                 a box of half-width at least {:.4} is required",
                self.lo, self.hi, self.dim_in, extent, need
            )));
        }
        Ok(())
    }

    /// `hⁿ · #support`.
    pub fn support_volume(&self) -> f64 {
        self.cell_volume() * self.support.iter().filter(|s| **s).count() as f64
    }

    fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    /// Writes the binary layout and a JSON sidecar at `path.json`.
    pub fn write(&self, path: &Path, meta: Option<(&str, f64)>) -> Result<()> {
        let mut buf = Vec::with_capacity(40 + 8 * self.values.len());
        buf.extend_from_slice(&(self.dim_in as u64).to_le_bytes());
        buf.extend_from_slice(&(self.dim_out as u64).to_le_bytes());
        buf.extend_from_slice(&self.lo.to_le_bytes());
        buf.extend_from_slice(&self.hi.to_le_bytes());
        buf.extend_from_slice(&(self.res as u64).to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        let side = Sidecar {
            n: self.dim_in,
            m: self.dim_out,
            box_lo: self.lo,
            box_hi: self.hi,
            res: self.res,
            spacing: self.spacing(),
            kind: meta.map(|m| m.0.to_string()),
            t: meta.map(|m| m.1),
            format_version: FIELD_FORMAT_VERSION,
        };
        std::fs::write(Self::sidecar_path(path), serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<GridField> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        if buf.len() < 40 {
            return Err(Error::Format("header truncated".into()));
        }
        let word = |i: usize| -> [u8; 8] { buf[8 * i..8 * i + 8].try_into().expect("8 bytes") };
        let n = u64::from_le_bytes(word(0)) as usize;
        let m = u64::from_le_bytes(word(1)) as usize;
        let lo = f64::from_le_bytes(word(2));
        let hi = f64::from_le_bytes(word(3));
        let res = u64::from_le_bytes(word(4)) as usize;
        if n == 0 || n > 6 || m == 0 || !(2..=(1 << 16)).contains(&res) {
            return Err(Error::Format(format!("implausible header n={n} m={m} res={res}")));
        }
        let count = res.pow(n as u32) * m;
        if buf.len() != 40 + 8 * count {
            return Err(Error::Format(format!(
                "expected {} payload bytes, found {}",
                8 * count,
                buf.len() - 40
            )));
        }
        let values = (0..count).map(|i| f64::from_le_bytes(word(5 + i))).collect();
        GridField::new(GridBox::new(n, lo, hi), res, m, values).map_err(|e| Error::Format(e.to_string()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    n: usize,
    m: usize,
    box_lo: f64,
    box_hi: f64,
    res: usize,
    spacing: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<f64>,
    format_version: u32,
}

fn default_amplitudes() -> Vec<f64> {
    vec![1.0]
}

fn euclidean_descriptor(n: usize) -> SpaceDescriptor {
    NormedSpace::euclidean(n).descriptor()
}

/// Test-function generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TestFunctionSpec {
    /// `a_j · exp(-|x - c|² / 4s)`.
    GaussianBump {
        #[serde(default)]
        center: Option<Vec<f64>>,
        s: f64,
        #[serde(default = "default_amplitudes")]
        amplitudes: Vec<f64>,
    },
    /// `a_j · exp(1 - 1/(1 - |x-c|²/r²))` inside the ball of radius `r`.
    CompactBump {
        #[serde(default)]
        center: Option<Vec<f64>>,
        radius: f64,
        #[serde(default = "default_amplitudes")]
        amplitudes: Vec<f64>,
    },
    /// `a_j · max(0, r - ‖x - c‖_X)`, mollified at scale `2h`.
    SmoothedCone {
        #[serde(default)]
        center: Option<Vec<f64>>,
        radius: f64,
        #[serde(default)]
        space: Option<SpaceDescriptor>,
        #[serde(default = "default_amplitudes")]
        amplitudes: Vec<f64>,
    },
    /// Seeded random cosines under a Gaussian envelope `exp(-|x|²/4s)`.
    RandomBandlimited {
        seed: u64,
        modes: usize,
        max_frequency: f64,
        envelope: f64,
        #[serde(default = "one")]
        dim_out: usize,
    },
    /// `(c + A x) · φ(|x|)` with `φ = 1` on the plateau `|x| <= plateau` and a
    /// smooth taper to 0 at `plateau + taper`.
    CoordinateAffine {
        value: Vec<f64>,
        slope: Vec<Vec<f64>>,
        plateau: f64,
        taper: f64,
    },
    /// `a_j · ‖x‖_X` (not compactly supported; meant as an inner function).
    NormValue {
        #[serde(default)]
        space: Option<SpaceDescriptor>,
        #[serde(default = "default_amplitudes")]
        amplitudes: Vec<f64>,
    },
    /// Global extension of `inner` restricted to `B_X`: `F = f - f(0)` on
    /// `B_X` and `max(0, n+1-n‖x‖)·(f(x/‖x‖) - f(0))` outside.
    BallExtension {
        inner: Box<TestFunctionSpec>,
        #[serde(default)]
        space: Option<SpaceDescriptor>,
    },
    /// `inner(λ x) / λ`.
    Dilated {
        inner: Box<TestFunctionSpec>,
        lambda: f64,
    },
    /// `inner` convolved with a Gaussian of standard deviation `2h`.
    Mollified { inner: Box<TestFunctionSpec> },
}

fn one() -> usize {
    1
}

type Evaluator = Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

fn smooth_step(u: f64) -> f64 {
    // C^∞ transition from 1 (u <= 0) to 0 (u >= 1)
    if u <= 0.0 {
        return 1.0;
    }
    if u >= 1.0 {
        return 0.0;
    }
    let a = (-1.0 / (1.0 - u)).exp();
    let b = (-1.0 / u).exp();
    a / (a + b)
}

fn check_center(center: &Option<Vec<f64>>, n: usize) -> Result<Vec<f64>> {
    match center {
        None => Ok(vec![0.0; n]),
        Some(c) if c.len() == n => Ok(c.clone()),
        Some(c) => Err(Error::DimensionMismatch {
            expected: n,
            got: c.len(),
        }),
    }
}

fn space_of(desc: &Option<SpaceDescriptor>, n: usize) -> Result<NormedSpace> {
    let d = desc.clone().unwrap_or_else(|| euclidean_descriptor(n));
    if d.dim != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: d.dim,
        });
    }
    NormedSpace::from_descriptor(&d)
}

impl TestFunctionSpec {
    /// Number of output components.
    pub fn dim_out(&self) -> usize {
        match self {
            TestFunctionSpec::GaussianBump { amplitudes, .. }
            | TestFunctionSpec::CompactBump { amplitudes, .. }
            | TestFunctionSpec::SmoothedCone { amplitudes, .. }
            | TestFunctionSpec::NormValue { amplitudes, .. } => amplitudes.len(),
            TestFunctionSpec::RandomBandlimited { dim_out, .. } => *dim_out,
            TestFunctionSpec::CoordinateAffine { value, .. } => value.len(),
            TestFunctionSpec::BallExtension { inner, .. }
            | TestFunctionSpec::Dilated { inner, .. }
            | TestFunctionSpec::Mollified { inner } => inner.dim_out(),
        }
    }

    /// Whether the sampled field is smoothed at scale `2h` after sampling.
    pub fn needs_mollification(&self) -> bool {
        match self {
            TestFunctionSpec::SmoothedCone { .. } | TestFunctionSpec::Mollified { .. } => true,
            TestFunctionSpec::BallExtension { inner, .. } | TestFunctionSpec::Dilated { inner, .. } => {
                inner.needs_mollification()
            }
            _ => false,
        }
    }

    /// Pointwise evaluator on ℝⁿ (before any mollification).
    pub fn evaluator(&self, n: usize) -> Result<Evaluator> {
        match self {
            TestFunctionSpec::GaussianBump { center, s, amplitudes } => {
                if !(*s > 0.0) {
                    return Err(Error::param("gaussian-bump needs s > 0"));
                }
                let c = check_center(center, n)?;
                let (s, a) = (*s, amplitudes.clone());
                Ok(Box::new(move |x, out| {
                    let r2: f64 = x.iter().zip(&c).map(|(p, q)| (p - q) * (p - q)).sum();
                    let e = (-r2 / (4.0 * s)).exp();
                    out.iter_mut().zip(&a).for_each(|(o, a)| *o = a * e);
                }))
            }
            TestFunctionSpec::CompactBump { center, radius, amplitudes } => {
                if !(*radius > 0.0) {
                    return Err(Error::param("compact-bump needs radius > 0"));
                }
                let c = check_center(center, n)?;
                let (r, a) = (*radius, amplitudes.clone());
                Ok(Box::new(move |x, out| {
                    let u2: f64 = x.iter().zip(&c).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / (r * r);
                    let e = if u2 < 1.0 { (1.0 - 1.0 / (1.0 - u2)).exp() } else { 0.0 };
                    out.iter_mut().zip(&a).for_each(|(o, a)| *o = a * e);
                }))
            }
            TestFunctionSpec::SmoothedCone {
                center,
                radius,
                space,
                amplitudes,
            } => {
                let c = check_center(center, n)?;
                let sp = space_of(space, n)?;
                let (r, a) = (*radius, amplitudes.clone());
                Ok(Box::new(move |x, out| {
                    let d: Vec<f64> = x.iter().zip(&c).map(|(p, q)| p - q).collect();
                    let v = (r - sp.norm_unchecked(&d)).max(0.0);
                    out.iter_mut().zip(&a).for_each(|(o, a)| *o = a * v);
                }))
            }
            TestFunctionSpec::RandomBandlimited {
                seed,
                modes,
                max_frequency,
                envelope,
                dim_out,
            } => {
                if *modes == 0 || !(*envelope > 0.0) || !(*max_frequency > 0.0) {
                    return Err(Error::param("random-bandlimited needs modes, envelope, max_frequency > 0"));
                }
                let m = *dim_out;
                let mut r = rng::stream(*seed, rng::tags::FIELD, 0);
                let mut freqs = Vec::with_capacity(*modes);
                for _ in 0..*modes {
                    let mut w = vec![0.0; n];
                    crate::spaces::draw_sphere(&mut r, &mut w);
                    let rad = max_frequency * r.random::<f64>().powf(1.0 / n as f64);
                    w.iter_mut().for_each(|v| *v *= rad);
                    let phase = 2.0 * std::f64::consts::PI * r.random::<f64>();
                    let amps: Vec<f64> = (0..m)
                        .map(|_| r.sample::<f64, _>(StandardNormal) / (*modes as f64).sqrt())
                        .collect();
                    freqs.push((w, phase, amps));
                }
                let s = *envelope;
                Ok(Box::new(move |x, out| {
                    let r2: f64 = x.iter().map(|v| v * v).sum();
                    let e = (-r2 / (4.0 * s)).exp();
                    out.iter_mut().for_each(|o| *o = 0.0);
                    for (w, ph, amps) in &freqs {
                        let c = (w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + ph).cos();
                        for (o, a) in out.iter_mut().zip(amps) {
                            *o += a * c;
                        }
                    }
                    out.iter_mut().for_each(|o| *o *= e);
                }))
            }
            TestFunctionSpec::CoordinateAffine {
                value,
                slope,
                plateau,
                taper,
            } => {
                if slope.len() != value.len() || slope.iter().any(|r| r.len() != n) {
                    return Err(Error::param("coordinate-affine slope must be m x n"));
                }
                if !(*taper > 0.0) || !(*plateau >= 0.0) {
                    return Err(Error::param("coordinate-affine needs plateau >= 0, taper > 0"));
                }
                let (c, a, p, w) = (value.clone(), slope.clone(), *plateau, *taper);
                Ok(Box::new(move |x, out| {
                    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let phi = smooth_step((r - p) / w);
                    for (j, o) in out.iter_mut().enumerate() {
                        let lin: f64 = a[j].iter().zip(x).map(|(s, v)| s * v).sum();
                        *o = phi * (c[j] + lin);
                    }
                }))
            }
            TestFunctionSpec::NormValue { space, amplitudes } => {
                let sp = space_of(space, n)?;
                let a = amplitudes.clone();
                Ok(Box::new(move |x, out| {
                    let v = sp.norm_unchecked(x);
                    out.iter_mut().zip(&a).for_each(|(o, a)| *o = a * v);
                }))
            }
            TestFunctionSpec::BallExtension { inner, space } => {
                let sp = space_of(space, n)?;
                let f = inner.evaluator(n)?;
                let m = inner.dim_out();
                let mut f0 = vec![0.0; m];
                f(&vec![0.0; n], &mut f0);
                let nf = n as f64;
                Ok(Box::new(move |x, out| {
                    let r = sp.norm_unchecked(x);
                    if r <= 1.0 {
                        f(x, out);
                        out.iter_mut().zip(&f0).for_each(|(o, z)| *o -= z);
                    } else {
                        let w = (nf + 1.0 - nf * r).max(0.0);
                        if w == 0.0 {
                            out.iter_mut().for_each(|o| *o = 0.0);
                            return;
                        }
                        let y: Vec<f64> = x.iter().map(|v| v / r).collect();
                        f(&y, out);
                        out.iter_mut().zip(&f0).for_each(|(o, z)| *o = w * (*o - z));
                    }
                }))
            }
            TestFunctionSpec::Dilated { inner, lambda } => {
                if !(*lambda > 0.0) {
                    return Err(Error::param("dilation factor must be positive"));
                }
                let f = inner.evaluator(n)?;
                let l = *lambda;
                Ok(Box::new(move |x, out| {
                    let y: Vec<f64> = x.iter().map(|v| v * l).collect();
                    f(&y, out);
                    out.iter_mut().for_each(|o| *o /= l);
                }))
            }
            TestFunctionSpec::Mollified { inner } => inner.evaluator(n),
        }
    }
}

/// Samples `spec` on the grid, mollifies when the spec asks for it and checks
/// that the support stays clear of the boundary layer.
pub fn make_field(spec: &TestFunctionSpec, grid: GridBox, res: usize) -> Result<GridField> {
    let field = sample_spec(spec, grid, res)?;
    field.check_boundary_layer()?;
    Ok(field)
}

/// As [`make_field`] without the boundary-layer check.
pub fn sample_spec(spec: &TestFunctionSpec, grid: GridBox, res: usize) -> Result<GridField> {
    if res < 32 {
        return Err(Error::param(format!("res = {res} must be at least 32")));
    }
    let m = spec.dim_out();
    if m == 0 {
        return Err(Error::param("target dimension must be positive"));
    }
    let eval = spec.evaluator(grid.dim)?;
    let proto = GridField::zeros(grid, res, m)?;
    let n = grid.dim;
    let mut values = vec![0.0; proto.num_points() * m];
    values.par_chunks_mut(m).enumerate().for_each(|(idx, out)| {
        let mut x = [0.0f64; 8];
        proto.point(idx, &mut x[..n]);
        eval(&x[..n], out);
    });
    let field = proto.with_values(m, values)?;
    if spec.needs_mollification() {
        let h = field.spacing();
        // standard deviation 2h per coordinate: 2t = 4h²
        let smooth = crate::heat::heat_convolve_unchecked(&field, 2.0 * h * h);
        return Ok(smooth);
    }
    Ok(field)
}

/// Discrete Lipschitz constant over axis and diagonal neighbour pairs,
/// `max ‖f(x) - f(y)‖_Y / ‖x - y‖_X`.
pub fn lipschitz_constant(f: &GridField, space: &NormedSpace, target: TargetNorm) -> Result<f64> {
    if space.dim() != f.dim_in() {
        return Err(Error::DimensionMismatch {
            expected: f.dim_in(),
            got: space.dim(),
        });
    }
    let n = f.dim_in();
    let h = f.spacing();
    // lexicographically positive offsets in {-1,0,1}^n
    let mut offsets: Vec<(Vec<i64>, f64)> = Vec::new();
    for code in 0..3usize.pow(n as u32) {
        let mut c = code;
        let off: Vec<i64> = (0..n)
            .map(|_| {
                let d = (c % 3) as i64 - 1;
                c /= 3;
                d
            })
            .collect();
        if off.iter().find(|d| **d != 0).is_some_and(|d| *d > 0) {
            let disp: Vec<f64> = off.iter().map(|d| *d as f64 * h).collect();
            offsets.push((off, space.norm_unchecked(&disp)));
        }
    }
    let m = f.dim_out();
    let res = f.res() as i64;
    let best = (0..f.num_points())
        .into_par_iter()
        .map(|idx| {
            let mut multi = vec![0usize; n];
            let mut other = vec![0usize; n];
            let mut diff = vec![0.0; m];
            f.multi_index(idx, &mut multi);
            let mut best = 0.0f64;
            for (off, dist) in &offsets {
                let mut inside = true;
                for a in 0..n {
                    let k = multi[a] as i64 + off[a];
                    if k < 0 || k >= res {
                        inside = false;
                        break;
                    }
                    other[a] = k as usize;
                }
                if !inside {
                    continue;
                }
                let j = f.flat_index(&other);
                for ((d, a), b) in diff.iter_mut().zip(f.at(idx)).zip(f.at(j)) {
                    *d = a - b;
                }
                best = best.max(target.norm(&diff) / dist);
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    Ok(best)
}

/// `hⁿ · count(support_mask)`.
pub fn support_volume(f: &GridField) -> f64 {
    f.support_volume()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bump1d() -> TestFunctionSpec {
        TestFunctionSpec::GaussianBump {
            center: None,
            s: 0.25,
            amplitudes: vec![1.0],
        }
    }

    #[test]
    fn gaussian_bump_peak() {
        let f = make_field(&bump1d(), GridBox::symmetric(1, 8.0), 256).unwrap();
        let max = f.values().iter().copied().fold(f64::MIN, f64::max);
        // grid with even res has no node at 0; peak is e^{-(h/2)²}
        let h = f.spacing();
        assert_relative_eq!(max, (-(h / 2.0).powi(2)).exp(), epsilon = 1e-14);
        let f = make_field(&bump1d(), GridBox::new(1, -8.0, 8.0 + 16.0 / 254.0), 256).unwrap();
        let max = f.values().iter().copied().fold(f64::MIN, f64::max);
        assert_relative_eq!(max, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn rejects_small_res_and_boundary_contact() {
        assert!(make_field(&bump1d(), GridBox::symmetric(1, 8.0), 16).is_err());
        let wide = TestFunctionSpec::GaussianBump {
            center: None,
            s: 4.0,
            amplitudes: vec![1.0],
        };
        let err = make_field(&wide, GridBox::symmetric(1, 8.0), 256).unwrap_err();
        assert!(err.to_string().contains("half-width at least"), "{err}");
    }

    #[test]
    fn random_bandlimited_is_seeded() {
        let spec = TestFunctionSpec::RandomBandlimited {
            seed: 3,
            modes: 12,
            max_frequency: 3.0,
            envelope: 0.5,
            dim_out: 2,
        };
        let g = GridBox::symmetric(2, 10.0);
        let a = make_field(&spec, g, 64).unwrap();
        let b = make_field(&spec, g, 64).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(a.dim_out(), 2);
    }

    #[test]
    fn affine_plateau_lipschitz() {
        let spec = TestFunctionSpec::CoordinateAffine {
            value: vec![0.5],
            slope: vec![vec![0.7, 0.7]],
            plateau: 2.0,
            taper: 1.0,
        };
        let f = make_field(&spec, GridBox::symmetric(2, 8.0), 128).unwrap();
        // restrict to the plateau
        let mut vals = f.values().to_vec();
        let mut x = [0.0; 2];
        for (i, v) in vals.iter_mut().enumerate() {
            f.point(i, &mut x);
            if x[0].abs().max(x[1].abs()) > 1.3 {
                *v = 0.0;
            }
        }
        let mut inner = vec![0.0; vals.len()];
        for (i, v) in inner.iter_mut().enumerate() {
            f.point(i, &mut x);
            *v = 0.5 + 0.7 * x[0] + 0.7 * x[1];
        }
        let plain = f.with_values(1, inner).unwrap();
        let l = lipschitz_constant(&plain, &NormedSpace::euclidean(2), TargetNorm::euclidean()).unwrap();
        // the gradient is parallel to a diagonal neighbour offset
        assert!((l - 0.98f64.sqrt()).abs() < 1e-10, "{l}");
        let zero = GridField::zeros(GridBox::symmetric(2, 1.0), 32, 1).unwrap();
        assert_eq!(lipschitz_constant(&zero, &NormedSpace::euclidean(2), TargetNorm::euclidean()).unwrap(), 0.0);
        assert_eq!(zero.support_volume(), 0.0);
    }

    #[test]
    fn cone_lipschitz_converges_from_below() {
        let spec = TestFunctionSpec::SmoothedCone {
            center: None,
            radius: 1.0,
            space: None,
            amplitudes: vec![1.0],
        };
        let mut prev = 0.0;
        let mut defects = vec![];
        for res in [64usize, 128, 256] {
            let f = make_field(&spec, GridBox::symmetric(2, 4.0), res).unwrap();
            let l = lipschitz_constant(&f, &NormedSpace::euclidean(2), TargetNorm::euclidean()).unwrap();
            assert!(l <= 1.0 + 1e-9, "{l}");
            assert!(l >= prev);
            defects.push(1.0 - l);
            prev = l;
        }
        // defect roughly halves with h
        assert!(defects[2] < 0.75 * defects[1] && defects[1] < 0.75 * defects[0], "{defects:?}");
    }

    #[test]
    fn compact_bump_support() {
        let spec = TestFunctionSpec::CompactBump {
            center: None,
            radius: 1.0,
            amplitudes: vec![1.0],
        };
        // h = 1/16 on [-4, 4 - ...]: choose res 128 and hi so that h = 1/16
        let g = GridBox::new(1, -4.0, -4.0 + 127.0 / 16.0);
        let f = make_field(&spec, g, 128).unwrap();
        assert!((f.support_volume() - 2.0).abs() <= 1.0 / 16.0, "{}", f.support_volume());
    }

    #[test]
    fn plateau_area() {
        let r = 2.0 / std::f64::consts::PI.sqrt();
        let spec = TestFunctionSpec::CoordinateAffine {
            value: vec![1.0],
            slope: vec![vec![0.0, 0.0]],
            plateau: r - 1e-9,
            taper: 1e-9,
        };
        let f = make_field(&spec, GridBox::symmetric(2, 4.0), 256).unwrap();
        let h = f.spacing();
        assert!((f.support_volume() - 4.0).abs() <= 4.0 * h, "{}", f.support_volume());
    }

    #[test]
    fn binary_round_trip() {
        let f = make_field(&bump1d(), GridBox::symmetric(1, 8.0), 64).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        f.write(&p, Some(("heat", 0.5))).unwrap();
        assert_eq!(GridField::read(&p).unwrap(), f);
        let side: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("f.bin.json")).unwrap()).unwrap();
        assert_eq!(side["t"], 0.5);
        assert_eq!(side["res"], 64);
        std::fs::write(&p, [0u8; 12]).unwrap();
        assert!(matches!(GridField::read(&p), Err(Error::Format(_))));
    }

    #[test]
    fn shift_and_interpolate() {
        let f = make_field(&bump1d(), GridBox::symmetric(2, 8.0), 64).unwrap();
        let g = f.shift_cells(&[2, -1]).unwrap();
        let h = f.spacing();
        let mut a = [0.0];
        let mut b = [0.0];
        f.interpolate(&[0.3, 0.1], &mut a);
        g.interpolate(&[0.3 + 2.0 * h, 0.1 - h], &mut b);
        assert!((a[0] - b[0]).abs() < 1e-12);
        g.interpolate(&[100.0, 0.0], &mut b);
        assert_eq!(b[0], 0.0);
        // exact at nodes
        let mut x = [0.0; 2];
        f.point(1000, &mut x);
        f.interpolate(&x, &mut a);
        assert!((a[0] - f.at(1000)[0]).abs() < 1e-14);
    }
}
