//! Command-line front end: configuration, dispatch and report emission.
//!
//! Every subcommand reads an optional JSON config (`--config`), overlays the
//! flags given on the command line, validates the result against its schema
//! (unknown keys are rejected) and emits one report. Reports embed the fully
//! resolved configuration and [`ARTIFACT_VERSION`]; they carry no timestamps,
//! so identical inputs give byte-identical output.

use crate::dorronsoro::{self, DorroConfig, GammaChoice};
use crate::error::{Error, Result};
use crate::fields::{make_field, GridBox, GridField, TargetNorm, TestFunctionSpec};
use crate::heat::{self, SemigroupKind};
use crate::lps::{self, ScaleGrid};
use crate::spaces::{self, Exponent, NormedSpace, SpaceDescriptor};
use crate::{spectral, transport, ARTIFACT_VERSION};
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::io::Write;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "heatlab", version, about = "Heat-flow quantitative differentiation laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON configuration file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for the report (and field files); stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Averaged invariants M, M_p, I_q, b, volume and optionally L_X.
    Invariants {
        /// Space as JSON or shorthand `lp:<n>:<p>` (`p` may be `inf`).
        #[arg(long)]
        space: Option<String>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Heat or Poisson evolute of a field, with an optional Taylor map.
    Evolute {
        #[arg(long)]
        t: Option<f64>,
        #[arg(long, value_enum)]
        kind: Option<EvoluteKind>,
    },
    /// Littlewood–Paley–Stein G-functionals.
    Gfunction {
        #[arg(long, value_enum)]
        functional: Option<GKind>,
        #[arg(long)]
        q: Option<f64>,
    },
    /// Multiscale Carleson functional (or its J split).
    Dorronsoro {
        #[arg(long)]
        space: Option<String>,
        #[arg(long)]
        q: Option<f64>,
        /// A number, `space` or `auto`.
        #[arg(long)]
        gamma: Option<String>,
        #[arg(long)]
        split: bool,
    },
    /// Local functional and affine approximation search.
    Local {
        #[arg(long)]
        space: Option<String>,
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Fourier-side kernel constants and the Poisson divergence scan.
    Spectral {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        gamma: Vec<f64>,
        #[arg(long)]
        divergence: bool,
    },
    /// Projection norm through half-ball Wasserstein distances.
    Wasserstein {
        #[arg(long)]
        space: Option<String>,
        #[arg(long)]
        atoms: Option<usize>,
        #[arg(long)]
        directions: Option<usize>,
    },
    /// Direct Carleson integral against its Fourier closed form.
    IdentityCheck {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        gamma: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvoluteKind {
    Heat,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GKind {
    Temporal,
    Spatial,
    Directional,
    Difference,
}

/// How the field is obtained: generated from a spec or read from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<TestFunctionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub res: Option<usize>,
}

impl FieldConfig {
    fn generated(spec: TestFunctionSpec, dim: usize, half_width: f64, res: usize) -> Self {
        FieldConfig {
            spec: Some(spec),
            path: None,
            dim: Some(dim),
            half_width: Some(half_width),
            res: Some(res),
        }
    }

    pub fn build(&self) -> Result<GridField> {
        match (&self.spec, &self.path) {
            (Some(spec), None) => {
                let dim = self.dim.ok_or_else(|| Error::config("field.dim", "required with a spec"))?;
                let half = self
                    .half_width
                    .ok_or_else(|| Error::config("field.half_width", "required with a spec"))?;
                let res = self.res.ok_or_else(|| Error::config("field.res", "required with a spec"))?;
                make_field(spec, GridBox::symmetric(dim, half), res)
            }
            (None, Some(path)) => {
                if self.dim.is_some() || self.half_width.is_some() || self.res.is_some() {
                    return Err(Error::config("field", "a field file carries its own grid"));
                }
                GridField::read(path)
            }
            _ => Err(Error::config("field", "give exactly one of spec and path")),
        }
    }
}

fn default_field() -> FieldConfig {
    FieldConfig::generated(
        TestFunctionSpec::GaussianBump {
            center: None,
            s: 0.05,
            amplitudes: vec![1.0],
        },
        1,
        4.0,
        512,
    )
}

/// `γ` as a number or one of the words `space` and `auto`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaSetting {
    Value(f64),
    Named(GammaWord),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaWord {
    Space,
    Auto,
}

impl GammaSetting {
    fn choice(self) -> GammaChoice {
        match self {
            GammaSetting::Value(g) => GammaChoice::Fixed(g),
            GammaSetting::Named(GammaWord::Space) => GammaChoice::Space,
            GammaSetting::Named(GammaWord::Auto) => GammaChoice::Auto,
        }
    }
}

fn euclidean(n: usize) -> SpaceDescriptor {
    NormedSpace::euclidean(n).descriptor()
}

macro_rules! defaults {
    ($($name:ident: $ty:ty = $val:expr;)*) => {
        $(fn $name() -> $ty { $val })*
    };
}

defaults! {
    d_samples: usize = 200_000;
    d_p_list: Vec<f64> = vec![1.0, 2.0];
    d_q_list: Vec<f64> = vec![2.0];
    d_starts: usize = 64;
    d_space2: SpaceDescriptor = euclidean(2);
    d_space1: SpaceDescriptor = euclidean(1);
    d_t: f64 = 0.01;
    d_heat: EvoluteKind = EvoluteKind::Heat;
    d_temporal: GKind = GKind::Temporal;
    d_q: f64 = 2.0;
    d_target: Exponent = Exponent::Finite(2.0);
    d_alpha: f64 = 3.0;
    d_per_decade_g: usize = 12;
    d_per_decade_d: usize = 48;
    d_gamma_space: GammaSetting = GammaSetting::Named(GammaWord::Space);
    d_stride: usize = 1;
    d_one: f64 = 1.0;
    d_n1: usize = 1;
    d_gammas: Vec<f64> = vec![0.1, 1.0, 10.0];
    d_cutoffs: Vec<f64> = vec![1e-1, 1e-2, 1e-3, 1e-4];
    d_square: SpaceDescriptor = SpaceDescriptor {
        dim: 2,
        kind: spaces::KindTag::Lp,
        p: Some(Exponent::Named(spaces::InfTag::Inf)),
        weights: None,
        facets: None,
        euclid_scale: None,
    };
    d_atoms: usize = 300;
    d_directions: usize = 64;
    d_local_r: f64 = 1e-3;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvariantsConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_space2")]
    pub space: SpaceDescriptor,
    #[serde(default = "d_samples")]
    pub samples: usize,
    #[serde(default = "d_p_list")]
    pub p: Vec<f64>,
    #[serde(default = "d_q_list")]
    pub q: Vec<f64>,
    #[serde(default = "d_starts")]
    pub ascent_starts: usize,
    #[serde(default)]
    pub isotropic: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvoluteConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_field")]
    pub field: FieldConfig,
    #[serde(default = "d_heat")]
    pub kind: EvoluteKind,
    #[serde(default = "d_t")]
    pub t: f64,
    /// Base point of the Taylor map of `H_{γt²}` at radius `t`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taylor_at: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taylor_gamma: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GFunctionConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_field")]
    pub field: FieldConfig,
    #[serde(default = "d_temporal")]
    pub functional: GKind,
    #[serde(default = "d_q")]
    pub q: f64,
    #[serde(default = "d_target")]
    pub target_p: Exponent,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<f64>>,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_per_decade_g")]
    pub per_decade: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DorronsoroConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_space1")]
    pub space: SpaceDescriptor,
    #[serde(default = "default_field")]
    pub field: FieldConfig,
    #[serde(default = "d_q")]
    pub q: f64,
    #[serde(default = "d_target")]
    pub target_p: Exponent,
    #[serde(default = "d_gamma_space")]
    pub gamma: GammaSetting,
    #[serde(default = "d_per_decade_d")]
    pub per_decade: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ball_samples: Option<usize>,
    #[serde(default = "d_stride")]
    pub x_stride: usize,
    #[serde(default = "d_samples")]
    pub invariant_samples: usize,
    #[serde(default = "d_one")]
    pub kappa: f64,
    #[serde(default = "d_one")]
    pub martingale_constant: f64,
    /// Report the Taylor and smoothing parts separately.
    #[serde(default)]
    pub split: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_space1")]
    pub space: SpaceDescriptor,
    #[serde(default = "default_field")]
    pub field: FieldConfig,
    #[serde(default = "d_q")]
    pub q: f64,
    #[serde(default = "d_target")]
    pub target_p: Exponent,
    #[serde(default = "d_gamma_space")]
    pub gamma: GammaSetting,
    /// Bottom radius of the scale integral.
    #[serde(default = "d_local_r")]
    pub r: f64,
    /// Run the affine search at this accuracy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub least_squares: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ball_samples: Option<usize>,
    #[serde(default = "d_samples")]
    pub invariant_samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_n1")]
    pub n: usize,
    #[serde(default = "d_gammas")]
    pub gammas: Vec<f64>,
    #[serde(default)]
    pub divergence: bool,
    #[serde(default = "d_cutoffs")]
    pub cutoffs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WassersteinConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_square")]
    pub space: SpaceDescriptor,
    #[serde(default = "d_atoms")]
    pub atoms: usize,
    #[serde(default = "d_directions")]
    pub directions: usize,
    #[serde(default = "d_samples")]
    pub invariant_samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentityConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_n1")]
    pub n: usize,
    #[serde(default = "d_one")]
    pub gamma: f64,
    /// Defaults to a Gaussian bump (n = 1) or a band-limited field (n ≥ 2).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ball_samples: Option<usize>,
}

/// Default field of the identity check in dimension `n`.
pub fn identity_field(n: usize) -> FieldConfig {
    match n {
        1 => default_field(),
        _ => FieldConfig::generated(
            TestFunctionSpec::RandomBandlimited {
                seed: 5,
                modes: 8,
                max_frequency: 3.0,
                envelope: 0.25,
                dim_out: 1,
            },
            n,
            8.0,
            if n == 2 { 128 } else { 32 },
        ),
    }
}

/// Acceptance tolerance of the identity check.
pub fn identity_tolerance(n: usize) -> f64 {
    if n == 1 {
        0.03
    } else {
        0.05
    }
}

/// Parses `lp:<n>:<p>` or a JSON descriptor.
pub fn parse_space(text: &str) -> Result<SpaceDescriptor> {
    let t = text.trim();
    if t.starts_with('{') {
        return parse_at::<SpaceDescriptor>(serde_json::from_str(t).map_err(|e| Error::config("space", e.to_string()))?)
            .map_err(|e| prefix(e, "space"));
    }
    let parts: Vec<&str> = t.split(':').collect();
    let bad = || Error::config("space", format!("expected lp:<n>:<p> or JSON, got {t:?}"));
    if parts.len() != 3 || parts[0] != "lp" {
        return Err(bad());
    }
    let n: usize = parts[1].parse().map_err(|_| bad())?;
    let p = if parts[2] == "inf" {
        f64::INFINITY
    } else {
        parts[2].parse().map_err(|_| bad())?
    };
    Ok(NormedSpace::lp(n, p).map_err(|e| Error::config("space.p", e.to_string()))?.descriptor())
}

fn prefix(e: Error, root: &str) -> Error {
    match e {
        Error::Config { path, message } if path == "." => Error::config(root, message),
        Error::Config { path, message } => Error::config(format!("{root}.{path}"), message),
        other => other,
    }
}

fn parse_at<T: DeserializeOwned>(v: Value) -> Result<T> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let path = e.path().to_string();
        Error::config(path, e.into_inner().to_string())
    })
}

fn space_from(d: &SpaceDescriptor) -> Result<NormedSpace> {
    NormedSpace::from_descriptor(d)
}

/// A report table for CSV emission.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

/// The outcome of one command.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Value,
    pub table: Table,
    /// Extra files to write next to the report when `--out` is given.
    pub fields: Vec<(String, GridField)>,
}

fn envelope(command: &str, config: &impl Serialize, result: Value) -> Result<Value> {
    Ok(json!({
        "artifact_version": ARTIFACT_VERSION,
        "command": command,
        "config": serde_json::to_value(config)?,
        "result": result,
    }))
}

fn run_invariants(c: &InvariantsConfig) -> Result<Outcome> {
    let space = space_from(&c.space)?;
    let mut table = Table::new(&["invariant", "parameter", "value", "std_error"]);
    let m = spaces::invariant_m_p(&space, 1.0, c.samples, c.seed)?;
    table.push(vec!["M".into(), "1".into(), num(m.value), num(m.std_error)]);
    let mut m_p = Vec::new();
    for &p in &c.p {
        let e = spaces::invariant_m_p(&space, p, c.samples, c.seed)?;
        table.push(vec!["M_p".into(), num(p), num(e.value), num(e.std_error)]);
        m_p.push(json!({"p": p, "estimate": e}));
    }
    let mut i_q = Vec::new();
    for &q in &c.q {
        let e = spaces::invariant_i_q(&space, q, c.samples, c.seed)?;
        table.push(vec!["I_q".into(), num(q), num(e.value), num(e.std_error)]);
        i_q.push(json!({"q": q, "estimate": e}));
    }
    let b = spaces::invariant_b(&space, c.ascent_starts, c.seed);
    table.push(vec!["b".into(), "".into(), num(b.value), num(b.std_error)]);
    let vol = spaces::volume(&space, c.samples, c.seed)?;
    table.push(vec!["volume".into(), "".into(), num(vol.value), num(vol.std_error)]);
    let iso = if c.isotropic {
        let r = spaces::isotropic_normalize(&space, c.samples, c.seed)?;
        table.push(vec![
            "L_X".into(),
            "".into(),
            num(r.isotropic_constant.value),
            num(r.isotropic_constant.std_error),
        ]);
        Some(r)
    } else {
        None
    };
    let result = json!({"m": m, "m_p": m_p, "i_q": i_q, "b": b, "volume": vol, "isotropic": iso});
    Ok(Outcome {
        report: envelope("invariants", c, result)?,
        table,
        fields: Vec::new(),
    })
}

fn grid_table(f: &GridField, names: &[&str]) -> Table {
    let n = f.dim_in();
    let mut header: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
    for c in 0..f.dim_out() {
        header.push(names.first().map_or(format!("v{c}"), |s| format!("{s}{c}")));
    }
    let mut t = Table {
        header,
        rows: Vec::with_capacity(f.num_points()),
    };
    let mut x = vec![0.0; n];
    for k in 0..f.num_points() {
        f.point(k, &mut x);
        let mut row: Vec<String> = x.iter().map(|v| num(*v)).collect();
        row.extend(f.at(k).iter().map(|v| num(*v)));
        t.push(row);
    }
    t
}

fn run_evolute(c: &EvoluteConfig) -> Result<Outcome> {
    let f = c.field.build()?;
    let kind = match c.kind {
        EvoluteKind::Heat => SemigroupKind::Heat,
        EvoluteKind::Poisson => SemigroupKind::Poisson,
    };
    let e = heat::Spectrum::new(&f).evolute(kind, c.t)?;
    let taylor = match &c.taylor_at {
        Some(x) => {
            let g = c.taylor_gamma.unwrap_or(1.0);
            Some(heat::taylor_evolute(&f, x, c.t, g)?)
        }
        None => None,
    };
    let v = &e.values;
    let result = json!({
        "kind": kind,
        "t": c.t,
        "input_l2": f.lq_norm(2.0, TargetNorm::euclidean()),
        "evolute_l2": v.lq_norm(2.0, TargetNorm::euclidean()),
        "evolute_max_abs": v.max_abs(),
        "taylor": taylor,
    });
    Ok(Outcome {
        report: envelope("evolute", c, result)?,
        table: grid_table(v, &["v"]),
        fields: vec![("evolute.bin".into(), v.clone())],
    })
}

fn per_scale_table(r: &lps::FunctionalReport) -> Table {
    let mut t = Table::new(&["t", "g"]);
    for (a, b) in &r.per_scale {
        t.push(vec![num(*a), num(*b)]);
    }
    t
}

fn run_gfunction(c: &GFunctionConfig) -> Result<Outcome> {
    let f = c.field.build()?;
    let grid = ScaleGrid::for_heat(&f, c.per_decade);
    let target = TargetNorm { p: c.target_p };
    let r = match c.functional {
        GKind::Temporal => lps::temporal_g(&f, c.q, target, &grid)?,
        GKind::Spatial => lps::spatial_div_g(&f, c.q, &grid, c.seed)?,
        GKind::Directional => {
            let z = c.z.clone().ok_or_else(|| Error::config("z", "directional needs a vector z"))?;
            lps::directional_g(&f, &z, c.q, target, &grid)?
        }
        GKind::Difference => {
            let shrunk = ScaleGrid::per_decade(grid.t_min, grid.t_max / c.alpha, c.per_decade)?;
            lps::difference_g(&f, c.alpha, c.q, target, &shrunk)?
        }
    };
    Ok(Outcome {
        table: per_scale_table(&r),
        report: envelope("gfunction", c, serde_json::to_value(&r)?)?,
        fields: Vec::new(),
    })
}

fn dorro_config(
    space: NormedSpace,
    q: f64,
    target: Exponent,
    gamma: GammaSetting,
    seed: u64,
    ball_samples: Option<usize>,
    invariant_samples: usize,
) -> DorroConfig {
    let mut d = DorroConfig::new(space, q);
    d.target = TargetNorm { p: target };
    d.gamma = gamma.choice();
    d.seed = seed;
    if let Some(b) = ball_samples {
        d.ball_samples = b;
    }
    d.invariant_samples = invariant_samples;
    d
}

fn run_dorronsoro(c: &DorronsoroConfig) -> Result<Outcome> {
    let f = c.field.build()?;
    let mut d = dorro_config(
        space_from(&c.space)?,
        c.q,
        c.target_p,
        c.gamma,
        c.seed,
        c.ball_samples,
        c.invariant_samples,
    );
    d.per_decade = c.per_decade;
    d.x_stride = c.x_stride;
    d.kappa = c.kappa;
    d.martingale_constant = c.martingale_constant;
    if c.split {
        let s = dorronsoro::j_split(&f, &d)?;
        let mut t = Table::new(&["part", "value", "discrete_value"]);
        for (name, v, d) in [
            ("total", s.total, s.discrete_total),
            ("taylor", s.j1, s.discrete_j1),
            ("smoothing", s.j2, s.discrete_j2),
        ] {
            t.push(vec![name.into(), num(v), num(d)]);
        }
        return Ok(Outcome {
            report: envelope("dorronsoro", c, serde_json::to_value(&s)?)?,
            table: t,
            fields: Vec::new(),
        });
    }
    let r = dorronsoro::carleson_functional(&f, &d)?;
    Ok(Outcome {
        table: per_scale_table(&r),
        report: envelope("dorronsoro", c, serde_json::to_value(&r)?)?,
        fields: Vec::new(),
    })
}

fn run_local(c: &LocalConfig) -> Result<Outcome> {
    let f = c.field.build()?;
    let mut d = dorro_config(
        space_from(&c.space)?,
        c.q,
        c.target_p,
        c.gamma,
        c.seed,
        c.ball_samples,
        c.invariant_samples,
    );
    d.least_squares = c.least_squares;
    let r = dorronsoro::local_functional(&f, &d, c.r)?;
    let search = match c.epsilon {
        Some(eps) => Some(dorronsoro::affine_search(&f, eps, &d)?),
        None => None,
    };
    Ok(Outcome {
        table: per_scale_table(&r),
        report: envelope("local", c, json!({"functional": r, "search": search}))?,
        fields: Vec::new(),
    })
}

fn run_spectral(c: &SpectralConfig) -> Result<Outcome> {
    let mut t = Table::new(&["n", "gamma", "k", "quadrature_error", "bound_rhs", "ratio"]);
    let mut ks = Vec::new();
    for &g in &c.gammas {
        let k = spectral::k_constant(c.n, g)?;
        t.push(vec![
            c.n.to_string(),
            num(g),
            num(k.k_value),
            num(k.quadrature_error),
            num(k.bound_rhs),
            num(k.ratio),
        ]);
        ks.push(k);
    }
    let divergence = if c.divergence {
        let g = c.gammas.first().copied().unwrap_or(1.0);
        Some(spectral::poisson_divergence_scan(c.n, g, &c.cutoffs)?)
    } else {
        None
    };
    let result = json!({
        "k": ks,
        "bound_constant": spectral::K_BOUND_CONSTANT,
        "divergence": divergence,
    });
    Ok(Outcome {
        report: envelope("spectral", c, result)?,
        table: t,
        fields: Vec::new(),
    })
}

fn run_wasserstein(c: &WassersteinConfig) -> Result<Outcome> {
    let space = space_from(&c.space)?;
    let iso = spaces::isotropic_normalize(&space, c.invariant_samples, c.seed)?;
    let l_x = iso.isotropic_constant.value;
    let r = transport::proj_norm_estimate(&iso.space, l_x, c.directions, c.atoms, c.seed)?;
    let n = space.dim();
    let mut header: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
    header.extend(["w1".to_string(), "ratio".to_string()]);
    let mut t = Table {
        header,
        rows: Vec::new(),
    };
    for row in &r.per_direction {
        let mut cells: Vec<String> = row.x.iter().map(|v| num(*v)).collect();
        cells.push(num(row.w1));
        cells.push(num(row.ratio));
        t.push(cells);
    }
    let result = json!({
        "proj_norm": r.proj_norm,
        "isotropic_constant": iso.isotropic_constant,
        "estimate": r,
    });
    Ok(Outcome {
        report: envelope("wasserstein", c, result)?,
        table: t,
        fields: Vec::new(),
    })
}

fn run_identity(c: &IdentityConfig) -> Result<Outcome> {
    if c.n == 0 {
        return Err(Error::config("n", "dimension must be positive"));
    }
    let fc = c.field.clone().unwrap_or_else(|| identity_field(c.n));
    let f = fc.build()?;
    if f.dim_in() != c.n {
        return Err(Error::config("field.dim", format!("field has dimension {}, not n = {}", f.dim_in(), c.n)));
    }
    let mut d = DorroConfig::new(NormedSpace::euclidean(c.n), 2.0);
    d.gamma = GammaChoice::Fixed(c.gamma);
    d.seed = c.seed;
    if let Some(b) = c.ball_samples {
        d.ball_samples = b;
    }
    let r = spectral::verify_heat_identity_with(&f, &d)?;
    let tol = identity_tolerance(c.n);
    let mut t = Table::new(&["n", "gamma", "lhs", "rhs", "rel_gap", "k"]);
    t.push(vec![c.n.to_string(), num(c.gamma), num(r.lhs), num(r.rhs), num(r.rel_gap), num(r.k_value)]);
    let mut result = serde_json::to_value(r)?;
    result["tolerance"] = json!(tol);
    result["pass"] = json!(r.rel_gap <= tol);
    let resolved = IdentityConfig {
        field: Some(fc),
        ..c.clone()
    };
    Ok(Outcome {
        report: envelope("identity-check", &resolved, result)?,
        table: t,
        fields: Vec::new(),
    })
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Invariants { .. } => "invariants",
        Command::Evolute { .. } => "evolute",
        Command::Gfunction { .. } => "gfunction",
        Command::Dorronsoro { .. } => "dorronsoro",
        Command::Local { .. } => "local",
        Command::Spectral { .. } => "spectral",
        Command::Wasserstein { .. } => "wasserstein",
        Command::IdentityCheck { .. } => "identity-check",
    }
}

fn set(map: &mut Map<String, Value>, key: &str, v: Option<impl Serialize>) -> Result<()> {
    if let Some(v) = v {
        map.insert(key.into(), serde_json::to_value(v)?);
    }
    Ok(())
}

fn gamma_flag(text: &str) -> Result<GammaSetting> {
    match text {
        "space" => Ok(GammaSetting::Named(GammaWord::Space)),
        "auto" => Ok(GammaSetting::Named(GammaWord::Auto)),
        _ => text
            .parse()
            .map(GammaSetting::Value)
            .map_err(|_| Error::config("gamma", format!("expected a number, space or auto, got {text:?}"))),
    }
}

/// Loads the config file, overlays the flags and validates the result.
pub fn resolve(cli: &Cli) -> Result<(String, Value)> {
    let name = command_name(&cli.command);
    let mut map = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
            let v: Value = serde_json::from_str(&text).map_err(|e| {
                Error::config(format!("(line {}, column {})", e.line(), e.column()), e.to_string())
            })?;
            match v {
                Value::Object(m) => m,
                _ => return Err(Error::config(".", "the config must be a JSON object")),
            }
        }
        None => Map::new(),
    };
    if let Some(cmd) = map.remove("command") {
        if cmd != Value::String(name.into()) {
            return Err(Error::config("command", format!("config is for {cmd}, not {name}")));
        }
    }
    set(&mut map, "seed", cli.seed)?;
    let space = |s: &Option<String>| s.as_deref().map(parse_space).transpose();
    match &cli.command {
        Command::Invariants { space: s, samples } => {
            set(&mut map, "space", space(s)?)?;
            set(&mut map, "samples", *samples)?;
        }
        Command::Evolute { t, kind } => {
            set(&mut map, "t", *t)?;
            set(&mut map, "kind", *kind)?;
        }
        Command::Gfunction { functional, q } => {
            set(&mut map, "functional", *functional)?;
            set(&mut map, "q", *q)?;
        }
        Command::Dorronsoro { space: s, q, gamma, split } => {
            set(&mut map, "space", space(s)?)?;
            set(&mut map, "q", *q)?;
            set(&mut map, "gamma", gamma.as_deref().map(gamma_flag).transpose()?)?;
            if *split {
                map.insert("split".into(), Value::Bool(true));
            }
        }
        Command::Local { space: s, r, epsilon } => {
            set(&mut map, "space", space(s)?)?;
            set(&mut map, "r", *r)?;
            set(&mut map, "epsilon", *epsilon)?;
        }
        Command::Spectral { n, gamma, divergence } => {
            set(&mut map, "n", *n)?;
            if !gamma.is_empty() {
                map.insert("gammas".into(), serde_json::to_value(gamma)?);
            }
            if *divergence {
                map.insert("divergence".into(), Value::Bool(true));
            }
        }
        Command::Wasserstein { space: s, atoms, directions } => {
            set(&mut map, "space", space(s)?)?;
            set(&mut map, "atoms", *atoms)?;
            set(&mut map, "directions", *directions)?;
        }
        Command::IdentityCheck { n, gamma } => {
            set(&mut map, "n", *n)?;
            set(&mut map, "gamma", *gamma)?;
        }
    }
    Ok((name.to_string(), Value::Object(map)))
}

/// Validates a resolved config and runs it.
pub fn execute(name: &str, config: Value) -> Result<Outcome> {
    match name {
        "invariants" => run_invariants(&parse_at(config)?),
        "evolute" => run_evolute(&parse_at(config)?),
        "gfunction" => run_gfunction(&parse_at(config)?),
        "dorronsoro" => run_dorronsoro(&parse_at(config)?),
        "local" => run_local(&parse_at(config)?),
        "spectral" => run_spectral(&parse_at(config)?),
        "wasserstein" => run_wasserstein(&parse_at(config)?),
        "identity-check" => run_identity(&parse_at(config)?),
        other => Err(Error::config("command", format!("unknown command {other}"))),
    }
}

/// Renders the outcome in the requested format.
pub fn render(outcome: &Outcome, format: Format) -> Result<String> {
    Ok(match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&outcome.report)?;
            s.push('\n');
            s
        }
        Format::Csv => outcome.table.to_csv(),
    })
}

fn run_cli(cli: &Cli) -> Result<()> {
    let (name, config) = resolve(cli)?;
    let outcome = execute(&name, config)?;
    let text = render(&outcome, cli.format)?;
    match &cli.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let ext = match cli.format {
                Format::Json => "json",
                Format::Csv => "csv",
            };
            std::fs::write(dir.join(format!("{name}.{ext}")), text)?;
            for (file, f) in &outcome.fields {
                f.write(&dir.join(file), None)?;
            }
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let run = || match run_cli(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    match cli.threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(run),
            Err(e) => {
                eprintln!("error: cannot start {t} threads: {e}");
                1
            }
        },
        None => run(),
    }
}
