use super::{NormKind, NormedSpace};
use crate::error::{Error, Result};
use crate::rng::{self, tags, StreamRng};
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};

/// Writes a uniform point of the Euclidean sphere `S^{n-1}` into `out`.
pub fn draw_sphere(rng: &mut StreamRng, out: &mut [f64]) {
    if out.len() == 1 {
        out[0] = if rng.random::<bool>() { 1.0 } else { -1.0 };
        return;
    }
    loop {
        let mut s = 0.0;
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
            s += *v * *v;
        }
        if s > 1e-300 {
            let inv = 1.0 / s.sqrt();
            for v in out.iter_mut() {
                *v *= inv;
            }
            return;
        }
    }
}

/// Writes a standard Gaussian vector into `out`.
pub fn draw_gaussian(rng: &mut StreamRng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

pub fn sample_sphere(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    rng::draw(count, seed, tags::SPHERE, |r| {
        let mut v = vec![0.0; dim];
        draw_sphere(r, &mut v);
        v
    })
}

enum Method {
    /// Independent generalized-Gamma coordinates with an exponential radial
    /// mixing variable.
    GeneralizedGamma { p: f64, gamma: Option<Gamma<f64>> },
    Rejection { radius: f64 },
}

/// Uniform sampler on the unit ball of a space, in Euclidean coordinates.
pub struct BallSampler {
    space: NormedSpace,
    method: Method,
    acceptance: f64,
}

/// Pilot proposals used to estimate the rejection acceptance rate.
const PILOT: usize = 1 << 20;

impl BallSampler {
    pub fn new(space: &NormedSpace, seed: u64) -> Result<Self> {
        match space.kind() {
            NormKind::Lp { p } | NormKind::WeightedLp { p, .. } => {
                let gamma = if p.is_finite() {
                    Some(Gamma::new(1.0 / p, 1.0).map_err(|e| Error::param(e.to_string()))?)
                } else {
                    None
                };
                Ok(BallSampler {
                    space: space.clone(),
                    method: Method::GeneralizedGamma { p: *p, gamma },
                    acceptance: 1.0,
                })
            }
            NormKind::Polytope { .. } => {
                let radius = space
                    .circumradius_exact()
                    .ok_or_else(|| Error::param("no circumradius for polytope"))?;
                let mut s = BallSampler {
                    space: space.clone(),
                    method: Method::Rejection { radius },
                    acceptance: 0.0,
                };
                let n = space.dim();
                let hits = rng::monte_carlo(PILOT, seed, tags::VOLUME, 1, |r, out| {
                    let mut y = vec![0.0; n];
                    s.propose(r, &mut y);
                    out[0] = if space.norm_unchecked(&y) <= 1.0 { 1.0 } else { 0.0 };
                });
                let rate = hits.mean[0];
                if rate < 1e-6 {
                    return Err(Error::RejectionCollapse { rate });
                }
                s.acceptance = rate;
                Ok(s)
            }
        }
    }

    pub fn space(&self) -> &NormedSpace {
        &self.space
    }

    /// Fraction of proposals accepted (1 for direct methods).
    pub fn acceptance(&self) -> f64 {
        self.acceptance
    }

    fn propose(&self, rng: &mut StreamRng, y: &mut [f64]) {
        let Method::Rejection { radius } = self.method else {
            unreachable!()
        };
        let n = y.len();
        draw_sphere(rng, y);
        let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
        for v in y.iter_mut() {
            *v *= r;
        }
    }

    /// Writes one uniform point of `B_X` (Euclidean coordinates) into `out`.
    pub fn draw(&self, rng: &mut StreamRng, out: &mut [f64]) {
        match &self.method {
            Method::GeneralizedGamma { p, gamma } => {
                let n = out.len();
                let mut x = [0.0f64; 16];
                let mut xs = vec![];
                let x: &mut [f64] = if n <= 16 {
                    &mut x[..n]
                } else {
                    xs.resize(n, 0.0);
                    &mut xs
                };
                match gamma {
                    None => {
                        for v in x.iter_mut() {
                            *v = 2.0 * rng.random::<f64>() - 1.0;
                        }
                    }
                    Some(g) => {
                        let mut s = 0.0;
                        for v in x.iter_mut() {
                            let e: f64 = g.sample(rng);
                            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                            *v = sign * e.powf(1.0 / p);
                            s += e;
                        }
                        let w: f64 = Exp1.sample(rng);
                        let scale = (s + w).powf(-1.0 / p);
                        for v in x.iter_mut() {
                            *v *= scale;
                        }
                    }
                }
                if let NormKind::WeightedLp { weights, .. } = self.space.kind() {
                    for (v, w) in x.iter_mut().zip(weights) {
                        *v /= w;
                    }
                }
                self.space.to_euclidean(x, out);
            }
            Method::Rejection { .. } => loop {
                self.propose(rng, out);
                if self.space.norm_unchecked(out) <= 1.0 {
                    return;
                }
            },
        }
    }
}

pub fn sample_ball(space: &NormedSpace, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let sampler = BallSampler::new(space, seed)?;
    let n = space.dim();
    Ok(rng::draw(count, seed, tags::BALL, |r| {
        let mut v = vec![0.0; n];
        sampler.draw(r, &mut v);
        v
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sphere_points_are_unit() {
        for v in sample_sphere(2, 4, 7) {
            let r = (v[0] * v[0] + v[1] * v[1]).sqrt();
            assert!((r - 1.0).abs() < 1e-14);
        }
        for v in sample_sphere(1, 50, 3) {
            assert!(v[0] == 1.0 || v[0] == -1.0);
        }
    }

    #[test]
    fn sphere_mean_is_centred() {
        let pts = sample_sphere(3, 100_000, 11);
        for j in 0..3 {
            let col: Vec<f64> = pts.iter().map(|v| v[j]).collect();
            let m = rng::pairwise_sum(&col) / col.len() as f64;
            // coordinate variance on S² is 1/3
            let se = (1.0 / 3.0 / col.len() as f64).sqrt();
            assert!(m.abs() < 3.0 * se, "component {j}: {m}");
        }
    }

    #[test]
    fn disc_second_moment() {
        let pts = sample_ball(&NormedSpace::euclidean(2), 100_000, 5).unwrap();
        let r2: Vec<f64> = pts.iter().map(|v| v[0] * v[0] + v[1] * v[1]).collect();
        let m = rng::pairwise_sum(&r2) / r2.len() as f64;
        // Var |x|² = E r⁴ - 1/4 = 1/3 - 1/4
        let se = (1.0 / 12.0 / r2.len() as f64).sqrt();
        assert!((m - 0.5).abs() < 3.0 * se, "{m}");
    }

    #[test]
    fn samples_lie_in_ball() {
        let spaces = [
            NormedSpace::lp(3, 1.0).unwrap(),
            NormedSpace::lp(3, 3.5).unwrap(),
            NormedSpace::weighted_lp(1.5, vec![0.5, 2.0, 1.0]).unwrap().scaled(2.0),
            NormedSpace::polytope(vec![vec![1.0, 0.0], vec![0.3, 1.0], vec![1.0, 1.0]]).unwrap(),
        ];
        for s in &spaces {
            for v in sample_ball(s, 2000, 1).unwrap() {
                assert!(s.norm(&v).unwrap() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn cube_is_direct() {
        let s = NormedSpace::lp(4, f64::INFINITY).unwrap();
        let sampler = BallSampler::new(&s, 0).unwrap();
        assert_eq!(sampler.acceptance(), 1.0);
    }

    #[test]
    fn polytope_acceptance_matches_volume_ratio() {
        // the square as a polytope: area 4 inside a disc of radius √2
        let s = NormedSpace::polytope(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let sampler = BallSampler::new(&s, 9).unwrap();
        assert_relative_eq!(sampler.acceptance(), 4.0 / (2.0 * std::f64::consts::PI), epsilon = 3e-3);
    }

    #[test]
    fn ball_sampling_is_deterministic() {
        let s = NormedSpace::lp(3, 1.0).unwrap();
        assert_eq!(sample_ball(&s, 5000, 3).unwrap(), sample_ball(&s, 5000, 3).unwrap());
    }

    #[test]
    fn uniform_in_l1_ball() {
        // E|x_1| over B_1^2 equals 1/3
        let s = NormedSpace::lp(2, 1.0).unwrap();
        let pts = sample_ball(&s, 200_000, 2).unwrap();
        let a: Vec<f64> = pts.iter().map(|v| v[0].abs()).collect();
        let m = rng::pairwise_sum(&a) / a.len() as f64;
        assert!((m - 1.0 / 3.0).abs() < 3e-3);
    }
}
