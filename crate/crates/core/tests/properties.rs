use heatlab::fields::{GridBox, TargetNorm};
use heatlab::lps::temporal_g;
use heatlab::spaces::isotropic_normalize;
use heatlab::transport::{half_ball_measures, proj_operator, w1_distance, w1_flow, w1_quantile, DiscreteMeasure};
use heatlab::{GridField, NormedSpace, ScaleGrid};
use proptest::prelude::*;

fn space_for(kind: u8, n: usize) -> NormedSpace {
    let p = match kind % 3 {
        0 => 1.0,
        1 => 2.0,
        _ => f64::INFINITY,
    };
    NormedSpace::lp(n, p).unwrap()
}

/// Points in `[-2, 2]^n` with positive weights summing to one.
fn measure(n: usize, max_atoms: usize) -> impl Strategy<Value = DiscreteMeasure> {
    prop::collection::vec((prop::collection::vec(-2.0..2.0f64, n), 0.05..1.0f64), 1..=max_atoms).prop_map(|atoms| {
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        let (points, weights) = atoms.into_iter().map(|(p, w)| (p, w / total)).unzip();
        DiscreteMeasure::new(points, weights).unwrap()
    })
}

fn sample(res: usize, half: f64, n: usize, m: usize, f: impl Fn(&[f64], &mut [f64])) -> GridField {
    let h = 2.0 * half / (res - 1) as f64;
    let mut vals = vec![0.0; res.pow(n as u32) * m];
    let mut y = vec![0.0; n];
    for (k, chunk) in vals.chunks_mut(m).enumerate() {
        let mut r = k;
        for d in (0..n).rev() {
            y[d] = -half + (r % res) as f64 * h;
            r /= res;
        }
        f(&y, chunk);
    }
    GridField::new(GridBox::symmetric(n, half), res, m, vals).unwrap()
}

fn square() -> (NormedSpace, f64) {
    let r = isotropic_normalize(&NormedSpace::lp(2, f64::INFINITY).unwrap(), 10_000, 1).unwrap();
    (r.space, r.isotropic_constant.value)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn w1_is_a_metric(kind in 0u8..3, a in measure(2, 7), b in measure(2, 7), c in measure(2, 7)) {
        let sp = space_for(kind, 2);
        let d = |x: &DiscreteMeasure, y: &DiscreteMeasure| w1_distance(x, y, &sp).unwrap().value;
        prop_assert!(d(&a, &a).abs() < 1e-12);
        let ab = d(&a, &b);
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - d(&b, &a)).abs() <= 1e-10 * (1.0 + ab));
        prop_assert!(ab <= d(&a, &c) + d(&c, &b) + 1e-10);
    }

    #[test]
    fn w1_dominates_lipschitz_test_functions(
        kind in 0u8..3,
        a in measure(2, 8),
        b in measure(2, 8),
        dir in prop::collection::vec(-1.0..1.0f64, 2),
        centre in prop::collection::vec(-1.0..1.0f64, 2),
    ) {
        let sp = space_for(kind, 2);
        let w = w1_distance(&a, &b, &sp).unwrap();
        prop_assert!(w.plan.marginal_error(&a, &b) < 1e-9);
        prop_assert!((w.plan.cost - w.value).abs() <= 1e-9 * (1.0 + w.value));
        let dn = sp.dual_norm(&dir);
        if dn > 1e-6 {
            let lin = |p: &[f64]| (p[0] * dir[0] + p[1] * dir[1]) / dn;
            prop_assert!((a.integrate(lin) - b.integrate(lin)).abs() <= w.value + 1e-10);
        }
        let dist = |p: &[f64]| sp.norm_unchecked(&[p[0] - centre[0], p[1] - centre[1]]);
        prop_assert!((a.integrate(dist) - b.integrate(dist)).abs() <= w.value + 1e-10);
    }

    #[test]
    fn quantile_and_flow_agree_on_the_line(a in measure(1, 12), b in measure(1, 12), scale in 0.5..3.0f64) {
        let sp = NormedSpace::weighted_lp(2.0, vec![scale]).unwrap();
        let q = w1_quantile(&a, &b, &sp).unwrap().value;
        let f = w1_flow(&a, &b, &sp).unwrap().value;
        prop_assert!((q - f).abs() <= 1e-10 * (1.0 + q), "{} {}", q, f);
    }

    #[test]
    fn projection_is_idempotent(c in prop::collection::vec(-2.0..2.0f64, 6), quad in -1.0..1.0f64) {
        let (sq, l) = square();
        let f = sample(64, 0.6, 2, 2, |y, o| {
            o[0] = c[0] + c[1] * y[0] + c[2] * y[1] + quad * y[0] * y[1];
            o[1] = c[3] + c[4] * y[0] * y[0] + c[5] * y[1];
        });
        let once = proj_operator(&f, &sq, l).unwrap().map;
        let g = sample(64, 0.6, 2, 2, |y, o| once.eval(y, o));
        let twice = proj_operator(&g, &sq, l).unwrap().map;
        for (u, v) in once.value.iter().zip(&twice.value).chain(once.linear.iter().zip(&twice.linear)) {
            prop_assert!((u - v).abs() <= 1e-8 * (1.0 + u.abs()), "{} {}", u, v);
        }
    }

    #[test]
    fn half_ball_transport_is_reflection_invariant(angle in 0.0..std::f64::consts::TAU, kind in 0u8..3) {
        let sp = space_for(kind, 2);
        let x = [angle.cos(), angle.sin()];
        let w = |x: &[f64]| {
            let hb = half_ball_measures(&sp, x, 60).unwrap();
            w1_distance(&hb.nu_plus, &hb.nu_minus, &sp).unwrap().value
        };
        let (u, v) = (w(&x), w(&[-x[0], -x[1]]));
        prop_assert!((u - v).abs() <= 1e-9 * u, "{} {}", u, v);
        let (p, q) = (w(&x), w(&[x[0], -x[1]]));
        prop_assert!((p - q).abs() <= 1e-9 * p, "{} {}", p, q);
    }

    #[test]
    fn temporal_functional_is_reflection_invariant(c in prop::collection::vec(-1.0..1.0f64, 3)) {
        let f = sample(512, 12.0, 1, 1, |y, o| {
            let t = y[0];
            o[0] = (c[0] + c[1] * t + c[2] * t * t) * (-t * t).exp();
        });
        let mut rev = f.values().to_vec();
        rev.reverse();
        let g = f.with_values(1, rev).unwrap();
        let grid = ScaleGrid::for_heat(&f, 10);
        let a = temporal_g(&f, 3.0, TargetNorm::euclidean(), &grid).unwrap().value;
        let b = temporal_g(&g, 3.0, TargetNorm::euclidean(), &grid).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a), "{} {}", a, b);
    }
}
