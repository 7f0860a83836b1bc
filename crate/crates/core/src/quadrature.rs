//! Gaussian quadrature rules and composite integrators.

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::function::gamma::ln_gamma;

/// A quadrature rule: nodes and weights on a reference interval.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Maps the rule from [-1, 1] onto [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> Rule {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        Rule {
            nodes: self.nodes.iter().map(|x| mid + half * x).collect(),
            weights: self.weights.iter().map(|w| half * w).collect(),
        }
    }
}

/// Gauss–Legendre rule with `n` nodes on [-1, 1], by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n > 0);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Rule { nodes, weights }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Jacobi rule for the weight `(1-u)^alpha (1+u)^beta` on [-1, 1],
/// computed from the Jacobi matrix eigen-decomposition.
pub fn gauss_jacobi(n: usize, alpha: f64, beta: f64) -> Rule {
    assert!(n > 0 && alpha > -1.0 && beta > -1.0);
    if alpha == 0.0 && beta == 0.0 {
        return gauss_legendre(n);
    }
    let ab = alpha + beta;
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let kf = k as f64;
        let denom = (2.0 * kf + ab) * (2.0 * kf + ab + 2.0);
        let diag = if denom.abs() < 1e-300 {
            (beta - alpha) / (ab + 2.0)
        } else {
            (beta * beta - alpha * alpha) / denom
        };
        jac[(k, k)] = diag;
        if k + 1 < n {
            let j = kf + 1.0;
            let num = 4.0 * j * (j + alpha) * (j + beta) * (j + ab);
            let den = (2.0 * j + ab).powi(2) * (2.0 * j + ab + 1.0) * (2.0 * j + ab - 1.0);
            let off = (num / den).sqrt();
            jac[(k, k + 1)] = off;
            jac[(k + 1, k)] = off;
        }
    }
    let eig = SymmetricEigen::new(jac);
    let mu0 = ((ab + 1.0) * 2f64.ln() + ln_gamma(alpha + 1.0) + ln_gamma(beta + 1.0)
        - ln_gamma(ab + 2.0))
    .exp();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Composite Gauss–Legendre over [a, b] with `panels` equal panels.
pub fn composite(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize, rule: &Rule) -> f64 {
    let width = (b - a) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let lo = a + k as f64 * width;
        let hi = lo + width;
        let half = 0.5 * width;
        let mid = 0.5 * (lo + hi);
        let mut s = 0.0;
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            s += w * f(mid + half * x);
        }
        total += half * s;
    }
    total
}

/// Composite integration with panel doubling until two successive estimates
/// agree to `rel_tol`. Returns the finer estimate and the last difference.
pub fn adaptive_composite(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    initial_panels: usize,
    rel_tol: f64,
) -> (f64, f64) {
    let rule = gauss_legendre(16);
    let mut panels = initial_panels.max(1);
    let mut coarse = composite(&f, a, b, panels, &rule);
    for _ in 0..14 {
        panels *= 2;
        let fine = composite(&f, a, b, panels, &rule);
        let diff = (fine - coarse).abs();
        if diff <= rel_tol * fine.abs().max(1e-300) {
            return (fine, diff);
        }
        coarse = fine;
    }
    (coarse, f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        let r = gauss_legendre(6);
        // degree 11 is exact for 6 nodes
        let v = r.integrate(|x| x.powi(10) + 3.0 * x.powi(11));
        assert_relative_eq!(v, 2.0 / 11.0, epsilon = 1e-14);
        assert_relative_eq!(r.weights.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn jacobi_semicircle_weight() {
        // ∫ (1-u²)^{1/2} du = π/2, ∫ u²(1-u²)^{1/2} du = π/8
        let r = gauss_jacobi(20, 0.5, 0.5);
        assert_relative_eq!(r.integrate(|_| 1.0), std::f64::consts::FRAC_PI_2, epsilon = 1e-13);
        assert_relative_eq!(r.integrate(|u| u * u), std::f64::consts::PI / 8.0, epsilon = 1e-13);
    }

    #[test]
    fn jacobi_matches_angle_substitution_on_oscillatory_integrand() {
        // ∫ cos(7u)(1-u²)^{1/2} du via u = cos θ
        let alpha = 0.5;
        let jac = gauss_jacobi(60, alpha, alpha).integrate(|u| (7.0 * u).cos());
        let gl = gauss_legendre(80).mapped(0.0, std::f64::consts::PI);
        let sub = gl.integrate(|th| (7.0 * th.cos()).cos() * th.sin().powi(2));
        assert_relative_eq!(jac, sub, epsilon = 1e-12);
    }

    #[test]
    fn adaptive_converges() {
        let (v, err) = adaptive_composite(|x| (-x * x).exp(), 0.0, 10.0, 2, 1e-13);
        assert_relative_eq!(v, std::f64::consts::PI.sqrt() / 2.0, epsilon = 1e-12);
        assert!(err.is_finite());
    }
}
