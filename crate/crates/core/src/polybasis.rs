//! One-dimensional building blocks: Gauss-Lobatto-Legendre node sets,
//! Gauss-Legendre quadrature, nodal (Lagrange) polynomials and the edge
//! (histopolation) polynomials derived from them.
//!
//! The edge polynomial `e_i` is the image of the nodal basis under `d/dx`:
//! for nodal coefficients `a`, `d/dx Σ a_i h_i = Σ_i (a_i - a_{i-1}) e_i`.
//! This relation is what makes the 2D incidence matrices exact.

use thiserror::Error;

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("polynomial degree must be at least 1, got {0}")]
    InvalidDegree(usize),
    #[error("root finding did not converge for degree {degree} (root {index})")]
    NoConvergence { degree: usize, index: usize },
    #[error("basis index {index} out of range for degree {degree}")]
    IndexOutOfRange { index: usize, degree: usize },
}

/// Legendre polynomial `L_n(x)` and its derivative via the three-term recurrence.
pub fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    let (mut d0, mut d1) = (0.0, 1.0);
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        let d2 = d0 + (2.0 * kf + 1.0) * p1;
        p0 = p1;
        p1 = p2;
        d0 = d1;
        d1 = d2;
    }
    (p1, d1)
}

/// Gauss-Lobatto-Legendre nodes and weights of a degree-`N` nodal basis.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSet {
    degree: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// Barycentric weights `1 / Π_{k≠j} (x_j - x_k)`.
    bary: Vec<f64>,
}

impl NodeSet {
    /// GLL nodes: roots of `(1 - x²) L'_N(x)`, found by Newton iteration from
    /// Chebyshev-Gauss-Lobatto guesses. Uses `d/dx[(1-x²)L'_N] = -N(N+1) L_N`.
    pub fn gll(degree: usize) -> Result<Self, BasisError> {
        if degree == 0 {
            return Err(BasisError::InvalidDegree(degree));
        }
        let n = degree;
        let nf = n as f64;
        let mut nodes = vec![0.0; n + 1];
        nodes[0] = -1.0;
        nodes[n] = 1.0;
        for i in 1..n {
            let mut x = -(std::f64::consts::PI * i as f64 / nf).cos();
            let mut converged = false;
            for _ in 0..NEWTON_MAX_ITER {
                let (l, dl) = legendre(n, x);
                let step = (1.0 - x * x) * dl / (nf * (nf + 1.0) * l);
                x += step;
                if step.abs() < NEWTON_TOL {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(BasisError::NoConvergence { degree, index: i });
            }
            nodes[i] = x;
        }
        // symmetric by construction; enforce it exactly
        for i in 0..=n / 2 {
            let v = 0.5 * (nodes[n - i] - nodes[i]);
            nodes[i] = -v;
            nodes[n - i] = v;
        }
        let weights = nodes
            .iter()
            .map(|&x| {
                let (l, _) = legendre(n, x);
                2.0 / (nf * (nf + 1.0) * l * l)
            })
            .collect();
        let bary = barycentric_weights(&nodes);
        Ok(Self {
            degree,
            nodes,
            weights,
            bary,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodal basis `h_i(x)`.
    pub fn lagrange(&self, i: usize, x: f64) -> f64 {
        self.lagrange_all(x)[i]
    }

    /// Derivative `h_i'(x)`.
    pub fn lagrange_deriv(&self, i: usize, x: f64) -> f64 {
        self.lagrange_deriv_all(x)[i]
    }

    /// All nodal basis values at `x`, exact (0/1) at the nodes.
    pub fn lagrange_all(&self, x: f64) -> Vec<f64> {
        let n = self.degree;
        // first barycentric form: h_i(x) = w_i Π_{m≠i} (x - x_m)
        let (pre, suf) = self.prefix_suffix(x);
        (0..=n).map(|i| self.bary[i] * pre[i] * suf[i + 1]).collect()
    }

    /// All nodal basis derivatives at `x`:
    /// `h_i'(x) = w_i Σ_{k≠i} Π_{m≠i,k} (x - x_m)`.
    pub fn lagrange_deriv_all(&self, x: f64) -> Vec<f64> {
        let n = self.degree;
        let diffs: Vec<f64> = self.nodes.iter().map(|&xm| x - xm).collect();
        (0..=n)
            .map(|i| {
                let mut sum = 0.0;
                for k in 0..=n {
                    if k == i {
                        continue;
                    }
                    let mut prod = 1.0;
                    for (m, d) in diffs.iter().enumerate() {
                        if m != i && m != k {
                            prod *= d;
                        }
                    }
                    sum += prod;
                }
                self.bary[i] * sum
            })
            .collect()
    }

    /// Edge polynomial `e_i(x) = -Σ_{k<i} h_k'(x)` for `1 ≤ i ≤ N`.
    pub fn edge(&self, i: usize, x: f64) -> Result<f64, BasisError> {
        if i == 0 || i > self.degree {
            return Err(BasisError::IndexOutOfRange {
                index: i,
                degree: self.degree,
            });
        }
        Ok(self.edge_all(x)[i - 1])
    }

    /// All `N` edge polynomial values at `x`; entry `i - 1` holds `e_i(x)`.
    pub fn edge_all(&self, x: f64) -> Vec<f64> {
        let dh = self.lagrange_deriv_all(x);
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.degree);
        for d in dh.iter().take(self.degree) {
            acc -= d;
            out.push(acc);
        }
        out
    }

    fn prefix_suffix(&self, x: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.degree + 1;
        let mut pre = vec![1.0; n + 1];
        let mut suf = vec![1.0; n + 1];
        for k in 0..n {
            pre[k + 1] = pre[k] * (x - self.nodes[k]);
        }
        for k in (0..n).rev() {
            suf[k] = suf[k + 1] * (x - self.nodes[k]);
        }
        (pre, suf)
    }
}

fn barycentric_weights(nodes: &[f64]) -> Vec<f64> {
    nodes
        .iter()
        .enumerate()
        .map(|(j, &xj)| {
            let prod: f64 = nodes
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != j)
                .map(|(_, &xk)| xj - xk)
                .product();
            1.0 / prod
        })
        .collect()
}

/// Gauss-Legendre rule with `n` points, exact for degree `2n - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadRule {
    pub fn gauss(n: usize) -> Result<Self, BasisError> {
        if n == 0 {
            return Err(BasisError::InvalidDegree(n));
        }
        let nf = n as f64;
        let mut points = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            // roots ordered descending from this guess; stored ascending below
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut converged = false;
            for _ in 0..NEWTON_MAX_ITER {
                let (l, dl) = legendre(n, x);
                let step = l / dl;
                x -= step;
                if step.abs() < NEWTON_TOL {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(BasisError::NoConvergence {
                    degree: n,
                    index: i,
                });
            }
            let (_, dl) = legendre(n, x);
            let w = 2.0 / ((1.0 - x * x) * dl * dl);
            points[i] = -x;
            points[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            points[n / 2] = 0.0;
        }
        Ok(Self { points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Highest polynomial degree integrated exactly.
    pub fn exactness(&self) -> usize {
        2 * self.len() - 1
    }

    /// Integrate `f` over `[a, b]` with the rule mapped affinely.
    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&p, &w)| w * f(mid + half * p))
            .sum::<f64>()
            * half
    }

    /// Points and weights mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        self.points
            .iter()
            .zip(&self.weights)
            .map(move |(&p, &w)| (mid + half * p, w * half))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn monomial_integral(k: usize) -> f64 {
        if k % 2 == 1 {
            0.0
        } else {
            2.0 / (k as f64 + 1.0)
        }
    }

    #[test]
    fn gll_low_degrees() {
        let n1 = NodeSet::gll(1).unwrap();
        assert_eq!(n1.nodes(), &[-1.0, 1.0]);
        assert!((n1.weights()[0] - 1.0).abs() < 1e-15 && (n1.weights()[1] - 1.0).abs() < 1e-15);

        let n2 = NodeSet::gll(2).unwrap();
        let expect = [(-1.0, 1.0 / 3.0), (0.0, 4.0 / 3.0), (1.0, 1.0 / 3.0)];
        for (i, (x, w)) in expect.iter().enumerate() {
            assert!((n2.nodes()[i] - x).abs() < 1e-15);
            assert!((n2.weights()[i] - w).abs() < 1e-15);
        }
        assert_eq!(NodeSet::gll(0), Err(BasisError::InvalidDegree(0)));
    }

    #[test]
    fn gll_exactness_up_to_64() {
        for n in 1..=64 {
            let ns = NodeSet::gll(n).unwrap();
            assert!(ns.nodes().windows(2).all(|w| w[0] < w[1]), "N={n}");
            let sum: f64 = ns.weights().iter().sum();
            assert!((sum - 2.0).abs() < 1e-13, "N={n}");
            // GLL is exact for degree 2N - 1
            for k in 0..=(2 * n - 1).min(12) {
                let q: f64 = ns
                    .nodes()
                    .iter()
                    .zip(ns.weights())
                    .map(|(x, w)| w * x.powi(k as i32))
                    .sum();
                assert!((q - monomial_integral(k)).abs() < 1e-13, "N={n} k={k}");
            }
        }
    }

    #[test]
    fn gauss_rules() {
        let g1 = QuadRule::gauss(1).unwrap();
        assert_eq!(g1.points(), &[0.0]);
        assert_eq!(g1.weights(), &[2.0]);
        let g2 = QuadRule::gauss(2).unwrap();
        let r = 1.0 / 3f64.sqrt();
        assert!((g2.points()[0] + r).abs() < 1e-15 && (g2.points()[1] - r).abs() < 1e-15);
        assert!((g2.weights()[0] - 1.0).abs() < 1e-15);
        let g3 = QuadRule::gauss(3).unwrap();
        let q4: f64 = g3.points().iter().zip(g3.weights()).map(|(x, w)| w * x.powi(4)).sum();
        assert!((q4 - 0.4).abs() < 1e-15);
        for n in 1..=40 {
            let g = QuadRule::gauss(n).unwrap();
            for k in 0..=g.exactness().min(16) {
                let q: f64 = g
                    .points()
                    .iter()
                    .zip(g.weights())
                    .map(|(x, w)| w * x.powi(k as i32))
                    .sum();
                assert!((q - monomial_integral(k)).abs() < 1e-13, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn lagrange_interpolation_and_partition() {
        let ns = NodeSet::gll(4).unwrap();
        for (j, &xj) in ns.nodes().iter().enumerate() {
            let h = ns.lagrange_all(xj);
            for (i, v) in h.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-14);
            }
        }
        let s: f64 = ns.lagrange_all(0.3).iter().sum();
        assert!((s - 1.0).abs() < 1e-14);
        let ds: f64 = ns.lagrange_deriv_all(0.3).iter().sum();
        assert!(ds.abs() < 1e-13);
        assert!((ns.lagrange(2, ns.nodes()[2]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lagrange_derivative_matches_finite_difference() {
        let ns = NodeSet::gll(6).unwrap();
        let h = 1e-6;
        for &x in &[-0.97, -0.4, 0.0, 0.123, 0.8] {
            let d = ns.lagrange_deriv_all(x);
            let p = ns.lagrange_all(x + h);
            let m = ns.lagrange_all(x - h);
            for i in 0..=6 {
                let fd = (p[i] - m[i]) / (2.0 * h);
                assert!((fd - d[i]).abs() < 1e-7, "i={i} x={x}");
            }
        }
        // exact at nodes too
        let d = ns.lagrange_deriv(0, ns.nodes()[3]);
        let fd = (ns.lagrange(0, ns.nodes()[3] + h) - ns.lagrange(0, ns.nodes()[3] - h)) / (2.0 * h);
        assert!((d - fd).abs() < 1e-7);
    }

    #[test]
    fn edge_degree_one_is_constant_half() {
        let ns = NodeSet::gll(1).unwrap();
        for &x in &[-1.0, -0.3, 0.5, 1.0] {
            assert!((ns.edge(1, x).unwrap() - 0.5).abs() < 1e-15);
        }
        let g = QuadRule::gauss(4).unwrap();
        let integral = g.integrate(-1.0, 1.0, |x| ns.edge(1, x).unwrap());
        assert!((integral - 1.0).abs() < 1e-15);
        assert!(ns.edge(0, 0.0).is_err() && ns.edge(2, 0.0).is_err());
    }

    #[test]
    fn edge_histopolation() {
        let ns = NodeSet::gll(3).unwrap();
        let g = QuadRule::gauss(10).unwrap();
        for i in 1..=3 {
            for j in 1..=3 {
                let (a, b) = (ns.nodes()[j - 1], ns.nodes()[j]);
                let v = g.integrate(a, b, |x| ns.edge(i, x).unwrap());
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-14, "i={i} j={j} v={v}");
            }
        }
    }

    #[test]
    fn edge_is_derivative_of_partial_nodal_sums() {
        // d/dx Σ_{k<i} h_k = -e_i, checked with central differences
        let ns = NodeSet::gll(5).unwrap();
        let h = 1e-6;
        for &x in &[-0.77, -0.1, 0.42, 0.9] {
            for i in 1..=5 {
                let partial = |y: f64| ns.lagrange_all(y)[..i].iter().sum::<f64>();
                let fd = (partial(x + h) - partial(x - h)) / (2.0 * h);
                assert!((fd + ns.edge(i, x).unwrap()).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn one_dimensional_incidence_holds_pointwise() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for n in 1..=8 {
            let ns = NodeSet::gll(n).unwrap();
            let a: Vec<f64> = (0..=n).map(|_| rng.random_range(-1.0..1.0)).collect();
            for _ in 0..50 {
                let x: f64 = rng.random_range(-1.0..1.0);
                let lhs: f64 = ns.lagrange_deriv_all(x).iter().zip(&a).map(|(d, c)| d * c).sum();
                let e = ns.edge_all(x);
                let rhs: f64 = (1..=n).map(|i| (a[i] - a[i - 1]) * e[i - 1]).sum();
                assert!((lhs - rhs).abs() < 1e-12, "n={n}");
            }
        }
    }
}
