//! Quadrature rules used throughout the crate.
//!
//! Double-exponential (tanh-sinh) rules handle integrable endpoint
//! singularities and, through the map `x = a + u / (1 - u)`, algebraically
//! decaying integrands on half-lines. Fixed node sets are exposed so hot loops
//! can precompute weights once.

use std::f64::consts::FRAC_PI_2;

/// Largest abscissa parameter; beyond this the weights underflow.
const T_MAX: f64 = 3.3;

/// A fixed tanh-sinh rule on a finite interval `[a, b]`.
#[derive(Clone, Debug)]
pub struct FiniteRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl FiniteRule {
    /// Builds the rule at refinement `level` (step `2^-level`).
    pub fn new(a: f64, b: f64, level: u32) -> Self {
        let h = 0.5f64.powi(level as i32);
        let half = 0.5 * (b - a);
        let n = (T_MAX / h).ceil() as i64;
        let mut nodes = Vec::with_capacity(2 * n as usize + 1);
        let mut weights = Vec::with_capacity(2 * n as usize + 1);
        for j in -n..=n {
            let t = j as f64 * h;
            let s = FRAC_PI_2 * t.sinh();
            let c = s.cosh();
            let w = h * FRAC_PI_2 * t.cosh() / (c * c) * half;
            if w == 0.0 || !w.is_finite() {
                continue;
            }
            // distance to the nearer endpoint, computed without cancellation
            let d = 2.0 * half / (1.0 + (2.0 * s.abs()).exp());
            let x = if t < 0.0 { a + d } else { b - d };
            if x <= a || x >= b {
                continue;
            }
            nodes.push(x);
            weights.push(w);
        }
        FiniteRule { nodes, weights }
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// A fixed rule on `[a, ∞)` built from the finite rule on `u ∈ [0, 1)`.
#[derive(Clone, Debug)]
pub struct HalfLineRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl HalfLineRule {
    pub fn new(a: f64, level: u32) -> Self {
        let base = FiniteRule::new(0.0, 1.0, level);
        let mut nodes = Vec::with_capacity(base.nodes.len());
        let mut weights = Vec::with_capacity(base.nodes.len());
        for (&u, &w) in base.nodes.iter().zip(&base.weights) {
            let one_minus = 1.0 - u;
            let x = a + u / one_minus;
            let jac = 1.0 / (one_minus * one_minus);
            if x.is_finite() && (w * jac).is_finite() {
                nodes.push(x);
                weights.push(w * jac);
            }
        }
        HalfLineRule { nodes, weights }
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| {
                let v = f(x);
                if v == 0.0 {
                    0.0
                } else {
                    w * v
                }
            })
            .sum()
    }
}

/// Adaptive-in-level tanh-sinh on `[a, b]`: refines until two successive
/// levels agree to `tol` (relative, with an absolute floor of `tol`).
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let mut prev = FiniteRule::new(a, b, 3).integrate(&f);
    for level in 4..=10 {
        let cur = FiniteRule::new(a, b, level).integrate(&f);
        if (cur - prev).abs() <= tol * cur.abs().max(1.0) {
            return cur;
        }
        prev = cur;
    }
    prev
}

/// Same as [`integrate`] on `[a, ∞)`.
pub fn integrate_half_line<F: Fn(f64) -> f64>(f: F, a: f64, tol: f64) -> f64 {
    let mut prev = HalfLineRule::new(a, 3).integrate(&f);
    for level in 4..=10 {
        let cur = HalfLineRule::new(a, level).integrate(&f);
        if (cur - prev).abs() <= tol * cur.abs().max(1.0) {
            return cur;
        }
        prev = cur;
    }
    prev
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Composite Gauss–Legendre on `[a, b]` with `panels` equal panels.
pub fn composite_gl<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize, order: usize) -> f64 {
    let (x, w) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + 0.5 * h;
        for (xi, wi) in x.iter().zip(&w) {
            total += 0.5 * h * wi * f(mid + 0.5 * h * xi);
        }
    }
    total
}
