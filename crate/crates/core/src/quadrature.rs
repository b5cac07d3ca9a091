//! Gauss–Legendre and composite Simpson rules.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds the rule by Newton iteration on the Legendre polynomial `P_n`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Visits the nodes and weights of the composite rule with `panels` equal
    /// panels on `[a, b]`.
    pub fn for_each_node(&self, a: f64, b: f64, panels: usize, mut visit: impl FnMut(f64, f64)) {
        let width = (b - a) / panels as f64;
        let half = 0.5 * width;
        for p in 0..panels {
            let mid = a + (p as f64 + 0.5) * width;
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                visit(mid + half * x, half * w);
            }
        }
    }

    /// Composite rule with `panels` equal panels.
    pub fn integrate(&self, a: f64, b: f64, panels: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
        let mut sum = 0.0;
        self.for_each_node(a, b, panels, |x, w| sum += w * f(x));
        sum
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Outcome of [`simpson_doubling`].
#[derive(Debug, Clone, Copy)]
pub struct SimpsonResult {
    pub value: f64,
    pub panels: usize,
    pub converged: bool,
}

/// Composite Simpson on `[a, b]`, doubling the panel count until two
/// successive estimates agree to `rel_tol` or `max_panels` is reached.
pub fn simpson_doubling(
    a: f64,
    b: f64,
    rel_tol: f64,
    max_panels: usize,
    f: impl Fn(f64) -> f64,
) -> SimpsonResult {
    if a == b {
        return SimpsonResult {
            value: 0.0,
            panels: 0,
            converged: true,
        };
    }
    let ends = f(a) + f(b);
    // odd-indexed samples of the current grid and everything else so far
    let mut n = 2usize;
    let mut h = (b - a) / n as f64;
    let mut evens = 0.0;
    let mut odds = f(a + h);
    let mut prev = h / 3.0 * (ends + 4.0 * odds + 2.0 * evens);
    while n < max_panels {
        n *= 2;
        h *= 0.5;
        evens += odds;
        odds = (0..n / 2).map(|k| f(a + (2 * k + 1) as f64 * h)).sum();
        let next = h / 3.0 * (ends + 4.0 * odds + 2.0 * evens);
        if (next - prev).abs() <= rel_tol * next.abs().max(f64::MIN_POSITIVE) {
            return SimpsonResult {
                value: next,
                panels: n,
                converged: true,
            };
        }
        prev = next;
    }
    SimpsonResult {
        value: prev,
        panels: n,
        converged: false,
    }
}
