//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when `‖∇f‖∞ ≤ gtol · scale(x)`.
    pub gtol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_linesearch: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { memory: 10, max_iter: 1000, gtol: 1e-6, c1: 1e-4, c2: 0.9, max_linesearch: 50 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the start and after every accepted step.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Probe {
    alpha: f64,
    f: f64,
    dphi: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

/// Minimises `objective`, which writes the gradient into its second argument
/// and returns the objective value.
pub fn minimize<F, S>(mut objective: F, x0: Vec<f64>, opts: &LbfgsOptions, scale: S) -> LbfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
    S: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut f = objective(&x, &mut g);
    let mut history = vec![f];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;
    let mut converged = inf_norm(&g) <= opts.gtol * scale(&x);

    while !converged && iterations < opts.max_iter {
        let mut d = two_loop(&g, &pairs);
        let mut dphi0 = dot(&g, &d);
        if dphi0.is_nan() || dphi0 >= 0.0 {
            pairs.clear();
            d = g.iter().map(|v| -v).collect();
            dphi0 = dot(&g, &d);
        }
        let alpha0 = if pairs.is_empty() { (1.0 / inf_norm(&g).max(1.0)).min(1.0) } else { 1.0 };
        let Some(p) = line_search(&mut objective, &x, f, dphi0, &d, alpha0, opts) else {
            break;
        };
        let s: Vec<f64> = p.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        let improved = p.f < f;
        x = p.x;
        g = p.g;
        f = p.f;
        history.push(f);
        iterations += 1;
        converged = inf_norm(&g) <= opts.gtol * scale(&x);
        if !improved {
            break;
        }
    }
    LbfgsResult { x, f, grad: g, iterations, converged, history }
}

fn two_loop(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

fn evaluate<F>(objective: &mut F, x0: &[f64], d: &[f64], alpha: f64) -> Probe
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let x: Vec<f64> = x0.iter().zip(d).map(|(a, b)| a + alpha * b).collect();
    let mut g = vec![0.0; x.len()];
    let f = objective(&x, &mut g);
    let dphi = dot(&g, d);
    Probe { alpha, f, dphi, x, g }
}

/// Minimiser of the cubic interpolating (a, fa, da) and (b, fb, db), or
/// `None` when it does not exist.
fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> Option<f64> {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc.is_nan() || disc < 0.0 {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    t.is_finite().then_some(t)
}

fn line_search<F>(objective: &mut F, x0: &[f64], f0: f64, dphi0: f64, d: &[f64], alpha0: f64, opts: &LbfgsOptions) -> Option<Probe>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let armijo = |p: &Probe| p.f <= f0 + opts.c1 * p.alpha * dphi0;
    let curvature = |p: &Probe| p.dphi.abs() <= -opts.c2 * dphi0;

    let mut prev = Probe { alpha: 0.0, f: f0, dphi: dphi0, x: x0.to_vec(), g: Vec::new() };
    let mut alpha = alpha0;
    let mut evals = 0;
    let (mut lo, mut hi) = loop {
        let p = evaluate(objective, x0, d, alpha);
        evals += 1;
        if !p.f.is_finite() {
            // shrink back into the finite region
            alpha = 0.5 * (prev.alpha + alpha);
            if evals >= opts.max_linesearch {
                return None;
            }
            continue;
        }
        if !armijo(&p) || (evals > 1 && p.f >= prev.f) {
            break (prev, p);
        }
        if curvature(&p) {
            return Some(p);
        }
        if p.dphi >= 0.0 {
            break (p, prev);
        }
        if evals >= opts.max_linesearch {
            return Some(p);
        }
        alpha = p.alpha * 2.0;
        prev = p;
    };

    // zoom: `lo` satisfies Armijo and has the lowest f seen so far
    while evals < opts.max_linesearch {
        let (a, b) = (lo.alpha, hi.alpha);
        let width = (b - a).abs();
        let (left, right) = (a.min(b), a.max(b));
        let mut t = cubic_min(a, lo.f, lo.dphi, b, hi.f, hi.dphi).unwrap_or(0.5 * (a + b));
        let guard = 0.1 * width;
        if !(t > left + guard && t < right - guard) {
            t = 0.5 * (a + b);
        }
        if width <= f64::EPSILON * right.max(1.0) {
            break;
        }
        let p = evaluate(objective, x0, d, t);
        evals += 1;
        if !p.f.is_finite() || !armijo(&p) || p.f >= lo.f {
            hi = p;
        } else {
            if curvature(&p) {
                return Some(p);
            }
            if p.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                hi = std::mem::replace(&mut lo, p);
            } else {
                lo = p;
            }
        }
    }
    (lo.alpha > 0.0 && lo.f < f0).then_some(lo)
}
