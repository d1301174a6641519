use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use super::DenseMatrix;

use crate::error::{Error, Result};

/// Gauss–Hermite nodes and weights for the weight function `exp(-x²)`,
/// nodes in decreasing order. Rules are computed once per size (Golub–Welsch)
/// and cached.
pub fn hermite_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<(Vec<f64>, Vec<f64>)>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(r) = cache.lock().expect("cache lock").get(&n) {
        return (r.0.clone(), r.1.clone());
    }
    let rule = Arc::new(golub_welsch(n));
    cache.lock().expect("cache lock").insert(n, rule.clone());
    (rule.0.clone(), rule.1.clone())
}

fn golub_welsch(n: usize) -> (Vec<f64>, Vec<f64>) {
    // Jacobi matrix of the Hermite recurrence: off-diagonal sqrt(i/2).
    let mut j = DenseMatrix::zeros(n, n);
    for i in 1..n {
        let b = (i as f64 / 2.0).sqrt();
        j[(i - 1, i)] = b;
        j[(i, i - 1)] = b;
    }
    let (vals, vecs) = j.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n).map(|k| (vals[k], PI.sqrt() * vecs[(0, k)] * vecs[(0, k)])).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    // enforce the exact symmetry of the rule
    for i in 0..n / 2 {
        let x = 0.5 * (pairs[i].0 - pairs[n - 1 - i].0);
        let w = 0.5 * (pairs[i].1 + pairs[n - 1 - i].1);
        pairs[i] = (x, w);
        pairs[n - 1 - i] = (-x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    pairs.into_iter().unzip()
}

/// `E[f(L)]` for `L ~ N(mean, variance)` by `nodes`-point Gauss–Hermite quadrature.
pub fn gauss_hermite_expect<F>(f: F, mean: f64, variance: f64, nodes: usize) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if nodes < 16 {
        return Err(Error::InvalidConfig(format!(
            "quadrature needs at least 16 nodes, got {nodes}"
        )));
    }
    if !(variance > 0.0) || !variance.is_finite() || !mean.is_finite() {
        return Err(Error::NumericalDomain(format!(
            "gaussian with mean {mean} and variance {variance}"
        )));
    }
    let (x, w) = hermite_rule(nodes);
    let scale = (2.0 * variance).sqrt();
    let mut acc = 0.0;
    for (xi, wi) in x.iter().zip(&w) {
        let v = f(mean + scale * xi);
        if !v.is_finite() {
            return Err(Error::NumericalDomain(format!(
                "integrand is {v} at L = {}",
                mean + scale * xi
            )));
        }
        acc += wi * v;
    }
    Ok(acc / PI.sqrt())
}
