//! Softmax, divergences, neighbor search and outlier statistics.

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// `KL(p ‖ q) = Σ p (ln p - ln q)`.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a.ln() - b.ln()))
        .sum()
}

/// `-ln softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    -softmax(logits)[label].ln()
}

/// Linear map `W x + b` with `W` row-major `out × in`.
pub fn linear(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(o, bo)| bo + x.iter().enumerate().map(|(i, xi)| w[o * x.len() + i] * xi).sum::<f64>())
        .collect()
}

pub fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Indices of the `k` nearest other points, nearest first, ties by index.
pub fn knn(points: &[[f64; 3]], query: usize, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != query)
        .map(|(i, p)| (dist(p, &points[query]), i))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Indices kept by the rule "mean k-NN distance ≤ μ + factor·σ".
pub fn statistical_outlier_keep(points: &[[f64; 3]], k: usize, factor: f64) -> Vec<usize> {
    let means: Vec<f64> = (0..points.len())
        .map(|i| {
            let nn = knn(points, i, k);
            nn.iter().map(|&j| dist(&points[i], &points[j])).sum::<f64>() / k as f64
        })
        .collect();
    let n = means.len() as f64;
    let mu = means.iter().sum::<f64>() / n;
    let sigma = (means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / n).sqrt();
    (0..points.len())
        .filter(|&i| means[i] <= mu + factor * sigma)
        .collect()
}
