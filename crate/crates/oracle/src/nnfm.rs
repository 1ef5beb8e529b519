//! Exhaustive nearest-neighbor feature matching.

/// `mean_i (1 - max_j cos(r_i, s_j))`; zero-norm render vectors count as 1.
pub fn nnfm_cosine(render: &[Vec<f64>], style: &[Vec<f64>]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut total = 0.0;
    for r in render {
        let nr = norm(r);
        if nr == 0.0 {
            total += 1.0;
            continue;
        }
        let mut best = f64::NEG_INFINITY;
        for s in style {
            let ns = norm(s);
            let cos = if ns == 0.0 {
                0.0
            } else {
                r.iter().zip(s).map(|(a, b)| a * b).sum::<f64>() / (nr * ns)
            };
            best = best.max(cos);
        }
        total += 1.0 - best;
    }
    total / render.len() as f64
}

/// `mean_i min_j r_i · s_j`.
pub fn nnfm_dot(render: &[Vec<f64>], style: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for r in render {
        let best = style
            .iter()
            .map(|s| r.iter().zip(s).map(|(a, b)| a * b).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        total += best;
    }
    total / render.len() as f64
}
