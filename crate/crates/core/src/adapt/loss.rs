//! Training objectives with analytic gradients, in f64.

use super::AdaptError;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MnrlOutput {
    pub loss: f64,
    pub grad_a: Vec<Vec<f64>>,
    pub grad_b: Vec<Vec<f64>>,
}

/// In-batch multiple-negatives ranking loss: cross-entropy of row `i` of
/// `scale * cos(A_i, B_j)` against target `j = i`, averaged over rows.
pub fn mnrl_loss(a: &[Vec<f64>], b: &[Vec<f64>], scale: f64) -> Result<MnrlOutput, AdaptError> {
    let n = a.len();
    if n < 2 {
        return Err(AdaptError::BatchTooSmall(n));
    }
    if b.len() != n {
        return Err(AdaptError::BatchMismatch { a: n, b: b.len() });
    }
    let dim = a[0].len();
    if let Some(v) = a.iter().chain(b).find(|v| v.len() != dim) {
        return Err(AdaptError::DimensionMismatch {
            expected: dim,
            found: v.len(),
        });
    }
    let na: Vec<f64> = a.iter().map(|v| norm(v)).collect();
    let nb: Vec<f64> = b.iter().map(|v| norm(v)).collect();
    if na.iter().chain(&nb).any(|&x| x == 0.0) {
        return Err(AdaptError::ZeroVector);
    }

    let cos: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| dot(&a[i], &b[j]) / (na[i] * nb[j])).collect())
        .collect();

    let mut loss = 0.0;
    // coef[i][j] = dL/dcos_ij = scale/n * (softmax_ij - delta_ij)
    let mut coef = vec![vec![0.0; n]; n];
    for i in 0..n {
        let logits: Vec<f64> = cos[i].iter().map(|c| scale * c).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        loss += (m - logits[i]) + sum.ln();
        for j in 0..n {
            let p = (logits[j] - m).exp() / sum;
            coef[i][j] = scale / n as f64 * (p - if i == j { 1.0 } else { 0.0 });
        }
    }
    loss /= n as f64;

    // dcos(a,b)/da = b/(|a||b|) - cos * a/|a|^2
    let mut grad_a = vec![vec![0.0; dim]; n];
    let mut grad_b = vec![vec![0.0; dim]; n];
    for i in 0..n {
        for j in 0..n {
            let c = coef[i][j];
            if c == 0.0 {
                continue;
            }
            let inv = 1.0 / (na[i] * nb[j]);
            let ka = cos[i][j] / (na[i] * na[i]);
            let kb = cos[i][j] / (nb[j] * nb[j]);
            for k in 0..dim {
                grad_a[i][k] += c * (b[j][k] * inv - ka * a[i][k]);
                grad_b[j][k] += c * (a[i][k] * inv - kb * b[j][k]);
            }
        }
    }
    Ok(MnrlOutput {
        loss,
        grad_a,
        grad_b,
    })
}

/// Mean squared error over all `n * dim` entries and its gradient wrt `s`.
pub fn distill_loss(s: &[Vec<f64>], t: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>), AdaptError> {
    if s.len() != t.len() {
        return Err(AdaptError::BatchMismatch { a: s.len(), b: t.len() });
    }
    if s.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let dim = s[0].len();
    if let Some(v) = s.iter().chain(t).find(|v| v.len() != dim) {
        return Err(AdaptError::DimensionMismatch {
            expected: dim,
            found: v.len(),
        });
    }
    let denom = (s.len() * dim) as f64;
    let mut loss = 0.0;
    let grads = s
        .iter()
        .zip(t)
        .map(|(si, ti)| {
            si.iter()
                .zip(ti)
                .map(|(x, y)| {
                    let d = x - y;
                    loss += d * d;
                    2.0 * d / denom
                })
                .collect()
        })
        .collect();
    Ok((loss / denom, grads))
}
