use super::ExplainError;
use crate::linalg::cholesky_solve;

/// Result of the weighted ridge surrogate. `coefficients` has one entry per
/// interpretable feature; entries outside `selected` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateFit {
    pub coefficients: Vec<f64>,
    pub selected: Vec<usize>,
    pub intercept: f64,
    pub fidelity_r2: f64,
}

pub fn kernel_weight(distance: f64, width: f64) -> Result<f64, ExplainError> {
    if width.is_nan() || width <= 0.0 {
        return Err(ExplainError::NonPositiveWidth(width));
    }
    Ok((-(distance * distance) / (width * width)).exp())
}

/// Normalized Euclidean distance between `z` and the all-ones vector,
/// `√(flipped / d)`.
pub fn z_distance(z: &[u8]) -> f64 {
    if z.is_empty() {
        return 0.0;
    }
    let flipped = z.iter().filter(|&&v| v == 0).count();
    (flipped as f64 / z.len() as f64).sqrt()
}

struct WeightedStats {
    total_weight: f64,
    target_mean: f64,
    feature_means: Vec<f64>,
}

fn stats(samples: &[Vec<u8>], targets: &[f64], weights: &[f64]) -> WeightedStats {
    let d = samples[0].len();
    let total_weight: f64 = weights.iter().sum();
    let target_mean = targets.iter().zip(weights).map(|(y, w)| y * w).sum::<f64>() / total_weight;
    let mut feature_means = vec![0.0; d];
    for (z, w) in samples.iter().zip(weights) {
        for (m, &v) in feature_means.iter_mut().zip(z) {
            if v != 0 {
                *m += w;
            }
        }
    }
    for m in &mut feature_means {
        *m /= total_weight;
    }
    WeightedStats {
        total_weight,
        target_mean,
        feature_means,
    }
}

/// Weighted ridge over the columns in `cols`, intercept unpenalized.
/// Returns coefficients aligned with `cols` and the intercept.
fn ridge(
    samples: &[Vec<u8>],
    targets: &[f64],
    weights: &[f64],
    st: &WeightedStats,
    cols: &[usize],
    lambda: f64,
) -> Result<(Vec<f64>, f64), ExplainError> {
    let k = cols.len();
    // Σ w z zᵀ and Σ w z y over the active columns, then centred.
    let mut gram = vec![0.0; k * k];
    let mut rhs = vec![0.0; k];
    let mut active = Vec::with_capacity(k);
    for ((z, &y), &w) in samples.iter().zip(targets).zip(weights) {
        if w == 0.0 {
            continue;
        }
        active.clear();
        active.extend((0..k).filter(|&a| z[cols[a]] != 0));
        for (ai, &a) in active.iter().enumerate() {
            rhs[a] += w * y;
            for &b in &active[ai..] {
                gram[a * k + b] += w;
            }
        }
    }
    let means: Vec<f64> = cols.iter().map(|&c| st.feature_means[c]).collect();
    for a in 0..k {
        rhs[a] -= st.total_weight * means[a] * st.target_mean;
        for b in a..k {
            let v = gram[a * k + b] - st.total_weight * means[a] * means[b];
            gram[a * k + b] = v;
            gram[b * k + a] = v;
        }
    }

    // columns with no weighted variance carry no information; pin them to 0
    let informative: Vec<usize> = (0..k)
        .filter(|&a| gram[a * k + a] > 1e-12 * st.total_weight)
        .collect();
    let m = informative.len();
    let mut coef = vec![0.0; k];
    if m > 0 {
        let mut a_sub = vec![0.0; m * m];
        let mut b_sub = vec![0.0; m];
        for (i, &a) in informative.iter().enumerate() {
            b_sub[i] = rhs[a];
            for (j, &b) in informative.iter().enumerate() {
                a_sub[i * m + j] = gram[a * k + b];
            }
            a_sub[i * m + i] += lambda;
        }
        let sol = cholesky_solve(&a_sub, &b_sub, m).ok_or(ExplainError::SingularSystem)?;
        for (i, &a) in informative.iter().enumerate() {
            coef[a] = sol[i];
        }
    }
    let intercept = st.target_mean - coef.iter().zip(&means).map(|(c, m)| c * m).sum::<f64>();
    Ok((coef, intercept))
}

fn weighted_r2(
    samples: &[Vec<u8>],
    targets: &[f64],
    weights: &[f64],
    st: &WeightedStats,
    coefficients: &[f64],
    intercept: f64,
) -> f64 {
    let mut sse = 0.0;
    let mut sst = 0.0;
    for ((z, &y), &w) in samples.iter().zip(targets).zip(weights) {
        let pred = intercept
            + z.iter()
                .zip(coefficients)
                .filter(|(&v, _)| v != 0)
                .map(|(_, c)| c)
                .sum::<f64>();
        sse += w * (y - pred).powi(2);
        sst += w * (y - st.target_mean).powi(2);
    }
    if sst <= 0.0 {
        0.0
    } else {
        1.0 - sse / sst
    }
}

/// Fits the local surrogate: ridge over all features, keep the `top_k`
/// largest |coefficient| (ties to the lower index), refit on those.
///
/// Identical targets short-circuit to zero coefficients, the common target
/// as intercept and `fidelity_r2 = 0`.
pub fn fit_weighted_surrogate(
    samples: &[Vec<u8>],
    targets: &[f64],
    weights: &[f64],
    top_k: usize,
    ridge_lambda: f64,
) -> Result<SurrogateFit, ExplainError> {
    if samples.len() != targets.len() || samples.len() != weights.len() {
        return Err(ExplainError::LengthMismatch);
    }
    if samples.len() < 2 {
        return Err(ExplainError::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let d = samples[0].len();
    if samples.iter().any(|z| z.len() != d) {
        return Err(ExplainError::LengthMismatch);
    }
    if weights.iter().any(|w| w.is_nan() || *w < 0.0) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(ExplainError::BadWeights);
    }
    if ridge_lambda.is_nan() || ridge_lambda < 0.0 {
        return Err(ExplainError::BadLambda(ridge_lambda));
    }

    let st = stats(samples, targets, weights);
    if targets.iter().all(|&y| y == targets[0]) {
        return Ok(SurrogateFit {
            coefficients: vec![0.0; d],
            selected: Vec::new(),
            intercept: targets[0],
            fidelity_r2: 0.0,
        });
    }

    let all: Vec<usize> = (0..d).collect();
    let (full, full_intercept) = ridge(samples, targets, weights, &st, &all, ridge_lambda)?;
    let (selected, coefficients, intercept) = if top_k >= d {
        (all, full, full_intercept)
    } else {
        let mut order = all;
        order.sort_by(|&a, &b| full[b].abs().total_cmp(&full[a].abs()).then(a.cmp(&b)));
        order.truncate(top_k);
        order.sort_unstable();
        let (sub, intercept) = ridge(samples, targets, weights, &st, &order, ridge_lambda)?;
        let mut coefficients = vec![0.0; d];
        for (&c, v) in order.iter().zip(sub) {
            coefficients[c] = v;
        }
        (order, coefficients, intercept)
    };
    let fidelity_r2 = weighted_r2(samples, targets, weights, &st, &coefficients, intercept);
    Ok(SurrogateFit {
        coefficients,
        selected,
        intercept,
        fidelity_r2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_examples() {
        assert_eq!(kernel_weight(0.0, 0.75).unwrap(), 1.0);
        assert!((kernel_weight(0.75, 0.75).unwrap() - (-1f64).exp()).abs() < 1e-15);
        assert!((kernel_weight(2.0, 2.0).unwrap() - 0.36787944117144233).abs() < 1e-15);
        assert!(matches!(
            kernel_weight(1.0, 0.0),
            Err(ExplainError::NonPositiveWidth(_))
        ));
    }

    #[test]
    fn distance_of_identity_and_full_flip() {
        assert_eq!(z_distance(&[1, 1, 1, 1]), 0.0);
        assert_eq!(z_distance(&[0, 0, 0, 0]), 1.0);
        assert_eq!(z_distance(&[0, 1, 1, 1]), 0.5);
    }

    fn grid(d: usize) -> Vec<Vec<u8>> {
        (0..1usize << d)
            .map(|m| (0..d).map(|j| ((m >> j) & 1) as u8).collect())
            .collect()
    }

    #[test]
    fn constant_targets_give_zero_fit() {
        let z = grid(3);
        let fit = fit_weighted_surrogate(&z, &[0.3; 8], &[1.0; 8], 2, 1.0).unwrap();
        assert!(fit.coefficients.iter().all(|&c| c == 0.0));
        assert_eq!(fit.intercept, 0.3);
        assert_eq!(fit.fidelity_r2, 0.0);
    }

    #[test]
    fn huge_lambda_shrinks_to_weighted_mean() {
        let z = grid(3);
        let y: Vec<f64> = z
            .iter()
            .map(|r| 0.2 + 0.5 * r[0] as f64 - 0.1 * r[2] as f64)
            .collect();
        let w: Vec<f64> = (0..8).map(|i| 1.0 + i as f64).collect();
        let fit = fit_weighted_surrogate(&z, &y, &w, 3, 1e12).unwrap();
        let mean = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>();
        assert!(fit.coefficients.iter().all(|c| c.abs() < 1e-9));
        assert!((fit.intercept - mean).abs() < 1e-9);
    }

    #[test]
    fn top_k_keeps_strongest_terms() {
        let z = grid(4);
        let y: Vec<f64> = z
            .iter()
            .map(|r| 0.1 + 0.5 * r[1] as f64 - 0.3 * r[3] as f64 + 0.01 * r[0] as f64)
            .collect();
        let fit = fit_weighted_surrogate(&z, &y, &[1.0; 16], 2, 0.0).unwrap();
        assert_eq!(fit.selected, vec![1, 3]);
        assert_eq!(fit.coefficients[0], 0.0);
        assert!((fit.coefficients[1] - 0.5).abs() < 1e-9);
        assert!(fit.fidelity_r2 > 0.99);
    }

    #[test]
    fn constant_column_is_pinned_to_zero_without_ridge() {
        let mut z = grid(2);
        for r in &mut z {
            r.push(1);
        }
        let y: Vec<f64> = z.iter().map(|r| 0.4 * r[0] as f64).collect();
        let fit = fit_weighted_surrogate(&z, &y, &[1.0; 4], 3, 0.0).unwrap();
        assert_eq!(fit.coefficients[2], 0.0);
        assert!((fit.coefficients[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn input_validation() {
        let z = grid(2);
        assert!(matches!(
            fit_weighted_surrogate(&z, &[0.0; 3], &[1.0; 4], 1, 0.0),
            Err(ExplainError::LengthMismatch)
        ));
        assert!(matches!(
            fit_weighted_surrogate(&z[..1], &[0.0], &[1.0], 1, 0.0),
            Err(ExplainError::TooFewSamples { .. })
        ));
        // duplicated column is collinear when unregularized
        let dup: Vec<Vec<u8>> = z.iter().map(|r| vec![r[0], r[0]]).collect();
        let y = [0.0, 1.0, 0.0, 1.0];
        assert!(matches!(
            fit_weighted_surrogate(&dup, &y, &[1.0; 4], 2, 0.0),
            Err(ExplainError::SingularSystem)
        ));
        assert!(fit_weighted_surrogate(&dup, &y, &[1.0; 4], 2, 1.0).is_ok());
    }
}
