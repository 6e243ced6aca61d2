use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DiscretizationScheme, ExplainError};
use crate::tokenizer::TokenVector;

/// A perturbed tabular neighbour: `z[j] == 1` iff feature `j` kept the
/// instance's bin; `x` holds the raw values handed to the black box.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularSample {
    pub z: Vec<u8>,
    pub x: Vec<f64>,
}

/// Draws `n` neighbours of `instance`. Sample 0 is the instance itself.
///
/// Every feature keeps its bin with probability 0.5, otherwise moves to a
/// uniformly chosen different available bin; the raw value is then drawn
/// uniformly inside the chosen bin. The instance's own bin is widened to
/// include the instance value when it lies outside the training range.
pub fn perturb_tabular(
    instance: &[f64],
    scheme: &DiscretizationScheme,
    n: usize,
    seed: u64,
) -> Result<Vec<TabularSample>, ExplainError> {
    let d = scheme.n_features();
    if instance.len() != d {
        return Err(ExplainError::DimensionMismatch {
            expected: d,
            got: instance.len(),
        });
    }
    if n == 0 {
        return Err(ExplainError::TooFewSamples { needed: 1, got: 0 });
    }
    let own_bins: Vec<usize> = (0..d).map(|j| scheme.bin_of(j, instance[j])).collect();
    let alternatives: Vec<Vec<usize>> = (0..d)
        .map(|j| {
            scheme
                .available_bins(j)
                .into_iter()
                .filter(|&b| b != own_bins[j])
                .collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    out.push(TabularSample {
        z: vec![1; d],
        x: instance.to_vec(),
    });
    for _ in 1..n {
        let mut z = Vec::with_capacity(d);
        let mut x = Vec::with_capacity(d);
        for j in 0..d {
            let keep = rng.gen_bool(0.5);
            let (bin, kept) = match alternatives[j].choose(&mut rng) {
                Some(&other) if !keep => (other, false),
                _ => (own_bins[j], true),
            };
            let (mut lo, mut hi) = scheme.bin_range(j, bin);
            if kept {
                lo = lo.min(instance[j]);
                hi = hi.max(instance[j]);
            }
            let value = if lo < hi { rng.gen_range(lo..=hi) } else { lo };
            z.push(u8::from(kept));
            x.push(value);
        }
        out.push(TabularSample { z, x });
    }
    Ok(out)
}

/// Keep/drop masks over the file's distinct tokens (in
/// [`TokenVector::tokens`] order). Sample 0 keeps everything.
pub fn perturb_tokens(
    tokens: &TokenVector,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<u8>>, ExplainError> {
    if tokens.is_empty() {
        return Err(ExplainError::EmptyFile);
    }
    if n == 0 {
        return Err(ExplainError::TooFewSamples { needed: 1, got: 0 });
    }
    let d = tokens.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    out.push(vec![1; d]);
    for _ in 1..n {
        out.push((0..d).map(|_| u8::from(rng.gen_bool(0.5))).collect());
    }
    Ok(out)
}
