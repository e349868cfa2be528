use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{check_pairs, horn_ao, probabilistic_ao, RegistrationResult, WeightedPair};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacParams {
    /// Residual norm below which a pair is an inlier, metres.
    pub inlier_threshold: f64,
    /// Hypothesis budget; all 3-subsets are tried when they fit in it.
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams {
            inlier_threshold: 0.10,
            max_iters: 500,
            seed: 0,
        }
    }
}

fn choose3(n: usize) -> usize {
    if n < 3 {
        0
    } else {
        n * (n - 1) * (n - 2) / 6
    }
}

/// Minimal-set RANSAC over Horn hypotheses followed by a probabilistic AO
/// refit on the winning inlier set.
pub fn ransac_ao(pairs: &[WeightedPair], params: &RansacParams) -> Result<RegistrationResult> {
    check_pairs(pairs)?;
    if !(params.inlier_threshold > 0.0) {
        return Err(Error::InvalidInput("inlier_threshold must be positive".into()));
    }
    let n = pairs.len();
    let subsets: Vec<[usize; 3]> = if choose3(n) <= params.max_iters {
        let mut all = Vec::with_capacity(choose3(n));
        for a in 0..n {
            for b in a + 1..n {
                for c in b + 1..n {
                    all.push([a, b, c]);
                }
            }
        }
        all
    } else {
        let mut r = rng::keyed(params.seed, rng::combine(0x5a_c0, n as u64));
        (0..params.max_iters)
            .map(|_| {
                let mut s = index::sample(&mut r, n, 3).into_vec();
                s.sort_unstable();
                [s[0], s[1], s[2]]
            })
            .collect()
    };

    let threshold2 = params.inlier_threshold * params.inlier_threshold;
    let mut best: Option<(Vec<usize>, f64)> = None;
    for subset in &subsets {
        let minimal: Vec<WeightedPair> = subset.iter().map(|&i| pairs[i]).collect();
        // degenerate triples simply produce no hypothesis
        let Ok(pose) = horn_ao(&minimal) else { continue };
        let mut inliers = Vec::new();
        let mut residual = 0.0;
        for (i, p) in pairs.iter().enumerate() {
            let d2 = p.residual(&pose).norm_squared();
            if d2 < threshold2 {
                inliers.push(i);
                residual += d2.sqrt();
            }
        }
        let better = match &best {
            None => true,
            Some((b, r)) => inliers.len() > b.len() || (inliers.len() == b.len() && residual < *r),
        };
        if better {
            best = Some((inliers, residual));
        }
    }

    let inliers = match best {
        Some((inliers, _)) if inliers.len() >= 3 => inliers,
        _ => return Err(Error::NoConsensus),
    };
    let subset: Vec<WeightedPair> = inliers.iter().map(|&i| pairs[i]).collect();
    let init = horn_ao(&subset)?;
    let mut result = probabilistic_ao(&subset, &init)?;
    result.inliers = inliers;
    Ok(result)
}
