//! Metropolis-Hastings proposal and acceptance.

use rand::seq::index;
use rand::Rng;

use super::SearchError;
use crate::fingerprint::Fingerprint;
use crate::policy::ProbVector;

/// Flips exactly `k` distinct bits of `current`.
///
/// Positions are drawn without replacement with weight `p_i` where the bit is
/// 0 and `1 - p_i` where it is 1, so flips move the state toward the bit
/// values the policy prefers.
pub fn mh_propose<R: Rng + ?Sized>(
    current: &Fingerprint,
    p: &ProbVector,
    k: usize,
    rng: &mut R,
) -> Result<Fingerprint, SearchError> {
    let len = current.len();
    if p.len() != len {
        return Err(SearchError::InvalidConfig(format!(
            "policy length {} does not match fingerprint length {len}",
            p.len()
        )));
    }
    if k == 0 || k > len {
        return Err(SearchError::InvalidConfig(format!(
            "flip count {k} must be in 1..={len}"
        )));
    }
    let weight = |i: usize| if current.get(i) { 1.0 - p[i] } else { p[i] };
    let positions = match index::sample_weighted(rng, len, weight, k) {
        Ok(ix) => ix.into_vec(),
        // unreachable while probabilities are clamped away from 0 and 1
        Err(_) => index::sample(rng, len, k).into_vec(),
    };
    let mut next = current.clone();
    for i in positions {
        next.flip(i);
    }
    Ok(next)
}

/// Accepts with probability `min(1, exp(beta * (proposal - current)))`.
pub fn mh_accept<R: Rng + ?Sized>(current: f64, proposal: f64, beta: f64, rng: &mut R) -> bool {
    if proposal >= current || beta == 0.0 {
        return true;
    }
    rng.random::<f64>() < (beta * (proposal - current)).exp()
}
