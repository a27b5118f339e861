//! Deterministic parallel Monte Carlo plumbing. Replica i always draws from
//! ChaCha8 stream (salt << 32) | i of the run seed, work is split into
//! fixed-size chunks regardless of thread count, and chunk accumulators are
//! merged in chunk order, so results are bit-identical for any worker count.
//! Estimators that must share trajectories (coupled estimates at several
//! thresholds, say) share a salt; unrelated estimators take distinct salts.

use crate::error::{BklError, Result};
use crate::harness::stats::McEstimate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const CHUNK: u64 = 1024;

/// RNG for one replica of one estimator family.
pub fn replica_rng(seed: u64, salt: u32, replica: u64) -> ChaCha8Rng {
    debug_assert!(replica < (1 << 32));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((salt as u64) << 32) | replica);
    rng
}

/// Mean/SE of a scalar per-replica functional. The closure returns the
/// replica's value and whether its trajectory was capped.
pub fn mc_mean<F>(n: u64, seed: u64, salt: u32, per_replica: F) -> Result<McEstimate>
where
    F: Fn(&mut ChaCha8Rng) -> (f64, bool) + Sync,
{
    if n == 0 {
        return Err(BklError::insufficient("mc_mean needs n > 0"));
    }
    let n_chunks = n.div_ceil(CHUNK);
    let partials: Vec<(f64, f64, u64)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let (mut sum, mut sumsq, mut capped) = (0.0, 0.0, 0u64);
            for i in lo..hi {
                let mut rng = replica_rng(seed, salt, i);
                let (v, cap) = per_replica(&mut rng);
                sum += v;
                sumsq += v * v;
                capped += cap as u64;
            }
            (sum, sumsq, capped)
        })
        .collect();
    let (mut sum, mut sumsq, mut capped) = (0.0, 0.0, 0u64);
    for (s, s2, c) in partials {
        sum += s;
        sumsq += s2;
        capped += c;
    }
    McEstimate::from_sums(sum, sumsq, n, capped)
}

/// Mean/SE of a vector-valued per-replica functional (one value per grid
/// point, all read off the same trajectory). The closure fills `out` and
/// returns the capped flag.
pub fn mc_mean_vec<F>(
    n: u64,
    seed: u64,
    salt: u32,
    dim: usize,
    per_replica: F,
) -> Result<Vec<McEstimate>>
where
    F: Fn(&mut ChaCha8Rng, &mut [f64]) -> bool + Sync,
{
    if n == 0 || dim == 0 {
        return Err(BklError::insufficient("mc_mean_vec needs n > 0 and dim > 0"));
    }
    let n_chunks = n.div_ceil(CHUNK);
    let partials: Vec<(Vec<f64>, Vec<f64>, u64)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let mut sum = vec![0.0; dim];
            let mut sumsq = vec![0.0; dim];
            let mut capped = 0u64;
            let mut buf = vec![0.0; dim];
            for i in lo..hi {
                let mut rng = replica_rng(seed, salt, i);
                buf.fill(0.0);
                capped += per_replica(&mut rng, &mut buf) as u64;
                for (k, v) in buf.iter().enumerate() {
                    sum[k] += v;
                    sumsq[k] += v * v;
                }
            }
            (sum, sumsq, capped)
        })
        .collect();
    let mut sum = vec![0.0; dim];
    let mut sumsq = vec![0.0; dim];
    let mut capped = 0u64;
    for (s, s2, c) in partials {
        for k in 0..dim {
            sum[k] += s[k];
            sumsq[k] += s2[k];
        }
        capped += c;
    }
    (0..dim)
        .map(|k| McEstimate::from_sums(sum[k], sumsq[k], n, capped))
        .collect()
}

/// Collect accepted per-replica samples in replica order until `want` are in
/// hand, scanning replicas in fixed-size batches (so the accepted set depends
/// only on seed and salt, not on worker count). Returns the samples and the
/// number of replicas scanned; errs when `max_scan` replicas cannot produce
/// enough acceptances.
pub fn mc_collect<F>(
    want: usize,
    max_scan: u64,
    seed: u64,
    salt: u32,
    per_replica: F,
) -> Result<(Vec<f64>, u64)>
where
    F: Fn(&mut ChaCha8Rng) -> Option<f64> + Sync,
{
    if want == 0 {
        return Err(BklError::insufficient("mc_collect needs want > 0"));
    }
    const BATCH: u64 = 8192;
    let mut samples = Vec::with_capacity(want);
    let mut scanned = 0u64;
    while samples.len() < want && scanned < max_scan {
        let hi = (scanned + BATCH).min(max_scan);
        let batch: Vec<Option<f64>> = (scanned..hi)
            .into_par_iter()
            .map(|i| {
                let mut rng = replica_rng(seed, salt, i);
                per_replica(&mut rng)
            })
            .collect();
        for v in batch {
            if let Some(v) = v {
                samples.push(v);
                if samples.len() == want {
                    break;
                }
            }
        }
        scanned = hi;
    }
    if samples.len() < want {
        return Err(BklError::insufficient(format!(
            "collected {} of {want} samples after scanning {scanned} replicas",
            samples.len()
        )));
    }
    Ok((samples, scanned))
}
