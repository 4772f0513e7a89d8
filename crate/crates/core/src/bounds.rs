//! Large-array MRC comparison of fully digital and hybrid receivers.

use rayon::prelude::*;

use crate::channel::{sample_channels, CorrelationSet};
use crate::linalg::real_trace;
use crate::scalar::{CMat, Real};

/// Digital-vs-hybrid gap bounds for one UE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapBounds<T> {
    pub lower: T,
    pub upper: T,
}

/// Interference-free MRC SINR `p/noise sum_m tr(W_m^* R_{m,k} W_m)`;
/// `chains = None` is the fully digital receiver (`tr R_{m,k}`).
pub fn mrc_asymptotic_sinr<T: Real>(
    corr: &CorrelationSet<T>,
    chains: Option<&[CMat<T>]>,
    power: T,
    noise: T,
) -> Vec<T> {
    let snr = power / noise;
    (0..corr.num_ues())
        .map(|k| {
            let total = (0..corr.num_aps()).fold(T::zero(), |acc, m| {
                let r = corr.cov(m, k);
                acc + match chains {
                    None => real_trace(r),
                    Some(w) => real_trace(&(w[m].adjoint() * r * &w[m])),
                }
            });
            snr * total
        })
        .collect()
}

/// Bounds on `SINR_digital - SINR_hybrid` for any semi-unitary `N x L`
/// analog matrices, from Cauchy interlacing:
/// `lower = snr sum_m sum_{n>L} lambda_n`,
/// `upper = snr sum_m [sum_{n<=L} (lambda_n - lambda_{N-L+n}) + sum_{n>L} lambda_n]`.
pub fn gap_bounds<T: Real>(corr: &CorrelationSet<T>, chains: usize, power: T, noise: T) -> Vec<GapBounds<T>> {
    let snr = power / noise;
    (0..corr.num_ues())
        .map(|k| {
            let (mut lo, mut hi) = (T::zero(), T::zero());
            for m in 0..corr.num_aps() {
                let b = eigen_gap_bounds(corr.eigenvalues(m, k), chains);
                lo += b.lower;
                hi += b.upper;
            }
            GapBounds {
                lower: snr * lo,
                upper: snr * hi,
            }
        })
        .collect()
}

/// Interlacing bounds for one descending spectrum and `l` retained dimensions.
pub fn eigen_gap_bounds<T: Real>(lambda: &[T], l: usize) -> GapBounds<T> {
    let n = lambda.len();
    let l = l.min(n);
    let tail = lambda[l..].iter().fold(T::zero(), |a, &x| a + x);
    let spread = (0..l).fold(T::zero(), |a, i| a + lambda[i] - lambda[n - l + i]);
    GapBounds {
        lower: tail,
        upper: spread + tail,
    }
}

/// Finite-size check of the interference-free assumption: mean MRC
/// interference-to-noise ratio per UE, `E{sum_{i!=k} p |a_k^* a_i|^2 / ||a_k||^2} / noise`
/// with `a = W^* h` stacked over APs, over `blocks` channel draws.
pub fn mrc_residual_interference<T: Real>(
    corr: &CorrelationSet<T>,
    chains: Option<&[CMat<T>]>,
    power: T,
    noise: T,
    blocks: usize,
    seed: u64,
) -> Vec<T> {
    let k_total = corr.num_ues();
    let per_block: Vec<Vec<T>> = (0..blocks as u64)
        .into_par_iter()
        .map(|b| {
            let real = sample_channels(corr, T::zero(), seed, b);
            let stacked: Vec<Vec<_>> = (0..k_total)
                .map(|k| {
                    (0..corr.num_aps())
                        .map(|m| match chains {
                            None => real.h[m][k].clone(),
                            Some(w) => w[m].adjoint() * &real.h[m][k],
                        })
                        .collect()
                })
                .collect();
            let dot = |a: usize, b: usize| {
                stacked[a]
                    .iter()
                    .zip(&stacked[b])
                    .fold(nalgebra::Complex::new(T::zero(), T::zero()), |s, (x, y)| s + x.dotc(y))
            };
            (0..k_total)
                .map(|k| {
                    let own = dot(k, k).re;
                    if own <= T::zero() {
                        return T::zero();
                    }
                    let leak = (0..k_total)
                        .filter(|&i| i != k)
                        .fold(T::zero(), |a, i| a + dot(k, i).norm_sqr());
                    power * leak / own / noise
                })
                .collect()
        })
        .collect();
    let nb = T::from_usize_lossy(blocks.max(1));
    (0..k_total)
        .map(|k| per_block.iter().fold(T::zero(), |a, r| a + r[k]) / nb)
        .collect()
}
