//! Per-block link evaluation: UL MMSE combining and DL subset RZF
//! precoding on the effective (post-analog) channels.

use rayon::prelude::*;

use crate::channel::CorrelationSet;
use crate::error::{Error, Result};
use crate::estimation::{mmse_estimate, EstimationStats, PilotBook};
use crate::linalg::{hermitian_part, BlockDiag, HermitianSolver};
use crate::rng::{complex_gaussian, stream, tag};
use crate::scalar::{cr, CMat, CVec, Real, C};
use crate::scenario::ServiceMap;

pub const MIN_BLOCKS: usize = 10;
pub const DEFAULT_CALIBRATION_BLOCKS: usize = 2000;
const JACKKNIFE_GROUPS: usize = 10;

/// `(1 - tau/tau_c) log2(1 + sinr)`.
pub fn spectral_efficiency<T: Real>(sinr: T, tau: usize, tau_c: usize) -> T {
    let prelog = T::one() - T::from_usize_lossy(tau) / T::from_usize_lossy(tau_c);
    prelog.max(T::zero()) * (T::one() + sinr).log2()
}

/// Per-AP effective noise `Sigma_m = sum_{i in U_m} C p + sum_{i not in U_m} R p + noise B^*B`.
/// The covariance seen by UE `k` is block-diagonal over `m in F_k`.
#[derive(Debug, Clone)]
pub struct EffectiveNoise<T: Real> {
    pub per_ap: Vec<CMat<T>>,
}

impl<T: Real> EffectiveNoise<T> {
    pub fn for_ue(&self, k: usize, service: &ServiceMap) -> BlockDiag<T> {
        BlockDiag::new(service.served_by(k).iter().map(|&m| self.per_ap[m].clone()).collect())
    }
}

pub fn effective_noise_cov<T: Real>(
    stats: &EstimationStats<T>,
    powers: &[T],
    service: &ServiceMap,
    noise: T,
) -> EffectiveNoise<T> {
    let per_ap = (0..stats.num_aps())
        .map(|m| {
            let mut s = stats.coloring(m) * cr(noise);
            for (i, &p) in powers.iter().enumerate() {
                let part = if service.serves_ue(m, i) {
                    stats.err(m, i)
                } else {
                    stats.r(m, i)
                };
                s += part * cr(p);
            }
            hermitian_part(&s)
        })
        .collect();
    EffectiveNoise { per_ap }
}

/// Stack `est[m][i]` over `aps`, zeroing APs that do not serve `i`.
fn stack<T: Real>(est: &[Vec<CVec<T>>], aps: &[usize], i: usize, service: &ServiceMap) -> CVec<T> {
    let l = est[0][0].len();
    let mut v = CVec::zeros(aps.len() * l);
    for (pos, &m) in aps.iter().enumerate() {
        if service.serves_ue(m, i) {
            v.rows_mut(pos * l, l).copy_from(&est[m][i]);
        }
    }
    v
}

/// Interference-plus-noise matrix for UE `k` and its own stacked estimate.
fn ul_system<T: Real>(
    est: &[Vec<CVec<T>>],
    noise: &EffectiveNoise<T>,
    service: &ServiceMap,
    powers: &[T],
    k: usize,
) -> (CMat<T>, CVec<T>) {
    let aps = service.served_by(k);
    let mut a = noise.for_ue(k, service).to_dense();
    for (i, &p) in powers.iter().enumerate() {
        if i != k {
            let x = stack(est, aps, i, service);
            a.gerc(cr(p), &x, &x, cr(T::one()));
        }
    }
    (hermitian_part(&a), stack(est, aps, k, service))
}

/// `SINR_k = p_k ghat_k^* (sum_{i!=k} p_i x_i x_i^* + Sigma_k)^-1 ghat_k`.
pub fn ul_mmse_sinr<T: Real>(
    est: &[Vec<CVec<T>>],
    noise: &EffectiveNoise<T>,
    service: &ServiceMap,
    powers: &[T],
) -> Result<Vec<T>> {
    (0..powers.len())
        .map(|k| {
            let (a, g) = ul_system(est, noise, service, powers, k);
            Ok(powers[k] * HermitianSolver::new(&a)?.inv_quad(&g))
        })
        .collect()
}

/// Explicit MMSE combiner `(sum_{i!=k} p_i x_i x_i^* + Sigma_k)^-1 ghat_k`
/// over the APs in `F_k`.
pub fn ul_mmse_combiner<T: Real>(
    est: &[Vec<CVec<T>>],
    noise: &EffectiveNoise<T>,
    service: &ServiceMap,
    powers: &[T],
    k: usize,
) -> Result<CVec<T>> {
    let (a, g) = ul_system(est, noise, service, powers, k);
    Ok(HermitianSolver::new(&a)?.solve_vec(&g))
}

/// SINR of an arbitrary combiner `v` for UE `k`.
pub fn ul_sinr_with_combiner<T: Real>(
    v: &CVec<T>,
    est: &[Vec<CVec<T>>],
    noise: &EffectiveNoise<T>,
    service: &ServiceMap,
    powers: &[T],
    k: usize,
) -> T {
    let (a, g) = ul_system(est, noise, service, powers, k);
    let num = v.dotc(&g).norm_sqr() * powers[k];
    num / v.dotc(&(&a * v)).re
}

/// `M^(s) o Ghat`: `ML x K`, blocks of APs not serving a UE zeroed.
pub fn masked_stack<T: Real>(est: &[Vec<CVec<T>>], service: &ServiceMap) -> CMat<T> {
    let all: Vec<usize> = (0..est.len()).collect();
    let k_total = est[0].len();
    let cols: Vec<CVec<T>> = (0..k_total).map(|i| stack(est, &all, i, service)).collect();
    CMat::from_columns(&cols)
}

/// Unnormalized RZF directions `(G G^* + rho I)^-1 G = G (G^* G + rho I_K)^-1`.
pub fn rzf_directions<T: Real>(gs: &CMat<T>, rho: T) -> Result<CMat<T>> {
    let k = gs.ncols();
    let gram = hermitian_part(&(gs.adjoint() * gs)) + CMat::identity(k, k) * cr(rho);
    Ok(gs * HermitianSolver::new(&gram)?.inverse())
}

/// `V = (G G^* + rho I)^-1 G Lambda`.
pub fn rzf_precoders<T: Real>(est: &[Vec<CVec<T>>], service: &ServiceMap, rho: T, lambda: &[T]) -> Result<CMat<T>> {
    let mut v = rzf_directions(&masked_stack(est, service), rho)?;
    for (j, &l) in lambda.iter().enumerate() {
        v.column_mut(j).scale_mut(l);
    }
    Ok(v)
}

/// `||W v_k||^2 = v_k^* blockdiag(B^*B) v_k` per column.
pub fn radiated_power<T: Real>(v: &CMat<T>, coloring: &[CMat<T>]) -> Vec<T> {
    let l = coloring[0].nrows();
    (0..v.ncols())
        .map(|k| {
            coloring
                .iter()
                .enumerate()
                .map(|(m, c)| {
                    let x = v.view((m * l, k), (l, 1));
                    (x.adjoint() * c * x)[(0, 0)].re
                })
                .fold(T::zero(), |a, b| a + b)
        })
        .collect()
}

/// Draws effective channels and their MMSE estimates block by block.
///
/// `g_{m,k} = B_m^* V Lambda^{1/2} w`, pilots per the book, fresh pilot noise
/// per block; each block is a pure function of `(seed, stream tag, block)`.
pub struct BlockSampler<'a, T: Real> {
    factors: Vec<CMat<T>>,
    chains: &'a [CMat<T>],
    stats: &'a EstimationStats<T>,
    phi: CMat<T>,
    num_ues: usize,
    antennas: usize,
    seed: u64,
}

/// One coherence block: true and estimated effective channels, `[m][k]`.
pub struct Block<T: Real> {
    pub g: Vec<Vec<CVec<T>>>,
    pub ghat: Vec<Vec<CVec<T>>>,
}

impl<'a, T: Real> BlockSampler<'a, T> {
    pub fn new(
        corr: &CorrelationSet<T>,
        chains: &'a [CMat<T>],
        stats: &'a EstimationStats<T>,
        book: &PilotBook,
        seed: u64,
    ) -> Result<Self> {
        if stats.filters.is_empty() {
            return Err(Error::Dimension("statistics carry no estimators".into()));
        }
        let mut factors = Vec::with_capacity(corr.num_aps() * corr.num_ues());
        for m in 0..corr.num_aps() {
            let bh = chains[m].adjoint();
            for k in 0..corr.num_ues() {
                factors.push(&bh * corr.get(m, k).sqrt_factor());
            }
        }
        Ok(Self {
            factors,
            chains,
            stats,
            phi: book.matrix(),
            num_ues: corr.num_ues(),
            antennas: corr.antennas(),
            seed,
        })
    }

    pub fn block(&self, stream_tag: u64, b: u64) -> Block<T> {
        let mut rng = stream(self.seed, &[stream_tag, b]);
        let n = self.antennas;
        let tau = self.phi.nrows();
        let amp = cr(self.stats.pilot_power.sqrt());
        let sd = cr(self.stats.noise.sqrt());
        let mut g = Vec::with_capacity(self.chains.len());
        let mut y = Vec::with_capacity(self.chains.len());
        for (m, b_m) in self.chains.iter().enumerate() {
            let gm: Vec<CVec<T>> = (0..self.num_ues)
                .map(|k| {
                    let w = CVec::<T>::from_fn(n, |_, _| complex_gaussian(&mut rng));
                    &self.factors[m * self.num_ues + k] * w
                })
                .collect();
            let z = CMat::<T>::from_fn(n, tau, |_, _| complex_gaussian::<T, _>(&mut rng) * sd);
            let mut ym = b_m.adjoint() * z;
            for (k, gk) in gm.iter().enumerate() {
                for t in 0..tau {
                    ym.column_mut(t).axpy(amp * self.phi[(t, k)], gk, cr(T::one()));
                }
            }
            g.push(gm);
            y.push(ym);
        }
        let ghat = mmse_estimate(&y, self.stats).expect("filters checked at construction");
        Block { g, ghat }
    }
}

/// Monte Carlo UL result per UE.
#[derive(Debug, Clone)]
pub struct UlResult<T> {
    pub se: Vec<T>,
    /// Mean instantaneous SINR.
    pub sinr: Vec<T>,
}

/// `SE_k = prelog * mean_b log2(1 + SINR_k(b))` over `blocks` evaluation blocks.
pub fn ul_mc<T: Real>(
    sampler: &BlockSampler<'_, T>,
    noise: &EffectiveNoise<T>,
    service: &ServiceMap,
    powers: &[T],
    blocks: usize,
    prelog: T,
) -> Result<UlResult<T>> {
    if blocks == 0 {
        return Err(Error::TooFewBlocks(0));
    }
    let per_block: Vec<Vec<T>> = (0..blocks as u64)
        .into_par_iter()
        .map(|b| ul_mmse_sinr(&sampler.block(tag::EVALUATION, b).ghat, noise, service, powers))
        .collect::<Result<_>>()?;
    let k_total = powers.len();
    let nb = T::from_usize_lossy(blocks);
    let mut se = vec![T::zero(); k_total];
    let mut sinr = vec![T::zero(); k_total];
    for row in &per_block {
        for k in 0..k_total {
            se[k] += (T::one() + row[k]).log2();
            sinr[k] += row[k];
        }
    }
    Ok(UlResult {
        se: se.into_iter().map(|s| prelog * s / nb).collect(),
        sinr: sinr.into_iter().map(|s| s / nb).collect(),
    })
}

/// `lambda_k = E{||W u_k||^2}^{-1/2}` estimated on a dedicated calibration ensemble.
pub fn calibrate_rzf<T: Real>(
    sampler: &BlockSampler<'_, T>,
    service: &ServiceMap,
    rho: T,
    blocks: usize,
) -> Result<Vec<T>> {
    let per_block: Vec<Vec<T>> = (0..blocks as u64)
        .into_par_iter()
        .map(|b| {
            let u = rzf_directions(&masked_stack(&sampler.block(tag::CALIBRATION, b).ghat, service), rho)?;
            Ok(radiated_power(&u, &sampler.stats.coloring))
        })
        .collect::<Result<_>>()?;
    let k_total = sampler.num_ues;
    let mut acc = vec![T::zero(); k_total];
    for row in &per_block {
        for k in 0..k_total {
            acc[k] += row[k];
        }
    }
    let nb = T::from_usize_lossy(blocks.max(1));
    Ok(acc
        .into_iter()
        .map(|s| {
            let mean = s / nb;
            if mean > T::zero() {
                T::one() / mean.sqrt()
            } else {
                T::zero()
            }
        })
        .collect())
}

/// Mean radiated power `E{||W v_k||^2}` of the normalized precoders on the
/// evaluation ensemble.
pub fn mean_radiated_power<T: Real>(
    sampler: &BlockSampler<'_, T>,
    service: &ServiceMap,
    rho: T,
    lambda: &[T],
    blocks: usize,
) -> Result<Vec<T>> {
    let per_block: Vec<Vec<T>> = (0..blocks as u64)
        .into_par_iter()
        .map(|b| {
            let v = rzf_precoders(&sampler.block(tag::EVALUATION, b).ghat, service, rho, lambda)?;
            Ok(radiated_power(&v, &sampler.stats.coloring))
        })
        .collect::<Result<_>>()?;
    let nb = T::from_usize_lossy(blocks.max(1));
    Ok((0..lambda.len())
        .map(|k| per_block.iter().fold(T::zero(), |a, r| a + r[k]) / nb)
        .collect())
}

/// Monte Carlo DL result per UE.
#[derive(Debug, Clone)]
pub struct DlResult<T> {
    pub sinr: Vec<T>,
    /// Grouped-jackknife standard error of each SINR estimate.
    pub stderr: Vec<T>,
    /// Sample mean of `g_k^* v_k`.
    pub signal: Vec<C<T>>,
}

#[derive(Clone)]
struct DlSums<T: Real> {
    signal: Vec<C<T>>,
    /// `sum |g_k^* v_i|^2`, row `k`, column `i`.
    power: CMat<T>,
    count: usize,
}

impl<T: Real> DlSums<T> {
    fn zeros(k: usize) -> Self {
        Self {
            signal: vec![cr(T::zero()); k],
            power: CMat::zeros(k, k),
            count: 0,
        }
    }

    fn add(&mut self, other: &Self) {
        for (a, b) in self.signal.iter_mut().zip(&other.signal) {
            *a += *b;
        }
        self.power += &other.power;
        self.count += other.count;
    }

    fn sub(&self, other: &Self) -> Self {
        Self {
            signal: self.signal.iter().zip(&other.signal).map(|(a, b)| a - b).collect(),
            power: &self.power - &other.power,
            count: self.count - other.count,
        }
    }

    fn sinr(&self, powers: &[T], noise: T) -> Vec<T> {
        let n = T::from_usize_lossy(self.count);
        (0..powers.len())
            .map(|k| {
                let mean = self.signal[k] / cr(n);
                let sig = mean.norm_sqr();
                let var = (self.power[(k, k)].re / n - sig).max(T::zero());
                let interference = (0..powers.len())
                    .filter(|&i| i != k)
                    .fold(T::zero(), |a, i| a + self.power[(k, i)].re / n * powers[i]);
                let den = interference + var * powers[k] + noise;
                if sig == T::zero() {
                    T::zero()
                } else {
                    sig * powers[k] / den
                }
            })
            .collect()
    }
}

fn dl_block_sums<T: Real>(g: &[Vec<CVec<T>>], v: &CMat<T>) -> DlSums<T> {
    let all: Vec<usize> = (0..g.len()).collect();
    let k_total = v.ncols();
    let full = ServiceMap::full(g.len(), k_total);
    let mut sums = DlSums::zeros(k_total);
    sums.count = 1;
    for k in 0..k_total {
        let gk = stack(g, &all, k, &full);
        for i in 0..k_total {
            let x = gk.dotc(&v.column(i));
            if i == k {
                sums.signal[k] = x;
            }
            sums.power[(k, i)] = cr(x.norm_sqr());
        }
    }
    sums
}

/// Use-and-then-forget DL SINR with every expectation replaced by a sample
/// mean over `blocks` evaluation blocks (common to all UEs).
pub fn dl_rzf_sinr_mc<T: Real>(
    sampler: &BlockSampler<'_, T>,
    service: &ServiceMap,
    rho: T,
    lambda: &[T],
    powers: &[T],
    noise: T,
    blocks: usize,
) -> Result<DlResult<T>> {
    if blocks < MIN_BLOCKS {
        return Err(Error::TooFewBlocks(blocks));
    }
    let per_block: Vec<DlSums<T>> = (0..blocks as u64)
        .into_par_iter()
        .map(|b| {
            let blk = sampler.block(tag::EVALUATION, b);
            let v = rzf_precoders(&blk.ghat, service, rho, lambda)?;
            Ok(dl_block_sums(&blk.g, &v))
        })
        .collect::<Result<_>>()?;
    let k_total = powers.len();
    let mut groups = vec![DlSums::zeros(k_total); JACKKNIFE_GROUPS];
    for (b, s) in per_block.iter().enumerate() {
        groups[b * JACKKNIFE_GROUPS / blocks].add(s);
    }
    let mut total = DlSums::zeros(k_total);
    for g in &groups {
        total.add(g);
    }
    let sinr = total.sinr(powers, noise);
    let loo: Vec<Vec<T>> = groups.iter().map(|g| total.sub(g).sinr(powers, noise)).collect();
    let gn = T::from_usize_lossy(JACKKNIFE_GROUPS);
    let stderr = (0..k_total)
        .map(|k| {
            let mean = loo.iter().fold(T::zero(), |a, r| a + r[k]) / gn;
            let ss = loo.iter().fold(T::zero(), |a, r| a + (r[k] - mean).powi(2));
            ((gn - T::one()) / gn * ss).sqrt()
        })
        .collect();
    let n = T::from_usize_lossy(blocks);
    Ok(DlResult {
        sinr,
        stderr,
        signal: total.signal.iter().map(|s| s / cr(n)).collect(),
    })
}

/// Instantaneous DL SINR with known channels, each RZF column scaled to
/// `||W v_k|| = 1`.
pub fn dl_rzf_sinr_instantaneous<T: Real>(
    g: &[Vec<CVec<T>>],
    service: &ServiceMap,
    rho: T,
    coloring: &[CMat<T>],
    powers: &[T],
    noise: T,
) -> Result<Vec<T>> {
    let mut v = rzf_directions(&masked_stack(g, service), rho)?;
    for (k, p) in radiated_power(&v, coloring).into_iter().enumerate() {
        if p > T::zero() {
            v.column_mut(k).unscale_mut(p.sqrt());
        }
    }
    let s = dl_block_sums(g, &v);
    Ok((0..powers.len())
        .map(|k| {
            let interference = (0..powers.len())
                .filter(|&i| i != k)
                .fold(T::zero(), |a, i| a + s.power[(k, i)].re * powers[i]);
            s.power[(k, k)].re * powers[k] / (interference + noise)
        })
        .collect())
}
