#![allow(dead_code)]

use cellfree::channel::CorrelationSet;
use cellfree::hybrid::{effective_correlations, AnalogMethod, EffectiveCorrelations, HybridDesign};
use cellfree::linalg::hermitian_eigen;
use cellfree::link::{ul_mmse_sinr, EffectiveNoise};
use cellfree::rng::{complex_gaussian, stream, SimRng};
use cellfree::scalar::{cis, cr, CMat, CVec};
use cellfree::ServiceMap;
use nalgebra::DMatrix;
use rand::Rng;

pub fn rng(seed: u64) -> SimRng {
    stream(seed, &[0xfeed])
}

pub fn gaussian_mat(r: usize, c: usize, rng: &mut SimRng) -> CMat<f64> {
    CMat::from_fn(r, c, |_, _| complex_gaussian(rng))
}

pub fn gaussian_vec(n: usize, rng: &mut SimRng) -> CVec<f64> {
    CVec::from_fn(n, |_, _| complex_gaussian(rng))
}

/// `X X^* / cols` with `X` of size `n x rank`, scaled to trace `n * scale`.
pub fn random_psd(n: usize, rank: usize, scale: f64, rng: &mut SimRng) -> CMat<f64> {
    let x = gaussian_mat(n, rank, rng);
    let r = &x * x.adjoint();
    let tr: f64 = (0..n).map(|i| r[(i, i)].re).sum();
    let r = r * cr(n as f64 * scale / tr);
    (&r + r.adjoint()) * cr(0.5)
}

/// `n x l` matrix with orthonormal columns.
pub fn semi_unitary(n: usize, l: usize, rng: &mut SimRng) -> CMat<f64> {
    let q = gaussian_mat(n, l, rng).qr().q();
    q.columns(0, l).into_owned()
}

pub fn unit_modulus(n: usize, l: usize, rng: &mut SimRng) -> CMat<f64> {
    let amp = 1.0 / (n as f64).sqrt();
    CMat::from_fn(n, l, |_, _| {
        cis(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)) * cr(amp)
    })
}

pub fn diag(values: &[f64]) -> CMat<f64> {
    CMat::from_diagonal(&CVec::from_iterator(values.len(), values.iter().map(|&v| cr(v))))
}

pub fn projector(w: &CMat<f64>) -> CMat<f64> {
    let q = w.clone().qr().q();
    let q = q.columns(0, w.ncols()).into_owned();
    &q * q.adjoint()
}

pub fn fro(a: &CMat<f64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Random correlation set, `covs[m][k]` of rank `rank`, gains in `[0.5, 2)`.
pub fn random_corr(m: usize, k: usize, n: usize, rank: usize, rng: &mut SimRng) -> CorrelationSet<f64> {
    let covs = (0..m)
        .map(|_| {
            (0..k)
                .map(|_| {
                    let g = rng.random_range(0.5..2.0);
                    random_psd(n, rank, g, rng)
                })
                .collect()
        })
        .collect();
    CorrelationSet::from_matrices(covs).unwrap()
}

pub fn real_mat(a: &CMat<f64>) -> DMatrix<f64> {
    a.map(|z| z.re)
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Effective correlations of `covs[m][k]` seen through `chains[m]`.
pub fn effective(covs: Vec<Vec<CMat<f64>>>, chains: Vec<CMat<f64>>) -> EffectiveCorrelations<f64> {
    let corr = CorrelationSet::from_matrices(covs).unwrap();
    effective_correlations(&corr, &HybridDesign::from_chains(AnalogMethod::Digital, chains))
}

pub fn min_eigenvalue(a: &CMat<f64>) -> f64 {
    let e = hermitian_eigen(a, 0.0);
    *e.values.last().unwrap()
}

/// Perfect-CSI UL MMSE SINR for channels `h[m][k]` seen through `chains`.
pub fn perfect_csi_ul_sinr(h: &[Vec<CVec<f64>>], chains: &[CMat<f64>], powers: &[f64], noise: f64) -> Vec<f64> {
    let g: Vec<Vec<CVec<f64>>> = h
        .iter()
        .zip(chains)
        .map(|(hm, b)| hm.iter().map(|x| b.adjoint() * x).collect())
        .collect();
    let sigma = EffectiveNoise {
        per_ap: chains.iter().map(|b| b.adjoint() * b * cr(noise)).collect(),
    };
    ul_mmse_sinr(&g, &sigma, &ServiceMap::full(h.len(), powers.len()), powers).unwrap()
}

pub fn random_channels(m: usize, k: usize, n: usize, rng: &mut SimRng) -> Vec<Vec<CVec<f64>>> {
    (0..m).map(|_| (0..k).map(|_| gaussian_vec(n, rng)).collect()).collect()
}
