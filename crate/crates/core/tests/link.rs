mod common;

use cellfree::estimation::{estimation_statistics, PilotBook};
use cellfree::link::*;
use cellfree::scalar::{cr, CMat, CVec};
use cellfree::{Error, ServiceMap};
use common::*;

fn scalar(x: f64) -> CVec<f64> {
    CVec::from_element(1, cr(x))
}

#[test]
fn scalar_uplink_sinr() {
    let noise = EffectiveNoise {
        per_ap: vec![diag(&[1.0])],
    };
    let lone = ul_mmse_sinr(&[vec![scalar(1.0)]], &noise, &ServiceMap::full(1, 1), &[1.0]).unwrap();
    assert!((lone[0] - 1.0).abs() < 1e-12);
    let pair = ul_mmse_sinr(
        &[vec![scalar(1.0), scalar(1.0)]],
        &noise,
        &ServiceMap::full(1, 2),
        &[1.0, 1.0],
    )
    .unwrap();
    assert!((pair[0] - 0.5).abs() < 1e-12);
    assert!((pair[1] - 0.5).abs() < 1e-12);
}

fn random_setup(rng: &mut cellfree::rng::SimRng) -> (Vec<Vec<CVec<f64>>>, EffectiveNoise<f64>, ServiceMap, Vec<f64>) {
    let (m, l, k) = (3, 2, 4);
    let est = (0..m).map(|_| (0..k).map(|_| gaussian_vec(l, rng)).collect()).collect();
    let noise = EffectiveNoise {
        per_ap: (0..m).map(|_| random_psd(l, l, 0.5, rng) + diag(&[0.1, 0.1])).collect(),
    };
    let service = ServiceMap::from_mask(vec![
        vec![true, true, false, true],
        vec![false, true, true, false],
        vec![true, false, true, true],
    ])
    .unwrap();
    (est, noise, service, vec![1.0, 0.4, 2.0, 0.7])
}

#[test]
fn quadratic_form_matches_explicit_combiner() {
    let mut rng = rng(20);
    for _ in 0..100 {
        let (est, noise, service, powers) = random_setup(&mut rng);
        let sinr = ul_mmse_sinr(&est, &noise, &service, &powers).unwrap();
        for k in 0..powers.len() {
            let v = ul_mmse_combiner(&est, &noise, &service, &powers, k).unwrap();
            let via = ul_sinr_with_combiner(&v, &est, &noise, &service, &powers, k);
            assert!(rel(via, sinr[k]) < 1e-9);
            let other = gaussian_vec(v.len(), &mut rng);
            assert!(ul_sinr_with_combiner(&other, &est, &noise, &service, &powers, k) <= sinr[k] * (1.0 + 1e-12));
        }
    }
}

#[test]
fn spectral_efficiency_examples() {
    assert!((spectral_efficiency(1.0f64, 8, 200) - 0.96).abs() < 1e-12);
    assert_eq!(spectral_efficiency(0.0f64, 8, 200), 0.0);
    assert_eq!(spectral_efficiency(1e6f64, 200, 200), 0.0);
}

#[test]
fn perfect_csi_noise_is_coloring() {
    let mut rng = rng(21);
    let covs: Vec<Vec<CMat<f64>>> = (0..2)
        .map(|_| (0..3).map(|_| random_psd(4, 4, 1.0, &mut rng)).collect())
        .collect();
    let chains: Vec<CMat<f64>> = (0..2).map(|_| unit_modulus(4, 2, &mut rng)).collect();
    let eff = effective(covs, chains);
    let stats = cellfree::estimation::EstimationStats::perfect(&eff);
    let en = effective_noise_cov(&stats, &[1.0, 2.0, 3.0], &ServiceMap::full(2, 3), 0.3);
    for m in 0..2 {
        assert!(fro(&(&en.per_ap[m] - stats.coloring(m) * cr(0.3))) < 1e-12);
    }
}

#[test]
fn lone_ap_sums_error_covariances() {
    let mut rng = rng(22);
    let covs = vec![vec![random_psd(3, 3, 1.0, &mut rng), random_psd(3, 3, 1.0, &mut rng)]];
    let chain = semi_unitary(3, 2, &mut rng);
    let eff = effective(covs, vec![chain]);
    let stats = estimation_statistics(&eff, &PilotBook::new(2, vec![0, 1]).unwrap(), 1.0, 0.5).unwrap();
    let service = ServiceMap::from_mask(vec![vec![true, false]]);
    // UE 1 has no serving AP, so the map itself is rejected
    assert!(service.is_err());
    let served = ServiceMap::full(1, 2);
    let en = effective_noise_cov(&stats, &[0.6, 0.8], &served, 0.5);
    let expect = stats.err(0, 0) * cr(0.6) + stats.err(0, 1) * cr(0.8) + stats.coloring(0) * cr(0.5);
    assert!(fro(&(&en.per_ap[0] - expect)) < 1e-12);
}

#[test]
fn out_of_subset_interference_uses_full_covariance() {
    let mut rng = rng(23);
    let covs: Vec<Vec<CMat<f64>>> = (0..2)
        .map(|_| (0..2).map(|_| random_psd(3, 3, 1.0, &mut rng)).collect())
        .collect();
    let chains: Vec<CMat<f64>> = (0..2).map(|_| semi_unitary(3, 2, &mut rng)).collect();
    let eff = effective(covs, chains);
    let stats = estimation_statistics(&eff, &PilotBook::new(2, vec![0, 1]).unwrap(), 1.0, 0.5).unwrap();
    let service = ServiceMap::from_mask(vec![vec![true, false], vec![true, true]]).unwrap();
    let en = effective_noise_cov(&stats, &[0.6, 0.8], &service, 0.5);
    let expect = stats.err(0, 0) * cr(0.6) + stats.r(0, 1) * cr(0.8) + stats.coloring(0) * cr(0.5);
    assert!(fro(&(&en.per_ap[0] - expect)) < 1e-12);
}

#[test]
fn effective_noise_floor() {
    let mut rng = rng(24);
    for _ in 0..50 {
        let covs: Vec<Vec<CMat<f64>>> = (0..2)
            .map(|_| (0..3).map(|_| random_psd(5, 2, 1.0, &mut rng)).collect())
            .collect();
        let chains: Vec<CMat<f64>> = (0..2).map(|_| unit_modulus(5, 3, &mut rng)).collect();
        let eff = effective(covs, chains);
        let stats = estimation_statistics(&eff, &PilotBook::new(2, vec![0, 1, 0]).unwrap(), 1.0, 0.2).unwrap();
        let service = ServiceMap::from_mask(vec![vec![true, true, false], vec![false, true, true]]).unwrap();
        let en = effective_noise_cov(&stats, &[1.0, 1.0, 1.0], &service, 0.2);
        for m in 0..2 {
            let floor = 0.2 * min_eigenvalue(stats.coloring(m));
            assert!(min_eigenvalue(&en.per_ap[m]) >= floor - 1e-10);
        }
    }
}

#[test]
fn scalar_rzf_direction() {
    let g = CMat::from_element(1, 1, cr(0.8f64));
    let v = rzf_directions(&g, 0.3).unwrap();
    assert!((v[(0, 0)].re - 0.8 / (0.64 + 0.3)).abs() < 1e-12);
}

#[test]
fn heavy_regularization_is_matched_filter() {
    let mut rng = rng(25);
    let g = gaussian_mat(6, 3, &mut rng);
    let rho = 1e10;
    let v = rzf_directions(&g, rho).unwrap() * cr(rho);
    assert!(fro(&(v - &g)) < 1e-8 * fro(&g));
}

#[test]
fn masked_stack_zeroes_unserved_blocks() {
    let mut rng = rng(26);
    let est: Vec<Vec<CVec<f64>>> = (0..2)
        .map(|_| (0..2).map(|_| gaussian_vec(3, &mut rng)).collect())
        .collect();
    let service = ServiceMap::from_mask(vec![vec![true, false], vec![true, true]]).unwrap();
    let g = masked_stack(&est, &service);
    assert_eq!(g.shape(), (6, 2));
    assert!(g.view((0, 1), (3, 1)).iter().all(|z| z.norm_sqr() == 0.0));
    assert_eq!(g.view((3, 1), (3, 1)).into_owned(), est[1][1].clone());
}

struct Fixture {
    corr: cellfree::channel::CorrelationSet<f64>,
    chains: Vec<CMat<f64>>,
    stats: cellfree::estimation::EstimationStats<f64>,
    book: PilotBook,
    service: ServiceMap,
}

fn fixture(seed: u64, k: usize, scale: f64) -> Fixture {
    let mut rng = rng(seed);
    let (m, n, l) = (3, 6, 3);
    let covs: Vec<Vec<CMat<f64>>> = (0..m)
        .map(|_| (0..k).map(|_| random_psd(n, 3, scale, &mut rng)).collect())
        .collect();
    let chains: Vec<CMat<f64>> = (0..m).map(|_| semi_unitary(n, l, &mut rng)).collect();
    let corr = cellfree::channel::CorrelationSet::from_matrices(covs.clone()).unwrap();
    let eff = effective(covs, chains.clone());
    let book = PilotBook::round_robin(k, 2);
    let stats = estimation_statistics(&eff, &book, 1.0, 0.1).unwrap();
    Fixture {
        corr,
        chains,
        stats,
        book,
        service: ServiceMap::full(m, k),
    }
}

#[test]
fn calibrated_precoders_have_unit_power() {
    let f = fixture(27, 4, 1.0);
    let sampler = BlockSampler::new(&f.corr, &f.chains, &f.stats, &f.book, 5).unwrap();
    let lambda = calibrate_rzf(&sampler, &f.service, 0.01, 4000).unwrap();
    let power = mean_radiated_power(&sampler, &f.service, 0.01, &lambda, 4000).unwrap();
    for p in power {
        assert!((0.95..=1.05).contains(&p), "{p}");
    }
}

#[test]
fn zero_channels_give_zero_sinr() {
    let f = fixture(28, 3, 0.0);
    let sampler = BlockSampler::new(&f.corr, &f.chains, &f.stats, &f.book, 1).unwrap();
    let lambda = calibrate_rzf(&sampler, &f.service, 0.01, 20).unwrap();
    assert!(lambda.iter().all(|&l| l == 0.0));
    let dl = dl_rzf_sinr_mc(&sampler, &f.service, 0.01, &lambda, &[1.0; 3], 0.1, 20).unwrap();
    assert!(dl.sinr.iter().all(|&s| s == 0.0));
}

#[test]
fn too_few_blocks_are_refused() {
    let f = fixture(29, 2, 1.0);
    let sampler = BlockSampler::new(&f.corr, &f.chains, &f.stats, &f.book, 1).unwrap();
    let r = dl_rzf_sinr_mc(&sampler, &f.service, 0.01, &[1.0, 1.0], &[1.0, 1.0], 0.1, 9);
    assert!(matches!(r, Err(Error::TooFewBlocks(9))));
}

#[test]
fn blocks_are_reproducible() {
    let f = fixture(30, 2, 1.0);
    let a = BlockSampler::new(&f.corr, &f.chains, &f.stats, &f.book, 9).unwrap();
    let b = BlockSampler::new(&f.corr, &f.chains, &f.stats, &f.book, 9).unwrap();
    let (x, y) = (a.block(1, 17), b.block(1, 17));
    assert_eq!(x.g, y.g);
    assert_eq!(x.ghat, y.ghat);
    assert_ne!(a.block(1, 18).g, x.g);
}

#[test]
fn lone_user_without_estimation_noise_has_no_gain_variance() {
    let n = 32;
    let covs = vec![vec![diag(&vec![1.0; n])]];
    let chains = vec![CMat::identity(n, n)];
    let corr = cellfree::channel::CorrelationSet::from_matrices(covs.clone()).unwrap();
    let eff = effective(covs, chains.clone());
    let book = PilotBook::new(1, vec![0]).unwrap();
    let stats = estimation_statistics(&eff, &book, 1.0, 1e-12).unwrap();
    let sampler = BlockSampler::new(&corr, &chains, &stats, &book, 77).unwrap();
    let service = ServiceMap::full(1, 1);
    let rho = 1e-6;
    let lambda = calibrate_rzf(&sampler, &service, rho, 500).unwrap();
    let dl = dl_rzf_sinr_mc(&sampler, &service, rho, &lambda, &[1.0], 0.5, 500).unwrap();
    let ideal = dl.signal[0].norm_sqr() / 0.5;
    assert!(rel(dl.sinr[0], ideal) < 1e-3, "{} vs {ideal}", dl.sinr[0]);
}

#[test]
fn signal_estimate_variance_halves_with_blocks() {
    // variance of the sample mean of g^* v across independent ensembles
    let f = fixture(32, 3, 1.0);
    let lambda = [1.0; 3];
    let reps = 200;
    let var_at = |blocks: usize| {
        let xs: Vec<f64> = (0..reps)
            .map(|r| {
                let sampler = BlockSampler::new(&f.corr, &f.chains, &f.stats, &f.book, 1000 + r as u64).unwrap();
                dl_rzf_sinr_mc(&sampler, &f.service, 0.01, &lambda, &[1.0; 3], 0.1, blocks)
                    .unwrap()
                    .signal[0]
                    .re
            })
            .collect();
        let mean = xs.iter().sum::<f64>() / reps as f64;
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64
    };
    let (small, large) = (16, 128);
    let slope = (var_at(large) / var_at(small)).ln() / ((large as f64) / (small as f64)).ln();
    assert!((slope + 1.0).abs() <= 0.2, "slope {slope}");
}

#[test]
fn instantaneous_sinr_of_orthogonal_users() {
    // two users on disjoint antennas: no interference
    let g = vec![vec![
        CVec::from_vec(vec![cr(1.0), cr(0.0)]),
        CVec::from_vec(vec![cr(0.0), cr(2.0)]),
    ]];
    let s = dl_rzf_sinr_instantaneous(
        &g,
        &ServiceMap::full(1, 2),
        1e-9,
        &[CMat::identity(2, 2)],
        &[1.0, 1.0],
        0.5,
    )
    .unwrap();
    assert!(rel(s[0], 2.0) < 1e-6);
    assert!(rel(s[1], 8.0) < 1e-6);
}
