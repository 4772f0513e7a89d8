mod common;

use cellfree::estimation::{estimation_statistics, EstimationStats, PilotBook};
use cellfree::linalg::{hermitian_defect, BlockDiag};
use cellfree::link::{calibrate_rzf, dl_rzf_sinr_mc, effective_noise_cov, BlockSampler};
use cellfree::rmt::*;
use cellfree::scalar::{cr, CMat};
use cellfree::ServiceMap;
use common::*;

const TOL: f64 = 1e-12;

fn scalar(x: f64) -> BlockDiag<f64> {
    BlockDiag::dense(diag(&[x]))
}

fn solve(r: &[BlockDiag<f64>], s: &BlockDiag<f64>, z: f64, dim: f64) -> Resolvent<f64> {
    fixed_point_e(r, s, z, dim, TOL, DEFAULT_MAX_ITERS).unwrap()
}

#[test]
fn scalar_fixed_point_is_golden_ratio() {
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let res = solve(&[scalar(1.0)], &scalar(0.0), 1.0, 1.0);
    assert!((res.state.e[0] - golden).abs() < 1e-10);
    assert!((res.t.blocks[0][(0, 0)].re - golden).abs() < 1e-10);
    assert!(res.state.residual <= TOL);
    assert!(res.state.iterations <= DEFAULT_MAX_ITERS);
}

#[test]
fn empty_sum_gives_plain_inverse() {
    let mut rng = rng(40);
    let s = BlockDiag::new(vec![random_psd(3, 2, 1.0, &mut rng), random_psd(3, 3, 1.0, &mut rng)]);
    let zero = BlockDiag::zeros(&[3, 3]);
    let res = solve(&[zero.clone(), zero], &s, 0.5, 6.0);
    assert!(res.state.e.iter().all(|&e| e == 0.0));
    for (b, blk) in s.blocks.iter().enumerate() {
        let expect = (blk + CMat::identity(3, 3) * cr(0.5)).try_inverse().unwrap();
        assert!(fro(&(&res.t.blocks[b] - expect)) < 1e-12);
    }
}

/// Bisection on `e = 1 / (2 / (1 + e) + 1)`.
fn symmetric_pair_root() -> f64 {
    let f = |e: f64| e - 1.0 / (2.0 / (1.0 + e) + 1.0);
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn identical_users_share_coefficients() {
    let res = solve(&[scalar(1.0), scalar(1.0)], &scalar(0.0), 1.0, 1.0);
    let root = symmetric_pair_root();
    assert_eq!(res.state.e[0], res.state.e[1]);
    assert!((res.state.e[0] - root).abs() < 1e-10);
}

#[test]
fn scalar_derivatives() {
    let r = [scalar(1.0)];
    let res = solve(&r, &scalar(0.0), 1.0, 1.0);
    let sys = DerivativeSystem::new(&r, &res, 1.0).unwrap();
    let one = scalar(1.0);
    assert!((sys.v(&one)[0] - 0.381966).abs() < 1e-6);
    assert!((sys.j[(0, 0)] - 0.145898).abs() < 1e-6);
    assert!((sys.e_prime(&one)[0] - 0.447214).abs() < 1e-6);
    assert!((sys.t_prime(&one).blocks[0][(0, 0)].re - 0.447214).abs() < 1e-6);
    // exact: e' = 1/sqrt(5)
    assert!((sys.e_prime(&one)[0] - 1.0 / 5f64.sqrt()).abs() < 1e-10);
}

#[test]
fn zero_direction_has_zero_derivative() {
    let mut rng = rng(41);
    let r: Vec<BlockDiag<f64>> = (0..3)
        .map(|_| BlockDiag::dense(random_psd(4, 2, 1.0, &mut rng)))
        .collect();
    let res = solve(&r, &BlockDiag::zeros(&[4]), 0.3, 4.0);
    let sys = DerivativeSystem::new(&r, &res, 4.0).unwrap();
    let zero = BlockDiag::zeros(&[4]);
    assert!(sys.v(&zero).iter().all(|&x| x == 0.0));
    assert!(sys.e_prime(&zero).iter().all(|&x| x == 0.0));
    assert!(sys.t_prime(&zero).is_zero());
}

#[test]
fn symmetric_pair_has_equal_derivatives() {
    let mut rng = rng(42);
    let r0 = random_psd(3, 3, 1.0, &mut rng);
    let r = vec![BlockDiag::dense(r0.clone()), BlockDiag::dense(r0)];
    let res = solve(&r, &BlockDiag::zeros(&[3]), 0.2, 3.0);
    let ep = e_prime(&res, &r, &BlockDiag::identity(&[3]), 3.0).unwrap();
    assert!((ep[0] - ep[1]).abs() < 1e-12 * ep[0]);
}

#[test]
fn uncoupled_derivative_is_sandwich() {
    let mut rng = rng(43);
    let phi = BlockDiag::dense(random_psd(3, 3, 1.0, &mut rng));
    let r = vec![BlockDiag::zeros(&[3])];
    let s = BlockDiag::dense(random_psd(3, 3, 1.0, &mut rng));
    let res = solve(&r, &s, 0.4, 3.0);
    let tp = t_prime(&res, &r, &phi, 3.0).unwrap();
    assert!(fro(&(tp.to_dense() - res.t.sandwich(&phi).to_dense())) < 1e-12);
}

#[test]
fn derivative_is_hermitian() {
    let mut rng = rng(44);
    for _ in 0..20 {
        let r: Vec<BlockDiag<f64>> = (0..4)
            .map(|_| BlockDiag::new(vec![random_psd(3, 2, 1.0, &mut rng), random_psd(3, 3, 1.0, &mut rng)]))
            .collect();
        let phi = BlockDiag::new(vec![random_psd(3, 3, 1.0, &mut rng), random_psd(3, 1, 1.0, &mut rng)]);
        let res = solve(&r, &BlockDiag::zeros(&[3, 3]), 0.1, 6.0);
        let tp = t_prime(&res, &r, &phi, 6.0).unwrap();
        for b in &tp.blocks {
            assert!(hermitian_defect(b) <= 1e-12);
        }
    }
}

fn finite_difference_check(r: &[BlockDiag<f64>], dim: f64, z: f64) {
    let sizes = r[0].sizes();
    let zero = BlockDiag::zeros(&sizes);
    let h = 1e-4 * z;
    let up = solve(r, &zero, z + h, dim).t.to_dense();
    let down = solve(r, &zero, z - h, dim).t.to_dense();
    let fd = (up - down) * cr(-0.5 / h);
    let res = solve(r, &zero, z, dim);
    let tp = t_prime(&res, r, &BlockDiag::identity(&sizes), dim).unwrap().to_dense();
    for (a, b) in tp.iter().zip(fd.iter()) {
        assert!((a - b).norm() < 1e-4, "{a} vs {b}");
    }
}

#[test]
fn derivative_matches_finite_difference() {
    finite_difference_check(&[scalar(1.0)], 1.0, 1.0);
    let mut rng = rng(45);
    let r: Vec<BlockDiag<f64>> = (0..3)
        .map(|_| BlockDiag::dense(random_psd(4, 2, 1.0, &mut rng)))
        .collect();
    finite_difference_check(&r, 4.0, 0.5);
}

#[test]
fn large_dimension_trace_equivalents() {
    // smaller than the acceptance instance; same construction
    let mut rng = rng(46);
    let (n, k, draws, z) = (32, 8, 30, 0.5);
    let dim = n as f64;
    let covs: Vec<CMat<f64>> = (0..k).map(|_| random_psd(n, n / 2, 1.0, &mut rng)).collect();
    let d = random_psd(n, n, 1.0, &mut rng);
    let phi = random_psd(n, n, 1.0, &mut rng);
    let r: Vec<BlockDiag<f64>> = covs.iter().map(|c| BlockDiag::dense(c.clone())).collect();
    let res = solve(&r, &BlockDiag::zeros(&[n]), z, dim);
    let tp = t_prime(&res, &r, &BlockDiag::dense(phi.clone()), dim)
        .unwrap()
        .to_dense();
    let t = res.t.to_dense();
    let de_a = trace(&(&d * &t)) / dim;
    let de_b = trace(&(&d * &tp)) / dim;
    let (mut mc_a, mut mc_b) = (0.0, 0.0);
    let factors: Vec<CMat<f64>> = covs
        .iter()
        .map(|c| cellfree::channel::Correlation::new(c.clone()).unwrap().sqrt_factor())
        .collect();
    for _ in 0..draws {
        let mut a = CMat::identity(n, n) * cr(z);
        for f in &factors {
            let h = f * gaussian_vec(n, &mut rng);
            a += &h * h.adjoint() * cr(1.0 / dim);
        }
        let q = a.try_inverse().unwrap();
        mc_a += trace(&(&d * &q)) / dim;
        mc_b += trace(&(&d * &q * &phi * &q)) / dim;
    }
    mc_a /= draws as f64;
    mc_b /= draws as f64;
    assert!(rel(mc_a, de_a) < 0.05, "{mc_a} vs {de_a}");
    assert!(rel(mc_b, de_b) < 0.08, "{mc_b} vs {de_b}");
}

fn trace(a: &CMat<f64>) -> f64 {
    (0..a.nrows()).map(|i| a[(i, i)].re).sum()
}

fn random_stats(seed: u64, pilot_power: f64) -> (EstimationStats<f64>, ServiceMap) {
    let mut rng = rng(seed);
    let (m, n, l, k) = (3, 6, 3, 5);
    let covs: Vec<Vec<CMat<f64>>> = (0..m)
        .map(|_| (0..k).map(|_| random_psd(n, 3, 1.0, &mut rng)).collect())
        .collect();
    let chains: Vec<CMat<f64>> = (0..m).map(|_| unit_modulus(n, l, &mut rng)).collect();
    let eff = effective(covs, chains);
    let stats = estimation_statistics(&eff, &PilotBook::round_robin(k, 3), pilot_power, 0.1).unwrap();
    let service = ServiceMap::from_mask(vec![
        vec![true, true, false, true, true],
        vec![true, false, true, true, false],
        vec![false, true, true, false, true],
    ])
    .unwrap();
    (stats, service)
}

#[test]
fn uplink_equivalent_is_homogeneous() {
    let (stats, service) = random_stats(47, 1.0);
    let powers = [1.0, 0.5, 2.0, 1.0, 0.8];
    let base = ul_sinr_asymptotic(
        &stats,
        &effective_noise_cov(&stats, &powers, &service, 0.1),
        &powers,
        &service,
    )
    .unwrap();
    let doubled: Vec<f64> = powers.iter().map(|p| 2.0 * p).collect();
    let scaled = ul_sinr_asymptotic(
        &stats,
        &effective_noise_cov(&stats, &doubled, &service, 0.2),
        &doubled,
        &service,
    )
    .unwrap();
    for (a, b) in base.iter().zip(&scaled) {
        assert!(rel(*b, *a) < 1e-9);
    }
}

#[test]
fn no_estimate_means_no_sinr() {
    let (stats, service) = random_stats(48, 0.0);
    let powers = [1.0; 5];
    let ul = ul_sinr_asymptotic(
        &stats,
        &effective_noise_cov(&stats, &powers, &service, 0.1),
        &powers,
        &service,
    )
    .unwrap();
    assert!(ul.iter().all(|&s| s == 0.0));
    let dl = dl_sinr_asymptotic(&stats, &powers, &service, 0.01, 0.1).unwrap();
    assert!(dl.sinr.iter().all(|&s| s == 0.0));
}

#[test]
fn downlink_breakdown_is_consistent() {
    let (stats, service) = random_stats(49, 1.0);
    let powers = [1.0, 0.5, 2.0, 1.0, 0.8];
    let dl = dl_sinr_asymptotic(&stats, &powers, &service, 0.01, 0.1).unwrap();
    for k in 0..5 {
        assert!(dl.mu[k] >= 0.0 && dl.delta[k] > 0.0);
        let interference: f64 = (0..5)
            .filter(|&i| i != k)
            .map(|i| dl.theta[(k, i)] / dl.delta[i] * powers[i])
            .sum();
        let expect = dl.mu[k].powi(2) / dl.delta[k] * powers[k] / (interference + 0.1);
        assert!(rel(dl.sinr[k], expect) < 1e-12);
        assert!(dl.sinr_with_variance[k] <= dl.sinr[k]);
        assert!(rel(dl.lambda[k], (1.0 + dl.mu[k]) / dl.delta[k].sqrt()) < 1e-12);
    }
}

#[test]
fn lone_user_downlink_matches_simulation() {
    let mut rng = rng(50);
    let (m, n, l) = (4, 8, 4);
    let covs: Vec<Vec<CMat<f64>>> = (0..m).map(|_| vec![random_psd(n, 4, 1.0, &mut rng)]).collect();
    let chains: Vec<CMat<f64>> = (0..m).map(|_| semi_unitary(n, l, &mut rng)).collect();
    let corr = cellfree::channel::CorrelationSet::from_matrices(covs.clone()).unwrap();
    let eff = effective(covs, chains.clone());
    let book = PilotBook::new(1, vec![0]).unwrap();
    let stats = estimation_statistics(&eff, &book, 1.0, 0.1).unwrap();
    let service = ServiceMap::full(m, 1);
    let rho = 0.01;
    let de = dl_sinr_asymptotic(&stats, &[1.0], &service, rho, 0.1).unwrap();
    let sampler = BlockSampler::new(&corr, &chains, &stats, &book, 3).unwrap();
    let lambda = calibrate_rzf(&sampler, &service, rho, 2000).unwrap();
    let mc = dl_rzf_sinr_mc(&sampler, &service, rho, &lambda, &[1.0], 0.1, 2000).unwrap();
    // alone, the gain fluctuation is the only impairment besides noise
    assert!(de.sinr[0] > 1.5 * mc.sinr[0]);
    assert!(
        rel(de.sinr_with_variance[0], mc.sinr[0]) < 0.10,
        "{} vs {}",
        de.sinr_with_variance[0],
        mc.sinr[0]
    );
}
