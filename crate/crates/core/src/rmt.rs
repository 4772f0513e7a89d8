//! Deterministic equivalents of MMSE and RZF SINRs.
//!
//! For `Q = ((1/c) sum_i h_i h_i^* + S + z I)^-1` with `h_i ~ CN(0, R_i)`,
//! `(1/c) tr(D Q)` is approximated by `(1/c) tr(D T)` where
//! `T = ((1/c) sum_i R_i / (1 + e_i) + S + z I)^-1` and `e_i = (1/c) tr(R_i T)`.
//! Every matrix here is block-diagonal over APs.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimation::EstimationStats;
use crate::linalg::BlockDiag;
use crate::link::EffectiveNoise;
use crate::scalar::{cr, CMat, Real};
use crate::scenario::ServiceMap;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 500;
const DAMPING_PATIENCE: usize = 20;
/// Residual below which Newton steps replace plain iteration.
const NEWTON_RESIDUAL: f64 = 1e-2;

#[derive(Debug, Clone)]
pub struct FixedPointState<T> {
    pub e: Vec<T>,
    pub iterations: usize,
    pub residual: T,
    pub residual_trace: Vec<T>,
    /// Whether 0.5 relaxation was switched on.
    pub damped: bool,
}

#[derive(Debug, Clone)]
pub struct Resolvent<T: Real> {
    pub state: FixedPointState<T>,
    pub t: BlockDiag<T>,
}

fn resolvent<T: Real>(r: &[BlockDiag<T>], e: &[T], s: &BlockDiag<T>, z: T, dim: T) -> Result<BlockDiag<T>> {
    let mut a = s.clone();
    for (b, blk) in a.blocks.iter_mut().enumerate() {
        for i in 0..blk.nrows() {
            blk[(i, i)] += cr(z);
        }
        for (ri, &ei) in r.iter().zip(e) {
            *blk += &ri.blocks[b] * cr(T::one() / (dim * (T::one() + ei)));
        }
    }
    a.hermitian_part().inverse_hermitian()
}

/// `J_{k,l} = (1/c) tr(R_k T R_l T) / (c (1 + e_l)^2)`, the Jacobian of the
/// fixed-point map, with the sandwiches `T R_l T`.
fn jacobian<T: Real>(r: &[BlockDiag<T>], t: &BlockDiag<T>, e: &[T], dim: T) -> (DMatrix<T>, Vec<BlockDiag<T>>) {
    let trt: Vec<BlockDiag<T>> = r.iter().map(|rl| t.sandwich(rl)).collect();
    let j = DMatrix::from_fn(r.len(), r.len(), |a, b| {
        r[a].trace_mul(&trt[b]).re / (dim * dim * (T::one() + e[b]).powi(2))
    });
    (j, trt)
}

/// Solve `e_i = (1/c) tr(R_i T(e))` by fixed-point iteration from `e_i = c`.
///
/// Once the residual drops below 1e-2 each step becomes a Newton step
/// `e + (I - J)^-1 (f(e) - e)`, falling back to the plain update whenever
/// the Newton step would leave the nonnegative orthant.
///
/// `r` holds the (power-scaled) covariances, `s` must be Hermitian PSD and
/// `z > 0` unless `s` is positive definite.
pub fn fixed_point_e<T: Real>(
    r: &[BlockDiag<T>],
    s: &BlockDiag<T>,
    z: T,
    dim: T,
    tol: T,
    max_iters: usize,
) -> Result<Resolvent<T>> {
    let mut e = vec![dim; r.len()];
    let mut trace = Vec::new();
    let mut rising = 0;
    let mut damped = false;
    for it in 1..=max_iters {
        let t = resolvent(r, &e, s, z, dim)?;
        let mapped: Vec<T> = r.iter().map(|ri| (ri.trace_mul(&t).re / dim).max(T::zero())).collect();
        let residual = e
            .iter()
            .zip(&mapped)
            .fold(T::zero(), |m, (a, b)| m.max((*b - *a).abs() / (T::one() + b.abs())));
        let next: Vec<T> = if residual <= tol {
            mapped
        } else if residual < T::lit(NEWTON_RESIDUAL) {
            newton_step(r, &t, &e, &mapped, dim).unwrap_or(mapped)
        } else if damped {
            e.iter().zip(&mapped).map(|(a, b)| (*a + *b) * T::lit(0.5)).collect()
        } else {
            mapped
        };
        if let Some(&prev) = trace.last() {
            if residual > prev {
                rising += 1;
                if rising >= DAMPING_PATIENCE && !damped {
                    log::warn!("fixed point oscillating, enabling relaxation");
                    damped = true;
                }
            }
        }
        trace.push(residual);
        e = next;
        if residual <= tol {
            let t = resolvent(r, &e, s, z, dim)?;
            return Ok(Resolvent {
                state: FixedPointState {
                    e,
                    iterations: it,
                    residual,
                    residual_trace: trace,
                    damped,
                },
                t,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iters,
        residual: trace.last().map_or(f64::NAN, |r| r.as_f64()),
        trace: trace.iter().map(|r| r.as_f64()).collect(),
    })
}

fn newton_step<T: Real>(r: &[BlockDiag<T>], t: &BlockDiag<T>, e: &[T], mapped: &[T], dim: T) -> Option<Vec<T>> {
    let k = e.len();
    let (j, _) = jacobian(r, t, e, dim);
    let rhs = nalgebra::DVector::from_fn(k, |i, _| mapped[i] - e[i]);
    let step = (DMatrix::identity(k, k) - j).lu().solve(&rhs)?;
    let out: Vec<T> = e.iter().zip(step.iter()).map(|(a, d)| *a + *d).collect();
    out.iter().all(|x| x.is_finite() && *x >= T::zero()).then_some(out)
}

/// Linear system behind `e'(z, Phi) = (I - J)^-1 v(z, Phi)`, factored once
/// and reused for every `Phi`.
pub struct DerivativeSystem<'a, T: Real> {
    r: &'a [BlockDiag<T>],
    res: &'a Resolvent<T>,
    dim: T,
    /// `T R_l T`.
    trt: Vec<BlockDiag<T>>,
    /// `J_{k,l} = (1/c) tr(R_k T R_l T) / (c (1 + e_l)^2)`.
    pub j: DMatrix<T>,
    lu: nalgebra::LU<T, nalgebra::Dyn, nalgebra::Dyn>,
}

impl<'a, T: Real> DerivativeSystem<'a, T> {
    pub fn new(r: &'a [BlockDiag<T>], res: &'a Resolvent<T>, dim: T) -> Result<Self> {
        let k = r.len();
        let e = &res.state.e;
        let (j, trt) = jacobian(r, &res.t, e, dim);
        if k > 0 {
            let radius = j
                .clone()
                .complex_eigenvalues()
                .iter()
                .fold(T::zero(), |m, z| m.max(z.norm_sqr().sqrt()));
            if !(radius < T::one()) {
                return Err(Error::NotContractive);
            }
        }
        let lu = (DMatrix::identity(k, k) - &j).lu();
        if k > 0 && !lu.is_invertible() {
            return Err(Error::NotContractive);
        }
        Ok(Self {
            r,
            res,
            dim,
            trt,
            j,
            lu,
        })
    }

    /// `v_k = (1/c) tr(R_k T Phi T)`.
    pub fn v(&self, phi: &BlockDiag<T>) -> Vec<T> {
        let tpt = self.res.t.sandwich(phi);
        self.r.iter().map(|rk| rk.trace_mul(&tpt).re / self.dim).collect()
    }

    pub fn e_prime(&self, phi: &BlockDiag<T>) -> Vec<T> {
        let v = nalgebra::DVector::from_vec(self.v(phi));
        if v.is_empty() {
            return Vec::new();
        }
        self.lu
            .solve(&v)
            .expect("invertibility checked")
            .iter()
            .copied()
            .collect()
    }

    /// `T' = T Phi T + T ((1/c) sum_l R_l e'_l / (1 + e_l)^2) T`.
    pub fn t_prime(&self, phi: &BlockDiag<T>) -> BlockDiag<T> {
        let ep = self.e_prime(phi);
        let mut out = self.res.t.sandwich(phi);
        for (l, trt) in self.trt.iter().enumerate() {
            let w = ep[l] / (self.dim * (T::one() + self.res.state.e[l]).powi(2));
            out.add_scaled(w, trt);
        }
        out.hermitian_part()
    }
}

/// `e'(z, Phi)` for a converged resolvent.
pub fn e_prime<T: Real>(res: &Resolvent<T>, r: &[BlockDiag<T>], phi: &BlockDiag<T>, dim: T) -> Result<Vec<T>> {
    Ok(DerivativeSystem::new(r, res, dim)?.e_prime(phi))
}

/// `T'(z, Phi)` for a converged resolvent.
pub fn t_prime<T: Real>(res: &Resolvent<T>, r: &[BlockDiag<T>], phi: &BlockDiag<T>, dim: T) -> Result<BlockDiag<T>> {
    Ok(DerivativeSystem::new(r, res, dim)?.t_prime(phi))
}

fn masked<T: Real>(
    stats: &EstimationStats<T>,
    aps: &[usize],
    i: usize,
    service: &ServiceMap,
    scale: T,
) -> BlockDiag<T> {
    let l = stats.chains();
    BlockDiag::new(
        aps.iter()
            .map(|&m| {
                if service.serves_ue(m, i) {
                    stats.gamma(m, i) * cr(scale)
                } else {
                    CMat::zeros(l, l)
                }
            })
            .collect(),
    )
}

/// UL MMSE deterministic equivalent.
///
/// UE `k` gets its own system over `F_k`: the resolvent built from the
/// other UEs' masked estimate covariances `p_i Gamma_i` and `S = Sigma_k / c`,
/// with `z = 0` and `c = |F_k| L`. Then
/// `SINR_k = p_k (1/c) sum_{m in F_k} tr(Gamma_{m,k} T_m)`.
pub fn ul_sinr_asymptotic<T: Real>(
    stats: &EstimationStats<T>,
    noise: &EffectiveNoise<T>,
    powers: &[T],
    service: &ServiceMap,
) -> Result<Vec<T>> {
    (0..powers.len())
        .into_par_iter()
        .map(|k| {
            let aps = service.served_by(k);
            let own = masked(stats, aps, k, service, T::one());
            if own.is_zero() {
                return Ok(T::zero());
            }
            let dim = T::from_usize_lossy(aps.len() * stats.chains());
            let others: Vec<BlockDiag<T>> = (0..powers.len())
                .filter(|&i| i != k)
                .map(|i| masked(stats, aps, i, service, powers[i]))
                .collect();
            let s = noise.for_ue(k, service).scale(T::one() / dim);
            let res = fixed_point_e(&others, &s, T::zero(), dim, T::tol(DEFAULT_TOL), DEFAULT_MAX_ITERS)?;
            Ok(powers[k] * own.trace_mul(&res.t).re / dim)
        })
        .collect()
}

/// DL RZF deterministic equivalent and its parts.
#[derive(Debug, Clone)]
pub struct DlAsymptotic<T: Real> {
    pub sinr: Vec<T>,
    pub mu: Vec<T>,
    pub delta: Vec<T>,
    /// `theta[(k, i)]`: leakage of UE `i`'s precoder onto UE `k`.
    pub theta: DMatrix<T>,
    /// First-order estimate of `var(g_k^* v_k)`, which the asymptotic SINR
    /// neglects: `[tr(Gamma T Gamma T)/(1+mu)^2 + tr(D T Gamma T)] / (c^2 delta)`
    /// with `D_k = R_k - Gamma_k`.
    pub gain_variance: Vec<T>,
    /// SINR with `gain_variance * p_k` added to the denominator.
    pub sinr_with_variance: Vec<T>,
    /// Normalizers `(1 + mu_k) / sqrt(delta_k)` equivalent to `E{||W v_k||^2} = 1`.
    pub lambda: Vec<T>,
    pub regularizer: T,
}

/// DL RZF deterministic equivalent with `c = M L` and `z = rho / c`.
///
/// `mu_k = (1/c) tr(Gamma_k T)`, `delta_k = (1/c^2) tr(Gamma_k T'(z, B^*B))`,
/// `theta_{k,i} = (1/c^2) [tr(R_k T'_i) + tr(Gamma_k T'_i) (mu_k^2/(1+mu_k)^2 - 2 mu_k/(1+mu_k))]`
/// with `T'_i = T'(z, Gamma_i)`, and
/// `SINR_k = (mu_k^2/delta_k) p_k / (sum_{i!=k} theta_{k,i}/delta_i p_i + noise)`.
/// `Gamma` is masked by the service map; `R_k` is not.
pub fn dl_sinr_asymptotic<T: Real>(
    stats: &EstimationStats<T>,
    powers: &[T],
    service: &ServiceMap,
    rho: T,
    noise: T,
) -> Result<DlAsymptotic<T>> {
    let k_total = powers.len();
    let aps: Vec<usize> = (0..stats.num_aps()).collect();
    let dim = T::from_usize_lossy(aps.len() * stats.chains());
    let z = rho / dim;
    let gam: Vec<BlockDiag<T>> = (0..k_total)
        .map(|i| masked(stats, &aps, i, service, T::one()))
        .collect();
    let full_r: Vec<BlockDiag<T>> = (0..k_total)
        .map(|k| BlockDiag::new(aps.iter().map(|&m| stats.r(m, k).clone()).collect()))
        .collect();
    let zero = BlockDiag::zeros(&vec![stats.chains(); aps.len()]);
    let res = fixed_point_e(&gam, &zero, z, dim, T::tol(DEFAULT_TOL), DEFAULT_MAX_ITERS)?;
    let sys = DerivativeSystem::new(&gam, &res, dim)?;
    let mu: Vec<T> = gam.iter().map(|g| g.trace_mul(&res.t).re / dim).collect();
    let coloring = BlockDiag::new(aps.iter().map(|&m| stats.coloring(m).clone()).collect());
    let tp_col = sys.t_prime(&coloring);
    let c2 = dim * dim;
    let delta: Vec<T> = gam.iter().map(|g| g.trace_mul(&tp_col).re / c2).collect();
    for k in 0..k_total {
        if mu[k] > T::zero() && !(delta[k] > T::zero()) {
            return Err(Error::Numerical(format!(
                "non-positive delta for UE {k}: delta = {:e}, mu = {:e}, regularizer = {:e}",
                delta[k], mu[k], z
            )));
        }
    }
    let tp: Vec<BlockDiag<T>> = (0..k_total).into_par_iter().map(|i| sys.t_prime(&gam[i])).collect();
    let theta = DMatrix::from_fn(k_total, k_total, |k, i| {
        let a = full_r[k].trace_mul(&tp[i]).re / c2;
        let b = gam[k].trace_mul(&tp[i]).re / c2;
        let m = mu[k];
        let frac = m / (T::one() + m);
        a + b * (frac * frac - frac - frac)
    });
    let sinr: Vec<T> = (0..k_total)
        .map(|k| {
            if mu[k] == T::zero() {
                return T::zero();
            }
            let interference = (0..k_total)
                .filter(|&i| i != k && delta[i] > T::zero())
                .fold(T::zero(), |a, i| a + theta[(k, i)] / delta[i] * powers[i]);
            mu[k] * mu[k] / delta[k] * powers[k] / (interference + noise)
        })
        .collect();
    let gain_variance: Vec<T> = (0..k_total)
        .map(|k| {
            if mu[k] == T::zero() {
                return T::zero();
            }
            let tgt = res.t.sandwich(&gam[k]);
            let mut resid = full_r[k].clone();
            resid.add_scaled(-T::one(), &gam[k]);
            let own = gam[k].trace_mul(&tgt).re / (T::one() + mu[k]).powi(2);
            let cross = resid.trace_mul(&tgt).re;
            (own + cross) / (c2 * delta[k])
        })
        .collect();
    let sinr_with_variance = (0..k_total)
        .map(|k| {
            if mu[k] == T::zero() {
                return T::zero();
            }
            let signal = mu[k] * mu[k] / delta[k] * powers[k];
            signal / (signal / sinr[k] + gain_variance[k] * powers[k])
        })
        .collect();
    let lambda = (0..k_total)
        .map(|k| {
            if delta[k] > T::zero() {
                (T::one() + mu[k]) / delta[k].sqrt()
            } else {
                T::zero()
            }
        })
        .collect();
    Ok(DlAsymptotic {
        sinr,
        mu,
        delta,
        theta,
        gain_variance,
        sinr_with_variance,
        lambda,
        regularizer: z,
    })
}
