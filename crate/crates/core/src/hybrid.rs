//! Analog beamformer design.
//!
//! The proposed design schedules eigenmodes of the per-AP correlation
//! matrices to maximize the minimum average signal power, orthonormalizes the
//! scheduled eigenvectors, fits a phase-shifter matrix to that subspace by
//! alternating minimization over the phase-only matrix and a free `L x L`
//! mixing, and finally restores orthogonality digitally with a compensation
//! matrix `F = V D^-1 V^*` built from the SVD of the phase-only matrix.

use std::io::Write;
use std::str::FromStr;

use nalgebra::SVD;

use crate::channel::CorrelationSet;
use crate::error::{Error, Result};
use crate::linalg::{from_columns, hermitian_eigen, hermitian_part, orthonormal_residual, real_trace};
use crate::scalar::{cis, cr, CMat, CVec, Real};
use crate::scenario::ServiceMap;

pub const DEFAULT_MAX_ITERS: usize = 500;
const RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalogMethod {
    /// Max-min eigenmode scheduling.
    Proposed,
    /// Top-L eigenvectors of the summed served correlations.
    Svd,
    /// `W = I_N` (requires one RF chain per antenna).
    Digital,
}

impl FromStr for AnalogMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Self::Proposed),
            "svd" => Ok(Self::Svd),
            "digital" => Ok(Self::Digital),
            other => Err(Error::Parse(format!("unknown analog method `{other}`"))),
        }
    }
}

impl std::fmt::Display for AnalogMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Proposed => "proposed",
            Self::Svd => "svd",
            Self::Digital => "digital",
        })
    }
}

/// Eigenmode `n` (0-based, descending order) of `R_{ap,ue}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode<T> {
    pub ap: usize,
    pub ue: usize,
    pub index: usize,
    pub value: T,
}

/// Surviving modes of the max-min scheduling problem.
#[derive(Debug, Clone)]
pub struct Schedule<T: Real> {
    /// Scheduled modes per AP, in deletion-survival order (AP, UE, index).
    pub per_ap: Vec<Vec<Mode<T>>>,
    /// `S_k`: scheduled eigenvalue mass per UE.
    pub signal_power: Vec<T>,
}

impl<T: Real> Schedule<T> {
    pub fn min_signal_power(&self) -> T {
        self.signal_power
            .iter()
            .copied()
            .fold(T::max_value().unwrap_or_else(T::one), |a, b| a.min(b))
    }

    pub fn selected(&self, ap: usize, ue: usize, index: usize) -> bool {
        self.per_ap[ap].iter().any(|md| md.ue == ue && md.index == index)
    }
}

/// Max-min eigenmode scheduling by reverse deletion.
///
/// All modes of served UEs start selected. While some AP holds more than
/// `chains` modes, delete (among those APs) the mode whose removal leaves the
/// largest `min_k S_k`; ties go to the smallest eigenvalue, then to the lowest
/// `(ap, ue, index)`.
pub fn schedule_eigenmodes<T: Real>(corr: &CorrelationSet<T>, service: &ServiceMap, chains: usize) -> Schedule<T> {
    let num_ues = corr.num_ues();
    let mut per_ap: Vec<Vec<Mode<T>>> = (0..corr.num_aps())
        .map(|m| {
            service
                .serves(m)
                .iter()
                .flat_map(|&k| {
                    corr.eigenvalues(m, k).iter().enumerate().map(move |(n, &value)| Mode {
                        ap: m,
                        ue: k,
                        index: n,
                        value,
                    })
                })
                .collect()
        })
        .collect();
    let mut power = vec![T::zero(); num_ues];
    for md in per_ap.iter().flatten() {
        power[md.ue] += md.value;
    }

    loop {
        // smallest and second-smallest S give min over j != k in O(1)
        let (mut lo, mut lo_ue, mut second) = (T::max_value().unwrap(), usize::MAX, T::max_value().unwrap());
        for (k, &p) in power.iter().enumerate() {
            if p < lo {
                second = lo;
                lo = p;
                lo_ue = k;
            } else if p < second {
                second = p;
            }
        }
        let mut best: Option<(T, T, (usize, usize, usize), usize, usize)> = None;
        for (m, modes) in per_ap.iter().enumerate() {
            if modes.len() <= chains {
                continue;
            }
            for (pos, md) in modes.iter().enumerate() {
                let others = if md.ue == lo_ue { second } else { lo };
                let after = (power[md.ue] - md.value).min(others);
                let key = (md.ap, md.ue, md.index);
                let better = match &best {
                    None => true,
                    Some((b_after, b_val, b_key, _, _)) => {
                        after > *b_after
                            || (after == *b_after && (md.value < *b_val || (md.value == *b_val && key < *b_key)))
                    }
                };
                if better {
                    best = Some((after, md.value, key, m, pos));
                }
            }
        }
        match best {
            None => break,
            Some((_, value, (_, ue, _), m, pos)) => {
                power[ue] -= value;
                per_ap[m].remove(pos);
            }
        }
    }
    // accumulated subtraction drifts; recompute exactly
    let mut signal_power = vec![T::zero(); num_ues];
    for md in per_ap.iter().flatten() {
        signal_power[md.ue] += md.value;
    }
    for modes in &mut per_ap {
        modes.sort_by(|a, b| {
            b.value
                .partial_cmp(&a.value)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then((a.ue, a.index).cmp(&(b.ue, b.index)))
        });
    }
    Schedule { per_ap, signal_power }
}

/// Unconstrained columns for one AP: the raw scheduled/padded eigenvectors
/// and their orthonormalization.
#[derive(Debug, Clone)]
pub struct Unconstrained<T: Real> {
    pub raw: CMat<T>,
    pub projected: CMat<T>,
    /// Number of scheduled columns that survived (the rest are padding).
    pub scheduled_columns: usize,
}

/// Build `W_m` from scheduled eigenvectors and orthonormalize it.
///
/// Columns are accepted in order: scheduled modes, then the strongest
/// unscheduled modes of served UEs, then of other UEs, then canonical basis
/// vectors. A column lying in the span of the accepted ones is skipped, so
/// the result always has `chains` orthonormal columns and its span contains
/// every independent scheduled eigenvector.
pub fn assemble_unconstrained<T: Real>(
    schedule: &Schedule<T>,
    corr: &CorrelationSet<T>,
    service: &ServiceMap,
    chains: usize,
) -> Vec<Unconstrained<T>> {
    let n = corr.antennas();
    (0..corr.num_aps())
        .map(|m| {
            let scheduled: Vec<CVec<T>> = schedule.per_ap[m]
                .iter()
                .map(|md| corr.eigenvectors(m, md.ue).column(md.index).into_owned())
                .collect();
            let mut spare: Vec<(bool, T, usize, usize)> = Vec::new();
            for k in 0..corr.num_ues() {
                for (idx, &v) in corr.eigenvalues(m, k).iter().enumerate() {
                    if !schedule.selected(m, k, idx) {
                        spare.push((service.serves_ue(m, k), v, k, idx));
                    }
                }
            }
            spare.sort_by(|a, b| {
                b.0.cmp(&a.0)
                    .then(b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal))
                    .then((a.2, a.3).cmp(&(b.2, b.3)))
            });
            let padding = spare
                .iter()
                .map(|&(_, _, k, idx)| corr.eigenvectors(m, k).column(idx).into_owned())
                .chain((0..n).map(|i| {
                    let mut e = CVec::<T>::zeros(n);
                    e[i] = cr(T::one());
                    e
                }));

            let tol = T::lit(RANK_TOL);
            let mut basis = Vec::with_capacity(chains);
            let mut raw = Vec::with_capacity(chains);
            let mut scheduled_columns = 0;
            for col in &scheduled {
                if basis.len() == chains {
                    break;
                }
                match orthonormal_residual(&basis, col, tol) {
                    Some(q) => {
                        basis.push(q);
                        raw.push(col.clone());
                        scheduled_columns += 1;
                    }
                    None => log::warn!("AP {m}: scheduled eigenvector is linearly dependent, padding"),
                }
            }
            for col in padding {
                if basis.len() == chains {
                    break;
                }
                if let Some(q) = orthonormal_residual(&basis, &col, tol) {
                    basis.push(q);
                    raw.push(col);
                }
            }
            Unconstrained {
                raw: from_columns(n, &raw),
                projected: from_columns(n, &basis),
                scheduled_columns,
            }
        })
        .collect()
}

/// Result of fitting a phase-only matrix to an orthonormal basis.
#[derive(Debug, Clone)]
pub struct PhaseFit<T: Real> {
    /// Entries of modulus `1/sqrt(N)`.
    pub constrained: CMat<T>,
    /// Mixing `A` with `constrained ~ projected * A`.
    pub mixing: CMat<T>,
    pub iterations: usize,
    pub converged: bool,
    /// The iteration was halted because the next iterate would have exceeded
    /// [`MAX_PHASE_CONDITION`]; `constrained` is the last admissible iterate.
    pub conditioning_stop: bool,
    /// `||W_hat - W_p A||_F^2` after every half-step (A update, then W_hat update).
    pub objective_trace: Vec<T>,
}

/// Largest condition number accepted for a phase-constrained iterate.
pub const MAX_PHASE_CONDITION: f64 = 1e2;

fn condition_number<T: Real>(m: &CMat<T>) -> T {
    let sv = SVD::new(m.clone(), false, false).singular_values;
    let hi = sv.iter().copied().fold(T::zero(), |a, b| a.max(b));
    let lo = sv.iter().copied().fold(T::max_value().unwrap(), |a, b| a.min(b));
    if lo > T::zero() {
        hi / lo
    } else {
        T::max_value().unwrap()
    }
}

fn phase_project<T: Real>(target: &CMat<T>, previous: Option<&CMat<T>>, amp: T) -> CMat<T> {
    CMat::from_fn(target.nrows(), target.ncols(), |i, j| {
        let z = target[(i, j)];
        let phase = if z.norm_sqr() > T::zero() {
            z.im.atan2(z.re)
        } else {
            previous.map_or(T::zero(), |p| p[(i, j)].im.atan2(p[(i, j)].re))
        };
        cis(phase) * cr(amp)
    })
}

/// First `l` columns of the `n`-point DFT; supplies phases for zero entries of
/// the initial projection.
fn dft_columns<T: Real>(n: usize, l: usize) -> CMat<T> {
    let two_pi = T::lit(2.0 * std::f64::consts::PI);
    CMat::from_fn(n, l, |i, j| {
        cis(-two_pi * T::from_usize_lossy((i * j) % n.max(1)) / T::from_usize_lossy(n.max(1)))
    })
}

fn fit_objective<T: Real>(w_hat: &CMat<T>, wp: &CMat<T>, a: &CMat<T>) -> T {
    (w_hat - wp * a).iter().fold(T::zero(), |s, z| s + z.norm_sqr())
}

/// Alternating minimization of `||W_hat - W_p A||_F^2` subject to
/// `|W_hat[n,l]| = 1/sqrt(N)`: `A = W_p^* W_hat`, then
/// `W_hat = exp(j angle(W_p A)) / sqrt(N)`. Stops when the relative decrease
/// of a full iteration falls below `tol`.
///
/// The objective does not penalize columns of `W_hat` drifting together, and
/// left alone the iteration often ends rank deficient. An update whose
/// condition number would exceed [`MAX_PHASE_CONDITION`] is rejected and the
/// fit stops at the previous iterate.
pub fn constrain_phase_alternating<T: Real>(projected: &CMat<T>, tol: T, max_iters: usize) -> PhaseFit<T> {
    let n = projected.nrows();
    let amp = T::one() / T::from_usize_lossy(n).sqrt();
    let tiny = T::lit(1e-14) * T::from_usize_lossy(projected.ncols());
    let max_cond = T::lit(MAX_PHASE_CONDITION);
    let mut w_hat = phase_project(projected, Some(&dft_columns(n, projected.ncols())), amp);
    let mut mixing = projected.adjoint() * &w_hat;
    let mut trace = Vec::new();
    let mut prev = fit_objective(&w_hat, projected, &mixing);
    let mut iterations = 0;
    let mut converged = false;
    let mut conditioning_stop = false;
    while iterations < max_iters {
        let next_mixing = projected.adjoint() * &w_hat;
        let next = phase_project(&(projected * &next_mixing), Some(&w_hat), amp);
        if condition_number(&next) > max_cond {
            conditioning_stop = true;
            break;
        }
        iterations += 1;
        mixing = next_mixing;
        trace.push(fit_objective(&w_hat, projected, &mixing));
        w_hat = next;
        let obj = fit_objective(&w_hat, projected, &mixing);
        trace.push(obj);
        if obj <= tiny || (prev - obj) <= tol * prev {
            converged = true;
            break;
        }
        prev = obj;
    }
    PhaseFit {
        constrained: w_hat,
        mixing,
        iterations,
        converged,
        conditioning_stop,
        objective_trace: trace,
    }
}

/// `F = V D^-1 V^*` from the SVD `W_hat = U D V^*`, so that `W_hat F = U V^*`
/// has orthonormal columns.
pub fn compensation_matrix<T: Real>(w_hat: &CMat<T>) -> Result<CMat<T>> {
    let svd = SVD::new(w_hat.clone(), false, true);
    let v_t = svd.v_t.as_ref().expect("requested V^*");
    let smin = svd
        .singular_values
        .iter()
        .copied()
        .fold(T::max_value().unwrap(), |a, b| a.min(b));
    if !(smin > T::lit(1e-10)) {
        return Err(Error::CompensationUndefined(smin.as_f64()));
    }
    let l = w_hat.ncols();
    let mut scaled = v_t.adjoint();
    for j in 0..l {
        let s = svd.singular_values[j];
        scaled.column_mut(j).unscale_mut(s);
    }
    Ok(hermitian_part(&(scaled * v_t)))
}

/// Per-AP analog stage.
#[derive(Debug, Clone)]
pub struct ApBeamformer<T: Real> {
    /// Scheduled (or baseline) eigenvectors before orthonormalization.
    pub unconstrained: CMat<T>,
    pub projected: CMat<T>,
    pub constrained: CMat<T>,
    pub mixing: CMat<T>,
    pub compensation: CMat<T>,
    /// Effective analog chain `W_hat F`.
    pub chain: CMat<T>,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Real> ApBeamformer<T> {
    /// Analog stage given directly by an arbitrary `N x L` matrix, with no
    /// compensation (`F = I`).
    pub fn raw(w: CMat<T>) -> Self {
        let l = w.ncols();
        Self {
            unconstrained: w.clone(),
            projected: w.clone(),
            constrained: w.clone(),
            mixing: CMat::identity(l, l),
            compensation: CMat::identity(l, l),
            chain: w,
            iterations: 0,
            converged: true,
        }
    }

    /// Phase-constrain an orthonormal basis and compensate.
    pub fn from_projected(unconstrained: CMat<T>, projected: CMat<T>, tol: T, max_iters: usize) -> Result<Self> {
        let fit = constrain_phase_alternating(&projected, tol, max_iters);
        if fit.conditioning_stop {
            log::debug!("phase fit halted by conditioning after {} iterations", fit.iterations);
        } else if !fit.converged {
            log::debug!(
                "phase fit stopped after {} iterations without converging",
                fit.iterations
            );
        }
        let compensation = compensation_matrix(&fit.constrained)?;
        let chain = &fit.constrained * &compensation;
        Ok(Self {
            unconstrained,
            projected,
            constrained: fit.constrained,
            mixing: fit.mixing,
            compensation,
            chain,
            iterations: fit.iterations,
            converged: fit.converged,
        })
    }

    pub fn chains(&self) -> usize {
        self.chain.ncols()
    }
}

#[derive(Debug, Clone)]
pub struct HybridDesign<T: Real> {
    pub method: AnalogMethod,
    pub aps: Vec<ApBeamformer<T>>,
    pub schedule: Option<Schedule<T>>,
}

impl<T: Real> HybridDesign<T> {
    /// Design from arbitrary per-AP analog matrices used as-is.
    pub fn from_chains(method: AnalogMethod, chains: Vec<CMat<T>>) -> Self {
        Self {
            method,
            aps: chains.into_iter().map(ApBeamformer::raw).collect(),
            schedule: None,
        }
    }

    pub fn chain(&self, m: usize) -> &CMat<T> {
        &self.aps[m].chain
    }

    pub fn num_aps(&self) -> usize {
        self.aps.len()
    }

    /// RF chains per AP seen by the digital stage.
    pub fn chains(&self) -> usize {
        self.aps.first().map_or(0, ApBeamformer::chains)
    }

    /// `sum_{m in F_k} tr(W_p^* R W_p)` per UE, using the unconstrained
    /// orthonormal bases.
    pub fn projected_signal_power(&self, corr: &CorrelationSet<T>, service: &ServiceMap) -> Vec<T> {
        (0..corr.num_ues())
            .map(|k| {
                service
                    .served_by(k)
                    .iter()
                    .map(|&m| {
                        let w = &self.aps[m].projected;
                        real_trace(&(w.adjoint() * corr.cov(m, k) * w))
                    })
                    .fold(T::zero(), |a, b| a + b)
            })
            .collect()
    }

    /// Export every per-AP matrix as `ap,matrix,row,col,re,im` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "ap,matrix,row,col,re,im")?;
        for (m, ap) in self.aps.iter().enumerate() {
            for (name, mat) in [
                ("unconstrained", &ap.unconstrained),
                ("projected", &ap.projected),
                ("constrained", &ap.constrained),
                ("mixing", &ap.mixing),
                ("compensation", &ap.compensation),
            ] {
                for i in 0..mat.nrows() {
                    for j in 0..mat.ncols() {
                        let z = mat[(i, j)];
                        writeln!(w, "{m},{name},{i},{j},{},{}", z.re, z.im)?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Proposed design: reverse-delete scheduling, projection, phase fit,
/// compensation.
pub fn proposed_design<T: Real>(
    corr: &CorrelationSet<T>,
    service: &ServiceMap,
    chains: usize,
    tol: T,
) -> Result<HybridDesign<T>> {
    let schedule = schedule_eigenmodes(corr, service, chains);
    let aps = assemble_unconstrained(&schedule, corr, service, chains)
        .into_iter()
        .map(|u| ApBeamformer::from_projected(u.raw, u.projected, tol, DEFAULT_MAX_ITERS))
        .collect::<Result<Vec<_>>>()?;
    Ok(HybridDesign {
        method: AnalogMethod::Proposed,
        aps,
        schedule: Some(schedule),
    })
}

/// Baseline: per AP, the top-`chains` eigenvectors of `sum_{k in U_m} R_{m,k}`
/// (all UEs when the AP serves none), then the same phase fit and
/// compensation.
pub fn baseline_svd_design<T: Real>(
    corr: &CorrelationSet<T>,
    service: &ServiceMap,
    chains: usize,
    tol: T,
) -> Result<HybridDesign<T>> {
    let n = corr.antennas();
    let aps = (0..corr.num_aps())
        .map(|m| {
            let ues: Vec<usize> = if service.serves(m).is_empty() {
                (0..corr.num_ues()).collect()
            } else {
                service.serves(m).to_vec()
            };
            let sum = ues.iter().fold(CMat::<T>::zeros(n, n), |acc, &k| acc + corr.cov(m, k));
            let eig = hermitian_eigen(&sum, T::zero());
            let top = eig.vectors.columns(0, chains).into_owned();
            ApBeamformer::from_projected(top.clone(), top, tol, DEFAULT_MAX_ITERS)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HybridDesign {
        method: AnalogMethod::Svd,
        aps,
        schedule: None,
    })
}

/// Fully digital receiver: `W_m = I_N`.
pub fn digital_design<T: Real>(corr: &CorrelationSet<T>) -> HybridDesign<T> {
    let n = corr.antennas();
    HybridDesign::from_chains(
        AnalogMethod::Digital,
        (0..corr.num_aps()).map(|_| CMat::identity(n, n)).collect(),
    )
}

pub fn design<T: Real>(
    method: AnalogMethod,
    corr: &CorrelationSet<T>,
    service: &ServiceMap,
    chains: usize,
    tol: T,
) -> Result<HybridDesign<T>> {
    match method {
        AnalogMethod::Proposed => proposed_design(corr, service, chains, tol),
        AnalogMethod::Svd => baseline_svd_design(corr, service, chains, tol),
        AnalogMethod::Digital => Ok(digital_design(corr)),
    }
}

/// Correlations seen after the analog chain `B_m = W_hat_m F_m`.
#[derive(Debug, Clone)]
pub struct EffectiveCorrelations<T: Real> {
    num_ues: usize,
    /// `B_m^* R_{m,k} B_m`, AP-major.
    pub r: Vec<CMat<T>>,
    /// Noise coloring `B_m^* B_m`.
    pub coloring: Vec<CMat<T>>,
}

impl<T: Real> EffectiveCorrelations<T> {
    pub fn get(&self, m: usize, k: usize) -> &CMat<T> {
        &self.r[m * self.num_ues + k]
    }

    pub fn num_aps(&self) -> usize {
        self.coloring.len()
    }

    pub fn num_ues(&self) -> usize {
        self.num_ues
    }

    pub fn chains(&self) -> usize {
        self.coloring.first().map_or(0, CMat::nrows)
    }
}

pub fn effective_correlations<T: Real>(corr: &CorrelationSet<T>, design: &HybridDesign<T>) -> EffectiveCorrelations<T> {
    let mut r = Vec::with_capacity(corr.num_aps() * corr.num_ues());
    let mut coloring = Vec::with_capacity(corr.num_aps());
    for m in 0..corr.num_aps() {
        let b = design.chain(m);
        let bh = b.adjoint();
        for k in 0..corr.num_ues() {
            r.push(hermitian_part(&(&bh * corr.cov(m, k) * b)));
        }
        coloring.push(hermitian_part(&(&bh * b)));
    }
    EffectiveCorrelations {
        num_ues: corr.num_ues(),
        r,
        coloring,
    }
}
