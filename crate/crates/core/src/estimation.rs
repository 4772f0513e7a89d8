//! Pilot transmission and MMSE estimation of the effective channels
//! `g_{m,k} = B_m^* h_{m,k}` seen after the analog chain `B_m`.
//!
//! `vec(Y_m)` is column-major, so the pilot of UE `k` enters as
//! `(phi_k (x) I_L) g_{m,k}` and
//! `Psi_m = p_t sum_i (phi_i phi_i^*) (x) R_i + noise I_tau (x) B^*B`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::hybrid::EffectiveCorrelations;
use crate::linalg::{hermitian_eigen, hermitian_part, HermitianSolver};
use crate::rng::complex_gaussian;
use crate::scalar::{cis, cr, CMat, CVec, Real};

/// Orthogonal pilot set (scaled DFT columns) and a UE-to-pilot assignment.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PilotBook {
    tau: usize,
    assignment: Vec<usize>,
}

impl PilotBook {
    pub fn new(tau: usize, assignment: Vec<usize>) -> Result<Self> {
        if tau == 0 {
            return Err(Error::range("pilot_len", "must be at least 1"));
        }
        if let Some(&bad) = assignment.iter().find(|&&p| p >= tau) {
            return Err(Error::range("pilot index", format!("{bad} >= tau = {tau}")));
        }
        Ok(Self { tau, assignment })
    }

    /// UE `k` gets pilot `k mod tau`.
    pub fn round_robin(num_ues: usize, tau: usize) -> Self {
        Self {
            tau,
            assignment: (0..num_ues).map(|k| k % tau).collect(),
        }
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn num_ues(&self) -> usize {
        self.assignment.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn pilot(&self, k: usize) -> usize {
        self.assignment[k]
    }

    /// Copy with UE `k` moved to pilot `p`.
    pub fn with(&self, k: usize, p: usize) -> Self {
        let mut out = self.clone();
        out.assignment[k] = p;
        out
    }

    /// UEs sharing each pilot.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut g = vec![Vec::new(); self.tau];
        for (k, &p) in self.assignment.iter().enumerate() {
            g[p].push(k);
        }
        g
    }

    /// Pilot sequence `p`: `phi[t] = exp(-j 2 pi t p / tau)`, so `||phi||^2 = tau`.
    pub fn sequence<T: Real>(&self, p: usize) -> CVec<T> {
        let tau = self.tau;
        CVec::from_fn(tau, |t, _| {
            let arg = -T::two_pi() * T::from_usize_lossy((t * p) % tau) / T::from_usize_lossy(tau);
            cis(arg)
        })
    }

    /// `tau x K` matrix `Phi` with columns `phi_k`.
    pub fn matrix<T: Real>(&self) -> CMat<T> {
        let mut phi = CMat::zeros(self.tau, self.num_ues());
        for k in 0..self.num_ues() {
            phi.set_column(k, &self.sequence::<T>(self.assignment[k]));
        }
        phi
    }
}

/// Second-order statistics of the MMSE estimates for one pilot book.
#[derive(Debug, Clone)]
pub struct EstimationStats<T: Real> {
    num_ues: usize,
    pub tau: usize,
    pub pilot_power: T,
    pub noise: T,
    /// `R^(g)_{m,k}`, AP-major.
    pub r: Vec<CMat<T>>,
    /// `Gamma_{m,k}`, AP-major.
    pub gamma: Vec<CMat<T>>,
    /// `C_{m,k} = R^(g) - Gamma`, AP-major.
    pub error: Vec<CMat<T>>,
    /// `B_m^* B_m`.
    pub coloring: Vec<CMat<T>>,
    /// Linear estimators `sqrt(p_t) R (phi_k (x) I)^* Psi^-1`, `L x tau L`.
    /// Empty when built from covariances only.
    pub filters: Vec<CMat<T>>,
}

impl<T: Real> EstimationStats<T> {
    /// Assemble from precomputed estimate covariances (no estimators).
    pub fn from_gamma(
        eff: &EffectiveCorrelations<T>,
        gamma: Vec<CMat<T>>,
        tau: usize,
        pilot_power: T,
        noise: T,
    ) -> Self {
        let error = eff
            .r
            .iter()
            .zip(&gamma)
            .map(|(r, g)| hermitian_part(&(r - g)))
            .collect();
        Self {
            num_ues: eff.num_ues(),
            tau,
            pilot_power,
            noise,
            r: eff.r.clone(),
            gamma,
            error,
            coloring: eff.coloring.clone(),
            filters: Vec::new(),
        }
    }

    /// Perfect CSI: `Gamma = R^(g)`, `C = 0`.
    pub fn perfect(eff: &EffectiveCorrelations<T>) -> Self {
        Self::from_gamma(eff, eff.r.clone(), 1, T::one(), T::zero())
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

    pub fn r(&self, m: usize, k: usize) -> &CMat<T> {
        &self.r[m * self.num_ues + k]
    }

    pub fn gamma(&self, m: usize, k: usize) -> &CMat<T> {
        &self.gamma[m * self.num_ues + k]
    }

    pub fn err(&self, m: usize, k: usize) -> &CMat<T> {
        &self.error[m * self.num_ues + k]
    }

    pub fn coloring(&self, m: usize) -> &CMat<T> {
        &self.coloring[m]
    }
}

/// Effective channels `B_m^* h_{m,k}`.
pub fn effective_channels<T: Real>(chains: &[CMat<T>], h: &[Vec<CVec<T>>]) -> Vec<Vec<CVec<T>>> {
    chains
        .iter()
        .zip(h)
        .map(|(b, row)| {
            let bh = b.adjoint();
            row.iter().map(|x| &bh * x).collect()
        })
        .collect()
}

/// `Y_m = sqrt(p_t) G_m Phi^T + B_m^* Z_m`, `Z_m ~ CN(0, noise I_N)`.
pub fn pilot_observations<T: Real, R: Rng + ?Sized>(
    g: &[Vec<CVec<T>>],
    phi: &CMat<T>,
    pilot_power: T,
    chains: &[CMat<T>],
    noise: T,
    rng: &mut R,
) -> Vec<CMat<T>> {
    let tau = phi.nrows();
    let amp = cr(pilot_power.sqrt());
    let sd = cr(noise.sqrt());
    g.iter()
        .zip(chains)
        .map(|(gm, b)| {
            let l = b.ncols();
            let mut y = CMat::<T>::zeros(l, tau);
            for (k, gk) in gm.iter().enumerate() {
                for t in 0..tau {
                    let coef = amp * phi[(t, k)];
                    y.column_mut(t).axpy(coef, gk, cr(T::one()));
                }
            }
            let z = CMat::<T>::from_fn(b.nrows(), tau, |_, _| complex_gaussian::<T, _>(rng) * sd);
            y + b.adjoint() * z
        })
        .collect()
}

/// `(phi (x) I_L)`.
fn pilot_lift<T: Real>(phi: &CVec<T>, l: usize) -> CMat<T> {
    let tau = phi.len();
    let mut out = CMat::zeros(tau * l, l);
    for t in 0..tau {
        for i in 0..l {
            out[(t * l + i, i)] = phi[t];
        }
    }
    out
}

/// Full Kronecker-form statistics: builds `Psi_m`, factors it once per AP
/// and derives `Gamma`, `C` and the estimators.
pub fn estimation_statistics<T: Real>(
    eff: &EffectiveCorrelations<T>,
    book: &PilotBook,
    pilot_power: T,
    noise: T,
) -> Result<EstimationStats<T>> {
    let tau = book.tau();
    let l = eff.chains();
    let k_total = eff.num_ues();
    let lifts: Vec<CMat<T>> = (0..k_total)
        .map(|k| pilot_lift(&book.sequence::<T>(book.pilot(k)), l))
        .collect();
    let mut gamma = Vec::with_capacity(eff.num_aps() * k_total);
    let mut filters = Vec::with_capacity(eff.num_aps() * k_total);
    for m in 0..eff.num_aps() {
        let mut psi = CMat::<T>::zeros(tau * l, tau * l);
        for (k, lift) in lifts.iter().enumerate() {
            psi += lift * eff.get(m, k) * lift.adjoint() * cr(pilot_power);
        }
        for t in 0..tau {
            let mut blk = psi.view_mut((t * l, t * l), (l, l));
            blk += eff.coloring[m].clone() * cr(noise);
        }
        let psi = hermitian_part(&psi);
        let eig = hermitian_eigen(&psi, T::zero());
        let (hi, lo) = (eig.values[0], *eig.values.last().unwrap());
        if !(lo > T::zero()) || hi / lo > T::lit(1e12) {
            log::warn!("AP {m}: pilot covariance is ill-conditioned ({hi:e} / {lo:e})");
        }
        let solver = HermitianSolver::new(&psi)?;
        for (k, lift) in lifts.iter().enumerate() {
            let r = eff.get(m, k);
            // Psi^-1 (phi (x) I) R
            let x = solver.solve(&(lift * r));
            let f = (x.adjoint()) * cr(pilot_power.sqrt());
            let g = hermitian_part(&(r * lift.adjoint() * &x * cr(pilot_power)));
            gamma.push(g);
            filters.push(f);
        }
    }
    let mut stats = EstimationStats::from_gamma(eff, gamma, tau, pilot_power, noise);
    stats.filters = filters;
    Ok(stats)
}

/// Same statistics exploiting pilot orthogonality: with
/// `Q_p = p_t tau sum_{i on pilot p} R_i + noise B^*B`,
/// `Gamma_k = p_t tau R_k Q_p^-1 R_k`. No estimators are stored.
pub fn grouped_statistics<T: Real>(
    eff: &EffectiveCorrelations<T>,
    book: &PilotBook,
    pilot_power: T,
    noise: T,
) -> Result<EstimationStats<T>> {
    let k_total = eff.num_ues();
    let groups = book.groups();
    let mut gamma = vec![CMat::<T>::zeros(0, 0); eff.num_aps() * k_total];
    for m in 0..eff.num_aps() {
        for (m_idx, blocks) in group_gammas(eff, m, &groups, pilot_power, noise, book.tau())? {
            gamma[m * k_total + m_idx] = blocks;
        }
    }
    Ok(EstimationStats::from_gamma(eff, gamma, book.tau(), pilot_power, noise))
}

/// `(ue, Gamma_{m,ue})` for every UE of every group at AP `m`.
pub(crate) fn group_gammas<T: Real>(
    eff: &EffectiveCorrelations<T>,
    m: usize,
    groups: &[Vec<usize>],
    pilot_power: T,
    noise: T,
    tau: usize,
) -> Result<Vec<(usize, CMat<T>)>> {
    let mut out = Vec::new();
    for group in groups {
        out.extend(group_gamma(eff, m, group, pilot_power, noise, tau)?);
    }
    Ok(out)
}

pub(crate) fn group_gamma<T: Real>(
    eff: &EffectiveCorrelations<T>,
    m: usize,
    group: &[usize],
    pilot_power: T,
    noise: T,
    tau: usize,
) -> Result<Vec<(usize, CMat<T>)>> {
    if group.is_empty() {
        return Ok(Vec::new());
    }
    let scale = pilot_power * T::from_usize_lossy(tau);
    let mut q = &eff.coloring[m] * cr(noise);
    for &i in group {
        q += eff.get(m, i) * cr(scale);
    }
    let solver = HermitianSolver::new(&hermitian_part(&q))?;
    Ok(group
        .iter()
        .map(|&k| {
            let r = eff.get(m, k);
            (k, hermitian_part(&(r * solver.solve(r) * cr(scale))))
        })
        .collect())
}

/// `ghat_{m,k} = F_{m,k} vec(Y_m)` for every AP and UE.
pub fn mmse_estimate<T: Real>(y: &[CMat<T>], stats: &EstimationStats<T>) -> Result<Vec<Vec<CVec<T>>>> {
    if stats.filters.is_empty() {
        return Err(Error::Dimension("statistics carry no estimators".into()));
    }
    let k_total = stats.num_ues();
    Ok(y.iter()
        .enumerate()
        .map(|(m, ym)| {
            let v = CVec::from_column_slice(ym.as_slice());
            (0..k_total).map(|k| &stats.filters[m * k_total + k] * &v).collect()
        })
        .collect())
}
