//! Large-scale fading, correlated shadowing, local-scattering spatial
//! correlation and correlated Rayleigh channel draws.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{frobenius, frobenius_rel, hermitian_defect, hermitian_eigen, real_trace, HermitianEigen};
use crate::rng::{complex_gaussian, stream, tag};
use crate::scalar::{c, cis, cr, CMat, CVec, Real};
use crate::scenario::{wrap_displacement, wrap_distance, AngularSpread, ChannelParams, Scenario, Topology};

/// NLOS urban-micro pathloss in dB at distance `d` meters (clamped to 1 m)
/// and carrier `fc_ghz`.
pub fn pathloss_db(d: f64, fc_ghz: f64) -> f64 {
    36.7 * d.max(1.0).log10() + 22.7 + 26.0 * fc_ghz.log10()
}

/// Linear gain `10^(-PL/10)`.
pub fn large_scale_gain(d: f64, s: &Scenario) -> f64 {
    10f64.powf(-pathloss_db(d, s.carrier_freq) / 10.0)
}

/// 3-D AP-UE distance with the AP mounted at `ap_height` over ground-level UEs.
pub fn ap_ue_distance_3d(topology: &Topology, m: usize, k: usize, s: &Scenario) -> f64 {
    topology.ap_ue_distance(m, k, s.area_side).hypot(s.ap_height)
}

/// Shadowing offsets in dB, `M x K`. For each AP the UE vector is Gaussian
/// with covariance `sd^2 exp(-d(k,k')/d_corr)`; APs are independent.
pub fn correlated_shadowing<R: Rng + ?Sized>(
    topology: &Topology,
    params: &ChannelParams,
    area_side: f64,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let m = topology.ap_positions.len();
    let k = topology.ue_positions.len();
    let sd = params.shadowing_db;
    if sd == 0.0 {
        return Ok(vec![vec![0.0; k]; m]);
    }
    let ues = &topology.ue_positions;
    let kernel = DMatrix::<f64>::from_fn(k, k, |i, j| {
        (-wrap_distance(ues[i], ues[j], area_side) / params.decorrelation_m).exp()
    });
    let eig = SymmetricEigen::new(kernel);
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if eig.eigenvalues.iter().any(|&l| l < -1e-9 * lmax.max(1.0)) {
        return Err(Error::Numerical("shadowing covariance is not PSD".into()));
    }
    let mut factor = eig.eigenvectors.clone();
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        factor.column_mut(j).scale_mut(sd * l.max(0.0).sqrt());
    }
    Ok((0..m)
        .map(|_| {
            let z = DVector::<f64>::from_fn(k, |_, _| StandardNormal.sample(rng));
            (&factor * z).iter().copied().collect()
        })
        .collect())
}

/// Local-scattering correlation of a half-wavelength ULA:
/// `R[a,b] = beta exp(j pi (a-b) sin(angle)) exp(-(sd pi (a-b) cos(angle))^2 / 2)`.
pub fn spatial_correlation<T: Real>(beta: T, angle: T, spread: AngularSpread, n: usize) -> CMat<T> {
    match spread {
        AngularSpread::Uncorrelated => CMat::identity(n, n) * cr(beta),
        AngularSpread::Gaussian(sd) => {
            let sd = T::lit(sd);
            let pi = T::pi();
            let half = T::lit(0.5);
            CMat::from_fn(n, n, |a, b| {
                let lag = T::from_usize_lossy(a) - T::from_usize_lossy(b);
                let spread_term = (sd * pi * lag * angle.cos()).powi(2) * half;
                cis(pi * lag * angle.sin()) * cr(beta * (-spread_term).exp())
            })
        }
    }
}

/// One spatial correlation matrix with its cached eigendecomposition.
#[derive(Debug, Clone)]
pub struct Correlation<T: Real> {
    pub cov: CMat<T>,
    pub eigen: HermitianEigen<T>,
}

impl<T: Real> Correlation<T> {
    pub fn new(cov: CMat<T>) -> Result<Self> {
        let n = cov.nrows();
        if cov.ncols() != n {
            return Err(Error::Dimension("correlation matrix must be square".into()));
        }
        let scale = frobenius(&cov);
        let eigen = hermitian_eigen(&cov, T::tol(1e-9) * scale);
        if eigen.values.iter().any(|&v| v < T::zero()) {
            return Err(Error::Numerical("correlation matrix is not PSD".into()));
        }
        Ok(Self { cov, eigen })
    }

    /// Large-scale gain `tr(R) / N`.
    pub fn gain(&self) -> T {
        real_trace(&self.cov) / T::from_usize_lossy(self.cov.nrows())
    }

    /// `V Lambda^{1/2}`: maps white noise to a draw with covariance `R`.
    pub fn sqrt_factor(&self) -> CMat<T> {
        let mut f = self.eigen.vectors.clone();
        for (j, &v) in self.eigen.values.iter().enumerate() {
            f.column_mut(j).scale_mut(v.max(T::zero()).sqrt());
        }
        f
    }
}

/// All `R_{m,k}`, stored AP-major.
#[derive(Debug, Clone)]
pub struct CorrelationSet<T: Real> {
    num_aps: usize,
    num_ues: usize,
    antennas: usize,
    entries: Vec<Correlation<T>>,
}

impl<T: Real> CorrelationSet<T> {
    /// `covs[m][k]` is `R_{m,k}`.
    pub fn from_matrices(covs: Vec<Vec<CMat<T>>>) -> Result<Self> {
        let num_aps = covs.len();
        let num_ues = covs.first().map_or(0, Vec::len);
        let antennas = covs.first().and_then(|r| r.first()).map_or(0, CMat::nrows);
        let mut entries = Vec::with_capacity(num_aps * num_ues);
        for row in covs {
            if row.len() != num_ues {
                return Err(Error::Dimension("ragged correlation grid".into()));
            }
            for cov in row {
                if cov.nrows() != antennas {
                    return Err(Error::Dimension("inconsistent antenna count".into()));
                }
                entries.push(Correlation::new(cov)?);
            }
        }
        Ok(Self {
            num_aps,
            num_ues,
            antennas,
            entries,
        })
    }

    /// Pathloss plus shadowing plus local scattering around the wrapped
    /// AP-to-UE bearing.
    pub fn generate<R: Rng + ?Sized>(s: &Scenario, topology: &Topology, rng: &mut R) -> Result<Self> {
        let shadow = correlated_shadowing(topology, &s.channel, s.area_side, rng)?;
        let covs = (0..s.num_aps)
            .map(|m| {
                (0..s.num_ues)
                    .map(|k| {
                        let d = ap_ue_distance_3d(topology, m, k, s);
                        let gain_db = -pathloss_db(d, s.carrier_freq) + shadow[m][k];
                        let beta = 10f64.powf(gain_db / 10.0);
                        let disp = wrap_displacement(topology.ap_positions[m], topology.ue_positions[k], s.area_side);
                        let angle = disp[1].atan2(disp[0]);
                        spatial_correlation(T::lit(beta), T::lit(angle), s.channel.angular_spread, s.antennas_per_ap)
                    })
                    .collect()
            })
            .collect();
        Self::from_matrices(covs)
    }

    /// Generate from a derived stream of `seed`.
    pub fn for_seed(s: &Scenario, topology: &Topology, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, &[tag::SHADOWING]);
        Self::generate(s, topology, &mut rng)
    }

    pub fn num_aps(&self) -> usize {
        self.num_aps
    }

    pub fn num_ues(&self) -> usize {
        self.num_ues
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn get(&self, m: usize, k: usize) -> &Correlation<T> {
        &self.entries[m * self.num_ues + k]
    }

    pub fn cov(&self, m: usize, k: usize) -> &CMat<T> {
        &self.get(m, k).cov
    }

    pub fn eigenvalues(&self, m: usize, k: usize) -> &[T] {
        &self.get(m, k).eigen.values
    }

    pub fn eigenvectors(&self, m: usize, k: usize) -> &CMat<T> {
        &self.get(m, k).eigen.vectors
    }

    /// Check Hermitian symmetry, PSD-ness and eigen reconstruction.
    pub fn check(&self) -> Result<()> {
        for (idx, e) in self.entries.iter().enumerate() {
            let scale = frobenius(&e.cov).max(T::lit(1e-30));
            if hermitian_defect(&e.cov) > T::tol(1e-12) * scale {
                return Err(Error::Numerical(format!("R[{idx}] is not Hermitian")));
            }
            if e.eigen.values.iter().any(|&v| v < -T::tol(1e-12) * scale) {
                return Err(Error::Numerical(format!("R[{idx}] is not PSD")));
            }
            if frobenius_rel(&e.eigen.reconstruct(), &e.cov) > T::tol(1e-9) {
                return Err(Error::Numerical(format!("R[{idx}] eigen reconstruction failed")));
            }
        }
        Ok(())
    }

    /// Write `ap,ue,row,col,re,im` rows (one per matrix entry).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "ap,ue,row,col,re,im")?;
        for m in 0..self.num_aps {
            for k in 0..self.num_ues {
                let cov = self.cov(m, k);
                for a in 0..self.antennas {
                    for b in 0..self.antennas {
                        let z = cov[(a, b)];
                        writeln!(w, "{m},{k},{a},{b},{},{}", z.re, z.im)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut rows: Vec<(usize, usize, usize, usize, f64, f64)> = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::Parse(format!("line {}: expected 6 fields", i + 1)));
            }
            let u = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))
            };
            let x = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))
            };
            rows.push((u(f[0])?, u(f[1])?, u(f[2])?, u(f[3])?, x(f[4])?, x(f[5])?));
        }
        let m = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let k = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        let n = rows.iter().map(|r| r.2.max(r.3) + 1).max().unwrap_or(0);
        if rows.len() != m * k * n * n {
            return Err(Error::Parse("incomplete correlation bundle".into()));
        }
        let mut covs = vec![vec![CMat::<T>::zeros(n, n); k]; m];
        for (ap, ue, a, b, re, im) in rows {
            covs[ap][ue][(a, b)] = c(T::lit(re), T::lit(im));
        }
        Self::from_matrices(covs)
    }
}

/// One coherence block: `h[m][k]` and per-AP receiver noise `noise[m]`.
#[derive(Debug, Clone)]
pub struct ChannelRealization<T: Real> {
    pub h: Vec<Vec<CVec<T>>>,
    pub noise: Vec<CVec<T>>,
}

/// Draw `h_{m,k} = V Lambda^{1/2} w` and `n_m ~ CN(0, noise I)` for block
/// `block` of the stream keyed by `seed`.
pub fn sample_channels<T: Real>(corr: &CorrelationSet<T>, noise: T, seed: u64, block: u64) -> ChannelRealization<T> {
    let mut rng = stream(seed, &[tag::EVALUATION, block]);
    let n = corr.antennas();
    let h = (0..corr.num_aps())
        .map(|m| {
            (0..corr.num_ues())
                .map(|k| {
                    let w = CVec::<T>::from_fn(n, |_, _| complex_gaussian(&mut rng));
                    corr.get(m, k).sqrt_factor() * w
                })
                .collect()
        })
        .collect();
    let sd = noise.sqrt();
    let noise = (0..corr.num_aps())
        .map(|_| CVec::<T>::from_fn(n, |_, _| complex_gaussian::<T, _>(&mut rng) * cr(sd)))
        .collect();
    ChannelRealization { h, noise }
}
