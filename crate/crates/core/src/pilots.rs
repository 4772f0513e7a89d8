//! Pilot assignment: correlation-based initial grouping and the greedy
//! max-min refinement driven by deterministic-equivalent SINRs.

use std::collections::HashMap;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimation::{group_gamma, EstimationStats, PilotBook};
use crate::hybrid::EffectiveCorrelations;
use crate::linalg::trace_product;
use crate::link::effective_noise_cov;
use crate::rmt::{dl_sinr_asymptotic, ul_sinr_asymptotic};
use crate::scalar::{CMat, Real};
use crate::scenario::ServiceMap;

pub const DEFAULT_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PilotMethod {
    Greedy,
    Random,
    Initial,
}

impl FromStr for PilotMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "random" => Ok(Self::Random),
            "initial" => Ok(Self::Initial),
            other => Err(Error::Parse(format!("unknown pilot method `{other}`"))),
        }
    }
}

impl std::fmt::Display for PilotMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Greedy => "greedy",
            Self::Random => "random",
            Self::Initial => "initial",
        })
    }
}

/// Which deterministic equivalent scores a pilot book.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Uplink,
    Downlink,
}

/// `nu_{k,i} = tr(G_k G_i) / (tr G_k tr G_i)` summed over APs.
pub fn normalized_cross_correlation<T: Real>(gamma: &[Vec<CMat<T>>]) -> Vec<Vec<T>> {
    let k_total = gamma.first().map_or(0, Vec::len);
    let traces: Vec<T> = (0..k_total)
        .map(|k| gamma.iter().fold(T::zero(), |a, row| a + row[k].trace().re))
        .collect();
    (0..k_total)
        .map(|k| {
            (0..k_total)
                .map(|i| {
                    let num = gamma
                        .iter()
                        .fold(T::zero(), |a, row| a + trace_product(&row[k], &row[i]).re);
                    let den = traces[k] * traces[i];
                    if den > T::zero() {
                        num / den
                    } else {
                        T::zero()
                    }
                })
                .collect()
        })
        .collect()
}

/// Initial grouping from contamination-free estimate covariances
/// `gamma[m][k]`.
///
/// With `K <= tau` every UE gets its own pilot. Otherwise the `tau` groups
/// are seeded with mutually correlated UEs (the most correlated pair, then
/// repeatedly the UE whose smallest correlation to the seeds is largest), and
/// the remaining UEs join, in index order, the group minimizing their largest
/// correlation with its members. Ties go to the smaller group, then the lower
/// group index.
pub fn assign_initial_pilots<T: Real>(gamma: &[Vec<CMat<T>>], tau: usize) -> PilotBook {
    let k_total = gamma.first().map_or(0, Vec::len);
    if k_total <= tau {
        return PilotBook::new(tau, (0..k_total).collect()).expect("indices below tau");
    }
    let nu = normalized_cross_correlation(gamma);
    let mut seeds: Vec<usize> = Vec::with_capacity(tau);
    let mut best = (T::lit(-1.0), 0, 1);
    for k in 0..k_total {
        for i in k + 1..k_total {
            if nu[k][i] > best.0 {
                best = (nu[k][i], k, i);
            }
        }
    }
    if tau >= 2 {
        seeds.extend([best.1, best.2]);
    } else {
        seeds.push(0);
    }
    while seeds.len() < tau {
        let mut pick: Option<(T, usize)> = None;
        for k in (0..k_total).filter(|k| !seeds.contains(k)) {
            let score = seeds.iter().fold(T::max_value().unwrap(), |a, &s| a.min(nu[k][s]));
            if pick.is_none_or(|(b, _)| score > b) {
                pick = Some((score, k));
            }
        }
        seeds.push(pick.expect("K > tau leaves candidates").1);
    }
    let mut groups: Vec<Vec<usize>> = seeds.iter().map(|&s| vec![s]).collect();
    for k in (0..k_total).filter(|k| !seeds.contains(k)) {
        let mut choice: Option<(T, usize, usize)> = None;
        for (g, members) in groups.iter().enumerate() {
            let worst = members.iter().fold(T::zero(), |a, &i| a.max(nu[k][i]));
            let better = match choice {
                None => true,
                Some((w, size, _)) => worst < w || (worst == w && members.len() < size),
            };
            if better {
                choice = Some((worst, members.len(), g));
            }
        }
        groups[choice.expect("tau >= 1").2].push(k);
    }
    let mut assignment = vec![0; k_total];
    for (g, members) in groups.iter().enumerate() {
        for &k in members {
            assignment[k] = g;
        }
    }
    PilotBook::new(tau, assignment).expect("indices below tau")
}

/// Uniformly random pilot per UE.
pub fn random_pilots<R: Rng + ?Sized>(num_ues: usize, tau: usize, rng: &mut R) -> PilotBook {
    PilotBook::new(tau, (0..num_ues).map(|_| rng.random_range(0..tau)).collect()).expect("indices below tau")
}

type GroupKey = (usize, Vec<usize>);
type GroupEntry<T> = Arc<Vec<(usize, CMat<T>)>>;

/// Scores pilot books by deterministic-equivalent SINRs. Estimate
/// covariances are cached per (AP, pilot group), so moving one UE only
/// recomputes the two groups it leaves and joins.
pub struct SinrEvaluator<'a, T: Real> {
    pub eff: &'a EffectiveCorrelations<T>,
    pub service: &'a ServiceMap,
    pub powers: Vec<T>,
    pub pilot_power: T,
    pub noise: T,
    pub rho: T,
    pub objective: Objective,
    cache: Mutex<HashMap<GroupKey, GroupEntry<T>>>,
}

impl<'a, T: Real> SinrEvaluator<'a, T> {
    pub fn new(
        eff: &'a EffectiveCorrelations<T>,
        service: &'a ServiceMap,
        powers: Vec<T>,
        pilot_power: T,
        noise: T,
        rho: T,
        objective: Objective,
    ) -> Self {
        Self {
            eff,
            service,
            powers,
            pilot_power,
            noise,
            rho,
            objective,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn group(&self, m: usize, members: &[usize], tau: usize) -> Result<GroupEntry<T>> {
        let key = (m, members.to_vec());
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let entry = Arc::new(group_gamma(self.eff, m, members, self.pilot_power, self.noise, tau)?);
        self.cache.lock().expect("cache lock").insert(key, entry.clone());
        Ok(entry)
    }

    /// Estimation statistics for `book` (orthogonal pilots).
    pub fn stats(&self, book: &PilotBook) -> Result<EstimationStats<T>> {
        let k_total = self.eff.num_ues();
        let groups = book.groups();
        let mut gamma = vec![CMat::<T>::zeros(0, 0); self.eff.num_aps() * k_total];
        for m in 0..self.eff.num_aps() {
            for members in groups.iter().filter(|g| !g.is_empty()) {
                for (k, g) in self.group(m, members, book.tau())?.iter() {
                    gamma[m * k_total + k] = g.clone();
                }
            }
        }
        Ok(EstimationStats::from_gamma(
            self.eff,
            gamma,
            book.tau(),
            self.pilot_power,
            self.noise,
        ))
    }

    /// Per-UE deterministic-equivalent SINR.
    pub fn evaluate(&self, book: &PilotBook) -> Result<Vec<T>> {
        let stats = self.stats(book)?;
        match self.objective {
            Objective::Uplink => {
                let noise = effective_noise_cov(&stats, &self.powers, self.service, self.noise);
                ul_sinr_asymptotic(&stats, &noise, &self.powers, self.service)
            }
            Objective::Downlink => {
                Ok(dl_sinr_asymptotic(&stats, &self.powers, self.service, self.rho, self.noise)?.sinr)
            }
        }
    }

    /// Contamination-free `Gamma[m][k]` (every UE alone on its pilot).
    pub fn isolated_gamma(&self, tau: usize) -> Result<Vec<Vec<CMat<T>>>> {
        (0..self.eff.num_aps())
            .map(|m| {
                (0..self.eff.num_ues())
                    .map(|k| Ok(self.group(m, &[k], tau)?[0].1.clone()))
                    .collect()
            })
            .collect()
    }
}

fn min_of<T: Real>(v: &[T]) -> T {
    v.iter().copied().fold(T::max_value().unwrap(), |a, b| a.min(b))
}

/// Per-sweep record of the greedy search.
#[derive(Debug, Clone)]
pub struct AssignmentTrace<T> {
    /// `Phi^(j)`, starting with the initial book.
    pub books: Vec<PilotBook>,
    /// `mu^(j) = min_k SINR_k(Phi^(j))`.
    pub costs: Vec<T>,
    pub sweeps: usize,
    pub converged: bool,
}

impl<T: Real> AssignmentTrace<T> {
    pub fn best(&self) -> &PilotBook {
        self.books.last().expect("trace holds the initial book")
    }

    pub fn cost(&self) -> T {
        *self.costs.last().expect("trace holds the initial cost")
    }
}

/// Greedy max-min pilot assignment.
///
/// Each sweep revisits UEs in index order and moves UE `u` to the pilot
/// maximizing `min_k SINR_k` with all other pilots fixed, accepting only
/// strict improvements. Sweeps stop once the relative gain of a sweep is at
/// most `eps` (absolute gain when the previous cost is zero).
pub fn greedy_pilot_assignment<T, F>(
    objective: F,
    initial: PilotBook,
    eps: T,
    max_sweeps: usize,
) -> Result<AssignmentTrace<T>>
where
    T: Real,
    F: Fn(&PilotBook) -> Result<Vec<T>> + Sync,
{
    let mut book = initial;
    let mut cost = min_of(&objective(&book)?);
    let mut trace = AssignmentTrace {
        books: vec![book.clone()],
        costs: vec![cost],
        sweeps: 0,
        converged: false,
    };
    let tau = book.tau();
    while trace.sweeps < max_sweeps {
        trace.sweeps += 1;
        let start = cost;
        for u in 0..book.num_ues() {
            let here = book.pilot(u);
            let scored: Vec<(usize, Option<T>)> = (0..tau)
                .into_par_iter()
                .filter(|&p| p != here)
                .map(|p| match objective(&book.with(u, p)) {
                    Ok(s) => (p, Some(min_of(&s))),
                    Err(e) => {
                        log::warn!("pilot candidate (ue {u}, pilot {p}) skipped: {e}");
                        (p, None)
                    }
                })
                .collect();
            let mut best: Option<(usize, T)> = None;
            for (p, s) in scored {
                if let Some(s) = s {
                    if best.is_none_or(|(_, b)| s > b) {
                        best = Some((p, s));
                    }
                }
            }
            if let Some((p, s)) = best {
                if s > cost {
                    book = book.with(u, p);
                    cost = s;
                }
            }
        }
        trace.books.push(book.clone());
        trace.costs.push(cost);
        let gain = if start > T::zero() {
            (cost - start) / start
        } else {
            cost - start
        };
        if !(gain > eps) {
            trace.converged = true;
            break;
        }
    }
    Ok(trace)
}

/// Best book over all `tau^K` assignments (small instances only).
pub fn exhaustive_pilot_assignment<T, F>(objective: F, num_ues: usize, tau: usize) -> Result<(PilotBook, T)>
where
    T: Real,
    F: Fn(&PilotBook) -> Result<Vec<T>> + Sync,
{
    let total = tau
        .checked_pow(num_ues as u32)
        .ok_or_else(|| Error::range("num_ues", "too many assignments"))?;
    let scored: Vec<(PilotBook, T)> = (0..total)
        .into_par_iter()
        .map(|code| {
            let mut c = code;
            let assignment = (0..num_ues)
                .map(|_| {
                    let p = c % tau;
                    c /= tau;
                    p
                })
                .collect();
            let book = PilotBook::new(tau, assignment)?;
            let s = min_of(&objective(&book)?);
            Ok((book, s))
        })
        .collect::<Result<_>>()?;
    scored
        .into_iter()
        .reduce(|a, b| if b.1 > a.1 { b } else { a })
        .ok_or(Error::EmptySamples)
}
