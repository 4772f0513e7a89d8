//! Seeded Monte Carlo campaigns over network drops and their reports.
//!
//! Each drop regenerates topology and shadowing from its own derived seed,
//! designs the analog stage, assigns pilots, and evaluates exact and
//! deterministic-equivalent SE. Drops run in parallel and are reduced in
//! drop order, so reports do not depend on the worker count.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::channel::CorrelationSet;
use crate::error::{Error, Result};
use crate::estimation::{estimation_statistics, PilotBook};
use crate::hybrid::{design, effective_correlations, AnalogMethod, HybridDesign};
use crate::link::{
    calibrate_rzf, dl_rzf_sinr_mc, effective_noise_cov, spectral_efficiency, ul_mc, BlockSampler,
    DEFAULT_CALIBRATION_BLOCKS, MIN_BLOCKS,
};
use crate::pilots::{
    assign_initial_pilots, greedy_pilot_assignment, random_pilots, Objective, PilotMethod, SinrEvaluator,
    DEFAULT_MAX_SWEEPS,
};
use crate::rmt::{dl_sinr_asymptotic, ul_sinr_asymptotic};
use crate::rng::{derive_seed, stream, tag};
use crate::scalar::Real;
use crate::scenario::{build_service_map, Scenario, ServiceMap, Topology};

/// Minimum share of drops that must succeed.
pub const MIN_SUCCESS_RATE: f64 = 0.9;
/// Outage level of the reported SE percentile.
pub const OUTAGE_QUANTILE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkMode {
    Ul,
    Dl,
}

impl FromStr for LinkMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ul" => Ok(Self::Ul),
            "dl" => Ok(Self::Dl),
            other => Err(Error::Parse(format!("unknown link mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for LinkMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Ul => "ul",
            Self::Dl => "dl",
        })
    }
}

/// How DL precoder normalizers are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Sample mean over a dedicated calibration ensemble of this many blocks.
    MonteCarlo(usize),
    DeterministicEquivalent,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub mode: LinkMode,
    pub analog: AnalogMethod,
    pub pilots: PilotMethod,
    pub drops: usize,
    pub blocks: usize,
    pub seed: u64,
    /// `None` uses the global rayon pool.
    pub workers: Option<usize>,
    pub normalization: Normalization,
}

impl ExperimentConfig {
    pub fn new(mode: LinkMode, seed: u64) -> Self {
        Self {
            mode,
            analog: AnalogMethod::Proposed,
            pilots: PilotMethod::Greedy,
            drops: 50,
            blocks: 200,
            seed,
            workers: None,
            normalization: Normalization::MonteCarlo(DEFAULT_CALIBRATION_BLOCKS),
        }
    }
}

/// One UE in one drop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UeRecord {
    pub drop: usize,
    pub ue: usize,
    pub pilot: usize,
    pub sinr_exact: f64,
    pub se_exact: f64,
    pub sinr_de: f64,
    pub se_de: f64,
    /// DL only: standard error of `sinr_exact`.
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DropReport {
    pub drop: usize,
    pub seed: u64,
    pub records: Vec<UeRecord>,
    /// Cost trace of the greedy pilot search, when used.
    pub pilot_trace: Vec<f64>,
}

/// Per-UE network state for one drop, shared by all subcommands.
pub struct DropSetup<T: Real> {
    pub seed: u64,
    pub topology: Topology,
    pub service: ServiceMap,
    pub corr: CorrelationSet<T>,
}

pub fn drop_seed(seed: u64, drop: usize) -> u64 {
    derive_seed(seed, &[tag::DROP, drop as u64])
}

/// Topology, service map and correlations of drop `drop`.
pub fn setup_drop<T: Real>(s: &Scenario, seed: u64, drop: usize) -> Result<DropSetup<T>> {
    let seed = drop_seed(seed, drop);
    let topology = Topology::for_seed(s, seed);
    let service = build_service_map(&topology, s)?;
    let corr = CorrelationSet::for_seed(s, &topology, seed)?;
    Ok(DropSetup {
        seed,
        topology,
        service,
        corr,
    })
}

/// Assign pilots with the chosen method. Returns the book and the greedy
/// cost trace (empty for other methods).
pub fn choose_pilots<T: Real>(
    evaluator: &SinrEvaluator<'_, T>,
    method: PilotMethod,
    s: &Scenario,
    seed: u64,
) -> Result<(PilotBook, Vec<T>)> {
    match method {
        PilotMethod::Random => {
            let mut rng = stream(seed, &[tag::PILOTS]);
            Ok((random_pilots(s.num_ues, s.pilot_len, &mut rng), Vec::new()))
        }
        PilotMethod::Initial => Ok((
            assign_initial_pilots(&evaluator.isolated_gamma(s.pilot_len)?, s.pilot_len),
            Vec::new(),
        )),
        PilotMethod::Greedy => {
            let initial = assign_initial_pilots(&evaluator.isolated_gamma(s.pilot_len)?, s.pilot_len);
            let trace = greedy_pilot_assignment(
                |b| evaluator.evaluate(b),
                initial,
                T::lit(s.conv_tol),
                DEFAULT_MAX_SWEEPS,
            )?;
            Ok((trace.best().clone(), trace.costs))
        }
    }
}

/// Full pipeline for one drop.
pub fn run_drop<T: Real>(s: &Scenario, cfg: &ExperimentConfig, drop: usize) -> Result<DropReport> {
    let setup = setup_drop::<T>(s, cfg.seed, drop)?;
    let design: HybridDesign<T> = design(cfg.analog, &setup.corr, &setup.service, s.rf_chains, T::lit(s.conv_tol))?;
    let eff = effective_correlations(&setup.corr, &design);
    let powers = vec![T::lit(s.ue_power); s.num_ues];
    let objective = match cfg.mode {
        LinkMode::Ul => Objective::Uplink,
        LinkMode::Dl => Objective::Downlink,
    };
    let evaluator = SinrEvaluator::new(
        &eff,
        &setup.service,
        powers.clone(),
        T::lit(s.pilot_power),
        T::lit(s.noise),
        T::lit(s.rzf_regularizer()),
        objective,
    );
    let (book, trace) = choose_pilots(&evaluator, cfg.pilots, s, setup.seed)?;
    let stats = estimation_statistics(&eff, &book, T::lit(s.pilot_power), T::lit(s.noise))?;
    let chains: Vec<_> = design.aps.iter().map(|a| a.chain.clone()).collect();
    let sampler = BlockSampler::new(&setup.corr, &chains, &stats, &book, setup.seed)?;
    let noise = T::lit(s.noise);
    let prelog = T::lit(s.prelog());
    let se = |x: T| spectral_efficiency(x, s.pilot_len, s.coherence).as_f64();
    let records = match cfg.mode {
        LinkMode::Ul => {
            let eff_noise = effective_noise_cov(&stats, &powers, &setup.service, noise);
            let mc = ul_mc(&sampler, &eff_noise, &setup.service, &powers, cfg.blocks, prelog)?;
            let de = ul_sinr_asymptotic(&stats, &eff_noise, &powers, &setup.service)?;
            (0..s.num_ues)
                .map(|k| UeRecord {
                    drop,
                    ue: k,
                    pilot: book.pilot(k),
                    sinr_exact: mc.sinr[k].as_f64(),
                    se_exact: mc.se[k].as_f64(),
                    sinr_de: de[k].as_f64(),
                    se_de: se(de[k]),
                    stderr: None,
                })
                .collect()
        }
        LinkMode::Dl => {
            if cfg.blocks < MIN_BLOCKS {
                return Err(Error::TooFewBlocks(cfg.blocks));
            }
            let rho = T::lit(s.rzf_regularizer());
            let de = dl_sinr_asymptotic(&stats, &powers, &setup.service, rho, noise)?;
            let lambda = match cfg.normalization {
                Normalization::MonteCarlo(n) => calibrate_rzf(&sampler, &setup.service, rho, n)?,
                Normalization::DeterministicEquivalent => de.lambda.clone(),
            };
            let mc = dl_rzf_sinr_mc(&sampler, &setup.service, rho, &lambda, &powers, noise, cfg.blocks)?;
            (0..s.num_ues)
                .map(|k| UeRecord {
                    drop,
                    ue: k,
                    pilot: book.pilot(k),
                    sinr_exact: mc.sinr[k].as_f64(),
                    se_exact: se(mc.sinr[k]),
                    sinr_de: de.sinr[k].as_f64(),
                    se_de: se(de.sinr[k]),
                    stderr: Some(mc.stderr[k].as_f64()),
                })
                .collect()
        }
    };
    Ok(DropReport {
        drop,
        seed: setup.seed,
        records,
        pilot_trace: trace.iter().map(|c| c.as_f64()).collect(),
    })
}

/// Empirical CDF and percentiles of a sample set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdfSummary {
    /// `(value, P[X <= value])` at every distinct value.
    pub points: Vec<(f64, f64)>,
    /// 5th percentile.
    pub outage: f64,
    pub median: f64,
    pub min: f64,
}

/// Percentile of sorted data with midpoint plotting positions
/// `p_i = (i - 0.5) / n`, linear in between and clamped at the ends.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let pos = q * n as f64 - 0.5;
    if pos <= 0.0 {
        return sorted[0];
    }
    if pos >= (n - 1) as f64 {
        return sorted[n - 1];
    }
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

pub fn cdf_summary(samples: &[f64]) -> Result<CdfSummary> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (i, &x) in sorted.iter().enumerate() {
        let p = (i + 1) as f64 / n;
        match points.last_mut() {
            Some(last) if last.0 == x => last.1 = p,
            _ => points.push((x, p)),
        }
    }
    Ok(CdfSummary {
        points,
        outage: percentile(&sorted, OUTAGE_QUANTILE),
        median: percentile(&sorted, 0.5),
        min: sorted[0],
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
    pub scalar: String,
    pub mode: LinkMode,
    pub analog: String,
    pub pilots: String,
    pub drops: usize,
    pub blocks: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    /// Mean over drops of the per-drop minimum SE.
    pub min_se: f64,
    /// 5th percentile of per-UE exact SE.
    pub outage_se: f64,
    pub median_se: f64,
    pub outage_se_de: f64,
    pub successful_drops: usize,
    pub failed_drops: Vec<(usize, String)>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub records: Vec<UeRecord>,
    pub pilot_traces: Vec<(usize, Vec<f64>)>,
    pub cdf: CdfSummary,
    pub summary: Summary,
    pub provenance: Provenance,
}

/// SHA-256 of the scenario's canonical debug rendering.
pub fn config_hash(s: &Scenario) -> String {
    hex::encode(Sha256::digest(format!("{s:?}").as_bytes()))
}

fn in_pool<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

pub fn run_experiment<T: Real>(s: &Scenario, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    s.validate()?;
    if cfg.drops == 0 {
        return Err(Error::range("drops", "must be at least 1"));
    }
    if cfg.blocks == 0 {
        return Err(Error::range("blocks", "must be at least 1"));
    }
    if cfg.mode == LinkMode::Dl && cfg.blocks < MIN_BLOCKS {
        return Err(Error::range("blocks", format!("downlink needs at least {MIN_BLOCKS}")));
    }
    let outcomes: Vec<Result<DropReport>> = in_pool(cfg.workers, || {
        (0..cfg.drops)
            .into_par_iter()
            .map(|d| run_drop::<T>(s, cfg, d))
            .collect()
    })?;
    let mut records = Vec::new();
    let mut traces = Vec::new();
    let mut failed = Vec::new();
    let mut drop_minima = Vec::new();
    for (d, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => {
                drop_minima.push(r.records.iter().map(|x| x.se_exact).fold(f64::INFINITY, f64::min));
                if !r.pilot_trace.is_empty() {
                    traces.push((d, r.pilot_trace));
                }
                records.extend(r.records);
            }
            Err(e) => {
                if e.is_config() && !matches!(e, Error::UncoveredUe(_)) {
                    return Err(e);
                }
                log::warn!("drop {d} skipped: {e}");
                failed.push((d, e.to_string()));
            }
        }
    }
    let ok = cfg.drops - failed.len();
    if (ok as f64) < MIN_SUCCESS_RATE * cfg.drops as f64 {
        return Err(Error::Numerical(format!(
            "only {ok} of {} drops succeeded; first failure: {}",
            cfg.drops,
            failed.first().map_or("none", |f| f.1.as_str())
        )));
    }
    let exact: Vec<f64> = records.iter().map(|r| r.se_exact).collect();
    let de: Vec<f64> = records.iter().map(|r| r.se_de).collect();
    let cdf = cdf_summary(&exact)?;
    let cdf_de = cdf_summary(&de)?;
    let summary = Summary {
        min_se: drop_minima.iter().sum::<f64>() / drop_minima.len() as f64,
        outage_se: cdf.outage,
        median_se: cdf.median,
        outage_se_de: cdf_de.outage,
        successful_drops: ok,
        failed_drops: failed,
    };
    let provenance = Provenance {
        seed: cfg.seed,
        config_hash: config_hash(s),
        version: env!("CARGO_PKG_VERSION").to_string(),
        scalar: std::any::type_name::<T>().to_string(),
        mode: cfg.mode,
        analog: cfg.analog.to_string(),
        pilots: cfg.pilots.to_string(),
        drops: cfg.drops,
        blocks: cfg.blocks,
    };
    Ok(ExperimentReport {
        records,
        pilot_traces: traces,
        cdf,
        summary,
        provenance,
    })
}

impl ExperimentReport {
    pub fn records_csv(&self) -> String {
        let mut out = String::from("drop,ue,pilot,sinr_exact,se_exact,sinr_de,se_de,stderr\n");
        for r in &self.records {
            let stderr = r.stderr.map(|x| x.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.drop, r.ue, r.pilot, r.sinr_exact, r.se_exact, r.sinr_de, r.se_de, stderr
            );
        }
        out
    }

    pub fn cdf_csv(&self) -> String {
        let mut out = String::from("se,cdf\n");
        for (x, p) in &self.cdf.points {
            let _ = writeln!(out, "{x},{p}");
        }
        out
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("drop,sweep,min_sinr\n");
        for (d, t) in &self.pilot_traces {
            for (j, c) in t.iter().enumerate() {
                let _ = writeln!(out, "{d},{j},{c}");
            }
        }
        out
    }

    pub fn sidecar_json(&self) -> String {
        #[derive(Serialize)]
        struct Sidecar<'a> {
            provenance: &'a Provenance,
            summary: &'a Summary,
        }
        serde_json::to_string_pretty(&Sidecar {
            provenance: &self.provenance,
            summary: &self.summary,
        })
        .expect("plain data serializes")
    }

    /// Write `<stem>.csv`, `<stem>_cdf.csv`, `<stem>_pilots.csv` and `<stem>.json`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let files = [
            (format!("{stem}.csv"), self.records_csv()),
            (format!("{stem}_cdf.csv"), self.cdf_csv()),
            (format!("{stem}_pilots.csv"), self.trace_csv()),
            (format!("{stem}.json"), self.sidecar_json()),
        ];
        let mut paths = Vec::new();
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::File::create(&path)?.write_all(body.as_bytes())?;
            paths.push(path);
        }
        Ok(paths)
    }
}
