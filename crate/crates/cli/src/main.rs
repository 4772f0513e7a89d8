//! Command-line front end for the cell-free hybrid MIMO simulator.
//!
//! Exit codes: 0 on success, 2 for configuration or I/O errors, 3 for
//! numerical failures.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cellfree::bounds::{gap_bounds, mrc_asymptotic_sinr};
use cellfree::experiment::{
    cdf_summary, choose_pilots, run_experiment, setup_drop, ExperimentConfig, ExperimentReport, LinkMode, Normalization,
};
use cellfree::hybrid::{design, effective_correlations, AnalogMethod};
use cellfree::pilots::{Objective, PilotMethod, SinrEvaluator};
use cellfree::{Error, Real, Result, Scenario};

#[derive(Parser)]
#[command(
    name = "cellfree",
    version,
    about = "Cell-free massive MIMO with hybrid access points"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Uplink MMSE campaign: exact and deterministic-equivalent SE per UE.
    SimulateUl(Campaign),
    /// Downlink RZF campaign with jackknife standard errors.
    SimulateDl(Campaign),
    /// Write the analog beamformer matrices of each drop.
    DesignAnalog {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "proposed")]
        method: AnalogMethod,
    },
    /// Assign pilots and write the assignment with its min-SINR trace.
    AssignPilots {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "ul")]
        mode: LinkMode,
    },
    /// Digital versus hybrid MRC gap and its eigenvalue bounds.
    Bounds {
        #[command(flatten)]
        common: Common,
    },
    /// Exact versus deterministic-equivalent SE, one row per UE and drop.
    ValidateRmt {
        #[command(flatten)]
        campaign: Campaign,
        #[arg(long, default_value = "ul")]
        mode: LinkMode,
    },
    /// Summarize per-UE result tables written by the simulate commands.
    Report {
        /// Result CSV files with an `se_exact` column.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario document (TOML). Defaults to the built-in desk network.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Base seed; defaults to `rng_seed` from the scenario.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    drops: Option<usize>,
    #[arg(long, default_value = "proposed")]
    analog: AnalogMethod,
    #[arg(long, default_value = "greedy")]
    pilots: PilotMethod,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum, default_value = "f64")]
    precision: Precision,
}

#[derive(Args)]
struct Campaign {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 200)]
    blocks: usize,
    /// DL normalization: Monte Carlo calibration blocks, or 0 for the
    /// deterministic-equivalent normalizers.
    #[arg(long, default_value_t = 2000)]
    calibration: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

impl Common {
    fn scenario(&self) -> Result<Scenario> {
        match &self.scenario {
            None => Ok(Scenario::desk()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))?;
                cellfree::scenario::parse_scenario(&text)
            }
        }
    }

    fn seed(&self, s: &Scenario) -> u64 {
        self.seed.unwrap_or(s.rng_seed)
    }
}

impl Campaign {
    fn config(&self, s: &Scenario, mode: LinkMode) -> ExperimentConfig {
        let c = &self.common;
        let mut cfg = ExperimentConfig::new(mode, c.seed(s));
        cfg.analog = c.analog;
        cfg.pilots = c.pilots;
        cfg.drops = c.drops.unwrap_or(cfg.drops);
        cfg.blocks = self.blocks;
        cfg.workers = c.workers;
        cfg.normalization = match self.calibration {
            0 => Normalization::DeterministicEquivalent,
            n => Normalization::MonteCarlo(n),
        };
        cfg
    }

    fn run(&self, mode: LinkMode) -> Result<(Scenario, ExperimentReport)> {
        let s = self.common.scenario()?;
        let cfg = self.config(&s, mode);
        let report = match self.common.precision {
            Precision::F32 => run_experiment::<f32>(&s, &cfg)?,
            Precision::F64 => run_experiment::<f64>(&s, &cfg)?,
        };
        Ok((s, report))
    }
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, body)?;
    println!("wrote {}", path.display());
    Ok(path)
}

fn simulate(campaign: &Campaign, mode: LinkMode) -> Result<()> {
    let (_, report) = campaign.run(mode)?;
    for path in report.write(&campaign.common.out_dir, &mode.to_string())? {
        println!("wrote {}", path.display());
    }
    let s = &report.summary;
    println!(
        "{mode}: drops {}/{}  outage SE {:.4}  median SE {:.4}  mean min SE {:.4}  outage SE (DE) {:.4}",
        s.successful_drops, report.provenance.drops, s.outage_se, s.median_se, s.min_se, s.outage_se_de
    );
    Ok(())
}

fn design_analog<T: Real>(c: &Common, method: AnalogMethod) -> Result<()> {
    let s = c.scenario()?;
    for d in 0..c.drops.unwrap_or(1) {
        let setup = setup_drop::<T>(&s, c.seed(&s), d)?;
        let hd = design(method, &setup.corr, &setup.service, s.rf_chains, T::lit(s.conv_tol))?;
        let mut body = Vec::new();
        hd.write_csv(&mut body)?;
        let text = String::from_utf8(body).expect("csv is utf-8");
        write_file(&c.out_dir, &format!("design_{method}_{d}.csv"), &text)?;
    }
    Ok(())
}

fn assign_pilots<T: Real>(c: &Common, mode: LinkMode) -> Result<()> {
    let s = c.scenario()?;
    let mut book_csv = String::from("drop,ue,pilot\n");
    let mut trace_csv = String::from("drop,sweep,min_sinr\n");
    for d in 0..c.drops.unwrap_or(1) {
        let setup = setup_drop::<T>(&s, c.seed(&s), d)?;
        let hd = design(c.analog, &setup.corr, &setup.service, s.rf_chains, T::lit(s.conv_tol))?;
        let eff = effective_correlations(&setup.corr, &hd);
        let evaluator = SinrEvaluator::new(
            &eff,
            &setup.service,
            vec![T::lit(s.ue_power); s.num_ues],
            T::lit(s.pilot_power),
            T::lit(s.noise),
            T::lit(s.rzf_regularizer()),
            match mode {
                LinkMode::Ul => Objective::Uplink,
                LinkMode::Dl => Objective::Downlink,
            },
        );
        let (book, trace) = choose_pilots(&evaluator, c.pilots, &s, setup.seed)?;
        for (k, p) in book.assignment().iter().enumerate() {
            let _ = writeln!(book_csv, "{d},{k},{p}");
        }
        for (j, v) in trace.iter().enumerate() {
            let _ = writeln!(trace_csv, "{d},{j},{v}");
        }
        let last = trace.last().map_or(String::from("-"), |v| format!("{v:e}"));
        println!(
            "drop {d}: {} sweeps, final min SINR {last}",
            trace.len().saturating_sub(1)
        );
    }
    write_file(&c.out_dir, "pilots.csv", &book_csv)?;
    write_file(&c.out_dir, "pilots_trace.csv", &trace_csv)?;
    Ok(())
}

fn bounds<T: Real>(c: &Common) -> Result<()> {
    let s = c.scenario()?;
    let (p, noise) = (T::lit(s.ue_power), T::lit(s.noise));
    let mut out = String::from("drop,ue,sinr_digital,sinr_hybrid,delta_lb,gap,delta_ub\n");
    let mut inside = 0;
    let mut total = 0;
    for d in 0..c.drops.unwrap_or(1) {
        let setup = setup_drop::<T>(&s, c.seed(&s), d)?;
        let hd = design(c.analog, &setup.corr, &setup.service, s.rf_chains, T::lit(s.conv_tol))?;
        let chains: Vec<_> = hd.aps.iter().map(|a| a.chain.clone()).collect();
        let digital = mrc_asymptotic_sinr(&setup.corr, None, p, noise);
        let hybrid = mrc_asymptotic_sinr(&setup.corr, Some(&chains), p, noise);
        let b = gap_bounds(&setup.corr, s.rf_chains, p, noise);
        for k in 0..s.num_ues {
            let gap = digital[k] - hybrid[k];
            let slack = T::tol(1e-9) * (T::one() + b[k].upper);
            total += 1;
            if gap >= b[k].lower - slack && gap <= b[k].upper + slack {
                inside += 1;
            }
            let _ = writeln!(
                out,
                "{d},{k},{},{},{},{},{}",
                digital[k], hybrid[k], b[k].lower, gap, b[k].upper
            );
        }
    }
    write_file(&c.out_dir, "bounds.csv", &out)?;
    println!("gap within bounds for {inside}/{total} UEs");
    Ok(())
}

fn validate_rmt(campaign: &Campaign, mode: LinkMode) -> Result<()> {
    let (_, report) = campaign.run(mode)?;
    let mut out = String::from("instance,exact,deterministic_equivalent,relative_gap\n");
    let mut gaps = Vec::new();
    for (i, r) in report.records.iter().enumerate() {
        let gap = (r.se_de - r.se_exact).abs() / r.se_exact.abs().max(f64::MIN_POSITIVE);
        gaps.push(gap);
        let _ = writeln!(out, "{i},{},{},{gap}", r.se_exact, r.se_de);
    }
    write_file(&campaign.common.out_dir, &format!("validate_{mode}.csv"), &out)?;
    let g = cdf_summary(&gaps)?;
    println!("{mode}: median relative SE gap {:.4} over {} UEs", g.median, gaps.len());
    Ok(())
}

fn read_se(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse(format!("{}: empty file", path.display())))?;
    let col = header
        .split(',')
        .position(|h| h.trim() == "se_exact")
        .ok_or_else(|| Error::Parse(format!("{}: no se_exact column", path.display())))?;
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .nth(col)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Parse(format!("{}: bad row `{l}`", path.display())))
        })
        .collect()
}

fn report(inputs: &[PathBuf], out_dir: Option<&Path>) -> Result<()> {
    println!(
        "{:<32} {:>6} {:>10} {:>10} {:>10}",
        "input", "n", "outage", "median", "min"
    );
    for path in inputs {
        let se = read_se(path)?;
        let cdf = cdf_summary(&se)?;
        let name = path
            .file_name()
            .map_or(String::new(), |n| n.to_string_lossy().into_owned());
        println!(
            "{name:<32} {:>6} {:>10.4} {:>10.4} {:>10.4}",
            se.len(),
            cdf.outage,
            cdf.median,
            cdf.min
        );
        if let Some(dir) = out_dir {
            let mut body = String::from("se,cdf\n");
            for (x, p) in &cdf.points {
                let _ = writeln!(body, "{x},{p}");
            }
            let stem = path
                .file_stem()
                .map_or(String::from("report"), |n| n.to_string_lossy().into_owned());
            write_file(dir, &format!("{stem}_cdf.csv"), &body)?;
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    macro_rules! typed {
        ($c:expr, $f:ident $(, $arg:expr)*) => {
            match $c.precision {
                Precision::F32 => $f::<f32>($c $(, $arg)*),
                Precision::F64 => $f::<f64>($c $(, $arg)*),
            }
        };
    }
    match &cli.command {
        Command::SimulateUl(c) => simulate(c, LinkMode::Ul),
        Command::SimulateDl(c) => simulate(c, LinkMode::Dl),
        Command::DesignAnalog { common, method } => typed!(common, design_analog, *method),
        Command::AssignPilots { common, mode } => typed!(common, assign_pilots, *mode),
        Command::Bounds { common } => typed!(common, bounds),
        Command::ValidateRmt { campaign, mode } => validate_rmt(campaign, *mode),
        Command::Report { inputs, out_dir } => report(inputs, out_dir.as_deref()),
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() || matches!(e, Error::Io(_) | Error::EmptySamples) {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
