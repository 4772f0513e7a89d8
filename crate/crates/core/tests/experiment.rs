mod common;

use cellfree::experiment::*;
use cellfree::hybrid::{design, AnalogMethod};
use cellfree::pilots::PilotMethod;
use cellfree::{Error, Scenario};
use common::*;
use rand::Rng;

#[test]
fn cdf_of_four_points() {
    let c = cdf_summary(&[3.0, 1.0, 4.0, 2.0]).unwrap();
    assert_eq!(c.points, vec![(1.0, 0.25), (2.0, 0.5), (3.0, 0.75), (4.0, 1.0)]);
    assert_eq!(c.outage, 1.0);
    assert_eq!(c.median, 2.5);
    assert_eq!(c.min, 1.0);
}

#[test]
fn constant_samples_give_one_step() {
    let c = cdf_summary(&[2.5; 9]).unwrap();
    assert_eq!(c.points, vec![(2.5, 1.0)]);
    assert_eq!((c.outage, c.median), (2.5, 2.5));
}

#[test]
fn empty_samples_are_an_error() {
    assert!(matches!(cdf_summary(&[]), Err(Error::EmptySamples)));
}

/// Search the bracketing plotting positions `(i + 0.5) / n` directly.
fn percentile_oracle(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len() as f64;
    let p = |i: usize| (i as f64 + 0.5) / n;
    if q <= p(0) {
        return sorted[0];
    }
    for i in 1..sorted.len() {
        if q <= p(i) {
            let w = (q - p(i - 1)) / (p(i) - p(i - 1));
            return (1.0 - w) * sorted[i - 1] + w * sorted[i];
        }
    }
    *sorted.last().unwrap()
}

#[test]
fn percentile_matches_sort_based_oracle() {
    let mut rng = rng(80);
    let mut xs: Vec<f64> = (0..10_000).map(|_| rng.random_range(-3.0..7.0)).collect();
    xs.sort_by(f64::total_cmp);
    for q in [0.0, 0.01, 0.05, 0.25, 0.5, 0.77, 0.95, 0.999, 1.0] {
        let (a, b) = (percentile(&xs, q), percentile_oracle(&xs, q));
        assert!((a - b).abs() <= 1e-12, "q={q}: {a} vs {b}");
    }
    let c = cdf_summary(&xs).unwrap();
    assert!(c.points.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
    assert_eq!(c.points.last().unwrap().1, 1.0);
}

fn small_config(mode: LinkMode) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(mode, 5);
    cfg.drops = 2;
    cfg.blocks = 20;
    cfg.normalization = Normalization::MonteCarlo(40);
    cfg
}

#[test]
fn repeated_runs_are_identical() {
    let s = Scenario::desk();
    for mode in [LinkMode::Ul, LinkMode::Dl] {
        let mut cfg = small_config(mode);
        cfg.drops = 1;
        let a = run_experiment::<f64>(&s, &cfg).unwrap();
        let b = run_experiment::<f64>(&s, &cfg).unwrap();
        assert_eq!(a.records_csv(), b.records_csv());
        assert_eq!(a.cdf_csv(), b.cdf_csv());
        assert_eq!(a.trace_csv(), b.trace_csv());
    }
}

#[test]
fn report_contents() {
    let s = Scenario::desk();
    let cfg = small_config(LinkMode::Dl);
    let r = run_experiment::<f64>(&s, &cfg).unwrap();
    assert_eq!(r.records.len(), cfg.drops * s.num_ues);
    assert_eq!(r.summary.successful_drops, cfg.drops);
    assert!(r.records.iter().all(|x| x.stderr.is_some() && x.se_exact.is_finite()));
    assert_eq!(r.pilot_traces.len(), cfg.drops);
    for (_, t) in &r.pilot_traces {
        assert!(t.windows(2).all(|w| w[1] >= w[0]));
    }
    assert_eq!(r.provenance.config_hash, config_hash(&s));
    assert_eq!(r.records_csv().lines().count(), 1 + r.records.len());
    let json: serde_json::Value = serde_json::from_str(&r.sidecar_json()).unwrap();
    assert_eq!(json["provenance"]["seed"], 5);
    assert_eq!(json["provenance"]["mode"], "dl");
}

#[test]
fn report_files_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_experiment::<f64>(&Scenario::desk(), &small_config(LinkMode::Ul)).unwrap();
    let paths = r.write(dir.path(), "ul").unwrap();
    assert_eq!(paths.len(), 4);
    let body = std::fs::read_to_string(dir.path().join("ul.csv")).unwrap();
    assert_eq!(body, r.records_csv());
}

#[test]
fn pilot_method_does_not_touch_the_analog_design() {
    let s = Scenario::desk();
    let bytes = |method: PilotMethod| {
        let mut cfg = small_config(LinkMode::Ul);
        cfg.pilots = method;
        let setup = setup_drop::<f64>(&s, cfg.seed, 0).unwrap();
        let d = design(cfg.analog, &setup.corr, &setup.service, s.rf_chains, s.conv_tol).unwrap();
        let mut out = Vec::new();
        d.write_csv(&mut out).unwrap();
        (out, run_experiment::<f64>(&s, &cfg).unwrap())
    };
    let (greedy_design, greedy) = bytes(PilotMethod::Greedy);
    let (random_design, random) = bytes(PilotMethod::Random);
    assert_eq!(greedy_design, random_design);
    assert_eq!(greedy.records.len(), random.records.len());
    assert!(random.pilot_traces.is_empty());
}

#[test]
fn config_hash_tracks_parameters() {
    let a = Scenario::desk();
    let mut b = a.clone();
    assert_eq!(config_hash(&a), config_hash(&b));
    b.noise *= 2.0;
    assert_ne!(config_hash(&a), config_hash(&b));
    assert_eq!(config_hash(&a).len(), 64);
}

#[test]
fn invalid_campaigns_are_rejected() {
    let s = Scenario::desk();
    let mut cfg = small_config(LinkMode::Ul);
    cfg.drops = 0;
    assert!(run_experiment::<f64>(&s, &cfg).unwrap_err().is_config());
    let mut bad = s.clone();
    bad.rf_chains = 9;
    assert!(run_experiment::<f64>(&bad, &small_config(LinkMode::Ul))
        .unwrap_err()
        .is_config());
    let mut cfg = small_config(LinkMode::Dl);
    cfg.drops = 1;
    cfg.blocks = 5;
    assert!(run_experiment::<f64>(&s, &cfg).unwrap_err().is_config());
}

#[test]
fn drop_seeds_are_distinct() {
    let seeds: std::collections::HashSet<u64> = (0..100).map(|d| drop_seed(7, d)).collect();
    assert_eq!(seeds.len(), 100);
}

#[test]
fn analog_methods_all_run() {
    let mut s = Scenario::desk();
    s.num_aps = 4;
    for analog in [AnalogMethod::Proposed, AnalogMethod::Svd, AnalogMethod::Digital] {
        let mut cfg = small_config(LinkMode::Ul);
        cfg.analog = analog;
        cfg.pilots = PilotMethod::Initial;
        cfg.drops = 1;
        let r = run_experiment::<f64>(&s, &cfg).unwrap();
        assert_eq!(r.provenance.analog, analog.to_string());
    }
}

#[test]
fn single_precision_pipeline() {
    let mut s = Scenario::desk();
    s.num_aps = 4;
    for mode in [LinkMode::Ul, LinkMode::Dl] {
        let mut cfg = small_config(mode);
        cfg.drops = 1;
        cfg.pilots = PilotMethod::Initial;
        let lo = run_experiment::<f32>(&s, &cfg).unwrap();
        let hi = run_experiment::<f64>(&s, &cfg).unwrap();
        assert!(lo.provenance.scalar.contains("f32"));
        for (a, b) in lo.records.iter().zip(&hi.records) {
            assert!(a.se_de.is_finite() && a.se_exact.is_finite());
            assert!(
                (a.se_de - b.se_de).abs() < 0.05 * (1.0 + b.se_de),
                "{} vs {}",
                a.se_de,
                b.se_de
            );
        }
    }
}

#[test]
fn shipped_configs_match_builtin_scenarios() {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    let load = |name: &str| {
        cellfree::scenario::parse_scenario(&std::fs::read_to_string(format!("{root}/{name}")).unwrap()).unwrap()
    };
    let desk = load("desk.toml");
    assert_eq!(config_hash(&desk), config_hash(&Scenario::desk()));
    let reference = load("reference.toml");
    assert_eq!(config_hash(&reference), config_hash(&Scenario::reference()));
}
