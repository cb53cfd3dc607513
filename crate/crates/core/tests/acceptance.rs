//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

#[path = "properties/controller.rs"]
mod controller_props;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use labloop::analysis::AnalysisResult;
use labloop::controller::Phase;
use labloop::fsm::replay;
use labloop::runner::{execute, replicate, run, Executed, Format};
use labloop::scenario::ScenarioConfig;
use proptest::strategy::Strategy;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use serde_json::Value;
use tempfile::TempDir;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

const SEED: u64 = 42;
const MALEIC_PKA: [f64; 2] = [1.92, 6.23];
const ACETIC_PKA: f64 = 4.76;
const REPORT_KEYS: [&str; 11] = [
    "metadata",
    "parameters",
    "procedure",
    "fsm_evolution",
    "process_data",
    "quantity_records",
    "event_logs",
    "anomaly_records",
    "results",
    "visual_documentation",
    "reproducibility_guide",
];
const CHARTS: [&str; 4] = ["curve.csv", "d1.csv", "d2.csv", "zoom.csv"];
const TITRATIONS: [&str; 4] = ["hcl_titration", "acetic_titration", "maleic_titration", "edta_complexometric"];

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn bundled(name: &str) -> ScenarioConfig {
    ScenarioConfig::bundled(name).expect("bundled scenario")
}

fn exec(cfg: &ScenarioConfig, seed: u64) -> Result<Executed, String> {
    execute(cfg, seed).map_err(|e| format!("{}: {e}", cfg.name))
}

fn analysis(ex: &Executed) -> Result<&AnalysisResult, String> {
    ex.report
        .as_ref()
        .and_then(|r| r.analysis.as_ref())
        .ok_or_else(|| format!("{}: no analysis", ex.outcome.scenario))
}

fn pkas(ex: &Executed) -> Result<Vec<f64>, String> {
    Ok(analysis(ex)?.pka.iter().filter_map(|p| p.pka).collect())
}

fn results(ex: &Executed) -> Result<&Value, String> {
    ex.report
        .as_ref()
        .map(|r| &r.json["results"])
        .ok_or_else(|| "no report".to_string())
}

fn within(got: &[f64], want: &[f64], tol: f64) -> bool {
    got.len() == want.len() && got.iter().zip(want).all(|(g, w)| (g - w).abs() <= tol)
}

fn property<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn strong_acid_equivalence() -> Check {
    let t = Instant::now();
    let ex = exec(&bundled("hcl_titration"), SEED)?;
    let secs = t.elapsed().as_secs_f64();
    let eq = &analysis(&ex)?.equivalence_points;
    ensure!(!eq.is_empty(), "no equivalence point");
    let v = eq[0].volume;
    ensure!((v - 25.0).abs() <= 0.30, "V_eq {v:.4} mL");
    ensure!(secs < 10.0, "took {secs:.2} s");
    Ok(format!("V_eq {v:.3} mL in {secs:.2} s"))
}

fn maleic_pka_recovery() -> Check {
    let cfg = bundled("maleic_titration");
    let noisy = pkas(&exec(&cfg, SEED)?)?;
    ensure!(within(&noisy, &MALEIC_PKA, 0.10), "noisy pKa {noisy:?}");
    let clean = pkas(&exec(&cfg.clone().noiseless(), SEED)?)?;
    ensure!(within(&clean, &MALEIC_PKA, 0.05), "noiseless pKa {clean:?}");

    let t = Instant::now();
    let study = replicate(&cfg, 3, SEED).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let mut mean = [0.0; 2];
    for r in &study.runs {
        let p = pkas(r)?;
        ensure!(within(&p, &MALEIC_PKA, 0.10), "replicate {} pKa {p:?}", r.outcome.seed);
        for (m, v) in mean.iter_mut().zip(&p) {
            *m += v / study.runs.len() as f64;
        }
    }
    for (m, w) in mean.iter().zip(MALEIC_PKA) {
        ensure!(((m - w) / w).abs() <= 0.03, "replicate mean {mean:?}");
    }
    ensure!(secs < 30.0, "3 replicates took {secs:.2} s");
    Ok(format!(
        "noisy {:.3}/{:.3}, noiseless {:.3}/{:.3}, 3-run mean {:.3}/{:.3} in {secs:.2} s",
        noisy[0], noisy[1], clean[0], clean[1], mean[0], mean[1]
    ))
}

fn derivative_peaks() -> Check {
    let count = |name: &str| -> Result<Vec<f64>, String> {
        let ex = exec(&bundled(name), SEED)?;
        Ok(analysis(&ex)?.equivalence_points.iter().map(|e| e.volume).collect())
    };
    let maleic = count("maleic_titration")?;
    ensure!(maleic.len() == 2, "maleic peaks {maleic:?}");
    ensure!(maleic[1] - maleic[0] >= 20.0, "maleic peaks {maleic:?}");
    let hcl = count("hcl_titration")?;
    ensure!(hcl.len() == 1, "HCl peaks {hcl:?}");
    let acetic = count("acetic_titration")?;
    ensure!(acetic.len() == 1, "acetic peaks {acetic:?}");
    Ok(format!("maleic {:.2} and {:.2} mL, HCl 1, acetic 1", maleic[0], maleic[1]))
}

fn weak_acid_half_equivalence() -> Check {
    let ex = exec(&bundled("acetic_titration").noiseless(), SEED)?;
    let p = pkas(&ex)?;
    ensure!(within(&p, &[ACETIC_PKA], 0.05), "pKa {p:?}");
    let ph = analysis(&ex)?.equivalence_points[0].ph;
    ensure!(ph > 7.5 && ph < 9.5, "pH_eq {ph:.3}");
    Ok(format!("pKa {:.3}, pH_eq {ph:.3}", p[0]))
}

fn replicate_spread() -> Check {
    let study = replicate(&bundled("hcl_titration"), 3, SEED).map_err(|e| e.to_string())?;
    let s = &study.summary;
    ensure!(
        (0.005..=0.15).contains(&s.plateau_mean),
        "plateau sigma {:.4}",
        s.plateau_mean
    );
    ensure!(
        s.transition_max >= 5.0 * s.plateau_max,
        "transition max {:.4} vs plateau max {:.4}",
        s.transition_max,
        s.plateau_max
    );
    ensure!(
        (s.transition_max_volume - 25.0).abs() <= 2.0,
        "transition max at {:.2} mL",
        s.transition_max_volume
    );
    Ok(format!(
        "plateau sigma {:.4} (max {:.4}), transition max {:.4} at {:.2} mL",
        s.plateau_mean, s.plateau_max, s.transition_max, s.transition_max_volume
    ))
}

fn fusion_suite() -> Check {
    use fusion_props as f;
    let n = 1000;
    let t = Instant::now();
    property(n, f::channels(), f::weights_normalize)?;
    property(n, f::channels(), f::fused_value_is_convex)?;
    property(n, f::channels(), f::gating_is_idempotent)?;
    property(n, f::pull_args(), f::raising_confidence_pulls_toward_channel)?;
    property(n, f::inconsistency_args(), f::no_operation_with_quantity_zeroes)?;
    property(n, f::attenuation_args(), f::overlapping_anomaly_attenuates)?;
    property(n, f::empty_set_args(), f::empty_set_is_null)?;
    property(n, f::record_args(), f::record_invariants)?;
    let secs = t.elapsed().as_secs_f64();
    ensure!(secs < 5.0, "took {secs:.2} s");
    Ok(format!("8 properties x {n} cases in {secs:.2} s"))
}

fn controller_bookkeeping() -> Check {
    property(1000, controller_props::schedule(), controller_props::bookkeeping_and_phase_rules)?;
    let cfg = bundled("hcl_titration");
    let jitter = cfg.plant.droplet.jitter;
    let nominal = cfg.plant.droplet.volume_ml;
    let mut worst: f64 = 0.0;
    for seed in SEED..SEED + 5 {
        let out = exec(&cfg, seed)?.outcome;
        ensure!(out.audio.anomalous == 0, "seed {seed}: anomalous events");
        ensure!(out.audio.expected == out.truth.droplets, "seed {seed}: heard {} of {}", out.audio.expected, out.truth.droplets);
        let bound = 3.0 * jitter * nominal * (out.truth.droplets as f64).sqrt();
        let gap = (out.audio.expected as f64 * nominal - out.truth.dispensed_ml).abs();
        ensure!(gap <= bound, "seed {seed}: audio off by {gap:.4} mL (bound {bound:.4})");
        worst = worst.max(gap / bound);
    }
    Ok(format!("1000 schedules exact; audio gap at most {:.2} of the 3 sigma bound", worst))
}

fn endpoint_rule() -> Check {
    let (target, tolerance, hold) = (12.5, 0.05, 5.0);
    let cfg = bundled("hcl_titration");
    let mut shortest = f64::INFINITY;
    for seed in SEED..SEED + 20 {
        let out = exec(&cfg, seed)?.outcome;
        ensure!(out.accepted(), "seed {seed}: not accepted");
        let stop = out
            .transitions
            .iter()
            .find(|r| r.to.as_str() == "q6_complete")
            .map(|r| r.timestamp)
            .ok_or(format!("seed {seed}: no endpoint"))?;
        let readings: Vec<(f64, f64)> = out
            .process
            .iter()
            .filter(|p| p.t <= stop + 1e-9)
            .filter_map(|p| p.ph.map(|v| (p.t, v)))
            .collect();
        // Held span: back from the stop until the first reading outside the band.
        let first_out = readings.iter().rev().find(|r| (r.1 - target).abs() > tolerance);
        let held_from = match first_out {
            Some(r) => readings.iter().find(|x| x.0 > r.0).map_or(stop, |x| x.0),
            None => readings[0].0,
        };
        let held = stop - held_from;
        ensure!(held >= hold - 1e-9, "seed {seed}: held {held:.2} s before stopping");
        shortest = shortest.min(held);
    }
    Ok(format!("20 seeds, shortest in-band hold before endpoint {shortest:.1} s"))
}

fn fsm_end_to_end() -> Check {
    for name in ScenarioConfig::BUNDLED {
        let ex = exec(&bundled(name), SEED)?;
        let m = &ex.compiled.plan.state_machine;
        let h = &ex.outcome.transitions;
        ensure!(ex.outcome.accepted(), "{name}: not accepted");
        ensure!(h.first().is_some_and(|r| r.from == m.initial), "{name}: does not start at q0");
        ensure!(h.iter().all(|r| m.next(&r.from, &r.symbol) == Some(&r.to)), "{name}: illegal edge");
        let end = replay(m, h.iter().map(|r| &r.symbol)).map_err(|e| e.to_string())?;
        ensure!(m.accepting.contains(&end), "{name}: replay ends at {end}");
    }

    let mut cfg = bundled("hcl_titration");
    cfg.enable_fault("droplet_failure").map_err(|e| e.to_string())?;
    let ex = exec(&cfg, SEED)?;
    let out = &ex.outcome;
    let reset = out.phase_log.iter().any(|p| p.to == Phase::Reset);
    let handled = (out.accepted() && reset) || ex.exit_code() == 3;
    ensure!(handled, "droplet failure neither recovered through Reset nor escalated");
    let stored: Vec<(String, f64)> = out
        .datastore
        .anomalies()
        .flat_map(|r| r.anomalies.iter().map(move |a| (a.clone(), r.timestamp)))
        .collect();
    ensure!(!stored.is_empty(), "no anomaly in the datastore");
    let report = ex.report.as_ref().ok_or("no report")?;
    let audit = report.json["anomaly_records"].as_array().ok_or("no anomaly module")?;
    for (code, ts) in &stored {
        let listed = audit
            .iter()
            .any(|a| a["code"] == code.as_str() && a["timestamp"].as_f64().is_some_and(|t| (t - ts).abs() < 1e-6));
        ensure!(listed, "{code} at {ts} missing from the report");
    }
    let how = if out.accepted() { "recovered via Reset" } else { "escalated" };
    Ok(format!("5 scenarios replay to acceptance; droplet failure {how}, {} anomalies audited", stored.len()))
}

fn edta_endpoint() -> Check {
    let ex = exec(&bundled("edta_complexometric"), SEED)?;
    let r = results(&ex)?;
    let v = r["transition_volume_ml"].as_f64().ok_or("no transition volume")?;
    let c = r["computed_concentration_m"].as_f64().ok_or("no concentration")?;
    ensure!((v - 2.50).abs() <= 0.05, "transition at {v} mL");
    ensure!(((c - 0.0100) / 0.0100).abs() <= 0.05, "Ca {c} M");
    Ok(format!("transition {v:.4} mL, Ca {c:.4} M"))
}

fn solid_weighing() -> Check {
    let cfg = bundled("nacl_weighing");
    let (mut errors, mut ok) = (Vec::new(), 0);
    for seed in SEED..SEED + 10 {
        let ex = exec(&cfg, seed)?;
        let r = results(&ex)?;
        errors.push(r["error_g"].as_f64().ok_or("no error_g")?.abs());
        ok += usize::from(ex.outcome.accepted() && r["success"] == true);
    }
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    ensure!(mean <= 0.12, "mean |error| {mean:.4} g");
    ensure!(ok as f64 >= 0.95 * errors.len() as f64, "{ok}/10 succeeded");
    Ok(format!("mean |error| {mean:.4} g, {ok}/10 succeeded"))
}

fn determinism() -> Check {
    let tmp = TempDir::new().map_err(|e| e.to_string())?;
    for name in ["hcl_titration", "nacl_weighing"] {
        let cfg = bundled(name);
        let dirs = [tmp.path().join(format!("{name}_a")), tmp.path().join(format!("{name}_b"))];
        for d in &dirs {
            run(&cfg, Some(SEED), d, Format::Both).map_err(|e| e.to_string())?;
        }
        for f in ["datastore.jsonl", "report.json"] {
            let a = fs::read(dirs[0].join(f)).map_err(|e| e.to_string())?;
            let b = fs::read(dirs[1].join(f)).map_err(|e| e.to_string())?;
            ensure!(!a.is_empty() && a == b, "{name}/{f} differs");
        }
    }
    Ok("hcl and nacl datastore.jsonl and report.json byte-identical".into())
}

fn report_completeness() -> Check {
    let tmp = TempDir::new().map_err(|e| e.to_string())?;
    let mut want: Vec<&str> = REPORT_KEYS.to_vec();
    want.sort_unstable();
    for name in TITRATIONS {
        let dir = tmp.path().join(name);
        run(&bundled(name), Some(SEED), &dir, Format::Both).map_err(|e| e.to_string())?;
        let text = fs::read_to_string(dir.join("report.json")).map_err(|e| e.to_string())?;
        let json: Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        let mut keys: Vec<&str> = json.as_object().ok_or("report is not an object")?.keys().map(|k| k.as_str()).collect();
        keys.sort_unstable();
        ensure!(keys == want, "{name}: keys {keys:?}");
        for c in CHARTS {
            let len = fs::metadata(dir.join(c)).map(|m| m.len()).unwrap_or(0);
            ensure!(len > 0, "{name}: {c} missing");
        }
    }
    Ok("11 modules and 4 charts for each of 4 titrations".into())
}

fn main() -> ExitCode {
    let checks: [Criterion; 13] = [
        ("strong-acid equivalence", strong_acid_equivalence),
        ("maleic pKa recovery", maleic_pka_recovery),
        ("derivative peaks", derivative_peaks),
        ("weak-acid half-equivalence", weak_acid_half_equivalence),
        ("replicate std-dev structure", replicate_spread),
        ("fusion suite", fusion_suite),
        ("controller bookkeeping", controller_bookkeeping),
        ("endpoint rule", endpoint_rule),
        ("FSM end-to-end", fsm_end_to_end),
        ("EDTA endpoint", edta_endpoint),
        ("solid weighing", solid_weighing),
        ("determinism", determinism),
        ("report completeness", report_completeness),
    ];
    let mut failed = 0;
    for (i, (name, f)) in checks.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
