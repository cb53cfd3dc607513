use labloop::controller::{Controller, ControllerConfig, Observation, Phase};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub const LEGAL: [(Phase, Phase); 5] = [
    (Phase::Motion, Phase::Waiting),
    (Phase::Waiting, Phase::Motion),
    (Phase::Motion, Phase::Reset),
    (Phase::Waiting, Phase::Reset),
    (Phase::Reset, Phase::Motion),
];

#[derive(Debug, Clone)]
pub struct Step {
    measured: Option<f64>,
    stable: bool,
    resume: bool,
    hold: bool,
    anomaly: bool,
    droplet: bool,
}

pub fn step() -> impl Strategy<Value = Step> {
    (
        prop::option::of(0.0f64..14.0),
        any::<bool>(),
        prop::bool::weighted(0.4),
        prop::bool::weighted(0.1),
        prop::bool::weighted(0.03),
        prop::bool::weighted(0.1),
    )
        .prop_map(|(measured, stable, resume, hold, anomaly, droplet)| Step {
            measured,
            stable,
            resume,
            hold,
            anomaly,
            droplet,
        })
}

pub fn observation(s: &Step, dt: f64) -> Observation {
    Observation {
        measured: s.measured,
        stable: s.stable,
        anomaly: s.anomaly.then(|| "droplet_failure".to_string()),
        resume: s.resume,
        hold: s.hold,
        droplet_confirmed: s.droplet,
        dt,
        ..Default::default()
    }
}

pub fn schedule() -> impl Strategy<Value = (Vec<Step>, f64)> {
    (prop::collection::vec(step(), 1..400), 0.05f64..0.5)
}

/// Q̂_stat tracks k × commanded closure exactly through Waiting and Reset
/// cycles, and the phase log only uses legal edges.
pub fn bookkeeping_and_phase_rules((steps, dt): (Vec<Step>, f64)) -> Result<(), TestCaseError> {
    let cfg = ControllerConfig::default();
    let k = cfg.k;
    let mut c = Controller::new(cfg);
    c.activate();
    let mut commanded = 0.0;
    for s in &steps {
        let (cmd, _) = c.step(&observation(s, dt));
        commanded += cmd.closure_rate * dt;
        let now = c.phase();
        if now == Phase::Waiting {
            prop_assert_eq!(cmd.closure_rate, 0.0);
        }
        if now == Phase::Reset {
            prop_assert_eq!(cmd.closure_rate, 0.0);
        }
        let (q, g) = c.accumulated();
        let expect = k * commanded;
        prop_assert!((q - expect).abs() <= 1e-12 * expect.abs().max(1e-300));
        prop_assert!((q - k * c.displacement_total()).abs() <= 1e-12 * q.abs().max(1e-300));
        prop_assert_eq!(g, if now == Phase::Reset { 0.0 } else { 0.9 });
    }
    for p in c.phase_log().iter().skip(1) {
        let legal = LEGAL.contains(&(p.from, p.to)) || (p.to == Phase::Reset && p.reason == "escalated");
        prop_assert!(legal, "illegal edge {:?} -> {:?}", p.from, p.to);
    }
    Ok(())
}
