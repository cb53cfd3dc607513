#[path = "properties/controller.rs"]
mod props;

use labloop::chem::{AcidKind, AcidSpec};
use labloop::controller::{map_displacement, Controller, ControllerConfig, ControllerError, Observation, Phase};
use labloop::plant::{Plant, PlantConfig, Vessel, DROP_VOLUME_ML, D_DROP_MM};
use proptest::prelude::*;

#[test]
fn map_displacement_examples() {
    let k = DROP_VOLUME_ML / D_DROP_MM;
    assert!((map_displacement(0.000415625, k).unwrap() - 0.046875).abs() < 1e-15);
    assert_eq!(map_displacement(0.0, k).unwrap(), 0.0);
    assert!(matches!(
        map_displacement(-1e-9, k),
        Err(ControllerError::NegativeDisplacement(_))
    ));
}

#[test]
fn fresh_controller_reports_baseline() {
    let c = Controller::new(ControllerConfig::default());
    assert_eq!(c.accumulated(), (0.0, 0.9));
}

#[test]
fn anomaly_in_motion_resets_and_keeps_estimate() {
    let mut c = Controller::new(ControllerConfig::default());
    c.activate();
    let dt = 0.1;
    let base = Observation {
        measured: Some(3.0),
        stable: true,
        dt,
        ..Default::default()
    };
    for _ in 0..5 {
        c.step(&base);
    }
    let q = c.accumulated().0;
    let (cmd, _) = c.step(&Observation {
        anomaly: Some("event_timeout".into()),
        ..base.clone()
    });
    assert_eq!(c.phase(), Phase::Reset);
    assert_eq!(cmd.closure_rate, 0.0);
    let (cmd, _) = c.step(&base);
    assert!(cmd.retract_rate > 0.0);
    assert_eq!(c.accumulated(), (q, 0.0));
}

#[test]
fn repeated_anomalies_escalate_after_three_retries() {
    let mut c = Controller::new(ControllerConfig::default());
    c.activate();
    let dt = 0.1;
    let mut escalations = 0;
    for _ in 0..4 {
        let (_, rec) = c.step(&Observation {
            anomaly: Some("event_timeout".into()),
            dt,
            ..Default::default()
        });
        escalations += rec
            .iter()
            .filter(|r| matches!(r, labloop::controller::ControllerRecord::Escalation { .. }))
            .count();
        for _ in 0..20 {
            c.step(&Observation { dt, ..Default::default() });
        }
    }
    assert!(c.is_escalated());
    assert_eq!(escalations, 1);
    assert_eq!(c.retries(), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn bookkeeping_and_phase_rules(args in props::schedule()) {
        props::bookkeeping_and_phase_rules(args)?;
    }

    #[test]
    fn linear_map(d in 0.0f64..1.0) {
        let k = DROP_VOLUME_ML / D_DROP_MM;
        let a = map_displacement(d, k).unwrap();
        let b = map_displacement(2.0 * d, k).unwrap();
        prop_assert!((b - 2.0 * a).abs() <= 1e-15 * b.abs().max(1e-300));
    }

    #[test]
    fn target_bracketing_noiseless(target in 2.0f64..11.5, seed in 0u64..1000) {
        let acid = AcidSpec {
            name: "HCl".into(),
            kind: AcidKind::Strong,
            pka: vec![],
            concentration: 0.1,
            volume: 0.025,
        };
        let plant_cfg = PlantConfig {
            ph_noise_sigma: 0.0,
            tau: 1e-3,
            droplet: labloop::plant::DropletConfig { jitter: 0.0, ..Default::default() },
            ..Default::default()
        };
        let mut plant = Plant::new(plant_cfg, Vessel::acid_base(&acid), 0.1, seed).unwrap();
        let cfg = ControllerConfig { target, epsilon: 0.01, rate_of_change_limit: f64::INFINITY, ..Default::default() };
        let eps = cfg.epsilon;
        let mut c = Controller::new(cfg);
        c.activate();
        let dt = 0.1;
        let mut cmd = Default::default();
        let mut prev_ph = plant.equilibrium_ph();
        for _ in 0..100_000 {
            let before = plant.equilibrium_ph();
            let f = plant.tick(dt, &cmd).unwrap();
            if !f.events.is_empty() {
                prev_ph = before;
            }
            let (next, _) = c.step(&Observation { measured: Some(plant.equilibrium_ph()), stable: true, dt, ..Default::default() });
            cmd = next;
            if c.is_finished() {
                break;
            }
        }
        prop_assert!(c.is_finished());
        let fin = plant.equilibrium_ph();
        let one_drop = fin - prev_ph;
        prop_assert!(fin >= target - eps);
        prop_assert!(fin - target <= eps + one_drop + 1e-12, "final {fin} target {target} drop {one_drop}");
    }
}
