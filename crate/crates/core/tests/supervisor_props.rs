use std::collections::BTreeSet;

use labloop::fsm::{replay, StateId};
use labloop::plant::{AcousticEvent, DROP_VOLUME_ML};
use labloop::runner::execute;
use labloop::scenario::ScenarioConfig;
use labloop::supervisors::{
    check_timeout, classify_event, detect_endpoint, detect_stability, estimate_audio_quantity, AudioConfig,
    AudioSupervisor, EndpointConfig, EventClass, StabilityConfig, EVENT_TIMEOUT,
};
use proptest::prelude::*;

/// Readings every `dt` seconds starting at t = 0.
fn window() -> impl Strategy<Value = Vec<(f64, f64)>> {
    (0.05f64..0.5, prop::collection::vec(12.3f64..12.7, 1..120))
        .prop_map(|(dt, ys)| ys.into_iter().enumerate().map(|(i, y)| (i as f64 * dt, y)).collect())
}

fn event() -> impl Strategy<Value = AcousticEvent> {
    (0.0f64..1e4, 0.0f64..2.0, 0.0f64..1.0, 0.0f64..0.1).prop_map(|(timestamp, amplitude, clarity, true_volume)| {
        AcousticEvent {
            timestamp,
            amplitude,
            clarity,
            true_volume,
        }
    })
}

fn states() -> Vec<StateId> {
    ["q0", "q3_ready", "q4_titrating", "q5_waiting_stable", "q6_complete"]
        .into_iter()
        .map(StateId::new)
        .collect()
}

fn anticipating() -> BTreeSet<StateId> {
    [StateId::new("q4_titrating")].into_iter().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn endpoint_is_monotone_in_tolerance(w in window(), t1 in 0.0f64..0.3, extra in 0.0f64..0.3, hold in 0.5f64..8.0) {
        let a = EndpointConfig { tolerance: t1, hold_s: hold, ..Default::default() };
        let b = EndpointConfig { tolerance: t1 + extra, ..a.clone() };
        if detect_endpoint(&w, &a) {
            prop_assert!(detect_endpoint(&w, &b));
        }
    }

    #[test]
    fn stability_is_monotone_in_delta(w in window(), d1 in 0.0f64..0.3, extra in 0.0f64..0.3) {
        let a = StabilityConfig { window_s: 1.0, max_delta: d1 };
        let b = StabilityConfig { max_delta: d1 + extra, ..a.clone() };
        if detect_stability(&w, &a) {
            prop_assert!(detect_stability(&w, &b));
        }
    }

    #[test]
    fn endpoint_needs_full_hold(w in window(), hold in 0.5f64..8.0) {
        let span = w.last().unwrap().0 - w[0].0;
        let cfg = EndpointConfig { tolerance: 1.0, hold_s: hold, ..Default::default() };
        prop_assert_eq!(detect_endpoint(&w, &cfg), span >= hold - 1e-9);
    }

    #[test]
    fn classification_is_pure(e in event(), other in event(), q in 0usize..5, dispensing in any::<bool>()) {
        let q = &states()[q];
        let ant = anticipating();
        let c = classify_event(&e, q, dispensing, &ant);
        prop_assert_eq!(c, classify_event(&e, q, dispensing, &ant));
        prop_assert_eq!(c, classify_event(&other, q, dispensing, &ant));
        let expected = dispensing && q.as_str() == "q4_titrating";
        prop_assert_eq!(c == EventClass::Expected, expected);
    }

    #[test]
    fn timeout_rule(last in 0.0f64..100.0, gap in 0.0f64..30.0, limit in 0.1f64..20.0, dispensing in any::<bool>()) {
        let got = check_timeout(last, last + gap, limit, dispensing);
        let fire = dispensing && (last + gap) - last > limit;
        prop_assert_eq!(got, fire.then_some(EVENT_TIMEOUT));
    }

    #[test]
    fn audio_total_is_count_times_nominal(batches in prop::collection::vec(prop::collection::vec(event(), 0..6), 0..60), stray in 0usize..4) {
        let mut sup = AudioSupervisor::new(AudioConfig::default(), anticipating());
        let q4 = StateId::new("q4_titrating");
        let q5 = StateId::new("q5_waiting_stable");
        let mut n = 0u64;
        for (i, b) in batches.iter().enumerate() {
            let mut b = b.clone();
            for (j, e) in b.iter_mut().enumerate() {
                e.timestamp = i as f64 + j as f64 * 0.01;
            }
            // Every few ticks the events arrive outside a dispensing state.
            if i % 5 == stray {
                sup.step(i as f64, &b, &q5, false);
            } else {
                sup.step(i as f64, &b, &q4, true);
                n += b.len() as u64;
            }
        }
        prop_assert_eq!(sup.expected_count(), n);
        prop_assert_eq!(sup.total(), n as f64 * DROP_VOLUME_ML);
    }

    #[test]
    fn audio_estimate(es in prop::collection::vec(event(), 0..200), baseline in 0.0f64..1.0) {
        let (q, c) = estimate_audio_quantity(&es, DROP_VOLUME_ML, baseline);
        prop_assert_eq!(q, es.len() as f64 * DROP_VOLUME_ML);
        if es.is_empty() {
            prop_assert_eq!(c, baseline);
        } else {
            let mean = es.iter().map(|e| e.clarity).sum::<f64>() / es.len() as f64;
            prop_assert!((c - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn hundred_drops_by_ear() {
    let es = vec![
        AcousticEvent {
            timestamp: 0.0,
            amplitude: 1.0,
            clarity: 0.9,
            true_volume: 0.05,
        };
        100
    ];
    let (q, c) = estimate_audio_quantity(&es, DROP_VOLUME_ML, 0.8);
    assert!((q - 4.6875).abs() < 1e-12);
    assert!((c - 0.9).abs() < 1e-12);
}

#[test]
fn fault_free_runs_fire_only_known_symbols() {
    for name in ["hcl_titration", "edta_complexometric", "nacl_weighing"] {
        let cfg = ScenarioConfig::bundled(name).unwrap();
        let ex = execute(&cfg, 42).unwrap();
        let out = &ex.outcome;
        let m = &ex.compiled.plan.state_machine;
        assert!(out.accepted(), "{name}");
        assert_eq!(out.audio.anomalous, 0, "{name}");
        assert_eq!(out.transitions.first().unwrap().from, m.initial);
        for w in out.transitions.windows(2) {
            assert_eq!(w[0].to, w[1].from);
        }
        for r in &out.transitions {
            assert!(m.has_symbol(&r.symbol), "{name}: {}", r.symbol);
            assert_eq!(m.next(&r.from, &r.symbol), Some(&r.to));
        }
        assert_eq!(replay(m, out.transitions.iter().map(|r| &r.symbol)).unwrap(), out.final_state);
        assert!(m.accepting.contains(&out.final_state));
    }
}
