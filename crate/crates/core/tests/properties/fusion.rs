use labloop::fusion::{
    fuse, fuse_record, gate_confidence, ChannelId, ExecutionAnomaly, FusionConfig, GatedChannel, ObservationChannel,
    DATA_QUALITY,
};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

const IDS: [ChannelId; 4] = [ChannelId::Audio, ChannelId::Stat, ChannelId::Visual, ChannelId::Sensor];

pub type Outcome = Result<(), TestCaseError>;

pub fn channels() -> impl Strategy<Value = Vec<GatedChannel>> {
    prop::collection::vec((-10.0f64..10.0, 0.0f64..=1.0), 1..=4).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (value, confidence))| GatedChannel {
                id: IDS[i],
                value,
                confidence,
            })
            .collect()
    })
}

pub fn cfg() -> FusionConfig {
    FusionConfig::default()
}

pub fn channel(id: ChannelId, value: f64, raw: f64, window: (f64, f64)) -> ObservationChannel {
    ObservationChannel {
        id,
        value,
        confidence_raw: raw,
        timestamp: window.1,
        window,
    }
}

pub fn weights_normalize(chs: Vec<GatedChannel>) -> Outcome {
    let f = fuse(&chs, &cfg());
    if !f.weights.is_empty() {
        let s: f64 = f.weights.iter().map(|w| w.1).sum();
        prop_assert!((s - 1.0).abs() <= 1e-12);
    }
    Ok(())
}

pub fn fused_value_is_convex(chs: Vec<GatedChannel>) -> Outcome {
    let c = cfg();
    let f = fuse(&chs, &c);
    let inc: Vec<&GatedChannel> = chs.iter().filter(|g| g.confidence >= c.threshold).collect();
    match f.value {
        None => {
            prop_assert!(inc.is_empty());
            prop_assert_eq!(f.confidence, 0.0);
            prop_assert!(f.anomalies.contains(&DATA_QUALITY.to_string()));
        }
        Some(v) => {
            let lo = inc.iter().map(|g| g.value).fold(f64::INFINITY, f64::min);
            let hi = inc.iter().map(|g| g.value).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo && v <= hi);
            let mean = inc.iter().map(|g| g.confidence).sum::<f64>() / inc.len() as f64;
            prop_assert!((f.confidence - mean).abs() <= 1e-12);
            prop_assert!(f.confidence > 0.0);
        }
    }
    Ok(())
}

pub fn gating_is_idempotent(chs: Vec<GatedChannel>) -> Outcome {
    let c = cfg();
    let full = fuse(&chs, &c);
    let kept: Vec<GatedChannel> = chs.iter().filter(|g| g.confidence >= c.threshold).cloned().collect();
    let pruned = fuse(&kept, &c);
    prop_assert_eq!(full.value, pruned.value);
    prop_assert_eq!(full.confidence, pruned.confidence);
    Ok(())
}

pub fn pull_args() -> impl Strategy<Value = (Vec<GatedChannel>, usize, f64, f64)> {
    (channels(), 0usize..4, 0.6f64..0.99, 0.001f64..0.4)
}

pub fn raising_confidence_pulls_toward_channel((chs, pick, g0, bump): (Vec<GatedChannel>, usize, f64, f64)) -> Outcome {
    let c = cfg();
    let i = pick % chs.len();
    let mut a = chs.clone();
    a[i].confidence = g0;
    let mut b = a.clone();
    b[i].confidence = (g0 + bump).min(1.0);
    prop_assume!(b[i].confidence > a[i].confidence);
    let va = fuse(&a, &c).value.unwrap();
    let vb = fuse(&b, &c).value.unwrap();
    let vi = a[i].value;
    if (vi - va).abs() > 1e-9 {
        prop_assert!((vi - vb).abs() < (vi - va).abs());
    }
    Ok(())
}

pub fn inconsistency_args() -> impl Strategy<Value = (f64, f64)> {
    (-5.0f64..5.0, 0.0f64..=1.0)
}

/// A nonzero quantity with no operation in progress zeroes confidence.
pub fn no_operation_with_quantity_zeroes((value, raw): (f64, f64)) -> Outcome {
    prop_assume!(value != 0.0);
    let ch = channel(ChannelId::Stat, value, raw, (0.0, 1.0));
    prop_assert_eq!(gate_confidence(&ch, false, &[], &cfg()), 0.0);
    let z = channel(ChannelId::Stat, 0.0, raw, (0.0, 1.0));
    prop_assert_eq!(gate_confidence(&z, false, &[], &cfg()), raw);
    Ok(())
}

pub fn attenuation_args() -> impl Strategy<Value = (f64, f64, f64, f64)> {
    (0.0f64..=1.0, 0.0f64..100.0, 0.0f64..10.0, 0.0f64..1.0)
}

pub fn overlapping_anomaly_attenuates((raw, lo, span, at): (f64, f64, f64, f64)) -> Outcome {
    let hi = lo + span;
    let ch = channel(ChannelId::Audio, 0.046875, raw, (lo, hi));
    let inside = [ExecutionAnomaly { code: "a".into(), timestamp: lo + at * span }];
    prop_assert!((gate_confidence(&ch, true, &inside, &cfg()) - raw * 0.1).abs() <= 1e-15);
    let after = [ExecutionAnomaly { code: "a".into(), timestamp: hi + 1.0 }];
    prop_assert_eq!(gate_confidence(&ch, true, &after, &cfg()), raw);
    Ok(())
}

pub fn record_args() -> impl Strategy<Value = (Vec<GatedChannel>, bool)> {
    (channels(), any::<bool>())
}

/// Every record either carries a fused value or is flagged for data quality.
pub fn record_invariants((chs, op): (Vec<GatedChannel>, bool)) -> Outcome {
    let obs: Vec<ObservationChannel> = chs
        .iter()
        .map(|g| channel(g.id, g.value, g.confidence, (0.0, 1.0)))
        .collect();
    let r = fuse_record(&obs, "volume", 1.0, "q4_titrating", "t6", op, &[], &cfg());
    prop_assert_eq!(r.value.is_none(), r.confidence == 0.0);
    prop_assert_eq!(r.raw.len(), obs.len());
    if r.value.is_none() {
        prop_assert!(r.anomalies.contains(&DATA_QUALITY.to_string()));
    }
    Ok(())
}

pub fn empty_set_args() -> impl Strategy<Value = (f64, bool)> {
    (0.0f64..1e4, any::<bool>())
}

/// No usable channel: null value, zero confidence, data-quality flag.
pub fn empty_set_is_null((t, op): (f64, bool)) -> Outcome {
    let r = fuse_record(&[], "volume", t, "q4_titrating", "t6", op, &[], &cfg());
    prop_assert_eq!(r.value, None);
    prop_assert_eq!(r.confidence, 0.0);
    prop_assert!(r.anomalies.contains(&DATA_QUALITY.to_string()));
    Ok(())
}
