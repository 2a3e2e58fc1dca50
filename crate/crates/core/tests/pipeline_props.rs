mod common;

use std::collections::BTreeSet;
use std::f64::consts::PI;

use common::{arb_float_frame, arb_wire_frame};
use csiscope_core::pipeline::ops::{
    compensate_agc, default_null_set, extract_amplitude_phase, filter_mac, null_guard_subcarriers, reorder_subcarriers,
    smooth_rssi, to_fft, unwrap_phase,
};
use csiscope_core::pipeline::{ChainConfig, ChainOutput, Pipeline, PipelineState, PluginInstance, SmoothingState};
use csiscope_core::{MacAddr, PolarFrame, SubcarrierOrder};
use proptest::prelude::*;

fn linear_polar(f: &csiscope_core::CsiFrame) -> PolarFrame {
    extract_amplitude_phase(&reorder_subcarriers(f).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn agc_power_identity(f in arb_float_frame(), rssi in -120.0f64..0.0) {
        let p = extract_amplitude_phase(&f);
        prop_assume!(p.amplitudes.iter().any(|a| *a > 0.0));
        let q = compensate_agc(&p, rssi).unwrap();
        let power: f64 = q.amplitudes.iter().map(|a| a * a).sum();
        let target = 10f64.powf(rssi / 10.0);
        prop_assert!(((power - target) / target).abs() <= 1e-9, "{power} vs {target}");
        prop_assert_eq!(&q.phases, &p.phases);
    }

    #[test]
    fn unwrap_steps_and_turns(f in arb_float_frame()) {
        let p = linear_polar(&f);
        let q = unwrap_phase(&p).unwrap();
        prop_assert_eq!(q.phases[0], p.phases[0]);
        for w in q.phases.windows(2) {
            let d = w[1] - w[0];
            prop_assert!(d > -PI && d <= PI, "step {d}");
        }
        for (o, i) in q.phases.iter().zip(&p.phases) {
            let turns = (o - i) / (2.0 * PI);
            prop_assert!((o - i - turns.round() * 2.0 * PI).abs() <= 1e-9);
        }
    }

    #[test]
    fn reorder_is_a_bijection(f in arb_wire_frame()) {
        let lin = reorder_subcarriers(&f).unwrap();
        prop_assert_eq!(lin.header.subcarrier_order, SubcarrierOrder::LinearOrder);
        // oracle: linear position k holds FFT slot (k + N/2) mod N
        let n = f.n();
        for k in 0..n {
            prop_assert_eq!(lin.csi[k], f.csi[(k + n / 2) % n]);
        }
        prop_assert_eq!(to_fft(&lin.csi), f.csi.clone());
    }

    #[test]
    fn null_guard_is_idempotent(f in arb_float_frame()) {
        let p = linear_polar(&f);
        let set = default_null_set(p.header.bandwidth);
        let once = null_guard_subcarriers(&p, &set).unwrap();
        let twice = null_guard_subcarriers(&once, &set).unwrap();
        prop_assert_eq!(&once, &twice);
        let half = (p.n() / 2) as i32;
        for (pos, (a, b)) in once.amplitudes.iter().zip(&p.amplitudes).enumerate() {
            if set.contains(&(pos as i32 - half)) {
                prop_assert_eq!(*a, 0.0);
            } else {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn polar_reconstruction(f in arb_float_frame()) {
        let p = extract_amplitude_phase(&f);
        for ((a, ph), h) in p.amplitudes.iter().zip(&p.phases).zip(&f.csi) {
            prop_assert!(*a >= 0.0);
            prop_assert!(*ph > -PI && *ph <= PI);
            prop_assert!((a * ph.cos() - h.re).abs() <= 1e-9);
            prop_assert!((a * ph.sin() - h.im).abs() <= 1e-9);
        }
    }

    #[test]
    fn smoothing_stays_within_seen_range(
        xs in prop::collection::vec(-120.0f64..0.0, 1..50),
        alpha in 0.001f64..=1.0,
    ) {
        let mut st = SmoothingState::default();
        let mac = MacAddr([1; 6]);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for x in xs {
            lo = lo.min(x);
            hi = hi.max(x);
            let s = smooth_rssi(&mut st, mac, x, alpha).unwrap();
            prop_assert!(s >= lo - 1e-12 && s <= hi + 1e-12);
        }
    }

    #[test]
    fn mac_filter_is_idempotent(mac in any::<[u8; 6]>(), allow in prop::collection::btree_set(any::<[u8; 6]>(), 0..3)) {
        let allow: BTreeSet<MacAddr> = allow.into_iter().map(MacAddr).collect();
        let m = MacAddr(mac);
        let once = filter_mac(&m, &allow);
        prop_assert_eq!(once, filter_mac(&m, &allow));
        prop_assert_eq!(once, allow.is_empty() || allow.contains(&m));
    }

    #[test]
    fn equal_priorities_order_by_id(ids in prop::collection::btree_set("[a-z]{1,6}", 1..6), prio in any::<i64>()) {
        let mut cfg = ChainConfig { version: 0, plugins: vec![] };
        for id in ids.iter().rev() {
            let mut p = PluginInstance::new(id, prio, true);
            p.kind = Some("extract".into());
            cfg.plugins.push(p);
        }
        let order: Vec<&str> = cfg.execution_order().iter().map(|p| p.id.as_str()).collect();
        let expected: Vec<&str> = ids.iter().map(String::as_str).collect();
        prop_assert_eq!(order, expected);
    }
}

#[test]
fn chain_is_deterministic() {
    let mut cfg = ChainConfig::default_chain();
    for p in &mut cfg.plugins {
        if p.id == "rssi-smooth" {
            p.enabled = true;
        }
    }
    let run = || {
        let mut pipe = Pipeline::default();
        let mut state = PipelineState::default();
        let profile = csiscope_core::synth::SynthProfile::builtin("pattern-b").unwrap();
        csiscope_core::synth::SynthStream::new(profile, 1_000_000)
            .unwrap()
            .take(200)
            .map(|f| match pipe.run_chain(f, &cfg, &mut state).unwrap() {
                ChainOutput::Processed(p) => p,
                ChainOutput::Dropped { by } => panic!("dropped by {by}"),
            })
            .collect::<Vec<_>>()
    };
    let (a, b) = (run(), run());
    for (x, y) in a.iter().zip(&b) {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&x.polar.amplitudes), bits(&y.polar.amplitudes));
        assert_eq!(bits(&x.polar.phases), bits(&y.polar.phases));
        assert_eq!(x.polar.rssi_smoothed_dbm.to_bits(), y.polar.rssi_smoothed_dbm.to_bits());
    }
}
