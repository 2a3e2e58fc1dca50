#![allow(dead_code)]

use csiscope_core::{Bandwidth, ComplexSample, CsiFrame, FrameHeader, MacAddr, SubcarrierOrder};
use proptest::prelude::*;

pub fn arb_bandwidth() -> impl Strategy<Value = Bandwidth> {
    prop_oneof![Just(Bandwidth::Mhz20), Just(Bandwidth::Mhz40), Just(Bandwidth::Mhz80)]
}

/// A valid frame whose samples are integral, so the i16 wire encoding is
/// lossless.
pub fn arb_wire_frame() -> impl Strategy<Value = CsiFrame> {
    arb_bandwidth().prop_flat_map(|bw| {
        let n = bw.subcarriers();
        (
            any::<u64>(),
            any::<[u8; 6]>(),
            any::<u16>(),
            -120i16..=0,
            prop::collection::vec((any::<i16>(), any::<i16>()), n),
        )
            .prop_map(move |(ts, mac, seq, rssi, samples)| CsiFrame {
                header: FrameHeader {
                    timestamp_us: ts,
                    source_mac: MacAddr(mac),
                    seq,
                    rssi_dbm: rssi,
                    bandwidth: bw,
                    subcarrier_order: SubcarrierOrder::FftOrder,
                },
                csi: samples
                    .into_iter()
                    .map(|(re, im)| ComplexSample::new(re as f64, im as f64))
                    .collect(),
            })
    })
}

/// A valid frame with arbitrary float samples.
pub fn arb_float_frame() -> impl Strategy<Value = CsiFrame> {
    (arb_bandwidth(), any::<u64>()).prop_flat_map(|(bw, seed)| {
        let n = bw.subcarriers();
        (-120i16..=0, prop::collection::vec((-1e4f64..1e4, -1e4f64..1e4), n)).prop_map(move |(rssi, samples)| {
            CsiFrame {
                header: FrameHeader {
                    timestamp_us: seed >> 12,
                    source_mac: MacAddr([2, 0, 0, 0, 0, (seed & 0xff) as u8]),
                    seq: (seed & 0xffff) as u16,
                    rssi_dbm: rssi,
                    bandwidth: bw,
                    subcarrier_order: SubcarrierOrder::FftOrder,
                },
                csi: samples.into_iter().map(|(re, im)| ComplexSample::new(re, im)).collect(),
            }
        })
    })
}

pub fn frames_bit_equal(a: &CsiFrame, b: &CsiFrame) -> bool {
    a.header == b.header
        && a.csi.len() == b.csi.len()
        && a.csi
            .iter()
            .zip(&b.csi)
            .all(|(x, y)| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits())
}
