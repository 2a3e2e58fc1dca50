#![allow(dead_code)]

pub mod transcript;

use csiscope_core::pipeline::{ChainConfig, ChainOutput, Pipeline, PipelineState};
use csiscope_core::synth::{generate_synthetic_frame, SynthProfile};
use csiscope_core::{CsiFrame, ProcessedFrame};

pub fn profile(name: &str) -> SynthProfile {
    SynthProfile::builtin(name).unwrap()
}

/// `count` frames of `name`, stamped from `start_us` at the profile rate.
pub fn synth_frames(name: &str, count: u64, start_us: u64) -> Vec<CsiFrame> {
    let p = profile(name);
    (0..count)
        .map(|i| generate_synthetic_frame(&p, p.frame_time_us(start_us, i)))
        .collect()
}

pub fn processed(frames: Vec<CsiFrame>, chain: &ChainConfig) -> Vec<ProcessedFrame> {
    let mut pipe = Pipeline::default();
    let mut state = PipelineState::default();
    frames
        .into_iter()
        .filter_map(|f| match pipe.run_chain(f, chain, &mut state).unwrap() {
            ChainOutput::Processed(p) => Some(p),
            ChainOutput::Dropped { .. } => None,
        })
        .collect()
}

pub fn synth_processed(name: &str, count: u64) -> Vec<ProcessedFrame> {
    processed(
        synth_frames(name, count, 1_700_000_000_000_000),
        &ChainConfig::default_chain(),
    )
}

/// Hand-built classic pcap, independent of the crate's writer.
pub struct PcapBytes {
    pub bytes: Vec<u8>,
    big_endian: bool,
    nanos: bool,
}

impl PcapBytes {
    pub fn new(linktype: u32, big_endian: bool, nanos: bool) -> Self {
        let mut p = Self {
            bytes: Vec::new(),
            big_endian,
            nanos,
        };
        p.u32(if nanos { 0xa1b2_3c4d } else { 0xa1b2_c3d4 });
        p.u16(2);
        p.u16(4);
        p.u32(0);
        p.u32(0);
        p.u32(65535);
        p.u32(linktype);
        p
    }

    fn u32(&mut self, v: u32) {
        let b = if self.big_endian {
            v.to_be_bytes()
        } else {
            v.to_le_bytes()
        };
        self.bytes.extend_from_slice(&b);
    }

    fn u16(&mut self, v: u16) {
        let b = if self.big_endian {
            v.to_be_bytes()
        } else {
            v.to_le_bytes()
        };
        self.bytes.extend_from_slice(&b);
    }

    pub fn record(&mut self, ts_us: u64, data: &[u8]) {
        self.u32((ts_us / 1_000_000) as u32);
        let frac = (ts_us % 1_000_000) as u32;
        self.u32(if self.nanos { frac * 1000 } else { frac });
        self.u32(data.len() as u32);
        self.u32(data.len() as u32);
        self.bytes.extend_from_slice(data);
    }
}

/// IPv4/UDP packet without link framing. The checksum is left zero, which
/// the reader does not verify.
pub fn ipv4_udp(dst_port: u16, payload: &[u8]) -> Vec<u8> {
    let total = 20 + 8 + payload.len();
    let mut p = vec![0x45, 0, (total >> 8) as u8, total as u8, 0, 1, 0x40, 0, 64, 17, 0, 0];
    p.extend_from_slice(&[192, 168, 1, 2, 192, 168, 1, 255]);
    p.extend_from_slice(&5500u16.to_be_bytes());
    p.extend_from_slice(&dst_port.to_be_bytes());
    p.extend_from_slice(&((8 + payload.len()) as u16).to_be_bytes());
    p.extend_from_slice(&[0, 0]);
    p.extend_from_slice(payload);
    p
}

pub fn ethernet(ethertype: u16, vlan: bool, ip: &[u8]) -> Vec<u8> {
    let mut e = vec![0xff; 6];
    e.extend_from_slice(&[0x02, 0, 0, 0, 0, 9]);
    if vlan {
        e.extend_from_slice(&[0x81, 0x00, 0x00, 0x05]);
    }
    e.extend_from_slice(&ethertype.to_be_bytes());
    e.extend_from_slice(ip);
    e
}
