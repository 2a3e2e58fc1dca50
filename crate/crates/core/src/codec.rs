//! Byte-level frame codecs.
//!
//! WEF1 is the canonical envelope the capture server sends, one frame per UDP
//! datagram, little-endian throughout:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "WEF1"
//!      4     1  version (1)
//!      5     1  rssi, i8 dBm
//!      6     6  source MAC
//!     12     2  seq, u16
//!     14     2  subcarrier count N, u16
//!     16     8  timestamp, u64 microseconds
//!     24   4·N  N × (re i16, im i16)
//! ```
//!
//! The Nexmon-style ingest path reads firmware payloads whose offsets are
//! described by an [`IngestLayout`].

use alloc::vec::Vec;

use crate::model::{
    validate_frame, Bandwidth, ComplexSample, CsiFrame, FrameHeader, MacAddr, SubcarrierOrder, Violation,
};

pub const WEF1_MAGIC: [u8; 4] = *b"WEF1";
pub const WEF1_VERSION: u8 = 1;
pub const WEF1_HEADER_LEN: usize = 24;
pub const DEFAULT_CSI_PORT: u16 = 5500;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("frame failed validation: {0}")]
    InvalidFrame(Violation),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("truncated frame: expected {expected} bytes, got {actual}")]
    TruncatedFrame { expected: usize, actual: usize },
    #[error("field out of range: {0}")]
    BadFieldRange(&'static str),
    #[error("unknown chanspec 0x{chanspec:04x} for {samples} samples")]
    UnknownChanspec { chanspec: u16, samples: usize },
}

/// Length of the WEF1 encoding of an `n`-subcarrier frame.
pub const fn wire_len(n: usize) -> usize {
    WEF1_HEADER_LEN + 4 * n
}

/// Rounds to the nearest i16, saturating at the range ends.
///
/// Samples that already hold integral values in range survive a round trip
/// bit-exactly; anything else is quantized.
pub fn quantize(x: f64) -> i16 {
    let r = libm::round(x);
    if r >= i16::MAX as f64 {
        i16::MAX
    } else if r <= i16::MIN as f64 {
        i16::MIN
    } else {
        r as i16
    }
}

pub fn encode_wire_frame(frame: &CsiFrame) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::with_capacity(wire_len(frame.n()));
    encode_wire_frame_into(frame, &mut out)?;
    Ok(out)
}

/// Appends the WEF1 encoding of `frame` to `out`.
pub fn encode_wire_frame_into(frame: &CsiFrame, out: &mut Vec<u8>) -> Result<(), CodecError> {
    if let Some(v) = validate_frame(frame).violations.first() {
        return Err(CodecError::InvalidFrame(*v));
    }
    let h = &frame.header;
    out.extend_from_slice(&WEF1_MAGIC);
    out.push(WEF1_VERSION);
    out.push(h.rssi_dbm as i8 as u8);
    out.extend_from_slice(&h.source_mac.0);
    out.extend_from_slice(&h.seq.to_le_bytes());
    out.extend_from_slice(&(frame.n() as u16).to_le_bytes());
    out.extend_from_slice(&h.timestamp_us.to_le_bytes());
    for s in &frame.csi {
        out.extend_from_slice(&quantize(s.re).to_le_bytes());
        out.extend_from_slice(&quantize(s.im).to_le_bytes());
    }
    Ok(())
}

pub fn parse_wire_frame(buf: &[u8]) -> Result<CsiFrame, CodecError> {
    if buf.len() < 4 {
        return Err(CodecError::TruncatedFrame {
            expected: WEF1_HEADER_LEN,
            actual: buf.len(),
        });
    }
    if buf[..4] != WEF1_MAGIC {
        return Err(CodecError::BadMagic);
    }
    if buf.len() < WEF1_HEADER_LEN {
        return Err(CodecError::TruncatedFrame {
            expected: WEF1_HEADER_LEN,
            actual: buf.len(),
        });
    }
    if buf[4] != WEF1_VERSION {
        return Err(CodecError::BadFieldRange("version"));
    }
    let rssi_dbm = buf[5] as i8 as i16;
    let source_mac = MacAddr(buf[6..12].try_into().unwrap());
    let seq = u16::from_le_bytes([buf[12], buf[13]]);
    let n = u16::from_le_bytes([buf[14], buf[15]]) as usize;
    let timestamp_us = u64::from_le_bytes(buf[16..24].try_into().unwrap());

    let expected = wire_len(n);
    if buf.len() != expected {
        return Err(CodecError::TruncatedFrame {
            expected,
            actual: buf.len(),
        });
    }
    let bandwidth = Bandwidth::from_subcarriers(n).ok_or(CodecError::BadFieldRange("subcarrier count"))?;
    if !(crate::model::RSSI_MIN_DBM..=crate::model::RSSI_MAX_DBM).contains(&rssi_dbm) {
        return Err(CodecError::BadFieldRange("rssi"));
    }
    let csi = read_i16_pairs(&buf[WEF1_HEADER_LEN..], false);
    Ok(CsiFrame {
        header: FrameHeader {
            timestamp_us,
            source_mac,
            seq,
            rssi_dbm,
            bandwidth,
            subcarrier_order: SubcarrierOrder::FftOrder,
        },
        csi,
    })
}

fn read_i16_pairs(bytes: &[u8], big_endian: bool) -> Vec<ComplexSample> {
    let rd = |b: &[u8]| {
        let pair = [b[0], b[1]];
        if big_endian {
            i16::from_be_bytes(pair)
        } else {
            i16::from_le_bytes(pair)
        }
    };
    bytes
        .chunks_exact(4)
        .map(|c| ComplexSample::new(rd(&c[0..2]) as f64, rd(&c[2..4]) as f64))
        .collect()
}

/// Byte offsets of the fields in a firmware CSI payload.
///
/// The default models the Nexmon layout for BCM43455c0-class chips with
/// interleaved int16 samples:
///
/// ```text
/// 0 u16 magic 0x1111 | 2 i8 rssi | 3 u8 frame control | 4 [u8;6] source MAC
/// 10 u16 seq | 12 u16 core/stream config | 14 u16 chanspec | 16 u16 chip | 18.. samples
/// ```
///
/// Real layouts differ between chips, so every offset can be overridden.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct IngestLayout {
    /// Expected little-endian u16 at `magic_offset`; `None` skips the check.
    pub magic: Option<u16>,
    pub magic_offset: usize,
    pub rssi_offset: usize,
    pub mac_offset: usize,
    pub seq_offset: usize,
    pub chanspec_offset: usize,
    pub csi_offset: usize,
    /// Samples are big-endian int16 when set.
    pub big_endian_samples: bool,
}

impl Default for IngestLayout {
    fn default() -> Self {
        Self {
            magic: Some(0x1111),
            magic_offset: 0,
            rssi_offset: 2,
            mac_offset: 4,
            seq_offset: 10,
            chanspec_offset: 14,
            csi_offset: 18,
            big_endian_samples: false,
        }
    }
}

const CHANSPEC_BW_MASK: u16 = 0x3800;
const CHANSPEC_BW_SHIFT: u16 = 11;

/// Bandwidth encoded in a Broadcom chanspec (bits 11..13).
pub fn chanspec_bandwidth(chanspec: u16) -> Option<Bandwidth> {
    match (chanspec & CHANSPEC_BW_MASK) >> CHANSPEC_BW_SHIFT {
        2 => Some(Bandwidth::Mhz20),
        3 => Some(Bandwidth::Mhz40),
        4 => Some(Bandwidth::Mhz80),
        _ => None,
    }
}

/// Builds a chanspec word for `channel` at `bandwidth` (5 GHz band bit set).
pub fn make_chanspec(channel: u8, bandwidth: Bandwidth) -> u16 {
    let bw: u16 = match bandwidth {
        Bandwidth::Mhz20 => 2,
        Bandwidth::Mhz40 => 3,
        Bandwidth::Mhz80 => 4,
    };
    0xc000 | (bw << CHANSPEC_BW_SHIFT) | channel as u16
}

/// Parses a firmware payload. The timestamp is left at 0; the receiving host
/// stamps the frame.
pub fn parse_nexmon_payload(buf: &[u8], layout: &IngestLayout) -> Result<CsiFrame, CodecError> {
    let need = |end: usize| {
        if buf.len() < end {
            Err(CodecError::TruncatedFrame {
                expected: end,
                actual: buf.len(),
            })
        } else {
            Ok(())
        }
    };
    let u16_at = |off: usize| -> Result<u16, CodecError> {
        need(off + 2)?;
        Ok(u16::from_le_bytes([buf[off], buf[off + 1]]))
    };

    if let Some(magic) = layout.magic {
        if u16_at(layout.magic_offset)? != magic {
            return Err(CodecError::BadMagic);
        }
    }
    need(layout.rssi_offset + 1)?;
    let rssi_dbm = buf[layout.rssi_offset] as i8 as i16;
    need(layout.mac_offset + 6)?;
    let source_mac = MacAddr(buf[layout.mac_offset..layout.mac_offset + 6].try_into().unwrap());
    let seq = u16_at(layout.seq_offset)?;
    let chanspec = u16_at(layout.chanspec_offset)?;
    need(layout.csi_offset)?;

    let region = &buf[layout.csi_offset..];
    if !region.len().is_multiple_of(4) {
        return Err(CodecError::TruncatedFrame {
            expected: layout.csi_offset + region.len() / 4 * 4 + 4,
            actual: buf.len(),
        });
    }
    let samples = region.len() / 4;
    let bandwidth = chanspec_bandwidth(chanspec)
        .filter(|bw| bw.subcarriers() == samples)
        .ok_or(CodecError::UnknownChanspec { chanspec, samples })?;
    if !(crate::model::RSSI_MIN_DBM..=crate::model::RSSI_MAX_DBM).contains(&rssi_dbm) {
        return Err(CodecError::BadFieldRange("rssi"));
    }

    Ok(CsiFrame {
        header: FrameHeader {
            timestamp_us: 0,
            source_mac,
            seq,
            rssi_dbm,
            bandwidth,
            subcarrier_order: SubcarrierOrder::FftOrder,
        },
        csi: read_i16_pairs(region, layout.big_endian_samples),
    })
}
