//! Text line protocol between the host and a classifier process.
//!
//! Host to classifier, one line per frame:
//! `F,<timestamp_us>,<mac 12-hex>,<rssi>,<a_0>,...,<a_{N-1}>[,<phi_0>,...]`
//!
//! Classifier to host, one line per decision:
//! `R,<class_id>,<confidence>,<window_end_us>`
//!
//! Floats are written in shortest round-trip form, so a reader recovers the
//! exact values the host held.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::model::{ClassificationResult, MacAddr, ProcessedFrame};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LineError {
    #[error("line does not start with {0:?}")]
    BadTag(char),
    #[error("wrong field count")]
    FieldCount,
    #[error("bad field {0}")]
    BadField(&'static str),
}

pub fn format_frame_line(p: &ProcessedFrame, include_phases: bool) -> String {
    let h = p.header();
    let mut s = String::with_capacity(16 * (p.n() + 4));
    let _ = write!(
        s,
        "F,{},{},{}",
        h.timestamp_us,
        h.source_mac.to_hex12(),
        p.polar.rssi_smoothed_dbm
    );
    for a in &p.polar.amplitudes {
        let _ = write!(s, ",{a}");
    }
    if include_phases {
        for ph in &p.polar.phases {
            let _ = write!(s, ",{ph}");
        }
    }
    s.push('\n');
    s
}

/// A parsed `F` line. `values` holds amplitudes, followed by phases when the
/// sender included them.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLine {
    pub timestamp_us: u64,
    pub source_mac: MacAddr,
    pub rssi_dbm: f64,
    pub values: Vec<f64>,
}

pub fn parse_frame_line(line: &str) -> Result<FrameLine, LineError> {
    let line = line.trim_end_matches(['\n', '\r']);
    let mut fields = line.split(',');
    if fields.next() != Some("F") {
        return Err(LineError::BadTag('F'));
    }
    let timestamp_us = fields
        .next()
        .ok_or(LineError::FieldCount)?
        .parse()
        .map_err(|_| LineError::BadField("timestamp"))?;
    let source_mac = fields
        .next()
        .ok_or(LineError::FieldCount)?
        .parse()
        .map_err(|_| LineError::BadField("mac"))?;
    let rssi_dbm = fields
        .next()
        .ok_or(LineError::FieldCount)?
        .parse()
        .map_err(|_| LineError::BadField("rssi"))?;
    let values = fields
        .map(|f| f.parse::<f64>().map_err(|_| LineError::BadField("value")))
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(LineError::FieldCount);
    }
    Ok(FrameLine {
        timestamp_us,
        source_mac,
        rssi_dbm,
        values,
    })
}

pub fn format_result_line(r: &ClassificationResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "R,{},{},{}", r.class_id, r.confidence, r.window_end_us);
    s
}

pub fn parse_result_line(line: &str) -> Result<ClassificationResult, LineError> {
    let line = line.trim_end_matches(['\n', '\r']);
    let fields: Vec<&str> = line.split(',').collect();
    if fields.first() != Some(&"R") {
        return Err(LineError::BadTag('R'));
    }
    if fields.len() != 4 {
        return Err(LineError::FieldCount);
    }
    let class_id = fields[1].parse().map_err(|_| LineError::BadField("class_id"))?;
    let confidence: f64 = fields[2].parse().map_err(|_| LineError::BadField("confidence"))?;
    if !(0.0..=1.0).contains(&confidence) {
        return Err(LineError::BadField("confidence"));
    }
    let window_end_us = fields[3].parse().map_err(|_| LineError::BadField("window_end_us"))?;
    Ok(ClassificationResult {
        class_id,
        confidence,
        window_end_us,
    })
}

/// Longest line kept while waiting for its newline.
pub const MAX_LINE: usize = 64 * 1024;

/// Reassembles result lines from arbitrary byte chunks. Incomplete trailing
/// bytes wait for the next chunk; malformed lines are counted and skipped.
#[derive(Debug, Clone, Default)]
pub struct LineAssembler {
    pending: Vec<u8>,
    malformed: u64,
    overflowing: bool,
}

impl LineAssembler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn malformed(&self) -> u64 {
        self.malformed
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn push(&mut self, bytes: &[u8]) -> Vec<ClassificationResult> {
        let mut out = Vec::new();
        for &b in bytes {
            if b == b'\n' {
                if self.overflowing {
                    self.overflowing = false;
                } else {
                    self.finish_line(&mut out);
                }
                self.pending.clear();
            } else if !self.overflowing {
                self.pending.push(b);
                if self.pending.len() > MAX_LINE {
                    // Count it once and drop bytes up to the next newline.
                    self.malformed += 1;
                    self.overflowing = true;
                    self.pending.clear();
                }
            }
        }
        out
    }

    /// End of input. Leftover bytes without a newline count as one malformed
    /// line; returns whether there were any.
    pub fn finish(&mut self) -> bool {
        let dangling = !self.pending.is_empty() || self.overflowing;
        if !self.pending.is_empty() {
            self.malformed += 1;
        }
        self.pending.clear();
        self.overflowing = false;
        dangling
    }

    fn finish_line(&mut self, out: &mut Vec<ClassificationResult>) {
        let line = match core::str::from_utf8(&self.pending) {
            Ok(s) => s.trim_end_matches('\r'),
            Err(_) => {
                self.malformed += 1;
                return;
            }
        };
        if line.is_empty() {
            return;
        }
        match parse_result_line(line) {
            Ok(r) => out.push(r),
            Err(_) => self.malformed += 1,
        }
    }
}
