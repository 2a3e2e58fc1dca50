//! Recording files in three formats, plus a threaded recorder.
//!
//! * `csv-simple`: header row, then `timestamp_us,mac,seq,rssi_dbm`, N
//!   amplitudes and N phases as decimals with 6 significant digits.
//! * `csv-compact`: header row, then `timestamp_us,mac12,rssi_dbm` and the raw
//!   samples as interleaved integer re/im pairs.
//! * `binary`: `WEYR`, version u8, N u16 LE, pad u8; then fixed records of
//!   u64 timestamp, 6-byte MAC, u16 seq, i8 rssi, N × (i16 re, i16 im), all LE.
//!
//! Recording metadata lives in a JSON sidecar next to the data file
//! (`<path>.meta.json`), so the data layouts stay exactly as above.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, SyncSender};
use std::thread::{self, JoinHandle};

use csiscope_core::codec::quantize;
use csiscope_core::pipeline::ops::extract_amplitude_phase;
use csiscope_core::pipeline::ChainConfig;
use csiscope_core::{
    Bandwidth, ComplexSample, CsiFrame, FrameHeader, MacAddr, PolarFrame, ProcessedFrame, SubcarrierOrder,
};
use serde::{Deserialize, Serialize};

pub const BINARY_MAGIC: [u8; 4] = *b"WEYR";
pub const BINARY_VERSION: u8 = 1;
pub const BINARY_HEADER_LEN: usize = 8;
pub const RECORDER_QUEUE_DEPTH: usize = 4096;

pub fn binary_record_len(n: usize) -> usize {
    17 + 4 * n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    CsvSimple,
    CsvCompact,
    Binary,
}

impl Format {
    pub fn name(self) -> &'static str {
        match self {
            Format::CsvSimple => "csv-simple",
            Format::CsvCompact => "csv-compact",
            Format::Binary => "binary",
        }
    }
}

impl FromStr for Format {
    type Err = RecordError;

    fn from_str(s: &str) -> Result<Self, RecordError> {
        match s {
            "csv-simple" => Ok(Format::CsvSimple),
            "csv-compact" => Ok(Format::CsvCompact),
            "binary" => Ok(Format::Binary),
            other => Err(RecordError::UnsupportedFormat(other.into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub format: Format,
    pub path: PathBuf,
    pub started_us: u64,
    pub chain_version: u64,
    #[serde(default)]
    pub label: Option<String>,
    pub n_subcarriers: usize,
    #[serde(default = "linear")]
    pub subcarrier_order: SubcarrierOrder,
    /// Chain in force when the recording started. Raw formats can be run
    /// through it again to recover the processed values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<ChainConfig>,
}

fn linear() -> SubcarrierOrder {
    SubcarrierOrder::LinearOrder
}

impl RecordingMeta {
    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".meta.json");
        s.into()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("unsupported format {0:?}")]
    UnsupportedFormat(String),
    #[error("frame has {got} subcarriers, recording has {expected}")]
    NMismatch { expected: usize, got: usize },
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("record {index} is truncated")]
    TruncatedRecord { index: u64 },
    #[error("record {index} is malformed: {reason}")]
    BadRecord { index: u64, reason: String },
    #[error("recorder stopped")]
    Stopped,
}

/// Six significant digits: fixed notation for magnitudes in [1e-5, 1e6),
/// scientific otherwise.
pub fn fmt_sig6(out: &mut String, x: f64) {
    if !x.is_finite() {
        let _ = write!(out, "{x}");
        return;
    }
    if x == 0.0 {
        out.push_str(if x.is_sign_negative() { "-0.00000" } else { "0.00000" });
        return;
    }
    let sci = format!("{x:.5e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if (-5..6).contains(&exp) {
        let _ = write!(out, "{:.*}", (5 - exp) as usize, x);
    } else {
        out.push_str(&sci);
    }
}

fn csv_simple_header(n: usize) -> String {
    let mut h = String::from("timestamp_us,mac,seq,rssi_dbm");
    for i in 0..n {
        let _ = write!(h, ",amp_{i}");
    }
    for i in 0..n {
        let _ = write!(h, ",phase_{i}");
    }
    h
}

fn csv_compact_header(n: usize) -> String {
    let mut h = String::from("timestamp_us,mac,rssi_dbm");
    for i in 0..n {
        let _ = write!(h, ",re_{i},im_{i}");
    }
    h
}

/// Synchronous writer for one recording.
pub struct RecordingWriter<W: Write> {
    out: W,
    format: Format,
    n: usize,
    records: u64,
    line: String,
    bytes: Vec<u8>,
}

impl<W: Write> RecordingWriter<W> {
    /// Writes the header immediately.
    pub fn new(mut out: W, format: Format, n: usize) -> Result<Self, RecordError> {
        match format {
            Format::CsvSimple => writeln!(out, "{}", csv_simple_header(n))?,
            Format::CsvCompact => writeln!(out, "{}", csv_compact_header(n))?,
            Format::Binary => {
                let mut h = Vec::with_capacity(BINARY_HEADER_LEN);
                h.extend_from_slice(&BINARY_MAGIC);
                h.push(BINARY_VERSION);
                h.extend_from_slice(&(n as u16).to_le_bytes());
                h.push(0);
                out.write_all(&h)?;
            }
        }
        Ok(Self {
            out,
            format,
            n,
            records: 0,
            line: String::new(),
            bytes: Vec::new(),
        })
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    /// Appends one record with a single write call.
    pub fn append(&mut self, p: &ProcessedFrame) -> Result<(), RecordError> {
        if p.n() != self.n || p.polar.n() != self.n {
            return Err(RecordError::NMismatch {
                expected: self.n,
                got: p.n(),
            });
        }
        let h = p.header();
        match self.format {
            Format::CsvSimple => {
                let line = &mut self.line;
                line.clear();
                let _ = write!(line, "{},{},{},{}", h.timestamp_us, h.source_mac, h.seq, h.rssi_dbm);
                for x in p.polar.amplitudes.iter().chain(&p.polar.phases) {
                    line.push(',');
                    fmt_sig6(line, *x);
                }
                line.push('\n');
                self.out.write_all(line.as_bytes())?;
            }
            Format::CsvCompact => {
                let line = &mut self.line;
                line.clear();
                let _ = write!(line, "{},{},{}", h.timestamp_us, h.source_mac.to_hex12(), h.rssi_dbm);
                for s in &p.raw.csi {
                    let _ = write!(line, ",{},{}", quantize(s.re), quantize(s.im));
                }
                line.push('\n');
                self.out.write_all(line.as_bytes())?;
            }
            Format::Binary => {
                let b = &mut self.bytes;
                b.clear();
                b.extend_from_slice(&h.timestamp_us.to_le_bytes());
                b.extend_from_slice(&h.source_mac.0);
                b.extend_from_slice(&h.seq.to_le_bytes());
                b.push(h.rssi_dbm.clamp(i8::MIN as i16, i8::MAX as i16) as i8 as u8);
                for s in &p.raw.csi {
                    b.extend_from_slice(&quantize(s.re).to_le_bytes());
                    b.extend_from_slice(&quantize(s.im).to_le_bytes());
                }
                self.out.write_all(b)?;
            }
        }
        self.records += 1;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), RecordError> {
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Creates the data file and its sidecar and writes the header.
pub fn open_recording(meta: &RecordingMeta) -> Result<RecordingWriter<BufWriter<File>>, RecordError> {
    let file = File::create(&meta.path)?;
    let w = RecordingWriter::new(BufWriter::new(file), meta.format, meta.n_subcarriers)?;
    let json = serde_json::to_vec_pretty(meta).map_err(io::Error::other)?;
    std::fs::write(RecordingMeta::sidecar_path(&meta.path), json)?;
    Ok(w)
}

fn header_of(
    timestamp_us: u64,
    source_mac: MacAddr,
    seq: u16,
    rssi_dbm: i16,
    n: usize,
    order: SubcarrierOrder,
) -> Result<FrameHeader, String> {
    Ok(FrameHeader {
        timestamp_us,
        source_mac,
        seq,
        rssi_dbm,
        bandwidth: Bandwidth::from_subcarriers(n).ok_or_else(|| format!("unsupported N {n}"))?,
        subcarrier_order: order,
    })
}

/// Streams frames back out of a recording. After a truncated or malformed
/// record it yields one error and then stops.
pub struct RecordingReader<R> {
    inner: R,
    format: Format,
    n: usize,
    order: SubcarrierOrder,
    index: u64,
    done: bool,
    line: String,
}

impl<R: BufRead> RecordingReader<R> {
    /// Reads and checks the header. Without a sidecar the order is assumed
    /// to be linear.
    pub fn new(mut inner: R, order: SubcarrierOrder) -> Result<Self, RecordError> {
        let peek = inner.fill_buf()?;
        let (format, n) = if peek.starts_with(&BINARY_MAGIC) {
            let mut h = [0u8; BINARY_HEADER_LEN];
            inner
                .read_exact(&mut h)
                .map_err(|_| RecordError::BadHeader("short binary header".into()))?;
            if h[4] != BINARY_VERSION {
                return Err(RecordError::BadHeader(format!("binary version {}", h[4])));
            }
            (Format::Binary, u16::from_le_bytes([h[5], h[6]]) as usize)
        } else {
            let mut line = String::new();
            inner.read_line(&mut line)?;
            let line = line.trim_end();
            let cols: Vec<&str> = line.split(',').collect();
            let (format, n) = if line.starts_with("timestamp_us,mac,seq,rssi_dbm") {
                (Format::CsvSimple, (cols.len().saturating_sub(4)) / 2)
            } else if line.starts_with("timestamp_us,mac,rssi_dbm") {
                (Format::CsvCompact, (cols.len().saturating_sub(3)) / 2)
            } else {
                return Err(RecordError::BadHeader("unrecognised header".into()));
            };
            let expected = match format {
                Format::CsvSimple => csv_simple_header(n),
                _ => csv_compact_header(n),
            };
            if line != expected {
                return Err(RecordError::BadHeader("column names do not match".into()));
            }
            (format, n)
        };
        if Bandwidth::from_subcarriers(n).is_none() {
            return Err(RecordError::BadHeader(format!("unsupported subcarrier count {n}")));
        }
        Ok(Self {
            inner,
            format,
            n,
            order,
            index: 0,
            done: false,
            line: String::new(),
        })
    }

    pub fn format(&self) -> Format {
        self.format
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn read_binary(&mut self) -> Result<Option<ProcessedFrame>, RecordError> {
        let mut rec = vec![0u8; binary_record_len(self.n)];
        let mut got = 0;
        while got < rec.len() {
            match self.inner.read(&mut rec[got..]) {
                Ok(0) => break,
                Ok(k) => got += k,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        if got == 0 {
            return Ok(None);
        }
        if got < rec.len() {
            return Err(RecordError::TruncatedRecord { index: self.index });
        }
        let ts = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let mac = MacAddr(rec[8..14].try_into().unwrap());
        let seq = u16::from_le_bytes([rec[14], rec[15]]);
        let rssi = rec[16] as i8 as i16;
        let csi = rec[17..]
            .chunks_exact(4)
            .map(|c| {
                ComplexSample::new(
                    i16::from_le_bytes([c[0], c[1]]) as f64,
                    i16::from_le_bytes([c[2], c[3]]) as f64,
                )
            })
            .collect();
        let header = header_of(ts, mac, seq, rssi, self.n, self.order).map_err(|reason| RecordError::BadRecord {
            index: self.index,
            reason,
        })?;
        let raw = CsiFrame { header, csi };
        let polar = extract_amplitude_phase(&raw);
        Ok(Some(ProcessedFrame { raw, polar }))
    }

    fn read_csv(&mut self) -> Result<Option<ProcessedFrame>, RecordError> {
        self.line.clear();
        if self.inner.read_line(&mut self.line)? == 0 {
            return Ok(None);
        }
        let index = self.index;
        if !self.line.ends_with('\n') {
            return Err(RecordError::TruncatedRecord { index });
        }
        let bad = |reason: &str| RecordError::BadRecord {
            index,
            reason: reason.into(),
        };
        let fields: Vec<&str> = self.line.trim_end().split(',').collect();
        let n = self.n;
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        match self.format {
            Format::CsvSimple => {
                if fields.len() != 4 + 2 * n {
                    return Err(bad("wrong field count"));
                }
                let ts = fields[0].parse().map_err(|_| bad("bad timestamp"))?;
                let mac = fields[1].parse().map_err(|_| bad("bad mac"))?;
                let seq = fields[2].parse().map_err(|_| bad("bad seq"))?;
                let rssi: i16 = fields[3].parse().map_err(|_| bad("bad rssi"))?;
                let amplitudes = fields[4..4 + n].iter().map(|s| num(s)).collect::<Result<Vec<_>, _>>()?;
                let phases = fields[4 + n..].iter().map(|s| num(s)).collect::<Result<Vec<_>, _>>()?;
                let header = header_of(ts, mac, seq, rssi, n, self.order).map_err(|r| bad(&r))?;
                let polar = PolarFrame {
                    header,
                    amplitudes,
                    phases,
                    rssi_smoothed_dbm: rssi as f64,
                    applied_plugins: Vec::new(),
                    zero_power: false,
                };
                let raw = CsiFrame {
                    header,
                    csi: polar.reconstruct(),
                };
                Ok(Some(ProcessedFrame { raw, polar }))
            }
            _ => {
                if fields.len() != 3 + 2 * n {
                    return Err(bad("wrong field count"));
                }
                let ts = fields[0].parse().map_err(|_| bad("bad timestamp"))?;
                let mac = fields[1].parse().map_err(|_| bad("bad mac"))?;
                let rssi: i16 = fields[2].parse().map_err(|_| bad("bad rssi"))?;
                let ints = fields[3..]
                    .iter()
                    .map(|s| s.parse::<i16>().map_err(|_| bad("bad sample")))
                    .collect::<Result<Vec<_>, _>>()?;
                let csi = ints
                    .chunks_exact(2)
                    .map(|c| ComplexSample::new(c[0] as f64, c[1] as f64))
                    .collect();
                let header = header_of(ts, mac, 0, rssi, n, self.order).map_err(|r| bad(&r))?;
                let raw = CsiFrame { header, csi };
                let polar = extract_amplitude_phase(&raw);
                Ok(Some(ProcessedFrame { raw, polar }))
            }
        }
    }
}

impl<R: BufRead> Iterator for RecordingReader<R> {
    type Item = Result<ProcessedFrame, RecordError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let r = match self.format {
            Format::Binary => self.read_binary(),
            _ => self.read_csv(),
        };
        match r {
            Ok(Some(p)) => {
                self.index += 1;
                Some(Ok(p))
            }
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Opens a recording written by this module. When the sidecar is missing the
/// metadata is reconstructed from the file itself.
pub fn read_recording(path: &Path) -> Result<(RecordingMeta, RecordingReader<BufReader<File>>), RecordError> {
    let sidecar: Option<RecordingMeta> = std::fs::read(RecordingMeta::sidecar_path(path))
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok());
    let order = sidecar
        .as_ref()
        .map(|m| m.subcarrier_order)
        .unwrap_or(SubcarrierOrder::LinearOrder);
    let reader = RecordingReader::new(BufReader::new(File::open(path)?), order)?;
    let meta = match sidecar {
        Some(mut m) => {
            m.path = path.into();
            m.format = reader.format();
            m.n_subcarriers = reader.n();
            m
        }
        None => RecordingMeta {
            format: reader.format(),
            path: path.into(),
            started_us: 0,
            chain_version: 0,
            label: None,
            n_subcarriers: reader.n(),
            subcarrier_order: order,
            chain: None,
        },
    };
    Ok((meta, reader))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordingSummary {
    pub path: PathBuf,
    pub records: u64,
}

/// Writes on a dedicated thread behind a bounded queue. `append` blocks while
/// the queue is full, so nothing is lost.
pub struct Recorder {
    meta: RecordingMeta,
    tx: Option<SyncSender<ProcessedFrame>>,
    worker: Option<JoinHandle<Result<u64, RecordError>>>,
}

impl Recorder {
    pub fn start(meta: RecordingMeta) -> Result<Self, RecordError> {
        Self::start_with_depth(meta, RECORDER_QUEUE_DEPTH)
    }

    pub fn start_with_depth(meta: RecordingMeta, depth: usize) -> Result<Self, RecordError> {
        let mut writer = open_recording(&meta)?;
        let (tx, rx): (SyncSender<ProcessedFrame>, Receiver<ProcessedFrame>) = mpsc::sync_channel(depth);
        let worker = thread::Builder::new().name("csi-recorder".into()).spawn(move || {
            for p in rx {
                writer.append(&p)?;
            }
            writer.flush()?;
            Ok(writer.records())
        })?;
        Ok(Self {
            meta,
            tx: Some(tx),
            worker: Some(worker),
        })
    }

    pub fn meta(&self) -> &RecordingMeta {
        &self.meta
    }

    pub fn append(&self, p: ProcessedFrame) -> Result<(), RecordError> {
        if p.n() != self.meta.n_subcarriers {
            return Err(RecordError::NMismatch {
                expected: self.meta.n_subcarriers,
                got: p.n(),
            });
        }
        let tx = self.tx.as_ref().ok_or(RecordError::Stopped)?;
        tx.send(p).map_err(|_| RecordError::Stopped)
    }

    /// Drains the queue, flushes and closes the file.
    pub fn stop(mut self) -> Result<RecordingSummary, RecordError> {
        self.finish()
    }

    fn finish(&mut self) -> Result<RecordingSummary, RecordError> {
        self.tx.take();
        let records = match self.worker.take() {
            Some(w) => w.join().map_err(|_| RecordError::Stopped)??,
            None => return Err(RecordError::Stopped),
        };
        Ok(RecordingSummary {
            path: self.meta.path.clone(),
            records,
        })
    }
}

impl Drop for Recorder {
    fn drop(&mut self) {
        let _ = self.finish();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: f64) -> String {
        let mut o = String::new();
        fmt_sig6(&mut o, x);
        o
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(s(1.0), "1.00000");
        assert_eq!(s(123.456789), "123.457");
        assert_eq!(s(-0.00123456789), "-0.00123457");
        assert_eq!(s(9.999996), "10.0000");
        assert_eq!(s(0.0), "0.00000");
        assert_eq!(s(1.23456789), "1.23457");
        assert_eq!(s(1234567.0), "1.23457e6");
        assert_eq!(s(1.5e-9), "1.50000e-9");
        assert_eq!(s(999999.7), "1.00000e6");
    }

    #[test]
    fn format_names() {
        for f in [Format::CsvSimple, Format::CsvCompact, Format::Binary] {
            assert_eq!(f.name().parse::<Format>().unwrap(), f);
        }
        assert!(matches!(
            "parquet".parse::<Format>(),
            Err(RecordError::UnsupportedFormat(_))
        ));
    }
}
