//! Domain types shared by every stage: captured frames, their polar view,
//! classifier output, and frame validation.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

/// A 48-bit IEEE 802 MAC address.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    pub const fn new(bytes: [u8; 6]) -> Self {
        Self(bytes)
    }

    pub const fn octets(&self) -> [u8; 6] {
        self.0
    }

    /// Twelve lowercase hex digits, no separators (`aabbccddeeff`).
    pub fn to_hex12(&self) -> String {
        let mut s = String::with_capacity(12);
        for b in self.0 {
            push_hex(&mut s, b);
        }
        s
    }
}

fn push_hex(s: &mut String, b: u8) {
    const DIGITS: &[u8; 16] = b"0123456789abcdef";
    s.push(DIGITS[(b >> 4) as usize] as char);
    s.push(DIGITS[(b & 0xf) as usize] as char);
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

impl fmt::Debug for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid MAC address {0:?}")]
pub struct ParseMacError(pub String);

impl FromStr for MacAddr {
    type Err = ParseMacError;

    /// Accepts `aa:bb:cc:dd:ee:ff`, `aa-bb-cc-dd-ee-ff` and `aabbccddeeff`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseMacError(s.into());
        let digits: Vec<u8> = s.bytes().filter(|c| *c != b':' && *c != b'-').collect();
        let separators = s.len() - digits.len();
        if digits.len() != 12 || (separators != 0 && separators != 5) {
            return Err(err());
        }
        let mut out = [0u8; 6];
        for (i, pair) in digits.chunks(2).enumerate() {
            let hi = hex_val(pair[0]).ok_or_else(err)?;
            let lo = hex_val(pair[1]).ok_or_else(err)?;
            out[i] = (hi << 4) | lo;
        }
        Ok(Self(out))
    }
}

fn hex_val(c: u8) -> Option<u8> {
    match c {
        b'0'..=b'9' => Some(c - b'0'),
        b'a'..=b'f' => Some(c - b'a' + 10),
        b'A'..=b'F' => Some(c - b'A' + 10),
        _ => None,
    }
}

impl Serialize for MacAddr {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddr {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One complex channel coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ComplexSample {
    pub re: f64,
    pub im: f64,
}

impl ComplexSample {
    pub const ZERO: Self = Self { re: 0.0, im: 0.0 };

    pub const fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    pub fn from_polar(amplitude: f64, phase: f64) -> Self {
        Self {
            re: amplitude * libm::cos(phase),
            im: amplitude * libm::sin(phase),
        }
    }

    pub fn norm(&self) -> f64 {
        libm::hypot(self.re, self.im)
    }

    /// Angle in `(-π, π]`; the origin maps to 0.
    pub fn arg(&self) -> f64 {
        if self.re == 0.0 && self.im == 0.0 {
            return 0.0;
        }
        let a = libm::atan2(self.im, self.re);
        // atan2 returns -π for (-x, -0.0)
        if a == -core::f64::consts::PI {
            core::f64::consts::PI
        } else {
            a
        }
    }

    pub fn is_finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

/// Channel bandwidth. The subcarrier count is 64 per 20 MHz.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Bandwidth {
    #[serde(rename = "20")]
    Mhz20,
    #[serde(rename = "40")]
    Mhz40,
    #[serde(rename = "80")]
    Mhz80,
}

impl Bandwidth {
    pub const ALL: [Bandwidth; 3] = [Bandwidth::Mhz20, Bandwidth::Mhz40, Bandwidth::Mhz80];

    pub const fn mhz(self) -> u16 {
        match self {
            Bandwidth::Mhz20 => 20,
            Bandwidth::Mhz40 => 40,
            Bandwidth::Mhz80 => 80,
        }
    }

    pub const fn subcarriers(self) -> usize {
        match self {
            Bandwidth::Mhz20 => 64,
            Bandwidth::Mhz40 => 128,
            Bandwidth::Mhz80 => 256,
        }
    }

    pub fn from_subcarriers(n: usize) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.subcarriers() == n)
    }

    pub fn from_mhz(mhz: u16) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.mhz() == mhz)
    }
}

/// Order of the subcarrier vector.
///
/// `FftOrder` is what the radio emits: logical indices `0..N/2-1` followed by
/// `-N/2..-1`. `LinearOrder` runs `-N/2..N/2-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubcarrierOrder {
    FftOrder,
    LinearOrder,
}

/// Header fields of a captured frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameHeader {
    /// Microseconds since the Unix epoch, assigned by the capture host.
    pub timestamp_us: u64,
    pub source_mac: MacAddr,
    pub seq: u16,
    /// Received power in dBm, measured before AGC.
    pub rssi_dbm: i16,
    pub bandwidth: Bandwidth,
    pub subcarrier_order: SubcarrierOrder,
}

/// One captured frame: header plus the complex channel vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsiFrame {
    pub header: FrameHeader,
    pub csi: Vec<ComplexSample>,
}

impl CsiFrame {
    pub fn n(&self) -> usize {
        self.csi.len()
    }
}

/// Amplitude/phase view of a frame after (some of) the preprocessing chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarFrame {
    pub header: FrameHeader,
    pub amplitudes: Vec<f64>,
    /// Radians. In `(-π, π]` until unwrapped.
    pub phases: Vec<f64>,
    pub rssi_smoothed_dbm: f64,
    pub applied_plugins: Vec<String>,
    /// Set when AGC compensation met an all-zero frame and passed it through.
    #[serde(default)]
    pub zero_power: bool,
}

impl PolarFrame {
    pub fn n(&self) -> usize {
        self.amplitudes.len()
    }

    /// Rebuilds the complex vector `a·(cos Φ + i sin Φ)`.
    pub fn reconstruct(&self) -> Vec<ComplexSample> {
        self.amplitudes
            .iter()
            .zip(&self.phases)
            .map(|(&a, &p)| ComplexSample::from_polar(a, p))
            .collect()
    }
}

/// Output of the preprocessing chain.
///
/// `raw` follows the structural steps (reordering, narrowing) so that it always
/// has the same length and order as `polar`; value transforms touch `polar` only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessedFrame {
    pub raw: CsiFrame,
    pub polar: PolarFrame,
}

impl ProcessedFrame {
    pub fn header(&self) -> &FrameHeader {
        &self.polar.header
    }

    pub fn n(&self) -> usize {
        self.polar.n()
    }
}

/// One decision imported from a classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub class_id: u32,
    pub confidence: f64,
    pub window_end_us: u64,
}

/// A broken frame invariant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    /// N is not one of 64, 128, 256.
    SubcarrierCount {
        n: usize,
    },
    /// N disagrees with the declared bandwidth.
    BandwidthMismatch {
        n: usize,
        bandwidth: Bandwidth,
    },
    RssiRange {
        rssi_dbm: i16,
    },
    NonFiniteSample {
        index: usize,
    },
    /// Timestamp went backwards for this source.
    TimestampRegression {
        previous_us: u64,
        timestamp_us: u64,
    },
}

impl Violation {
    /// Stable short code used in reports and logs.
    pub const fn code(&self) -> &'static str {
        match self {
            Violation::SubcarrierCount { .. } => "subcarrier-count",
            Violation::BandwidthMismatch { .. } => "bandwidth-mismatch",
            Violation::RssiRange { .. } => "rssi-range",
            Violation::NonFiniteSample { .. } => "non-finite-sample",
            Violation::TimestampRegression { .. } => "timestamp-regression",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SubcarrierCount { n } => write!(f, "subcarrier-count: N={n}"),
            Violation::BandwidthMismatch { n, bandwidth } => write!(
                f,
                "bandwidth-mismatch: N={n} but {} MHz implies {}",
                bandwidth.mhz(),
                bandwidth.subcarriers()
            ),
            Violation::RssiRange { rssi_dbm } => write!(f, "rssi-range: {rssi_dbm} dBm"),
            Violation::NonFiniteSample { index } => write!(f, "non-finite-sample at {index}"),
            Violation::TimestampRegression {
                previous_us,
                timestamp_us,
            } => write!(f, "timestamp-regression: {timestamp_us} < {previous_us}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, code: &str) -> bool {
        self.violations.iter().any(|v| v.code() == code)
    }
}

pub const RSSI_MIN_DBM: i16 = -120;
pub const RSSI_MAX_DBM: i16 = 0;

/// Checks the per-frame invariants. Never fails; the report lists every
/// violation found.
pub fn validate_frame(frame: &CsiFrame) -> ValidationReport {
    let mut violations = Vec::new();
    let n = frame.n();
    if Bandwidth::from_subcarriers(n).is_none() {
        violations.push(Violation::SubcarrierCount { n });
    } else if frame.header.bandwidth.subcarriers() != n {
        violations.push(Violation::BandwidthMismatch {
            n,
            bandwidth: frame.header.bandwidth,
        });
    }
    let rssi = frame.header.rssi_dbm;
    if !(RSSI_MIN_DBM..=RSSI_MAX_DBM).contains(&rssi) {
        violations.push(Violation::RssiRange { rssi_dbm: rssi });
    }
    if let Some(index) = frame.csi.iter().position(|s| !s.is_finite()) {
        violations.push(Violation::NonFiniteSample { index });
    }
    ValidationReport { violations }
}

/// Tracks the last timestamp per source so that stream-level monotonicity can
/// be checked alongside [`validate_frame`].
#[derive(Debug, Clone, Default)]
pub struct StreamValidator {
    last_us: alloc::collections::BTreeMap<MacAddr, u64>,
}

impl StreamValidator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn check(&mut self, frame: &CsiFrame) -> ValidationReport {
        let mut report = validate_frame(frame);
        let ts = frame.header.timestamp_us;
        match self.last_us.get(&frame.header.source_mac) {
            Some(&prev) if ts < prev => report.violations.push(Violation::TimestampRegression {
                previous_us: prev,
                timestamp_us: ts,
            }),
            _ => {
                self.last_us.insert(frame.header.source_mac, ts);
            }
        }
        report
    }
}
