//! Synthetic channel generator.
//!
//! Emits `Y = H∘X + N` with `X ≡ 1`: every subcarrier carries a base amplitude,
//! optionally modulated in a set of bands, rotated by a fixed linear phase
//! ramp, plus complex Gaussian noise. Frames are a pure function of
//! `(profile, t_us)`; the profile carries the seed.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal, StandardUniform};
use serde::{Deserialize, Serialize};

use crate::model::{
    Bandwidth, ComplexSample, CsiFrame, FrameHeader, MacAddr, SubcarrierOrder, RSSI_MAX_DBM, RSSI_MIN_DBM,
};

pub const DEFAULT_FRAME_RATE_HZ: f64 = 9.0;

/// Amplitude modulation over a contiguous range of subcarriers.
///
/// `start..end` are positions in linear order, i.e. logical index `k` sits at
/// position `k + N/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternBand {
    pub start: usize,
    pub end: usize,
    pub freq_hz: f64,
    pub depth: f64,
}

impl PatternBand {
    pub fn contains(&self, position: usize) -> bool {
        (self.start..self.end).contains(&position)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthProfile {
    pub name: String,
    pub class_id: u32,
    pub n_subcarriers: usize,
    pub frame_rate_hz: f64,
    pub base_amplitude: f64,
    pub pattern_bands: Vec<PatternBand>,
    pub noise_sigma: f64,
    pub rssi_mean_dbm: f64,
    pub rssi_jitter_db: f64,
    pub rng_seed: u64,
    /// Phase advance per subcarrier, radians.
    pub phase_slope_rad: f64,
    pub source_mac: MacAddr,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("unknown profile {0:?}")]
    UnknownProfile(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(&'static str),
}

/// Names of the shipped profiles, in class-id order.
pub const BUILTIN_PROFILES: [&str; 4] = ["idle", "pattern-a", "pattern-b", "pattern-c"];

impl SynthProfile {
    /// One of the four shipped activity profiles. They share every parameter
    /// except the modulated band, and the bands are disjoint and clear of the
    /// 20 MHz null subcarriers.
    pub fn builtin(name: &str) -> Result<Self, SynthError> {
        let class_id = BUILTIN_PROFILES
            .iter()
            .position(|p| *p == name)
            .ok_or_else(|| SynthError::UnknownProfile(name.into()))? as u32;
        let band = |start, freq_hz| PatternBand {
            start,
            end: start + 8,
            freq_hz,
            depth: 0.15,
        };
        let pattern_bands = match class_id {
            0 => Vec::new(),
            1 => alloc::vec![band(6, 1.0)],
            2 => alloc::vec![band(20, 2.0)],
            _ => alloc::vec![band(40, 3.0)],
        };
        Ok(Self {
            name: name.into(),
            class_id,
            n_subcarriers: 64,
            frame_rate_hz: DEFAULT_FRAME_RATE_HZ,
            base_amplitude: 100.0,
            pattern_bands,
            noise_sigma: 3.0,
            rssi_mean_dbm: -55.0,
            rssi_jitter_db: 2.0,
            rng_seed: 0x5eed_0000 + class_id as u64,
            phase_slope_rad: 0.4,
            source_mac: MacAddr([0x02, 0x00, 0x5e, 0x00, 0x00, 0x01]),
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let n = self.n_subcarriers;
        if Bandwidth::from_subcarriers(n).is_none() {
            return Err(SynthError::InvalidProfile("n_subcarriers must be 64, 128 or 256"));
        }
        if !(self.frame_rate_hz > 0.0 && self.frame_rate_hz.is_finite()) {
            return Err(SynthError::InvalidProfile("frame_rate_hz must be positive"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(SynthError::InvalidProfile("noise_sigma must be >= 0"));
        }
        if !(self.rssi_jitter_db >= 0.0 && self.rssi_jitter_db.is_finite()) || !self.rssi_mean_dbm.is_finite() {
            return Err(SynthError::InvalidProfile("bad rssi parameters"));
        }
        if !self.base_amplitude.is_finite() || !self.phase_slope_rad.is_finite() {
            return Err(SynthError::InvalidProfile("non-finite amplitude or phase slope"));
        }
        for b in &self.pattern_bands {
            if !(0.0..=1.0).contains(&b.depth) {
                return Err(SynthError::InvalidProfile("modulation depth must lie in [0, 1]"));
            }
            if b.start >= b.end || b.end > n {
                return Err(SynthError::InvalidProfile("band outside [0, N)"));
            }
            if !b.freq_hz.is_finite() {
                return Err(SynthError::InvalidProfile("non-finite band frequency"));
            }
        }
        Ok(())
    }

    /// Frame period in microseconds.
    pub fn period_us(&self) -> f64 {
        1e6 / self.frame_rate_hz
    }

    /// Timestamp of frame `index` for a stream starting at `start_us`.
    pub fn frame_time_us(&self, start_us: u64, index: u64) -> u64 {
        start_us + libm::round(index as f64 * self.period_us()) as u64
    }

    /// Noise-free amplitude at linear position `position` and time `t_us`.
    pub fn pattern_amplitude(&self, position: usize, t_us: u64) -> f64 {
        let modulation: f64 = self
            .pattern_bands
            .iter()
            .filter(|b| b.contains(position))
            .map(|b| b.depth * libm::sin(cycle_angle(b.freq_hz, t_us)))
            .sum();
        self.base_amplitude * (1.0 + modulation)
    }
}

/// `2π·frac(f·t)`, which keeps the sine argument small for epoch-scale times.
fn cycle_angle(freq_hz: f64, t_us: u64) -> f64 {
    // Split t into whole seconds and remainder so f·t stays exact for integer f.
    let secs = (t_us / 1_000_000) as f64;
    let rem = (t_us % 1_000_000) as f64 / 1e6;
    let whole = freq_hz * secs;
    let cycles = (whole - libm::floor(whole)) + freq_hz * rem;
    2.0 * PI * (cycles - libm::floor(cycles))
}

/// Generates the frame observed at `t_us`, in FFT order as a radio would
/// report it.
pub fn generate_synthetic_frame(profile: &SynthProfile, t_us: u64) -> CsiFrame {
    let n = profile.n_subcarriers;
    let half = n / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.rng_seed);
    rng.set_stream(t_us);

    let mut csi = alloc::vec![ComplexSample::ZERO; n];
    for position in 0..n {
        let amplitude = profile.pattern_amplitude(position, t_us);
        let logical = position as f64 - half as f64;
        let mut s = ComplexSample::from_polar(amplitude, profile.phase_slope_rad * logical);
        if profile.noise_sigma > 0.0 {
            let nr: f64 = StandardNormal.sample(&mut rng);
            let ni: f64 = StandardNormal.sample(&mut rng);
            s.re += profile.noise_sigma * nr;
            s.im += profile.noise_sigma * ni;
        }
        // linear position -> FFT slot
        csi[(position + half) % n] = s;
    }

    let u: f64 = StandardUniform.sample(&mut rng);
    let rssi = profile.rssi_mean_dbm + profile.rssi_jitter_db * (2.0 * u - 1.0);
    let rssi_dbm = (libm::round(rssi) as i16).clamp(RSSI_MIN_DBM, RSSI_MAX_DBM);

    let seq = (libm::round(t_us as f64 / profile.period_us()) as u64 & 0xffff) as u16;
    CsiFrame {
        header: FrameHeader {
            timestamp_us: t_us,
            source_mac: profile.source_mac,
            seq,
            rssi_dbm,
            bandwidth: Bandwidth::from_subcarriers(n).unwrap_or(Bandwidth::Mhz20),
            subcarrier_order: SubcarrierOrder::FftOrder,
        },
        csi,
    }
}

/// Offline stream: frame `i` is stamped `start_us + i/rate`.
#[derive(Debug, Clone)]
pub struct SynthStream {
    profile: SynthProfile,
    start_us: u64,
    index: u64,
}

impl SynthStream {
    pub fn new(profile: SynthProfile, start_us: u64) -> Result<Self, SynthError> {
        profile.validate()?;
        Ok(Self {
            profile,
            start_us,
            index: 0,
        })
    }

    pub fn profile(&self) -> &SynthProfile {
        &self.profile
    }

    /// Timestamp of the next frame to be produced.
    pub fn next_time_us(&self) -> u64 {
        self.profile.frame_time_us(self.start_us, self.index)
    }
}

impl Iterator for SynthStream {
    type Item = CsiFrame;

    fn next(&mut self) -> Option<CsiFrame> {
        let t = self.next_time_us();
        self.index += 1;
        Some(generate_synthetic_frame(&self.profile, t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clean(name: &str) -> SynthProfile {
        let mut p = SynthProfile::builtin(name).unwrap();
        p.noise_sigma = 0.0;
        p.rssi_jitter_db = 0.0;
        p
    }

    fn amplitudes_linear(f: &CsiFrame) -> Vec<f64> {
        let n = f.n();
        (0..n).map(|pos| f.csi[(pos + n / 2) % n].norm()).collect()
    }

    #[test]
    fn no_bands_no_noise_is_flat() {
        let p = clean("idle");
        let f = generate_synthetic_frame(&p, 123_456_789);
        for a in amplitudes_linear(&f) {
            assert!((a - p.base_amplitude).abs() < 1e-12);
        }
        assert_eq!(f.header.rssi_dbm, -55);
    }

    #[test]
    fn full_depth_peak_doubles_amplitude() {
        let mut p = clean("idle");
        p.pattern_bands.push(PatternBand {
            start: 10,
            end: 20,
            freq_hz: 1.0,
            depth: 1.0,
        });
        // sin(2π·1 Hz·0.25 s) = 1
        let f = generate_synthetic_frame(&p, 250_000);
        for (pos, a) in amplitudes_linear(&f).into_iter().enumerate() {
            let expect = if (10..20).contains(&pos) { 200.0 } else { 100.0 };
            assert!((a - expect).abs() < 1e-12, "pos {pos}: {a}");
        }
    }

    #[test]
    fn deterministic_per_time_and_seed() {
        let p = SynthProfile::builtin("pattern-b").unwrap();
        let a = generate_synthetic_frame(&p, 42_000_000);
        let b = generate_synthetic_frame(&p, 42_000_000);
        assert_eq!(a, b);
        let c = generate_synthetic_frame(&p.clone().with_seed(7), 42_000_000);
        assert_ne!(a.csi, c.csi);
        let d = generate_synthetic_frame(&p, 42_000_001);
        assert_ne!(a.csi, d.csi);
    }

    #[test]
    fn offline_stream_spacing() {
        let s = SynthStream::new(SynthProfile::builtin("idle").unwrap(), 0).unwrap();
        let ts: Vec<u64> = s.take(100).map(|f| f.header.timestamp_us).collect();
        assert_eq!(ts[0], 0);
        assert_eq!(ts[1], 111_111);
        assert_eq!(ts[9], 1_000_000);
        for w in ts.windows(2) {
            let d = w[1] - w[0];
            assert!(d == 111_111 || d == 111_112, "{d}");
        }
    }

    #[test]
    fn validation_rejects_bad_profiles() {
        assert!(matches!(
            SynthProfile::builtin("dance"),
            Err(SynthError::UnknownProfile(_))
        ));
        let mut p = clean("pattern-a");
        p.pattern_bands[0].depth = 1.5;
        assert!(p.validate().is_err());
        let mut p = clean("pattern-a");
        p.pattern_bands[0].end = 65;
        assert!(p.validate().is_err());
        let mut p = clean("idle");
        p.noise_sigma = -1.0;
        assert!(p.validate().is_err());
        for name in BUILTIN_PROFILES {
            SynthProfile::builtin(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn cycle_angle_matches_direct_formula() {
        for &(f, t) in &[(1.0, 250_000u64), (2.0, 1_700_000_000_123_456), (3.0, 5)] {
            let direct = 2.0 * PI * f * (t as f64 / 1e6);
            let a = cycle_angle(f, t);
            assert!((libm::sin(a) - libm::sin(direct)).abs() < 1e-5);
        }
    }
}
