//! The preprocessing steps as plain functions. The plugin layer in
//! [`super::plugins`] wraps these with parameters and chain bookkeeping.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::model::{Bandwidth, CsiFrame, MacAddr, PolarFrame, SubcarrierOrder};

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OpError {
    #[error("frame is already in linear order")]
    AlreadyLinear,
    #[error("operation requires linear subcarrier order")]
    NotLinear,
    #[error("cannot narrow {n} subcarriers to {target}")]
    BadTarget { n: usize, target: usize },
    #[error("subcarrier index {index} outside [-{half}, {half})")]
    IndexOutOfRange { index: i32, half: i32 },
    #[error("all amplitudes are zero")]
    ZeroPower,
    #[error("smoothing factor must lie in (0, 1], got {0}")]
    BadAlpha(f64),
}

/// `true` when the frame passes. An empty allowlist passes everything.
pub fn filter_mac(mac: &MacAddr, allowlist: &BTreeSet<MacAddr>) -> bool {
    allowlist.is_empty() || allowlist.contains(mac)
}

/// FFT order -> linear order: `[N/2..N)` followed by `[0..N/2)`.
pub fn to_linear<T: Clone>(v: &[T]) -> Vec<T> {
    let half = v.len() / 2;
    v[half..].iter().chain(&v[..half]).cloned().collect()
}

/// Inverse of [`to_linear`].
pub fn to_fft<T: Clone>(v: &[T]) -> Vec<T> {
    let half = v.len() - v.len() / 2;
    v[half..].iter().chain(&v[..half]).cloned().collect()
}

pub fn reorder_subcarriers(frame: &CsiFrame) -> Result<CsiFrame, OpError> {
    if frame.header.subcarrier_order == SubcarrierOrder::LinearOrder {
        return Err(OpError::AlreadyLinear);
    }
    let mut out = frame.clone();
    out.csi = to_linear(&frame.csi);
    out.header.subcarrier_order = SubcarrierOrder::LinearOrder;
    Ok(out)
}

/// Same permutation on an already extracted polar frame.
pub fn reorder_polar(p: &mut PolarFrame) -> Result<(), OpError> {
    if p.header.subcarrier_order == SubcarrierOrder::LinearOrder {
        return Err(OpError::AlreadyLinear);
    }
    p.amplitudes = to_linear(&p.amplitudes);
    p.phases = to_linear(&p.phases);
    p.header.subcarrier_order = SubcarrierOrder::LinearOrder;
    Ok(())
}

/// Amplitudes `|h|` and phases `atan2(im, re)` in `(-π, π]`, with the phase of
/// a zero sample pinned to 0.
pub fn extract_amplitude_phase(frame: &CsiFrame) -> PolarFrame {
    let (amplitudes, phases) = frame.csi.iter().map(|s| (s.norm(), s.arg())).unzip();
    PolarFrame {
        header: frame.header,
        amplitudes,
        phases,
        rssi_smoothed_dbm: frame.header.rssi_dbm as f64,
        applied_plugins: Vec::new(),
        zero_power: false,
    }
}

/// Index range kept when narrowing `n` linear-order subcarriers to the centre
/// `target`.
pub fn narrow_window(n: usize, target: usize) -> Result<core::ops::Range<usize>, OpError> {
    if !matches!(target, 64 | 128) || target >= n {
        return Err(OpError::BadTarget { n, target });
    }
    let start = (n - target) / 2;
    Ok(start..start + target)
}

pub fn narrow_bandwidth(p: &PolarFrame, target: usize) -> Result<PolarFrame, OpError> {
    if p.header.subcarrier_order != SubcarrierOrder::LinearOrder {
        return Err(OpError::NotLinear);
    }
    let window = narrow_window(p.n(), target)?;
    let mut out = p.clone();
    out.amplitudes = p.amplitudes[window.clone()].to_vec();
    out.phases = p.phases[window].to_vec();
    out.header.bandwidth = Bandwidth::from_subcarriers(target).ok_or(OpError::BadTarget { n: p.n(), target })?;
    Ok(out)
}

/// Default null/guard set for a bandwidth, as logical indices: band edges and
/// DC. Pilots are left alone.
pub fn default_null_set(bandwidth: Bandwidth) -> Vec<i32> {
    match bandwidth {
        Bandwidth::Mhz20 => alloc::vec![-32, -31, -30, -29, 0, 29, 30, 31],
        Bandwidth::Mhz40 => (-64..=-59).chain(-1..=1).chain(59..=63).collect(),
        Bandwidth::Mhz80 => (-128..=-123).chain(-1..=1).chain(123..=127).collect(),
    }
}

/// Linear-order positions of logical `indices` for an `n`-subcarrier frame.
pub fn null_positions(n: usize, indices: &[i32]) -> Result<Vec<usize>, OpError> {
    let half = (n / 2) as i32;
    indices
        .iter()
        .map(|&index| {
            if (-half..half).contains(&index) {
                Ok((index + half) as usize)
            } else {
                Err(OpError::IndexOutOfRange { index, half })
            }
        })
        .collect()
}

pub fn null_guard_subcarriers(p: &PolarFrame, null_set: &[i32]) -> Result<PolarFrame, OpError> {
    if p.header.subcarrier_order != SubcarrierOrder::LinearOrder {
        return Err(OpError::NotLinear);
    }
    let positions = null_positions(p.n(), null_set)?;
    let mut out = p.clone();
    zero_positions(&mut out, &positions);
    Ok(out)
}

pub(crate) fn zero_positions(p: &mut PolarFrame, positions: &[usize]) {
    for &i in positions {
        p.amplitudes[i] = 0.0;
        p.phases[i] = 0.0;
    }
}

/// Scales amplitudes so their total power equals `rssi_dbm` in linear mW:
/// `Σ a'² = 10^(rssi/10)`.
pub fn compensate_agc(p: &PolarFrame, rssi_dbm: f64) -> Result<PolarFrame, OpError> {
    let mut out = p.clone();
    compensate_agc_in_place(&mut out, rssi_dbm)?;
    Ok(out)
}

pub(crate) fn compensate_agc_in_place(p: &mut PolarFrame, rssi_dbm: f64) -> Result<(), OpError> {
    let power: f64 = p.amplitudes.iter().map(|a| a * a).sum();
    if power <= 0.0 {
        return Err(OpError::ZeroPower);
    }
    let target = libm::pow(10.0, rssi_dbm / 10.0);
    let scale = libm::sqrt(target / power);
    for a in &mut p.amplitudes {
        *a *= scale;
    }
    Ok(())
}

/// Last smoothed RSSI per source.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SmoothingState {
    pub last: BTreeMap<MacAddr, f64>,
}

/// Exponential smoothing. The first sample of a source initialises it.
pub fn smooth_rssi(state: &mut SmoothingState, mac: MacAddr, x: f64, alpha: f64) -> Result<f64, OpError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(OpError::BadAlpha(alpha));
    }
    let s = match state.last.get(&mac) {
        Some(&prev) => alpha * x + (1.0 - alpha) * prev,
        None => x,
    };
    state.last.insert(mac, s);
    Ok(s)
}

/// Removes 2π jumps along the subcarrier axis. Every corrected step lies in
/// `(-π, π]` and each output differs from its input by a multiple of 2π.
pub fn unwrap_phase(p: &PolarFrame) -> Result<PolarFrame, OpError> {
    if p.header.subcarrier_order != SubcarrierOrder::LinearOrder {
        return Err(OpError::NotLinear);
    }
    let mut out = p.clone();
    unwrap_in_place(&mut out.phases);
    Ok(out)
}

pub(crate) fn unwrap_in_place(phases: &mut [f64]) {
    let mut offset = 0.0;
    let mut prev_in = match phases.first() {
        Some(&p) => p,
        None => return,
    };
    let mut prev_out = prev_in;
    for x in phases.iter_mut().skip(1) {
        let input = *x;
        let d = input - prev_in;
        let k = libm::ceil((d - PI) / TWO_PI);
        offset -= k * TWO_PI;
        let mut out = input + offset;
        // Rounding can push the step a hair past ±π; settle it by one more turn.
        let step = out - prev_out;
        if step > PI {
            offset -= TWO_PI;
            out = input + offset;
        } else if step <= -PI {
            offset += TWO_PI;
            out = input + offset;
        }
        prev_in = input;
        prev_out = out;
        *x = out;
    }
}
