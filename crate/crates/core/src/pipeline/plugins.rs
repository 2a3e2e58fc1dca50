//! Built-in preprocessing plugins.
//!
//! A plugin is a factory: [`Plugin::configure`] checks its parameters against
//! the shape of the stream reaching it, rewrites that shape for the next
//! plugin, and returns a [`Stage`] that does the per-frame work. Adding a new
//! filter means implementing both traits and registering the plugin.

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::string::ToString;
use alloc::vec::Vec;

use super::ops::{self, OpError};
use super::{InvalidReason, ParamKind, ParamSpec, Params, PipelineState, StreamShape, Working};
use crate::model::{Bandwidth, MacAddr, SubcarrierOrder};

/// Outcome of one stage on one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Drop,
}

pub trait Stage: Send {
    fn process(&self, work: &mut Working, state: &mut PipelineState) -> Flow;
}

pub trait Plugin: Send + Sync {
    fn kind(&self) -> &'static str;

    fn params(&self) -> &'static [ParamSpec] {
        &[]
    }

    fn configure(&self, params: &Params<'_>, shape: &mut StreamShape) -> Result<Box<dyn Stage>, InvalidReason>;
}

fn require_linear(shape: &StreamShape) -> Result<(), InvalidReason> {
    if shape.order == SubcarrierOrder::LinearOrder {
        Ok(())
    } else {
        Err(InvalidReason::Op(OpError::NotLinear))
    }
}

pub struct MacFilter;

struct MacFilterStage(BTreeSet<MacAddr>);

impl Plugin for MacFilter {
    fn kind(&self) -> &'static str {
        "mac-filter"
    }

    fn params(&self) -> &'static [ParamSpec] {
        const { &[ParamSpec::new("allow", ParamKind::Text)] }
    }

    fn configure(&self, params: &Params<'_>, _: &mut StreamShape) -> Result<Box<dyn Stage>, InvalidReason> {
        let allow = params
            .text("allow")
            .unwrap_or("")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|_| InvalidReason::BadValue {
                    param: "allow",
                    value: s.to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Box::new(MacFilterStage(allow)))
    }
}

impl Stage for MacFilterStage {
    fn process(&self, work: &mut Working, _: &mut PipelineState) -> Flow {
        if ops::filter_mac(&work.raw.header.source_mac, &self.0) {
            Flow::Continue
        } else {
            Flow::Drop
        }
    }
}

pub struct Reorder;

struct ReorderStage;

impl Plugin for Reorder {
    fn kind(&self) -> &'static str {
        "reorder"
    }

    fn configure(&self, _: &Params<'_>, shape: &mut StreamShape) -> Result<Box<dyn Stage>, InvalidReason> {
        shape.order = SubcarrierOrder::LinearOrder;
        Ok(Box::new(ReorderStage))
    }
}

impl Stage for ReorderStage {
    fn process(&self, work: &mut Working, _: &mut PipelineState) -> Flow {
        // AlreadyLinear is a no-op.
        if let Ok(linear) = ops::reorder_subcarriers(&work.raw) {
            work.raw = linear;
            if let Some(p) = work.polar.as_mut() {
                let _ = ops::reorder_polar(p);
            }
        }
        Flow::Continue
    }
}

pub struct Extract;

struct ExtractStage;

impl Plugin for Extract {
    fn kind(&self) -> &'static str {
        "extract"
    }

    fn configure(&self, _: &Params<'_>, _: &mut StreamShape) -> Result<Box<dyn Stage>, InvalidReason> {
        Ok(Box::new(ExtractStage))
    }
}

impl Stage for ExtractStage {
    fn process(&self, work: &mut Working, _: &mut PipelineState) -> Flow {
        work.polar_mut();
        Flow::Continue
    }
}

pub struct Narrow;

struct NarrowStage {
    window: core::ops::Range<usize>,
    bandwidth: Bandwidth,
}

impl Plugin for Narrow {
    fn kind(&self) -> &'static str {
        "narrow"
    }

    fn params(&self) -> &'static [ParamSpec] {
        const { &[ParamSpec::new("target_n", ParamKind::Number)] }
    }

    fn configure(&self, params: &Params<'_>, shape: &mut StreamShape) -> Result<Box<dyn Stage>, InvalidReason> {
        require_linear(shape)?;
        let target = params.number("target_n").unwrap_or(64.0);
        if target.fract() != 0.0 || target < 0.0 {
            return Err(InvalidReason::BadValue {
                param: "target_n",
                value: alloc::format!("{target}"),
            });
        }
        let target = target as usize;
        let window = ops::narrow_window(shape.n, target).map_err(InvalidReason::Op)?;
        shape.n = target;
        Ok(Box::new(NarrowStage {
            window,
            bandwidth: Bandwidth::from_subcarriers(target).unwrap_or(Bandwidth::Mhz20),
        }))
    }
}

impl Stage for NarrowStage {
    fn process(&self, work: &mut Working, _: &mut PipelineState) -> Flow {
        let w = self.window.clone();
        work.raw.csi = work.raw.csi[w.clone()].to_vec();
        work.raw.header.bandwidth = self.bandwidth;
        if let Some(p) = work.polar.as_mut() {
            p.amplitudes = p.amplitudes[w.clone()].to_vec();
            p.phases = p.phases[w].to_vec();
            p.header.bandwidth = self.bandwidth;
        }
        Flow::Continue
    }
}

pub struct NullGuard;

struct NullStage(Vec<usize>);

impl Plugin for NullGuard {
    fn kind(&self) -> &'static str {
        "null"
    }

    fn params(&self) -> &'static [ParamSpec] {
        const { &[ParamSpec::new("indices", ParamKind::Text)] }
    }

    fn configure(&self, params: &Params<'_>, shape: &mut StreamShape) -> Result<Box<dyn Stage>, InvalidReason> {
        require_linear(shape)?;
        let indices: Vec<i32> = match params.text("indices") {
            None => ops::default_null_set(Bandwidth::from_subcarriers(shape.n).unwrap_or(Bandwidth::Mhz20)),
            Some(list) => list
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse().map_err(|_| InvalidReason::BadValue {
                        param: "indices",
                        value: s.to_string(),
                    })
                })
                .collect::<Result<_, _>>()?,
        };
        let positions = ops::null_positions(shape.n, &indices).map_err(InvalidReason::Op)?;
        Ok(Box::new(NullStage(positions)))
    }
}

impl Stage for NullStage {
    fn process(&self, work: &mut Working, _: &mut PipelineState) -> Flow {
        ops::zero_positions(work.polar_mut(), &self.0);
        Flow::Continue
    }
}

pub struct Agc;

struct AgcStage;

impl Plugin for Agc {
    fn kind(&self) -> &'static str {
        "agc"
    }

    fn configure(&self, _: &Params<'_>, _: &mut StreamShape) -> Result<Box<dyn Stage>, InvalidReason> {
        Ok(Box::new(AgcStage))
    }
}

impl Stage for AgcStage {
    fn process(&self, work: &mut Working, _: &mut PipelineState) -> Flow {
        let p = work.polar_mut();
        let rssi = p.rssi_smoothed_dbm;
        if ops::compensate_agc_in_place(p, rssi).is_err() {
            p.zero_power = true;
        }
        Flow::Continue
    }
}

pub const DEFAULT_ALPHA: f64 = 0.1;

pub struct RssiSmooth;

struct SmoothStage(f64);

impl Plugin for RssiSmooth {
    fn kind(&self) -> &'static str {
        "rssi-smooth"
    }

    fn params(&self) -> &'static [ParamSpec] {
        const { &[ParamSpec::new("alpha", ParamKind::Number)] }
    }

    fn configure(&self, params: &Params<'_>, _: &mut StreamShape) -> Result<Box<dyn Stage>, InvalidReason> {
        let alpha = params.number("alpha").unwrap_or(DEFAULT_ALPHA);
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(InvalidReason::Op(OpError::BadAlpha(alpha)));
        }
        Ok(Box::new(SmoothStage(alpha)))
    }
}

impl Stage for SmoothStage {
    fn process(&self, work: &mut Working, state: &mut PipelineState) -> Flow {
        let mac = work.raw.header.source_mac;
        let x = work.raw.header.rssi_dbm as f64;
        if let Ok(s) = ops::smooth_rssi(&mut state.smoothing, mac, x, self.0) {
            work.polar_mut().rssi_smoothed_dbm = s;
        }
        Flow::Continue
    }
}

pub struct Unwrap;

struct UnwrapStage;

impl Plugin for Unwrap {
    fn kind(&self) -> &'static str {
        "unwrap"
    }

    fn configure(&self, _: &Params<'_>, shape: &mut StreamShape) -> Result<Box<dyn Stage>, InvalidReason> {
        require_linear(shape)?;
        Ok(Box::new(UnwrapStage))
    }
}

impl Stage for UnwrapStage {
    fn process(&self, work: &mut Working, _: &mut PipelineState) -> Flow {
        ops::unwrap_in_place(&mut work.polar_mut().phases);
        Flow::Continue
    }
}

/// Known plugin kinds.
pub struct PluginRegistry {
    plugins: Vec<Box<dyn Plugin>>,
}

impl PluginRegistry {
    pub fn empty() -> Self {
        Self { plugins: Vec::new() }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(MacFilter));
        r.register(Box::new(Reorder));
        r.register(Box::new(Extract));
        r.register(Box::new(Narrow));
        r.register(Box::new(NullGuard));
        r.register(Box::new(Agc));
        r.register(Box::new(RssiSmooth));
        r.register(Box::new(Unwrap));
        r
    }

    /// Adds a plugin kind, replacing any earlier one with the same name.
    pub fn register(&mut self, plugin: Box<dyn Plugin>) {
        self.plugins.retain(|p| p.kind() != plugin.kind());
        self.plugins.push(plugin);
    }

    pub fn get(&self, kind: &str) -> Option<&dyn Plugin> {
        self.plugins.iter().find(|p| p.kind() == kind).map(|p| &**p)
    }

    pub fn kinds(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.plugins.iter().map(|p| p.kind())
    }
}

impl Default for PluginRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl core::fmt::Debug for PluginRegistry {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_list().entries(self.kinds()).finish()
    }
}
