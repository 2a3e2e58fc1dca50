//! Priority-ordered, runtime-reconfigurable preprocessing chain.
//!
//! A [`ChainConfig`] lists plugin instances with a priority and an enabled
//! flag. Enabled instances run in ascending priority, ties broken by id. The
//! configuration is validated against the shape of the incoming stream
//! (subcarrier count and order) before any frame is touched, so a chain that
//! e.g. narrows before reordering is rejected up front.

pub mod ops;
pub mod plugins;

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::{CsiFrame, PolarFrame, ProcessedFrame, SubcarrierOrder};
pub use ops::{OpError, SmoothingState};
pub use plugins::{Flow, Plugin, PluginRegistry, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl ParamValue {
    pub fn kind(&self) -> ParamKind {
        match self {
            ParamValue::Bool(_) => ParamKind::Bool,
            ParamValue::Number(_) => ParamKind::Number,
            ParamValue::Text(_) => ParamKind::Text,
        }
    }
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Number(v)
    }
}

impl From<&str> for ParamValue {
    fn from(v: &str) -> Self {
        ParamValue::Text(v.into())
    }
}

impl From<bool> for ParamValue {
    fn from(v: bool) -> Self {
        ParamValue::Bool(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Number,
    Text,
    Bool,
}

/// A parameter a plugin accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub kind: ParamKind,
}

impl ParamSpec {
    pub const fn new(name: &'static str, kind: ParamKind) -> Self {
        Self { name, kind }
    }
}

/// Typed read access to an instance's parameter map.
#[derive(Debug, Clone, Copy)]
pub struct Params<'a>(pub &'a BTreeMap<String, ParamValue>);

impl<'a> Params<'a> {
    pub fn number(&self, name: &str) -> Option<f64> {
        match self.0.get(name) {
            Some(ParamValue::Number(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn text(&self, name: &str) -> Option<&'a str> {
        match self.0.get(name) {
            Some(ParamValue::Text(v)) => Some(v.as_str()),
            _ => None,
        }
    }

    pub fn flag(&self, name: &str) -> Option<bool> {
        match self.0.get(name) {
            Some(ParamValue::Bool(v)) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginInstance {
    pub id: String,
    /// Plugin kind; defaults to the id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    pub priority: i64,
    pub enabled: bool,
    #[serde(default)]
    pub params: BTreeMap<String, ParamValue>,
}

impl PluginInstance {
    pub fn new(id: &str, priority: i64, enabled: bool) -> Self {
        Self {
            id: id.into(),
            kind: None,
            priority,
            enabled,
            params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: impl Into<ParamValue>) -> Self {
        self.params.insert(key.into(), value.into());
        self
    }

    pub fn kind(&self) -> &str {
        self.kind.as_deref().unwrap_or(&self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    #[serde(default)]
    pub version: u64,
    pub plugins: Vec<PluginInstance>,
}

impl ChainConfig {
    /// Every built-in plugin. Reordering, extraction, nulling, AGC
    /// compensation and unwrapping are enabled; MAC filtering, narrowing and
    /// RSSI smoothing start disabled.
    pub fn default_chain() -> Self {
        Self {
            version: 0,
            plugins: alloc::vec![
                PluginInstance::new("mac-filter", 0, false).with_param("allow", ""),
                PluginInstance::new("reorder", 10, true),
                PluginInstance::new("narrow", 15, false).with_param("target_n", 64.0),
                PluginInstance::new("extract", 20, true),
                PluginInstance::new("null", 30, true),
                PluginInstance::new("rssi-smooth", 35, false).with_param("alpha", plugins::DEFAULT_ALPHA),
                PluginInstance::new("agc", 40, true),
                PluginInstance::new("unwrap", 50, true),
            ],
        }
    }

    pub fn get(&self, id: &str) -> Option<&PluginInstance> {
        self.plugins.iter().find(|p| p.id == id)
    }

    /// Enabled instances in execution order.
    pub fn execution_order(&self) -> Vec<&PluginInstance> {
        let mut v: Vec<_> = self.plugins.iter().filter(|p| p.enabled).collect();
        v.sort_by(|a, b| a.priority.cmp(&b.priority).then_with(|| a.id.cmp(&b.id)));
        v
    }

    /// Checks id uniqueness, plugin kinds and parameter types.
    pub fn check(&self, registry: &PluginRegistry) -> Result<(), ChainError> {
        for (i, p) in self.plugins.iter().enumerate() {
            if self.plugins[..i].iter().any(|q| q.id == p.id) {
                return Err(ChainError::DuplicateId(p.id.clone()));
            }
            check_instance(p, registry)?;
        }
        Ok(())
    }
}

fn check_instance(p: &PluginInstance, registry: &PluginRegistry) -> Result<(), ChainError> {
    let plugin = registry
        .get(p.kind())
        .ok_or_else(|| ChainError::UnknownKind(p.kind().into()))?;
    for (key, value) in &p.params {
        check_param(&p.id, plugin, key, value)?;
    }
    Ok(())
}

fn check_param(id: &str, plugin: &dyn Plugin, key: &str, value: &ParamValue) -> Result<(), ChainError> {
    let spec = plugin
        .params()
        .iter()
        .find(|s| s.name == key)
        .ok_or_else(|| ChainError::UnknownParam {
            plugin: id.into(),
            param: key.into(),
        })?;
    if spec.kind != value.kind() {
        return Err(ChainError::BadParamType {
            plugin: id.into(),
            param: key.into(),
            expected: spec.kind,
        });
    }
    Ok(())
}

/// A runtime mutation of the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum ConfigCommand {
    Enable { id: String },
    Disable { id: String },
    SetPriority { id: String, priority: i64 },
    SetParam { id: String, key: String, value: ParamValue },
    Add { plugin: PluginInstance },
    Remove { id: String },
}

/// Applies `command`, returning the next configuration with its version
/// bumped. On error the input is left as it was.
pub fn update_chain(
    config: &ChainConfig,
    command: &ConfigCommand,
    registry: &PluginRegistry,
) -> Result<ChainConfig, ChainError> {
    let mut next = config.clone();
    let find = |next: &mut ChainConfig, id: &str| -> Result<usize, ChainError> {
        next.plugins
            .iter()
            .position(|p| p.id == id)
            .ok_or_else(|| ChainError::UnknownPlugin(id.into()))
    };
    match command {
        ConfigCommand::Enable { id } => {
            let i = find(&mut next, id)?;
            next.plugins[i].enabled = true;
        }
        ConfigCommand::Disable { id } => {
            let i = find(&mut next, id)?;
            next.plugins[i].enabled = false;
        }
        ConfigCommand::SetPriority { id, priority } => {
            let i = find(&mut next, id)?;
            next.plugins[i].priority = *priority;
        }
        ConfigCommand::SetParam { id, key, value } => {
            let i = find(&mut next, id)?;
            let inst = &next.plugins[i];
            let plugin = registry
                .get(inst.kind())
                .ok_or_else(|| ChainError::UnknownKind(inst.kind().into()))?;
            check_param(id, plugin, key, value)?;
            next.plugins[i].params.insert(key.clone(), value.clone());
        }
        ConfigCommand::Add { plugin } => {
            if next.get(&plugin.id).is_some() {
                return Err(ChainError::DuplicateId(plugin.id.clone()));
            }
            check_instance(plugin, registry)?;
            next.plugins.push(plugin.clone());
        }
        ConfigCommand::Remove { id } => {
            let i = find(&mut next, id)?;
            next.plugins.remove(i);
        }
    }
    next.version = config.version + 1;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChainError {
    #[error("unknown plugin id {0:?}")]
    UnknownPlugin(String),
    #[error("unknown plugin kind {0:?}")]
    UnknownKind(String),
    #[error("duplicate plugin id {0:?}")]
    DuplicateId(String),
    #[error("plugin {plugin:?} has no parameter {param:?}")]
    UnknownParam { plugin: String, param: String },
    #[error("parameter {param:?} of {plugin:?} must be {expected:?}")]
    BadParamType {
        plugin: String,
        param: String,
        expected: ParamKind,
    },
    #[error("chain invalid at {plugin:?}: {reason}")]
    ChainInvalid { plugin: String, reason: InvalidReason },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InvalidReason {
    #[error(transparent)]
    Op(OpError),
    #[error("bad value {value:?} for {param}")]
    BadValue { param: &'static str, value: String },
}

/// Subcarrier count and order of the stream at some point in the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamShape {
    pub n: usize,
    pub order: SubcarrierOrder,
}

impl StreamShape {
    pub fn of(frame: &CsiFrame) -> Self {
        Self {
            n: frame.n(),
            order: frame.header.subcarrier_order,
        }
    }
}

/// State carried across frames.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineState {
    pub smoothing: SmoothingState,
}

/// A frame in flight. The polar view is created on first demand.
#[derive(Debug, Clone)]
pub struct Working {
    pub raw: CsiFrame,
    pub polar: Option<PolarFrame>,
}

impl Working {
    pub fn new(raw: CsiFrame) -> Self {
        Self { raw, polar: None }
    }

    pub fn polar_mut(&mut self) -> &mut PolarFrame {
        let raw = &self.raw;
        self.polar.get_or_insert_with(|| ops::extract_amplitude_phase(raw))
    }

    fn finish(mut self, applied: Vec<String>) -> ProcessedFrame {
        let mut polar = self
            .polar
            .take()
            .unwrap_or_else(|| ops::extract_amplitude_phase(&self.raw));
        polar.applied_plugins = applied;
        ProcessedFrame { raw: self.raw, polar }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChainOutput {
    Processed(ProcessedFrame),
    Dropped { by: String },
}

/// A validated, configured chain for one input shape.
pub struct Plan {
    config: ChainConfig,
    input: StreamShape,
    output: StreamShape,
    stages: Vec<(String, Box<dyn Stage>)>,
}

impl Plan {
    pub fn build(config: &ChainConfig, input: StreamShape, registry: &PluginRegistry) -> Result<Self, ChainError> {
        config.check(registry)?;
        let mut shape = input;
        let mut stages = Vec::new();
        for inst in config.execution_order() {
            let plugin = registry
                .get(inst.kind())
                .ok_or_else(|| ChainError::UnknownKind(inst.kind().into()))?;
            let stage =
                plugin
                    .configure(&Params(&inst.params), &mut shape)
                    .map_err(|reason| ChainError::ChainInvalid {
                        plugin: inst.id.clone(),
                        reason,
                    })?;
            stages.push((inst.id.clone(), stage));
        }
        Ok(Self {
            config: config.clone(),
            input,
            output: shape,
            stages,
        })
    }

    pub fn output_shape(&self) -> StreamShape {
        self.output
    }

    pub fn run(&self, frame: CsiFrame, state: &mut PipelineState) -> ChainOutput {
        let mut work = Working::new(frame);
        let mut applied = Vec::with_capacity(self.stages.len());
        for (id, stage) in &self.stages {
            if stage.process(&mut work, state) == Flow::Drop {
                return ChainOutput::Dropped { by: id.clone() };
            }
            applied.push(id.clone());
        }
        ChainOutput::Processed(work.finish(applied))
    }
}

impl core::fmt::Debug for Plan {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Plan")
            .field("version", &self.config.version)
            .field("input", &self.input)
            .field("stages", &self.stages.iter().map(|(id, _)| id).collect::<Vec<_>>())
            .finish()
    }
}

/// Runs frames through whatever configuration it is handed, rebuilding the
/// plan only when the configuration or the input shape changes.
#[derive(Debug, Default)]
pub struct Pipeline {
    registry: PluginRegistry,
    plan: Option<Plan>,
}

impl Pipeline {
    pub fn new(registry: PluginRegistry) -> Self {
        Self { registry, plan: None }
    }

    pub fn registry(&self) -> &PluginRegistry {
        &self.registry
    }

    /// Validates `config` for a stream of the given shape without running it.
    pub fn validate(&self, config: &ChainConfig, input: StreamShape) -> Result<StreamShape, ChainError> {
        Plan::build(config, input, &self.registry).map(|p| p.output_shape())
    }

    pub fn run_chain(
        &mut self,
        frame: CsiFrame,
        config: &ChainConfig,
        state: &mut PipelineState,
    ) -> Result<ChainOutput, ChainError> {
        let shape = StreamShape::of(&frame);
        let stale = match &self.plan {
            Some(p) => p.input != shape || p.config != *config,
            None => true,
        };
        if stale {
            self.plan = None;
            self.plan = Some(Plan::build(config, shape, &self.registry)?);
        }
        let plan = self.plan.as_ref().expect("plan built above");
        Ok(plan.run(frame, state))
    }
}
