//! Allocation-only core of csiscope: the CSI frame model, the WEF1 wire codec
//! and firmware payload ingest, a deterministic synthetic channel, the
//! priority-ordered preprocessing chain, and a reference nearest-centroid
//! classifier with its line protocol.
//!
//! Nothing here performs IO; sockets, files and processes live in the
//! `csiscope` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod classify;
pub mod codec;
pub mod lineproto;
pub mod model;
pub mod pipeline;
pub mod synth;

pub use model::{
    validate_frame, Bandwidth, ClassificationResult, ComplexSample, CsiFrame, FrameHeader, MacAddr, PolarFrame,
    ProcessedFrame, SubcarrierOrder, ValidationReport, Violation,
};
