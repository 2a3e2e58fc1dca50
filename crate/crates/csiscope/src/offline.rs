//! Batch jobs behind the CLI: replaying captures into recordings, writing
//! synthetic captures, recording a live source and scoring a model.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use csiscope_core::classify::{classify_window, evaluate_fscore, CentroidModel, FScoreReport};
use csiscope_core::codec::encode_wire_frame;
use csiscope_core::pipeline::{ChainConfig, ChainError, ChainOutput, Pipeline, PipelineState};
use csiscope_core::synth::{generate_synthetic_frame, SynthProfile};
use csiscope_core::{CsiFrame, ProcessedFrame};

use crate::centroid::{recording_amplitudes, window_features, ModelError};
use crate::pcap::{PcapError, PcapReader, PcapStats, PcapWriter};
use crate::recording::{open_recording, Format, RecordError, Recorder, RecordingMeta, RecordingWriter};
use crate::source::{now_us, open_source, Next, SourceError, SourceUri};

#[derive(Debug, thiserror::Error)]
pub enum OfflineError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad chain file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Pcap(#[from] PcapError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Data(String),
}

pub fn load_chain(path: &Path) -> Result<ChainConfig, OfflineError> {
    let chain: ChainConfig = serde_json::from_slice(&std::fs::read(path)?)?;
    chain.check(Pipeline::default().registry())?;
    Ok(chain)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProcessSummary {
    pub frames_in: u64,
    pub recorded: u64,
    pub dropped: u64,
    pub chain_errors: u64,
}

/// Runs frames through `chain` into a recording that is created on the
/// first output frame, once N is known.
pub struct ChainRecorder {
    pipeline: Pipeline,
    state: PipelineState,
    chain: ChainConfig,
    path: PathBuf,
    format: Format,
    label: Option<String>,
    writer: Option<RecordingWriter<BufWriter<File>>>,
    summary: ProcessSummary,
}

impl ChainRecorder {
    pub fn new(chain: ChainConfig, path: &Path, format: Format, label: Option<String>) -> Self {
        Self {
            pipeline: Pipeline::default(),
            state: PipelineState::default(),
            chain,
            path: path.into(),
            format,
            label,
            writer: None,
            summary: ProcessSummary::default(),
        }
    }

    pub fn push(&mut self, frame: CsiFrame) -> Result<Option<ProcessedFrame>, RecordError> {
        self.summary.frames_in += 1;
        match self.pipeline.run_chain(frame, &self.chain, &mut self.state) {
            Ok(ChainOutput::Processed(p)) => {
                if self.writer.is_none() {
                    self.writer = Some(open_recording(&RecordingMeta {
                        format: self.format,
                        path: self.path.clone(),
                        started_us: now_us(),
                        chain_version: self.chain.version,
                        label: self.label.clone(),
                        n_subcarriers: p.n(),
                        subcarrier_order: p.header().subcarrier_order,
                        chain: Some(self.chain.clone()),
                    })?);
                }
                if let Some(w) = &mut self.writer {
                    w.append(&p)?;
                }
                self.summary.recorded += 1;
                Ok(Some(p))
            }
            Ok(ChainOutput::Dropped { .. }) => {
                self.summary.dropped += 1;
                Ok(None)
            }
            Err(_) => {
                self.summary.chain_errors += 1;
                Ok(None)
            }
        }
    }

    pub fn finish(mut self) -> Result<ProcessSummary, RecordError> {
        if let Some(w) = &mut self.writer {
            w.flush()?;
        }
        Ok(self.summary)
    }
}

/// Replays a pcap through `chain` as fast as possible into a recording.
pub fn replay_pcap(
    pcap: &Path,
    port: u16,
    chain: &ChainConfig,
    out: &Path,
    format: Format,
    label: Option<String>,
) -> Result<(ProcessSummary, PcapStats), OfflineError> {
    let file = File::open(pcap).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => OfflineError::Source(SourceError::FileNotFound(pcap.into())),
        _ => OfflineError::Io(e),
    })?;
    let mut reader = PcapReader::with_options(BufReader::new(file), port, Default::default())?;
    let mut rec = ChainRecorder::new(chain.clone(), out, format, label);
    while let Some(frame) = reader.next_frame()? {
        rec.push(frame)?;
    }
    Ok((rec.finish()?, reader.stats()))
}

/// Writes `frames` synthetic frames as WEF1 datagrams in a pcap.
pub fn synth_pcap(
    profile: &SynthProfile,
    frames: u64,
    start_us: u64,
    port: u16,
    out: &Path,
) -> Result<u64, OfflineError> {
    profile.validate().map_err(|e| OfflineError::Data(e.to_string()))?;
    let mut w = PcapWriter::new(BufWriter::new(File::create(out)?))?;
    for i in 0..frames {
        let t = profile.frame_time_us(start_us, i);
        let f = generate_synthetic_frame(profile, t);
        let bytes = encode_wire_frame(&f).map_err(|e| OfflineError::Data(e.to_string()))?;
        w.write_udp(t, port, &bytes)?;
    }
    w.flush()?;
    Ok(frames)
}

/// Records a live source through `chain` until `max_frames` input frames,
/// `max_duration`, the end of the stream, or `stop` is raised.
#[allow(clippy::too_many_arguments)]
pub fn record_source(
    uri: &SourceUri,
    chain: &ChainConfig,
    out: &Path,
    format: Format,
    label: Option<String>,
    max_frames: Option<u64>,
    max_duration: Option<Duration>,
    stop: &AtomicBool,
) -> Result<ProcessSummary, OfflineError> {
    let mut source = open_source(uri)?;
    let mut pipeline = Pipeline::default();
    let mut state = PipelineState::default();
    let mut recorder: Option<Recorder> = None;
    let mut summary = ProcessSummary::default();
    let started = Instant::now();
    loop {
        if stop.load(Ordering::Relaxed)
            || max_frames.is_some_and(|m| summary.frames_in >= m)
            || max_duration.is_some_and(|d| started.elapsed() >= d)
        {
            break;
        }
        let frame = match source.next_frame(Duration::from_millis(50))? {
            Next::Frame(f) => f,
            Next::Timeout => continue,
            Next::EndOfStream => break,
        };
        summary.frames_in += 1;
        match pipeline.run_chain(frame, chain, &mut state) {
            Ok(ChainOutput::Processed(p)) => {
                if recorder.is_none() {
                    recorder = Some(Recorder::start(RecordingMeta {
                        format,
                        path: out.into(),
                        started_us: now_us(),
                        chain_version: chain.version,
                        label: label.clone(),
                        n_subcarriers: p.n(),
                        subcarrier_order: p.header().subcarrier_order,
                        chain: Some(chain.clone()),
                    })?);
                }
                if let Some(r) = &recorder {
                    r.append(p)?;
                    summary.recorded += 1;
                }
            }
            Ok(ChainOutput::Dropped { .. }) => summary.dropped += 1,
            Err(_) => summary.chain_errors += 1,
        }
    }
    if let Some(r) = recorder {
        r.stop()?;
    }
    Ok(summary)
}

/// Recordings in `dir`, sorted by name, skipping sidecars.
pub fn recordings_in(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && !p.to_string_lossy().ends_with(".meta.json"))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Scores `model` on every recording in `dir`. A recording's class is its
/// label (or file stem) looked up in the model's label list.
pub fn eval_dir(model: &CentroidModel, dir: &Path) -> Result<FScoreReport, OfflineError> {
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for path in recordings_in(dir)? {
        let (label, frames) = recording_amplitudes(&path)?;
        let label = label.unwrap_or_else(|| path.file_stem().unwrap_or_default().to_string_lossy().into_owned());
        let class = model
            .class_of_label(&label)
            .ok_or_else(|| OfflineError::Data(format!("{}: label {label:?} is not in the model", path.display())))?;
        let windows = window_features(&model.features, frames).map_err(ModelError::from)?;
        for (f, t) in windows {
            preds.push(classify_window(model, &f, t).map_err(ModelError::from)?.class_id);
            labels.push(class);
        }
    }
    if labels.is_empty() {
        return Err(OfflineError::Data(format!("no windows found in {}", dir.display())));
    }
    Ok(evaluate_fscore(&preds, &labels).map_err(ModelError::from)?)
}

pub fn print_report(out: &mut impl Write, model: &CentroidModel, r: &FScoreReport) -> io::Result<()> {
    writeln!(
        out,
        "{:<16} {:>8} {:>9} {:>7} {:>7}",
        "class", "support", "precision", "recall", "f1"
    )?;
    for c in &r.per_class {
        let name = model
            .labels
            .get(c.class_id as usize)
            .cloned()
            .unwrap_or_else(|| c.class_id.to_string());
        writeln!(
            out,
            "{:<16} {:>8} {:>9.4} {:>7.4} {:>7.4}",
            name, c.support, c.precision, c.recall, c.f1
        )?;
    }
    writeln!(out, "macro F1 {:.4}", r.macro_f1)
}
