//! The reference classifier process and its training step.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use csiscope_core::classify::{classify_window, train_centroids, CentroidModel, ClassifyError, FeatureSpec, Windower};
use csiscope_core::lineproto::{format_result_line, parse_frame_line};
use csiscope_core::pipeline::{ChainError, ChainOutput, Pipeline, PipelineState};
use csiscope_core::{ClassificationResult, MacAddr};

use crate::recording::{read_recording, Format, RecordError};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("{path}: {source}")]
    Recording { path: PathBuf, source: RecordError },
    #[error("model has {centroids} centroids of dimension {dim}, features need {expected}")]
    Inconsistent {
        centroids: usize,
        dim: usize,
        expected: usize,
    },
}

pub fn load_model(path: &Path) -> Result<CentroidModel, ModelError> {
    let model: CentroidModel = serde_json::from_slice(&std::fs::read(path)?)?;
    let expected = model.features.dim();
    if let Some(c) = model.centroids.iter().find(|c| c.len() != expected) {
        return Err(ModelError::Inconsistent {
            centroids: model.centroids.len(),
            dim: c.len(),
            expected,
        });
    }
    Ok(model)
}

pub fn save_model(path: &Path, model: &CentroidModel) -> Result<(), ModelError> {
    std::fs::write(path, serde_json::to_vec_pretty(model)?)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassifierRun {
    pub frames: u64,
    pub results: u64,
    pub bad_lines: u64,
    pub bad_windows: u64,
}

/// Reads `F` lines, windows them per source MAC and answers each full window
/// with an `R` line. `phases` says whether the sender appends phases, which
/// are ignored here.
pub fn run_classifier<R: BufRead, W: Write>(
    model: &CentroidModel,
    input: R,
    mut output: W,
    phases: bool,
) -> io::Result<ClassifierRun> {
    let mut windows: BTreeMap<MacAddr, Windower> = BTreeMap::new();
    let mut run = ClassifierRun::default();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f = match parse_frame_line(&line) {
            Ok(f) => f,
            Err(_) => {
                run.bad_lines += 1;
                continue;
            }
        };
        run.frames += 1;
        let mut values = f.values;
        if phases {
            values.truncate(values.len() / 2);
        }
        let w = windows
            .entry(f.source_mac)
            .or_insert_with(|| Windower::new(model.features.clone()));
        match w.push(values, f.timestamp_us) {
            None => {}
            Some(Ok((features, t))) => match classify_window(model, &features, t) {
                Ok(r) => {
                    output.write_all(format_result_line(&r).as_bytes())?;
                    output.flush()?;
                    run.results += 1;
                }
                Err(_) => run.bad_windows += 1,
            },
            Some(Err(_)) => run.bad_windows += 1,
        }
    }
    Ok(run)
}

/// Non-overlapping windows of the amplitude vectors, as `(features, end_us)`.
pub fn window_features(
    spec: &FeatureSpec,
    frames: impl IntoIterator<Item = (Vec<f64>, u64)>,
) -> Result<Vec<(Vec<f64>, u64)>, ClassifyError> {
    let mut w = Windower::new(spec.clone());
    let mut out = Vec::new();
    for (amps, t) in frames {
        if let Some(r) = w.push(amps, t) {
            out.push(r?);
        }
    }
    Ok(out)
}

/// Amplitude vectors with their timestamps.
pub type Timed = Vec<(Vec<f64>, u64)>;

/// Label and processed amplitudes of every frame in a recording. Raw formats
/// are run through the chain stored in their sidecar first.
pub fn recording_amplitudes(path: &Path) -> Result<(Option<String>, Timed), ModelError> {
    let wrap = |source| ModelError::Recording {
        path: path.into(),
        source,
    };
    let (meta, reader) = read_recording(path).map_err(wrap)?;
    let chain = meta.chain.filter(|_| meta.format != Format::CsvSimple);
    let mut replay = chain.map(|c| (c, Pipeline::default(), PipelineState::default()));
    let mut frames = Vec::new();
    for p in reader {
        let p = p.map_err(wrap)?;
        let t = p.raw.header.timestamp_us;
        match &mut replay {
            None => frames.push((p.polar.amplitudes, t)),
            Some((chain, pipe, state)) => match pipe.run_chain(p.raw, chain, state)? {
                ChainOutput::Processed(q) => frames.push((q.polar.amplitudes, t)),
                ChainOutput::Dropped { .. } => {}
            },
        }
    }
    Ok((meta.label, frames))
}

/// Class names come from the recording sidecars, falling back to file stems.
pub fn train_from_recordings(paths: &[PathBuf], spec: &FeatureSpec) -> Result<CentroidModel, ModelError> {
    let mut labelled = Vec::new();
    let mut labels = Vec::new();
    for (class, path) in paths.iter().enumerate() {
        let (label, frames) = recording_amplitudes(path)?;
        labels.push(label.unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("class-{class}"))
        }));
        for (f, _) in window_features(spec, frames)? {
            labelled.push((class as u32, f));
        }
    }
    let mut model = train_centroids(spec, paths.len(), &labelled)?;
    model.labels = labels;
    Ok(model)
}

pub fn classify_all(
    model: &CentroidModel,
    windows: &[(Vec<f64>, u64)],
) -> Result<Vec<ClassificationResult>, ClassifyError> {
    windows.iter().map(|(f, t)| classify_window(model, f, *t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use csiscope_core::lineproto::parse_result_line;

    fn model() -> CentroidModel {
        let spec = FeatureSpec {
            bands: vec![(0, 2)],
            window: 2,
        };
        train_centroids(&spec, 2, &[(0, vec![1.0, 0.0]), (1, vec![5.0, 0.0])]).unwrap()
    }

    #[test]
    fn answers_each_window() {
        let input = "F,1,020000000001,-50,1,1\nF,2,020000000001,-50,1,1\nnoise\nF,3,020000000001,-50,5,5\nF,4,020000000001,-50,5,5\n";
        let mut out = Vec::new();
        let run = run_classifier(&model(), input.as_bytes(), &mut out, false).unwrap();
        assert_eq!(run.frames, 4);
        assert_eq!(run.bad_lines, 1);
        let lines: Vec<_> = std::str::from_utf8(&out)
            .unwrap()
            .lines()
            .map(|l| parse_result_line(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 2);
        assert_eq!((lines[0].class_id, lines[0].window_end_us), (0, 2));
        assert_eq!((lines[1].class_id, lines[1].window_end_us), (1, 4));
    }

    #[test]
    fn windows_are_per_source() {
        let input = "F,1,020000000001,-50,1,1\nF,2,020000000002,-50,5,5\nF,3,020000000001,-50,1,1\n";
        let mut out = Vec::new();
        let run = run_classifier(&model(), input.as_bytes(), &mut out, false).unwrap();
        assert_eq!(run.results, 1);
        assert!(std::str::from_utf8(&out).unwrap().starts_with("R,0,"));
    }

    #[test]
    fn phases_are_ignored() {
        let input = "F,1,020000000001,-50,5,5,0.1,0.2\nF,2,020000000001,-50,5,5,3,3\n";
        let mut out = Vec::new();
        run_classifier(&model(), input.as_bytes(), &mut out, true).unwrap();
        assert!(std::str::from_utf8(&out).unwrap().starts_with("R,1,"));
    }
}
