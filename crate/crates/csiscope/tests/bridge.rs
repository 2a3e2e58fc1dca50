mod common;

use std::time::{Duration, Instant};

use common::synth_processed;
use csiscope::bridge::{spawn_classifier, BridgeError, BridgeOptions};
use proptest::prelude::*;

fn sh(script: &str) -> (String, Vec<String>) {
    ("sh".into(), vec!["-c".into(), script.into()])
}

fn blocking() -> BridgeOptions {
    BridgeOptions {
        block_when_full: true,
        ..BridgeOptions::default()
    }
}

#[test]
fn one_result_per_line_from_a_shell_classifier() {
    let (cmd, args) = sh(r#"i=0; while read -r line; do i=$((i+1)); echo "R,$((i % 3)),0.5,$i"; done"#);
    let mut b = spawn_classifier(&cmd, &args, blocking()).unwrap();
    let frames = synth_processed("pattern-a", 40);
    for p in &frames {
        b.send_frame(p).unwrap();
    }
    let results = b.finish(Duration::from_secs(10));
    assert_eq!(results.len(), 40);
    assert_eq!(results[39].window_end_us, 40);
    assert_eq!(results[2].class_id, 0);
    assert_eq!(b.malformed(), 0);
    assert_eq!(b.stats().frames_sent, 40);
    assert!(!b.is_alive());
}

#[test]
fn lines_reach_the_child_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("seen.txt");
    let (cmd, args) = sh(&format!("cat > '{}'", out.display()));
    let mut b = spawn_classifier(
        &cmd,
        &args,
        BridgeOptions {
            include_phases: true,
            ..blocking()
        },
    )
    .unwrap();
    let frames = synth_processed("idle", 5);
    for p in &frames {
        b.send_frame(p).unwrap();
    }
    b.finish(Duration::from_secs(10));
    let text = std::fs::read_to_string(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    for (line, p) in lines.iter().zip(&frames) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0], "F");
        assert_eq!(fields[1], p.header().timestamp_us.to_string());
        assert_eq!(fields[2], "02005e000001");
        assert_eq!(fields.len(), 4 + 128);
        let amps: Vec<f64> = fields[4..68].iter().map(|s| s.parse().unwrap()).collect();
        assert_eq!(amps, p.polar.amplitudes);
        let phases: Vec<f64> = fields[68..].iter().map(|s| s.parse().unwrap()).collect();
        assert_eq!(phases, p.polar.phases);
    }
}

#[test]
fn missing_binary_is_spawn_failed() {
    match spawn_classifier("/no/such/classifier", &[], BridgeOptions::default()) {
        Err(BridgeError::SpawnFailed { cmd, .. }) => assert_eq!(cmd, "/no/such/classifier"),
        Err(e) => panic!("{e}"),
        Ok(_) => panic!("spawned a missing binary"),
    }
}

#[test]
fn early_exit_is_reported_not_fatal() {
    let (cmd, args) = sh("echo R,1,0.75,9; exit 3");
    let mut b = spawn_classifier(&cmd, &args, blocking()).unwrap();
    let deadline = Instant::now() + Duration::from_secs(5);
    while b.is_alive() && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(5));
    }
    assert!(!b.is_alive());
    assert_eq!(b.exit_status().unwrap().code(), Some(3));
    let frames = synth_processed("idle", 50);
    let mut broken = 0;
    for p in &frames {
        if let Err(BridgeError::BrokenPipe) = b.send_frame(p) {
            broken += 1;
        }
    }
    assert_eq!(broken, 50);
    let mut results = b.poll_results();
    let deadline = Instant::now() + Duration::from_secs(5);
    while results.is_empty() && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(5));
        results = b.poll_results();
    }
    assert_eq!(results.len(), 1);
    assert_eq!(results[0].class_id, 1);
}

#[test]
fn stuck_child_never_blocks_the_sender() {
    let (cmd, args) = sh("sleep 30");
    let mut b = spawn_classifier(
        &cmd,
        &args,
        BridgeOptions {
            queue_depth: 8,
            ..BridgeOptions::default()
        },
    )
    .unwrap();
    let frames = synth_processed("pattern-b", 9);
    let t0 = Instant::now();
    for _ in 0..200 {
        for p in &frames {
            b.send_frame(p).unwrap();
        }
    }
    assert!(t0.elapsed() < Duration::from_secs(5));
    let s = b.stats();
    assert_eq!(s.frames_sent + s.frames_dropped, 1800);
    assert!(s.frames_dropped > 0);
    let t0 = Instant::now();
    b.kill();
    assert!(t0.elapsed() < Duration::from_secs(2));
    assert!(!b.is_alive());
}

#[test]
fn grandchild_holding_pipes_does_not_wedge_finish() {
    let (cmd, args) = sh("sleep 30 & echo R,0,1,1");
    let mut b = spawn_classifier(&cmd, &args, blocking()).unwrap();
    let t0 = Instant::now();
    let results = b.finish(Duration::from_millis(300));
    assert!(t0.elapsed() < Duration::from_secs(3));
    assert_eq!(results.len(), 1);
}

#[test]
fn endless_unterminated_output_counts_once() {
    let (cmd, args) = sh("head -c 300000 /dev/zero | tr '\\0' x");
    let mut b = spawn_classifier(&cmd, &args, blocking()).unwrap();
    let results = b.finish(Duration::from_secs(10));
    assert!(results.is_empty());
    assert_eq!(b.malformed(), 1);
}

#[derive(Debug, Clone)]
enum Piece {
    Valid(u32, u64),
    Garbage(Vec<u8>),
    Blank,
}

fn arb_piece() -> impl Strategy<Value = Piece> {
    prop_oneof![
        (0u32..8, any::<u64>()).prop_map(|(c, t)| Piece::Valid(c, t)),
        prop::collection::vec(any::<u8>().prop_filter("no newline", |b| *b != b'\n'), 1..200).prop_map(|mut v| {
            v[0] = b'#';
            Piece::Garbage(v)
        }),
        Just(Piece::Blank),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    /// Whatever the child prints, every well-formed line is delivered and
    /// every other non-blank line is counted exactly once.
    #[test]
    fn fuzzed_stdout_counts_match(pieces in prop::collection::vec(arb_piece(), 0..60), tail in prop::option::of(prop::collection::vec(1u8..=255, 1..40))) {
        let mut bytes = Vec::new();
        let (mut valid, mut bad) = (0usize, 0u64);
        for p in &pieces {
            match p {
                Piece::Valid(c, t) => {
                    bytes.extend_from_slice(format!("R,{c},0.25,{t}\n").as_bytes());
                    valid += 1;
                }
                Piece::Garbage(g) => {
                    bytes.extend_from_slice(g);
                    bytes.push(b'\n');
                    bad += 1;
                }
                Piece::Blank => bytes.push(b'\n'),
            }
        }
        if let Some(t) = &tail {
            bytes.extend(t.iter().filter(|b| **b != b'\n'));
            bad += 1;
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.bin");
        std::fs::write(&path, &bytes).unwrap();
        let (cmd, args) = sh(&format!("cat '{}'", path.display()));
        let mut b = spawn_classifier(&cmd, &args, blocking()).unwrap();
        for p in synth_processed("idle", 3) {
            let _ = b.send_frame(&p);
        }
        let results = b.finish(Duration::from_secs(10));
        prop_assert_eq!(results.len(), valid);
        prop_assert_eq!(b.malformed(), bad);
    }
}
