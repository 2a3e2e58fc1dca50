use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use csiscope::centroid::load_model;
use csiscope::offline::{eval_dir, load_chain, print_report, record_source, replay_pcap, synth_pcap};
use csiscope::recording::Format;
use csiscope::server::Server;
use csiscope::session::{Session, SessionConfig};
use csiscope::source::{default_port, SourceUri};
use csiscope_core::pipeline::ChainConfig;
use csiscope_core::synth::SynthProfile;

#[derive(Parser)]
#[command(name = "csiscope", version, about = "Capture, process and record Wi-Fi CSI")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Serve a source to WebSocket clients on /ws.
    Serve {
        /// udp://host:port, pcap://file or synth://profile
        #[arg(long)]
        source: Option<SourceUri>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        #[arg(long)]
        chain: Option<PathBuf>,
        /// Envelopes buffered per client before frames are dropped.
        #[arg(long, default_value_t = 256)]
        client_queue: usize,
    },
    /// Record a source through the chain.
    Record {
        #[arg(long)]
        source: SourceUri,
        #[arg(long, default_value = "binary")]
        format: Format,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        chain: Option<PathBuf>,
        /// Stop after this many input frames.
        #[arg(long)]
        frames: Option<u64>,
        /// Stop after this many seconds.
        #[arg(long)]
        seconds: Option<f64>,
    },
    /// Replay a pcap through the chain into a recording, as fast as possible.
    Replay {
        #[arg(long)]
        pcap: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "binary")]
        format: Format,
        #[arg(long)]
        chain: Option<PathBuf>,
        #[arg(long)]
        label: Option<String>,
        /// UDP port carrying CSI; defaults to CSISCOPE_UDP_PORT or 5500.
        #[arg(long)]
        port: Option<u16>,
    },
    /// Score a centroid model on a directory of labelled recordings.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Write a synthetic capture as a pcap of WEF1 datagrams.
    Synth {
        #[arg(long, default_value = "idle")]
        profile: String,
        #[arg(long, default_value_t = 90)]
        frames: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, default_value_t = 0)]
        start_us: u64,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default chain as JSON, a starting point for --chain.
    Chain,
}

fn chain_or_default(path: Option<&PathBuf>) -> Result<ChainConfig, Box<dyn std::error::Error>> {
    Ok(match path {
        Some(p) => load_chain(p)?,
        None => ChainConfig::default_chain(),
    })
}

fn stop_flag() -> Arc<AtomicBool> {
    let stop = Arc::new(AtomicBool::new(false));
    let s = stop.clone();
    let _ = ctrlc::set_handler(move || s.store(true, Ordering::Relaxed));
    stop
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.cmd {
        Cmd::Serve {
            source,
            listen,
            chain,
            client_queue,
        } => {
            let mut session = Session::new(SessionConfig {
                chain: chain_or_default(chain.as_ref())?,
                client_queue,
                ..SessionConfig::default()
            });
            if let Some(uri) = source {
                session.set_source(uri)?;
            }
            let stop = stop_flag();
            let server = Server::start(listen, session)?;
            eprintln!("listening on ws://{}/ws", server.local_addr());
            while !stop.load(Ordering::Relaxed) {
                std::thread::sleep(Duration::from_millis(100));
            }
            server.shutdown();
        }
        Cmd::Record {
            source,
            format,
            out,
            label,
            chain,
            frames,
            seconds,
        } => {
            let chain = chain_or_default(chain.as_ref())?;
            let stop = stop_flag();
            let s = record_source(
                &source,
                &chain,
                &out,
                format,
                label,
                frames,
                seconds.map(Duration::from_secs_f64),
                &stop,
            )?;
            eprintln!(
                "{} frames in, {} recorded, {} dropped by the chain, {} rejected",
                s.frames_in, s.recorded, s.dropped, s.chain_errors
            );
        }
        Cmd::Replay {
            pcap,
            out,
            format,
            chain,
            label,
            port,
        } => {
            let chain = chain_or_default(chain.as_ref())?;
            let (s, p) = replay_pcap(&pcap, port.unwrap_or_else(default_port), &chain, &out, format, label)?;
            eprintln!(
                "{} packets, {} frames, {} skipped, {} ignored; {} recorded",
                p.records, p.frames, p.skipped, p.ignored, s.recorded
            );
        }
        Cmd::Eval { model, data } => {
            let model = load_model(&model)?;
            let report = eval_dir(&model, &data)?;
            print_report(&mut std::io::stdout().lock(), &model, &report)?;
        }
        Cmd::Synth {
            profile,
            frames,
            seed,
            noise,
            start_us,
            port,
            out,
        } => {
            let mut p = SynthProfile::builtin(&profile)?;
            if let Some(s) = seed {
                p.rng_seed = s;
            }
            if let Some(n) = noise {
                p.noise_sigma = n;
            }
            synth_pcap(&p, frames, start_us, port.unwrap_or_else(default_port), &out)?;
        }
        Cmd::Chain => println!("{}", serde_json::to_string_pretty(&ChainConfig::default_chain())?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("csiscope: {e}");
            ExitCode::FAILURE
        }
    }
}
