//! Command-line front end: codebook training, encode/decode, allocation
//! analysis, and corpus evaluation sweeps.
//!
//! Exit codes are scriptable: 0 success, 2 I/O (including a corpus with no
//! WAV files), 3 configuration, 4 codebook mismatch, 5 corrupt stream.
//! Argument errors caught by the parser itself (unknown flags, missing
//! required arguments) also exit 2.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::allocator::{ratios_for_target, GranularityRatios, TargetPolicy};
use crate::audio::{load_wav, normalize_peak, save_wav, TARGET_SAMPLE_RATE};
use crate::bitstream::{measure_bitrate, pack, unpack};
use crate::error::{Error, Result};
use crate::metrics::{mel_distance, snr, stft_distance};
use crate::pipeline::{
    analyze_signal, decode, encode, train_codebook_set, CodebookSet, CodecConfig,
};
use crate::transform::{FINE_FRAME_RATE, STRIDE};

#[derive(Parser)]
#[command(
    name = "tfc",
    version,
    about = "Variable-frame-rate speech codec with entropy-driven granularity"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the three per-tier codebook files from a WAV corpus.
    TrainCodebooks {
        /// Directory holding 24 kHz training WAVs.
        corpus_dir: PathBuf,
        /// Output directory for fine.tfcb / medium.tfcb / coarse.tfcb.
        out_dir: PathBuf,
        /// Quantizer stages to train per tier.
        #[arg(long, default_value_t = 32)]
        nq: usize,
        /// Codebook size exponent: each stage holds 2^bits entries.
        #[arg(long, default_value_t = 10)]
        bits: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Refinement iterations per codebook.
        #[arg(long, default_value_t = 25)]
        iters: usize,
    },
    /// Encode a WAV into a coded stream.
    Encode {
        input: PathBuf,
        output: PathBuf,
        /// Granularity ratios "fine,medium,coarse" (must sum to 1).
        #[arg(long)]
        ratios: Option<String>,
        /// Average frame rate to hit instead of explicit ratios.
        #[arg(long)]
        target_hz: Option<f64>,
        /// Two-tier mix used to realize --target-hz.
        #[arg(long, default_value = "fine_coarse_mix")]
        policy: String,
        /// Quantizer stages to emit.
        #[arg(long, default_value_t = 8)]
        nq: usize,
        /// Directory holding the trained codebook files.
        #[arg(long)]
        codebooks: PathBuf,
    },
    /// Decode a coded stream back into a WAV.
    Decode {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        codebooks: PathBuf,
    },
    /// Write per-frame entropy and granularity decisions as CSV.
    Analyze {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value = "0.4,0.3,0.3")]
        ratios: String,
    },
    /// Encode, decode, and score a corpus across granularity settings.
    Eval {
        corpus_dir: PathBuf,
        output: PathBuf,
        /// Semicolon-separated ratio triples, e.g. "1,0,0;0.5,0.5,0;0,0,1".
        #[arg(long, default_value = "1,0,0;0.5,0.5,0;0,0,1")]
        sweep: String,
        #[arg(long, default_value_t = 8)]
        nq: usize,
        #[arg(long)]
        codebooks: PathBuf,
    },
}

/// Parses and dispatches a command line; returns the process exit code.
pub fn run(args: &[String]) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::TrainCodebooks {
            corpus_dir,
            out_dir,
            nq,
            bits,
            seed,
            iters,
        } => cmd_train(&corpus_dir, &out_dir, nq, bits, seed, iters),
        Command::Encode {
            input,
            output,
            ratios,
            target_hz,
            policy,
            nq,
            codebooks,
        } => cmd_encode(&input, &output, ratios.as_deref(), target_hz, &policy, nq, &codebooks),
        Command::Decode {
            input,
            output,
            codebooks,
        } => cmd_decode(&input, &output, &codebooks),
        Command::Analyze {
            input,
            output,
            ratios,
        } => cmd_analyze(&input, &output, &ratios),
        Command::Eval {
            corpus_dir,
            output,
            sweep,
            nq,
            codebooks,
        } => cmd_eval(&corpus_dir, &output, &sweep, nq, &codebooks),
    }
}

fn cmd_train(
    corpus_dir: &Path,
    out_dir: &Path,
    nq: usize,
    bits: u32,
    seed: u64,
    iters: usize,
) -> Result<()> {
    if bits == 0 || bits > 15 {
        return Err(Error::InvalidConfig(format!(
            "--bits must be in 1..=15, got {bits}"
        )));
    }
    let files = wav_files(corpus_dir)?;
    let mut clips = Vec::with_capacity(files.len());
    for file in &files {
        clips.push(load_wav(file)?);
    }
    let k = 1usize << bits;
    let (books, distortions) = train_codebook_set(&clips, nq, k, seed, iters)?;
    books.save_to_dir(out_dir)?;
    for (name, tier) in ["fine", "medium", "coarse"].iter().zip(&distortions) {
        for (stage, d) in tier.iter().enumerate() {
            println!("{name} stage {}: mean squared distortion {d:.6}", stage + 1);
        }
    }
    println!(
        "trained {nq} stages x {k} entries per tier on {} clips; books in {}",
        clips.len(),
        out_dir.display()
    );
    Ok(())
}

fn cmd_encode(
    input: &Path,
    output: &Path,
    ratios: Option<&str>,
    target_hz: Option<f64>,
    policy: &str,
    nq: usize,
    codebooks: &Path,
) -> Result<()> {
    let ratios = resolve_ratios(ratios, target_hz, policy)?;
    let books = CodebookSet::load_from_dir(codebooks)?;
    let audio = load_wav(input)?;
    let config = CodecConfig {
        ratios,
        n_q: nq,
        ..CodecConfig::default()
    };
    let stream = encode(&audio, &books, &config)?;
    fs::write(output, pack(&stream)?).map_err(|e| Error::io(output, e))?;
    let report = measure_bitrate(&stream)?;
    println!("realized frame rate: {} Hz", report.frames_per_second);
    println!("frames: {}", report.frames);
    println!("payload bitrate: {} bps", report.payload_bps);
    Ok(())
}

fn cmd_decode(input: &Path, output: &Path, codebooks: &Path) -> Result<()> {
    let books = CodebookSet::load_from_dir(codebooks)?;
    let bytes = fs::read(input).map_err(|e| Error::io(input, e))?;
    let stream = unpack(&bytes)?;
    let audio = decode(&stream, &books, &CodecConfig::default())?;
    save_wav(&audio, output)?;
    println!(
        "wrote {} samples ({:.3} s) to {}",
        audio.samples.len(),
        audio.duration_seconds(),
        output.display()
    );
    Ok(())
}

fn cmd_analyze(input: &Path, output: &Path, ratios: &str) -> Result<()> {
    let audio = load_wav(input)?;
    let config = CodecConfig {
        ratios: parse_ratios(ratios)?,
        ..CodecConfig::default()
    };
    let analysis = analyze_signal(&audio, &config)?;
    let masks = &analysis.masks;
    let tracks = &analysis.tracks;

    let file = File::create(output).map_err(|e| Error::io(output, e))?;
    let mut w = BufWriter::new(file);
    write_csv_row(
        &mut w,
        output,
        &["fine_index", "time_s", "h_fine", "h_medium", "h_coarse", "level"],
    )?;
    let t = tracks.h_f.len();
    for j in 0..t {
        let level = if masks.b_f[j] {
            "F"
        } else if masks.b_m[j / 2] {
            "M"
        } else {
            "C"
        };
        let time = j as f64 * STRIDE as f64 / TARGET_SAMPLE_RATE as f64;
        write_csv_row(
            &mut w,
            output,
            &[
                &j.to_string(),
                &format!("{time:.6}"),
                &tracks.h_f[j].to_string(),
                &tracks.h_m[j / 2].to_string(),
                &tracks.h_c[j / 4].to_string(),
                level,
            ],
        )?;
    }
    w.flush().map_err(|e| Error::io(output, e))?;
    println!("wrote {t} frame rows to {}", output.display());
    Ok(())
}

struct EvalRow {
    file: String,
    realized_hz: f64,
    payload_bps: f64,
    mel: f64,
    stft: f64,
    snr_db: f64,
}

fn cmd_eval(
    corpus_dir: &Path,
    output: &Path,
    sweep: &str,
    nq: usize,
    codebooks: &Path,
) -> Result<()> {
    let settings = parse_sweep(sweep)?;
    let threads = thread_count()?;
    let books = CodebookSet::load_from_dir(codebooks)?;
    let files = wav_files(corpus_dir)?;

    let file = File::create(output).map_err(|e| Error::io(output, e))?;
    let mut w = BufWriter::new(file);
    write_csv_row(
        &mut w,
        output,
        &["file", "ratios", "realized_hz", "payload_bps", "mel_dist", "stft_dist", "snr_db"],
    )?;

    for ratios in &settings {
        let config = CodecConfig {
            ratios: *ratios,
            n_q: nq,
            ..CodecConfig::default()
        };
        let label = format!("{},{},{}", ratios.r_f, ratios.r_m, ratios.r_c);
        let results = parallel_map(files.len(), threads, |i| eval_one(&files[i], &books, &config));

        let mut rows: Vec<EvalRow> = Vec::with_capacity(files.len());
        for result in results {
            match result {
                Ok(row) => {
                    write_eval_row(&mut w, output, &label, &row)?;
                    rows.push(row);
                }
                Err(e) => {
                    // keep what finished: rows already written survive
                    let _ = w.flush();
                    return Err(e);
                }
            }
        }
        let n = rows.len() as f64;
        let mean = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        write_eval_row(
            &mut w,
            output,
            &label,
            &EvalRow {
                file: "mean".into(),
                realized_hz: mean(|r| r.realized_hz),
                payload_bps: mean(|r| r.payload_bps),
                mel: mean(|r| r.mel),
                stft: mean(|r| r.stft),
                snr_db: mean(|r| r.snr_db),
            },
        )?;
        w.flush().map_err(|e| Error::io(output, e))?;
    }
    println!(
        "wrote {} rows ({} settings x {} files + means) to {}",
        settings.len() * (files.len() + 1),
        settings.len(),
        files.len(),
        output.display()
    );
    Ok(())
}

fn eval_one(path: &Path, books: &CodebookSet, config: &CodecConfig) -> Result<EvalRow> {
    let audio = load_wav(path)?;
    // decode reproduces the peak-normalized signal (no gain is coded), so
    // the normalized input is the reference
    let reference = normalize_peak(audio.clone())?;
    let stream = encode(&audio, books, config)?;
    let report = measure_bitrate(&stream)?;
    let decoded = decode(&stream, books, config)?;
    Ok(EvalRow {
        file: path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        realized_hz: report.frames_per_second,
        payload_bps: report.payload_bps,
        mel: mel_distance(&reference, &decoded, &config.metrics)?,
        stft: stft_distance(&reference, &decoded, &config.metrics)?,
        snr_db: snr(&reference, &decoded)?,
    })
}

fn write_eval_row(
    w: &mut impl Write,
    path: &Path,
    label: &str,
    row: &EvalRow,
) -> Result<()> {
    write_csv_row(
        w,
        path,
        &[
            &row.file,
            label,
            &row.realized_hz.to_string(),
            &row.payload_bps.to_string(),
            &row.mel.to_string(),
            &row.stft.to_string(),
            &row.snr_db.to_string(),
        ],
    )
}

// --- flag parsing and plumbing ------------------------------------------------

fn resolve_ratios(
    ratios: Option<&str>,
    target_hz: Option<f64>,
    policy: &str,
) -> Result<GranularityRatios> {
    match (ratios, target_hz) {
        (Some(_), Some(_)) => Err(Error::InvalidConfig(
            "--ratios and --target-hz are mutually exclusive".into(),
        )),
        (None, None) => Err(Error::InvalidConfig(
            "one of --ratios or --target-hz is required".into(),
        )),
        (Some(text), None) => parse_ratios(text),
        (None, Some(hz)) => ratios_for_target(hz, FINE_FRAME_RATE, parse_policy(policy)?),
    }
}

fn parse_ratios(text: &str) -> Result<GranularityRatios> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidConfig(format!(
            "--ratios wants three comma-separated numbers, got {text:?}"
        )));
    }
    let mut values = [0.0; 3];
    for (value, part) in values.iter_mut().zip(&parts) {
        *value = part.trim().parse().map_err(|_| {
            Error::InvalidConfig(format!("could not parse ratio component {part:?}"))
        })?;
    }
    GranularityRatios::new(values[0], values[1], values[2])
}

fn parse_policy(text: &str) -> Result<TargetPolicy> {
    match text {
        "fine_coarse_mix" => Ok(TargetPolicy::FineCoarseMix),
        "fine_medium_mix" => Ok(TargetPolicy::FineMediumMix),
        "medium_coarse_mix" => Ok(TargetPolicy::MediumCoarseMix),
        other => Err(Error::InvalidConfig(format!(
            "unknown policy {other:?}; expected fine_coarse_mix, fine_medium_mix, \
             or medium_coarse_mix"
        ))),
    }
}

fn parse_sweep(text: &str) -> Result<Vec<GranularityRatios>> {
    let settings: Result<Vec<GranularityRatios>> = text
        .split(';')
        .filter(|part| !part.trim().is_empty())
        .map(parse_ratios)
        .collect();
    let settings = settings?;
    if settings.is_empty() {
        return Err(Error::InvalidConfig("--sweep lists no ratio settings".into()));
    }
    Ok(settings)
}

/// WAV files directly under `dir`, sorted by path for determinism.
fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path
            .extension()
            .is_some_and(|ext| ext.eq_ignore_ascii_case("wav"))
        {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::io(
            dir,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "no .wav files in corpus directory",
            ),
        ));
    }
    Ok(files)
}

/// Worker count for eval: `TFC_THREADS` if set, else the machine's cores.
fn thread_count() -> Result<usize> {
    match std::env::var("TFC_THREADS") {
        Ok(value) => value
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&t| t >= 1)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "TFC_THREADS must be a positive integer, got {value:?}"
                ))
            }),
        Err(std::env::VarError::NotPresent) => Ok(std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)),
        Err(e) => Err(Error::InvalidConfig(format!("TFC_THREADS: {e}"))),
    }
}

/// Runs `f(0..n)` on up to `threads` workers; results land at their index,
/// so the output order never depends on scheduling.
fn parallel_map<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = threads.min(n).max(1);
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<T>> = std::iter::repeat_with(|| None).take(n).collect();
    std::thread::scope(|scope| {
        let workers: Vec<_> = (0..threads)
            .map(|_| {
                scope.spawn(|| {
                    let mut local = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= n {
                            break;
                        }
                        local.push((i, f(i)));
                    }
                    local
                })
            })
            .collect();
        for worker in workers {
            for (i, value) in worker.join().expect("eval worker panicked") {
                slots[i] = Some(value);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("index visited")).collect()
}

fn csv_field(field: &str) -> String {
    if field.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// One RFC-4180 record: quoted where needed, CRLF-terminated.
fn write_csv_row(w: &mut impl Write, path: &Path, fields: &[&str]) -> Result<()> {
    let line = fields.iter().map(|f| csv_field(f)).collect::<Vec<_>>().join(",");
    write!(w, "{line}\r\n").map_err(|e| Error::io(path, e))
}
