//! Command-line front end: compress / decompress / report / sweep / lab /
//! synth. Thin argument handling over [`qspca::commands`].

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use qspca::commands::{self, CompressOptions, ContractionLaw, SweepOptions, SynthOptions};
use qspca::quant::QuantMode;
use qspca::solver::{StoppingRule, ThresholdSchedule};
use qspca::sweep::SweepGrid;

#[derive(Parser)]
#[command(
    name = "qspca",
    about = "Quantized sparse PCA compression of convolutional weight tensors",
    long_about = "Factors a weight tensor into a quantized codebook and a quantized sparse \
latent optimized against sampled layer activations, and serializes the result bit-exactly.\n\
Sweep and report metrics are reconstruction MSE on held-out calibration samples.\n\
Set QSPCA_THREADS to cap the worker pool."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Oneshot,
    Iterative,
}

impl From<ModeArg> for ThresholdSchedule {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Oneshot => ThresholdSchedule::OneShot,
            ModeArg::Iterative => ThresholdSchedule::Iterative,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum QuantModeArg {
    /// Symmetric signed integer range.
    Signed,
    /// Unsigned clamp range [0, 2^b - 1].
    Unsigned,
}

impl From<QuantModeArg> for QuantMode {
    fn from(m: QuantModeArg) -> Self {
        match m {
            QuantModeArg::Signed => QuantMode::SymmetricSigned,
            QuantModeArg::Unsigned => QuantMode::PaperLiteralUnsigned,
        }
    }
}

/// `iters:N` or `valpatience`.
fn parse_stop(s: &str) -> Result<StoppingRule, String> {
    if s == "valpatience" {
        return Ok(StoppingRule::ValidationPatience {
            max_iterations: 10_000,
        });
    }
    if let Some(n) = s.strip_prefix("iters:") {
        let n: usize = n
            .parse()
            .map_err(|e| format!("bad iteration count in '{s}': {e}"))?;
        return Ok(StoppingRule::FixedIterations(n));
    }
    Err(format!("expected 'iters:N' or 'valpatience', got '{s}'"))
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|v| v.trim().parse().map_err(|e| format!("bad value '{v}': {e}")))
        .collect()
}

fn parse_shape(s: &str) -> Result<[usize; 4], String> {
    let parts = parse_usize_list(s)?;
    parts
        .try_into()
        .map_err(|_| format!("expected 4 comma-separated dims, got '{s}'"))
}

/// Optional JSON defaults; explicit command-line flags win.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    d: Option<usize>,
    k: Option<usize>,
    bc: Option<u8>,
    bz: Option<u8>,
    sparsity: Option<f64>,
    mode: Option<String>,
    stop: Option<String>,
    seed: Option<u64>,
    stride: Option<usize>,
    padding: Option<usize>,
}

impl ConfigFile {
    fn load(path: &Option<PathBuf>) -> Result<Self, String> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| format!("cannot read config {}: {e}", p.display()))?;
                serde_json::from_str(&text).map_err(|e| format!("bad config JSON: {e}"))
            }
        }
    }

    fn mode(&self) -> Result<Option<ThresholdSchedule>, String> {
        match self.mode.as_deref() {
            None => Ok(None),
            Some("oneshot") => Ok(Some(ThresholdSchedule::OneShot)),
            Some("iterative") => Ok(Some(ThresholdSchedule::Iterative)),
            Some(other) => Err(format!("bad mode '{other}' in config")),
        }
    }

    fn stop(&self) -> Result<Option<StoppingRule>, String> {
        self.stop.as_deref().map(parse_stop).transpose()
    }
}

#[derive(Args)]
struct CompressArgs {
    /// QSPT archive holding the weight tensor.
    #[arg(long)]
    weights: PathBuf,
    /// QSPT archive holding calibration activations 'x' and 'y'.
    #[arg(long)]
    calib: PathBuf,
    /// Output QSPC path.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON report path.
    #[arg(long)]
    report: Option<PathBuf>,
    /// JSON config file with defaults for the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Tile size.
    #[arg(long)]
    d: Option<usize>,
    /// Rank of the factorization.
    #[arg(long)]
    k: Option<usize>,
    /// Codebook bitwidth.
    #[arg(long)]
    bc: Option<u8>,
    /// Latent bitwidth.
    #[arg(long)]
    bz: Option<u8>,
    /// Extra sparsity fraction in [0, 0.9].
    #[arg(long)]
    sparsity: Option<f64>,
    /// Absolute stored-nonzero budget (overrides --sparsity).
    #[arg(long)]
    sparsity_count: Option<usize>,
    /// Hard-thresholding schedule.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Stopping criterion: 'iters:N' or 'valpatience'.
    #[arg(long, value_parser = parse_stop)]
    stop: Option<StoppingRule>,
    /// Quantizer integer range.
    #[arg(long, value_enum, default_value = "signed")]
    quant_mode: QuantModeArg,
    /// Convolution stride (defaults to the calibration file's value, then 1).
    #[arg(long)]
    stride: Option<usize>,
    /// Convolution zero padding (defaults like --stride).
    #[arg(long)]
    padding: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl CompressArgs {
    fn resolve(&self) -> Result<CompressOptions, String> {
        let file = ConfigFile::load(&self.config)?;
        let k = self
            .k
            .or(file.k)
            .ok_or_else(|| "--k is required (flag or config file)".to_string())?;
        Ok(CompressOptions {
            weights: self.weights.clone(),
            calib: self.calib.clone(),
            out: self.out.clone(),
            report: self.report.clone(),
            d: self.d.or(file.d).unwrap_or(256),
            k,
            b_c: self.bc.or(file.bc).unwrap_or(4),
            b_z: self.bz.or(file.bz).unwrap_or(4),
            extra_sparsity: self.sparsity.or(file.sparsity).unwrap_or(0.0),
            sparsity_count: self.sparsity_count,
            schedule: self
                .mode
                .map(ThresholdSchedule::from)
                .or(file.mode()?)
                .unwrap_or(ThresholdSchedule::OneShot),
            stopping: self.stop.or(file.stop()?).unwrap_or(
                StoppingRule::ValidationPatience {
                    max_iterations: 10_000,
                },
            ),
            quant_mode: self.quant_mode.into(),
            stride: self.stride.or(file.stride),
            padding: self.padding.or(file.padding),
            seed: self.seed.or(file.seed).unwrap_or(0),
        })
    }
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    /// Output CSV path; the Pareto subset lands next to it as *.pareto.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    bc: Option<u8>,
    /// Comma-separated ranks, e.g. 64,128,256.
    #[arg(long, value_delimiter = ',', required = true)]
    grid_k: Vec<usize>,
    /// Comma-separated latent bitwidths, e.g. 3,4,6.
    #[arg(long, value_delimiter = ',', required = true)]
    grid_bz: Vec<u8>,
    /// Comma-separated extra sparsity fractions, e.g. 0.0,0.2,0.4.
    #[arg(long, value_delimiter = ',')]
    grid_e: Vec<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_parser = parse_stop)]
    stop: Option<StoppingRule>,
    #[arg(long, value_enum, default_value = "signed")]
    quant_mode: QuantModeArg,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    padding: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum LabCommand {
    /// Sample the hard-thresholding projection inequality.
    Projection {
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        s: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the geometric convergence envelope of projected iterations.
    Contraction {
        /// Lipschitz constant of the synthetic update map.
        #[arg(long, default_value_t = 0.25)]
        l: f64,
        #[arg(long, default_value_t = 10)]
        t: usize,
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        s: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Use the linear MSE update map with power-iteration Lipschitz
        /// estimate instead of the synthetic contraction.
        #[arg(long)]
        linear: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Iterative hard thresholding recovery trials.
    Iht {
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        s: usize,
        #[arg(long, default_value_t = 100)]
        m: usize,
        #[arg(long, default_value_t = 300)]
        iterations: usize,
        #[arg(long, default_value_t = 1.0)]
        step: f64,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 1e-6)]
        success_threshold: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Binary (one-bit) iterative hard thresholding recovery trials.
    Biht {
        #[arg(long, default_value_t = 128)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        s: usize,
        #[arg(long, default_value_t = 512)]
        m: usize,
        #[arg(long, default_value_t = 200)]
        iterations: usize,
        #[arg(long, default_value_t = 1.0)]
        step: f64,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum Command {
    /// Factor, quantize, sparsify and serialize one layer.
    Compress(CompressArgs),
    /// Reconstruct a weight tensor from a QSPC file.
    Decompress {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Size (and optional compute-overhead) accounting for a QSPC file.
    Report {
        #[arg(long)]
        input: PathBuf,
        /// Output spatial size p of the layer's forward pass.
        #[arg(long)]
        p: Option<usize>,
        /// Write JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid sweep over (k, b_z, e); emits full and Pareto-filtered CSV.
    Sweep(SweepArgs),
    /// Convergence experiments on synthetic sparse recovery problems.
    #[command(subcommand)]
    Lab(LabCommand),
    /// Generate a synthetic layer and calibration archive.
    Synth {
        /// Weight shape f_out,f_in,h,w.
        #[arg(long, value_parser = parse_shape, default_value = "16,16,3,3")]
        shape: [usize; 4],
        #[arg(long, default_value_t = 64)]
        samples: usize,
        /// Input spatial dims HxW as H,W.
        #[arg(long, value_delimiter = ',', default_value = "8,8")]
        input_hw: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, default_value_t = 1)]
        padding: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_weights: PathBuf,
        #[arg(long)]
        out_calib: PathBuf,
    },
}

fn init_thread_pool() {
    if let Ok(threads) = std::env::var("QSPCA_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn write_lab_output(rows: &[commands::LabRow], out: &Option<PathBuf>) -> qspca::Result<()> {
    let csv = commands::lab_rows_to_csv(rows);
    match out {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn run() -> Result<bool, String> {
    let cli = Cli::parse();
    init_thread_pool();
    match cli.command {
        Command::Compress(args) => {
            let opts = args.resolve()?;
            let report = commands::compress(&opts).map_err(|e| e.to_string())?;
            if let Some(warning) = &report.regime_warning {
                eprintln!("warning: {warning}");
            }
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            Ok(true)
        }
        Command::Decompress { input, out } => {
            let summary = commands::decompress(&input, &out).map_err(|e| e.to_string())?;
            println!(
                "shape: ({}, {}, {}, {})",
                summary.shape[0], summary.shape[1], summary.shape[2], summary.shape[3]
            );
            println!("sha256: {}", summary.sha256);
            Ok(true)
        }
        Command::Report { input, p, out } => {
            let report = commands::report(&input, p).map_err(|e| e.to_string())?;
            let json = serde_json::to_string_pretty(&report).unwrap();
            match out {
                Some(path) => std::fs::write(path, json).map_err(|e| e.to_string())?,
                None => println!("{json}"),
            }
            Ok(true)
        }
        Command::Sweep(args) => {
            let file = ConfigFile::load(&args.config)?;
            let grid = SweepGrid {
                ranks: args.grid_k.clone(),
                latent_bits: args.grid_bz.clone(),
                extra_sparsity: if args.grid_e.is_empty() {
                    vec![0.0]
                } else {
                    args.grid_e.clone()
                },
            };
            let opts = SweepOptions {
                weights: args.weights,
                calib: args.calib,
                out: args.out,
                d: args.d.or(file.d).unwrap_or(256),
                b_c: args.bc.or(file.bc).unwrap_or(4),
                grid,
                schedule: args
                    .mode
                    .map(ThresholdSchedule::from)
                    .or(file.mode()?)
                    .unwrap_or(ThresholdSchedule::OneShot),
                stopping: args.stop.or(file.stop()?).unwrap_or(
                    StoppingRule::ValidationPatience {
                        max_iterations: 10_000,
                    },
                ),
                quant_mode: args.quant_mode.into(),
                stride: args.stride.or(file.stride),
                padding: args.padding.or(file.padding),
                seed: args.seed.or(file.seed).unwrap_or(0),
            };
            let (summary, output) = commands::sweep(&opts).map_err(|e| e.to_string())?;
            for f in &output.failures {
                eprintln!(
                    "cell k={} b_z={} e={} failed: {}",
                    f.k, f.b_z, f.e, f.message
                );
            }
            println!("{}", serde_json::to_string_pretty(&summary).unwrap());
            Ok(output.failures.is_empty())
        }
        Command::Lab(lab) => {
            match lab {
                LabCommand::Projection {
                    trials,
                    n,
                    s,
                    seed,
                    out,
                } => {
                    let rows = commands::lab_projection(trials, n, s, seed);
                    let max = rows.iter().map(|r| r.final_error).fold(0.0, f64::max);
                    write_lab_output(&rows, &out).map_err(|e| e.to_string())?;
                    eprintln!("max ratio: {max} (bound 2)");
                    Ok(max <= 2.0 + 1e-12)
                }
                LabCommand::Contraction {
                    l,
                    t,
                    n,
                    s,
                    trials,
                    linear,
                    seed,
                    out,
                } => {
                    let law = if linear {
                        ContractionLaw::Linear
                    } else {
                        ContractionLaw::Synthetic
                    };
                    let rows = commands::lab_contraction(law, l, t, n, s, trials, seed)
                        .map_err(|e| e.to_string())?;
                    let ok = rows.iter().all(|r| r.success);
                    write_lab_output(&rows, &out).map_err(|e| e.to_string())?;
                    eprintln!(
                        "envelope {} over {} trials",
                        if ok { "satisfied" } else { "VIOLATED" },
                        rows.len()
                    );
                    Ok(ok)
                }
                LabCommand::Iht {
                    n,
                    s,
                    m,
                    iterations,
                    step,
                    trials,
                    success_threshold,
                    seed,
                    out,
                } => {
                    let rows =
                        commands::lab_iht(n, s, m, iterations, step, trials, seed, success_threshold);
                    let successes = rows.iter().filter(|r| r.success).count();
                    write_lab_output(&rows, &out).map_err(|e| e.to_string())?;
                    eprintln!("success rate: {successes}/{}", rows.len());
                    Ok(true)
                }
                LabCommand::Biht {
                    n,
                    s,
                    m,
                    iterations,
                    step,
                    trials,
                    seed,
                    out,
                } => {
                    let rows = commands::lab_biht(n, s, m, iterations, step, trials, seed);
                    let successes = rows.iter().filter(|r| r.success).count();
                    write_lab_output(&rows, &out).map_err(|e| e.to_string())?;
                    eprintln!("improved trials: {successes}/{}", rows.len());
                    Ok(true)
                }
            }
        }
        Command::Synth {
            shape,
            samples,
            input_hw,
            stride,
            padding,
            seed,
            out_weights,
            out_calib,
        } => {
            if input_hw.len() != 2 {
                return Err("--input-hw expects H,W".into());
            }
            commands::synth(&SynthOptions {
                shape,
                samples,
                in_h: input_hw[0],
                in_w: input_hw[1],
                stride,
                padding,
                seed,
                out_weights,
                out_calib,
            })
            .map_err(|e| e.to_string())?;
            println!("wrote synthetic layer and calibration archives");
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
