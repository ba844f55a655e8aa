//! Implementations behind the CLI subcommands. Kept in the library so the
//! pipeline can be exercised without spawning processes.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec;
use crate::error::{Error, Result};
use crate::lab;
use crate::qspt::{self, NamedTensor};
use crate::report::{layer_size_bits, overhead, OverheadReport, SizeReport};
use crate::solver::{
    objective, reconstruct, solve, CalibrationSet, SolverConfig, SparsityTarget, StoppingRule,
    ThresholdSchedule,
};
use crate::sweep::{run_sweep, rows_to_csv, SweepGrid, SweepOutput};
use crate::tensor::{lower_conv, tile_reshape, ConvSpec, WeightTensor};

pub const WEIGHT_TENSOR_NAME: &str = "weight";
pub const CALIB_INPUT_NAME: &str = "x";
pub const CALIB_OUTPUT_NAME: &str = "y";
/// Optional rank-1 tensor `[stride, padding]` carried in calibration files.
pub const CALIB_CONV_NAME: &str = "conv";

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// compress

#[derive(Debug, Clone)]
pub struct CompressOptions {
    pub weights: PathBuf,
    pub calib: PathBuf,
    pub out: PathBuf,
    pub report: Option<PathBuf>,
    pub d: usize,
    pub k: usize,
    pub b_c: u8,
    pub b_z: u8,
    /// Extra sparsity fraction, ignored when `sparsity_count` is set.
    pub extra_sparsity: f64,
    pub sparsity_count: Option<usize>,
    pub schedule: ThresholdSchedule,
    pub stopping: StoppingRule,
    pub quant_mode: crate::quant::QuantMode,
    pub stride: Option<usize>,
    pub padding: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompressReport {
    pub size: SizeReport,
    pub iterations: usize,
    pub termination: String,
    pub final_train_mse: f64,
    pub final_val_mse: f64,
    pub regime_warning: Option<String>,
    pub seed: u64,
    pub wall_time_s: f64,
}

fn load_weights(path: &Path) -> Result<WeightTensor> {
    let tensors = qspt::read_file(path)?;
    qspt::find_weights(&tensors, WEIGHT_TENSOR_NAME)?.to_weights()
}

struct CalibFile {
    x: NamedTensor,
    y: NamedTensor,
    stride: Option<usize>,
    padding: Option<usize>,
}

fn load_calibration(path: &Path) -> Result<CalibFile> {
    let tensors = qspt::read_file(path)?;
    let x = qspt::find_named(&tensors, CALIB_INPUT_NAME)?.clone();
    let y = qspt::find_named(&tensors, CALIB_OUTPUT_NAME)?.clone();
    for t in [&x, &y] {
        if t.dims.len() != 4 {
            return Err(Error::Calibration(format!(
                "tensor '{}' must be rank 4 (m, channels, height, width)",
                t.name
            )));
        }
    }
    let conv = tensors.iter().find(|t| t.name == CALIB_CONV_NAME);
    let (stride, padding) = match conv {
        Some(t) if t.data.len() == 2 => {
            (Some(t.data[0] as usize), Some(t.data[1] as usize))
        }
        _ => (None, None),
    };
    Ok(CalibFile {
        x,
        y,
        stride,
        padding,
    })
}

fn dims4(t: &NamedTensor) -> [usize; 4] {
    [
        t.dims[0] as usize,
        t.dims[1] as usize,
        t.dims[2] as usize,
        t.dims[3] as usize,
    ]
}

fn build_calibration(
    weights: &WeightTensor,
    calib: &CalibFile,
    stride: Option<usize>,
    padding: Option<usize>,
    seed: u64,
) -> Result<CalibrationSet> {
    let stride = stride.or(calib.stride).unwrap_or(1);
    let padding = padding.or(calib.padding).unwrap_or(0);
    let x_data: Vec<f64> = calib.x.data.iter().map(|&v| v as f64).collect();
    let y_data: Vec<f64> = calib.y.data.iter().map(|&v| v as f64).collect();
    CalibrationSet::new(
        weights.shape(),
        stride,
        padding,
        dims4(&calib.x),
        &x_data,
        dims4(&calib.y),
        &y_data,
        seed,
    )
}

fn solver_config(opts: &CompressOptions) -> SolverConfig {
    let mut cfg = SolverConfig::new(opts.k);
    cfg.codebook_bits = opts.b_c;
    cfg.latent_bits = opts.b_z;
    cfg.codebook_mode = opts.quant_mode;
    cfg.latent_mode = opts.quant_mode;
    cfg.sparsity = match opts.sparsity_count {
        Some(s) => SparsityTarget::Count(s),
        None => SparsityTarget::ExtraFraction(opts.extra_sparsity),
    };
    cfg.schedule = opts.schedule;
    cfg.stopping = opts.stopping;
    cfg.seed = opts.seed;
    cfg
}

pub fn compress(opts: &CompressOptions) -> Result<CompressReport> {
    let started = Instant::now();
    let weights = load_weights(&opts.weights)?;
    let calib = load_calibration(&opts.calib)?;
    let cal = build_calibration(&weights, &calib, opts.stride, opts.padding, opts.seed)?;
    let tiles = tile_reshape(&weights, opts.d)?;
    let cfg = solver_config(opts);
    let outcome = solve(&tiles, &cal, &cfg)?;

    let layer = codec::encode(&outcome.pair, &outcome.mean, weights.shape())?;
    codec::write_file(&opts.out, &layer)?;
    let size = SizeReport::from_layer(&layer)?;

    let final_train_mse = objective(&outcome.pair, &outcome.mean, &cal, cal.train())?;
    let final_val_mse = objective(&outcome.pair, &outcome.mean, &cal, cal.validation())?;
    let regime_warning = if outcome.pair.regime_ok() {
        None
    } else {
        Some(format!(
            "factors are outside the intended k < d < n regime (k={}, d={}, n={})",
            outcome.pair.k(),
            outcome.pair.d(),
            outcome.pair.n_tiles()
        ))
    };
    let report = CompressReport {
        size,
        iterations: outcome.trace.iterations(),
        termination: outcome.trace.termination.to_string(),
        final_train_mse,
        final_val_mse,
        regime_warning,
        seed: opts.seed,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    if let Some(path) = &opts.report {
        std::fs::write(path, serde_json::to_string_pretty(&report).unwrap())?;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// decompress

#[derive(Debug, Clone, Serialize)]
pub struct DecompressSummary {
    pub shape: [usize; 4],
    pub sha256: String,
}

pub fn decompress(input: &Path, out: &Path) -> Result<DecompressSummary> {
    let layer = codec::read_file(input)?;
    let (pair, mean, shape) = codec::decode(&layer)?;
    let weights = reconstruct(&pair, &mean, shape)?;
    let bytes = qspt::to_bytes(&[NamedTensor::from_weights(WEIGHT_TENSOR_NAME, &weights)]);
    std::fs::write(out, &bytes)?;
    Ok(DecompressSummary {
        shape,
        sha256: sha256_hex(&bytes),
    })
}

// ---------------------------------------------------------------------------
// report

#[derive(Debug, Clone, Serialize)]
pub struct LayerReport {
    pub shape: [u32; 4],
    pub d: u32,
    pub k: u32,
    pub n: u32,
    pub b_c: u8,
    pub b_z: u8,
    pub size: SizeReport,
    pub overhead: Option<OverheadReport>,
}

/// Size accounting (and, when `p` is given, compute overhead) for an
/// existing compressed layer file.
pub fn report(input: &Path, p: Option<usize>) -> Result<LayerReport> {
    let layer = codec::read_file(input)?;
    let size = SizeReport::from_layer(&layer)?;
    let overhead = match p {
        Some(p) => Some(overhead(
            layer.shape.map(|v| v as usize),
            layer.k as usize,
            p,
            layer.b_c,
            layer.b_z,
        )?),
        None => None,
    };
    Ok(LayerReport {
        shape: layer.shape,
        d: layer.d,
        k: layer.k,
        n: layer.n,
        b_c: layer.b_c,
        b_z: layer.b_z,
        size,
        overhead,
    })
}

/// Size accounting straight from dimensions, without a file.
pub fn size_from_dims(
    shape: [usize; 4],
    d: usize,
    k: usize,
    b_c: u8,
    b_z: u8,
    nonzeros: u64,
) -> Result<SizeReport> {
    layer_size_bits(shape, d, k, b_c, b_z, nonzeros)
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub weights: PathBuf,
    pub calib: PathBuf,
    pub out: PathBuf,
    pub d: usize,
    pub b_c: u8,
    pub grid: SweepGrid,
    pub schedule: ThresholdSchedule,
    pub stopping: StoppingRule,
    pub quant_mode: crate::quant::QuantMode,
    pub stride: Option<usize>,
    pub padding: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub rows: usize,
    pub pareto_rows: usize,
    pub failures: usize,
    pub csv: PathBuf,
    pub pareto_csv: PathBuf,
}

pub fn sweep(opts: &SweepOptions) -> Result<(SweepSummary, SweepOutput)> {
    let weights = load_weights(&opts.weights)?;
    let calib = load_calibration(&opts.calib)?;
    let cal = build_calibration(&weights, &calib, opts.stride, opts.padding, opts.seed)?;
    let mut base = SolverConfig::new(1);
    base.codebook_bits = opts.b_c;
    base.codebook_mode = opts.quant_mode;
    base.latent_mode = opts.quant_mode;
    base.schedule = opts.schedule;
    base.stopping = opts.stopping;
    base.seed = opts.seed;
    let output = run_sweep(&weights, &cal, &base, opts.d, &opts.grid)?;

    let pareto_path = pareto_csv_path(&opts.out);
    std::fs::write(&opts.out, rows_to_csv(&output.rows))?;
    let pareto_rows: Vec<_> = output.rows.iter().filter(|r| r.pareto).cloned().collect();
    std::fs::write(&pareto_path, rows_to_csv(&pareto_rows))?;
    let summary = SweepSummary {
        rows: output.rows.len(),
        pareto_rows: pareto_rows.len(),
        failures: output.failures.len(),
        csv: opts.out.clone(),
        pareto_csv: pareto_path,
    };
    Ok((summary, output))
}

pub fn pareto_csv_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("sweep");
    out.with_file_name(format!("{stem}.pareto.csv"))
}

// ---------------------------------------------------------------------------
// lab

pub const LAB_CSV_HEADER: &str = "trial,n,m,s,iterations,final_error,success";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabRow {
    pub trial: usize,
    pub n: usize,
    pub m: usize,
    pub s: usize,
    pub iterations: usize,
    pub final_error: f64,
    pub success: bool,
}

pub fn lab_rows_to_csv(rows: &[LabRow]) -> String {
    let mut out = String::from(LAB_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.trial, r.n, r.m, r.s, r.iterations, r.final_error, r.success
        ));
    }
    out
}

/// Per-trial projection ratios; success means the factor-2 bound held.
pub fn lab_projection(trials: usize, n: usize, s: usize, seed: u64) -> Vec<LabRow> {
    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let ratio = lab::projection_factor_trial(n, s, &mut lab::trial_rng(seed, trial as u64));
            LabRow {
                trial,
                n,
                m: 0,
                s,
                iterations: 0,
                final_error: ratio,
                success: ratio <= 2.0 + 1e-12,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContractionLaw {
    /// Pure contraction with the given Lipschitz constant.
    Synthetic,
    /// Linear MSE update with power-iteration-estimated Lipschitz constant.
    Linear,
}

pub fn lab_contraction(
    law_kind: ContractionLaw,
    lipschitz: f64,
    steps: usize,
    n: usize,
    s: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<LabRow>> {
    let set = lab::SparseSetSpec::new(n, s)?;
    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = lab::trial_rng(seed, trial as u64);
            let x_star = lab::sparse_truth(n, s, &mut rng);
            let law = match law_kind {
                ContractionLaw::Synthetic => lab::IterationLaw::contraction(lipschitz, x_star),
                ContractionLaw::Linear => {
                    let a = lab::banded_spectrum_matrix(n, 0.8, 1.2, &mut rng);
                    lab::IterationLaw::linear_mse(&a, 1.0, x_star, seed ^ trial as u64)
                }
            };
            let x0 = lab::gaussian_point(n, &mut rng);
            let run = lab::contraction_run(&law, set, &x0, steps);
            let row = match run {
                Ok(errors) => LabRow {
                    trial,
                    n,
                    m: 0,
                    s,
                    iterations: steps,
                    final_error: *errors.last().unwrap(),
                    success: true,
                },
                Err(Error::EnvelopeViolation { error, .. }) => LabRow {
                    trial,
                    n,
                    m: 0,
                    s,
                    iterations: steps,
                    final_error: error,
                    success: false,
                },
                Err(e) => return Err(e),
            };
            Ok(row)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn lab_iht(
    n: usize,
    s: usize,
    m: usize,
    iterations: usize,
    step: f64,
    trials: usize,
    seed: u64,
    success_threshold: f64,
) -> Vec<LabRow> {
    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = lab::trial_rng(seed, trial as u64);
            let a = lab::gaussian_sensing(m, n, &mut rng);
            let truth = lab::sparse_truth(n, s, &mut rng);
            let y = &a * &truth;
            let result = lab::iht_recover(&a, &y, s, iterations, step, Some(&truth));
            let final_error = *result.error_trace.unwrap().last().unwrap();
            LabRow {
                trial,
                n,
                m,
                s,
                iterations,
                final_error,
                success: final_error <= success_threshold,
            }
        })
        .collect()
}

pub fn lab_biht(
    n: usize,
    s: usize,
    m: usize,
    iterations: usize,
    step: f64,
    trials: usize,
    seed: u64,
) -> Vec<LabRow> {
    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = lab::trial_rng(seed, trial as u64);
            let a = lab::gaussian_sensing(m, n, &mut rng);
            let mut truth = lab::sparse_truth(n, s, &mut rng);
            let norm = truth.norm();
            if norm > 0.0 {
                truth /= norm;
            }
            let y = (&a * &truth).map(|v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            });
            let result = lab::biht_recover(&a, &y, s, iterations, step, Some(&truth));
            let trace = result.error_trace.unwrap();
            let final_error = *trace.last().unwrap();
            LabRow {
                trial,
                n,
                m,
                s,
                iterations,
                final_error,
                success: final_error < trace[0],
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// synth

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub shape: [usize; 4],
    pub samples: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub seed: u64,
    pub out_weights: PathBuf,
    pub out_calib: PathBuf,
}

/// Generates a random layer plus matching calibration activations, for smoke
/// tests and demos.
pub fn synth(opts: &SynthOptions) -> Result<()> {
    let [f_out, f_in, kh, kw] = opts.shape;
    let spec = ConvSpec::new(opts.in_h, opts.in_w, kh, kw, opts.stride, opts.padding)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let weight_data: Vec<f32> = (0..f_out * f_in * kh * kw)
        .map(|_| rng.random_range(-0.5f32..0.5))
        .collect();
    let weights = WeightTensor::new(f_out, f_in, kh, kw, weight_data)?;
    qspt::write_file(
        &opts.out_weights,
        &[NamedTensor::from_weights(WEIGHT_TENSOR_NAME, &weights)],
    )?;

    let w_mat = DMatrix::from_row_slice(
        f_out,
        f_in * kh * kw,
        &weights.data().iter().map(|&v| v as f64).collect::<Vec<_>>(),
    );
    let x_sample = f_in * spec.in_h * spec.in_w;
    let p = spec.output_size();
    let mut x_data = Vec::with_capacity(opts.samples * x_sample);
    let mut y_data = Vec::with_capacity(opts.samples * f_out * p);
    for _ in 0..opts.samples {
        let x: Vec<f64> = (0..x_sample).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xcol = lower_conv(&x, f_in, &spec, kh, kw)?;
        let y = &w_mat * &xcol;
        x_data.extend(x.iter().map(|&v| v as f32));
        for row in 0..f_out {
            for col in 0..p {
                y_data.push(y[(row, col)] as f32);
            }
        }
    }
    let tensors = vec![
        NamedTensor::new(
            CALIB_INPUT_NAME,
            vec![
                opts.samples as u32,
                f_in as u32,
                spec.in_h as u32,
                spec.in_w as u32,
            ],
            x_data,
        )?,
        NamedTensor::new(
            CALIB_OUTPUT_NAME,
            vec![
                opts.samples as u32,
                f_out as u32,
                spec.out_h as u32,
                spec.out_w as u32,
            ],
            y_data,
        )?,
        NamedTensor::new(
            CALIB_CONV_NAME,
            vec![2],
            vec![opts.stride as f32, opts.padding as f32],
        )?,
    ];
    qspt::write_file(&opts.out_calib, &tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::QuantMode;
    use tempfile::tempdir;

    fn synth_small(dir: &Path, seed: u64) -> (PathBuf, PathBuf) {
        let weights = dir.join("w.qspt");
        let calib = dir.join("c.qspt");
        synth(&SynthOptions {
            shape: [4, 4, 3, 3],
            samples: 16,
            in_h: 5,
            in_w: 5,
            stride: 1,
            padding: 1,
            seed,
            out_weights: weights.clone(),
            out_calib: calib.clone(),
        })
        .unwrap();
        (weights, calib)
    }

    fn compress_opts(weights: PathBuf, calib: PathBuf, out: PathBuf) -> CompressOptions {
        CompressOptions {
            weights,
            calib,
            out,
            report: None,
            d: 12,
            k: 6,
            b_c: 4,
            b_z: 4,
            extra_sparsity: 0.2,
            sparsity_count: None,
            schedule: ThresholdSchedule::Iterative,
            stopping: StoppingRule::FixedIterations(5),
            quant_mode: QuantMode::SymmetricSigned,
            stride: None,
            padding: None,
            seed: 3,
        }
    }

    #[test]
    fn compress_decompress_round_trip() {
        let dir = tempdir().unwrap();
        let (weights, calib) = synth_small(dir.path(), 1);
        let out = dir.path().join("layer.qspc");
        let report = compress(&compress_opts(weights, calib.clone(), out.clone())).unwrap();
        assert_eq!(report.iterations, 5);
        assert!(report.size.compression_ratio > 1.0);

        let restored = dir.path().join("restored.qspt");
        let summary = decompress(&out, &restored).unwrap();
        assert_eq!(summary.shape, [4, 4, 3, 3]);
        let summary2 = decompress(&out, &dir.path().join("r2.qspt")).unwrap();
        assert_eq!(summary.sha256, summary2.sha256);

        // compress -> decompress -> compress is reproducible: two independent
        // runs of the second compression agree byte for byte.
        let second_a = dir.path().join("second_a.qspc");
        let second_b = dir.path().join("second_b.qspc");
        compress(&compress_opts(restored.clone(), calib.clone(), second_a.clone())).unwrap();
        let restored_again = dir.path().join("restored_again.qspt");
        decompress(&out, &restored_again).unwrap();
        compress(&compress_opts(restored_again, calib, second_b.clone())).unwrap();
        assert_eq!(
            std::fs::read(second_a).unwrap(),
            std::fs::read(second_b).unwrap()
        );
    }

    #[test]
    fn compress_is_deterministic() {
        let dir = tempdir().unwrap();
        let (weights, calib) = synth_small(dir.path(), 2);
        let out_a = dir.path().join("a.qspc");
        let out_b = dir.path().join("b.qspc");
        compress(&compress_opts(weights.clone(), calib.clone(), out_a.clone())).unwrap();
        compress(&compress_opts(weights, calib, out_b.clone())).unwrap();
        assert_eq!(std::fs::read(out_a).unwrap(), std::fs::read(out_b).unwrap());
    }

    #[test]
    fn report_reads_back_sizes() {
        let dir = tempdir().unwrap();
        let (weights, calib) = synth_small(dir.path(), 4);
        let out = dir.path().join("layer.qspc");
        let compressed = compress(&compress_opts(weights, calib, out.clone())).unwrap();
        let layer_report = report(&out, Some(25)).unwrap();
        assert_eq!(layer_report.size, compressed.size);
        let oh = layer_report.overhead.unwrap();
        assert!((oh.mac_overhead - 6.0 / 25.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_writes_full_and_pareto_csv() {
        let dir = tempdir().unwrap();
        let (weights, calib) = synth_small(dir.path(), 5);
        let out = dir.path().join("sweep.csv");
        let opts = SweepOptions {
            weights,
            calib,
            out: out.clone(),
            d: 12,
            b_c: 4,
            grid: SweepGrid {
                ranks: vec![2, 4],
                latent_bits: vec![3],
                extra_sparsity: vec![0.0, 0.3],
            },
            schedule: ThresholdSchedule::OneShot,
            stopping: StoppingRule::FixedIterations(2),
            quant_mode: QuantMode::SymmetricSigned,
            stride: None,
            padding: None,
            seed: 6,
        };
        let (summary, output) = sweep(&opts).unwrap();
        assert_eq!(summary.rows, 4);
        assert_eq!(summary.failures, 0);
        assert!(summary.pareto_rows >= 1);
        let full = std::fs::read_to_string(&out).unwrap();
        assert!(full.starts_with(crate::sweep::SWEEP_CSV_HEADER));
        assert_eq!(full.lines().count(), 5);
        let pareto = std::fs::read_to_string(summary.pareto_csv).unwrap();
        assert_eq!(
            pareto.lines().count(),
            1 + output.rows.iter().filter(|r| r.pareto).count()
        );
    }

    #[test]
    fn lab_rows_have_stable_schema() {
        let rows = lab_projection(10, 8, 2, 1);
        assert_eq!(rows.len(), 10);
        assert!(rows.iter().all(|r| r.success));
        let csv = lab_rows_to_csv(&rows);
        assert!(csv.starts_with(LAB_CSV_HEADER));

        let c_rows = lab_contraction(ContractionLaw::Synthetic, 0.25, 10, 16, 3, 5, 2).unwrap();
        assert!(c_rows.iter().all(|r| r.success));

        let iht_rows = lab_iht(32, 2, 16, 100, 1.0, 5, 3, 1e-6);
        assert_eq!(iht_rows.len(), 5);

        let biht_rows = lab_biht(32, 2, 128, 50, 1.0, 3, 4);
        assert_eq!(biht_rows.len(), 3);
    }

    #[test]
    fn lab_results_independent_of_thread_count() {
        let a = lab_projection(50, 16, 3, 9);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(|| lab_projection(50, 16, 3, 9));
        assert_eq!(a, b);
    }

    #[test]
    fn compress_rejects_missing_calibration_names() {
        let dir = tempdir().unwrap();
        let bad = dir.path().join("bad.qspt");
        qspt::write_file(
            &bad,
            &[NamedTensor::new("weights_only", vec![1], vec![1.0]).unwrap()],
        )
        .unwrap();
        let (weights, _) = synth_small(dir.path(), 7);
        let opts = compress_opts(weights, bad, dir.path().join("out.qspc"));
        assert!(compress(&opts).is_err());
    }
}
