//! C ABI over the qspca pipeline: compress/decompress files, open compressed
//! layers as opaque handles, query size reports, and reconstruct weights into
//! caller-provided buffers.
//!
//! Every function is panic-safe and returns a [`QspcaStatus`]; on failure a
//! thread-local message is available via [`qspca_last_error_message`] until
//! the next call on the same thread. Strings are NUL-terminated UTF-8.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use qspca::codec::{self, CompressedLayer};
use qspca::commands::{self, CompressOptions};
use qspca::quant::QuantMode;
use qspca::solver::{reconstruct, StoppingRule, ThresholdSchedule};
use qspca::SizeReport;

/// Result of every FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QspcaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    IoError = 4,
    BadFormat = 5,
    SolveFailed = 6,
    BufferTooSmall = 7,
    InternalPanic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: impl std::fmt::Display) {
    let sanitized = message.to_string().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap();
    });
}

fn fail(status: QspcaStatus, message: impl std::fmt::Display) -> QspcaStatus {
    set_error(message);
    status
}

fn status_of(err: &qspca::Error) -> QspcaStatus {
    use qspca::Error::*;
    match err {
        Io(_) => QspcaStatus::IoError,
        BadMagic { .. } | BadVersion(_) | Truncated { .. } | TrailingBytes(_)
        | PopcountMismatch { .. } | BadContainer(_) | NonFinite { .. } => QspcaStatus::BadFormat,
        SvdNonConvergence { .. } => QspcaStatus::SolveFailed,
        _ => QspcaStatus::InvalidArgument,
    }
}

unsafe fn path_arg(ptr: *const c_char) -> Result<PathBuf, QspcaStatus> {
    if ptr.is_null() {
        return Err(fail(QspcaStatus::NullArgument, "null path argument"));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(e) => Err(fail(QspcaStatus::InvalidUtf8, e)),
    }
}

fn guard(body: impl FnOnce() -> QspcaStatus) -> QspcaStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(QspcaStatus::InternalPanic, "internal panic"),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qspca_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread. Valid until the next
/// FFI call from the same thread.
#[no_mangle]
pub extern "C" fn qspca_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Compression settings. Sentinels: `fixed_iterations < 0` selects
/// validation-patience stopping; `stride`/`padding < 0` defer to the
/// calibration archive (then 1 and 0).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct QspcaCompressOptions {
    pub d: u32,
    pub k: u32,
    pub b_c: u32,
    pub b_z: u32,
    /// 0 = one-shot thresholding, 1 = iterative.
    pub iterative: u32,
    pub fixed_iterations: i64,
    pub extra_sparsity: f64,
    /// 0 = unsigned clamp range, 1 = symmetric signed.
    pub signed_quant: u32,
    pub stride: i64,
    pub padding: i64,
    pub seed: u64,
}

/// Library defaults (one-shot thresholding, validation-patience stopping)
/// at rank `k`.
#[no_mangle]
pub extern "C" fn qspca_compress_options_default(k: u32) -> QspcaCompressOptions {
    QspcaCompressOptions {
        d: 256,
        k,
        b_c: 4,
        b_z: 4,
        iterative: 0,
        fixed_iterations: -1,
        extra_sparsity: 0.0,
        signed_quant: 1,
        stride: -1,
        padding: -1,
        seed: 0,
    }
}

fn to_compress_options(
    opts: &QspcaCompressOptions,
    weights: PathBuf,
    calib: PathBuf,
    out: PathBuf,
) -> Result<CompressOptions, QspcaStatus> {
    let narrow = |v: u32, what: &str| -> Result<u8, QspcaStatus> {
        u8::try_from(v).map_err(|_| fail(QspcaStatus::InvalidArgument, format!("{what} = {v} out of range")))
    };
    Ok(CompressOptions {
        weights,
        calib,
        out,
        report: None,
        d: opts.d as usize,
        k: opts.k as usize,
        b_c: narrow(opts.b_c, "b_c")?,
        b_z: narrow(opts.b_z, "b_z")?,
        extra_sparsity: opts.extra_sparsity,
        sparsity_count: None,
        schedule: if opts.iterative != 0 {
            ThresholdSchedule::Iterative
        } else {
            ThresholdSchedule::OneShot
        },
        stopping: if opts.fixed_iterations >= 0 {
            StoppingRule::FixedIterations(opts.fixed_iterations as usize)
        } else {
            StoppingRule::ValidationPatience {
                max_iterations: 10_000,
            }
        },
        quant_mode: if opts.signed_quant != 0 {
            QuantMode::SymmetricSigned
        } else {
            QuantMode::PaperLiteralUnsigned
        },
        stride: (opts.stride >= 0).then_some(opts.stride as usize),
        padding: (opts.padding >= 0).then_some(opts.padding as usize),
        seed: opts.seed,
    })
}

/// Runs the full factorization pipeline on QSPT archives and writes a QSPC
/// container to `out_path`.
#[no_mangle]
pub unsafe extern "C" fn qspca_compress_file(
    weights_path: *const c_char,
    calib_path: *const c_char,
    options: *const QspcaCompressOptions,
    out_path: *const c_char,
) -> QspcaStatus {
    guard(|| {
        let weights = match path_arg(weights_path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let calib = match path_arg(calib_path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let out = match path_arg(out_path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        if options.is_null() {
            return fail(QspcaStatus::NullArgument, "null options");
        }
        let opts = match to_compress_options(&*options, weights, calib, out) {
            Ok(o) => o,
            Err(s) => return s,
        };
        match commands::compress(&opts) {
            Ok(_) => QspcaStatus::Ok,
            Err(e) => fail(status_of(&e), e),
        }
    })
}

/// Reconstructs the weight tensor from a QSPC container into a QSPT archive.
#[no_mangle]
pub unsafe extern "C" fn qspca_decompress_file(
    input_path: *const c_char,
    out_path: *const c_char,
) -> QspcaStatus {
    guard(|| {
        let input = match path_arg(input_path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let out = match path_arg(out_path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match commands::decompress(&input, &out) {
            Ok(_) => QspcaStatus::Ok,
            Err(e) => fail(status_of(&e), e),
        }
    })
}

/// Opaque handle to a parsed compressed layer.
pub struct QspcaLayer {
    layer: CompressedLayer,
}

/// Opens a QSPC container. On success the handle must be released with
/// [`qspca_layer_free`].
#[no_mangle]
pub unsafe extern "C" fn qspca_layer_open(
    path: *const c_char,
    out_layer: *mut *mut QspcaLayer,
) -> QspcaStatus {
    guard(|| {
        if out_layer.is_null() {
            return fail(QspcaStatus::NullArgument, "null output handle");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match codec::read_file(&path) {
            Ok(layer) => {
                *out_layer = Box::into_raw(Box::new(QspcaLayer { layer }));
                QspcaStatus::Ok
            }
            Err(e) => fail(status_of(&e), e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn qspca_layer_free(layer: *mut QspcaLayer) {
    if !layer.is_null() {
        drop(Box::from_raw(layer));
    }
}

/// Writes `(f_out, f_in, h, w)` into `out_shape`.
#[no_mangle]
pub unsafe extern "C" fn qspca_layer_shape(
    layer: *const QspcaLayer,
    out_shape: *mut u32,
) -> QspcaStatus {
    guard(|| {
        if layer.is_null() || out_shape.is_null() {
            return fail(QspcaStatus::NullArgument, "null argument");
        }
        let shape = (*layer).layer.shape;
        std::slice::from_raw_parts_mut(out_shape, 4).copy_from_slice(&shape);
        QspcaStatus::Ok
    })
}

/// Number of elements in the reconstructed weight tensor.
#[no_mangle]
pub unsafe extern "C" fn qspca_layer_element_count(
    layer: *const QspcaLayer,
    out_count: *mut u64,
) -> QspcaStatus {
    guard(|| {
        if layer.is_null() || out_count.is_null() {
            return fail(QspcaStatus::NullArgument, "null argument");
        }
        *out_count = (*layer).layer.shape.iter().map(|&v| v as u64).product();
        QspcaStatus::Ok
    })
}

/// Size accounting mirrored into a plain C struct.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct QspcaSizeReport {
    pub l_o_bits: u64,
    pub l_c_bits: u64,
    pub l_q_bits: u64,
    pub nonzeros: u64,
    pub latent_elements: u64,
    pub weight_elements: u64,
    pub codebook_elements: u64,
    pub tiles: u64,
    pub payload_bytes: u64,
    pub centering_bytes: u64,
    pub sparsity: f64,
    pub compression_ratio: f64,
    /// 1 when the mask + nonzero encoding beats dense latent codes.
    pub sparse_payoff: u32,
}

impl From<SizeReport> for QspcaSizeReport {
    fn from(r: SizeReport) -> Self {
        Self {
            l_o_bits: r.l_o_bits,
            l_c_bits: r.l_c_bits,
            l_q_bits: r.l_q_bits,
            nonzeros: r.nonzeros,
            latent_elements: r.latent_elements,
            weight_elements: r.weight_elements,
            codebook_elements: r.codebook_elements,
            tiles: r.tiles,
            payload_bytes: r.payload_bytes,
            centering_bytes: r.centering_bytes,
            sparsity: r.sparsity,
            compression_ratio: r.compression_ratio,
            sparse_payoff: r.sparse_payoff as u32,
        }
    }
}

#[no_mangle]
pub unsafe extern "C" fn qspca_layer_size_report(
    layer: *const QspcaLayer,
    out_report: *mut QspcaSizeReport,
) -> QspcaStatus {
    guard(|| {
        if layer.is_null() || out_report.is_null() {
            return fail(QspcaStatus::NullArgument, "null argument");
        }
        match SizeReport::from_layer(&(*layer).layer) {
            Ok(report) => {
                *out_report = report.into();
                QspcaStatus::Ok
            }
            Err(e) => fail(status_of(&e), e),
        }
    })
}

/// Reconstructs the weight tensor into `buffer` (row-major over
/// `(f_out, f_in, h, w)`). `len` must equal the element count.
#[no_mangle]
pub unsafe extern "C" fn qspca_layer_reconstruct(
    layer: *const QspcaLayer,
    buffer: *mut f32,
    len: usize,
) -> QspcaStatus {
    guard(|| {
        if layer.is_null() || buffer.is_null() {
            return fail(QspcaStatus::NullArgument, "null argument");
        }
        let compressed = &(*layer).layer;
        let expected: usize = compressed.shape.iter().map(|&v| v as usize).product();
        if len < expected {
            return fail(
                QspcaStatus::BufferTooSmall,
                format!("buffer holds {len} elements, need {expected}"),
            );
        }
        let decoded = codec::decode(compressed).and_then(|(pair, mean, shape)| {
            reconstruct(&pair, &mean, shape)
        });
        match decoded {
            Ok(weights) => {
                std::slice::from_raw_parts_mut(buffer, expected).copy_from_slice(weights.data());
                QspcaStatus::Ok
            }
            Err(e) => fail(status_of(&e), e),
        }
    })
}
