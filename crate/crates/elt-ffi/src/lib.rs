//! C ABI over the core library. Handles are opaque pointers, every call
//! returns a status code, and the last error message is kept per thread.
//!
//! The exit-code convention of the CLI carries over: 2 config, 3 numeric,
//! 4 i/o; pointer misuse gets its own codes.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use elt::ckpt;
use elt::diffusion::{sample as diffusion_sample, NoiseSchedule, SampleOptions};
use elt::error::EltError;
use elt::masked::{generate, GenerateOptions};
use elt::model::{count_flops, count_params, LoopedModel, Mode};
use elt::rng::rng_from_seed;

/// Status codes returned by every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EltStatus {
    Ok = 0,
    ConfigError = 2,
    NumericError = 3,
    IoError = 4,
    NullPointer = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque model handle.
pub struct EltModel {
    inner: LoopedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &EltError) -> EltStatus {
    match err {
        EltError::Config(_) => EltStatus::ConfigError,
        EltError::Shape { .. } | EltError::Numeric(_) => EltStatus::NumericError,
        EltError::Io(_) | EltError::Json(_) | EltError::Checkpoint(_) => EltStatus::IoError,
    }
}

fn guard<F: FnOnce() -> EltStatus>(f: F) -> EltStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            EltStatus::Panic
        }
    }
}

/// Copy the last error message for this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null (query mode).
#[no_mangle]
pub unsafe extern "C" fn elt_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Load a checkpoint into a new model handle.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be a valid
/// writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn elt_model_load(
    path: *const c_char,
    out: *mut *mut EltModel,
) -> EltStatus {
    if path.is_null() || out.is_null() {
        set_error("null pointer");
        return EltStatus::NullPointer;
    }
    guard(|| {
        let path = match CStr::from_ptr(path).to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("path is not valid UTF-8");
                return EltStatus::ConfigError;
            }
        };
        match ckpt::load(Path::new(path)).and_then(|(cfg, params)| LoopedModel::new(cfg, params)) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(EltModel { inner: model }));
                EltStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Release a model handle. Null is a no-op.
///
/// # Safety
/// `model` must have come from `elt_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn elt_model_free(model: *mut EltModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// 0 = masked, 1 = diffusion, -1 on null.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn elt_model_mode(model: *const EltModel) -> c_int {
    match model.as_ref() {
        Some(m) => match m.inner.cfg().mode {
            Mode::Masked => 0,
            Mode::Diffusion => 1,
        },
        None => -1,
    }
}

/// Architecture numbers a binding needs for buffer sizing.
///
/// # Safety
/// `model` must be a live handle; out pointers may be null to skip fields.
#[no_mangle]
pub unsafe extern "C" fn elt_model_dims(
    model: *const EltModel,
    n_layers: *mut usize,
    d_model: *mut usize,
    seq_len: *mut usize,
    l_max: *mut usize,
    vocab_size: *mut usize,
    latent_dim: *mut usize,
) -> EltStatus {
    let m = match model.as_ref() {
        Some(m) => m,
        None => {
            set_error("null model");
            return EltStatus::NullPointer;
        }
    };
    let cfg = m.inner.cfg();
    if !n_layers.is_null() {
        *n_layers = cfg.n_layers;
    }
    if !d_model.is_null() {
        *d_model = cfg.d_model;
    }
    if !seq_len.is_null() {
        *seq_len = cfg.seq_len;
    }
    if !l_max.is_null() {
        *l_max = cfg.l_max;
    }
    if !vocab_size.is_null() {
        *vocab_size = cfg.vocab_size.unwrap_or(0);
    }
    if !latent_dim.is_null() {
        *latent_dim = cfg.latent_dim.unwrap_or(0);
    }
    EltStatus::Ok
}

/// Exact parameter counts (block-only and total).
///
/// # Safety
/// `model` must be a live handle; out pointers may be null to skip fields.
#[no_mangle]
pub unsafe extern "C" fn elt_model_param_count(
    model: *const EltModel,
    block: *mut u64,
    total: *mut u64,
) -> EltStatus {
    let m = match model.as_ref() {
        Some(m) => m,
        None => {
            set_error("null model");
            return EltStatus::NullPointer;
        }
    };
    guard(|| match count_params(m.inner.cfg()) {
        Ok(c) => {
            if !block.is_null() {
                *block = c.block;
            }
            if !total.is_null() {
                *total = c.total;
            }
            EltStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            status_of(&e)
        }
    })
}

/// Analytic FLOPs of one model invocation at the given loop budget.
///
/// # Safety
/// `model` must be a live handle; out pointers may be null to skip fields.
#[no_mangle]
pub unsafe extern "C" fn elt_model_flops(
    model: *const EltModel,
    loops: usize,
    block: *mut u64,
    total: *mut u64,
) -> EltStatus {
    let m = match model.as_ref() {
        Some(m) => m,
        None => {
            set_error("null model");
            return EltStatus::NullPointer;
        }
    };
    guard(|| {
        let cfg = m.inner.cfg();
        match count_flops(cfg, loops, cfg.seq_len) {
            Ok(f) => {
                if !block.is_null() {
                    *block = f.block;
                }
                if !total.is_null() {
                    *total = f.total;
                }
                EltStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Masked generation. `class_id < 0` samples unconditionally. Writes exactly
/// seq_len token ids (mask sentinel never appears in a finished grid).
///
/// # Safety
/// `model` must be a live handle; `out_tokens` must hold `out_len` u32s.
#[no_mangle]
pub unsafe extern "C" fn elt_sample_masked(
    model: *const EltModel,
    class_id: i64,
    steps: usize,
    loops: usize,
    cfg_scale: f64,
    seed: u64,
    out_tokens: *mut u32,
    out_len: usize,
    block_applications: *mut u64,
) -> EltStatus {
    let m = match model.as_ref() {
        Some(m) => m,
        None => {
            set_error("null model");
            return EltStatus::NullPointer;
        }
    };
    if out_tokens.is_null() {
        set_error("null output buffer");
        return EltStatus::NullPointer;
    }
    guard(|| {
        let cfg = m.inner.cfg();
        if cfg.mode != Mode::Masked {
            set_error("model is not masked-mode");
            return EltStatus::ConfigError;
        }
        if out_len < cfg.seq_len {
            set_error(format!("buffer holds {out_len}, need {}", cfg.seq_len));
            return EltStatus::BufferTooSmall;
        }
        let vocab = match cfg.vocab_size() {
            Ok(v) => v,
            Err(e) => {
                set_error(e.to_string());
                return status_of(&e);
            }
        };
        let opts = GenerateOptions {
            shape: vec![cfg.seq_len],
            steps,
            loops,
            cfg_scale,
            temp_bias: elt::masked::DEFAULT_TEMP_BIAS,
            temp_scale: elt::masked::DEFAULT_TEMP_SCALE,
        };
        let class = (class_id >= 0).then_some(class_id as usize);
        let mut rng = rng_from_seed(seed);
        m.inner.reset_block_applications();
        match generate(&m.inner, vocab, class, &opts, &mut rng) {
            Ok((grid, _)) => {
                for (i, &t) in grid.tokens().iter().enumerate() {
                    *out_tokens.add(i) = t as u32;
                }
                if !block_applications.is_null() {
                    *block_applications = m.inner.block_applications();
                }
                EltStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}

/// DDPM sampling. `class_id < 0` samples unconditionally. Writes exactly
/// seq_len * latent_dim values, row-major.
///
/// # Safety
/// `model` must be a live handle; `out_values` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn elt_sample_diffusion(
    model: *const EltModel,
    class_id: i64,
    steps: usize,
    loops: usize,
    cfg_scale: f64,
    seed: u64,
    out_values: *mut f64,
    out_len: usize,
    block_applications: *mut u64,
) -> EltStatus {
    let m = match model.as_ref() {
        Some(m) => m,
        None => {
            set_error("null model");
            return EltStatus::NullPointer;
        }
    };
    if out_values.is_null() {
        set_error("null output buffer");
        return EltStatus::NullPointer;
    }
    guard(|| {
        let cfg = m.inner.cfg();
        if cfg.mode != Mode::Diffusion {
            set_error("model is not diffusion-mode");
            return EltStatus::ConfigError;
        }
        let latent_dim = match cfg.latent_dim() {
            Ok(v) => v,
            Err(e) => {
                set_error(e.to_string());
                return status_of(&e);
            }
        };
        let need = cfg.seq_len * latent_dim;
        if out_len < need {
            set_error(format!("buffer holds {out_len}, need {need}"));
            return EltStatus::BufferTooSmall;
        }
        let schedule = match NoiseSchedule::shifted_cosine(steps, 1.0) {
            Ok(s) => s,
            Err(e) => {
                set_error(e.to_string());
                return status_of(&e);
            }
        };
        let opts = SampleOptions {
            loops,
            cfg_scale,
            spatial_shape: vec![cfg.seq_len],
        };
        let class = (class_id >= 0).then_some(class_id as usize);
        let mut rng = rng_from_seed(seed);
        m.inner.reset_block_applications();
        match diffusion_sample(&m.inner, &schedule, class, &opts, &mut rng) {
            Ok((latent, _)) => {
                for (i, &v) in latent.values.data().iter().enumerate() {
                    *out_values.add(i) = v;
                }
                if !block_applications.is_null() {
                    *block_applications = m.inner.block_applications();
                }
                EltStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use elt::model::{BlockParams, LoopConfig};
    use std::ffi::CString;

    fn write_ckpt(dir: &Path, cfg: &LoopConfig) -> std::path::PathBuf {
        let params = BlockParams::init(cfg, 3).unwrap();
        let path = dir.join("m.ckpt");
        ckpt::save(&path, cfg, &params).unwrap();
        path
    }

    #[test]
    fn load_query_sample_free() {
        let dir = std::env::temp_dir().join(format!("elt-ffi-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let cfg = LoopConfig::masked(1, 16, 4, 32, 1, 2, 4, 4, 2);
        let path = write_ckpt(&dir, &cfg);
        let cpath = CString::new(path.to_str().unwrap()).unwrap();

        let mut handle: *mut EltModel = ptr::null_mut();
        let st = unsafe { elt_model_load(cpath.as_ptr(), &mut handle) };
        assert_eq!(st, EltStatus::Ok);
        assert_eq!(unsafe { elt_model_mode(handle) }, 0);

        let mut seq = 0usize;
        let mut vocab = 0usize;
        unsafe {
            elt_model_dims(
                handle,
                ptr::null_mut(),
                ptr::null_mut(),
                &mut seq,
                ptr::null_mut(),
                &mut vocab,
                ptr::null_mut(),
            )
        };
        assert_eq!(seq, 4);
        assert_eq!(vocab, 4);

        let mut block = 0u64;
        let mut total = 0u64;
        assert_eq!(
            unsafe { elt_model_param_count(handle, &mut block, &mut total) },
            EltStatus::Ok
        );
        assert!(total > block && block > 0);

        let mut tokens = vec![0u32; 4];
        let mut apps = 0u64;
        let st = unsafe {
            elt_sample_masked(handle, 1, 4, 2, 1.0, 9, tokens.as_mut_ptr(), 4, &mut apps)
        };
        assert_eq!(st, EltStatus::Ok);
        assert_eq!(apps, 8, "K*L block applications");
        assert!(tokens.iter().all(|&t| t < 4));

        // Deterministic in the seed.
        let mut tokens2 = vec![0u32; 4];
        unsafe {
            elt_sample_masked(handle, 1, 4, 2, 1.0, 9, tokens2.as_mut_ptr(), 4, ptr::null_mut())
        };
        assert_eq!(tokens, tokens2);

        // Too-small buffer is rejected with a readable message.
        let st =
            unsafe { elt_sample_masked(handle, 1, 4, 2, 1.0, 9, tokens.as_mut_ptr(), 2, ptr::null_mut()) };
        assert_eq!(st, EltStatus::BufferTooSmall);
        let mut buf = vec![0i8; 128];
        let n = unsafe { elt_last_error(buf.as_mut_ptr(), buf.len()) };
        assert!(n > 0);

        unsafe { elt_model_free(handle) };
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn diffusion_handle_round_trip() {
        let dir = std::env::temp_dir().join(format!("elt-ffi-d-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let cfg = LoopConfig::diffusion(1, 8, 2, 16, 1, 2, 2, 2, 2);
        let path = write_ckpt(&dir, &cfg);
        let cpath = CString::new(path.to_str().unwrap()).unwrap();
        let mut handle: *mut EltModel = ptr::null_mut();
        assert_eq!(
            unsafe { elt_model_load(cpath.as_ptr(), &mut handle) },
            EltStatus::Ok
        );
        assert_eq!(unsafe { elt_model_mode(handle) }, 1);
        let mut values = vec![0.0f64; 4];
        let mut apps = 0u64;
        let st = unsafe {
            elt_sample_diffusion(handle, -1, 8, 2, 1.0, 4, values.as_mut_ptr(), 4, &mut apps)
        };
        assert_eq!(st, EltStatus::Ok);
        assert_eq!(apps, 16, "T*L block applications");
        assert!(values.iter().all(|v| v.is_finite()));
        unsafe { elt_model_free(handle) };
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn missing_file_reports_io_error() {
        let cpath = CString::new("/nonexistent/elt.ckpt").unwrap();
        let mut handle: *mut EltModel = ptr::null_mut();
        let st = unsafe { elt_model_load(cpath.as_ptr(), &mut handle) };
        assert_eq!(st, EltStatus::IoError);
        assert!(handle.is_null());
    }
}
