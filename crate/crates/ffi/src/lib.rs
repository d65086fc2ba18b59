//! C ABI over the rainforge engine.
//!
//! Images cross the boundary as row-major `height x width x channels`
//! arrays of `double` (channel fastest). Every entry point returns an
//! [`RfStatus`]; on failure a message is kept per thread and can be read
//! with [`rf_last_error`]. Generators are opaque handles released with
//! [`rf_generator_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rainforge::pipeline::{GenerationConfig, Generator};
use rainforge::rot_tv::{degree_grid, orientation_scan, rot_tv_loss};
use rainforge::{Error, Tensor3};

/// Result code of every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RfStatus {
    Ok = 0,
    /// Invalid argument, shape or config.
    Validation = 1,
    /// File could not be read or written.
    Io = 2,
    /// A required pointer was null.
    NullPointer = 3,
    /// Internal panic; the handle should be discarded.
    Panic = 4,
}

/// Opaque generator handle.
pub struct RfGenerator {
    inner: Generator,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn from_error(e: Error) -> RfStatus {
    let code = e.exit_code();
    set_error(e.to_string());
    if code == 2 {
        RfStatus::Io
    } else {
        RfStatus::Validation
    }
}

fn guard(f: impl FnOnce() -> Result<(), RfStatus>) -> RfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RfStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            RfStatus::Panic
        }
    }
}

fn null(what: &str) -> RfStatus {
    set_error(format!("{what} is null"));
    RfStatus::NullPointer
}

fn invalid(msg: String) -> RfStatus {
    set_error(msg);
    RfStatus::Validation
}

/// # Safety
/// `data` must point to `h * w * c` readable doubles.
unsafe fn read_tensor(data: *const f64, h: usize, w: usize, c: usize) -> Result<Tensor3, RfStatus> {
    if data.is_null() {
        return Err(null("image buffer"));
    }
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| invalid("image size overflows".into()))?;
    let slice = std::slice::from_raw_parts(data, n);
    Tensor3::from_vec(h, w, c, slice.to_vec()).map_err(from_error)
}

/// # Safety
/// `out` must point to `t.data().len()` writable doubles when non-null.
unsafe fn write_tensor(t: &Tensor3, out: *mut f64) {
    if !out.is_null() {
        std::ptr::copy_nonoverlapping(t.data().as_ptr(), out, t.data().len());
    }
}

/// Creates a generator with default settings and the given master seed.
///
/// # Safety
/// `out` must be a valid pointer to write the handle into.
#[no_mangle]
pub unsafe extern "C" fn rf_generator_new(seed: u64, out: *mut *mut RfGenerator) -> RfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = GenerationConfig {
            seed,
            ..GenerationConfig::default()
        };
        let g = Generator::new(cfg).map_err(from_error)?;
        *out = Box::into_raw(Box::new(RfGenerator { inner: g }));
        Ok(())
    })
}

/// Creates a generator from a TOML config file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rf_generator_from_config(path: *const c_char, out: *mut *mut RfGenerator) -> RfStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not UTF-8".into()))?;
        let cfg = GenerationConfig::load(Path::new(p)).map_err(from_error)?;
        let g = Generator::new(cfg).map_err(from_error)?;
        *out = Box::into_raw(Box::new(RfGenerator { inner: g }));
        Ok(())
    })
}

/// Releases a generator; null is ignored.
///
/// # Safety
/// `gen` must come from one of the constructors and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rf_generator_free(gen: *mut RfGenerator) {
    if !gen.is_null() {
        drop(Box::from_raw(gen));
    }
}

/// Renders a rainy image over a `height x width x 3` background in `[0, 1]`
/// with explicit factors (degrees for `theta_deg`). Noise and mixing
/// weights come from image `index` of the generator's seed. `rainy_out`
/// receives `height * width * 3` values; `rain_layer_out` and
/// `sparsity_out` may be null.
///
/// # Safety
/// Buffers must be valid for the stated sizes.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn rf_generator_render(
    gen: *const RfGenerator,
    background: *const f64,
    height: usize,
    width: usize,
    theta_deg: f64,
    s_l: f64,
    s_w: f64,
    tau: f64,
    index: u64,
    rainy_out: *mut f64,
    rain_layer_out: *mut f64,
    sparsity_out: *mut f64,
) -> RfStatus {
    guard(|| {
        if gen.is_null() {
            return Err(null("generator"));
        }
        if rainy_out.is_null() {
            return Err(null("rainy_out"));
        }
        let g = &(*gen).inner;
        let bg = read_tensor(background, height, width, 3)?;
        let mut f = g.sample(index).map_err(from_error)?;
        f.theta_deg.iter_mut().for_each(|t| *t = theta_deg);
        f.s_l = s_l;
        f.s_w = s_w;
        f.tau = tau;
        let r = g.render_rainy(&bg, &f).map_err(from_error)?;
        write_tensor(&r.scene.rainy, rainy_out);
        write_tensor(&r.scene.rain_layer, rain_layer_out);
        if !sparsity_out.is_null() {
            *sparsity_out = r.record.sparsity;
        }
        Ok(())
    })
}

/// Rotatable TV of a `height x width x channels` layer at `theta_deg`.
///
/// # Safety
/// `layer` must hold `height * width * channels` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rf_rot_tv_loss(
    layer: *const f64,
    height: usize,
    width: usize,
    channels: usize,
    theta_deg: f64,
    out: *mut f64,
) -> RfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let t = read_tensor(layer, height, width, channels)?;
        *out = rot_tv_loss(&t, theta_deg.to_radians()).map_err(from_error)?;
        Ok(())
    })
}

/// Angle in degrees on `theta_min, theta_min + step, ..., theta_max` that
/// minimizes the rotatable TV; ties go to the smallest magnitude.
///
/// # Safety
/// `layer` must hold `height * width * channels` doubles; `best_out` must be valid.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn rf_orientation_scan(
    layer: *const f64,
    height: usize,
    width: usize,
    channels: usize,
    theta_min: f64,
    theta_max: f64,
    step: f64,
    best_out: *mut f64,
) -> RfStatus {
    guard(|| {
        if best_out.is_null() {
            return Err(null("best_out"));
        }
        let t = read_tensor(layer, height, width, channels)?;
        let grid = degree_grid(theta_min, theta_max, step).map_err(from_error)?;
        *best_out = orientation_scan(&t, &grid).map_err(from_error)?.best_deg;
        Ok(())
    })
}

/// Copies the calling thread's last error message into `buf` (always
/// NUL-terminated when `len > 0`) and returns the full message length in
/// bytes, excluding the terminator; 0 when there is no error.
///
/// # Safety
/// `buf` must be writable for `len` bytes or null.
#[no_mangle]
pub unsafe extern "C" fn rf_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
