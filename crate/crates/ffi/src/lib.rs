//! C ABI over the `vbank` prototype bank.
//!
//! Every fallible function returns a [`VbStatus`]. On anything other than
//! `VB_STATUS_OK`, a human-readable message is available from
//! [`vb_last_error_message`] on the same thread until the next failing call.
//! Banks are opaque: create them with [`vb_bank_new`], [`vb_bank_import`] or
//! [`vb_bank_decode`] and release them with [`vb_bank_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use vbank::io::{bank_export, bank_import, decode_bank, encode_bank};
use vbank::{CategoryId, Error, UpdatePolicy, VisualBank};

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    ZeroNorm = 4,
    NonFinite = 5,
    UnknownCategory = 6,
    EmptyCategory = 7,
    BufferTooSmall = 8,
    BadFormat = 9,
    Io = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VbPolicy {
    Averaging = 0,
    Fifo = 1,
}

/// What an insert did to the category.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VbAction {
    Filled = 0,
    Merged = 1,
    Replaced = 2,
}

/// Opaque bank handle.
pub struct VbBank {
    inner: VisualBank,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> VbStatus {
    match e {
        Error::DimensionMismatch { .. } => VbStatus::DimensionMismatch,
        Error::ZeroNorm => VbStatus::ZeroNorm,
        Error::NonFinite | Error::NonFiniteGradient => VbStatus::NonFinite,
        Error::UnknownCategory(_) => VbStatus::UnknownCategory,
        Error::EmptyCategory(_) => VbStatus::EmptyCategory,
        Error::BadMagic | Error::VersionMismatch { .. } | Error::Truncated { .. } | Error::Corrupt(_) => {
            VbStatus::BadFormat
        }
        Error::Io { .. } => VbStatus::Io,
        _ => VbStatus::InvalidArgument,
    }
}

fn fail(status: VbStatus, message: impl Into<String>) -> VbStatus {
    set_last_error(message.into());
    status
}

/// Run `body`, turning library errors and panics into status codes.
fn guard(body: impl FnOnce() -> Result<(), VbStatus>) -> VbStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => VbStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(VbStatus::Panic, "internal panic"),
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, VbStatus>;
}

impl<T> OrStatus<T> for vbank::Result<T> {
    fn or_status(self) -> Result<T, VbStatus> {
        self.map_err(|e| fail(status_of(&e), e.to_string()))
    }
}

fn null_check<T>(p: *const T, name: &str) -> Result<(), VbStatus> {
    if p.is_null() {
        Err(fail(VbStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null or point to `len` readable values.
unsafe fn input_slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], VbStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    null_check(p, name)?;
    Ok(slice::from_raw_parts(p, len))
}

/// # Safety
/// `bank` must be null or a live handle from this library.
unsafe fn bank_ref<'a>(bank: *const VbBank) -> Result<&'a VisualBank, VbStatus> {
    null_check(bank, "bank")?;
    Ok(&(*bank).inner)
}

/// # Safety
/// `bank` must be null or a live handle from this library, not aliased.
unsafe fn bank_mut<'a>(bank: *mut VbBank) -> Result<&'a mut VisualBank, VbStatus> {
    null_check(bank, "bank")?;
    Ok(&mut (*bank).inner)
}

/// # Safety
/// `path` must be null or a NUL-terminated string.
unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, VbStatus> {
    null_check(path, "path")?;
    CStr::from_ptr(path)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(VbStatus::InvalidArgument, "path is not valid UTF-8"))
}

fn hand_out(bank: VisualBank, out: *mut *mut VbBank) {
    // SAFETY: callers have null-checked `out`.
    unsafe { *out = Box::into_raw(Box::new(VbBank { inner: bank })) };
}

/// Message for the last failure on this thread, or null if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn vb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Create an empty bank of `categories × slots × dim`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn vb_bank_new(
    categories: usize,
    slots: usize,
    dim: usize,
    policy: VbPolicy,
    out: *mut *mut VbBank,
) -> VbStatus {
    guard(|| {
        null_check(out, "out")?;
        let policy = match policy {
            VbPolicy::Averaging => UpdatePolicy::Averaging,
            VbPolicy::Fifo => UpdatePolicy::Fifo,
        };
        hand_out(VisualBank::new(categories, slots, dim, policy).or_status()?, out);
        Ok(())
    })
}

/// Release a bank. Null is ignored.
///
/// # Safety
/// `bank` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vb_bank_free(bank: *mut VbBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Shape of a bank. Any output pointer may be null.
///
/// # Safety
/// `bank` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn vb_bank_shape(
    bank: *const VbBank,
    categories: *mut usize,
    slots: *mut usize,
    dim: *mut usize,
) -> VbStatus {
    guard(|| {
        let b = bank_ref(bank)?;
        for (p, v) in [(categories, b.num_categories()), (slots, b.slots_per_category()), (dim, b.dim())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Insert one prompt feature of length `len` under the bank's policy.
/// `out_slot` and `out_action` may be null.
///
/// # Safety
/// `bank` must be a live, unaliased handle; `feature` must point to `len`
/// floats; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn vb_bank_insert(
    bank: *mut VbBank,
    category: usize,
    feature: *const f32,
    len: usize,
    out_slot: *mut usize,
    out_action: *mut VbAction,
) -> VbStatus {
    guard(|| {
        let b = bank_mut(bank)?;
        let f = input_slice(feature, len, "feature")?;
        let record = b.insert(CategoryId(category), f).or_status()?;
        if !out_slot.is_null() {
            *out_slot = record.slot_index;
        }
        if !out_action.is_null() {
            *out_action = match record.action {
                vbank::bank::UpdateAction::Filled => VbAction::Filled,
                vbank::bank::UpdateAction::Merged => VbAction::Merged,
                vbank::bank::UpdateAction::Replaced => VbAction::Replaced,
            };
        }
        Ok(())
    })
}

/// Append an empty category; its id is written to `out_id`.
///
/// # Safety
/// `bank` must be a live, unaliased handle; `out_id` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vb_bank_add_category(bank: *mut VbBank, out_id: *mut usize) -> VbStatus {
    guard(|| {
        let b = bank_mut(bank)?;
        null_check(out_id, "out_id")?;
        *out_id = b.add_category().0;
        Ok(())
    })
}

/// # Safety
/// `bank` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vb_bank_occupancy(bank: *const VbBank, category: usize, out: *mut usize) -> VbStatus {
    guard(|| {
        let b = bank_ref(bank)?;
        null_check(out, "out")?;
        *out = b.occupancy(CategoryId(category)).or_status()?;
        Ok(())
    })
}

/// Mean of the occupied slots of `category`, written to `out[0..len]`.
/// `len` must equal the bank's dimension.
///
/// # Safety
/// `bank` must be a live handle; `out` must point to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn vb_bank_category_mean(
    bank: *const VbBank,
    category: usize,
    out: *mut f32,
    len: usize,
) -> VbStatus {
    guard(|| {
        let b = bank_ref(bank)?;
        null_check(out, "out")?;
        if len != b.dim() {
            return Err(fail(
                VbStatus::DimensionMismatch,
                format!("output length {len}, bank dimension {}", b.dim()),
            ));
        }
        let mean = b.category_mean(CategoryId(category)).or_status()?;
        slice::from_raw_parts_mut(out, len).copy_from_slice(&mean);
        Ok(())
    })
}

/// Serialize into `buf`. The encoded size is always written to `out_len`;
/// if `cap` is smaller, nothing else is written and `VB_STATUS_BUFFER_TOO_SMALL`
/// is returned, so a call with `buf = NULL, cap = 0` queries the size.
///
/// # Safety
/// `bank` must be a live handle; `buf` must point to `cap` writable bytes when
/// `cap > 0`; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vb_bank_encode(
    bank: *const VbBank,
    buf: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> VbStatus {
    guard(|| {
        let b = bank_ref(bank)?;
        null_check(out_len, "out_len")?;
        let bytes = encode_bank(b).or_status()?;
        *out_len = bytes.len();
        if cap < bytes.len() {
            return Err(fail(
                VbStatus::BufferTooSmall,
                format!("need {} bytes, have {cap}", bytes.len()),
            ));
        }
        null_check(buf, "buf")?;
        ptr::copy_nonoverlapping(bytes.as_ptr(), buf, bytes.len());
        Ok(())
    })
}

/// Parse a bank from `len` bytes.
///
/// # Safety
/// `buf` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vb_bank_decode(buf: *const u8, len: usize, out: *mut *mut VbBank) -> VbStatus {
    guard(|| {
        null_check(out, "out")?;
        let bytes = input_slice(buf, len, "buf")?;
        hand_out(decode_bank(bytes).or_status()?, out);
        Ok(())
    })
}

/// # Safety
/// `bank` must be a live handle; `path` must be a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn vb_bank_export(bank: *const VbBank, path: *const c_char) -> VbStatus {
    guard(|| {
        let b = bank_ref(bank)?;
        bank_export(b, path_arg(path)?).or_status()
    })
}

/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vb_bank_import(path: *const c_char, out: *mut *mut VbBank) -> VbStatus {
    guard(|| {
        null_check(out, "out")?;
        hand_out(bank_import(path_arg(path)?).or_status()?, out);
        Ok(())
    })
}

/// Cosine similarity of two vectors of length `len`, accumulated in double
/// precision and clamped to [-1, 1].
///
/// # Safety
/// `a` and `b` must point to `len` readable floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vb_cosine_similarity(
    a: *const f32,
    b: *const f32,
    len: usize,
    out: *mut f64,
) -> VbStatus {
    guard(|| {
        null_check(out, "out")?;
        let (a, b) = (input_slice(a, len, "a")?, input_slice(b, len, "b")?);
        *out = vbank::cosine_similarity(a, b).or_status()?;
        Ok(())
    })
}
