//! C ABI for loading a checkpoint, turning a grayscale sketch into a mesh
//! and exporting it.
//!
//! Every function returns an [`SmStatus`]. On failure a message for the
//! calling thread is available from [`sm_last_error`]. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sketchmesh::data::DataError;
use sketchmesh::geometry::io::{export_mesh, MeshFormat};
use sketchmesh::geometry::Mesh;
use sketchmesh::image::GrayImage;
use sketchmesh::training::{InferenceSession, TrainError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    InvalidSketch = 5,
    EmptySketch = 6,
    Internal = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmFormat {
    Obj = 0,
    Stl = 1,
}

/// A loaded checkpoint.
pub struct SmSession {
    inner: InferenceSession,
    id: CString,
}

/// A watertight triangle mesh.
pub struct SmMesh {
    vertices: Vec<f32>,
    faces: Vec<u32>,
    mesh: Mesh,
    elapsed_ms: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: SmStatus, msg: impl AsRef<str>) -> SmStatus {
    set_error(msg.as_ref());
    status
}

fn train_status(e: &TrainError) -> SmStatus {
    match e {
        TrainError::Data(DataError::EmptySketch) => SmStatus::EmptySketch,
        TrainError::Data(_) => SmStatus::InvalidSketch,
        TrainError::Io(_) => SmStatus::Io,
        TrainError::Checkpoint(_) | TrainError::Tensor(_) | TrainError::Config(_) => {
            SmStatus::Checkpoint
        }
        _ => SmStatus::Internal,
    }
}

fn guard(f: impl FnOnce() -> SmStatus) -> SmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == SmStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => fail(SmStatus::Panic, "internal panic"),
    }
}

/// Message describing the last failure on this thread, or an empty string.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

fn finish_session(s: Result<InferenceSession, TrainError>, out: *mut *mut SmSession) -> SmStatus {
    match s {
        Ok(inner) => {
            let id = CString::new(inner.checkpoint_id()).unwrap_or_default();
            let boxed = Box::new(SmSession { inner, id });
            // SAFETY: callers check `out` for null first.
            unsafe { *out = Box::into_raw(boxed) };
            SmStatus::Ok
        }
        Err(e) => fail(train_status(&e), e.to_string()),
    }
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn sm_session_load(
    path: *const c_char,
    out: *mut *mut SmSession,
) -> SmStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(SmStatus::NullPointer, "null argument");
        }
        let path = match CStr::from_ptr(path).to_str() {
            Ok(p) => p,
            Err(_) => return fail(SmStatus::InvalidArgument, "path is not UTF-8"),
        };
        finish_session(InferenceSession::load(Path::new(path)), out)
    })
}

/// Loads a checkpoint from memory.
///
/// # Safety
/// `data` must point to `len` readable bytes and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sm_session_from_bytes(
    data: *const u8,
    len: usize,
    out: *mut *mut SmSession,
) -> SmStatus {
    guard(|| {
        if data.is_null() || out.is_null() {
            return fail(SmStatus::NullPointer, "null argument");
        }
        let bytes = std::slice::from_raw_parts(data, len);
        finish_session(InferenceSession::from_bytes(bytes), out)
    })
}

/// # Safety
/// `session` must come from a `sm_session_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn sm_session_free(session: *mut SmSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Sketch resolution the model expects; 0 for a null session.
///
/// # Safety
/// `session` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sm_session_resolution(session: *const SmSession) -> usize {
    session.as_ref().map_or(0, |s| s.inner.resolution())
}

/// SHA-256 of the checkpoint as 64 hex characters, owned by the session.
///
/// # Safety
/// `session` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sm_session_checkpoint_id(session: *const SmSession) -> *const c_char {
    session.as_ref().map_or(ptr::null(), |s| s.id.as_ptr())
}

/// Infers a mesh from a row-major 8-bit grayscale image, dark strokes on a
/// light background. Any size is accepted; it is resampled to the model
/// resolution and thresholded at 128.
///
/// # Safety
/// `pixels` must point to `width * height` readable bytes, `session` must be
/// live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sm_infer(
    session: *const SmSession,
    pixels: *const u8,
    width: usize,
    height: usize,
    out: *mut *mut SmMesh,
) -> SmStatus {
    guard(|| {
        let Some(s) = session.as_ref() else {
            return fail(SmStatus::NullPointer, "null session");
        };
        if pixels.is_null() || out.is_null() {
            return fail(SmStatus::NullPointer, "null argument");
        }
        let Some(n) = width.checked_mul(height) else {
            return fail(SmStatus::InvalidArgument, "image size overflows");
        };
        let img = match GrayImage::new(
            width,
            height,
            std::slice::from_raw_parts(pixels, n).to_vec(),
        ) {
            Ok(i) => i,
            Err(e) => return fail(SmStatus::InvalidArgument, e.to_string()),
        };
        let result = s
            .inner
            .sketch_from_image(&img)
            .and_then(|sk| s.inner.infer(&sk));
        match result {
            Ok(r) => {
                let mesh = SmMesh {
                    vertices: r.mesh.vertices().iter().flatten().copied().collect(),
                    faces: r.mesh.faces().iter().flatten().copied().collect(),
                    elapsed_ms: r.elapsed.as_secs_f64() * 1e3,
                    mesh: r.mesh,
                };
                *out = Box::into_raw(Box::new(mesh));
                SmStatus::Ok
            }
            Err(e) => fail(train_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `mesh` must come from [`sm_infer`] or be null.
#[no_mangle]
pub unsafe extern "C" fn sm_mesh_free(mesh: *mut SmMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// # Safety
/// `mesh` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sm_mesh_vertex_count(mesh: *const SmMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.vertices.len() / 3)
}

/// # Safety
/// `mesh` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sm_mesh_face_count(mesh: *const SmMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.faces.len() / 3)
}

/// `3 * vertex_count` floats, `x y z` per vertex, owned by the mesh.
///
/// # Safety
/// `mesh` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sm_mesh_vertices(mesh: *const SmMesh) -> *const f32 {
    mesh.as_ref().map_or(ptr::null(), |m| m.vertices.as_ptr())
}

/// `3 * face_count` zero-based vertex indices, owned by the mesh.
///
/// # Safety
/// `mesh` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sm_mesh_faces(mesh: *const SmMesh) -> *const u32 {
    mesh.as_ref().map_or(ptr::null(), |m| m.faces.as_ptr())
}

/// Wall-clock inference time in milliseconds.
///
/// # Safety
/// `mesh` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sm_mesh_inference_ms(mesh: *const SmMesh) -> f64 {
    mesh.as_ref().map_or(0.0, |m| m.elapsed_ms)
}

/// Serializes the mesh. The buffer is released with [`sm_bytes_free`].
///
/// # Safety
/// `mesh` must be live; `out_data` and `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sm_mesh_export(
    mesh: *const SmMesh,
    format: SmFormat,
    out_data: *mut *mut u8,
    out_len: *mut usize,
) -> SmStatus {
    guard(|| {
        let Some(m) = mesh.as_ref() else {
            return fail(SmStatus::NullPointer, "null mesh");
        };
        if out_data.is_null() || out_len.is_null() {
            return fail(SmStatus::NullPointer, "null argument");
        }
        let f = match format {
            SmFormat::Obj => MeshFormat::Obj,
            SmFormat::Stl => MeshFormat::Stl,
        };
        match export_mesh(&m.mesh, f) {
            Ok(bytes) => {
                let boxed = bytes.into_boxed_slice();
                *out_len = boxed.len();
                *out_data = Box::into_raw(boxed) as *mut u8;
                SmStatus::Ok
            }
            Err(e) => fail(SmStatus::Internal, e.to_string()),
        }
    })
}

/// # Safety
/// `data` and `len` must come from one [`sm_mesh_export`] call, or `data`
/// must be null.
#[no_mangle]
pub unsafe extern "C" fn sm_bytes_free(data: *mut u8, len: usize) {
    if !data.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(data, len)));
    }
}
