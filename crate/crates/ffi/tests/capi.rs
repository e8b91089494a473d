use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use sketchmesh::geometry::io::{parse_obj, parse_stl};
use sketchmesh::networks::NetConfig;
use sketchmesh::training::{sha256_hex, Checkpoint, TrainConfig, Trainer};
use sketchmesh_ffi::*;

const RES: usize = 32;

fn fixture() -> Vec<u8> {
    let cfg = TrainConfig {
        net: NetConfig {
            resolution: RES,
            latent: 8,
            enc_channels: vec![4, 4, 8, 8, 8],
            enc_strides: vec![2, 2, 2, 1, 1],
            dec_hidden: 8,
            sd_channels: vec![4, 4],
            ..NetConfig::default()
        },
        ..TrainConfig::default()
    };
    Checkpoint::from_trainer(&Trainer::new(cfg).unwrap()).to_bytes()
}

fn ring(res: usize) -> Vec<u8> {
    let c = res as f64 / 2.0 - 0.5;
    (0..res * res)
        .map(|i| {
            let (y, x) = ((i / res) as f64, (i % res) as f64);
            let d = ((x - c).powi(2) + (y - c).powi(2)).sqrt();
            if (d - res as f64 * 0.3).abs() < 1.0 {
                0
            } else {
                255
            }
        })
        .collect()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(sm_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn session(bytes: &[u8]) -> *mut SmSession {
    let mut s = ptr::null_mut();
    let st = unsafe { sm_session_from_bytes(bytes.as_ptr(), bytes.len(), &mut s) };
    assert_eq!(st, SmStatus::Ok, "{}", last_error());
    s
}

#[test]
fn infer_and_export_through_the_c_abi() {
    let bytes = fixture();
    let s = session(&bytes);
    unsafe {
        assert_eq!(sm_session_resolution(s), RES);
        let id = CStr::from_ptr(sm_session_checkpoint_id(s))
            .to_str()
            .unwrap();
        assert_eq!(id, sha256_hex(&bytes));

        let px = ring(48);
        let mut m = ptr::null_mut();
        assert_eq!(sm_infer(s, px.as_ptr(), 48, 48, &mut m), SmStatus::Ok);
        assert_eq!(sm_mesh_vertex_count(m), 642);
        assert_eq!(sm_mesh_face_count(m), 1280);
        assert!(sm_mesh_inference_ms(m) >= 0.0);
        let verts = std::slice::from_raw_parts(sm_mesh_vertices(m), 642 * 3);
        let faces = std::slice::from_raw_parts(sm_mesh_faces(m), 1280 * 3);
        assert!(faces.iter().all(|&i| i < 642));

        let (mut data, mut len) = (ptr::null_mut(), 0usize);
        assert_eq!(
            sm_mesh_export(m, SmFormat::Stl, &mut data, &mut len),
            SmStatus::Ok
        );
        assert_eq!(len, 84 + 50 * 1280);
        assert_eq!(
            parse_stl(std::slice::from_raw_parts(data, len))
                .unwrap()
                .len(),
            1280
        );
        sm_bytes_free(data, len);

        assert_eq!(
            sm_mesh_export(m, SmFormat::Obj, &mut data, &mut len),
            SmStatus::Ok
        );
        let text = std::str::from_utf8(std::slice::from_raw_parts(data, len)).unwrap();
        let back = parse_obj(text).unwrap();
        let flat: Vec<f32> = back.vertices().iter().flatten().copied().collect();
        assert_eq!(flat, verts);
        sm_bytes_free(data, len);

        sm_mesh_free(m);
        sm_session_free(s);
    }
}

#[test]
fn inference_is_deterministic() {
    let s = session(&fixture());
    let px = ring(RES);
    unsafe {
        let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(sm_infer(s, px.as_ptr(), RES, RES, &mut a), SmStatus::Ok);
        assert_eq!(sm_infer(s, px.as_ptr(), RES, RES, &mut b), SmStatus::Ok);
        let va = std::slice::from_raw_parts(sm_mesh_vertices(a), 642 * 3);
        let vb = std::slice::from_raw_parts(sm_mesh_vertices(b), 642 * 3);
        assert_eq!(va, vb);
        sm_mesh_free(a);
        sm_mesh_free(b);
        sm_session_free(s);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let s = session(&fixture());
    unsafe {
        let mut m = ptr::null_mut();
        let blank = vec![255u8; RES * RES];
        assert_eq!(
            sm_infer(s, blank.as_ptr(), RES, RES, &mut m),
            SmStatus::EmptySketch
        );
        assert!(m.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(
            sm_infer(s, blank.as_ptr(), 0, RES, &mut m),
            SmStatus::InvalidArgument
        );
        assert_eq!(
            sm_infer(ptr::null(), blank.as_ptr(), RES, RES, &mut m),
            SmStatus::NullPointer
        );
        assert_eq!(
            sm_infer(s, ptr::null(), RES, RES, &mut m),
            SmStatus::NullPointer
        );

        let mut t = ptr::null_mut();
        let junk = b"not a checkpoint";
        let st = sm_session_from_bytes(junk.as_ptr(), junk.len(), &mut t);
        assert_eq!(st, SmStatus::Checkpoint);
        assert!(t.is_null());

        let missing = CString::new("/nonexistent/model.d3sk").unwrap();
        assert_eq!(sm_session_load(missing.as_ptr(), &mut t), SmStatus::Io);
        assert_eq!(sm_session_load(ptr::null(), &mut t), SmStatus::NullPointer);

        assert_eq!(sm_session_resolution(ptr::null()), 0);
        assert!(sm_session_checkpoint_id(ptr::null()).is_null());
        assert_eq!(sm_mesh_vertex_count(ptr::null()), 0);
        sm_mesh_free(ptr::null_mut());
        sm_session_free(ptr::null_mut());
        sm_bytes_free(ptr::null_mut(), 0);
        sm_session_free(s);
    }
}

#[test]
fn load_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.d3sk");
    let bytes = fixture();
    std::fs::write(&path, &bytes).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut s = ptr::null_mut();
    unsafe {
        assert_eq!(sm_session_load(c.as_ptr(), &mut s), SmStatus::Ok);
        assert_eq!(
            CStr::from_ptr(sm_session_checkpoint_id(s))
                .to_str()
                .unwrap(),
            sha256_hex(&bytes)
        );
        sm_session_free(s);
    }
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/sketchmesh.h")
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(header()).unwrap();
    for name in [
        "sm_session_load",
        "sm_session_from_bytes",
        "sm_session_free",
        "sm_infer",
        "sm_mesh_export",
        "sm_bytes_free",
        "sm_last_error",
        "SM_STATUS_EMPTY_SKETCH",
        "typedef struct SmSession SmSession",
    ] {
        assert!(h.contains(name), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(out) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c"])
        .arg(header())
        .output()
    else {
        eprintln!("no C compiler; skipped");
        return;
    };
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
