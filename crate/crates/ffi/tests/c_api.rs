use std::ffi::{c_char, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use natwalk_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { nw_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn model_state_round_trip() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(nw_model_default(&mut m), NwStatus::Ok);
        let (nd, nm, nf) = (nw_model_n_dofs(m), nw_model_n_muscles(m), nw_model_n_feet(m));
        assert!(nd > 3 && nm > 0 && nf == 2);
        assert!(nw_model_body_weight(m) > 0.0);

        let mut s = ptr::null_mut();
        assert_eq!(nw_state_reset(m, ptr::null(), 7, &mut s), NwStatus::Ok);
        let u = vec![0.2; nm];
        let mut grf = vec![0.0; nf];
        let st = nw_model_advance(m, s, ptr::null(), u.as_ptr(), nm, 1e-4, 100, grf.as_mut_ptr(), nf);
        assert_eq!(st, NwStatus::Ok, "{}", last_error());
        assert!((nw_state_time(s) - 0.01).abs() < 1e-12);
        assert!(grf.iter().all(|g| g.is_finite() && *g >= 0.0));

        let mut a = vec![0.0; nm];
        assert_eq!(nw_state_activations(s, a.as_mut_ptr(), nm), NwStatus::Ok);
        assert!(a.iter().all(|&x| (0.0..=1.0).contains(&x) && x > 0.0));
        let mut q = vec![0.0; nd];
        assert_eq!(nw_state_q(s, q.as_mut_ptr(), nd), NwStatus::Ok);
        let mut e = 0.0;
        assert_eq!(nw_model_energy(m, s, &mut e), NwStatus::Ok);
        assert!(e.is_finite());

        // a wrong excitation count leaves the state as it was
        let before = nw_state_time(s);
        let st = nw_model_advance(m, s, ptr::null(), u.as_ptr(), nm - 1, 1e-4, 1, ptr::null_mut(), 0);
        assert_eq!(st, NwStatus::DimensionMismatch);
        assert!(!last_error().is_empty());
        assert_eq!(nw_state_time(s), before);

        assert_eq!(nw_state_q(s, q.as_mut_ptr(), 1), NwStatus::BufferTooSmall);
        nw_state_free(s);
        nw_model_free(m);
    }
}

#[test]
fn null_and_bad_input() {
    unsafe {
        assert_eq!(nw_model_default(ptr::null_mut()), NwStatus::NullPointer);
        assert!(last_error().contains("null"));
        let mut m = ptr::null_mut();
        let bad = CString::new("schema = \"nope\"").unwrap();
        assert_ne!(nw_model_from_toml(bad.as_ptr(), &mut m), NwStatus::Ok);
        assert!(m.is_null());
        assert_eq!(nw_model_n_dofs(ptr::null()), 0);
        nw_model_free(ptr::null_mut());
        nw_state_free(ptr::null_mut());
        nw_terrain_free(ptr::null_mut());
        nw_adapt_free(ptr::null_mut());
        let mut t = ptr::null_mut();
        assert_eq!(nw_terrain_sloped(1, 10, 1.0, 95.0, &mut t), NwStatus::InvalidArgument);
        assert!(t.is_null());
    }
}

#[test]
fn terrain_and_reward() {
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(nw_terrain_sloped(3, 10, 1.0, 5.0, &mut t), NwStatus::Ok);
        let mut h = f64::NAN;
        assert_eq!(nw_terrain_height(t, -2.0, &mut h), NwStatus::Ok);
        assert_eq!(h, 0.0);
        assert_eq!(nw_terrain_height(t, f64::NAN, &mut h), NwStatus::NonFinite);
        nw_terrain_free(t);

        let terms = NwRewardTerms {
            r_vel: 1.0,
            effort_activity: 0.5,
            effort_smooth: 0.1,
            effort_nactive: 0.2,
            pain_limits: 0.05,
            pain_grf: 0.05,
        };
        let mut r = 0.0;
        assert_eq!(nw_total_reward(&terms, 2.0, &mut r), NwStatus::Ok);
        assert!((r - (1.0 - 1.3 - 0.1)).abs() < 1e-12);
    }
}

#[test]
fn adapt_schedule_and_snapshot() {
    unsafe {
        let cfg = nw_adapt_default_config();
        assert_eq!(cfg.threshold, 1000.0);
        let mut a = ptr::null_mut();
        assert_eq!(nw_adapt_new(&cfg, &mut a), NwStatus::Ok);
        let mut branches = Vec::new();
        for _ in 0..8 {
            let mut b = NwBranch::Decrease;
            assert_eq!(nw_adapt_update(a, 2000.0, &mut b), NwStatus::Ok);
            branches.push(b);
        }
        use NwBranch::*;
        assert_eq!(branches, [Decrease, Decrease, Decrease, SlowDown, SlowDown, SlowDown, SlowDown, Increase]);
        let mut v = NwAdaptValues::default();
        assert_eq!(nw_adapt_values(a, &mut v), NwStatus::Ok);
        assert!((v.alpha - 9e-4 * 0.9f64.powi(4)).abs() < 1e-15);
        assert_eq!(nw_adapt_update(a, f64::INFINITY, ptr::null_mut()), NwStatus::NonFinite);

        let mut snap = [0u8; NW_ADAPT_SNAPSHOT_LEN];
        assert_eq!(nw_adapt_snapshot(a, snap.as_mut_ptr(), snap.len()), NwStatus::Ok);
        let mut b = ptr::null_mut();
        assert_eq!(nw_adapt_restore(snap.as_ptr(), snap.len(), ptr::null(), &mut b), NwStatus::Ok);
        let mut w = NwAdaptValues::default();
        nw_adapt_values(b, &mut w);
        assert_eq!((v.r_mean, v.alpha, v.delta, v.c_mean), (w.r_mean, w.alpha, w.delta, w.c_mean));
        snap[10] ^= 1;
        let mut c = ptr::null_mut();
        assert_eq!(nw_adapt_restore(snap.as_ptr(), snap.len(), ptr::null(), &mut c), NwStatus::CorruptSnapshot);
        let bad = NwAdaptConfig { smoothing: 2.0, ..cfg };
        assert_eq!(nw_adapt_new(&bad, &mut c), NwStatus::InvalidArgument);
        nw_adapt_free(a);
        nw_adapt_free(b);
    }
}

const C_PROGRAM: &str = r#"
#include "natwalk.h"
#include <stdio.h>

int main(void) {
    NwModel *m = NULL;
    NwState *s = NULL;
    NwAdapt *a = NULL;
    if (nw_model_default(&m) != NW_STATUS_OK) return 1;
    if (nw_state_reset(m, NULL, 1, &s) != NW_STATUS_OK) return 2;
    double u[64] = {0};
    double grf[2];
    size_t nm = nw_model_n_muscles(m);
    if (nw_model_advance(m, s, NULL, u, nm, 1e-4, 10, grf, 2) != NW_STATUS_OK) return 3;
    if (nw_adapt_new(NULL, &a) != NW_STATUS_OK) return 4;
    NwBranch b;
    nw_adapt_update(a, 5000.0, &b);
    if (nw_model_advance(m, s, NULL, u, nm + 1, 1e-4, 1, NULL, 0) != NW_STATUS_DIMENSION_MISMATCH) return 5;
    char msg[128];
    nw_last_error(msg, sizeof msg);
    printf("%zu %d %s\n", nw_model_n_dofs(m), (int)b, msg);
    nw_adapt_free(a);
    nw_state_free(s);
    nw_model_free(m);
    return 0;
}
"#;

/// Compiles a C program against the generated header and the static library.
#[test]
fn header_compiles_and_links() {
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(include.join("natwalk.h").exists());
    let target = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = target.join("libnatwalk_ffi.a");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() || !lib.exists() {
        eprintln!("skipping: no C compiler or static library");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let out = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let text = String::from_utf8(run.stdout).unwrap();
    assert!(text.contains("dimension mismatch"), "{text}");
}
