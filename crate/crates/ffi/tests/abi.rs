use std::path::Path;
use std::process::Command;
use std::ptr;

use memctl_ffi::*;

fn zero_past(x: f64, step: f64, horizon: f64) -> *mut MemctlHistory {
    let n = (horizon / step).round() as usize + 1;
    let z = vec![0.0; n];
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { memctl_history_new(x, z.as_ptr(), n, step, 0.0, &mut out) }, MemctlStatus::Ok);
    out
}

fn exp_past(x: f64, step: f64, horizon: f64) -> *mut MemctlHistory {
    let n = (horizon / step).round() as usize + 1;
    let z: Vec<f64> = (0..n).map(|j| (-(j as f64) * step).exp()).collect();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { memctl_history_new(x, z.as_ptr(), n, step, 1.0, &mut out) }, MemctlStatus::Ok);
    out
}

fn exponential(rate: f64, coeff: f64) -> *mut MemctlKernel {
    let mut k = ptr::null_mut();
    assert_eq!(unsafe { memctl_kernel_exponential(rate, coeff, &mut k) }, MemctlStatus::Ok);
    k
}

#[test]
fn exponential_norms() {
    let k = exponential(2.0, 3.0);
    let mut n = MemctlKernelNorms { l1: 0.0, l2: 0.0, dl2: 0.0 };
    assert_eq!(unsafe { memctl_kernel_norms(k, &mut n) }, MemctlStatus::Ok);
    assert!((n.l1 - 1.5).abs() < 1e-14);
    assert!((n.l2 - 3.0 / 2.0).abs() < 1e-14);
    assert!((n.dl2 - 3.0).abs() < 1e-14);
    unsafe { memctl_kernel_free(k) };
}

#[test]
fn sum_and_table_constructors() {
    let (r, c) = ([1.0, 2.0], [1.0, -1.0]);
    let mut k = ptr::null_mut();
    assert_eq!(unsafe { memctl_kernel_sum_of_exponentials(r.as_ptr(), c.as_ptr(), 2, &mut k) }, MemctlStatus::Ok);
    let mut n = MemctlKernelNorms { l1: 0.0, l2: 0.0, dl2: 0.0 };
    assert_eq!(unsafe { memctl_kernel_norms(k, &mut n) }, MemctlStatus::Ok);
    // e^{-s} - e^{-2s} is positive, so its L1 norm is 1 - 1/2.
    assert!((n.l1 - 0.5).abs() < 1e-12);
    unsafe { memctl_kernel_free(k) };

    let samples = [1.0, 0.5, 0.0];
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { memctl_kernel_tabulated(0.5, samples.as_ptr(), 3, true, &mut t) }, MemctlStatus::Ok);
    assert_eq!(unsafe { memctl_kernel_norms(t, &mut n) }, MemctlStatus::Ok);
    assert!((n.l1 - 0.5).abs() < 1e-12);
    unsafe { memctl_kernel_free(t) };
}

#[test]
fn decay_without_memory() {
    let k = exponential(1.0, 1.0);
    let a = zero_past(1.0, 1e-2, 5.0);
    let drift = MemctlAffineDrift { state: -1.0, control: 0.0, memory: 0.0, offset: 0.0 };
    let controls = [0.0];
    let idx = [0usize];
    let mut traj = ptr::null_mut();
    let s = unsafe { memctl_solve_cauchy_affine(drift, controls.as_ptr(), 1, k, a, idx.as_ptr(), 1, 1.0, 1e-2, &mut traj) };
    assert_eq!(s, MemctlStatus::Ok);
    let mut len = 0;
    assert_eq!(unsafe { memctl_trajectory_len(traj, &mut len) }, MemctlStatus::Ok);
    assert_eq!(len, 101);
    let mut buf = vec![0.0; len];
    assert_eq!(unsafe { memctl_trajectory_states(traj, buf.as_mut_ptr(), len) }, MemctlStatus::Ok);
    assert!((buf[100] - (-1.0f64).exp()).abs() < 1e-9);
    unsafe {
        memctl_trajectory_free(traj);
        memctl_history_free(a);
        memctl_kernel_free(k);
    }
}

#[test]
fn operator_values() {
    let a = zero_past(1.0, 1e-3, 40.0);
    let mut v = 0.0;
    assert_eq!(unsafe { memctl_b_norm_sq(a, &mut v) }, MemctlStatus::Ok);
    assert!((v - 2.0 / 3.0).abs() < 1e-5, "{v}");
    let b = exp_past(1.0, 1e-3, 40.0);
    assert_eq!(unsafe { memctl_b_norm_sq(b, &mut v) }, MemctlStatus::Ok);
    assert!((v - 31.0 / 24.0).abs() < 1e-5, "{v}");
    assert_eq!(unsafe { memctl_tb_form(b, &mut v) }, MemctlStatus::Ok);
    assert!((v - 3.0 / 8.0).abs() < 1e-5, "{v}");
    assert_eq!(unsafe { memctl_dual_h1_norm(b, &mut v) }, MemctlStatus::Ok);
    assert!(v > 0.0);
    unsafe {
        memctl_history_free(a);
        memctl_history_free(b);
    }
}

#[test]
fn constant_cost_values() {
    let cost = MemctlCost { kind: MemctlCostKind::Constant, p0: 1.0, p1: 0.0, p2: 0.0, lambda: 2.0 };
    let drift = MemctlAffineDrift { state: -1.0, control: 1.0, memory: 0.0, offset: 0.0 };
    let controls = [-1.0, 1.0];
    let params = MemctlReducedParams {
        delta: 1.0,
        x_min: -1.0,
        x_max: 1.0,
        y_min: -1.0,
        y_max: 1.0,
        nx: 11,
        ny: 11,
        dt: 0.05,
        tol: 1e-12,
        max_iter: 10_000,
    };
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { memctl_solve_reduced_hjb(drift, controls.as_ptr(), 2, cost, params, &mut g) }, MemctlStatus::Ok);
    let mut w = 0.0;
    assert_eq!(unsafe { memctl_reduced_value_at(g, 0.3, -0.2, &mut w) }, MemctlStatus::Ok);
    assert!((w - 0.5).abs() < 1e-10, "{w}");
    assert_eq!(unsafe { memctl_reduced_value_at(g, 3.0, 0.0, &mut w) }, MemctlStatus::Domain);
    let mut it = 0;
    assert_eq!(unsafe { memctl_reduced_iterations(g, &mut it) }, MemctlStatus::Ok);
    assert!(it > 0);
    unsafe { memctl_reduced_grid_free(g) };

    let k = exponential(1.0, 1.0);
    let a = zero_past(0.5, 1e-2, 5.0);
    let mut v = 0.0;
    let s = unsafe { memctl_value_estimate(drift, controls.as_ptr(), 2, cost, k, a, 2, 1.0, 12.0, 1e-2, &mut v) };
    assert_eq!(s, MemctlStatus::Ok);
    assert!((v - 0.5).abs() < 1e-9, "{v}");
    unsafe {
        memctl_history_free(a);
        memctl_kernel_free(k);
    }
}

#[test]
fn null_and_invalid_inputs() {
    let mut v = 0.0;
    assert_eq!(unsafe { memctl_b_norm_sq(ptr::null(), &mut v) }, MemctlStatus::NullPointer);
    let a = zero_past(1.0, 1e-2, 5.0);
    assert_eq!(unsafe { memctl_b_norm_sq(a, ptr::null_mut()) }, MemctlStatus::NullPointer);
    let cost = MemctlCost { kind: MemctlCostKind::Constant, p0: 1.0, p1: 0.0, p2: 0.0, lambda: -1.0 };
    let drift = MemctlAffineDrift { state: 0.0, control: 0.0, memory: 0.0, offset: 0.0 };
    let k = exponential(1.0, 1.0);
    let controls = [0.0];
    let s = unsafe { memctl_value_estimate(drift, controls.as_ptr(), 1, cost, k, a, 1, 0.0, 1.0, 1e-2, &mut v) };
    assert_eq!(s, MemctlStatus::InvalidArgument);
    let msg = unsafe { std::ffi::CStr::from_ptr(memctl_last_error()) }.to_string_lossy().into_owned();
    assert!(msg.contains("lambda"), "{msg}");
    unsafe {
        memctl_history_free(a);
        memctl_kernel_free(k);
        memctl_kernel_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/memctl.h")).unwrap();
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let names: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(names.len() >= 18, "{names:?}");
    for n in names {
        assert!(header.contains(&format!("{n}(")), "{n} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else { return };
    let dir = tempfile_dir();
    let main = dir.join("main.c");
    std::fs::write(
        &main,
        "#include \"memctl.h\"\nint main(void) { MemctlStatus s = MEMCTL_STATUS_OK; MemctlKernel *k = 0; (void)k; return (int)s; }\n",
    )
    .unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-fsyntax-only")
        .arg("-I")
        .arg(include)
        .arg(&main)
        .status()
        .unwrap();
    std::fs::remove_dir_all(&dir).ok();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc);
        }
    }
    Err(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("memctl-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
