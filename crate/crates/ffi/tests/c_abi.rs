use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use msnar_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(msnar_last_error()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn preset_stability_through_handles() {
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(msnar_model_preset(&mut model), MsnarStatus::Ok);
        let mut m = 0;
        assert_eq!(msnar_model_regimes(model, &mut m), MsnarStatus::Ok);
        assert_eq!(m, 2);
        let (mut radius, mut stable) = (0.0, 0);
        assert_eq!(
            msnar_check_stability(model, 1.0, &mut radius, &mut stable),
            MsnarStatus::Ok
        );
        assert!((radius - 0.686).abs() < 1e-9);
        assert_eq!(stable, 1);
        msnar_model_free(model);
    }
}

#[test]
fn unstable_scalar_model_from_json() {
    let json = CString::new(
        r#"{"transition": [[1.0]],
            "regimes": [{"form": {"kind": "linear", "slope": 1.5, "intercept": 0.0},
                         "envelope": {"rho": 1.5, "b": 0.0}}],
            "noise_std": [1.0]}"#,
    )
    .unwrap();
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(
            msnar_model_from_json(json.as_ptr(), &mut model),
            MsnarStatus::Ok
        );
        let (mut radius, mut stable) = (0.0, 1);
        assert_eq!(
            msnar_check_stability(model, 1.0, &mut radius, &mut stable),
            MsnarStatus::Ok
        );
        assert_eq!(stable, 0);
        assert!((radius - 1.5).abs() < 1e-12);
        msnar_model_free(model);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let bad = CString::new("{not json").unwrap();
        let mut model = ptr::null_mut();
        assert_eq!(
            msnar_model_from_json(bad.as_ptr(), &mut model),
            MsnarStatus::InvalidArgument
        );
        assert!(model.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(
            msnar_model_preset(ptr::null_mut()),
            MsnarStatus::NullPointer
        );
        assert!(last_error().contains("null pointer"));

        let y = [0.0, 1.0, 2.0];
        let mut traj = ptr::null_mut();
        assert_eq!(
            msnar_trajectory_from_values(y.as_ptr(), 3, ptr::null(), &mut traj),
            MsnarStatus::Ok
        );
        let mut labels = [0usize; 2];
        assert_eq!(
            msnar_trajectory_regimes(traj, labels.as_mut_ptr(), 2),
            MsnarStatus::InvalidArgument
        );
        let mut small = [0.0; 2];
        assert_eq!(
            msnar_trajectory_values(traj, small.as_mut_ptr(), 2),
            MsnarStatus::BufferTooSmall
        );
        let mut field = ptr::null_mut();
        assert_eq!(
            msnar_nw_estimate(traj, 1, 0.5, &mut field),
            MsnarStatus::InvalidArgument
        );
        assert!(last_error().contains("regimes"));
        msnar_trajectory_free(traj);

        // freeing null is a no-op
        msnar_model_free(ptr::null_mut());
        msnar_trajectory_free(ptr::null_mut());
        msnar_field_free(ptr::null_mut());
    }
}

#[test]
fn simulate_and_estimate_round_trip() {
    unsafe {
        let mut model = ptr::null_mut();
        msnar_model_preset(&mut model);
        let mut traj = ptr::null_mut();
        assert_eq!(
            msnar_simulate(model, 300, 7, 100, &mut traj),
            MsnarStatus::Ok
        );
        let mut len = 0;
        msnar_trajectory_len(traj, &mut len);
        assert_eq!(len, 301);
        let mut y = vec![0.0; len];
        let mut x = vec![0usize; len - 1];
        assert_eq!(
            msnar_trajectory_values(traj, y.as_mut_ptr(), len),
            MsnarStatus::Ok
        );
        assert_eq!(
            msnar_trajectory_regimes(traj, x.as_mut_ptr(), len - 1),
            MsnarStatus::Ok
        );

        let expected = msnar::simulate(
            &msnar::ModelSpec::bump_logistic(),
            300,
            msnar::InitialValue::Stationary,
            7,
            100,
        )
        .unwrap();
        assert_eq!(y, expected.y);

        let mut copy = ptr::null_mut();
        assert_eq!(
            msnar_trajectory_from_values(y.as_ptr(), len, x.as_ptr(), &mut copy),
            MsnarStatus::Ok
        );
        let mut field = ptr::null_mut();
        assert_eq!(
            msnar_nw_estimate(copy, 2, -1.0, &mut field),
            MsnarStatus::Ok
        );
        let (mut g, mut m) = (0, 0);
        msnar_field_grid_len(field, &mut g);
        msnar_field_regimes(field, &mut m);
        assert_eq!((g, m), (201, 2));
        let mut grid = vec![0.0; g];
        let mut theta = vec![0.0; g];
        assert_eq!(
            msnar_field_grid(field, grid.as_mut_ptr(), g),
            MsnarStatus::Ok
        );
        assert_eq!(
            msnar_field_theta(field, 1, theta.as_mut_ptr(), g),
            MsnarStatus::Ok
        );
        assert_eq!(
            msnar_field_theta(field, 2, theta.as_mut_ptr(), g),
            MsnarStatus::InvalidArgument
        );
        let kc =
            msnar::KernelConfig::for_trajectory(&expected, msnar::KernelFamily::Gaussian, None)
                .unwrap();
        let direct = msnar::nw_estimate(&expected, 2, &kc).unwrap();
        assert_eq!(grid, direct.grid);
        assert_eq!(theta, direct.theta[1]);

        let mut rm = ptr::null_mut();
        assert_eq!(
            msnar_rm_estimate(copy, 2, 3, 5, 20, -1.0, &mut rm),
            MsnarStatus::Ok
        );
        assert_eq!(
            msnar_field_theta(rm, 0, theta.as_mut_ptr(), g),
            MsnarStatus::Ok
        );
        assert!(theta.iter().all(|v| v.is_finite()));

        msnar_field_free(rm);
        msnar_field_free(field);
        msnar_trajectory_free(copy);
        msnar_trajectory_free(traj);
        msnar_model_free(model);
    }
}

#[test]
fn header_compiles_as_c() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = dir.join("include/msnar.h");
    let text = std::fs::read_to_string(&header).expect("generated header");
    for name in [
        "msnar_last_error",
        "msnar_model_preset",
        "msnar_model_from_json",
        "msnar_check_stability",
        "msnar_simulate",
        "msnar_trajectory_from_values",
        "msnar_nw_estimate",
        "msnar_rm_estimate",
        "msnar_field_theta",
        "msnar_field_free",
        "MSNAR_STATUS_BUFFER_TOO_SMALL",
        "typedef struct MsnarModel MsnarModel;",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"msnar.h\"\n\
         int main(void) {\n\
           MsnarModel *m = NULL;\n\
           double r; int s;\n\
           if (msnar_model_preset(&m) != MSNAR_STATUS_OK) return 1;\n\
           msnar_check_stability(m, 1.0, &r, &s);\n\
           msnar_model_free(m);\n\
           return s ? 0 : 2;\n\
         }\n",
    )
    .unwrap();
    let status = Command::new(std::env::var("CC").unwrap_or_else(|_| "cc".into()))
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(dir.join("include"))
        .arg(&src)
        .status()
        .expect("C compiler available");
    assert!(status.success());
}
