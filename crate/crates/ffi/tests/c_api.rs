use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use crashlearn_ffi::*;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = cl_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take_json(s: *mut std::ffi::c_char) -> serde_json::Value {
    assert!(!s.is_null());
    let v = serde_json::from_str(CStr::from_ptr(s).to_str().unwrap()).unwrap();
    cl_string_free(s);
    v
}

#[test]
fn detect_and_identify_through_handles() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(cl_graph_load(cpath(&configs().join("k4.graph.json")).as_ptr(), &mut g), CLStatus::Ok);
        assert!(cl_last_error().is_null());
        assert_eq!(cl_graph_node_count(g), 4);

        let mut out = ptr::null_mut();
        assert_eq!(cl_graph_detect(g, 1, 0, &mut out), CLStatus::Ok);
        let report = take_json(out);
        assert_eq!(report["chi"], 260);
        assert_eq!(report["gamma"], 3);

        let mut m = ptr::null_mut();
        assert_eq!(cl_model_load(cpath(&configs().join("k4.model.json")).as_ptr(), &mut m), CLStatus::Ok);
        assert_eq!(cl_identify(g, m, 1, 0, &mut out), CLStatus::Ok);
        assert_eq!(take_json(out)["assumption1_ok"], true);

        let mut bad = ptr::null_mut();
        assert_eq!(
            cl_model_load(cpath(&configs().join("k4_uninformative.model.json")).as_ptr(), &mut bad),
            CLStatus::Ok
        );
        assert_eq!(cl_identify(g, bad, 1, 0, &mut out), CLStatus::Ok);
        assert_eq!(take_json(out)["assumption1_ok"], false);

        assert_eq!(cl_graph_detect(g, 1, 10, &mut out), CLStatus::Budget);
        assert!(out.is_null());
        assert!(last_error().contains("budget"));

        cl_model_free(bad);
        cl_model_free(m);
        cl_graph_free(g);
    }
}

#[test]
fn simulate_analyze_and_round_trip() {
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(
            cl_config_load(cpath(&configs().join("cycle3_sync.json")).as_ptr(), &mut cfg),
            CLStatus::Ok
        );
        let mut trace = ptr::null_mut();
        assert_eq!(cl_simulate(cfg, 4, &mut trace), CLStatus::Ok);
        assert_eq!(cl_trace_agent_count(trace), 3);
        assert_eq!(cl_trace_horizon(trace), 300);

        let mut mu = 0.0;
        assert_eq!(cl_trace_final_mu(trace, 0, &mut mu), CLStatus::Ok);
        assert!(mu > 0.99);
        let mut alive = false;
        assert_eq!(cl_trace_survived(trace, 2, &mut alive), CLStatus::Ok);
        assert!(alive);
        assert_eq!(cl_trace_final_mu(trace, 3, &mut mu), CLStatus::OutOfRange);

        let checks = CString::new("lemma1,prop1,psi").unwrap();
        let mut passed = false;
        let mut out = ptr::null_mut();
        assert_eq!(cl_trace_analyze(trace, checks.as_ptr(), 0, &mut passed, &mut out), CLStatus::Ok);
        assert!(passed);
        let report = take_json(out);
        assert_eq!(report["checks"].as_object().unwrap().len(), 3);

        let dir = tempfile::tempdir().unwrap();
        let file = cpath(&dir.path().join("trace.jsonl"));
        assert_eq!(cl_trace_write(trace, file.as_ptr()), CLStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(cl_trace_load(file.as_ptr(), &mut back), CLStatus::Ok);
        let mut mu_back = 0.0;
        cl_trace_final_mu(trace, 1, &mut mu);
        cl_trace_final_mu(back, 1, &mut mu_back);
        assert_eq!(mu.to_bits(), mu_back.to_bits());

        let unknown = CString::new("lemma9").unwrap();
        assert_eq!(
            cl_trace_analyze(trace, unknown.as_ptr(), 0, &mut passed, &mut out),
            CLStatus::InvalidInput
        );

        cl_trace_free(back);
        cl_trace_free(trace);
        cl_config_free(cfg);
    }
}

#[test]
fn config_from_json_resolves_relative_paths() {
    let json = CString::new(
        r#"{"graph": "cycle3.graph.json", "model": "cycle3.model.json", "f": 0, "theta_star": "theta2", "T": 20, "seed": 1, "adversary": {"mode": "uniform", "dmax": 2}}"#,
    )
    .unwrap();
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(
            cl_config_from_json(json.as_ptr(), cpath(&configs()).as_ptr(), &mut cfg),
            CLStatus::Ok
        );
        let mut trace = ptr::null_mut();
        assert_eq!(cl_simulate(cfg, 9, &mut trace), CLStatus::Ok);
        assert_eq!(cl_trace_horizon(trace), 20);
        cl_trace_free(trace);
        cl_config_free(cfg);

        let missing = CString::new("/definitely/not/here").unwrap();
        assert_eq!(cl_config_from_json(json.as_ptr(), missing.as_ptr(), &mut cfg), CLStatus::Io);
        assert!(cfg.is_null());
    }
}

#[test]
fn null_and_malformed_arguments_are_reported() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(cl_graph_from_json(ptr::null(), &mut g), CLStatus::NullPointer);
        assert!(last_error().contains("json"));
        assert_eq!(cl_graph_load(c"x".as_ptr(), ptr::null_mut()), CLStatus::NullPointer);

        let bad_utf8 = [0xffu8, 0xfe, 0];
        assert_eq!(cl_graph_from_json(bad_utf8.as_ptr().cast(), &mut g), CLStatus::InvalidUtf8);

        assert_eq!(cl_graph_from_json(c"{\"n\": 2, \"edges\": [[1, 1]]}".as_ptr(), &mut g), CLStatus::InvalidInput);
        assert!(g.is_null());

        let mut out = ptr::null_mut();
        assert_eq!(cl_graph_detect(ptr::null(), 0, 0, &mut out), CLStatus::NullPointer);
        assert_eq!(cl_graph_node_count(ptr::null()), 0);
        assert_eq!(cl_trace_horizon(ptr::null()), 0);

        cl_graph_free(ptr::null_mut());
        cl_string_free(ptr::null_mut());
    }
}

#[test]
fn generated_header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/crashlearn.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["cl_simulate", "cl_trace_analyze", "cl_graph_detect", "cl_last_error", "CL_STATUS_PANIC"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping syntax check");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"crashlearn.h\"\n\
         int probe(const char *path) {\n\
           CLGraph *g = NULL;\n\
           char *json = NULL;\n\
           if (cl_graph_load(path, &g) != CL_STATUS_OK) return 1;\n\
           CLStatus s = cl_graph_detect(g, 1, 0, &json);\n\
           cl_string_free(json);\n\
           cl_graph_free(g);\n\
           return s == CL_STATUS_OK ? 0 : 2;\n\
         }\n",
    )
    .unwrap();
    let status = Command::new(cc)
        .args(["-std=c11", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}
