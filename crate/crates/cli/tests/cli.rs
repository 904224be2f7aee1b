use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mxsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mxsim"))
        .args(args)
        .env_remove("MXSIM_WORKERS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn configs() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

const SINGLE_ROW: &str = r#"
seed = 9
functional = true
[memory]
bandwidth_bytes_per_s = 48.0e9
[config.small]
freq_hz = 2.0e9
m_pe = 4
n_pe = 4
k_pe_bits = 512
m_scp = 32
n_scp = 32
k_scp_bytes = 64
[[workload]]
id = "w"
m = 40
n = 24
k = 96
epilogue = "relu"
"#;

#[test]
fn validate_case_study() {
    let cfg = configs().join("case_study.toml");
    let o = mxsim(&["validate", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let int8 = out.lines().find(|l| l.starts_with("int8")).unwrap();
    assert!(int8.contains("4.096"), "{int8}");
    assert!(int8.contains("satisfied"), "{int8}");
    assert!(int8.trim_end().ends_with("0.7500"), "{int8}");
}

#[test]
fn validate_names_bad_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("case_study.toml")).unwrap().replace("m_pe = 4", "m_pe = 0");
    let path = dir.path().join("bad.toml");
    fs::write(&path, text).unwrap();
    let o = mxsim(&["validate", "--config", path.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("m_pe"), "{}", stderr(&o));
}

#[test]
fn validate_missing_file() {
    let o = mxsim(&["validate", "--config", "/definitely/not/here.toml"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("cannot read"), "{}", stderr(&o));
}

#[test]
fn validate_rejects_overlapping_descriptor() {
    let cfg = configs().join("case_study.toml");
    let cfg = cfg.to_str().unwrap();
    let ok = mxsim(&["validate", "--config", cfg, "--desc", "m=64,n=64,k=256,base_b=0x4000,base_c=0x8000"]);
    assert!(ok.status.success(), "{}", stderr(&ok));
    let bad = mxsim(&["validate", "--config", cfg, "--desc", "m=64,n=64,k=256,base_b=0x4000,base_c=0x4000"]);
    assert!(!bad.status.success());
    assert!(stderr(&bad).contains("base_c"), "{}", stderr(&bad));
}

#[test]
fn dse_examples() {
    let o = mxsim(&["dse", "--pe", "4x4", "--reduce-bits", "512", "--bandwidth-gbps", "48", "--target", "1.0"]);
    assert!(stdout(&o).contains("residency: 88x88"), "{}", stdout(&o));
    let o = mxsim(&["dse", "--target", "0.75"]);
    assert!(stdout(&o).contains("residency: 64x64"), "{}", stdout(&o));
    assert!(stdout(&o).contains("bound: 0.7500"));
    let o = mxsim(&["dse", "--bandwidth-gbps", "8"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("residency: 512x512"), "{}", stdout(&o));
    assert!(stdout(&o).contains("exceeds"), "{}", stdout(&o));
}

#[test]
fn dse_reports_infeasible_bandwidth() {
    let o = mxsim(&["dse", "--bandwidth-gbps", "0.5"]);
    assert!(!o.status.success());
    let out = stdout(&o);
    assert!(out.contains("infeasible"), "{out}");
    assert!(out.contains("1.0000e9 B/s"), "{out}");
}

#[test]
fn sweep_single_row_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    fs::write(&spec, SINGLE_ROW).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = mxsim(&["sweep", "--config", spec.to_str().unwrap(), "--out", a.to_str().unwrap(), "--workers", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = Command::new(env!("CARGO_BIN_EXE_mxsim"))
        .args(["sweep", "--config", spec.to_str().unwrap(), "--out", b.to_str().unwrap()])
        .env("MXSIM_WORKERS", "3")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));

    let csv = fs::read_to_string(a.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(
        lines[0],
        "config_id,workload_id,dtype,M,N,K,mode,cycles,utilization,analytic_bound,bytes_read,bytes_written"
    );
    assert!(lines[1].starts_with("small,w,int8,40,24,96,fused,"));
    for name in ["sweep.csv", "sweep_errors.csv", "kernels.csv", "manifest.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn sweep_records_failed_rows_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    fs::write(&spec, format!("{SINGLE_ROW}\n[[workload]]\nid = \"empty\"\nm = 0\nn = 8\nk = 8\n")).unwrap();
    let out = dir.path().join("o");
    let o = mxsim(&["sweep", "--config", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("sweep.csv")).unwrap().lines().count(), 2);
    let errors = fs::read_to_string(out.join("sweep_errors.csv")).unwrap();
    assert_eq!(errors.lines().count(), 2, "{errors}");
    assert!(errors.lines().nth(1).unwrap().starts_with("small,empty,"));
}

#[test]
fn sweep_seed_changes_only_values() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    fs::write(&spec, SINGLE_ROW).unwrap();
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        let o = mxsim(&["sweep", "--config", spec.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", seed]);
        assert!(o.status.success(), "{}", stderr(&o));
        (fs::read(out.join("sweep.csv")).unwrap(), fs::read_to_string(out.join("manifest.json")).unwrap())
    };
    let (csv1, man1) = run("1", "s1");
    let (csv2, man2) = run("2", "s2");
    // Timing does not depend on operand values.
    assert_eq!(csv1, csv2);
    assert!(man1.contains("\"seed\": 1") && man2.contains("\"seed\": 2"));
}

#[test]
fn predict_prints_csv() {
    let spec = configs().join("gemm_sweep.toml");
    let o = mxsim(&["predict", "--config", spec.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("config_id,workload_id,dtype,M,N,K,"));
    assert_eq!(out.lines().count(), 7);
}

#[test]
fn trace_writes_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let desc = "m=72,n=40,k=300,dtype=fp16,base_b=0x10000,base_c=0x20000,bias_type=full,base_bias=0x30000";
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = mxsim(&["trace", "--desc", desc, "--functional", "--seed", "4", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        ["trace.csv", "report.json", "c.bin"].map(|f| fs::read(out.join(f)).unwrap())
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(a, b);
    assert!(String::from_utf8_lossy(&a[0]).starts_with("cycle,resource,kind,tag"));
    assert_eq!(a[2].len(), 72 * 40 * 4);
}

#[test]
fn trace_rejects_bad_descriptor() {
    let dir = tempfile::tempdir().unwrap();
    let o = mxsim(&["trace", "--desc", "m=0,n=4,k=4", "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("m:"), "{}", stderr(&o));
}
