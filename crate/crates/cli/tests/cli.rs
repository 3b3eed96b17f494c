use std::path::Path;
use std::process::{Command, Output};

fn loopsoup(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loopsoup"))
        .args(args)
        .current_dir(dir)
        .env_remove("LOOPSOUP_WORKERS")
        .env_remove("LOOPSOUP_MAX_BLOCKS")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn sampling_is_reproducible_from_the_seed() {
    let t = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = loopsoup(&["--seed", "11", "--out", out, "sample"], t.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["soup_0.loops", "soup_0.json"] {
        let a = std::fs::read(t.path().join("a").join(f)).unwrap();
        let b = std::fs::read(t.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
    let o = loopsoup(&["--seed", "12", "--out", "c", "sample"], t.path());
    assert!(o.status.success());
    assert_ne!(
        std::fs::read(t.path().join("a/soup_0.loops")).unwrap(),
        std::fs::read(t.path().join("c/soup_0.loops")).unwrap()
    );
    let o = loopsoup(&["--out", "a", "analyze"], t.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let line = std::fs::read_to_string(t.path().join("a/analysis.jsonl")).unwrap();
    let v: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    assert!(v["components"].as_u64().is_some());
    assert!(t.path().join("a/sample.manifest.json").exists());
}

#[test]
fn negative_kappa_is_a_config_error() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write(t.path(), "k.toml", "[sample]\nkappa = -0.5\n");
    let o = loopsoup(&["--config", &cfg, "sample"], t.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("kappa < 0 is unsupported"), "{}", stderr(&o));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write(t.path(), "u.toml", "[sample]\nradius = 3\nraduis = 4\n");
    let o = loopsoup(&["--config", &cfg, "sample"], t.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("raduis"), "{}", stderr(&o));
}

#[test]
fn printed_defaults_load_back() {
    let t = tempfile::tempdir().unwrap();
    let o = loopsoup(&["defaults"], t.path());
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let cfg = write(t.path(), "d.toml", &text);
    let o = loopsoup(&["--config", &cfg, "defaults"], t.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(String::from_utf8(o.stdout).unwrap(), text);
}

#[test]
fn help_lists_every_flag_and_command() {
    let t = tempfile::tempdir().unwrap();
    let o = loopsoup(&["--help"], t.path());
    let text = String::from_utf8(o.stdout).unwrap();
    for w in ["--config", "--seed", "--workers", "--out", "--level", "sample", "analyze", "exact", "green", "experiment", "validate", "defaults"] {
        assert!(text.contains(w), "help lacks {w}");
    }
}

#[test]
fn exact_and_green_write_csv() {
    let t = tempfile::tempdir().unwrap();
    assert!(loopsoup(&["--out", "o", "exact"], t.path()).status.success());
    assert!(loopsoup(&["--out", "o", "green"], t.path()).status.success());
    let green = std::fs::read_to_string(t.path().join("o/green.csv")).unwrap();
    assert!(green.starts_with("d,radius,kappa,x,value\n"));
    let exact = std::fs::read_to_string(t.path().join("o/exact.csv")).unwrap();
    assert!(exact.contains("prob_avoid,3,4,0,1,0 0 0,"));
}

const ONE_ARM: &str = "[experiment]\nkind = \"one-arm\"\ndim = 5\nsizes = [2, 3, 4, 6]\nreplicas = 2500\nseed = 5\n";

fn without_walltime(csv: &str) -> Vec<String> {
    csv.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
}

#[test]
fn experiment_writes_rows_sidecar_and_manifest() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write(t.path(), "e.toml", ONE_ARM);
    let o = loopsoup(&["--config", &cfg, "--out", "o", "--workers", "2", "experiment"], t.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(t.path().join("o/one-arm.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "kind,d,alpha,kappa,n,value,stderr,replicas,walltime_s");
    assert_eq!(lines.len(), 5);
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(t.path().join("o/one-arm.json")).unwrap()).unwrap();
    assert!(side.to_string().contains("slope"));
    let man: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(t.path().join("o/one-arm.manifest.json")).unwrap()).unwrap();
    assert_eq!(man["master_seed"], 5);
    assert!(man["host"]["arch"].is_string());
    assert!(!t.path().join("o/one-arm.checkpoint.json").exists());
}

#[test]
fn interrupted_experiment_resumes_to_the_same_result() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write(t.path(), "e.toml", ONE_ARM);
    let o = loopsoup(&["--config", &cfg, "--out", "full", "experiment"], t.path());
    assert!(o.status.success(), "{}", stderr(&o));

    let o = Command::new(env!("CARGO_BIN_EXE_loopsoup"))
        .args(["--config", &cfg, "--out", "cut", "--workers", "3", "experiment"])
        .current_dir(t.path())
        .env("LOOPSOUP_MAX_BLOCKS", "4")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(t.path().join("cut/one-arm.checkpoint.json").exists());
    assert!(!t.path().join("cut/one-arm.csv").exists());

    let o = loopsoup(&["--config", &cfg, "--out", "cut", "experiment"], t.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let a = std::fs::read_to_string(t.path().join("full/one-arm.csv")).unwrap();
    let b = std::fs::read_to_string(t.path().join("cut/one-arm.csv")).unwrap();
    assert_eq!(without_walltime(&a), without_walltime(&b));
}

#[test]
fn checkpoint_from_another_spec_is_refused() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write(t.path(), "e.toml", ONE_ARM);
    let o = Command::new(env!("CARGO_BIN_EXE_loopsoup"))
        .args(["--config", &cfg, "--out", "o", "experiment"])
        .current_dir(t.path())
        .env("LOOPSOUP_MAX_BLOCKS", "1")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    let o = loopsoup(&["--config", &cfg, "--seed", "6", "--out", "o", "experiment"], t.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn validate_single_criterion() {
    let t = tempfile::tempdir().unwrap();
    let o = loopsoup(&["--out", "o", "validate", "--only", "13"], t.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8(o.stdout).unwrap().contains("criterion 13 PASS"));
    assert!(t.path().join("o/validation.json").exists());
}
