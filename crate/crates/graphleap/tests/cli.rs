use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[model]
name = "tiny"
structure = "isotropic"
blocks = [4]
dims = [16]
patch_size = 8
image_size = 48
num_classes = 10
k = 4
heads = 4

[run]
mode = "graphleap"
schedule = "overlapped"
seed = 7
"#;

fn graphleap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphleap"))
        .args(args)
        .env_remove("GRAPHLEAP_LOG")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn lines_with<'a>(text: &'a str, prefix: &str) -> Vec<&'a str> {
    text.lines().filter(|l| l.starts_with(prefix)).collect()
}

#[test]
fn infer_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let a = stdout(&graphleap(&["infer", "--config", &cfg, "--random"]));
    let b = stdout(&graphleap(&["infer", "--config", &cfg, "--random"]));
    assert_eq!(a, b);
    assert_eq!(lines_with(&a, "graph\t").len(), 4);
    assert_eq!(lines_with(&a, "top5\t").len(), 5);
    assert!(a.contains("wall_ms\tabsent"));
}

#[test]
fn schedules_and_modes_agree_where_they_should() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let top = |args: &[&str]| {
        let mut all = vec!["infer", "--config", cfg.as_str()];
        all.extend_from_slice(args);
        lines_with(&stdout(&graphleap(&all)), "top5\t")
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
    };
    assert_eq!(top(&[]), top(&["--schedule", "sequential"]));
    assert_eq!(top(&["--seed", "3"]), top(&["--seed", "3", "--schedule", "sequential"]));
    let standard = stdout(&graphleap(&["infer", "--config", &cfg, "--mode", "standard"]));
    assert!(standard.contains("config\tschedule\tsequential"));
}

#[test]
fn gen_then_infer_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("assets");
    let out_s = out.display().to_string();
    let g = stdout(&graphleap(&["gen", "--config", &cfg, "--out", &out_s]));
    assert!(g.contains("4 blocks"));
    let from_files = stdout(&graphleap(&[
        "infer",
        "--config",
        &cfg,
        "--weights",
        &out.join("weights.glpw").display().to_string(),
        "--input",
        &out.join("input.glpt").display().to_string(),
    ]));
    let random = stdout(&graphleap(&["infer", "--config", &cfg, "--random"]));
    assert_eq!(lines_with(&from_files, "top5"), lines_with(&random, "top5"));
    assert_eq!(lines_with(&from_files, "graph"), lines_with(&random, "graph"));
}

#[test]
fn gen_presets_are_hash_stable() {
    let dir = tempfile::tempdir().unwrap();
    for (name, blocks) in [("ViG-Ti", 12), ("ViG-Py-Ti", 12)] {
        let a = dir.path().join(format!("{name}-a"));
        let b = dir.path().join(format!("{name}-b"));
        for d in [&a, &b] {
            let o = stdout(&graphleap(&["gen", "--preset", name, "--seed", "7", "--out", &d.display().to_string()]));
            assert!(o.contains(&format!("{blocks} blocks")), "{o}");
        }
        for f in ["weights.glpw", "input.glpt"] {
            assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{name} {f}");
        }
    }
}

#[test]
fn missing_weights_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let missing = dir.path().join("absent.glpw").display().to_string();
    let o = graphleap(&["infer", "--config", &cfg, "--weights", &missing]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(&missing));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), &TINY.replace("k = 4", "k = 4\nkay = 1"));
    let o = graphleap(&["infer", "--config", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.kay"));
    let o = graphleap(&["perf", "--preset", "ViG-XL"]);
    assert_eq!(o.status.code(), Some(2));
    let o = graphleap(&["infer", "--preset", "ViG-Ti", "--mode", "standard", "--schedule", "overlapped"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn perf_all_presets() {
    let text = stdout(&graphleap(&["perf", "--all-presets"]));
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 14);
    for r in &rows {
        let cols: Vec<&str> = r.split('\t').collect();
        assert_eq!(cols.len(), 5);
        assert!(cols[1] == "224" || cols[1] == "448");
        assert!(cols[4].parse::<f64>().unwrap() >= 1.0, "{r}");
    }
    let single = stdout(&graphleap(&["perf", "--preset", "ViG-Ti", "--resolution", "224"]));
    let body: Vec<&str> = single.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body.len(), 2);
    assert!(body[1].starts_with("ViG-Ti\t224\t3.2424\t"));
}

#[test]
fn compare_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let frozen = stdout(&graphleap(&["compare", "--config", &cfg, "--frozen"]));
    let j: Vec<&str> = frozen
        .lines()
        .filter(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit()))
        .map(|l| l.rsplit('\t').next().unwrap())
        .collect();
    assert_eq!(j, ["1.000000"; 4]);
    assert!(frozen.contains("logit_l2\t0.000000000e0"));

    let random = stdout(&graphleap(&["compare", "--config", &cfg]));
    let rows: Vec<&str> = random
        .lines()
        .filter(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit()))
        .collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].ends_with("\t1.000000"));
}

#[test]
fn report_written_to_out() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("report.tsv");
    let printed = stdout(&graphleap(&["infer", "--config", &cfg, "--out", &out.display().to_string()]));
    assert_eq!(std::fs::read_to_string(out).unwrap(), printed);
}
