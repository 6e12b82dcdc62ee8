use assert_cmd::Command;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

const MINIMAL_GCNET: &str = r#"
experiment = "train"
task = "gcnet"
mode = "digital"
seeds = [3]
[training]
epochs = 1
[gcnet]
n_samples = 200
"#;

fn memsim(artifacts: &Path) -> Command {
    let mut cmd = Command::cargo_bin("memsim").unwrap();
    cmd.env("MEMSIM_ARTIFACT_DIR", artifacts).env("RUST_LOG", "warn");
    cmd
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

/// Runs a config and returns the artifact directory printed on stdout.
fn run_ok(artifacts: &Path, config: &Path) -> PathBuf {
    let out = memsim(artifacts).arg("run").arg(config).assert().success().get_output().stdout.clone();
    PathBuf::from(String::from_utf8(out).unwrap().trim())
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn artifact_hashes(dir: &Path) -> BTreeMap<String, String> {
    manifest(dir)["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| (a["file"].as_str().unwrap().to_string(), a["sha256"].as_str().unwrap().to_string()))
        .collect()
}

#[test]
fn minimal_digital_run_writes_loss_csv_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", MINIMAL_GCNET);
    let dir = run_ok(&tmp.path().join("artifacts"), &cfg);
    assert!(dir.starts_with(tmp.path().join("artifacts")));
    let loss = std::fs::read_to_string(dir.join("loss_history_seed3.csv")).unwrap();
    let mut lines = loss.lines();
    assert_eq!(lines.next(), Some("epoch,train_loss,test_loss"));
    assert_eq!(lines.count(), 1);
    let m = manifest(&dir);
    assert_eq!(m["experiment"], "train");
    assert_eq!(m["config"]["training"]["epochs"], 1);
    assert_eq!(m["inputs"].as_array().unwrap().len(), 1);
    let hashes = artifact_hashes(&dir);
    assert!(hashes.contains_key("checkpoint_seed3.csv"));
    assert!(hashes.contains_key("train.csv"));
}

#[test]
fn unknown_device_exits_2_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &format!("{MINIMAL_GCNET}[device]\npreset = \"fram\"\n"));
    let out = memsim(tmp.path()).arg("run").arg(&cfg).assert().code(2).get_output().stderr.clone();
    let err = String::from_utf8(out).unwrap();
    assert!(err.contains("device.preset"), "{err}");
    assert!(err.contains("fram"), "{err}");
}

#[test]
fn out_of_range_value_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &format!("{MINIMAL_GCNET}[crossbar]\nadc_bits = 0\n"));
    let out = memsim(tmp.path()).arg("run").arg(&cfg).assert().code(2).get_output().stderr.clone();
    assert!(String::from_utf8(out).unwrap().contains("crossbar.adc_bits"));
}

#[test]
fn missing_body_file_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "experiment = \"train\"\ntask = \"geodesy\"\n[training]\nepochs = 1\n[geodesy]\nbody_file = \"nowhere.csv\"\n";
    let cfg = write_config(tmp.path(), "geo.toml", text);
    memsim(tmp.path()).arg("run").arg(&cfg).assert().code(1);
}

#[test]
fn repeated_runs_and_normalized_config_reproduce_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("artifacts");
    let text = r#"
experiment = "sweep-faults"
task = "gcnet"
seeds = [0, 1]
[training]
epochs = 1
[gcnet]
n_samples = 150
[sweep]
devices = ["rram"]
ratios = [0.05]
"#;
    let cfg = write_config(tmp.path(), "faults.toml", text);
    let first = run_ok(&root, &cfg);
    let second = run_ok(&root, &cfg);
    assert_ne!(first, second);
    let hashes = artifact_hashes(&first);
    assert_eq!(hashes, artifact_hashes(&second));

    let normalized = manifest(&first)["config_toml"].as_str().unwrap().to_string();
    let replay = write_config(tmp.path(), "replay.toml", &normalized);
    let third = run_ok(&root, &replay);
    assert_eq!(hashes, artifact_hashes(&third));
}

fn parse_svg(path: &Path) -> (usize, usize, usize) {
    let text = std::fs::read_to_string(path).unwrap();
    let doc = roxmltree::Document::parse(&text).expect("valid XML");
    let count = |tag: &str| doc.descendants().filter(|n| n.has_tag_name(tag)).count();
    (count("g"), count("polyline"), count("circle"))
}

#[test]
fn single_row_csv_plots_a_single_point() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("one.csv");
    std::fs::write(&csv, "device,series,x,n,mean,std,median\npcm,repeats,4e0,1,1e-2,0e0,1e-2\n").unwrap();
    memsim(tmp.path()).args(["plot", csv.to_str().unwrap(), "--kind", "sweep-repeats"]).assert().success();
    assert_eq!(parse_svg(&tmp.path().join("one.svg")), (1, 0, 1));
}

#[test]
fn repeats_sweep_plots_one_series_per_device() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("sweep.csv");
    let mut text = String::from("device,series,x,n,mean,std,median\n");
    for device in ["pcm", "rram"] {
        for (n, loss) in [(1, 3e-2), (4, 2e-2), (16, 1e-2)] {
            text += &format!("{device},repeats,{n},5,{loss},1e-3,{loss}\n{device},repeats_train,{n},5,{loss},1e-3,{loss}\n");
        }
    }
    std::fs::write(&csv, text).unwrap();
    let out = tmp.path().join("chart.svg");
    memsim(tmp.path())
        .args(["plot", csv.to_str().unwrap(), "--kind", "sweep-repeats", "--out", out.to_str().unwrap()])
        .assert()
        .success();
    assert_eq!(parse_svg(&out), (2, 2, 6));
}

#[test]
fn plot_rejects_schema_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("body.csv");
    std::fs::write(&csv, "x,y,z,mu\n0,0,0,1\n").unwrap();
    memsim(tmp.path()).args(["plot", csv.to_str().unwrap(), "--kind", "sweep-drift"]).assert().failure();
    memsim(tmp.path()).args(["plot", csv.to_str().unwrap(), "--kind", "loss"]).assert().failure();
}

#[test]
fn loss_history_plots_train_and_test_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("loss.csv");
    std::fs::write(&csv, "epoch,train_loss,test_loss,wall_ms\n0,1e0,,3\n1,5e-1,4e-1,6\n2,2e-1,2e-1,9\n").unwrap();
    memsim(tmp.path()).args(["plot", csv.to_str().unwrap(), "--kind", "loss"]).assert().success();
    assert_eq!(parse_svg(&tmp.path().join("loss.svg")), (2, 2, 5));
}

#[test]
fn density_export_for_geodesy() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"
experiment = "export-density"
task = "geodesy"
mode = "digital"
[training]
epochs = 1
[geodesy]
n_quad = 100
n_quad_eval = 100
n_targets = 10
[export]
resolution = 4
"#;
    let cfg = write_config(tmp.path(), "density.toml", text);
    let dir = run_ok(&tmp.path().join("a"), &cfg);
    let density = std::fs::read_to_string(dir.join("density_seed0.csv")).unwrap();
    assert!(density.starts_with("x,y,z,rho\n"));
    assert_eq!(density.lines().count(), 1 + 64);
    assert!(std::fs::read_to_string(dir.join("body.csv")).unwrap().starts_with("x,y,z,mu\n"));
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            memsim::config::ExperimentConfig::from_path(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            count += 1;
        }
    }
    assert!(count >= 5);
}
