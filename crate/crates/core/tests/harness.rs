use std::path::Path;
use std::process::Command;

use caqzo::harness::output::{write_traces, CellLabels, Provenance};
use caqzo::harness::{
    probe_experiment, run_experiment, trace_file_name, ExperimentConfig, RunOptions, TRACE_HEADER,
};
use caqzo::{Method, RunSummary, RunTrace, TraceRecord};

const MINIMAL: &str = r#"
experiment_id = "minimal"
objectives = ["quadratic"]
methods = ["caq"]
d = 4
T = 1
eta = 0.005
seeds = [0, 1]

[[companders]]
family = "identity"
bits = 4
"#;

const SMALL: &str = r#"
experiment_id = "small"
objectives = ["quadratic", "ackley"]
methods = ["ws-gaussian", "caq", "offgrid-z", "ws-rademacher"]
d = 24
T = 30
eta = 0.01
sigma = 0.1
seeds = [3, 1]
recalib_period = 7
log_stride = 4
block_size = 8

[[companders]]
family = "mu_law"
bits = 2

[[companders]]
family = "gaussian_quantile"
bits = 4
"#;

fn cfg(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(text, Path::new("test.cfg")).unwrap()
}

fn opts(dir: &Path, workers: usize) -> RunOptions {
    RunOptions {
        out: Some(dir.to_path_buf()),
        workers,
        seed_offset: 0,
    }
}

fn data_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

#[test]
fn minimal_config_writes_two_rows_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg(MINIMAL);
    let outcome = run_experiment(&c, &opts(dir.path(), 1)).unwrap();
    let path = dir
        .path()
        .join(trace_file_name(c.objectives[0], &c.companders[0]));
    assert!(outcome.files.contains(&path));
    let text = std::fs::read_to_string(&path).unwrap();
    let first = text.lines().next().unwrap();
    assert!(first.starts_with("# schema=trace-v1 config_hash="));
    assert!(first.contains(&c.hash()) && first.contains("seeds=0;1"));
    let lines = data_lines(&path);
    assert_eq!(lines[0], TRACE_HEADER.join(","));
    assert_eq!(lines.len(), 1 + 2 * 2);
    let steps: Vec<&str> = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(6).unwrap())
        .collect();
    assert_eq!(steps, ["0", "1", "0", "1"]);
    assert!(dir.path().join("summary.json").exists());
}

#[test]
fn outputs_are_bitwise_reproducible_across_worker_counts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let c = cfg(SMALL);
    let fa = run_experiment(&c, &opts(a.path(), 1)).unwrap().files;
    let fb = run_experiment(&c, &opts(b.path(), 3)).unwrap().files;
    assert_eq!(fa.len(), 2 * 2 + 1);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(
            std::fs::read(x).unwrap(),
            std::fs::read(y).unwrap(),
            "{}",
            x.display()
        );
    }
}

#[test]
fn rows_are_sorted_by_method_seed_step() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg(SMALL);
    let files = run_experiment(&c, &opts(dir.path(), 0)).unwrap().files;
    let lines = data_lines(&files[0]);
    let keys: Vec<(String, u64, usize)> = lines[1..]
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (
                f[1].to_string(),
                f[5].parse().unwrap(),
                f[6].parse().unwrap(),
            )
        })
        .collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    // steps 0, 4, ..., 28 and the final step 30, for 4 methods x 2 seeds
    assert_eq!(keys.len(), 4 * 2 * 9);
}

#[test]
fn seed_offset_shifts_starts() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg(MINIMAL);
    let o = RunOptions {
        seed_offset: 10,
        ..opts(dir.path(), 1)
    };
    let outcome = run_experiment(&c, &o).unwrap();
    let seeds: Vec<u64> = outcome.summary.cells[0]
        .runs
        .iter()
        .map(|r| r.seed)
        .collect();
    assert_eq!(seeds, [10, 11]);
}

#[test]
fn failed_runs_leave_a_marker() {
    let dir = tempfile::tempdir().unwrap();
    let rec = TraceRecord {
        step: 0,
        loss_quantized: 1.0,
        loss_master: 1.0,
        est_norm: 0.0,
        clip_events: 0,
        boundary_events: 0,
        recalibs: 0,
    };
    let trace = RunTrace {
        method: Method::Caq,
        seed: 5,
        records: vec![rec],
        summary: RunSummary {
            start_loss: 1.0,
            final_loss: 1.0,
            gap_ratio: f64::NAN,
            steps_completed: 0,
        },
        failure: Some("non-finite value".into()),
    };
    let prov = Provenance {
        schema: "trace-v1",
        config_hash: "0".into(),
        seeds: vec![5],
        version: caqzo::VERSION,
    };
    let labels = CellLabels {
        experiment_id: "x",
        objective: "quadratic",
        compander: "identity",
        bits: 4,
    };
    let path = dir.path().join("t.csv");
    write_traces(&path, &prov, &labels, &[trace]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(data_lines(&path).len(), 2);
    assert!(text
        .lines()
        .last()
        .unwrap()
        .starts_with("# failed method=caq seed=5"));
}

const PROBE: &str = r#"
experiment_id = "probe"
objectives = ["quadratic"]
methods = ["caq", "ws-rademacher"]
d = 100
T = 0
eta = 0.005
seeds = [0, 1, 2]

[[companders]]
family = "mu_law"
bits = 2

[probes]
n_probes = 8
"#;

#[test]
fn probe_rows_floor_caq_and_keep_weight_space_residual() {
    let dir = tempfile::tempdir().unwrap();
    let (probes, path) = probe_experiment(&cfg(PROBE), &opts(dir.path(), 0)).unwrap();
    assert_eq!(probes.len(), 2 * 3);
    assert_eq!(data_lines(&path).len(), 1 + 6);
    for p in &probes {
        match p.method {
            Method::Caq => {
                assert_eq!(p.residual_sq, 0.0);
                assert_eq!(p.log10_ratio, -12.0);
            }
            _ => assert!(p.log10_ratio.is_finite() && p.log10_ratio > -12.0),
        }
    }
}

fn identity_ratios(bits: u32) -> Vec<f64> {
    let text = PROBE
        .replace(
            "family = \"mu_law\"\nbits = 2",
            &format!("family = \"identity\"\nbits = {bits}"),
        )
        .replace(
            "methods = [\"caq\", \"ws-rademacher\"]",
            "methods = [\"ws-rademacher\"]",
        );
    let dir = tempfile::tempdir().unwrap();
    let (probes, _) = probe_experiment(&cfg(&text), &opts(dir.path(), 0)).unwrap();
    probes.iter().map(|p| p.log10_ratio).collect()
}

#[test]
fn weight_space_residual_shrinks_with_resolution() {
    let coarse = identity_ratios(12);
    let fine = identity_ratios(20);
    for (c, f) in coarse.iter().zip(&fine) {
        // eight more bits shrink delta^2 by 2^16, close to five decades
        assert!(f < &-4.0 && c - f > 3.0, "{c} {f}");
    }
}

#[test]
fn cli_reports_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, MINIMAL.replace("T = 1", "T = 1\nwidth = 3")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_caqzo"))
        .args(["run", "--config"])
        .arg(&bad)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("width") && err.contains("line"), "{err}");
}

#[test]
fn cli_grid_span_identity() {
    let out = Command::new(env!("CARGO_BIN_EXE_caqzo"))
        .args([
            "grid-span",
            "--compander",
            "identity",
            "--levels",
            "21",
            "--x",
            "0",
            "--u",
            "1",
            "--mu",
            "0.1",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(
        text.contains("rho = 1\n") && text.contains("regime = matched"),
        "{text}"
    );
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "cfg") {
            caqzo::harness::load_config(&path)
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert_eq!(n, 3);
}
