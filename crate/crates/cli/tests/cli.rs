use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn comag(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_comag"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn summary_value(text: &str, key: &str) -> Option<String> {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")).map(str::to_string))
}

#[test]
fn estimate_prints_labelled_fields_and_writes_csv_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = comag(&["estimate", "--b-nv", "1.1,0,0", "--b-rb", "1.0", "--out", "out"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(summary_value(&text, "b_hat").as_deref(), Some("(1, 0, 0)"));
    assert_eq!(summary_value(&text, "tangential").as_deref(), Some("0"));
    let csv = fs::read_to_string(dir.path().join("out/estimate.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("b_nv_x,b_nv_y,b_nv_z,b_0_x"));
    let fields: Vec<f64> = lines[1].split(',').map(|f| f.parse().unwrap()).collect();
    assert!((fields[7] - 1.0).abs() < 1e-12 && fields[8] == 0.0 && fields[9] == 0.0);
}

#[test]
fn estimate_echoes_supplied_background() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[estimate]\nb_0 = [0.004, -0.7454, 0.6451]\nb_nv = [0.2, -0.4, 0.9]\nb_rb = 1.2\n";
    fs::write(dir.path().join("c.toml"), cfg).unwrap();
    let o = comag(&["estimate", "--config", "c.toml", "--out", "out"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(summary_value(&stdout(&o), "b_0").as_deref(), Some("(0.004, -0.7454, 0.6451)"));
    // Flags override the file.
    let o = comag(&["estimate", "--config", "c.toml", "--b-0", "-0.1,0,0", "--out", "out"], dir.path());
    assert_eq!(summary_value(&stdout(&o), "b_0").as_deref(), Some("(-0.1, 0, 0)"));
}

#[test]
fn missing_rb_reading_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = comag(&["estimate", "--b-nv", "1,0,0", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--b-rb"));
}

#[test]
fn exit_codes_distinguish_failure_classes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("unknown.toml"), "[grid]\nsigmaNv = 1\n").unwrap();
    fs::write(p.join("invalid.toml"), "[grid]\nsigma_rb = -1\n").unwrap();
    fs::write(p.join("degenerate.toml"), "[estimate]\nb_nv = [1, 0, 0]\nb_0 = [-1, 0, 0]\nb_rb = 1\n").unwrap();

    assert_eq!(comag(&["no-such-command"], p).status.code(), Some(2));
    let o = comag(&["simulate-grid", "--config", "unknown.toml", "--out", "out"], p);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("did you mean `sigma_nv`"));
    assert_eq!(comag(&["simulate-grid", "--config", "invalid.toml", "--out", "out"], p).status.code(), Some(4));
    assert_eq!(comag(&["simulate-grid", "--config", "missing.toml", "--out", "out"], p).status.code(), Some(5));
    // b_nv + b_0 = 0 leaves the correction direction undefined.
    assert_eq!(comag(&["estimate", "--config", "degenerate.toml", "--out", "out"], p).status.code(), Some(5));
}

#[test]
fn grid_run_writes_csv_summary_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("g.toml"), "[grid]\ngrid_points = 5\nn_reps = 10\n").unwrap();
    let o = comag(&["simulate-grid", "--config", "g.toml", "--out", "out", "--seed", "3"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(p.join("out/grid.csv")).unwrap();
    assert_eq!(csv.lines().count(), 26);
    assert!(csv.starts_with("bx,by,valid,gain_mag_db"));
    let summary = fs::read_to_string(p.join("out/grid_summary.txt")).unwrap();
    assert_eq!(summary_value(&summary, "seed").as_deref(), Some("3"));
    let gp = fs::read_to_string(p.join("out/grid.gp")).unwrap();
    assert!(gp.contains("'grid.csv'") && gp.contains("(dB)"));
    // Only the final files remain: no temporaries left behind.
    let mut names: Vec<String> = fs::read_dir(p.join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["grid.csv", "grid.gp", "grid_summary.txt"]);
}

#[test]
fn same_seed_reproduces_output() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("s.toml"), "[scan]\nn_scans = 3\n").unwrap();
    for out in ["a", "b"] {
        let o = comag(&["spatial-scan", "--config", "s.toml", "--out", out, "-q"], p);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).is_empty());
    }
    assert_eq!(fs::read(p.join("a/scan.csv")).unwrap(), fs::read(p.join("b/scan.csv")).unwrap());
}

#[test]
fn every_simulation_command_runs() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let cfg = "[grid]\ngrid_points = 5\n[marginal]\nn_points = 5\n[scan]\nn_scans = 2\n[scalar_demo]\nn_points = 5\n[angular]\ngrid_points = 5\n";
    fs::write(p.join("c.toml"), cfg).unwrap();
    for (cmd, stem) in [
        ("orthogonality", "orthogonality"),
        ("marginal", "marginal"),
        ("spatial-scan", "scan"),
        ("scalar-demo", "scalar_demo"),
        ("angular-map", "angular"),
    ] {
        let o = comag(&[cmd, "--config", "c.toml", "--out", "out", "-q"], p);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
        for ext in [".csv", "_summary.txt", ".gp"] {
            assert!(p.join(format!("out/{stem}{ext}")).exists(), "{cmd}: missing {stem}{ext}");
        }
    }
}

#[test]
fn calibrate_reads_inline_and_csv_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let b0 = [0.004, -0.7454, 0.6451];
    let reading = |v: [f64; 3]| ((v[0] + b0[0]).powi(2) + (v[1] + b0[1]).powi(2) + (v[2] + b0[2]).powi(2)).sqrt();
    let mut csv = String::from("nv_x,nv_y,nv_z,rb\n");
    for v in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] {
        csv.push_str(&format!("{},{},{},{}\n", v[0], v[1], v[2], reading(v)));
    }
    fs::create_dir(p.join("data")).unwrap();
    fs::write(p.join("data/pairs.csv"), csv).unwrap();
    let cfg = format!("[calibrate]\npairs_csv = \"pairs.csv\"\npairs = [[-1, 0, 0, {}]]\n", reading([-1.0, 0.0, 0.0]));
    fs::write(p.join("data/cal.toml"), cfg).unwrap();
    let o = comag(&["calibrate", "--config", "data/cal.toml", "--out", "out"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(summary_value(&text, "n_pairs").as_deref(), Some("4"));
    let row = fs::read_to_string(p.join("out/calibration.csv")).unwrap();
    let fields: Vec<f64> = row.lines().nth(1).unwrap().split(',').map(|f| f.parse().unwrap()).collect();
    for k in 0..3 {
        assert!((fields[k] - b0[k]).abs() < 1e-8, "{row}");
    }
}

#[test]
fn emit_config_prints_parseable_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let o = comag(&["emit-config"], dir.path());
    assert!(o.status.success());
    fs::write(dir.path().join("d.toml"), stdout(&o)).unwrap();
    let parsed = comag_cli::parse_config(&dir.path().join("d.toml")).unwrap();
    assert_eq!(parsed, comag_cli::FileConfig::default());
}
