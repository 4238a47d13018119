use std::io::Write;
use std::path::Path;
use std::time::Instant;

use comag::estimator::{calibrate_background, calibration_covariance, combined_estimate_with_reference, CalibrationSet};
use comag::simulation::{
    angular_error_map, marginal_improvement, orthogonality_map, run_grid_simulation, scalar_vs_vector_demo,
    spatial_scan_sim,
};
use comag::stats::median;
use serde::Deserialize;

use crate::config::{FileConfig, Vec3};
use crate::error::CliError;
use crate::output::OutputDir;
use crate::plot::{script, PlotKind};
use crate::{Cli, Command, EstimateArgs};

type Summary = Vec<(String, String)>;

struct Run<'a> {
    cli: &'a Cli,
    out: OutputDir,
    started: Instant,
}

impl Run<'_> {
    fn progress(&self, msg: impl AsRef<str>) {
        if self.cli.verbose > 0 {
            eprintln!("[{:7.2} s] {}", self.started.elapsed().as_secs_f64(), msg.as_ref());
        }
    }

    /// Writes `<stem>.csv`, `<stem>_summary.txt` and optionally `<stem>.gp`,
    /// then echoes the summary.
    fn emit<F>(&mut self, stem: &str, csv: F, summary: &Summary, plot: Option<PlotKind>) -> Result<(), CliError>
    where
        F: FnOnce(&mut dyn Write) -> Result<(), csv::Error>,
    {
        let csv_name = format!("{stem}.csv");
        self.out.write_csv(&csv_name, csv)?;
        self.out.write_summary(&format!("{stem}_summary.txt"), summary)?;
        if let Some(kind) = plot {
            let text = script(kind, &csv_name, stem);
            self.out.write(&format!("{stem}.gp"), |w| w.write_all(text.as_bytes()))?;
        }
        for p in self.out.written() {
            self.progress(format!("wrote {}", p.display()));
        }
        if !self.cli.quiet {
            for (k, v) in summary {
                println!("{k} = {v}");
            }
        }
        Ok(())
    }
}

pub fn dispatch(cli: &Cli, cfg: &FileConfig) -> Result<(), CliError> {
    let mut run = Run {
        cli,
        out: OutputDir::create(&cli.out)?,
        started: Instant::now(),
    };
    match &cli.command {
        Command::SimulateGrid => simulate_grid(&mut run, cfg),
        Command::Orthogonality => orthogonality(&mut run, cfg),
        Command::Marginal => marginal(&mut run, cfg),
        Command::SpatialScan => spatial_scan(&mut run, cfg),
        Command::ScalarDemo => scalar_demo(&mut run, cfg),
        Command::AngularMap => angular(&mut run, cfg),
        Command::Calibrate => calibrate(&mut run, cfg),
        Command::Estimate(args) => estimate(&mut run, cfg, args),
        Command::EmitConfig => unreachable!("handled before dispatch"),
    }
}

fn simulate_grid(run: &mut Run, cfg: &FileConfig) -> Result<(), CliError> {
    let sim = cfg.grid.sim_config();
    run.progress(format!("{0}x{0} grid, {1} repetitions per cell", sim.grid_points, sim.n_reps));
    let map = run_grid_simulation(&sim)?;
    run.progress("grid done");
    let mut summary = map.summary(&sim);
    summary.push(("noise_model".into(), format!("{:?}", cfg.grid.noise_model).to_lowercase()));
    run.emit("grid", |w| map.write_csv(w), &summary, Some(PlotKind::Grid))
}

fn orthogonality(run: &mut Run, cfg: &FileConfig) -> Result<(), CliError> {
    let sim = &cfg.grid.sim;
    let map = orthogonality_map(sim)?;
    let values: Vec<f64> = map.values.iter().flatten().copied().collect();
    let stat = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let summary: Summary = vec![
        ("grid_min".into(), sim.grid_min.to_string()),
        ("grid_max".into(), sim.grid_max.to_string()),
        ("grid_points".into(), sim.grid_points.to_string()),
        ("b_0_true".into(), sim.b_0_true.to_string()),
        ("defined_cells".into(), values.len().to_string()),
        ("orthogonality_min".into(), stat(values.iter().copied().reduce(f64::min))),
        ("orthogonality_median".into(), stat((!values.is_empty()).then(|| median(&values)))),
        ("orthogonality_max".into(), stat(values.iter().copied().reduce(f64::max))),
    ];
    run.emit("orthogonality", |w| map.write_csv(w), &summary, Some(PlotKind::Orthogonality))
}

fn marginal(run: &mut Run, cfg: &FileConfig) -> Result<(), CliError> {
    let profile = marginal_improvement(&cfg.marginal)?;
    run.emit("marginal", |w| profile.write_csv(w), &profile.summary(&cfg.marginal), Some(PlotKind::Marginal))
}

fn spatial_scan(run: &mut Run, cfg: &FileConfig) -> Result<(), CliError> {
    run.progress(format!("{} scans of {} positions", cfg.scan.n_scans, cfg.scan.n_positions));
    let report = spatial_scan_sim(&cfg.scan)?;
    run.emit("scan", |w| report.write_csv(w), &report.summary(&cfg.scan), Some(PlotKind::SpatialScan))
}

fn scalar_demo(run: &mut Run, cfg: &FileConfig) -> Result<(), CliError> {
    let report = scalar_vs_vector_demo(&cfg.scalar_demo)?;
    run.emit(
        "scalar_demo",
        |w| report.write_csv(w),
        &report.summary(&cfg.scalar_demo),
        Some(PlotKind::ScalarDemo),
    )
}

fn angular(run: &mut Run, cfg: &FileConfig) -> Result<(), CliError> {
    let map = angular_error_map(&cfg.angular)?;
    run.emit("angular", |w| map.write_csv(w), &map.summary(&cfg.angular), Some(PlotKind::Angular))
}

#[derive(Deserialize)]
struct PairRow {
    nv_x: f64,
    nv_y: f64,
    nv_z: f64,
    rb: f64,
}

fn read_pairs_csv(path: &Path) -> Result<Vec<[f64; 4]>, CliError> {
    let parse_error = |message: String| CliError::Parse {
        path: path.display().to_string(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => parse_error(format!("{other:?}")),
    })?;
    reader
        .deserialize::<PairRow>()
        .map(|row| {
            let r = row.map_err(|e| parse_error(e.to_string()))?;
            Ok([r.nv_x, r.nv_y, r.nv_z, r.rb])
        })
        .collect()
}

fn calibrate(run: &mut Run, cfg: &FileConfig) -> Result<(), CliError> {
    let c = &cfg.calibrate;
    let mut rows = c.pairs.clone();
    if let Some(path) = &c.pairs_csv {
        rows.extend(read_pairs_csv(path)?);
    }
    let pairs = rows.iter().map(|r| (Vec3::new(r[0], r[1], r[2]), r[3])).collect();
    let set = CalibrationSet::new(pairs, c.calibration_averages).map_err(|source| CliError::Validation {
        section: "calibrate",
        source,
    })?;
    let fit = calibrate_background(&set)?;
    let sigma_cal = c.sigma_nv / f64::from(c.calibration_averages).sqrt();
    let stderr = calibration_covariance(&set, fit.b_0, sigma_cal, c.sigma_rb)?.diag().map(f64::sqrt);
    let summary: Summary = vec![
        ("n_pairs".into(), rows.len().to_string()),
        ("calibration_averages".into(), c.calibration_averages.to_string()),
        ("b_0".into(), fit.b_0.to_string()),
        ("b_0_stderr".into(), Vec3::from_array(stderr).to_string()),
        ("residual_norm".into(), fit.residual_norm.to_string()),
        ("iterations".into(), fit.iterations.to_string()),
    ];
    run.emit(
        "calibration",
        |w| {
            let mut out = csv::Writer::from_writer(w);
            out.write_record([
                "b_0_x",
                "b_0_y",
                "b_0_z",
                "stderr_x",
                "stderr_y",
                "stderr_z",
                "residual_norm",
                "iterations",
                "n_pairs",
            ])?;
            out.serialize((
                fit.b_0.bx,
                fit.b_0.by,
                fit.b_0.bz,
                stderr[0],
                stderr[1],
                stderr[2],
                fit.residual_norm,
                fit.iterations,
                rows.len(),
            ))?;
            out.flush()?;
            Ok(())
        },
        &summary,
        None,
    )
}

fn estimate(run: &mut Run, cfg: &FileConfig, args: &EstimateArgs) -> Result<(), CliError> {
    let e = &cfg.estimate;
    let b_nv = args
        .b_nv
        .or(e.b_nv)
        .ok_or_else(|| CliError::Usage("estimate needs an NV reading: pass --b-nv x,y,z or set [estimate] b_nv".into()))?;
    let b_rb = args
        .b_rb
        .or(e.b_rb)
        .ok_or_else(|| CliError::Usage("estimate needs an Rb reading: pass --b-rb <G> or set [estimate] b_rb".into()))?;
    let b_0 = args.b_0.unwrap_or(e.b_0);
    let reference = args.reference.or(e.reference).unwrap_or(b_nv);
    let merged = crate::config::EstimateSection {
        b_nv: Some(b_nv),
        b_0,
        b_rb: Some(b_rb),
        reference: Some(reference),
    };
    merged.validate().map_err(|source| CliError::Validation {
        section: "estimate",
        source,
    })?;
    let est = combined_estimate_with_reference(b_nv, b_0, b_rb, reference)?;
    let orth = est.orthogonality.map(|o| o.to_string()).unwrap_or_default();
    let summary: Summary = vec![
        ("b_nv".into(), b_nv.to_string()),
        ("b_0".into(), b_0.to_string()),
        ("b_rb".into(), b_rb.to_string()),
        ("b_hat".into(), est.b_hat.to_string()),
        ("b_hat_magnitude".into(), est.b_hat.magnitude().to_string()),
        ("correction".into(), est.correction.to_string()),
        ("radial".into(), est.radial.to_string()),
        ("tangential".into(), est.tangential.to_string()),
        ("orthogonality".into(), orth.clone()),
    ];
    run.emit(
        "estimate",
        |w| {
            let mut out = csv::Writer::from_writer(w);
            out.write_record([
                "b_nv_x",
                "b_nv_y",
                "b_nv_z",
                "b_0_x",
                "b_0_y",
                "b_0_z",
                "b_rb",
                "b_hat_x",
                "b_hat_y",
                "b_hat_z",
                "correction_x",
                "correction_y",
                "correction_z",
                "radial",
                "tangential",
                "orthogonality",
            ])?;
            let mut row: Vec<String> = [b_nv.to_array(), b_0.to_array()].concat().iter().map(f64::to_string).collect();
            row.push(b_rb.to_string());
            row.extend(est.b_hat.to_array().iter().map(f64::to_string));
            row.extend(est.correction.to_array().iter().map(f64::to_string));
            row.push(est.radial.to_string());
            row.push(est.tangential.to_string());
            row.push(orth);
            out.write_record(&row)?;
            out.flush()?;
            Ok(())
        },
        &summary,
        None,
    )
}
