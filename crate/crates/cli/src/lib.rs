//! Command-line front end: config handling, experiment dispatch, CSV,
//! summary and plot-script output.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod plot;

use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};

pub use config::{emit_defaults, parse_config, parse_config_str, FileConfig};
pub use error::CliError;

use config::Vec3;

#[derive(Debug, Parser)]
#[command(name = "comag", version, about = "Combined NV vector / Rb scalar magnetometry simulations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML config with one table per command; missing keys take defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Directory for CSV, summary and plot-script output.
    #[arg(long, global = true, value_name = "DIR", default_value = "comag-out")]
    pub out: PathBuf,

    /// Overrides the seed of the selected command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// More progress output on stderr (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,

    /// Do not print the summary on stdout.
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Gain map over the (bx, by) grid ([grid]).
    SimulateGrid,
    /// Noise-free orthogonality diagnostic over the grid ([grid]).
    Orthogonality,
    /// Gain along one field direction ([marginal]).
    Marginal,
    /// Simulated stage scan past a dipole ([scan]).
    SpatialScan,
    /// Combined vs scalar-subtraction magnitude under background reversal
    /// ([scalar_demo]).
    ScalarDemo,
    /// Direction uncertainty map of the NV reading ([angular]).
    AngularMap,
    /// Background field from calibration readings ([calibrate]).
    Calibrate,
    /// One combined estimate from readings ([estimate], overridable by flags).
    Estimate(EstimateArgs),
    /// Print the full default configuration.
    EmitConfig,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EstimateArgs {
    /// NV vector reading `x,y,z`, G.
    #[arg(long = "b-nv", value_parser = parse_vec3, allow_hyphen_values = true)]
    pub b_nv: Option<Vec3>,
    /// Calibrated background `x,y,z`, G.
    #[arg(long = "b-0", value_parser = parse_vec3, allow_hyphen_values = true)]
    pub b_0: Option<Vec3>,
    /// Rb scalar reading, G.
    #[arg(long = "b-rb")]
    pub b_rb: Option<f64>,
    /// Direction for the stretch/rotation split `x,y,z`; defaults to b_nv.
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    pub reference: Option<Vec3>,
}

/// Parses `x,y,z`, optionally wrapped in brackets or parentheses.
pub fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let inner = s.trim().trim_start_matches(['(', '[']).trim_end_matches([')', ']']);
    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated components, got `{s}`"));
    }
    let mut v = [0.0; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p.parse().map_err(|_| format!("`{p}` is not a number"))?;
    }
    Ok(Vec3::from_array(v))
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::EmitConfig = cli.command {
        print!("{}", emit_defaults());
        return Ok(());
    }
    let mut cfg = match &cli.config {
        Some(path) => parse_config(path)?,
        None => FileConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    commands::dispatch(&cli, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vec3_parsing() {
        assert_eq!(parse_vec3("1,2,3").unwrap(), Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(parse_vec3("(0.004, -0.7454, 0.6451)").unwrap(), Vec3::new(0.004, -0.7454, 0.6451));
        assert!(parse_vec3("1,2").is_err());
        assert!(parse_vec3("1,x,3").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
