use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use bitgeo::diagnostics::write_atomic;
use bitgeo::hdgeom::{self, mc_angle_samples, AngleRow};

use crate::manifest::{ensure_dir, Run};
use crate::CliError;

const CHECK_SIGMAS: f64 = 3.0;

#[derive(Args, Debug, Serialize)]
pub struct AnglesArgs {
    /// Comma-separated dimensions.
    #[arg(long, value_delimiter = ',', required = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub dims: Vec<u64>,
    /// Gaussian vectors drawn per dimension.
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(2..))]
    pub samples: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Exit with status 1 if any estimate is more than 3 standard errors off.
    #[arg(long)]
    pub check: bool,
}

#[derive(Serialize)]
struct Row {
    #[serde(flatten)]
    row: AngleRow,
    closed_form_angle_deg: f64,
    rho_var: f64,
    eta_z: f64,
    rho_var_z: f64,
    pass: bool,
}

pub fn run(args: AnglesArgs) -> Result<(), CliError> {
    ensure_dir(&args.out)?;
    let mut run = Run::start("angles", &args, Some(args.seed))?;
    let mut csv = String::from(
        "n,closed_form_mean,closed_form_var,mc_mean,mc_var,mc_angle_std_deg,closed_form_angle_deg,rho_var,eta_z,rho_var_z,pass\n",
    );
    let mut rows = Vec::new();
    for (k, &n) in args.dims.iter().enumerate() {
        let sample = mc_angle_samples(n, args.samples as usize, args.seed.wrapping_add(k as u64))?;
        let check = sample.check()?;
        let r = Row {
            row: AngleRow::from_sample(&sample)?,
            closed_form_angle_deg: hdgeom::binarized_cosine_stats(n)?.mean_angle_deg,
            rho_var: sample.rho_variance(),
            eta_z: check.eta_z,
            rho_var_z: check.rho_var_z,
            pass: check.passes(CHECK_SIGMAS),
        };
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.row.n,
            r.row.closed_form_mean,
            r.row.closed_form_var,
            r.row.mc_mean,
            r.row.mc_var,
            r.row.mc_angle_std_deg,
            r.closed_form_angle_deg,
            r.rho_var,
            r.eta_z,
            r.rho_var_z,
            r.pass
        );
        eprintln!(
            "n={n}: mean {:.6} (closed form {:.6}), z={:+.2}, rho var z={:+.2}",
            r.row.mc_mean, r.row.closed_form_mean, r.eta_z, r.rho_var_z
        );
        rows.push(r);
    }
    let csv_path = args.out.join("angles.csv");
    write_atomic(&csv_path, csv.as_bytes())?;
    run.output(&csv_path);
    let failed: Vec<u64> = rows.iter().filter(|r| !r.pass).map(|r| r.row.n).collect();
    run.results(&rows)?;
    run.finish(&args.out.join("manifest.json"))?;
    if args.check && !failed.is_empty() {
        return Err(CliError::Check(format!(
            "Monte Carlo disagrees with the closed form beyond {CHECK_SIGMAS} sigma at n = {failed:?}"
        )));
    }
    Ok(())
}
