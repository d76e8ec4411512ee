use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use bitgeo::diagnostics::{write_atomic, write_json};
use bitgeo::dynamics::{parse_matrix_spec, simulate_regression, simulate_scalar};

use crate::manifest::{ensure_dir, Run};
use crate::CliError;

#[derive(Args, Debug, Serialize)]
pub struct DynamicsArgs {
    /// Target weight of the scalar map (ignored with --matrix-spec).
    #[arg(long, allow_hyphen_values = true, required_unless_present = "matrix_spec")]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub steps: u64,
    /// Scalar starting weight (default alpha·epsilon).
    #[arg(long, allow_hyphen_values = true)]
    pub w0: Option<f64>,
    /// JSON file {"c_yx": [[..]], "c_xx": [[..]]} for the matrix dynamics.
    #[arg(long)]
    pub matrix_spec: Option<PathBuf>,
    /// Seed for the matrix dynamics' starting point.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep every k-th step in the trajectory CSV.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub stride: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: DynamicsArgs) -> Result<(), CliError> {
    ensure_dir(&args.out)?;
    let seed = args.matrix_spec.as_ref().map(|_| args.seed);
    let mut run = Run::start("dynamics", &args, seed)?;
    let steps = args.steps as usize;
    let stride = args.stride as usize;
    let traj_path = args.out.join("trajectory.csv");
    let summary_path = args.out.join("summary.json");
    let mut csv = String::new();
    match (&args.matrix_spec, args.alpha) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            let problem = parse_matrix_spec(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let trace = simulate_regression(&problem, args.epsilon, steps, args.seed, true)?;
            let (out, d) = (problem.outputs(), problem.inputs());
            csv.push_str("step");
            for o in 0..out {
                for j in 0..d {
                    let _ = write!(csv, ",w_{o}_{j}");
                }
            }
            csv.push('\n');
            for (t, w) in trace.trajectory.iter().flatten().enumerate().step_by(stride) {
                let _ = write!(csv, "{t}");
                w.data().iter().for_each(|v| {
                    let _ = write!(csv, ",{v}");
                });
                csv.push('\n');
            }
            #[derive(Serialize)]
            struct Summary<'a> {
                epsilon: f64,
                steps: usize,
                burn_in: usize,
                c_yx: Vec<&'a [f64]>,
                time_avg_theta: Vec<&'a [f64]>,
                final_w: Vec<&'a [f64]>,
                max_abs_error: f64,
            }
            let max_abs_error = trace
                .time_avg_theta
                .data()
                .iter()
                .zip(problem.c_yx.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let summary = Summary {
                epsilon: trace.epsilon,
                steps: trace.steps,
                burn_in: trace.burn_in,
                c_yx: problem.c_yx.iter_rows().collect(),
                time_avg_theta: trace.time_avg_theta.iter_rows().collect(),
                final_w: trace.final_w.iter_rows().collect(),
                max_abs_error,
            };
            eprintln!("time-averaged sign vs C_yx (identity C_xx only): max |diff| = {max_abs_error:.3e}");
            write_json(&summary_path, &summary)?;
            run.results(serde_json::json!({ "max_abs_error": max_abs_error }))?;
        }
        (None, Some(alpha)) => {
            let trace = simulate_scalar(alpha, args.epsilon, steps, args.w0)?;
            csv.push_str("step,w,theta\n");
            for t in (0..trace.steps()).step_by(stride) {
                let _ = writeln!(csv, "{t},{},{}", trace.w_trajectory[t], trace.theta_trajectory[t]);
            }
            let summary = trace.summary();
            eprintln!(
                "alpha={alpha}: time-averaged sign {:.6}, p_hat {:.6}, max |w| after burn-in {:.3e}",
                summary.time_avg_theta, summary.p_hat, summary.max_abs_w_after_burn_in
            );
            write_json(&summary_path, &summary)?;
            run.results(&summary)?;
        }
        (None, None) => return Err(CliError::Usage("--alpha or --matrix-spec is required".into())),
    }
    write_atomic(&traj_path, csv.as_bytes())?;
    run.output(&traj_path);
    run.output(&summary_path);
    run.finish(&args.out.join("manifest.json"))?;
    Ok(())
}
