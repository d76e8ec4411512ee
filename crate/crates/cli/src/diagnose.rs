use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;

use bitgeo::bitcore::{random_rotation, RotationKind};
use bitgeo::bnn::{load_checkpoint, Layer};
use bitgeo::data_io::Split;
use bitgeo::diagnostics::{
    mean_reconstruct_error, network_activation_dpp, network_weight_dpp, pca_spectrum, predicted_permuted_r,
    report_path, weight_angle_histogram, weight_component_histogram, write_dpp_json, write_json, write_pairs_csv,
    DppReport, DppSummary, PcaSpectrum,
};

use crate::data::{slice, DataSource};
use crate::manifest::{ensure_dir, Run};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Report {
    /// Binarized vs continuous weights against the same inputs.
    Dpp,
    /// Binarized vs continuous activations against the same binary weights.
    DppAct,
    /// Weight-to-binarization angle histograms.
    Angles,
    /// Histograms of the weight entries.
    Components,
    /// Covariance spectrum of the inputs.
    Pca,
    /// Weight dot products on feature-permuted inputs.
    Perm,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Args, Debug, Serialize)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub source: DataSource,
    /// MNIST split to probe with (ignored for synthetic data).
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long, value_enum)]
    pub report: Report,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Probe samples taken from the head of the dataset.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(2..))]
    pub samples: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cap on raw pairs written per CSV; larger reports are subsampled.
    #[arg(long, default_value_t = 200_000)]
    pub max_csv_rows: usize,
    /// Histogram bins for the components report.
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    pub bins: u64,
}

#[derive(Serialize)]
struct PermRow {
    layer_id: String,
    permuted: DppSummary,
    unpermuted_r: f64,
    predicted_r: f64,
}

#[derive(Serialize)]
struct PcaJson {
    #[serde(flatten)]
    spectrum: PcaSpectrum,
    reconstruct_error_identity: f64,
    reconstruct_error_rotated: f64,
}

pub fn run(args: DiagnoseArgs) -> Result<(), CliError> {
    ensure_dir(&args.out)?;
    let mut run = Run::start("diagnose", &args, Some(args.seed))?;
    let net = load_checkpoint(&args.ckpt)?;
    let split = match args.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let full = args.source.eval_set(split)?;
    if full.dim() != net.input_dim() {
        return Err(CliError::Usage(format!(
            "checkpoint expects {}-dimensional inputs, data has {}",
            net.input_dim(),
            full.dim()
        )));
    }
    let n = (args.samples as usize).min(full.len());
    let data = slice(&full, 0..n, full.split)?;
    let x = &data.images;
    let name = match args.report {
        Report::Dpp => "dpp",
        Report::DppAct => "dpp_act",
        Report::Angles => "angles",
        Report::Components => "components",
        Report::Pca => "pca",
        Report::Perm => "perm",
    };
    let out = &args.out;
    let write_pairs = |reports: &[DppReport], run: &mut Run| -> Result<Vec<DppSummary>, CliError> {
        let mut summaries = Vec::new();
        for r in reports {
            let json = report_path(out, &r.layer_id, name, "json");
            let csv = report_path(out, &r.layer_id, name, "csv");
            write_dpp_json(&json, r)?;
            write_pairs_csv(&csv, r, Some(args.max_csv_rows), args.seed)?;
            eprintln!("{}: r = {:.4} over {} pairs", r.layer_id, r.pearson_r, r.len());
            run.output(json);
            run.output(csv);
            summaries.push(r.summary());
        }
        Ok(summaries)
    };
    match args.report {
        Report::Dpp => {
            let reports = network_weight_dpp(&net, x, None)?;
            let s = write_pairs(&reports, &mut run)?;
            run.results(s)?;
        }
        Report::DppAct => {
            let reports = network_activation_dpp(&net, x)?;
            let s = write_pairs(&reports, &mut run)?;
            run.results(s)?;
        }
        Report::Perm => {
            let permuted = network_weight_dpp(&net, x, Some(args.seed))?;
            let plain = network_weight_dpp(&net, x, None)?;
            write_pairs(&permuted, &mut run)?;
            // Reports come one per binary layer, in layer order.
            let binary = net.layers().iter().filter_map(|l| match l {
                Layer::BinaryDense(b) => Some(b),
                _ => None,
            });
            let mut rows = Vec::new();
            for ((p, u), layer) in permuted.iter().zip(&plain).zip(binary) {
                rows.push(PermRow {
                    layer_id: p.layer_id.clone(),
                    permuted: p.summary(),
                    unpermuted_r: u.pearson_r,
                    predicted_r: predicted_permuted_r(layer.latent(), layer.binary()),
                });
            }
            let path = args.out.join("perm_summary.json");
            write_json(&path, &rows)?;
            run.output(path);
            run.results(rows)?;
        }
        Report::Angles => {
            let hists = weight_angle_histogram(&net)?;
            let mut summary = Vec::new();
            for h in &hists {
                let path = report_path(out, &h.layer_id, name, "json");
                write_json(&path, h)?;
                eprintln!(
                    "{}: mean {:.2}° sd {:.2}° (Gaussian prediction {:.2}° sd {:.2}°)",
                    h.layer_id,
                    h.mean_deg(),
                    h.std_deg(),
                    h.theory_mean_deg,
                    h.theory_std_deg
                );
                run.output(path);
                summary.push(serde_json::json!({
                    "layer_id": h.layer_id,
                    "mean_deg": h.mean_deg(),
                    "std_deg": h.std_deg(),
                    "theory_mean_deg": h.theory_mean_deg,
                    "theory_std_deg": h.theory_std_deg,
                }));
            }
            run.results(summary)?;
        }
        Report::Components => {
            let hists = weight_component_histogram(&net, args.bins as usize)?;
            for h in &hists {
                let path = report_path(out, &h.layer_id, name, "json");
                write_json(&path, h)?;
                eprintln!(
                    "{}: near-zero mass {:.4} ({:.2}x Gaussian), asymmetry {:.4}",
                    h.layer_id,
                    h.near_zero_mass,
                    h.near_zero_excess,
                    h.asymmetry()
                );
                run.output(path);
            }
            run.results(&hists)?;
        }
        Report::Pca => {
            let spectrum = pca_spectrum(x)?;
            let rotation = random_rotation(x.cols(), args.seed, RotationKind::Dense)?;
            let report = PcaJson {
                spectrum,
                reconstruct_error_identity: mean_reconstruct_error(x, None)?,
                reconstruct_error_rotated: mean_reconstruct_error(x, Some(&rotation))?,
            };
            let path = report_path(out, "input", name, "json");
            write_json(&path, &report)?;
            eprintln!(
                "binarize-reconstruct error: {:.4} plain, {:.4} after a random rotation",
                report.reconstruct_error_identity, report.reconstruct_error_rotated
            );
            run.output(path);
            run.results(serde_json::json!({
                "reconstruct_error_identity": report.reconstruct_error_identity,
                "reconstruct_error_rotated": report.reconstruct_error_rotated,
            }))?;
        }
    }
    run.finish(&args.out.join("manifest.json"))?;
    Ok(())
}
