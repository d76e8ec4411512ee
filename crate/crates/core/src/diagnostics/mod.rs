//! Measurements on trained (or random) networks and data: how well binarized
//! dot products track their continuous counterparts, permutation controls,
//! weight-angle and weight-component histograms, PCA spectra.

mod angles;
mod dpp;
mod pca;

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use angles::{
    binarization_angle_deg, chi_square_uniform_p, layer_id, uniform_angle_oracle, weight_angle_histogram,
    weight_component_histogram, AngleHistogram, ComponentHistogram,
};
pub use dpp::{
    activation_dpp, permutation_control, permute_features, predicted_permuted_r, weight_dpp, DppReport,
    DppSummary, Histogram2d, DEFAULT_BINS, EXTENT_QUANTILE,
};
pub use pca::{binarize_reconstruct_error, mean_reconstruct_error, pca_spectrum, PcaSpectrum};

use crate::bnn::{ForwardConfig, Layer, LayerKind, Network};
use crate::{Error, RealTensor, Result};

/// What one dense layer sees in an eval-mode forward pass.
#[derive(Clone, Debug)]
pub struct DenseProbe {
    pub dense_index: usize,
    pub layer_index: usize,
    pub layer_id: String,
    pub kind: LayerKind,
    pub inputs: RealTensor,
}

/// Inputs to every dense layer; the first layer's inputs are the raw data.
pub fn probe_dense_inputs(net: &Network, x: &RealTensor) -> Result<Vec<DenseProbe>> {
    let cache = net.forward(x.view2(), ForwardConfig::eval())?;
    net.dense_layers()
        .into_iter()
        .enumerate()
        .map(|(k, i)| {
            Ok(DenseProbe {
                dense_index: k,
                layer_index: i,
                layer_id: layer_id(k),
                kind: match net.layers()[i] {
                    Layer::BinaryDense(_) => LayerKind::Binary,
                    _ => LayerKind::Continuous,
                },
                inputs: RealTensor::from_array2(cache.input_of(i).to_owned())?,
            })
        })
        .collect()
}

/// [`weight_dpp`] for every binary dense layer, optionally on
/// feature-permuted inputs (`permute_seed`, offset per layer).
pub fn network_weight_dpp(net: &Network, x: &RealTensor, permute_seed: Option<u64>) -> Result<Vec<DppReport>> {
    let mut out = Vec::new();
    for probe in probe_dense_inputs(net, x)? {
        let Layer::BinaryDense(l) = &net.layers()[probe.layer_index] else {
            continue;
        };
        let inputs = match permute_seed {
            Some(seed) => permutation_control(&probe.inputs, seed.wrapping_add(probe.dense_index as u64))?,
            None => probe.inputs,
        };
        out.push(weight_dpp(probe.layer_id, &inputs, l.latent(), l.binary())?);
    }
    Ok(out)
}

/// [`activation_dpp`] at every sign activation feeding a binary dense layer.
/// Reports are named after the consuming layer.
pub fn network_activation_dpp(net: &Network, x: &RealTensor) -> Result<Vec<DppReport>> {
    let cache = net.forward(x.view2(), ForwardConfig::eval())?;
    let dense = net.dense_layers();
    let mut out = Vec::new();
    for (i, layer) in net.layers().iter().enumerate() {
        if !matches!(layer, Layer::BinarizeActivation { .. }) {
            continue;
        }
        let Some(Layer::BinaryDense(next)) = net.layers().get(i + 1) else {
            continue;
        };
        let k = dense.iter().position(|&d| d == i + 1).expect("dense layer");
        let a_c = RealTensor::from_array2(cache.input_of(i).to_owned())?;
        out.push(activation_dpp(layer_id(k), next.binary(), &a_c)?);
    }
    Ok(out)
}

/// `{layer_id}_{report}.{ext}`.
pub fn report_path(dir: &Path, layer_id: &str, report: &str, ext: &str) -> PathBuf {
    dir.join(format!("{layer_id}_{report}.{ext}"))
}

/// Write `bytes` to `path` through a renamed temporary file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

#[derive(Serialize)]
struct DppJson<'a> {
    #[serde(flatten)]
    summary: DppSummary,
    histogram: &'a Histogram2d,
}

/// Scalars and the 2-D histogram (raw pairs go to CSV).
pub fn write_dpp_json(path: &Path, report: &DppReport) -> Result<()> {
    write_json(
        path,
        &DppJson {
            summary: report.summary(),
            histogram: &report.histogram,
        },
    )
}

/// Raw `(x, y)` pairs as CSV. With `max_rows`, a seeded uniform subsample
/// (kept in original order) is written instead; the header line records it.
pub fn write_pairs_csv(path: &Path, report: &DppReport, max_rows: Option<usize>, seed: u64) -> Result<()> {
    let n = report.len();
    let mut out = String::new();
    let rows: Vec<usize> = match max_rows {
        Some(m) if m < n => {
            out.push_str(&format!("# subsample of {m} out of {n} pairs, seed {seed}\n"));
            let mut idx = index::sample(&mut ChaCha8Rng::seed_from_u64(seed), n, m).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..n).collect(),
    };
    out.push_str("binary,continuous\n");
    for i in rows {
        out.push_str(&format!("{},{}\n", report.x[i], report.y[i]));
    }
    write_atomic(path, out.as_bytes())
}
