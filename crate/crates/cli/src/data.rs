use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;

use bitgeo::data_io::{generate_synthetic, load_mnist_dir, Dataset, Split, SyntheticSpec};
use bitgeo::RealTensor;

use crate::CliError;

/// Where samples come from: an MNIST directory or a synthetic spec file.
#[derive(Args, Debug, Clone, Serialize)]
#[group(required = true, multiple = false)]
pub struct DataSource {
    /// Directory with MNIST IDX files (optionally gzipped).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// JSON file with a synthetic dataset spec, e.g. {"kind":{"kind":"isotropic_gaussian"},"dim":64,"num_samples":1000,"seed":0}.
    #[arg(long)]
    pub synthetic: Option<PathBuf>,
}

pub fn read_synthetic_spec(path: &Path) -> Result<SyntheticSpec, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Rows `range` of `ds` as a new dataset.
pub fn slice(ds: &Dataset, range: std::ops::Range<usize>, split: Split) -> Result<Dataset, CliError> {
    let idx: Vec<usize> = range.collect();
    let (x, y) = ds.batch(&idx);
    Ok(Dataset::new(RealTensor::from_array2(x)?, y, ds.num_classes, split)?)
}

impl DataSource {
    /// Train and held-out sets. Synthetic data is split 80/20 in order.
    pub fn train_test(&self) -> Result<(Dataset, Dataset), CliError> {
        match (&self.data, &self.synthetic) {
            (Some(dir), _) => Ok((load_mnist_dir(dir, Split::Train)?, load_mnist_dir(dir, Split::Test)?)),
            (None, Some(spec)) => {
                let ds = generate_synthetic(&read_synthetic_spec(spec)?)?;
                let cut = ds.len() * 4 / 5;
                if cut == 0 || cut == ds.len() {
                    return Err(CliError::Usage("synthetic dataset too small to split (need at least 2 samples)".into()));
                }
                Ok((slice(&ds, 0..cut, Split::Synthetic)?, slice(&ds, cut..ds.len(), Split::Synthetic)?))
            }
            (None, None) => Err(CliError::Usage("one of --data or --synthetic is required".into())),
        }
    }

    /// A single evaluation set: the chosen MNIST split, or all synthetic samples.
    pub fn eval_set(&self, split: Split) -> Result<Dataset, CliError> {
        match (&self.data, &self.synthetic) {
            (Some(dir), _) => Ok(load_mnist_dir(dir, split)?),
            (None, Some(spec)) => Ok(generate_synthetic(&read_synthetic_spec(spec)?)?),
            (None, None) => Err(CliError::Usage("one of --data or --synthetic is required".into())),
        }
    }
}
