use std::fmt::Write as _;
use std::hint::black_box;
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use bitgeo::bitcore::{dot_bb, BitVector};
use bitgeo::diagnostics::write_atomic;

use crate::manifest::{ensure_dir, Run};
use crate::CliError;

#[derive(Args, Debug, Serialize)]
pub struct BenchArgs {
    /// Comma-separated vector dimensions.
    #[arg(long, value_delimiter = ',', default_value = "64,256,1024,4096,16384",
          value_parser = clap::value_parser!(u64).range(1..))]
    pub dims: Vec<u64>,
    /// Dot products timed per dimension and kernel.
    #[arg(long, default_value_t = 100_000)]
    pub iters: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for bench.csv and a manifest; the table always goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Timing {
    dim: usize,
    ns_packed: f64,
    ns_float: f64,
    speedup: f64,
}

fn float_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn run(args: BenchArgs) -> Result<(), CliError> {
    if args.iters == 0 {
        return Err(CliError::Usage("--iters must be at least 1".into()));
    }
    let mut run = Run::start("bench", &args, Some(args.seed))?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut csv = String::from("dim,iters,ns_packed,ns_float,speedup\n");
    let mut timings = Vec::new();
    for &dim in &args.dims {
        let dim = dim as usize;
        let fa: Vec<f64> = (0..dim).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let fb: Vec<f64> = (0..dim).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let (a, b) = (BitVector::from_signs(&fa)?, BitVector::from_signs(&fb)?);
        let expected = float_dot(&fa, &fb);
        let got = dot_bb(&a, &b)?;
        if got as f64 != expected {
            return Err(CliError::Check(format!("packed dot {got} != float dot {expected} at dim {dim}")));
        }
        let t = Instant::now();
        let mut acc = 0i64;
        for _ in 0..args.iters {
            acc = acc.wrapping_add(dot_bb(black_box(&a), black_box(&b))?);
        }
        black_box(acc);
        let ns_packed = t.elapsed().as_nanos() as f64 / args.iters as f64;
        let t = Instant::now();
        let mut facc = 0.0;
        for _ in 0..args.iters {
            facc += float_dot(black_box(&fa), black_box(&fb));
        }
        black_box(facc);
        let ns_float = t.elapsed().as_nanos() as f64 / args.iters as f64;
        let timing = Timing {
            dim,
            ns_packed,
            ns_float,
            speedup: ns_float / ns_packed,
        };
        let _ = writeln!(csv, "{dim},{},{ns_packed:.2},{ns_float:.2},{:.2}", args.iters, timing.speedup);
        timings.push(timing);
    }
    print!("{csv}");
    if let Some(dir) = &args.out {
        ensure_dir(dir)?;
        let path = dir.join("bench.csv");
        write_atomic(&path, csv.as_bytes())?;
        run.output(path);
        run.results(&timings)?;
        run.finish(&dir.join("manifest.json"))?;
    }
    Ok(())
}
