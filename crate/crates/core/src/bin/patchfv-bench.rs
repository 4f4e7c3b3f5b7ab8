//! Benchmark driver: time per Finite Volume update for kernel variants,
//! temporary layouts, execution strategies and batch sizes.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use patchfv::bench::{emit_csv, emit_plotdata, monotonicity_inversions, run_benchmark, BenchConfig, BenchError};
use patchfv::{ExecutionStrategy, KernelVariant, LayoutKind, Ordering};

#[derive(Debug, Parser)]
#[command(
    name = "patchfv-bench",
    about = "Time batched Rusanov Finite Volume kernels on random Euler patches",
    after_help = "The worker count of parallel variants follows RAYON_NUM_THREADS (default: all cores)."
)]
struct Args {
    /// Spatial dimension.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(2..=3))]
    dim: u8,
    /// Volumes per patch axis.
    #[arg(long = "patch-size", default_value_t = 17)]
    patch_size: usize,
    /// Unknowns per volume (default: dim + 2).
    #[arg(long)]
    unknowns: Option<usize>,
    /// Comma-separated batch sizes N.
    #[arg(long = "batch-sizes", value_delimiter = ',', default_value = "1,2,4,8,16,32")]
    batch_sizes: Vec<usize>,
    /// Loop orderings: patchwise, batched.
    #[arg(long, value_delimiter = ',', default_value = "patchwise,batched")]
    variants: Vec<String>,
    /// Temporary layouts: aos, soa, aosoa.
    #[arg(long, value_delimiter = ',', default_value = "aos,soa,aosoa")]
    layouts: Vec<String>,
    /// Execution strategies: seq, par.
    #[arg(long, value_delimiter = ',', default_value = "par")]
    strategies: Vec<String>,
    /// Timed repetitions per measurement.
    #[arg(long, default_value_t = 20)]
    reps: usize,
    /// Untimed warmup repetitions.
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// CSV output file.
    #[arg(long, default_value = "bench.csv")]
    out: PathBuf,
    /// Directory for per-series plot data.
    #[arg(long = "plot-out")]
    plot_out: Option<PathBuf>,
    /// Corrupt the output of one variant (e.g. batched_soa_par).
    #[arg(long = "inject-fault", hide = true)]
    inject_fault: Option<String>,
}

fn parse_list<T>(items: &[String], what: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Vec<T>, String> {
    items.iter().map(|s| parse(s).ok_or_else(|| format!("unknown {what} '{s}'"))).collect()
}

fn config(args: &Args) -> Result<BenchConfig, String> {
    let orderings = parse_list(&args.variants, "variant", Ordering::from_label)?;
    let layouts = parse_list(&args.layouts, "layout", LayoutKind::from_label)?;
    let strategies = parse_list(&args.strategies, "strategy", ExecutionStrategy::from_label)?;
    let mut variants = Vec::new();
    for &o in &orderings {
        for &l in &layouts {
            for &s in &strategies {
                variants.push(KernelVariant::new(o, l, s));
            }
        }
    }
    let dim = args.dim as usize;
    Ok(BenchConfig {
        dim,
        patch_size: args.patch_size,
        unknowns: args.unknowns.unwrap_or(dim + 2),
        batch_sizes: args.batch_sizes.clone(),
        variants,
        repetitions: args.reps,
        warmup_repetitions: args.warmup,
        seed: args.seed,
        inject_fault: args.inject_fault.clone(),
    })
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = match config(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let records = match run_benchmark(&cfg) {
        Ok(r) => r,
        Err(e @ BenchError::ChecksumMismatch { .. }) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    for r in &records {
        println!(
            "{:>9} {:>5} {:>3} N={:<4} {:.3e} s/update",
            r.variant, r.layout, r.strategy, r.n_patches, r.time_per_volume_update_s
        );
    }
    for (label, lo, hi) in monotonicity_inversions(&records) {
        eprintln!("warning: {label}: wall time drops by more than 10% from N={lo} to N={hi}");
    }
    if let Err(e) = emit_csv(&records, &args.out) {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }
    if let Some(dir) = &args.plot_out {
        if let Err(e) = emit_plotdata(&records, dir) {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    ExitCode::SUCCESS
}
