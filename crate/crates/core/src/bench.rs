//! Throughput benchmark: time per Finite Volume update across kernel
//! variants and batch sizes.
//!
//! For every batch size `N` a random admissible Euler batch is drawn from the
//! seed, then each variant is warmed up and timed. A timed repetition covers
//! staging the batch (a copy of the prepared input), allocating the kernel
//! temporaries and the update itself. Field generation and output I/O are not
//! timed. Checksums (sum of `q_out`) must agree bitwise across all variants
//! of an `N` before any record is emitted.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::itspace::ExecutionStrategy;
use crate::kernel::{update_patch_batch, KernelError, KernelVariant, Ordering};
use crate::mesh::{halo_project, make_patch_grid, LayoutKind, MeshError, PatchBatch, PatchSpec};
use crate::pde::{euler_conserved, euler_max_eigenvalue, Euler, EulerParameters};

pub const CSV_HEADER: [&str; 7] =
    ["variant", "layout", "strategy", "n_patches", "wall_time_s", "time_per_volume_update_s", "checksum"];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("checksum mismatch for N = {n}: {reference} gives {expected:e}, {label} gives {got:e}")]
    ChecksumMismatch { n: usize, reference: String, expected: f64, label: String, got: f64 },
    #[error("no records to write")]
    NoRecords,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl BenchError {
    fn io(path: &Path, source: impl Into<std::io::Error>) -> Self {
        BenchError::Io { path: path.to_path_buf(), source: source.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub dim: usize,
    pub patch_size: usize,
    pub unknowns: usize,
    pub batch_sizes: Vec<usize>,
    pub variants: Vec<KernelVariant>,
    pub repetitions: usize,
    pub warmup_repetitions: usize,
    pub seed: u64,
    /// Perturbs the output of every variant with this `ordering_layout_strategy`
    /// label. Exists to prove the checksum guard works.
    pub inject_fault: Option<String>,
}

impl Default for BenchConfig {
    /// The 2d, `p = 17` sweep over `N = 1..32`.
    fn default() -> Self {
        let mut variants = Vec::new();
        for o in Ordering::ALL {
            for l in LayoutKind::ALL {
                variants.push(KernelVariant::new(o, l, ExecutionStrategy::PARALLEL));
            }
        }
        Self {
            dim: 2,
            patch_size: 17,
            unknowns: 4,
            batch_sizes: vec![1, 2, 4, 8, 16, 32],
            variants,
            repetitions: 20,
            warmup_repetitions: 3,
            seed: 42,
            inject_fault: None,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.dim != 2 && self.dim != 3 {
            return bad(format!("dimension must be 2 or 3, got {}", self.dim));
        }
        if self.unknowns != self.dim + 2 {
            return bad(format!("Euler in {}d needs {} unknowns, got {}", self.dim, self.dim + 2, self.unknowns));
        }
        if self.repetitions == 0 {
            return bad("at least one timed repetition is required".into());
        }
        if self.batch_sizes.is_empty() || self.batch_sizes.contains(&0) {
            return bad("batch sizes must be a non-empty list of positive counts".into());
        }
        if self.variants.is_empty() {
            return bad("no kernel variants selected".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub variant: String,
    pub layout: String,
    pub strategy: String,
    pub n_patches: usize,
    /// Median wall time of one kernel invocation, in seconds.
    pub wall_time_s: f64,
    /// `wall_time_s / (N p^d)`.
    pub time_per_volume_update_s: f64,
    pub checksum: f64,
}

impl BenchRecord {
    /// `ordering_layout_strategy`.
    pub fn series_label(&self) -> String {
        format!("{}_{}_{}", self.variant, self.layout, self.strategy)
    }
}

pub fn variant_label(v: &KernelVariant) -> String {
    format!("{}_{}_{}", v.ordering.label(), v.layout.label(), v.strategy.label())
}

/// Random admissible Euler batch of `n` patches in a periodic row.
///
/// Density and pressure are drawn from `[0.5, 2]`, velocity components from
/// `[-1, 1]`. Every patch gets the CFL step `0.4 dx / lambda_max` of the whole
/// batch.
pub fn random_euler_batch(dim: usize, patch_size: usize, n: usize, seed: u64) -> Result<PatchBatch<f64>, BenchError> {
    let spec = PatchSpec::new(dim, patch_size, dim + 2)?;
    let mut shape = vec![1; dim];
    shape[0] = n;
    let mut batch = make_patch_grid(spec, &shape, &vec![0.0; dim], 1.0)?;
    let params = EulerParameters::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(n as u64);
    let mut vel = vec![0.0; dim];
    for k in 0..n {
        batch.fill_interior(k, |_, q| {
            let rho = rng.gen_range(0.5..=2.0);
            vel.iter_mut().for_each(|u| *u = rng.gen_range(-1.0..=1.0));
            let p = rng.gen_range(0.5..=2.0);
            q.copy_from_slice(&euler_conserved(rho, &vel, p, &params));
        });
    }
    halo_project(&mut batch, &shape, true)?;
    let mut lambda: f64 = 0.0;
    for q in batch.q_out.chunks_exact(dim + 2) {
        for dir in 0..dim {
            lambda = lambda.max(euler_max_eigenvalue(q, dir, &params).expect("admissible by construction"));
        }
    }
    let dt = 0.4 * batch.dx(0) / lambda;
    batch.dt.iter_mut().for_each(|v| *v = dt);
    Ok(batch)
}

fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    }
}

/// Times every `(variant, N)` pair. Records come out grouped by `N` in the
/// order of `config.batch_sizes`, variants in configured order.
pub fn run_benchmark(config: &BenchConfig) -> Result<Vec<BenchRecord>, BenchError> {
    config.validate()?;
    let pde = Euler::new(config.dim, EulerParameters::default());
    let volumes = config.patch_size.pow(config.dim as u32);
    let mut records = Vec::with_capacity(config.batch_sizes.len() * config.variants.len());

    for &n in &config.batch_sizes {
        let prepared = random_euler_batch(config.dim, config.patch_size, n, config.seed)?;
        let mut group: Vec<BenchRecord> = Vec::with_capacity(config.variants.len());
        for variant in &config.variants {
            let label = variant_label(variant);
            let faulty = config.inject_fault.as_deref() == Some(label.as_str());
            let run_once = || -> Result<(f64, PatchBatch<f64>), BenchError> {
                let start = Instant::now();
                let mut staged = prepared.clone();
                update_patch_batch(&mut staged, &pde, variant)?;
                let elapsed = start.elapsed().as_secs_f64();
                if faulty {
                    staged.q_out[0] += 1e-3;
                }
                Ok((elapsed, staged))
            };
            for _ in 0..config.warmup_repetitions {
                run_once()?;
            }
            let mut times = Vec::with_capacity(config.repetitions);
            let mut last = None;
            for _ in 0..config.repetitions {
                let (t, out) = run_once()?;
                times.push(t);
                last = Some(out);
            }
            let out = last.expect("at least one repetition");
            let checksum: f64 = out.q_out.iter().sum();
            let wall = median(&mut times);
            group.push(BenchRecord {
                variant: variant.ordering.label().to_string(),
                layout: variant.layout.label().to_string(),
                strategy: variant.strategy.label().to_string(),
                n_patches: n,
                wall_time_s: wall,
                time_per_volume_update_s: wall / (n * volumes) as f64,
                checksum,
            });
        }
        let reference = &group[0];
        for r in &group[1..] {
            if r.checksum.to_bits() != reference.checksum.to_bits() {
                return Err(BenchError::ChecksumMismatch {
                    n,
                    reference: reference.series_label(),
                    expected: reference.checksum,
                    label: r.series_label(),
                    got: r.checksum,
                });
            }
        }
        records.extend(group);
    }
    Ok(records)
}

/// Series whose median wall time drops by more than 10% when `N` grows.
/// Timing noise makes occasional entries expected; many point to a problem.
pub fn monotonicity_inversions(records: &[BenchRecord]) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    for (label, points) in series(records) {
        for w in points.windows(2) {
            if w[1].1 < 0.9 * w[0].1 {
                out.push((label.clone(), w[0].0, w[1].0));
            }
        }
    }
    out
}

/// `(N, wall_time_s)` per series label, sorted by `N`.
fn series(records: &[BenchRecord]) -> BTreeMap<String, Vec<(usize, f64)>> {
    let mut map: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    for r in records {
        map.entry(r.series_label()).or_default().push((r.n_patches, r.wall_time_s));
    }
    for v in map.values_mut() {
        v.sort_by_key(|p| p.0);
    }
    map
}

fn fmt_real(x: f64) -> String {
    format!("{x:e}")
}

/// Writes all records as CSV with [`CSV_HEADER`].
pub fn emit_csv(records: &[BenchRecord], path: &Path) -> Result<(), BenchError> {
    if records.is_empty() {
        return Err(BenchError::NoRecords);
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| BenchError::io(path, e))?;
    w.write_record(CSV_HEADER).map_err(|e| BenchError::io(path, e))?;
    for r in records {
        w.write_record([
            r.variant.clone(),
            r.layout.clone(),
            r.strategy.clone(),
            r.n_patches.to_string(),
            fmt_real(r.wall_time_s),
            fmt_real(r.time_per_volume_update_s),
            fmt_real(r.checksum),
        ])
        .map_err(|e| BenchError::io(path, e))?;
    }
    w.flush().map_err(|e| BenchError::io(path, e))
}

/// Parses a file written by [`emit_csv`].
pub fn read_csv(path: &Path) -> Result<Vec<BenchRecord>, BenchError> {
    let parse_err = |message: String| BenchError::Parse { path: path.to_path_buf(), message };
    let mut r = csv::Reader::from_path(path).map_err(|e| BenchError::io(path, e))?;
    let header = r.headers().map_err(|e| parse_err(e.to_string()))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(parse_err(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row.map_err(|e| parse_err(e.to_string()))?;
        let num = |i: usize| -> Result<f64, BenchError> {
            row[i].parse().map_err(|e| parse_err(format!("row {}: column {}: {e}", line + 1, CSV_HEADER[i])))
        };
        out.push(BenchRecord {
            variant: row[0].to_string(),
            layout: row[1].to_string(),
            strategy: row[2].to_string(),
            n_patches: row[3].parse().map_err(|e| parse_err(format!("row {}: n_patches: {e}", line + 1)))?,
            wall_time_s: num(4)?,
            time_per_volume_update_s: num(5)?,
            checksum: num(6)?,
        });
    }
    Ok(out)
}

/// Writes one whitespace-separated series file `<label>.dat` per
/// `(variant, layout, strategy)` into directory `dir`, rows
/// `n_patches time_per_volume_update_s` in ascending `N`.
pub fn emit_plotdata(records: &[BenchRecord], dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    if records.is_empty() {
        return Err(BenchError::NoRecords);
    }
    std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    let mut grouped: BTreeMap<String, Vec<&BenchRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry(r.series_label()).or_default().push(r);
    }
    let mut written = Vec::with_capacity(grouped.len());
    for (label, mut points) in grouped {
        points.sort_by_key(|r| r.n_patches);
        let path = dir.join(format!("{label}.dat"));
        let mut text = String::from("# n_patches time_per_volume_update_s\n");
        for r in points {
            text.push_str(&format!("{} {}\n", r.n_patches, fmt_real(r.time_per_volume_update_s)));
        }
        std::fs::write(&path, text).map_err(|e| BenchError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
