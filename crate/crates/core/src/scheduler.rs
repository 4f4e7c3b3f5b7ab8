//! Enclave tasking and the multi-step driver.
//!
//! Patches that touch the subdomain boundary (or carry an AMR flag) are
//! urgent and updated as soon as the traversal reaches them. All other
//! patches are enclave tasks: they are parked in an [`EnclaveBuffer`] and
//! shipped as one batch whenever `N` of them have accumulated. Whatever is
//! left at the end of a traversal runs as ordinary single-patch tasks.
//!
//! The "device" is the kernel running with a parallel strategy on a staged
//! copy of the batch; single-patch tasks use the sequential strategy.

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::itspace::ExecutionStrategy;
use crate::kernel::{update_patch_batch, KernelError, KernelVariant};
use crate::mesh::{halo_project, make_patch_grid, MeshError, PatchBatch, PatchSpec};
use crate::pde::{Pde, PdeError};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Classification {
    Urgent,
    Enclave,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatchTask {
    pub patch_id: usize,
    pub classification: Classification,
}

/// Tasks for every patch of a grid, in traversal (x-fastest) order.
///
/// Without periodicity the outer ring of patches is urgent. `amr_flags`,
/// when given, marks additional urgent patches.
pub fn classify(grid_shape: &[usize], periodic: bool, amr_flags: Option<&[bool]>) -> Vec<PatchTask> {
    let n: usize = grid_shape.iter().product();
    let mut g = vec![0; grid_shape.len()];
    (0..n)
        .map(|k| {
            let mut rest = k;
            for (i, &len) in g.iter_mut().zip(grid_shape) {
                *i = rest % len;
                rest /= len;
            }
            let skirt = !periodic && g.iter().zip(grid_shape).any(|(&i, &len)| i == 0 || i + 1 == len);
            let flagged = amr_flags.is_some_and(|f| f.get(k).copied().unwrap_or(false));
            let classification = if skirt || flagged { Classification::Urgent } else { Classification::Enclave };
            PatchTask { patch_id: k, classification }
        })
        .collect()
}

/// Holding area for deferred enclave tasks.
#[derive(Debug, Clone)]
pub struct EnclaveBuffer {
    threshold: usize,
    pending: Vec<PatchTask>,
}

impl EnclaveBuffer {
    /// # Panics
    /// If `threshold` is zero.
    pub fn new(threshold: usize) -> Self {
        assert!(threshold >= 1, "batch threshold must be at least 1");
        Self { threshold, pending: Vec::with_capacity(threshold) }
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn pending(&self) -> &[PatchTask] {
        &self.pending
    }

    /// Queues `task`; returns the full batch once `threshold` tasks are pending.
    pub fn push(&mut self, task: PatchTask) -> Option<Vec<PatchTask>> {
        self.pending.push(task);
        (self.pending.len() == self.threshold).then(|| std::mem::take(&mut self.pending))
    }

    pub fn drain(&mut self) -> Vec<PatchTask> {
        std::mem::take(&mut self.pending)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DispatchKind {
    /// Urgent task run inline during the traversal.
    Urgent,
    /// `N` enclave tasks deployed to the batch executor.
    Batch,
    /// Enclave task left over at the end of a traversal, run as a normal task.
    Leftover,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DispatchEvent {
    pub kind: DispatchKind,
    pub patches: Vec<usize>,
}

/// Dispatch events of one traversal, in order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DispatchTrace {
    pub events: Vec<DispatchEvent>,
}

impl DispatchTrace {
    pub fn count(&self, kind: DispatchKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// Number of times each patch id below `patches` was dispatched.
    pub fn dispatch_counts(&self, patches: usize) -> Vec<usize> {
        let mut counts = vec![0; patches];
        for e in &self.events {
            for &p in &e.patches {
                counts[p] += 1;
            }
        }
        counts
    }
}

#[derive(Debug, Error)]
pub enum DispatchError<E: std::error::Error + 'static> {
    #[error("inline task for patch {patch} failed")]
    Inline {
        patch: usize,
        #[source]
        source: E,
    },
    #[error("batch {patches:?} failed")]
    Batch {
        patches: Vec<usize>,
        #[source]
        source: E,
    },
}

/// Runs one traversal over `tasks`. Urgent tasks go to `inline` immediately;
/// enclave tasks are buffered and handed to `batch` in groups of the buffer
/// threshold. Leftovers go to `inline` after the last batch has returned.
pub fn traverse_and_dispatch<E, I, B>(
    tasks: &[PatchTask],
    buffer: &mut EnclaveBuffer,
    mut inline: I,
    mut batch: B,
) -> Result<DispatchTrace, DispatchError<E>>
where
    E: std::error::Error + 'static,
    I: FnMut(usize) -> Result<(), E>,
    B: FnMut(&[usize]) -> Result<(), E>,
{
    let mut trace = DispatchTrace::default();
    for task in tasks {
        match task.classification {
            Classification::Urgent => {
                inline(task.patch_id).map_err(|source| DispatchError::Inline { patch: task.patch_id, source })?;
                trace.events.push(DispatchEvent { kind: DispatchKind::Urgent, patches: vec![task.patch_id] });
            }
            Classification::Enclave => {
                if let Some(full) = buffer.push(*task) {
                    let ids: Vec<usize> = full.iter().map(|t| t.patch_id).collect();
                    if let Err(source) = batch(&ids) {
                        return Err(DispatchError::Batch { patches: ids, source });
                    }
                    trace.events.push(DispatchEvent { kind: DispatchKind::Batch, patches: ids });
                }
            }
        }
    }
    for task in buffer.drain() {
        inline(task.patch_id).map_err(|source| DispatchError::Inline { patch: task.patch_id, source })?;
        trace.events.push(DispatchEvent { kind: DispatchKind::Leftover, patches: vec![task.patch_id] });
    }
    Ok(trace)
}

/// Scenario and time stepping parameters of [`run_simulation`].
#[derive(Debug, Clone, PartialEq)]
pub struct DriverConfig<T> {
    /// Patches per axis; its length fixes the dimension.
    pub grid_shape: Vec<usize>,
    pub periodic: bool,
    /// Volumes per patch axis.
    pub patch_size: usize,
    /// Lower corner of the domain.
    pub origin: Vec<T>,
    /// Edge length of one patch.
    pub patch_extent: T,
    pub cfl_factor: T,
    pub steps: usize,
    /// Enclave batch threshold `N`.
    pub threshold: usize,
    /// Extra urgent patches, indexed by patch id.
    pub amr_flags: Option<Vec<bool>>,
    /// Shortens the last step so the run stops exactly here.
    pub end_time: Option<T>,
}

impl<T: Real> DriverConfig<T> {
    /// Unit-square (or cube) domain split into `grid_shape` patches.
    pub fn unit_domain(grid_shape: &[usize], patch_size: usize) -> Self {
        let d = grid_shape.len();
        Self {
            grid_shape: grid_shape.to_vec(),
            periodic: true,
            patch_size,
            origin: vec![T::zero(); d],
            patch_extent: T::one() / T::from_count(grid_shape.first().copied().unwrap_or(1).max(1)),
            cfl_factor: T::lit(0.4),
            steps: 10,
            threshold: 4,
            amr_flags: None,
            end_time: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.grid_shape.len()
    }

    pub fn patches(&self) -> usize {
        self.grid_shape.iter().product()
    }

    pub fn validate(&self) -> Result<(), SchedulerError> {
        let bad = |m: &str| Err(SchedulerError::Config(m.to_string()));
        if !(self.cfl_factor > T::zero() && self.cfl_factor <= T::one()) {
            return bad("cfl factor must lie in (0, 1]");
        }
        if self.threshold == 0 {
            return bad("batch threshold must be at least 1");
        }
        if self.grid_shape.contains(&0) {
            return bad("grid shape entries must be positive");
        }
        if let Some(f) = &self.amr_flags {
            if f.len() != self.patches() {
                return bad("amr flags must have one entry per patch");
            }
        }
        if self.end_time.is_some_and(|t| t.is_nan() || t < T::zero()) {
            return bad("end time must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("invalid driver configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("step {step}: {source}")]
    Dispatch {
        step: usize,
        #[source]
        source: DispatchError<KernelError>,
    },
    #[error("step {step}: patch {patch}, volume {volume}: {source}")]
    NonPhysical {
        step: usize,
        patch: usize,
        volume: usize,
        #[source]
        source: PdeError,
    },
    #[error("step {step}: maximum eigenvalue {max_eigenvalue} gives no usable time step")]
    TimeStep { step: usize, max_eigenvalue: f64 },
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Summary of one completed time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord<T> {
    pub step: usize,
    /// Time after the step.
    pub t: T,
    pub dt: T,
    /// Global maximum eigenvalue the step size was derived from.
    pub global_max_eigenvalue: T,
    /// Sum of each unknown over all interior volumes after the step.
    pub totals: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct SimulationResult<T> {
    pub grid_shape: Vec<usize>,
    /// Final state; `q_out` holds the solution, `q_in` the halo-refreshed copy.
    pub batch: PatchBatch<T>,
    pub initial_totals: Vec<T>,
    pub steps: Vec<StepRecord<T>>,
    /// One dispatch trace per step.
    pub traces: Vec<DispatchTrace>,
}

impl<T: Real> SimulationResult<T> {
    pub fn time(&self) -> T {
        self.steps.last().map_or(T::zero(), |r| r.t)
    }

    pub fn final_totals(&self) -> &[T] {
        self.steps.last().map_or(&self.initial_totals, |r| &r.totals)
    }

    /// Writes one row per step:
    /// `step,t,dt,global_max_eigenvalue,total_mass,total_momentum_*,total_energy`.
    pub fn write_csv(&self, path: &Path) -> Result<(), SchedulerError> {
        let io = |source| SchedulerError::Io { path: path.display().to_string(), source };
        let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
        let d = self.grid_shape.len();
        let s = self.initial_totals.len();
        let mut header: Vec<String> =
            ["step", "t", "dt", "global_max_eigenvalue"].iter().map(|h| h.to_string()).collect();
        if s == d + 2 {
            header.push("total_mass".into());
            for a in ["x", "y", "z"].iter().take(d) {
                header.push(format!("total_momentum_{a}"));
            }
            header.push("total_energy".into());
        } else {
            header.extend((0..s).map(|u| format!("total_q{u}")));
        }
        w.write_record(&header).map_err(|e| io(e.into()))?;
        for r in &self.steps {
            let mut row = vec![
                r.step.to_string(),
                format!("{:e}", r.t),
                format!("{:e}", r.dt),
                format!("{:e}", r.global_max_eigenvalue),
            ];
            row.extend(r.totals.iter().map(|v| format!("{v:e}")));
            w.write_record(&row).map_err(|e| io(e.into()))?;
        }
        w.flush().map_err(io)
    }
}

impl<T: Real> fmt::Display for StepRecord<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {} t={:e} dt={:e} lambda={:e}", self.step, self.t, self.dt, self.global_max_eigenvalue)
    }
}

fn interior_totals<T: Real>(batch: &PatchBatch<T>) -> Vec<T> {
    let s = batch.spec().unknowns();
    let mut totals = vec![T::zero(); s];
    for q in batch.q_out.chunks_exact(s) {
        for (t, &v) in totals.iter_mut().zip(q) {
            *t = *t + v;
        }
    }
    totals
}

/// Checks every interior volume and returns the largest directional eigenvalue.
fn scan_eigenvalues<T: Real, P: Pde<T>>(batch: &PatchBatch<T>, pde: &P, step: usize) -> Result<T, SchedulerError> {
    let spec = *batch.spec();
    let d = spec.dim();
    let s = spec.unknowns();
    let mut idx = vec![0; d];
    let mut x = vec![T::zero(); d];
    let mut m = T::zero();
    for k in 0..batch.len() {
        for (v, q) in batch.q_out_patch(k).chunks_exact(s).enumerate() {
            crate::mesh::unravel(v, spec.size(), &mut idx);
            idx.iter_mut().for_each(|i| *i += spec.halo());
            batch.volume_centre(k, &idx, &mut x);
            for dir in 0..d {
                let l = pde
                    .max_abs_eigenvalue(q, &x, batch.t[k], dir)
                    .map_err(|source| SchedulerError::NonPhysical { step, patch: k, volume: v, source })?;
                m = m.max(l);
            }
        }
    }
    Ok(m)
}

/// Samples `initial` onto a patch grid and advances it `config.steps` times
/// with a global CFL step `cfl * dx / lambda_max`.
///
/// `lambda_max` is the largest per-patch maximum eigenvalue reported by the
/// kernel in the previous step; the first step uses a scan of the initial
/// data. After each step every interior state is validated and the halos
/// are refreshed.
pub fn run_simulation<T, P, F>(
    config: &DriverConfig<T>,
    pde: &P,
    variant: &KernelVariant,
    initial: F,
) -> Result<SimulationResult<T>, SchedulerError>
where
    T: Real,
    P: Pde<T>,
    F: Fn(&[T], &mut [T]),
{
    config.validate()?;
    let spec = PatchSpec::new(config.dim(), config.patch_size, pde.unknowns())?;
    let shape = &config.grid_shape;
    let mut grid = make_patch_grid(spec, shape, &config.origin, config.patch_extent)?;
    for k in 0..grid.len() {
        grid.fill_interior(k, &initial);
    }
    halo_project(&mut grid, shape, config.periodic)?;

    let dx = grid.dx(0);
    let tasks = classify(shape, config.periodic, config.amr_flags.as_deref());
    let mut buffer = EnclaveBuffer::new(config.threshold);
    let inline_variant = KernelVariant { strategy: ExecutionStrategy::SEQUENTIAL, ..*variant };
    let batch_variant = KernelVariant { strategy: ExecutionStrategy::PARALLEL, ..*variant };

    let initial_totals = interior_totals(&grid);
    let mut lambda = scan_eigenvalues(&grid, pde, 0)?;
    let mut t = T::zero();
    let mut records = Vec::with_capacity(config.steps);
    let mut traces = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        if let Some(end) = config.end_time {
            if t >= end {
                break;
            }
        }
        if !(lambda > T::zero() && lambda.is_finite()) {
            return Err(SchedulerError::TimeStep { step, max_eigenvalue: lambda.to_f64().unwrap_or(f64::NAN) });
        }
        let mut dt = config.cfl_factor * dx / lambda;
        if let Some(end) = config.end_time {
            if t + dt > end {
                dt = end - t;
            }
        }
        grid.t.iter_mut().for_each(|v| *v = t);
        grid.dt.iter_mut().for_each(|v| *v = dt);

        // q_in is read-only during the traversal; staged copies write back q_out only.
        let cell = std::cell::RefCell::new(&mut grid);
        let run = |ids: &[usize], v: &KernelVariant| -> Result<(), KernelError> {
            let mut staged = cell.borrow().gather(ids);
            update_patch_batch(&mut staged, pde, v)?;
            cell.borrow_mut().scatter_outputs(ids, &staged);
            Ok(())
        };
        let trace = traverse_and_dispatch(
            &tasks,
            &mut buffer,
            |id| run(&[id], &inline_variant),
            |ids| run(ids, &batch_variant),
        )
        .map_err(|source| SchedulerError::Dispatch { step, source })?;

        let used = lambda;
        lambda = grid.max_eigenvalue.iter().fold(T::zero(), |m, &l| m.max(l));
        scan_eigenvalues(&grid, pde, step + 1)?;
        halo_project(&mut grid, shape, config.periodic)?;
        t = t + dt;
        records.push(StepRecord { step, t, dt, global_max_eigenvalue: used, totals: interior_totals(&grid) });
        traces.push(trace);
    }

    grid.t.iter_mut().for_each(|v| *v = t);
    Ok(SimulationResult { grid_shape: shape.clone(), batch: grid, initial_totals, steps: records, traces })
}
