//! Rusanov Finite Volume update of a [`PatchBatch`].
//!
//! One update computes, per interior volume `i` and direction `n`,
//!
//! ```text
//! Q_i^{n+1} = Q_i^n - dt/dx (F_{i+1/2} - F_{i-1/2})
//! F_{i-1/2} = 1/2 [ f(Q_{i-1}) + f(Q_i) - a_{i-1/2} (Q_i - Q_{i-1}) ]
//! a_{i-1/2} = max(lambda(Q_{i-1}), lambda(Q_i))
//! ```
//!
//! split into the steps below. Flux and eigenvalue temporaries are evaluated
//! once per volume; every face value is then formed redundantly by both
//! adjacent volumes from identical loads, so the two sides see bitwise equal
//! face contributions.
//!
//! | step | work                                   | space              |
//! |------|----------------------------------------|--------------------|
//! | 1    | copy `Q^n` into `QOut`                 | interior volumes   |
//! | 2    | directional max eigenvalue per volume  | haloed volumes     |
//! | 3-4  | face damping `a (Q_R - Q_L) / 2`       | interior volumes   |
//! | 5    | directional flux per volume            | haloed volumes     |
//! | 6-7  | centred face flux average, divergence  | interior volumes   |
//! | 8-9  | non-conservative product               | interior volumes   |
//! | 10   | per-patch maximum eigenvalue           | patches            |
//!
//! The batched ordering launches one traversal per row over all patches; the
//! patch-wise ordering runs all rows inside one traversal over patches. Each
//! volume accumulates its contributions in the same order (damping, then flux,
//! then non-conservative product; x before y before z) in every variant, so
//! results do not depend on ordering, layout or strategy.
//!
//! Edge and corner halo volumes are never read.

use thiserror::Error;

use crate::itspace::{cartesian, for_each, DisjointSlice, ExecutionStrategy, IndexSpace};
use crate::mesh::{unravel, LayoutEnumerator, LayoutKind, PatchBatch, PatchSpec, DEFAULT_AOSOA_BLOCK, HALO};
use crate::pde::{Pde, PdeError};
use crate::scalar::Real;

/// Largest number of unknowns the loop bodies keep on the stack.
pub const MAX_UNKNOWNS: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("patch {patch}, volume {volume:?} (haloed coordinates): {source}")]
    NonPhysical {
        patch: usize,
        volume: Vec<usize>,
        #[source]
        source: PdeError,
    },
    #[error("PDE has {pde} unknowns but the batch stores {batch}")]
    Unknowns { pde: usize, batch: usize },
    #[error("at most {MAX_UNKNOWNS} unknowns are supported, got {0}")]
    TooManyUnknowns(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ordering {
    /// Patch index outermost; all steps of a patch run inside one iteration.
    PatchWise,
    /// One traversal over all patches and volumes per step.
    Batched,
}

impl Ordering {
    pub const ALL: [Ordering; 2] = [Ordering::PatchWise, Ordering::Batched];

    pub fn label(&self) -> &'static str {
        match self {
            Ordering::PatchWise => "patchwise",
            Ordering::Batched => "batched",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "patchwise" | "patch-wise" => Some(Ordering::PatchWise),
            "batched" => Some(Ordering::Batched),
            _ => None,
        }
    }
}

/// Loop ordering, temporary layout and execution strategy of one kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KernelVariant {
    pub ordering: Ordering,
    pub layout: LayoutKind,
    pub strategy: ExecutionStrategy,
    pub aosoa_block: usize,
}

impl KernelVariant {
    pub fn new(ordering: Ordering, layout: LayoutKind, strategy: ExecutionStrategy) -> Self {
        Self { ordering, layout, strategy, aosoa_block: DEFAULT_AOSOA_BLOCK }
    }

    /// Every ordering x layout x strategy combination.
    pub fn all() -> Vec<Self> {
        let mut v = Vec::new();
        for o in Ordering::ALL {
            for l in LayoutKind::ALL {
                for s in [ExecutionStrategy::SEQUENTIAL, ExecutionStrategy::PARALLEL] {
                    v.push(Self::new(o, l, s));
                }
            }
        }
        v
    }
}

impl Default for KernelVariant {
    fn default() -> Self {
        Self::new(Ordering::Batched, LayoutKind::Aos, ExecutionStrategy::PARALLEL)
    }
}

/// Per-volume flux and eigenvalue values over the haloed volume range.
///
/// Fluxes have `d * s` components per volume (`direction * s + unknown`),
/// eigenvalues `d`.
#[derive(Debug, Clone)]
pub struct KernelTemporaries<T> {
    pub flux: Vec<T>,
    pub flux_layout: LayoutEnumerator,
    pub eigenvalues: Vec<T>,
    pub eigen_layout: LayoutEnumerator,
}

impl<T: Real> KernelTemporaries<T> {
    pub fn new(spec: &PatchSpec, patches: usize, layout: LayoutKind, block: usize) -> Self {
        let d = spec.dim();
        let e = spec.haloed_size();
        let flux_layout =
            LayoutEnumerator::with_block(layout, d, e, d * spec.unknowns(), patches, block).expect("valid patch spec");
        let eigen_layout = LayoutEnumerator::with_block(layout, d, e, d, patches, block).expect("valid patch spec");
        Self {
            flux: vec![T::zero(); flux_layout.len()],
            flux_layout,
            eigenvalues: vec![T::zero(); eigen_layout.len()],
            eigen_layout,
        }
    }

    pub fn for_variant(spec: &PatchSpec, patches: usize, variant: &KernelVariant) -> Self {
        Self::new(spec, patches, variant.layout, variant.aosoa_block)
    }

    /// Whether these temporaries can serve a batch of `patches` patches of `spec`.
    pub fn fits(&self, spec: &PatchSpec, patches: usize, variant: &KernelVariant) -> bool {
        let want = Self::layouts(spec, patches, variant);
        want == (self.flux_layout, self.eigen_layout)
    }

    fn layouts(spec: &PatchSpec, patches: usize, v: &KernelVariant) -> (LayoutEnumerator, LayoutEnumerator) {
        let d = spec.dim();
        let e = spec.haloed_size();
        let s = spec.unknowns();
        (
            LayoutEnumerator::with_block(v.layout, d, e, d * s, patches, v.aosoa_block).expect("valid"),
            LayoutEnumerator::with_block(v.layout, d, e, d, patches, v.aosoa_block).expect("valid"),
        )
    }
}

/// Step groups of one update, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelStep {
    /// Step 1.
    CopySolution,
    /// Step 2.
    Eigenvalues,
    /// Steps 3-4.
    EigenvalueDamping,
    /// Step 5.
    Fluxes,
    /// Steps 6-7.
    FluxDivergence,
    /// Steps 8-9.
    NonConservativeProduct,
    /// Step 10.
    ReduceEigenvalue,
}

impl KernelStep {
    pub const ALL: [KernelStep; 7] = [
        KernelStep::CopySolution,
        KernelStep::Eigenvalues,
        KernelStep::EigenvalueDamping,
        KernelStep::Fluxes,
        KernelStep::FluxDivergence,
        KernelStep::NonConservativeProduct,
        KernelStep::ReduceEigenvalue,
    ];

    fn over_haloed(self) -> bool {
        matches!(self, KernelStep::Eigenvalues | KernelStep::Fluxes)
    }
}

/// Advances every patch of `batch` by one step of size `batch.dt[patch]`,
/// writing `q_out` and `max_eigenvalue`. Temporaries are allocated here.
pub fn update_patch_batch<T: Real, P: Pde<T>>(
    batch: &mut PatchBatch<T>,
    pde: &P,
    variant: &KernelVariant,
) -> Result<(), KernelError> {
    if batch.is_empty() {
        return Ok(());
    }
    let mut temps = KernelTemporaries::for_variant(batch.spec(), batch.len(), variant);
    update_patch_batch_with(batch, pde, variant, &mut temps)
}

/// As [`update_patch_batch`] but reuses `temps`, reallocating only when they
/// do not fit the batch.
pub fn update_patch_batch_with<T: Real, P: Pde<T>>(
    batch: &mut PatchBatch<T>,
    pde: &P,
    variant: &KernelVariant,
    temps: &mut KernelTemporaries<T>,
) -> Result<(), KernelError> {
    if batch.is_empty() {
        return Ok(());
    }
    check_pde(batch.spec(), pde)?;
    if !temps.fits(batch.spec(), batch.len(), variant) {
        *temps = KernelTemporaries::for_variant(batch.spec(), batch.len(), variant);
    }
    match variant.ordering {
        Ordering::Batched => {
            for step in KernelStep::ALL {
                apply_step(batch, pde, temps, step, variant.strategy)?;
            }
            Ok(())
        }
        Ordering::PatchWise => {
            let sweep = Sweep::new(batch, pde, temps);
            let patches = cartesian(std::slice::from_ref(&(0..sweep.patches))).expect("non-empty range");
            for_each(&patches, variant.strategy, |t| sweep.whole_patch(t[0]))
        }
    }
}

/// Runs one step group over the whole batch. Used by the batched ordering
/// and handy for inspecting intermediate states.
pub fn apply_step<T: Real, P: Pde<T>>(
    batch: &mut PatchBatch<T>,
    pde: &P,
    temps: &mut KernelTemporaries<T>,
    step: KernelStep,
    strategy: ExecutionStrategy,
) -> Result<(), KernelError> {
    if batch.is_empty() {
        return Ok(());
    }
    check_pde(batch.spec(), pde)?;
    assert_eq!(temps.flux_layout.patches(), batch.len(), "temporaries sized for another batch");
    let spec = *batch.spec();
    let sweep = Sweep::new(batch, pde, temps);
    if step == KernelStep::NonConservativeProduct && !pde.has_non_conservative_product() {
        return Ok(());
    }
    if step == KernelStep::ReduceEigenvalue {
        let patches = cartesian(std::slice::from_ref(&(0..sweep.patches))).expect("non-empty range");
        return for_each(&patches, strategy, |t| {
            sweep.reduce_eigenvalue(t[0]);
            Ok(())
        });
    }
    let space = volume_space(&spec, sweep.patches, step.over_haloed());
    for_each(&space, strategy, |t| sweep.step(step, t[1], t[0]))
}

fn check_pde<T: Real, P: Pde<T>>(spec: &PatchSpec, pde: &P) -> Result<(), KernelError> {
    if pde.unknowns() != spec.unknowns() {
        return Err(KernelError::Unknowns { pde: pde.unknowns(), batch: spec.unknowns() });
    }
    if spec.unknowns() > MAX_UNKNOWNS {
        return Err(KernelError::TooManyUnknowns(spec.unknowns()));
    }
    Ok(())
}

/// `(volume, patch)` with the linear volume index fastest.
fn volume_space(spec: &PatchSpec, patches: usize, haloed: bool) -> IndexSpace {
    let volumes = if haloed { spec.haloed_volumes() } else { spec.interior_volumes() };
    cartesian(&[0..volumes, 0..patches]).expect("valid ranges")
}

/// Views of one batch and its temporaries shared by all loop bodies.
///
/// Every body writes only entries owned by its own `(patch, volume)` tuple
/// and reads neighbours only from arrays no body of the same traversal
/// writes.
struct Sweep<'a, T, P> {
    spec: PatchSpec,
    patches: usize,
    pde: &'a P,
    q_in: &'a [T],
    q_out: DisjointSlice<'a, T>,
    max_eigenvalue: DisjointSlice<'a, T>,
    flux: DisjointSlice<'a, T>,
    flux_layout: LayoutEnumerator,
    eig: DisjointSlice<'a, T>,
    eig_layout: LayoutEnumerator,
    cell_centre: &'a [T],
    cell_size: &'a [T],
    t: &'a [T],
    dt: &'a [T],
    /// Haloed linear-index stride per axis.
    stride: [usize; 3],
}

impl<'a, T: Real, P: Pde<T>> Sweep<'a, T, P> {
    fn new(batch: &'a mut PatchBatch<T>, pde: &'a P, temps: &'a mut KernelTemporaries<T>) -> Self {
        let spec = *batch.spec();
        let patches = batch.len();
        let e = spec.haloed_size();
        Self {
            spec,
            patches,
            pde,
            q_in: &batch.q_in,
            q_out: DisjointSlice::new(&mut batch.q_out),
            max_eigenvalue: DisjointSlice::new(&mut batch.max_eigenvalue),
            flux: DisjointSlice::new(&mut temps.flux),
            flux_layout: temps.flux_layout,
            eig: DisjointSlice::new(&mut temps.eigenvalues),
            eig_layout: temps.eigen_layout,
            cell_centre: &batch.cell_centre,
            cell_size: &batch.cell_size,
            t: &batch.t,
            dt: &batch.dt,
            stride: [1, e, e * e],
        }
    }

    fn step(&self, step: KernelStep, patch: usize, volume: usize) -> Result<(), KernelError> {
        match step {
            KernelStep::CopySolution => self.copy_solution(patch, volume),
            KernelStep::Eigenvalues => self.eigenvalues(patch, volume)?,
            KernelStep::EigenvalueDamping => self.eigenvalue_damping(patch, volume),
            KernelStep::Fluxes => self.fluxes(patch, volume)?,
            KernelStep::FluxDivergence => self.flux_divergence(patch, volume),
            KernelStep::NonConservativeProduct => self.non_conservative_product(patch, volume),
            KernelStep::ReduceEigenvalue => self.reduce_eigenvalue(patch),
        }
        Ok(())
    }

    fn whole_patch(&self, patch: usize) -> Result<(), KernelError> {
        let interior = self.spec.interior_volumes();
        let haloed = self.spec.haloed_volumes();
        for v in 0..interior {
            self.copy_solution(patch, v);
        }
        for h in 0..haloed {
            self.eigenvalues(patch, h)?;
        }
        for v in 0..interior {
            self.eigenvalue_damping(patch, v);
        }
        for h in 0..haloed {
            self.fluxes(patch, h)?;
        }
        for v in 0..interior {
            self.flux_divergence(patch, v);
        }
        if self.pde.has_non_conservative_product() {
            for v in 0..interior {
                self.non_conservative_product(patch, v);
            }
        }
        self.reduce_eigenvalue(patch);
        Ok(())
    }

    #[inline(always)]
    fn q_in_at(&self, patch: usize, haloed: usize) -> &[T] {
        let s = self.spec.unknowns();
        let base = patch * self.spec.q_in_len() + haloed * s;
        &self.q_in[base..base + s]
    }

    #[inline(always)]
    fn out_offset(&self, patch: usize, volume: usize) -> usize {
        patch * self.spec.q_out_len() + volume * self.spec.unknowns()
    }

    #[inline(always)]
    fn dt_over_dx(&self, patch: usize) -> T {
        let dx = self.cell_size[patch * self.spec.dim()] / T::from_count(self.spec.size());
        self.dt[patch] / dx
    }

    fn haloed_index(&self, haloed: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        unravel(haloed, self.spec.haloed_size(), &mut idx[..self.spec.dim()]);
        idx
    }

    /// Volume centre; `None` for edge and corner halo volumes.
    fn face_reachable_centre(&self, patch: usize, haloed: usize) -> Option<[T; 3]> {
        let d = self.spec.dim();
        let e = self.spec.haloed_size();
        let idx = self.haloed_index(haloed);
        if idx[..d].iter().filter(|&&i| i < HALO || i >= e - HALO).count() > 1 {
            return None;
        }
        let dx = self.cell_size[patch * d] / T::from_count(self.spec.size());
        let mut x = [T::zero(); 3];
        for a in 0..d {
            let i = T::from_count(idx[a]) - T::from_count(HALO) + T::half();
            x[a] = self.cell_centre[patch * d + a] - self.cell_size[patch * d + a] * T::half() + i * dx;
        }
        Some(x)
    }

    fn non_physical(&self, patch: usize, haloed: usize, source: PdeError) -> KernelError {
        let idx = self.haloed_index(haloed);
        KernelError::NonPhysical { patch, volume: idx[..self.spec.dim()].to_vec(), source }
    }

    fn copy_solution(&self, patch: usize, volume: usize) {
        let h = self.spec.interior_to_haloed(volume);
        let q = self.q_in_at(patch, h);
        let o = self.out_offset(patch, volume);
        for (u, &v) in q.iter().enumerate() {
            unsafe { self.q_out.set(o + u, v) };
        }
    }

    fn eigenvalues(&self, patch: usize, haloed: usize) -> Result<(), KernelError> {
        let Some(x) = self.face_reachable_centre(patch, haloed) else {
            return Ok(());
        };
        let d = self.spec.dim();
        let q = self.q_in_at(patch, haloed);
        for dir in 0..d {
            let l = self
                .pde
                .max_abs_eigenvalue(q, &x[..d], self.t[patch], dir)
                .map_err(|e| self.non_physical(patch, haloed, e))?;
            unsafe { self.eig.set(self.eig_layout.offset(patch, haloed, dir), l) };
        }
        Ok(())
    }

    fn eigenvalue_damping(&self, patch: usize, volume: usize) {
        let s = self.spec.unknowns();
        let h = self.spec.interior_to_haloed(volume);
        let o = self.out_offset(patch, volume);
        let scale = self.dt_over_dx(patch);
        let half = T::half();
        let q = self.q_in_at(patch, h);
        for dir in 0..self.spec.dim() {
            let (hm, hp) = (h - self.stride[dir], h + self.stride[dir]);
            let (lm, l, lp) = unsafe {
                (
                    self.eig.get(self.eig_layout.offset(patch, hm, dir)),
                    self.eig.get(self.eig_layout.offset(patch, h, dir)),
                    self.eig.get(self.eig_layout.offset(patch, hp, dir)),
                )
            };
            let am = lm.max(l);
            let ap = l.max(lp);
            let qm = self.q_in_at(patch, hm);
            let qp = self.q_in_at(patch, hp);
            for u in 0..s {
                let left = half * am * (q[u] - qm[u]);
                let right = half * ap * (qp[u] - q[u]);
                unsafe {
                    let cur = self.q_out.get(o + u);
                    self.q_out.set(o + u, cur + scale * (right - left));
                }
            }
        }
    }

    fn fluxes(&self, patch: usize, haloed: usize) -> Result<(), KernelError> {
        let Some(x) = self.face_reachable_centre(patch, haloed) else {
            return Ok(());
        };
        let d = self.spec.dim();
        let s = self.spec.unknowns();
        let q = self.q_in_at(patch, haloed);
        let mut f = [T::zero(); MAX_UNKNOWNS];
        for dir in 0..d {
            self.pde
                .flux(q, &x[..d], self.t[patch], dir, &mut f[..s])
                .map_err(|e| self.non_physical(patch, haloed, e))?;
            for (u, &v) in f[..s].iter().enumerate() {
                unsafe { self.flux.set(self.flux_layout.offset(patch, haloed, dir * s + u), v) };
            }
        }
        Ok(())
    }

    fn flux_divergence(&self, patch: usize, volume: usize) {
        let s = self.spec.unknowns();
        let h = self.spec.interior_to_haloed(volume);
        let o = self.out_offset(patch, volume);
        let scale = self.dt_over_dx(patch);
        let half = T::half();
        let lay = &self.flux_layout;
        for dir in 0..self.spec.dim() {
            let (hm, hp) = (h - self.stride[dir], h + self.stride[dir]);
            for u in 0..s {
                let c = dir * s + u;
                unsafe {
                    let fm = self.flux.get(lay.offset(patch, hm, c));
                    let f = self.flux.get(lay.offset(patch, h, c));
                    let fp = self.flux.get(lay.offset(patch, hp, c));
                    let face_m = half * (fm + f);
                    let face_p = half * (f + fp);
                    let cur = self.q_out.get(o + u);
                    self.q_out.set(o + u, cur + scale * (face_m - face_p));
                }
            }
        }
    }

    /// Face-averaged product: at each face `B(q_avg) (Q_R - Q_L) / dx`; the
    /// volume receives `-dt/2` times the sum over its two faces per direction.
    fn non_conservative_product(&self, patch: usize, volume: usize) {
        let d = self.spec.dim();
        let s = self.spec.unknowns();
        let h = self.spec.interior_to_haloed(volume);
        let o = self.out_offset(patch, volume);
        let dt = self.dt[patch];
        let dx = self.cell_size[patch * d] / T::from_count(self.spec.size());
        let half = T::half();
        let x = self.face_reachable_centre(patch, h).expect("interior volume");
        let mut qbar = [T::zero(); MAX_UNKNOWNS];
        let mut grad = [T::zero(); 3 * MAX_UNKNOWNS];
        let mut bm = [T::zero(); MAX_UNKNOWNS];
        let mut bp = [T::zero(); MAX_UNKNOWNS];
        for dir in 0..d {
            for (faces, out) in [((h - self.stride[dir], h), &mut bm), ((h, h + self.stride[dir]), &mut bp)] {
                let ql = self.q_in_at(patch, faces.0);
                let qr = self.q_in_at(patch, faces.1);
                grad[..d * s].iter_mut().for_each(|g| *g = T::zero());
                for u in 0..s {
                    qbar[u] = half * (ql[u] + qr[u]);
                    grad[dir * s + u] = (qr[u] - ql[u]) / dx;
                }
                self.pde.non_conservative_product(
                    &qbar[..s],
                    &grad[..d * s],
                    &x[..d],
                    self.t[patch],
                    dir,
                    &mut out[..s],
                );
            }
            for u in 0..s {
                unsafe {
                    let cur = self.q_out.get(o + u);
                    self.q_out.set(o + u, cur - dt * half * (bm[u] + bp[u]));
                }
            }
        }
    }

    /// Sequential scan over the patch's interior volumes and directions.
    fn reduce_eigenvalue(&self, patch: usize) {
        let mut m = T::zero();
        for v in 0..self.spec.interior_volumes() {
            let h = self.spec.interior_to_haloed(v);
            for dir in 0..self.spec.dim() {
                let l = unsafe { self.eig.get(self.eig_layout.offset(patch, h, dir)) };
                if l > m {
                    m = l;
                }
            }
        }
        unsafe { self.max_eigenvalue.set(patch, m) };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{halo_project, make_patch_batch, make_patch_grid};
    use crate::pde::{euler_conserved, Euler, EulerParameters};

    fn euler2() -> Euler<f64> {
        Euler::new(2, EulerParameters::default())
    }

    fn constant_batch(p: usize, n: usize, q: &[f64], dt: f64) -> PatchBatch<f64> {
        let spec = PatchSpec::new(2, p, 4).unwrap();
        let mut b = make_patch_batch::<f64>(spec, n, &[0.0, 0.0], 1.0).unwrap();
        for k in 0..n {
            b.fill_interior(k, |_, out| out.copy_from_slice(q));
            b.dt[k] = dt;
        }
        halo_project(&mut b, &[n, 1], true).unwrap();
        b
    }

    fn bumpy_batch(p: usize) -> PatchBatch<f64> {
        let spec = PatchSpec::new(2, p, 4).unwrap();
        let shape = [2, 2];
        let g = EulerParameters::default();
        let mut b = make_patch_grid::<f64>(spec, &shape, &[0.0, 0.0], 0.5).unwrap();
        for k in 0..b.len() {
            b.fill_interior(k, |x, out| {
                let r: f64 = 1.0 + 0.3 * (6.0 * x[0]).sin() * (4.0 * x[1]).cos();
                out.copy_from_slice(&euler_conserved(r, &[0.3, -0.2 * r], 1.0 + 0.1 * x[0], &g));
            });
            b.dt[k] = 0.01;
        }
        halo_project(&mut b, &shape, true).unwrap();
        b
    }

    #[test]
    fn constant_field_is_preserved_bitwise() {
        let q = euler_conserved(1.0, &[0.3, -0.7], 1.0, &EulerParameters::default());
        for variant in KernelVariant::all() {
            let mut b = constant_batch(5, 3, &q, 0.05);
            update_patch_batch(&mut b, &euler2(), &variant).unwrap();
            for k in 0..3 {
                for v in b.q_out_patch(k).chunks(4) {
                    assert_eq!(v, q.as_slice(), "{variant:?}");
                }
                let l = crate::pde::euler_max_eigenvalue(&q, 1, &EulerParameters::default()).unwrap();
                assert_eq!(b.max_eigenvalue[k], l);
            }
        }
    }

    #[test]
    fn constant_state_eigenvalue() {
        let q = [1.0, 0.0, 0.0, 2.5];
        let mut b = constant_batch(4, 1, &q, 0.1);
        update_patch_batch(&mut b, &euler2(), &KernelVariant::default()).unwrap();
        assert!((b.max_eigenvalue[0] - 1.4f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_dt_copies_interior() {
        let mut b = bumpy_batch(6);
        b.dt.iter_mut().for_each(|d| *d = 0.0);
        let expect = b.q_out.clone();
        b.q_out.iter_mut().for_each(|v| *v = f64::NAN);
        for variant in KernelVariant::all() {
            update_patch_batch(&mut b, &euler2(), &variant).unwrap();
            assert_eq!(b.q_out, expect);
        }
    }

    #[test]
    fn halos_never_reach_q_out() {
        let mut b = bumpy_batch(4);
        let spec = *b.spec();
        let e = spec.haloed_size();
        let mut idx = [0; 2];
        for k in 0..b.len() {
            for h in 0..spec.haloed_volumes() {
                unravel(h, e, &mut idx);
                let halo = idx.iter().filter(|&&i| i == 0 || i == e - 1).count();
                if halo == 2 {
                    b.q_in_patch_mut(k)[h * 4..h * 4 + 4].iter_mut().for_each(|v| *v = f64::NAN);
                }
            }
        }
        update_patch_batch(&mut b, &euler2(), &KernelVariant::default()).unwrap();
        assert!(b.q_out.iter().all(|v| v.is_finite()));

        // with dt = 0 even poisoned face halos stay out of the result
        let mut b = bumpy_batch(4);
        b.dt.iter_mut().for_each(|d| *d = 0.0);
        let mut steps = KernelTemporaries::for_variant(&spec, b.len(), &KernelVariant::default());
        for k in 0..b.len() {
            for h in 0..spec.haloed_volumes() {
                unravel(h, e, &mut idx);
                if idx.iter().any(|&i| i == 0 || i == e - 1) {
                    b.q_in_patch_mut(k)[h * 4..h * 4 + 4].iter_mut().for_each(|v| *v = f64::NAN);
                }
            }
        }
        apply_step(&mut b, &euler2(), &mut steps, KernelStep::CopySolution, ExecutionStrategy::SEQUENTIAL).unwrap();
        assert!(b.q_out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn copy_step_places_markers() {
        let spec = PatchSpec::new(2, 3, 2).unwrap();
        let mut b = make_patch_batch(spec, 2, &[0.0, 0.0], 1.0).unwrap();
        for (i, v) in b.q_in.iter_mut().enumerate() {
            *v = i as f64;
        }
        let pde = crate::pde::tests_support::Linear::new(2, 2);
        let mut temps = KernelTemporaries::new(&spec, 2, LayoutKind::Soa, 8);
        apply_step(&mut b, &pde, &mut temps, KernelStep::CopySolution, ExecutionStrategy::PARALLEL).unwrap();
        let mut idx = [0; 2];
        for k in 0..2 {
            for v in 0..9 {
                unravel(v, 3, &mut idx);
                let h = (idx[0] + 1) + 5 * (idx[1] + 1);
                for u in 0..2 {
                    assert_eq!(b.q_out_patch(k)[v * 2 + u], (k * 50 + h * 2 + u) as f64);
                }
            }
        }
    }

    #[test]
    fn damping_vanishes_for_uniform_field() {
        let q = euler_conserved(1.3, &[0.4, 0.1], 0.9, &EulerParameters::default());
        let mut b = constant_batch(4, 2, &q, 0.1);
        let spec = *b.spec();
        let mut temps = KernelTemporaries::new(&spec, 2, LayoutKind::Aosoa, 8);
        for step in [KernelStep::CopySolution, KernelStep::Eigenvalues, KernelStep::EigenvalueDamping] {
            apply_step(&mut b, &euler2(), &mut temps, step, ExecutionStrategy::SEQUENTIAL).unwrap();
        }
        for v in b.q_out.chunks(4) {
            assert_eq!(v, q.as_slice());
        }
    }

    #[test]
    fn damping_of_single_jump() {
        // scalar linear advection with speed 0 isolates the damping term
        let spec = PatchSpec::new(2, 2, 1).unwrap();
        let pde = crate::pde::tests_support::Linear::new(2, 1).with_speed(0.0).with_wave(2.0);
        let mut b = make_patch_batch(spec, 1, &[0.0, 0.0], 1.0).unwrap();
        // interior x=0 column holds 1, x=1 column holds 3; halos copy neighbours (outflow)
        for v in 0..4 {
            b.q_out[v] = if v % 2 == 0 { 1.0 } else { 3.0 };
        }
        halo_project(&mut b, &[1, 1], false).unwrap();
        b.dt[0] = 0.1;
        let mut temps = KernelTemporaries::new(&spec, 1, LayoutKind::Aos, 8);
        for step in [KernelStep::CopySolution, KernelStep::Eigenvalues, KernelStep::EigenvalueDamping] {
            apply_step(&mut b, &pde, &mut temps, step, ExecutionStrategy::SEQUENTIAL).unwrap();
        }
        // a = 2, dQ = 2, dt/dx = 0.2: +-0.5 * 2 * 2 * 0.2 = 0.4
        assert!((b.q_out[0] - 1.4).abs() < 1e-15);
        assert!((b.q_out[1] - 2.6).abs() < 1e-15);
    }

    #[test]
    fn reduction_picks_strict_maximum() {
        for variant in KernelVariant::all() {
            let mut b = bumpy_batch(5);
            let spec = *b.spec();
            let pos = 17;
            let h = spec.interior_to_haloed(pos);
            let q = euler_conserved(1.0, &[4.0, 0.0], 1.0, &EulerParameters::default());
            b.q_in_patch_mut(2)[h * 4..h * 4 + 4].copy_from_slice(&q);
            update_patch_batch(&mut b, &euler2(), &variant).unwrap();
            let expect = 4.0 + 1.4f64.sqrt();
            assert!((b.max_eigenvalue[2] - expect).abs() < 1e-15);
            assert!(b.max_eigenvalue[0] < expect);
        }
    }

    #[test]
    fn non_physical_state_is_reported() {
        let mut b = bumpy_batch(3);
        let spec = *b.spec();
        let h = spec.interior_to_haloed(4);
        b.q_in_patch_mut(1)[h * 4] = -1.0;
        for variant in KernelVariant::all() {
            let err = update_patch_batch(&mut b, &euler2(), &variant).unwrap_err();
            match err {
                KernelError::NonPhysical { patch, volume, source } => {
                    assert_eq!(patch, 1);
                    assert_eq!(volume, vec![2, 2]);
                    assert!(matches!(source, PdeError::Density(_)));
                }
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn empty_batch_is_noop() {
        let spec = PatchSpec::new(2, 3, 4).unwrap();
        let mut b = PatchBatch::<f64>::zeroed(spec, 0);
        update_patch_batch(&mut b, &euler2(), &KernelVariant::default()).unwrap();
        assert!(b.q_out.is_empty());
    }

    #[test]
    fn unknown_count_mismatch() {
        let spec = PatchSpec::new(2, 3, 5).unwrap();
        let mut b = make_patch_batch(spec, 1, &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(
            update_patch_batch(&mut b, &euler2(), &KernelVariant::default()),
            Err(KernelError::Unknowns { pde: 4, batch: 5 })
        );
    }

    #[test]
    fn temporaries_are_reused_or_rebuilt() {
        let mut b = bumpy_batch(4);
        let spec = *b.spec();
        let v = KernelVariant::new(Ordering::Batched, LayoutKind::Soa, ExecutionStrategy::SEQUENTIAL);
        let mut temps = KernelTemporaries::new(&spec, 1, LayoutKind::Aos, 8);
        assert!(!temps.fits(&spec, b.len(), &v));
        update_patch_batch_with(&mut b, &euler2(), &v, &mut temps).unwrap();
        assert!(temps.fits(&spec, b.len(), &v));
        let first = b.q_out.clone();
        update_patch_batch_with(&mut b, &euler2(), &v, &mut temps).unwrap();
        assert_eq!(b.q_out, first);
    }

    #[test]
    fn single_precision_constant_state() {
        let spec = PatchSpec::new(3, 3, 5).unwrap();
        let g = EulerParameters::<f32>::default();
        let q = euler_conserved(1.0f32, &[0.5, 0.0, -0.25], 1.0, &g);
        let mut b = make_patch_batch(spec, 2, &[0.0f32; 3], 1.0).unwrap();
        for k in 0..2 {
            b.fill_interior(k, |_, out| out.copy_from_slice(&q));
            b.dt[k] = 0.01;
        }
        halo_project(&mut b, &[2, 1, 1], true).unwrap();
        for variant in KernelVariant::all() {
            update_patch_batch(&mut b, &Euler::new(3, g), &variant).unwrap();
            for v in b.q_out.chunks(5) {
                assert_eq!(v, q.as_slice());
            }
        }
    }
}
