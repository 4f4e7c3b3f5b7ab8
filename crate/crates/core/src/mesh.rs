//! Patch data model: Cartesian blocks of volumes with a halo, batches of such
//! patches, and the layout enumerators mapping logical indices to storage.
//!
//! Volume multi-indices are always linearized x-fastest. Solution storage in
//! [`PatchBatch`] is AoS (unknown fastest); the other layouts are available
//! through [`LayoutEnumerator`] for kernel temporaries.

use std::io::{Read, Write};

use thiserror::Error;

use crate::scalar::Real;

/// Halo width. The first-order stencil needs exactly one neighbour per face.
pub const HALO: usize = 1;

/// Default block length for the AoSoA layout.
pub const DEFAULT_AOSOA_BLOCK: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("dimension must be 2 or 3, got {0}")]
    Dimension(usize),
    #[error("patch size must be at least 1")]
    PatchSize,
    #[error("number of unknowns must be at least 1")]
    Unknowns,
    #[error("batch must contain at least one patch")]
    EmptyBatch,
    #[error("patch extent must be positive and finite, got {0}")]
    Extent(f64),
    #[error("origin has {got} components, expected {expected}")]
    Origin { got: usize, expected: usize },
    #[error("AoSoA block length must be at least 1")]
    Block,
    #[error("index out of bounds: {what} = {index}, bound {bound}")]
    OutOfBounds { what: &'static str, index: usize, bound: usize },
    #[error("volume index has {got} components, expected {expected}")]
    Rank { got: usize, expected: usize },
    #[error("grid shape {shape:?} does not match {patches} patches in {dim}d")]
    GridShape { shape: Vec<usize>, patches: usize, dim: usize },
    #[error("malformed batch dump: {0}")]
    Format(String),
    #[error("i/o failure: {0}")]
    Io(String),
}

impl From<std::io::Error> for MeshError {
    fn from(e: std::io::Error) -> Self {
        MeshError::Io(e.to_string())
    }
}

/// Shape of one patch: `dim`-dimensional, `size` volumes per axis, `unknowns`
/// conserved quantities per volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatchSpec {
    dim: usize,
    size: usize,
    unknowns: usize,
}

impl PatchSpec {
    pub fn new(dim: usize, size: usize, unknowns: usize) -> Result<Self, MeshError> {
        if dim != 2 && dim != 3 {
            return Err(MeshError::Dimension(dim));
        }
        if size < 1 {
            return Err(MeshError::PatchSize);
        }
        if unknowns < 1 {
            return Err(MeshError::Unknowns);
        }
        Ok(Self { dim, size, unknowns })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Volumes per axis (interior).
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn unknowns(&self) -> usize {
        self.unknowns
    }

    pub fn halo(&self) -> usize {
        HALO
    }

    /// Volumes per axis including both halo layers.
    pub fn haloed_size(&self) -> usize {
        self.size + 2 * HALO
    }

    pub fn interior_volumes(&self) -> usize {
        self.size.pow(self.dim as u32)
    }

    pub fn haloed_volumes(&self) -> usize {
        self.haloed_size().pow(self.dim as u32)
    }

    /// Reals per patch in the haloed input array.
    pub fn q_in_len(&self) -> usize {
        self.haloed_volumes() * self.unknowns
    }

    /// Reals per patch in the interior output array.
    pub fn q_out_len(&self) -> usize {
        self.interior_volumes() * self.unknowns
    }

    /// Linear haloed index of the interior volume with linear interior index `lin`.
    #[inline]
    pub fn interior_to_haloed(&self, lin: usize) -> usize {
        let p = self.size;
        let e = self.haloed_size();
        let mut rest = lin;
        let mut out = 0;
        let mut stride = 1;
        for _ in 0..self.dim {
            out += (rest % p + HALO) * stride;
            rest /= p;
            stride *= e;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayoutKind {
    /// Unknown index fastest.
    Aos,
    /// Unknown index slowest.
    Soa,
    /// Unknowns vary inside fixed-length blocks of volumes.
    Aosoa,
}

impl LayoutKind {
    pub const ALL: [LayoutKind; 3] = [LayoutKind::Aos, LayoutKind::Soa, LayoutKind::Aosoa];

    pub fn label(&self) -> &'static str {
        match self {
            LayoutKind::Aos => "aos",
            LayoutKind::Soa => "soa",
            LayoutKind::Aosoa => "aosoa",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "aos" => Some(LayoutKind::Aos),
            "soa" => Some(LayoutKind::Soa),
            "aosoa" => Some(LayoutKind::Aosoa),
            _ => None,
        }
    }
}

/// Bijection `(patch, volume, component) -> offset` over a batch of
/// `dim`-dimensional blocks with `extent` volumes per axis.
///
/// AoSoA blocks are formed per patch; the trailing block of a patch is
/// shortened when the volume count is not a multiple of the block length, so
/// the image is always exactly `[0, len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayoutEnumerator {
    kind: LayoutKind,
    dim: usize,
    extent: usize,
    components: usize,
    patches: usize,
    block: usize,
    volumes: usize,
}

impl LayoutEnumerator {
    pub fn new(
        kind: LayoutKind,
        dim: usize,
        extent: usize,
        components: usize,
        patches: usize,
    ) -> Result<Self, MeshError> {
        Self::with_block(kind, dim, extent, components, patches, DEFAULT_AOSOA_BLOCK)
    }

    pub fn with_block(
        kind: LayoutKind,
        dim: usize,
        extent: usize,
        components: usize,
        patches: usize,
        block: usize,
    ) -> Result<Self, MeshError> {
        if dim == 0 || dim > 3 {
            return Err(MeshError::Dimension(dim));
        }
        if block == 0 {
            return Err(MeshError::Block);
        }
        Ok(Self { kind, dim, extent, components, patches, block, volumes: extent.pow(dim as u32) })
    }

    /// Enumerator over the interior volumes and unknowns of `spec`.
    pub fn interior(kind: LayoutKind, spec: &PatchSpec, patches: usize) -> Self {
        Self::new(kind, spec.dim, spec.size, spec.unknowns, patches).expect("valid spec")
    }

    /// Enumerator over the haloed volumes and unknowns of `spec`.
    pub fn haloed(kind: LayoutKind, spec: &PatchSpec, patches: usize) -> Self {
        Self::new(kind, spec.dim, spec.haloed_size(), spec.unknowns, patches).expect("valid spec")
    }

    pub fn kind(&self) -> LayoutKind {
        self.kind
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn volumes_per_patch(&self) -> usize {
        self.volumes
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn patches(&self) -> usize {
        self.patches
    }

    /// Size of the full index domain.
    pub fn len(&self) -> usize {
        self.patches * self.volumes * self.components
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checked linearization of a volume multi-index (x fastest).
    pub fn linearize(&self, volume: &[usize]) -> Result<usize, MeshError> {
        if volume.len() != self.dim {
            return Err(MeshError::Rank { got: volume.len(), expected: self.dim });
        }
        let mut lin = 0;
        for &i in volume.iter().rev() {
            if i >= self.extent {
                return Err(MeshError::OutOfBounds { what: "volume", index: i, bound: self.extent });
            }
            lin = lin * self.extent + i;
        }
        Ok(lin)
    }

    /// Checked offset of `(patch, volume, component)`.
    pub fn index(&self, patch: usize, volume: &[usize], component: usize) -> Result<usize, MeshError> {
        if patch >= self.patches {
            return Err(MeshError::OutOfBounds { what: "patch", index: patch, bound: self.patches });
        }
        if component >= self.components {
            return Err(MeshError::OutOfBounds { what: "component", index: component, bound: self.components });
        }
        let lin = self.linearize(volume)?;
        Ok(self.offset(patch, lin, component))
    }

    /// Offset for an already linearized volume. Bounds are only debug-checked.
    #[inline(always)]
    pub fn offset(&self, patch: usize, volume: usize, component: usize) -> usize {
        debug_assert!(patch < self.patches && volume < self.volumes && component < self.components);
        match self.kind {
            LayoutKind::Aos => (patch * self.volumes + volume) * self.components + component,
            LayoutKind::Soa => (component * self.patches + patch) * self.volumes + volume,
            LayoutKind::Aosoa => {
                let start = volume - volume % self.block;
                let len = self.block.min(self.volumes - start);
                patch * self.volumes * self.components + start * self.components + component * len + (volume - start)
            }
        }
    }
}

/// A batch of patches: haloed inputs, interior outputs, geometry, time
/// stamps and the per-patch maximum eigenvalue written by the kernel.
///
/// `q_in` and `q_out` are stored contiguously, patch after patch, each patch
/// in AoS order over x-fastest volumes.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch<T> {
    spec: PatchSpec,
    patches: usize,
    pub q_in: Vec<T>,
    pub q_out: Vec<T>,
    pub cell_centre: Vec<T>,
    pub cell_size: Vec<T>,
    pub t: Vec<T>,
    pub dt: Vec<T>,
    pub max_eigenvalue: Vec<T>,
}

impl<T: Real> PatchBatch<T> {
    /// Zero-initialized batch of `patches` patches without geometry.
    pub fn zeroed(spec: PatchSpec, patches: usize) -> Self {
        let d = spec.dim;
        Self {
            spec,
            patches,
            q_in: vec![T::zero(); patches * spec.q_in_len()],
            q_out: vec![T::zero(); patches * spec.q_out_len()],
            cell_centre: vec![T::zero(); patches * d],
            cell_size: vec![T::zero(); patches * d],
            t: vec![T::zero(); patches],
            dt: vec![T::zero(); patches],
            max_eigenvalue: vec![T::zero(); patches],
        }
    }

    pub fn spec(&self) -> &PatchSpec {
        &self.spec
    }

    /// Number of patches (`numberOfCells`).
    pub fn len(&self) -> usize {
        self.patches
    }

    pub fn is_empty(&self) -> bool {
        self.patches == 0
    }

    pub fn q_in_patch(&self, patch: usize) -> &[T] {
        let n = self.spec.q_in_len();
        &self.q_in[patch * n..(patch + 1) * n]
    }

    pub fn q_in_patch_mut(&mut self, patch: usize) -> &mut [T] {
        let n = self.spec.q_in_len();
        &mut self.q_in[patch * n..(patch + 1) * n]
    }

    pub fn q_out_patch(&self, patch: usize) -> &[T] {
        let n = self.spec.q_out_len();
        &self.q_out[patch * n..(patch + 1) * n]
    }

    pub fn q_out_patch_mut(&mut self, patch: usize) -> &mut [T] {
        let n = self.spec.q_out_len();
        &mut self.q_out[patch * n..(patch + 1) * n]
    }

    pub fn centre(&self, patch: usize) -> &[T] {
        let d = self.spec.dim;
        &self.cell_centre[patch * d..(patch + 1) * d]
    }

    pub fn size(&self, patch: usize) -> &[T] {
        let d = self.spec.dim;
        &self.cell_size[patch * d..(patch + 1) * d]
    }

    /// Volume width of `patch`.
    pub fn dx(&self, patch: usize) -> T {
        self.cell_size[patch * self.spec.dim] / T::from_count(self.spec.size)
    }

    /// Centre of the volume with haloed multi-index `haloed` in `patch`.
    pub fn volume_centre(&self, patch: usize, haloed: &[usize], out: &mut [T]) {
        let dx = self.dx(patch);
        let centre = self.centre(patch);
        let size = self.size(patch);
        for a in 0..self.spec.dim {
            let i = T::from_count(haloed[a]) - T::from_count(HALO) + T::half();
            out[a] = centre[a] - size[a] * T::half() + i * dx;
        }
    }

    /// Sets every interior volume of `patch` in both `q_in` and `q_out`.
    pub fn fill_interior(&mut self, patch: usize, mut f: impl FnMut(&[T], &mut [T])) {
        let spec = self.spec;
        let s = spec.unknowns;
        let mut x = vec![T::zero(); spec.dim];
        let mut idx = vec![0; spec.dim];
        let mut q = vec![T::zero(); s];
        for lin in 0..spec.interior_volumes() {
            unravel(lin, spec.size, &mut idx);
            for i in idx.iter_mut() {
                *i += HALO;
            }
            self.volume_centre(patch, &idx, &mut x);
            f(&x, &mut q);
            let h = spec.interior_to_haloed(lin);
            self.q_in_patch_mut(patch)[h * s..(h + 1) * s].copy_from_slice(&q);
            self.q_out_patch_mut(patch)[lin * s..(lin + 1) * s].copy_from_slice(&q);
        }
    }

    /// Copies the listed patches into a new batch (the staging step before a
    /// batched kernel launch).
    pub fn gather(&self, ids: &[usize]) -> Self {
        let mut out = Self::zeroed(self.spec, ids.len());
        let d = self.spec.dim;
        for (k, &id) in ids.iter().enumerate() {
            out.q_in_patch_mut(k).copy_from_slice(self.q_in_patch(id));
            out.q_out_patch_mut(k).copy_from_slice(self.q_out_patch(id));
            out.cell_centre[k * d..(k + 1) * d].copy_from_slice(self.centre(id));
            out.cell_size[k * d..(k + 1) * d].copy_from_slice(self.size(id));
            out.t[k] = self.t[id];
            out.dt[k] = self.dt[id];
            out.max_eigenvalue[k] = self.max_eigenvalue[id];
        }
        out
    }

    /// Writes `q_out` and `max_eigenvalue` of a gathered batch back.
    pub fn scatter_outputs(&mut self, ids: &[usize], from: &Self) {
        assert_eq!(ids.len(), from.len(), "scatter size mismatch");
        for (k, &id) in ids.iter().enumerate() {
            self.q_out_patch_mut(id).copy_from_slice(from.q_out_patch(k));
            self.max_eigenvalue[id] = from.max_eigenvalue[k];
        }
    }

    /// Serializes the batch as little-endian: a `u64` header `(d, p, s, N)`
    /// followed, per patch, by `q_in`, `q_out`, centre, size, `t`, `dt` and
    /// the maximum eigenvalue as `f64`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<(), MeshError> {
        for h in [self.spec.dim, self.spec.size, self.spec.unknowns, self.patches] {
            w.write_all(&(h as u64).to_le_bytes())?;
        }
        let mut put = |v: &[T]| -> std::io::Result<()> {
            for x in v {
                w.write_all(&x.to_f64().unwrap_or(f64::NAN).to_le_bytes())?;
            }
            Ok(())
        };
        for k in 0..self.patches {
            put(self.q_in_patch(k))?;
            put(self.q_out_patch(k))?;
            put(self.centre(k))?;
            put(self.size(k))?;
            put(&[self.t[k], self.dt[k], self.max_eigenvalue[k]])?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, MeshError> {
        let mut word = [0u8; 8];
        let mut header = [0usize; 4];
        for h in header.iter_mut() {
            r.read_exact(&mut word)?;
            *h = usize::try_from(u64::from_le_bytes(word))
                .map_err(|_| MeshError::Format("header does not fit usize".into()))?;
        }
        let spec = PatchSpec::new(header[0], header[1], header[2])?;
        let mut batch = Self::zeroed(spec, header[3]);
        let mut get = |v: &mut [T]| -> Result<(), MeshError> {
            for x in v {
                r.read_exact(&mut word)?;
                *x = T::from_f64(f64::from_le_bytes(word))
                    .ok_or_else(|| MeshError::Format("value not representable".into()))?;
            }
            Ok(())
        };
        let d = spec.dim;
        for k in 0..batch.patches {
            get(batch.q_in_patch_mut(k))?;
            get(batch.q_out_patch_mut(k))?;
            get(&mut batch.cell_centre[k * d..(k + 1) * d])?;
            get(&mut batch.cell_size[k * d..(k + 1) * d])?;
            let mut tail = [T::zero(); 3];
            get(&mut tail)?;
            batch.t[k] = tail[0];
            batch.dt[k] = tail[1];
            batch.max_eigenvalue[k] = tail[2];
        }
        Ok(batch)
    }
}

/// Splits linear index `lin` into an x-fastest multi-index with `extent` per axis.
#[inline]
pub fn unravel(mut lin: usize, extent: usize, out: &mut [usize]) {
    for i in out.iter_mut() {
        *i = lin % extent;
        lin /= extent;
    }
}

/// Linearizes an x-fastest multi-index.
#[inline]
pub fn ravel(idx: &[usize], extent: usize) -> usize {
    idx.iter().rev().fold(0, |acc, &i| acc * extent + i)
}

/// Allocates `patches` patches laid out along the x axis, starting at `origin`.
pub fn make_patch_batch<T: Real>(
    spec: PatchSpec,
    patches: usize,
    origin: &[T],
    patch_extent: T,
) -> Result<PatchBatch<T>, MeshError> {
    let mut shape = vec![1; spec.dim];
    shape[0] = patches;
    make_patch_grid(spec, &shape, origin, patch_extent)
}

/// Allocates a uniform grid of patches of edge length `patch_extent`.
/// Patch ids run x-fastest over `grid_shape`.
pub fn make_patch_grid<T: Real>(
    spec: PatchSpec,
    grid_shape: &[usize],
    origin: &[T],
    patch_extent: T,
) -> Result<PatchBatch<T>, MeshError> {
    let d = spec.dim;
    if origin.len() != d {
        return Err(MeshError::Origin { got: origin.len(), expected: d });
    }
    let patches: usize = grid_shape.iter().product();
    if grid_shape.len() != d {
        return Err(MeshError::GridShape { shape: grid_shape.to_vec(), patches, dim: d });
    }
    if patches == 0 {
        return Err(MeshError::EmptyBatch);
    }
    if !(patch_extent > T::zero() && patch_extent.is_finite()) {
        return Err(MeshError::Extent(patch_extent.to_f64().unwrap_or(f64::NAN)));
    }
    let mut batch = PatchBatch::zeroed(spec, patches);
    let mut g = vec![0; d];
    for k in 0..patches {
        grid_unravel(k, grid_shape, &mut g);
        for a in 0..d {
            batch.cell_centre[k * d + a] = origin[a] + (T::from_count(g[a]) + T::half()) * patch_extent;
            batch.cell_size[k * d + a] = patch_extent;
        }
    }
    Ok(batch)
}

fn grid_unravel(mut k: usize, shape: &[usize], out: &mut [usize]) {
    for (o, &n) in out.iter_mut().zip(shape) {
        *o = k % n;
        k /= n;
    }
}

fn grid_ravel(g: &[usize], shape: &[usize]) -> usize {
    g.iter().zip(shape).rev().fold(0, |acc, (&i, &n)| acc * n + i)
}

/// Refreshes every patch's `q_in` from the latest `q_out`: interior from the
/// patch itself, face halos from the face neighbour in `grid_shape`.
///
/// With `periodic` unset, halos on the domain boundary copy the patch's own
/// boundary volumes (zero-gradient outflow). Edge and corner halo volumes are
/// left untouched.
pub fn halo_project<T: Real>(batch: &mut PatchBatch<T>, grid_shape: &[usize], periodic: bool) -> Result<(), MeshError> {
    let spec = *batch.spec();
    let d = spec.dim;
    let patches: usize = grid_shape.iter().product();
    if grid_shape.len() != d || patches != batch.len() {
        return Err(MeshError::GridShape { shape: grid_shape.to_vec(), patches: batch.len(), dim: d });
    }
    let s = spec.unknowns;
    let p = spec.size;
    let e = spec.haloed_size();
    let in_len = spec.q_in_len();
    let out_len = spec.q_out_len();

    for k in 0..patches {
        for lin in 0..spec.interior_volumes() {
            let h = spec.interior_to_haloed(lin);
            let src = k * out_len + lin * s;
            let dst = k * in_len + h * s;
            batch.q_in[dst..dst + s].copy_from_slice(&batch.q_out[src..src + s]);
        }
    }

    let face_volumes = p.pow(d as u32 - 1);
    let mut g = vec![0; d];
    let mut ng = vec![0; d];
    let mut other = vec![0; d - 1];
    let mut src_idx = vec![0; d];
    let mut dst_idx = vec![0; d];
    for k in 0..patches {
        grid_unravel(k, grid_shape, &mut g);
        for axis in 0..d {
            for upper in [false, true] {
                ng.copy_from_slice(&g);
                let n = grid_shape[axis];
                let at_edge = if upper { g[axis] + 1 == n } else { g[axis] == 0 };
                let (source, src_coord) = if at_edge && !periodic {
                    (k, if upper { p - 1 } else { 0 })
                } else {
                    ng[axis] = if upper { (g[axis] + 1) % n } else { (g[axis] + n - 1) % n };
                    (grid_ravel(&ng, grid_shape), if upper { 0 } else { p - 1 })
                };
                let dst_coord = if upper { e - 1 } else { 0 };
                for f in 0..face_volumes {
                    unravel(f, p, &mut other);
                    let mut o = other.iter();
                    for a in 0..d {
                        if a == axis {
                            src_idx[a] = src_coord;
                            dst_idx[a] = dst_coord;
                        } else {
                            let c = *o.next().unwrap();
                            src_idx[a] = c;
                            dst_idx[a] = c + HALO;
                        }
                    }
                    let src = source * out_len + ravel(&src_idx, p) * s;
                    let dst = k * in_len + ravel(&dst_idx, e) * s;
                    batch.q_in[dst..dst + s].copy_from_slice(&batch.q_out[src..src + s]);
                }
            }
        }
    }
    Ok(())
}
