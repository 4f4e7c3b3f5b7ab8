//! Hyperbolic PDE definitions injected into the kernels.
//!
//! A PDE supplies the directional flux `f^n(q)`, the largest absolute
//! eigenvalue of its Jacobian and, optionally, a non-conservative product.
//! Kernels are generic over [`Pde`] so the calls are statically dispatched
//! and inlined into the loop bodies.
//!
//! States are plain slices of `s` conserved quantities. For Euler they are
//! `(rho, j_0, .., j_{d-1}, E_t)`.

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdeError {
    #[error("non-physical state: density {0} is not positive")]
    Density(f64),
    #[error("non-physical state: pressure {0} is negative")]
    Pressure(f64),
    #[error("ratio of specific heats must exceed 1, got {0}")]
    Gamma(f64),
}

/// A first-order hyperbolic system `dq/dt + sum_n d f^n(q) / dx_n = 0`.
///
/// All methods must be pure. `x` is the volume centre and `t` the time;
/// both may be ignored.
pub trait Pde<T: Real>: Sync {
    /// Number of conserved unknowns `s`.
    fn unknowns(&self) -> usize;

    /// Writes `f^direction(q)` into `out`.
    fn flux(&self, q: &[T], x: &[T], t: T, direction: usize, out: &mut [T]) -> Result<(), PdeError>;

    /// `max_k |lambda_k|` of the flux Jacobian in `direction`.
    fn max_abs_eigenvalue(&self, q: &[T], x: &[T], t: T, direction: usize) -> Result<T, PdeError>;

    /// Whether [`Pde::non_conservative_product`] can be non-zero. Kernels skip
    /// the product entirely when this is `false`.
    fn has_non_conservative_product(&self) -> bool {
        false
    }

    /// `B_direction(q) * grad_q[direction]`. `grad_q` is `d x s`, row-major
    /// by direction.
    fn non_conservative_product(&self, q: &[T], grad_q: &[T], x: &[T], t: T, direction: usize, out: &mut [T]) {
        zero_ncp(q, grad_q, x, t, direction, out)
    }
}

/// The zero non-conservative product.
pub fn zero_ncp<T: Real>(_q: &[T], _grad_q: &[T], _x: &[T], _t: T, _direction: usize, out: &mut [T]) {
    out.iter_mut().for_each(|v| *v = T::zero());
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerParameters<T> {
    pub gamma: T,
}

impl<T: Real> EulerParameters<T> {
    pub fn new(gamma: T) -> Result<Self, PdeError> {
        if gamma.is_nan() || gamma <= T::one() {
            return Err(PdeError::Gamma(gamma.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(Self { gamma })
    }
}

impl<T: Real> Default for EulerParameters<T> {
    /// Ideal diatomic gas, `gamma = 1.4`.
    fn default() -> Self {
        Self { gamma: T::lit(1.4) }
    }
}

fn as_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

fn kinetic<T: Real>(q: &[T]) -> T {
    let rho = q[0];
    let dim = q.len() - 2;
    let j2 = q[1..=dim].iter().fold(T::zero(), |acc, &j| acc + j * j);
    j2 / (rho + rho)
}

/// Ideal-gas pressure `(gamma - 1) (E_t - |j|^2 / (2 rho))`.
pub fn euler_pressure<T: Real>(q: &[T], params: &EulerParameters<T>) -> Result<T, PdeError> {
    let rho = q[0];
    if rho.is_nan() || rho <= T::zero() {
        return Err(PdeError::Density(as_f64(rho)));
    }
    let e = q[q.len() - 1];
    Ok((params.gamma - T::one()) * (e - kinetic(q)))
}

/// Euler flux in `direction`:
/// `(j_n, j_n j / rho + p e_n, (E_t + p) j_n / rho)`.
pub fn euler_flux<T: Real>(
    q: &[T],
    direction: usize,
    params: &EulerParameters<T>,
    out: &mut [T],
) -> Result<(), PdeError> {
    let p = euler_pressure(q, params)?;
    let dim = q.len() - 2;
    let rho = q[0];
    let jn = q[1 + direction];
    let un = jn / rho;
    out[0] = jn;
    for a in 0..dim {
        out[1 + a] = un * q[1 + a];
    }
    out[1 + direction] = out[1 + direction] + p;
    out[dim + 1] = (q[dim + 1] + p) * un;
    Ok(())
}

/// `|u_n| + c` with sound speed `c = sqrt(gamma p / rho)`.
pub fn euler_max_eigenvalue<T: Real>(q: &[T], direction: usize, params: &EulerParameters<T>) -> Result<T, PdeError> {
    let p = euler_pressure(q, params)?;
    if p < T::zero() {
        return Err(PdeError::Pressure(as_f64(p)));
    }
    let rho = q[0];
    let c = (params.gamma * p / rho).sqrt();
    Ok((q[1 + direction] / rho).abs() + c)
}

/// Conserved state from density, velocity and pressure.
pub fn euler_conserved<T: Real>(rho: T, velocity: &[T], pressure: T, params: &EulerParameters<T>) -> Vec<T> {
    let mut q = Vec::with_capacity(velocity.len() + 2);
    q.push(rho);
    q.extend(velocity.iter().map(|&u| rho * u));
    let u2 = velocity.iter().fold(T::zero(), |acc, &u| acc + u * u);
    q.push(pressure / (params.gamma - T::one()) + T::half() * rho * u2);
    q
}

/// Compressible Euler equations in 2 or 3 dimensions (`s = d + 2`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Euler<T> {
    dim: usize,
    params: EulerParameters<T>,
}

impl<T: Real> Euler<T> {
    pub fn new(dim: usize, params: EulerParameters<T>) -> Self {
        assert!(dim == 2 || dim == 3, "Euler is implemented for 2d and 3d");
        Self { dim, params }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &EulerParameters<T> {
        &self.params
    }
}

impl<T: Real> Pde<T> for Euler<T> {
    fn unknowns(&self) -> usize {
        self.dim + 2
    }

    #[inline]
    fn flux(&self, q: &[T], _x: &[T], _t: T, direction: usize, out: &mut [T]) -> Result<(), PdeError> {
        euler_flux(q, direction, &self.params, out)
    }

    #[inline]
    fn max_abs_eigenvalue(&self, q: &[T], _x: &[T], _t: T, direction: usize) -> Result<T, PdeError> {
        euler_max_eigenvalue(q, direction, &self.params)
    }
}
