//! Reference implementations shared by the integration tests. Nothing here
//! calls into the kernel or the PDE module.
#![allow(dead_code)]

use patchfv::mesh::{halo_project, make_patch_grid};
use patchfv::{PatchBatch, PatchSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GAMMA: f64 = 1.4;

pub fn conserved(rho: f64, u: f64, v: f64, p: f64) -> [f64; 4] {
    [rho, rho * u, rho * v, p / (GAMMA - 1.0) + 0.5 * rho * (u * u + v * v)]
}

fn pressure(q: [f64; 4]) -> f64 {
    (GAMMA - 1.0) * (q[3] - (q[1] * q[1] + q[2] * q[2]) / (q[0] + q[0]))
}

/// 2d Euler flux written out component by component.
pub fn flux_x(q: [f64; 4]) -> [f64; 4] {
    let p = pressure(q);
    let u = q[1] / q[0];
    [q[1], u * q[1] + p, u * q[2], (q[3] + p) * u]
}

pub fn flux_y(q: [f64; 4]) -> [f64; 4] {
    let p = pressure(q);
    let v = q[2] / q[0];
    [q[2], v * q[1], v * q[2] + p, (q[3] + p) * v]
}

pub fn wave_speed(q: [f64; 4], dir: usize) -> f64 {
    let c = (GAMMA * pressure(q) / q[0]).sqrt();
    (q[1 + dir] / q[0]).abs() + c
}

/// One Rusanov step on a single 2d patch. `haloed[j][i]` holds the state at
/// haloed column `i`, row `j`; the result is indexed by interior `[j][i]`.
///
/// The damping terms of all faces are applied first, then the centred flux
/// differences, x before y; this is the accumulation order of the
/// step-by-step scheme.
pub fn rusanov_step(haloed: &[Vec<[f64; 4]>], dt: f64, dx: f64) -> (Vec<Vec<[f64; 4]>>, f64) {
    let e = haloed.len();
    let p = e - 2;
    let r = dt / dx;
    let mut out = vec![vec![[0.0; 4]; p]; p];
    let mut lambda_max: f64 = 0.0;
    for j in 1..=p {
        for i in 1..=p {
            let q = haloed[j][i];
            let west = haloed[j][i - 1];
            let east = haloed[j][i + 1];
            let south = haloed[j - 1][i];
            let north = haloed[j + 1][i];
            lambda_max = lambda_max.max(wave_speed(q, 0)).max(wave_speed(q, 1));

            let mut new = q;
            let a_w = wave_speed(west, 0).max(wave_speed(q, 0));
            let a_e = wave_speed(q, 0).max(wave_speed(east, 0));
            for u in 0..4 {
                let left = 0.5 * a_w * (q[u] - west[u]);
                let right = 0.5 * a_e * (east[u] - q[u]);
                new[u] += r * (right - left);
            }
            let a_s = wave_speed(south, 1).max(wave_speed(q, 1));
            let a_n = wave_speed(q, 1).max(wave_speed(north, 1));
            for u in 0..4 {
                let left = 0.5 * a_s * (q[u] - south[u]);
                let right = 0.5 * a_n * (north[u] - q[u]);
                new[u] += r * (right - left);
            }
            let (fw, f, fe) = (flux_x(west), flux_x(q), flux_x(east));
            for u in 0..4 {
                new[u] += r * (0.5 * (fw[u] + f[u]) - 0.5 * (f[u] + fe[u]));
            }
            let (gs, g, gn) = (flux_y(south), flux_y(q), flux_y(north));
            for u in 0..4 {
                new[u] += r * (0.5 * (gs[u] + g[u]) - 0.5 * (g[u] + gn[u]));
            }
            out[j - 1][i - 1] = new;
        }
    }
    (out, lambda_max)
}

/// Textbook form `Q - dt/dx (F_{i+1/2} - F_{i-1/2})` with full Rusanov face
/// fluxes, for a looser cross-check.
pub fn rusanov_step_textbook(haloed: &[Vec<[f64; 4]>], dt: f64, dx: f64) -> Vec<Vec<[f64; 4]>> {
    let e = haloed.len();
    let p = e - 2;
    let face = |l: [f64; 4], r: [f64; 4], dir: usize| -> [f64; 4] {
        let (fl, fr) = if dir == 0 { (flux_x(l), flux_x(r)) } else { (flux_y(l), flux_y(r)) };
        let a = wave_speed(l, dir).max(wave_speed(r, dir));
        std::array::from_fn(|u| 0.5 * (fl[u] + fr[u] - a * (r[u] - l[u])))
    };
    let mut out = vec![vec![[0.0; 4]; p]; p];
    for j in 1..=p {
        for i in 1..=p {
            let q = haloed[j][i];
            let fw = face(haloed[j][i - 1], q, 0);
            let fe = face(q, haloed[j][i + 1], 0);
            let fs = face(haloed[j - 1][i], q, 1);
            let fn_ = face(q, haloed[j + 1][i], 1);
            out[j - 1][i - 1] = std::array::from_fn(|u| q[u] - dt / dx * (fe[u] - fw[u] + fn_[u] - fs[u]));
        }
    }
    out
}

/// Random admissible single patch with random face halos; returns the batch
/// and the same data as a haloed 2d array.
pub fn random_patch(p: usize, seed: u64) -> (PatchBatch<f64>, Vec<Vec<[f64; 4]>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = PatchSpec::new(2, p, 4).unwrap();
    let mut b = make_patch_grid::<f64>(spec, &[1, 1], &[0.0, 0.0], 1.0).unwrap();
    let e = p + 2;
    let mut grid = vec![vec![[f64::NAN; 4]; e]; e];
    for (j, row) in grid.iter_mut().enumerate() {
        for (i, cell) in row.iter_mut().enumerate() {
            let corner = (i == 0 || i == e - 1) && (j == 0 || j == e - 1);
            if !corner {
                *cell = conserved(
                    rng.gen_range(0.5..2.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.5..2.0),
                );
            }
            let h = i + e * j;
            b.q_in[h * 4..h * 4 + 4].copy_from_slice(cell);
        }
    }
    b.dt[0] = rng.gen_range(0.001..0.02);
    (b, grid)
}

/// Random admissible batch of `n` patches in a periodic row, halos projected.
pub fn random_batch(p: usize, n: usize, seed: u64) -> PatchBatch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = PatchSpec::new(2, p, 4).unwrap();
    let mut b = make_patch_grid::<f64>(spec, &[n, 1], &[0.0, 0.0], 0.25).unwrap();
    for k in 0..n {
        b.fill_interior(k, |_, q| {
            q.copy_from_slice(&conserved(
                rng.gen_range(0.5..2.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.5..2.0),
            ))
        });
        b.dt[k] = rng.gen_range(0.0005..0.005);
    }
    halo_project(&mut b, &[n, 1], true).unwrap();
    b
}

pub fn interior(b: &PatchBatch<f64>, patch: usize, i: usize, j: usize) -> [f64; 4] {
    let p = b.spec().size();
    let v = i + p * j;
    b.q_out_patch(patch)[v * 4..v * 4 + 4].try_into().unwrap()
}

pub fn relative_max_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}
