//! Finite-volume densities on uniform 1D and 2D lattices.
//!
//! Advection is first-order upwind in flux form with face velocities averaged
//! from the adjacent cell centres and zero flux through the outer boundary.
//! Diffusion is the explicit central-difference heat step with the same
//! zero-flux boundary. Both conserve total mass up to rounding. 2D steps are
//! dimension-split: an x sweep followed by a y sweep.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const CFL_LIMIT: f64 = 0.5;
pub const DIFFUSION_LIMIT: f64 = 0.25;

/// Cell masses on a 1D (`extents = [nx]`) or 2D (`[nx, ny]`, x fastest)
/// lattice of square cells of width `h`, starting at `origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub extents: Vec<usize>,
    pub origin: Vec<f64>,
    pub h: f64,
    pub mass: Vec<f64>,
}

impl DensityGrid {
    /// Cells `n` over `[lo, hi)` with masses `f(centre) * h`, renormalized to 1.
    pub fn from_density_1d(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        if n == 0 || !(hi > lo) {
            return Err(Error::InvalidArgument(format!(
                "bad 1D grid [{lo}, {hi}) with {n} cells"
            )));
        }
        let h = (hi - lo) / n as f64;
        let mass = (0..n).map(|i| f(lo + (i as f64 + 0.5) * h) * h).collect();
        Self::normalized(vec![n], vec![lo], h, mass)
    }

    /// `n x n` cells over `[lo, hi)^2` with masses `f(x, y) * h^2`, renormalized.
    pub fn from_density_2d(lo: f64, hi: f64, n: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if n == 0 || !(hi > lo) {
            return Err(Error::InvalidArgument(format!(
                "bad 2D grid [{lo}, {hi})^2 with {n} cells"
            )));
        }
        let h = (hi - lo) / n as f64;
        let c = |i: usize| lo + (i as f64 + 0.5) * h;
        let mass = (0..n * n).map(|i| f(c(i % n), c(i / n)) * h * h).collect();
        Self::normalized(vec![n, n], vec![lo, lo], h, mass)
    }

    fn normalized(extents: Vec<usize>, origin: Vec<f64>, h: f64, mut mass: Vec<f64>) -> Result<Self> {
        if mass.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(Error::InvalidArgument(
                "cell masses must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = mass.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument("density has no mass on the grid".into()));
        }
        mass.iter_mut().for_each(|m| *m /= total);
        Ok(Self {
            extents,
            origin,
            h,
            mass,
        })
    }

    pub fn dim(&self) -> usize {
        self.extents.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Centre of cell `i` along axis `axis`.
    pub fn center(&self, axis: usize, i: usize) -> f64 {
        self.origin[axis] + (i as f64 + 0.5) * self.h
    }

    fn cell_center(&self, idx: usize) -> Vec<f64> {
        let nx = self.extents[0];
        match self.dim() {
            1 => vec![self.center(0, idx)],
            _ => vec![self.center(0, idx % nx), self.center(1, idx / nx)],
        }
    }

    /// Mass-weighted mean and variance along `axis`.
    pub fn moments(&self, axis: usize) -> (f64, f64) {
        let total = self.total_mass();
        let coord = |i: usize| self.cell_center(i)[axis];
        let mean = self.mass.iter().enumerate().map(|(i, m)| m * coord(i)).sum::<f64>() / total;
        let var = self
            .mass
            .iter()
            .enumerate()
            .map(|(i, m)| m * (coord(i) - mean).powi(2))
            .sum::<f64>()
            / total;
        (mean, var)
    }

    /// Piecewise-linear density `mass / h` between 1D cell centres; zero
    /// outside the outermost centres.
    pub fn density_at(&self, x: f64) -> f64 {
        debug_assert_eq!(self.dim(), 1);
        let n = self.extents[0];
        let s = (x - self.origin[0]) / self.h - 0.5;
        if s < 0.0 || s > (n - 1) as f64 {
            return 0.0;
        }
        let i = (s.floor() as usize).min(n.saturating_sub(2));
        let f = s - i as f64;
        ((1.0 - f) * self.mass[i] + f * self.mass[(i + 1).min(n - 1)]) / self.h
    }

    /// Nonnegative masses summing to 1 within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        if self.mass.iter().any(|&m| m < 0.0) {
            return Err(Error::InvalidArgument("negative cell mass".into()));
        }
        let total = self.total_mass();
        if (total - 1.0).abs() > tol {
            return Err(Error::InvalidArgument(format!(
                "total mass {total} differs from 1 by more than {tol}"
            )));
        }
        Ok(())
    }

    /// `x,mass` (1D) or `x,y,mass` (2D) lines for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(if self.dim() == 1 { "x,mass\n" } else { "x,y,mass\n" });
        for (i, m) in self.mass.iter().enumerate() {
            let c = self.cell_center(i);
            let coords: Vec<String> = c.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{},{m}", coords.join(","));
        }
        out
    }
}

/// One sweep of upwind transport along a line of cells with face velocities
/// `faces[i]` between cells `i` and `i + 1`.
fn upwind_sweep(mass: &mut [f64], stride: usize, offset: usize, n: usize, faces: &[f64], c: f64) {
    let at = |i: usize| offset + i * stride;
    let mut flux = vec![0.0; n.saturating_sub(1)];
    for i in 0..n.saturating_sub(1) {
        let v = faces[i];
        let up = if v > 0.0 { mass[at(i)] } else { mass[at(i + 1)] };
        flux[i] = c * v * up;
    }
    for i in 0..n.saturating_sub(1) {
        mass[at(i)] -= flux[i];
        mass[at(i + 1)] += flux[i];
    }
}

/// Transport `grid` for `steps` steps of size `dt` under a time-independent
/// velocity. Fails when `max|v| dt / h > 0.5`.
pub fn grid_advect_density(
    grid: &DensityGrid,
    velocity: impl Fn(&[f64]) -> Vec<f64>,
    dt: f64,
    steps: usize,
) -> Result<DensityGrid> {
    let dim = grid.dim();
    let cells = grid.mass.len();
    let centre_v: Vec<Vec<f64>> = (0..cells).map(|i| velocity(&grid.cell_center(i))).collect();
    if let Some(v) = centre_v.iter().find(|v| v.len() != dim) {
        return Err(Error::shape("grid velocity", dim, v.len()));
    }
    let vmax = centre_v.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let ratio = vmax * dt / grid.h;
    if !(ratio <= CFL_LIMIT) {
        return Err(Error::Cfl {
            ratio,
            limit: CFL_LIMIT,
        });
    }
    let c = dt / grid.h;
    let nx = grid.extents[0];
    let ny = if dim == 2 { grid.extents[1] } else { 1 };
    // face velocities per line, precomputed once
    let x_faces: Vec<Vec<f64>> = (0..ny)
        .map(|y| {
            (0..nx - 1)
                .map(|x| 0.5 * (centre_v[y * nx + x][0] + centre_v[y * nx + x + 1][0]))
                .collect()
        })
        .collect();
    let y_faces: Vec<Vec<f64>> = if dim == 2 {
        (0..nx)
            .map(|x| {
                (0..ny - 1)
                    .map(|y| 0.5 * (centre_v[y * nx + x][1] + centre_v[(y + 1) * nx + x][1]))
                    .collect()
            })
            .collect()
    } else {
        Vec::new()
    };
    let mut out = grid.clone();
    for _ in 0..steps {
        for (y, faces) in x_faces.iter().enumerate() {
            upwind_sweep(&mut out.mass, 1, y * nx, nx, faces, c);
        }
        for (x, faces) in y_faces.iter().enumerate() {
            upwind_sweep(&mut out.mass, nx, x, ny, faces, c);
        }
    }
    Ok(out)
}

/// Heat equation `dp/dt = D lap p` for `steps` explicit steps. Fails when
/// `D dt / h^2 > 0.25`.
pub fn grid_diffuse_density(grid: &DensityGrid, diffusion: f64, dt: f64, steps: usize) -> Result<DensityGrid> {
    if !(diffusion >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "diffusion must be >= 0, got {diffusion}"
        )));
    }
    let ratio = diffusion * dt / (grid.h * grid.h);
    if !(ratio <= DIFFUSION_LIMIT) {
        return Err(Error::Stability {
            ratio,
            limit: DIFFUSION_LIMIT,
        });
    }
    let mut out = grid.clone();
    if diffusion == 0.0 {
        return Ok(out);
    }
    let nx = grid.extents[0];
    let ny = if grid.dim() == 2 { grid.extents[1] } else { 1 };
    let mut next = out.mass.clone();
    for _ in 0..steps {
        next.copy_from_slice(&out.mass);
        for y in 0..ny {
            for x in 0..nx - 1 {
                let (a, b) = (y * nx + x, y * nx + x + 1);
                let f = ratio * (out.mass[b] - out.mass[a]);
                next[a] += f;
                next[b] -= f;
            }
        }
        if ny > 1 {
            for y in 0..ny - 1 {
                for x in 0..nx {
                    let (a, b) = (y * nx + x, (y + 1) * nx + x);
                    let f = ratio * (out.mass[b] - out.mass[a]);
                    next[a] += f;
                    next[b] -= f;
                }
            }
        }
        std::mem::swap(&mut out.mass, &mut next);
    }
    Ok(out)
}

/// Sub-steps needed to cover `dt` under speed `vmax` within the CFL limit.
pub fn cfl_substeps(vmax: f64, h: f64, dt: f64) -> usize {
    ((vmax * dt / (CFL_LIMIT * h)).ceil() as usize).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(mu: f64, var: f64) -> impl Fn(f64) -> f64 {
        move |x| (-(x - mu).powi(2) / (2.0 * var)).exp()
    }

    #[test]
    fn zero_velocity_and_zero_diffusion_are_identity() {
        let g = DensityGrid::from_density_1d(-5.0, 5.0, 100, gaussian(0.0, 1.0)).unwrap();
        assert_eq!(grid_advect_density(&g, |_| vec![0.0], 0.1, 50).unwrap(), g);
        assert_eq!(grid_diffuse_density(&g, 0.0, 0.1, 50).unwrap(), g);
    }

    #[test]
    fn constant_velocity_translates_the_centre_of_mass() {
        let g = DensityGrid::from_density_1d(-6.0, 6.0, 480, gaussian(-1.0, 0.25)).unwrap();
        let (v, dt, steps) = (0.8, 0.01, 200);
        let out = grid_advect_density(&g, |_| vec![v], dt, steps).unwrap();
        let (m0, _) = g.moments(0);
        let (m1, _) = out.moments(0);
        assert!((m1 - m0 - v * dt * steps as f64).abs() < g.h);
        assert!((out.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_velocity_grows_variance_exponentially() {
        let (a, t) = (0.3, 1.0);
        let g = DensityGrid::from_density_1d(-8.0, 8.0, 1600, gaussian(0.0, 0.5)).unwrap();
        let dt = 0.5 * 0.5 * g.h / (a * 8.0);
        let steps = (t / dt).round() as usize;
        let out = grid_advect_density(&g, |x| vec![a * x[0]], t / steps as f64, steps).unwrap();
        let expected = (2.0 * a * t).exp() * g.moments(0).1;
        assert!((out.moments(0).1 / expected - 1.0).abs() < 0.02);
    }

    #[test]
    fn heat_kernel_variance() {
        let g = DensityGrid::from_density_1d(-12.0, 12.0, 480, gaussian(0.0, 1.0)).unwrap();
        let (d, t) = (0.5, 2.0);
        let dt = 0.2 * g.h * g.h / d;
        let steps = (t / dt).ceil() as usize;
        let out = grid_diffuse_density(&g, d, t / steps as f64, steps).unwrap();
        let v0 = g.moments(0).1;
        assert!((out.moments(0).1 / (v0 + 2.0 * d * t) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn mass_drift_over_a_thousand_steps() {
        let g = DensityGrid::from_density_1d(-3.0, 3.0, 200, gaussian(0.5, 0.3)).unwrap();
        let out = grid_diffuse_density(&g, 0.1, 0.2 * g.h * g.h / 0.1, 1000).unwrap();
        assert!((out.total_mass() - 1.0).abs() < 1e-6);
        let out = grid_advect_density(&g, |x| vec![(3.0 * x[0]).sin()], 0.4 * g.h, 1000).unwrap();
        assert!((out.total_mass() - 1.0).abs() < 1e-6);
        out.validate(1e-6).unwrap();
    }

    #[test]
    fn limits_are_enforced() {
        let g = DensityGrid::from_density_1d(-1.0, 1.0, 20, |_| 1.0).unwrap();
        match grid_advect_density(&g, |_| vec![2.0], 0.06, 1).unwrap_err() {
            Error::Cfl { ratio, .. } => assert!((ratio - 1.2).abs() < 1e-12),
            e => panic!("unexpected {e}"),
        }
        assert!(matches!(
            grid_diffuse_density(&g, 1.0, 0.003, 1),
            Err(Error::Stability { .. })
        ));
    }

    #[test]
    fn two_dimensional_translation_and_diffusion() {
        let g = DensityGrid::from_density_2d(-4.0, 4.0, 80, |x, y| (-(x * x + y * y) / 0.5).exp()).unwrap();
        let out = grid_advect_density(&g, |_| vec![0.5, -0.25], 0.05, 40).unwrap();
        assert!((out.moments(0).0 - 1.0).abs() < g.h);
        assert!((out.moments(1).0 + 0.5).abs() < g.h);
        let d = 0.2;
        let dt = 0.2 * g.h * g.h / d;
        let out = grid_diffuse_density(&g, d, dt, 100).unwrap();
        for axis in 0..2 {
            let expect = g.moments(axis).1 + 2.0 * d * dt * 100.0;
            assert!((out.moments(axis).1 / expect - 1.0).abs() < 1e-3);
        }
        assert!((out.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_density_interpolation() {
        let g = DensityGrid {
            extents: vec![3],
            origin: vec![0.0],
            h: 1.0,
            mass: vec![0.2, 0.6, 0.2],
        };
        assert!((g.density_at(1.0) - 0.4).abs() < 1e-15);
        assert!((g.density_at(2.5) - 0.2).abs() < 1e-15);
        assert_eq!(g.density_at(0.2), 0.0);
        assert_eq!(g.to_csv().lines().nth(1), Some("0.5,0.2"));
    }
}
