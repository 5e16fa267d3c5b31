//! Prescribed velocity on cell faces and first-order upwind transport.

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use std::f64::consts::PI;

/// Staggered velocity: `u` on x-faces, `v` on y-faces, `omega` on p-faces.
///
/// Construction checks the discrete continuity equation and the no-flux
/// condition, so every value of this type satisfies both.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    grid: Grid,
    u: Vec<f64>,
    v: Vec<f64>,
    omega: Vec<f64>,
}

/// Absolute divergence bound, scaled by `max(1, |vel| / h)`.
pub const DIVERGENCE_TOL: f64 = 1e-12;

impl VelocityField {
    pub fn zeros(grid: Grid) -> Self {
        let (nx, ny, nz) = (grid.nx, grid.ny, grid.nz);
        Self {
            grid,
            u: vec![0.0; (nx + 1) * ny * nz],
            v: vec![0.0; nx * (ny + 1) * nz],
            omega: vec![0.0; nx * ny * (nz + 1)],
        }
    }

    /// Face arrays in the layouts of [`u_index`](Self::u_index),
    /// [`v_index`](Self::v_index) and [`omega_index`](Self::omega_index).
    pub fn new(grid: Grid, u: Vec<f64>, v: Vec<f64>, omega: Vec<f64>) -> Result<Self> {
        let (nx, ny, nz) = (grid.nx, grid.ny, grid.nz);
        if u.len() != (nx + 1) * ny * nz || v.len() != nx * (ny + 1) * nz || omega.len() != nx * ny * (nz + 1) {
            return Err(Error::VelocityInvariant("face arrays do not match the grid".into()));
        }
        if u.iter().chain(&v).chain(&omega).any(|x| !x.is_finite()) {
            return Err(Error::VelocityInvariant("non-finite component".into()));
        }
        let vel = Self { grid, u, v, omega };
        vel.check()?;
        Ok(vel)
    }

    fn check(&self) -> Result<()> {
        let g = &self.grid;
        let (nx, ny, nz) = (g.nx, g.ny, g.nz);
        for k in 0..nz {
            for j in 0..ny {
                for (i, label) in [(0, "west"), (nx, "east")] {
                    if self.u[self.u_index(i, j, k)] != 0.0 {
                        return Err(Error::VelocityInvariant(format!("nonzero normal flow on the {label} wall")));
                    }
                }
            }
            for i in 0..nx {
                for (j, label) in [(0, "south"), (ny, "north")] {
                    if self.v[self.v_index(i, j, k)] != 0.0 {
                        return Err(Error::VelocityInvariant(format!("nonzero normal flow on the {label} wall")));
                    }
                }
            }
        }
        for j in 0..ny {
            for i in 0..nx {
                for (k, label) in [(0, "top"), (nz, "bottom")] {
                    if self.omega[self.omega_index(i, j, k)] != 0.0 {
                        return Err(Error::VelocityInvariant(format!("nonzero normal flow on the {label} boundary")));
                    }
                }
            }
        }
        let div = discrete_divergence(self);
        let scale = self.max_rate().max(1.0);
        let worst = div.values.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        if worst > DIVERGENCE_TOL * scale {
            return Err(Error::VelocityInvariant(format!("discrete divergence {worst:e} exceeds tolerance")));
        }
        Ok(())
    }

    /// Largest `|component| / spacing`.
    fn max_rate(&self) -> f64 {
        let g = &self.grid;
        let m = |xs: &[f64], h: f64| xs.iter().fold(0.0f64, |a, x| a.max(x.abs())) / h;
        m(&self.u, g.dx).max(m(&self.v, g.dy)).max(m(&self.omega, g.dp))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn u_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + (self.grid.nx + 1) * (j + self.grid.ny * k)
    }

    #[inline]
    pub fn v_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.grid.nx * (j + (self.grid.ny + 1) * k)
    }

    /// `k = 0` is the face at `p1`.
    #[inline]
    pub fn omega_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.grid.nx * (j + self.grid.ny * k)
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    /// Pressure velocity interpolated to cell centres.
    pub fn omega_at_centers(&self) -> ScalarField {
        let g = self.grid;
        let plane = g.nx * g.ny;
        let mut out = ScalarField::zeros(g);
        for (n, o) in out.values.iter_mut().enumerate() {
            *o = 0.5 * (self.omega[n] + self.omega[n + plane]);
        }
        out
    }

    /// Sum of outgoing face rates per cell, `sum(max(vel_n, 0) * area) / volume`.
    pub fn outflow_rates(&self) -> Vec<f64> {
        let g = &self.grid;
        let mut out = vec![0.0; g.len()];
        self.for_each_face(|from, to, rate| {
            // rate > 0 means flow from `from` to `to`
            if rate > 0.0 {
                out[from] += rate;
            } else if let Some(t) = to {
                out[t] -= rate;
            }
        });
        out
    }

    /// Upwind inflow `sum(max(-vel_n, 0) f_nb area) / volume` per cell.
    pub fn inflow(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        self.for_each_face(|from, to, rate| {
            if let Some(t) = to {
                if rate > 0.0 {
                    out[t] += rate * f[from];
                } else {
                    out[from] -= rate * f[t];
                }
            }
        });
        out
    }

    /// Calls `visit(a, b, rate)` for every interior face between cells `a`
    /// and `b`, with `rate = vel_n / h` (positive from `a` into `b`).
    /// Exterior faces carry zero flow and are skipped.
    fn for_each_face(&self, mut visit: impl FnMut(usize, Option<usize>, f64)) {
        let g = &self.grid;
        let (nx, ny, nz) = (g.nx, g.ny, g.nz);
        let plane = nx * ny;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let n = g.idx(i, j, k);
                    if i + 1 < nx {
                        visit(n, Some(n + 1), self.u[self.u_index(i + 1, j, k)] / g.dx);
                    }
                    if j + 1 < ny {
                        visit(n, Some(n + nx), self.v[self.v_index(i, j + 1, k)] / g.dy);
                    }
                    if k + 1 < nz {
                        visit(n, Some(n + plane), self.omega[self.omega_index(i, j, k + 1)] / g.dp);
                    }
                }
            }
        }
    }

    /// Largest per-cell Courant number `dt * outflow rate`.
    pub fn cfl(&self, dt: f64) -> f64 {
        dt * self.outflow_rates().into_iter().fold(0.0, f64::max)
    }
}

/// Flux sum per cell divided by the cell volume.
pub fn discrete_divergence(vel: &VelocityField) -> ScalarField {
    let g = vel.grid;
    let mut out = ScalarField::zeros(g);
    for k in 0..g.nz {
        for j in 0..g.ny {
            for i in 0..g.nx {
                let du = vel.u[vel.u_index(i + 1, j, k)] - vel.u[vel.u_index(i, j, k)];
                let dv = vel.v[vel.v_index(i, j + 1, k)] - vel.v[vel.v_index(i, j, k)];
                let dw = vel.omega[vel.omega_index(i, j, k + 1)] - vel.omega[vel.omega_index(i, j, k)];
                out.values[g.idx(i, j, k)] = du / g.dx + dv / g.dy + dw / g.dp;
            }
        }
    }
    out
}

/// Overturning cell in the (x, p) plane from the nodal streamfunction
/// `psi = A sin(pi x / Lx) sin(pi (p - p1) / (p0 - p1))`, with
/// `u = d_p psi` and `omega = -d_x psi` as node differences. The divergence
/// then telescopes to zero and boundary nodes carry `psi = 0` exactly.
pub fn make_convection_cell(grid: Grid, amplitude: f64) -> Result<VelocityField> {
    if !amplitude.is_finite() {
        return Err(Error::InvalidParams("convection-cell amplitude must be finite".into()));
    }
    let (nx, ny, nz) = (grid.nx, grid.ny, grid.nz);
    let psi = |i: usize, k: usize| -> f64 {
        if i == 0 || i == nx || k == 0 || k == nz {
            return 0.0;
        }
        let x = i as f64 * grid.dx;
        let s = (grid.p_face(k) - grid.p1) / (grid.p0 - grid.p1);
        amplitude * (PI * x / grid.lx).sin() * (PI * s).sin()
    };
    let mut vel = VelocityField::zeros(grid);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..=nx {
                let n = vel.u_index(i, j, k);
                vel.u[n] = (psi(i, k + 1) - psi(i, k)) / grid.dp;
            }
        }
    }
    for k in 0..=nz {
        for j in 0..ny {
            for i in 0..nx {
                let n = vel.omega_index(i, j, k);
                vel.omega[n] = -(psi(i + 1, k) - psi(i, k)) / grid.dx;
            }
        }
    }
    vel.check()?;
    Ok(vel)
}

/// Convection cell scaled so that `cfl(dt)` equals `target`.
pub fn convection_cell_for_cfl(grid: Grid, dt: f64, target: f64) -> Result<VelocityField> {
    if !(dt > 0.0 && target >= 0.0) {
        return Err(Error::InvalidParams("need dt > 0 and a nonnegative CFL target".into()));
    }
    let unit = make_convection_cell(grid, 1.0)?;
    let c = unit.cfl(dt);
    if c == 0.0 {
        return Ok(unit);
    }
    make_convection_cell(grid, target / c)
}

/// First-order upwind flux-form transport `div(vel f)`.
pub fn advect(f: &ScalarField, vel: &VelocityField) -> Result<ScalarField> {
    if f.grid != vel.grid {
        return Err(Error::InvalidGrid("field and velocity live on different grids".into()));
    }
    let out_rate = vel.outflow_rates();
    let inflow = vel.inflow(&f.values);
    let mut out = ScalarField::zeros(f.grid);
    for (n, o) in out.values.iter_mut().enumerate() {
        *o = out_rate[n] * f.values[n] - inflow[n];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{integrate, l2_norm, linf_norm};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cell_grid() -> Grid {
        Grid::new(32, 4, 32, 1.0, 1.0, 5e4, 1e5).unwrap()
    }

    #[test]
    fn zero_amplitude_is_zero() {
        let v = make_convection_cell(cell_grid(), 0.0).unwrap();
        assert!(v.u().iter().chain(v.v()).chain(v.omega()).all(|&x| x == 0.0));
    }

    #[test]
    fn convection_cell_is_divergence_free() {
        for a in [1.0, 1e3, 5e4] {
            let v = make_convection_cell(cell_grid(), a).unwrap();
            assert!(linf_norm(&discrete_divergence(&v)) <= 1e-12);
            assert!(v.omega().iter().any(|&x| x != 0.0));
        }
    }

    #[test]
    fn rejects_bad_fields() {
        let g = Grid::new(3, 2, 3, 1.0, 1.0, 0.0, 1.0).unwrap();
        let mut vel = VelocityField::zeros(g);
        let (u, v, mut w) = (vel.u.clone(), vel.v.clone(), vel.omega.clone());
        w[0] = 1.0;
        assert!(matches!(VelocityField::new(g, u.clone(), v.clone(), w), Err(Error::VelocityInvariant(_))));
        // interior face only: nonzero divergence
        let mut u2 = u.clone();
        let n = vel.u_index(1, 0, 0);
        u2[n] = 1.0;
        assert!(VelocityField::new(g, u2, v.clone(), vel.omega.clone()).is_err());
        vel.omega.pop();
        assert!(VelocityField::new(g, u, v, vel.omega).is_err());
    }

    #[test]
    fn zero_velocity_and_constants() {
        let g = cell_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = ScalarField::from_fn(g, |_, _, _| rng.gen::<f64>());
        assert!(advect(&f, &VelocityField::zeros(g)).unwrap().values.iter().all(|&x| x == 0.0));
        let vel = make_convection_cell(g, 2e3).unwrap();
        let c = advect(&ScalarField::constant(g, 0.37), &vel).unwrap();
        assert!(linf_norm(&c) <= 1e-12, "{}", linf_norm(&c));
    }

    #[test]
    fn global_conservation() {
        let g = cell_grid();
        let vel = make_convection_cell(g, 2e3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let f = ScalarField::from_fn(g, |_, _, _| rng.gen_range(-1.0..1.0));
            let a = advect(&f, &vel).unwrap();
            assert!(integrate(&a).abs() <= 1e-12 * l2_norm(&f));
        }
    }

    #[test]
    fn cfl_targeting() {
        let g = Grid::new(24, 4, 24, 1.0, 1.0, 5e4, 1e5).unwrap();
        let vel = convection_cell_for_cfl(g, 0.1, 0.45).unwrap();
        assert!((vel.cfl(0.1) - 0.45).abs() < 1e-12);
    }

    #[test]
    fn upwind_matrix_has_nonpositive_offdiagonals() {
        // outflow on the diagonal, inflow weights nonnegative
        let g = Grid::new(8, 2, 8, 1.0, 1.0, 0.0, 1.0).unwrap();
        let vel = make_convection_cell(g, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f: Vec<f64> = (0..g.len()).map(|_| rng.gen::<f64>()).collect();
        assert!(vel.inflow(&f).iter().all(|&x| x >= 0.0));
        assert!(vel.outflow_rates().iter().all(|&x| x >= 0.0));
    }
}
