//! Rain fall-out `d_p(V (p / Tbar) q_r)`, upwinded along the fall direction.

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::thermo::{BackgroundProfile, PhysicalParams};

/// Per-level fall rate `|V| p_k / (Tbar_k dp)` and the direction of fall.
#[derive(Debug, Clone)]
pub struct Sedimentation {
    grid: Grid,
    rate: Vec<f64>,
    /// Rain moves toward increasing `k` (toward `p0`) when true.
    downward: bool,
}

impl Sedimentation {
    pub fn new(grid: Grid, params: &PhysicalParams, profile: &BackgroundProfile) -> Result<Self> {
        if profile.tbar.len() != grid.nz {
            return Err(Error::MismatchedLevels {
                expected: grid.nz,
                got: profile.tbar.len(),
            });
        }
        let v = params.v_sed;
        let rate = (0..grid.nz)
            .map(|k| v.abs() * grid.p_center(k) / (profile.tbar[k] * grid.dp))
            .collect();
        Ok(Self {
            grid,
            rate,
            downward: v >= 0.0,
        })
    }

    /// Outflow rate of each cell, for implicit treatment.
    pub fn outflow_rates(&self) -> Vec<f64> {
        let plane = self.grid.nx * self.grid.ny;
        (0..self.grid.len()).map(|n| self.rate[n / plane]).collect()
    }

    /// Inflow from the upstream neighbour.
    pub fn inflow(&self, q: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let plane = g.nx * g.ny;
        let mut out = vec![0.0; g.len()];
        for (n, o) in out.iter_mut().enumerate() {
            let k = n / plane;
            if self.downward && k > 0 {
                *o = self.rate[k - 1] * q[n - plane];
            } else if !self.downward && k + 1 < g.nz {
                *o = self.rate[k + 1] * q[n + plane];
            }
        }
        out
    }

    /// `d_p(V (p / Tbar) q)` per cell.
    pub fn tendency(&self, q: &ScalarField) -> ScalarField {
        let out = self.outflow_rates();
        let inn = self.inflow(&q.values);
        let values = (0..q.values.len()).map(|n| out[n] * q.values[n] - inn[n]).collect();
        ScalarField { grid: q.grid, values }
    }

    /// Mass leaving through the outflow boundary per unit time,
    /// `sum |V| (p / Tbar) q dA` over the exit faces.
    pub fn boundary_outflow(&self, q: &ScalarField) -> f64 {
        let g = &self.grid;
        let plane = g.nx * g.ny;
        let k = if self.downward { g.nz - 1 } else { 0 };
        let area = g.dx * g.dy;
        (0..plane)
            .map(|m| self.rate[k] * g.dp * q.values[m + plane * k] * area)
            .sum()
    }
}

/// `d_p(V (p / Tbar) q_r)`: zero flux at `p1`, outflow through `p0` for
/// `V > 0` (and the mirror image for `V < 0`).
pub fn apply_sedimentation(q_r: &ScalarField, params: &PhysicalParams, profile: &BackgroundProfile) -> Result<ScalarField> {
    Ok(Sedimentation::new(q_r.grid, params, profile)?.tendency(q_r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::integrate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(nz: usize, v: f64) -> (Grid, PhysicalParams, BackgroundProfile) {
        let g = Grid::new(3, 2, nz, 1.0, 1.0, 5e4, 1e5).unwrap();
        let params = PhysicalParams {
            v_sed: v,
            ..PhysicalParams::default()
        };
        let profile = BackgroundProfile::linear(&g, 250.0, 290.0).unwrap();
        (g, params, profile)
    }

    #[test]
    fn trivial_cases() {
        let (g, p, prof) = setup(6, 3.0);
        assert!(apply_sedimentation(&ScalarField::zeros(g), &p, &prof).unwrap().values.iter().all(|&x| x == 0.0));
        let (g, p, prof) = setup(6, 0.0);
        let q = ScalarField::constant(g, 1e-3);
        assert!(apply_sedimentation(&q, &p, &prof).unwrap().values.iter().all(|&x| x == 0.0));
    }

    fn uniform_error(nz: usize) -> f64 {
        let g = Grid::new(2, 2, nz, 1.0, 1.0, 5e4, 1e5).unwrap();
        let params = PhysicalParams {
            v_sed: 2.0,
            ..PhysicalParams::default()
        };
        let prof = BackgroundProfile::new(vec![270.0; nz]).unwrap();
        let q = ScalarField::from_fn(g, |_, _, p| 1e-3 * (1.0 + (p / 1e5).powi(2)));
        let s = apply_sedimentation(&q, &params, &prof).unwrap();
        // d_p(V p q / T) with q = c (1 + (p/p0)^2)
        let plane = g.nx * g.ny;
        let mut err: f64 = 0.0;
        for k in 1..nz {
            let p = g.p_center(k);
            let exact = 2.0 * 1e-3 / 270.0 * (1.0 + 3.0 * (p / 1e5).powi(2));
            err = err.max((s.values[k * plane] - exact).abs());
        }
        err
    }

    #[test]
    fn uniform_rain_interior_tendency() {
        let (g, params, _) = setup(8, 3.0);
        let prof = BackgroundProfile::new(vec![280.0; 8]).unwrap();
        let s = apply_sedimentation(&ScalarField::constant(g, 2e-3), &params, &prof).unwrap();
        let plane = g.nx * g.ny;
        for n in plane..(g.len()) {
            assert!((s.values[n] - 3.0 * 2e-3 / 280.0).abs() < 1e-15);
        }
    }

    #[test]
    fn upwind_convergence() {
        let e: Vec<f64> = [16, 32, 64].iter().map(|&n| uniform_error(n)).collect();
        for w in e.windows(2) {
            assert!((w[0] / w[1]).log2() >= 0.9, "{e:?}");
        }
    }

    #[test]
    fn conservation_up_to_outflow() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for v in [3.0, -1.5] {
            let (g, params, prof) = setup(7, v);
            let sed = Sedimentation::new(g, &params, &prof).unwrap();
            let q = ScalarField::from_fn(g, |_, _, _| rng.gen_range(0.0..1e-2));
            let total = integrate(&sed.tendency(&q));
            let out = sed.boundary_outflow(&q);
            assert!((total - out).abs() <= 1e-12 * out.abs().max(1e-30), "{total} vs {out}");
        }
    }

    #[test]
    fn level_mismatch() {
        let (g, params, _) = setup(4, 1.0);
        let prof = BackgroundProfile::new(vec![280.0; 3]).unwrap();
        assert!(apply_sedimentation(&ScalarField::zeros(g), &params, &prof).is_err());
    }
}
