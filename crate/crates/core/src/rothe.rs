//! Linear elliptic Robin problems on the cylinder and their implicit-Euler
//! (Rothe) time discretization, with the discrete energy estimates checked
//! on every trajectory.
//!
//! ```text
//! L u = -Lap_h u - d_p(a d_p u) + b u
//! d_n u + alpha u = phi   on the side walls
//! d_n u + beta u  = psi   on the top and bottom
//! ```
//!
//! Robin coefficients and data share one [`BoundaryField`]: wall faces carry
//! `alpha` / `phi`, top and bottom faces carry `beta` / `psi`.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{inner, l2_norm, Grid, ScalarField, Side};
use crate::ops::{BoundaryField, EllipticOperator};
use crate::solver::{pcg, CgOptions, CgStats};

#[derive(Debug, Clone, PartialEq)]
pub struct EllipticCoeffs {
    pub grid: Grid,
    /// Vertical coefficient per cell.
    pub a: Vec<f64>,
    /// Zeroth-order coefficient per cell.
    pub b: Vec<f64>,
    pub robin: BoundaryField,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
}

impl EllipticCoeffs {
    pub fn new(grid: Grid, a: Vec<f64>, b: Vec<f64>, robin: BoundaryField) -> Result<Self> {
        if a.len() != grid.len() || b.len() != grid.len() {
            return Err(Error::InvalidGrid("coefficient fields do not match the grid".into()));
        }
        if a.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParams("vertical coefficient must be positive and finite".into()));
        }
        if b.iter().chain(robin.iter().collect::<Vec<_>>().iter()).any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParams("b and the Robin coefficients must be nonnegative".into()));
        }
        let lambda_lo = a.iter().copied().fold(f64::INFINITY, f64::min);
        let lambda_hi = a
            .iter()
            .chain(&b)
            .copied()
            .chain(robin.iter())
            .fold(f64::NEG_INFINITY, f64::max);
        let c = Self {
            grid,
            a,
            b,
            robin,
            lambda_lo,
            lambda_hi,
        };
        c.operator()?;
        Ok(c)
    }

    pub fn constant(grid: Grid, a: f64, b: f64, robin: f64) -> Result<Self> {
        Self::new(grid, vec![a; grid.len()], vec![b; grid.len()], BoundaryField::constant(&grid, robin))
    }

    pub fn operator(&self) -> Result<EllipticOperator> {
        let faces = EllipticOperator::faces_from_cells(&self.grid, &self.a);
        EllipticOperator::new(self.grid, 1.0, faces, self.b.clone(), self.robin.clone())
    }
}

/// Right-hand side `f + boundary source` of the discrete problem.
fn assemble_rhs(op: &EllipticOperator, f: &ScalarField, data: &BoundaryField) -> Vec<f64> {
    let mut rhs = f.values.clone();
    op.add_boundary_source(data, &mut rhs);
    rhs
}

/// Solves `L u = f` with `B u = data`. In the pure-Neumann case the data
/// must be compatible and the mean-zero solution is returned.
pub fn elliptic_solve(
    coeffs: &EllipticCoeffs,
    f: &ScalarField,
    data: &BoundaryField,
    opts: CgOptions,
) -> Result<(ScalarField, CgStats)> {
    let op = coeffs.operator()?;
    let rhs = assemble_rhs(&op, f, data);
    let mut u = ScalarField::zeros(coeffs.grid);
    let stats = pcg(&op, 0.0, &rhs, &mut u.values, opts)?;
    Ok((u, stats))
}

/// Relative residual `||L u - rhs|| / ||rhs||` of the discrete weak form.
pub fn weak_residual(op: &EllipticOperator, u: &ScalarField, f: &ScalarField, data: &BoundaryField) -> f64 {
    let rhs = assemble_rhs(op, f, data);
    let lu = op.apply(u);
    let r: f64 = lu.values.iter().zip(&rhs).map(|(a, b)| (a - b).powi(2)).sum();
    let s: f64 = rhs.iter().map(|b| b * b).sum();
    if s == 0.0 {
        r.sqrt()
    } else {
        (r / s).sqrt()
    }
}

/// Largest residual over cells touching the boundary, relative to the
/// largest right-hand side entry. These rows carry `B U = Phi`.
pub fn boundary_residual(op: &EllipticOperator, u: &ScalarField, data: &BoundaryField) -> f64 {
    let g = op.grid();
    let rhs = assemble_rhs(op, &ScalarField::zeros(*g), data);
    let lu = op.apply(u);
    let scale = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut worst = 0.0f64;
    for side in Side::ALL {
        for f in 0..g.side_faces(side).0 {
            let (cell, _, _) = g.boundary_face(side, f);
            worst = worst.max((lu.values[cell] - rhs[cell]).abs());
        }
    }
    if scale == 0.0 {
        worst
    } else {
        worst / scale
    }
}

/// `U` with `L U = 0`, `B U = data`.
pub fn lift_boundary(coeffs: &EllipticCoeffs, data: &BoundaryField, opts: CgOptions) -> Result<ScalarField> {
    let op = coeffs.operator()?;
    if op.is_pure_neumann() {
        return Err(Error::InvalidParams(
            "boundary lifting needs b, alpha or beta positive somewhere".into(),
        ));
    }
    let rhs = assemble_rhs(&op, &ScalarField::zeros(coeffs.grid), data);
    let mut u = ScalarField::zeros(coeffs.grid);
    pcg(&op, 0.0, &rhs, &mut u.values, opts)?;
    Ok(u)
}

pub type SpaceTimeFn = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;
pub type BoundaryFn = Arc<dyn Fn(Side, f64, f64, f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Forcing {
    Zero,
    /// `f(x, y, p, t)`, averaged over each step by the midpoint rule.
    Analytic(SpaceTimeFn),
    /// Step averages `g^1 .. g^N`.
    Steps(Vec<ScalarField>),
}

#[derive(Clone)]
pub enum BoundaryData {
    Homogeneous,
    Steady(BoundaryField),
    /// `(side, x, y, p, t)`.
    Analytic(BoundaryFn),
}

/// Time-independent coefficients, forcing, boundary data and initial value.
#[derive(Clone)]
pub struct LinearParabolicProblem {
    pub coeffs: EllipticCoeffs,
    pub forcing: Forcing,
    pub boundary: BoundaryData,
    pub u0: ScalarField,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotheTrajectory {
    pub h: f64,
    pub v0: ScalarField,
    /// `v^1 .. v^N`.
    pub v_steps: Vec<ScalarField>,
    /// `g^1 .. g^N` after subtracting the lift's time derivative.
    pub g_steps: Vec<ScalarField>,
    /// Boundary lift: empty, one steady field, or `U(t_0) .. U(t_N)`.
    pub lift: Vec<ScalarField>,
    pub iterations: Vec<usize>,
    pub certificates: EnergyReport,
}

impl RotheTrajectory {
    pub fn steps(&self) -> usize {
        self.v_steps.len()
    }

    /// `u^k = v^k + U(t_k)`, `k = 0 .. N`.
    pub fn solution(&self, k: usize) -> ScalarField {
        let v = if k == 0 { &self.v0 } else { &self.v_steps[k - 1] };
        match self.lift.len() {
            0 => v.clone(),
            1 => v.zip_map(&self.lift[0], |a, b| a + b),
            _ => v.zip_map(&self.lift[k], |a, b| a + b),
        }
    }
}

fn sample_boundary(grid: &Grid, f: &BoundaryFn, t: f64) -> BoundaryField {
    BoundaryField::from_fn(grid, |s, x, y, p| f(s, x, y, p, t))
}

/// Implicit Euler with `N` steps of size `h = horizon / N`:
/// `(v^{k+1} - v^k)/h + L v^{k+1} = g^{k+1}`, homogeneous Robin data.
pub fn rothe_march(problem: &LinearParabolicProblem, n: usize, opts: CgOptions) -> Result<RotheTrajectory> {
    if n == 0 {
        return Err(Error::InvalidParams("the step count must be at least 1".into()));
    }
    if !(problem.horizon > 0.0 && problem.horizon.is_finite()) {
        return Err(Error::InvalidParams("the horizon must be positive".into()));
    }
    let grid = problem.coeffs.grid;
    if problem.u0.grid != grid {
        return Err(Error::InvalidGrid("initial value lives on a different grid".into()));
    }
    let op = problem.coeffs.operator()?;
    let h = problem.horizon / n as f64;

    let lift: Vec<ScalarField> = match &problem.boundary {
        BoundaryData::Homogeneous => Vec::new(),
        BoundaryData::Steady(d) => vec![lift_boundary(&problem.coeffs, d, opts)?],
        BoundaryData::Analytic(f) => (0..=n)
            .map(|k| lift_boundary(&problem.coeffs, &sample_boundary(&grid, f, k as f64 * h), opts))
            .collect::<Result<_>>()?,
    };
    if let Forcing::Steps(s) = &problem.forcing {
        if s.len() != n {
            return Err(Error::InvalidParams(format!("{} forcing steps given for N = {n}", s.len())));
        }
    }

    let v0 = match lift.first() {
        Some(u) => problem.u0.zip_map(u, |a, b| a - b),
        None => problem.u0.clone(),
    };
    let mut v_steps = Vec::with_capacity(n);
    let mut g_steps = Vec::with_capacity(n);
    let mut iterations = Vec::with_capacity(n);
    let mut v = v0.clone();
    for k in 0..n {
        let mut g = match &problem.forcing {
            Forcing::Zero => ScalarField::zeros(grid),
            Forcing::Analytic(f) => {
                let tm = (k as f64 + 0.5) * h;
                ScalarField::from_fn(grid, |x, y, p| f(x, y, p, tm))
            }
            Forcing::Steps(s) => s[k].clone(),
        };
        if lift.len() > 1 {
            for ((gi, a), b) in g.values.iter_mut().zip(&lift[k + 1].values).zip(&lift[k].values) {
                *gi -= (a - b) / h;
            }
        }
        let rhs: Vec<f64> = v.values.iter().zip(&g.values).map(|(vi, gi)| vi / h + gi).collect();
        let mut next = v.clone();
        let st = pcg(&op, 1.0 / h, &rhs, &mut next.values, opts).map_err(|e| Error::StepFailed {
            step: k + 1,
            source: Box::new(e),
        })?;
        iterations.push(st.iterations);
        g_steps.push(g);
        v_steps.push(next.clone());
        v = next;
    }
    let certificates = EnergyReport::compute(&op, &v0, &v_steps, &g_steps, h);
    Ok(RotheTrajectory {
        h,
        v0,
        v_steps,
        g_steps,
        lift,
        iterations,
        certificates,
    })
}

/// Both sides of the two discrete a priori estimates:
///
/// ```text
/// h lam sum ||grad v^k||^2 + max ||v^k||^2          <= 8 T ||g||^2 + 4 ||v0||^2
/// max <v^k, v^k>_a + h sum ||(v^{k+1} - v^k)/h||^2  <= ||g||^2 + <v0, v0>_a
/// ```
///
/// with `||g||^2 = h sum ||g^k||^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    pub steps: usize,
    pub h: f64,
    pub horizon: f64,
    pub lambda: f64,
    pub g_norm_sq: f64,
    pub v0_norm_sq: f64,
    pub v0_energy: f64,
    pub l2_lhs: f64,
    pub l2_rhs: f64,
    pub energy_lhs: f64,
    pub energy_rhs: f64,
}

/// Relative slack below which a certificate counts as failed.
pub const CERTIFICATE_TOL: f64 = 1e-10;

impl EnergyReport {
    pub fn compute(op: &EllipticOperator, v0: &ScalarField, v: &[ScalarField], g: &[ScalarField], h: f64) -> Self {
        let lambda = op.ellipticity();
        let n = v.len();
        let horizon = h * n as f64;
        let g_norm_sq = h * g.iter().map(|gk| inner(gk, gk)).sum::<f64>();
        let v0_norm_sq = inner(v0, v0);
        let v0_energy = op.bilinear(v0, v0);

        let grad_sum: f64 = h * lambda * v.iter().map(|vk| op.grad_norm_sq(vk)).sum::<f64>();
        let sup_l2 = v.iter().map(|vk| inner(vk, vk)).fold(0.0, f64::max);
        let sup_energy = v.iter().map(|vk| op.bilinear(vk, vk)).fold(0.0, f64::max);
        let mut incr = 0.0;
        let mut prev = v0;
        for vk in v {
            let d = vk.zip_map(prev, |a, b| (a - b) / h);
            incr += h * inner(&d, &d);
            prev = vk;
        }
        Self {
            steps: n,
            h,
            horizon,
            lambda,
            g_norm_sq,
            v0_norm_sq,
            v0_energy,
            l2_lhs: grad_sum + sup_l2,
            l2_rhs: 8.0 * horizon * g_norm_sq + 4.0 * v0_norm_sq,
            energy_lhs: sup_energy + incr,
            energy_rhs: g_norm_sq + v0_energy,
        }
    }

    pub fn l2_slack(&self) -> f64 {
        self.l2_rhs - self.l2_lhs
    }

    pub fn energy_slack(&self) -> f64 {
        self.energy_rhs - self.energy_lhs
    }

    pub fn l2_holds(&self) -> bool {
        self.l2_slack() >= -CERTIFICATE_TOL * self.l2_rhs
    }

    pub fn energy_holds(&self) -> bool {
        self.energy_slack() >= -CERTIFICATE_TOL * self.energy_rhs
    }

    pub fn pass(&self) -> bool {
        self.l2_holds() && self.energy_holds()
    }

    /// `key: value` lines.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let rows: [(&str, String); 13] = [
            ("steps", self.steps.to_string()),
            ("h", format!("{:e}", self.h)),
            ("horizon", format!("{:e}", self.horizon)),
            ("lambda", format!("{:e}", self.lambda)),
            ("g_norm_sq", format!("{:e}", self.g_norm_sq)),
            ("l2_lhs", format!("{:e}", self.l2_lhs)),
            ("l2_rhs", format!("{:e}", self.l2_rhs)),
            ("l2_slack", format!("{:e}", self.l2_slack())),
            ("energy_lhs", format!("{:e}", self.energy_lhs)),
            ("energy_rhs", format!("{:e}", self.energy_rhs)),
            ("energy_slack", format!("{:e}", self.energy_slack())),
            ("l2_pass", self.l2_holds().to_string()),
            ("energy_pass", self.energy_holds().to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k}: {v}");
        }
        s
    }
}

/// Recomputes the certificates of `traj` for `problem`.
pub fn energy_certificates(traj: &RotheTrajectory, problem: &LinearParabolicProblem) -> Result<EnergyReport> {
    let op = problem.coeffs.operator()?;
    Ok(EnergyReport::compute(&op, &traj.v0, &traj.v_steps, &traj.g_steps, traj.h))
}

/// Random homogeneous-data problem on `grid` with `n` forcing steps over a
/// unit horizon. Coefficients, forcing and initial value are drawn from
/// `seed`; about a third of the draws have `b = 0`.
pub fn random_certificate_problem(grid: Grid, n: usize, seed: u64) -> Result<LinearParabolicProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = grid.len();
    let a: Vec<f64> = (0..len).map(|_| rng.gen_range(0.2..3.0)).collect();
    let b_on = rng.gen_range(0..3) != 0;
    let b: Vec<f64> = (0..len).map(|_| if b_on { rng.gen_range(0.0..2.0) } else { 0.0 }).collect();
    let robin = BoundaryField::from_fn(&grid, |_, _, _, _| {
        if rng.gen_bool(0.3) {
            0.0
        } else {
            rng.gen_range(0.0..4.0)
        }
    });
    let coeffs = EllipticCoeffs::new(grid, a, b, robin)?;
    let gamp = rng.gen_range(0.0..5.0);
    let steps = (0..n)
        .map(|_| ScalarField::from_fn(grid, |_, _, _| gamp * rng.gen_range(-1.0..1.0)))
        .collect();
    let u0 = ScalarField::from_fn(grid, |_, _, _| rng.gen_range(-1.0..1.0));
    Ok(LinearParabolicProblem {
        coeffs,
        forcing: Forcing::Steps(steps),
        boundary: BoundaryData::Homogeneous,
        u0,
        horizon: 1.0,
    })
}

/// Observed orders `log2(e_i / e_{i+1})` for a ladder that halves the
/// step each time.
pub fn observed_orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

/// Smooth manufactured solution
/// `u = A(t) cos(kx x + cx) cos(ky y + cy) cos(kz s + cz)`, `s = (p - p1)/(p0 - p1)`,
/// for the operator with `a(p) = 1 + s / 2`, `b = 1`, and constant Robin
/// coefficients `alpha` on the walls and `beta` on top and bottom.
pub mod manufactured {
    use super::*;
    use std::f64::consts::PI;

    pub const ALPHA: f64 = 1.0;
    pub const BETA: f64 = 0.5;
    const K: [f64; 3] = [PI, PI, PI];
    const C: [f64; 3] = [0.3, -0.2, 0.4];

    /// Unit square times `p` in `[1, 2]`.
    pub fn grid(n: usize) -> Result<Grid> {
        Grid::new(n, n, n, 1.0, 1.0, 1.0, 2.0)
    }

    fn s(g: &Grid, p: f64) -> f64 {
        (p - g.p1) / (g.p0 - g.p1)
    }

    pub fn a_of(g: &Grid, p: f64) -> f64 {
        1.0 + 0.5 * s(g, p)
    }

    pub fn coeffs(g: Grid) -> Result<EllipticCoeffs> {
        let a = (0..g.len()).map(|n| a_of(&g, g.center(n).2)).collect();
        let robin = BoundaryField::from_fn(&g, |side, _, _, _| match side {
            Side::Top | Side::Bottom => BETA,
            _ => ALPHA,
        });
        EllipticCoeffs::new(g, a, vec![1.0; g.len()], robin)
    }

    fn parts(g: &Grid, x: f64, y: f64, p: f64) -> ([f64; 3], [f64; 3]) {
        let d = g.p0 - g.p1;
        let args = [K[0] * x / g.lx + C[0], K[1] * y / g.ly + C[1], K[2] * s(g, p) + C[2]];
        let scale = [K[0] / g.lx, K[1] / g.ly, K[2] / d];
        let v = args.map(f64::cos);
        let dv = [-scale[0] * args[0].sin(), -scale[1] * args[1].sin(), -scale[2] * args[2].sin()];
        (v, dv)
    }

    /// Spatial profile.
    pub fn phi(g: &Grid, x: f64, y: f64, p: f64) -> f64 {
        let (v, _) = parts(g, x, y, p);
        v[0] * v[1] * v[2]
    }

    /// `L phi`.
    pub fn l_phi(g: &Grid, x: f64, y: f64, p: f64) -> f64 {
        let d = g.p0 - g.p1;
        let (v, dv) = parts(g, x, y, p);
        let u = v[0] * v[1] * v[2];
        let kx2 = (K[0] / g.lx).powi(2);
        let ky2 = (K[1] / g.ly).powi(2);
        let kz2 = (K[2] / d).powi(2);
        let da = 0.5 / d;
        // -d_p(a d_p u) = -a' u_p - a u_pp, u_pp = -kz2 u
        let u_p = v[0] * v[1] * dv[2];
        (kx2 + ky2) * u - da * u_p + a_of(g, p) * kz2 * u + u
    }

    /// Robin data `d_n phi + coeff * phi` on each face.
    pub fn robin_data(g: &Grid, side: Side, x: f64, y: f64, p: f64) -> f64 {
        let (v, dv) = parts(g, x, y, p);
        let dn = match side {
            Side::West => -dv[0] * v[1] * v[2],
            Side::East => dv[0] * v[1] * v[2],
            Side::South => -v[0] * dv[1] * v[2],
            Side::North => v[0] * dv[1] * v[2],
            Side::Top => -v[0] * v[1] * dv[2],
            Side::Bottom => v[0] * v[1] * dv[2],
        };
        let c = match side {
            Side::Top | Side::Bottom => BETA,
            _ => ALPHA,
        };
        dn + c * v[0] * v[1] * v[2]
    }

    /// L2 error of the elliptic solve on an `n^3` grid.
    pub fn elliptic_error(n: usize, opts: CgOptions) -> Result<f64> {
        let g = grid(n)?;
        let c = coeffs(g)?;
        let f = ScalarField::from_fn(g, |x, y, p| l_phi(&g, x, y, p));
        let data = BoundaryField::from_fn(&g, |s, x, y, p| robin_data(&g, s, x, y, p));
        let (u, _) = elliptic_solve(&c, &f, &data, opts)?;
        let exact = ScalarField::from_fn(g, |x, y, p| phi(&g, x, y, p));
        Ok(l2_norm(&u.zip_map(&exact, |a, b| a - b)))
    }

    /// L2 error at the horizon for the steady solution `u = phi` marched
    /// from its own samples. Only the spatial error is visible.
    pub fn spatial_error(n: usize, steps: usize, opts: CgOptions) -> Result<f64> {
        let g = grid(n)?;
        let c = coeffs(g)?;
        let problem = LinearParabolicProblem {
            coeffs: c,
            forcing: Forcing::Analytic(Arc::new(move |x, y, p, _| l_phi(&g, x, y, p))),
            boundary: BoundaryData::Steady(BoundaryField::from_fn(&g, |s, x, y, p| robin_data(&g, s, x, y, p))),
            u0: ScalarField::from_fn(g, |x, y, p| phi(&g, x, y, p)),
            horizon: 1.0,
        };
        let traj = rothe_march(&problem, steps, opts)?;
        let exact = ScalarField::from_fn(g, |x, y, p| phi(&g, x, y, p));
        Ok(l2_norm(&traj.solution(steps).zip_map(&exact, |a, b| a - b)))
    }

    fn amp(t: f64) -> f64 {
        1.0 + 0.5 * (2.0 * PI * t).sin()
    }

    fn amp_dot(t: f64) -> f64 {
        PI * (2.0 * PI * t).cos()
    }

    /// L2 error at the horizon for `u = A(t) phi` with time-dependent
    /// forcing and boundary data.
    pub fn temporal_error(n: usize, steps: usize, opts: CgOptions) -> Result<f64> {
        let g = grid(n)?;
        let c = coeffs(g)?;
        let horizon = 1.0;
        let problem = LinearParabolicProblem {
            coeffs: c,
            forcing: Forcing::Analytic(Arc::new(move |x, y, p, t| {
                amp_dot(t) * phi(&g, x, y, p) + amp(t) * l_phi(&g, x, y, p)
            })),
            boundary: BoundaryData::Analytic(Arc::new(move |s, x, y, p, t| amp(t) * robin_data(&g, s, x, y, p))),
            u0: ScalarField::from_fn(g, |x, y, p| amp(0.0) * phi(&g, x, y, p)),
            horizon,
        };
        let traj = rothe_march(&problem, steps, opts)?;
        let exact = ScalarField::from_fn(g, |x, y, p| amp(horizon) * phi(&g, x, y, p));
        Ok(l2_norm(&traj.solution(steps).zip_map(&exact, |a, b| a - b)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::integrate;

    fn opts() -> CgOptions {
        CgOptions::default()
    }

    #[test]
    fn zero_data_zero_solution() {
        let g = Grid::new(4, 4, 4, 1.0, 1.0, 0.0, 1.0).unwrap();
        let c = EllipticCoeffs::constant(g, 1.0, 1.0, 0.0).unwrap();
        let (u, _) = elliptic_solve(&c, &ScalarField::zeros(g), &BoundaryField::zeros(&g), opts()).unwrap();
        assert!(u.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_solves_helmholtz_neumann() {
        let g = Grid::new(5, 4, 6, 1.0, 1.0, 0.0, 1.0).unwrap();
        let c = EllipticCoeffs::constant(g, 1.0, 1.0, 0.0).unwrap();
        let (u, st) = elliptic_solve(&c, &ScalarField::constant(g, 1.0), &BoundaryField::zeros(&g), opts()).unwrap();
        assert!(u.values.iter().all(|v| (v - 1.0).abs() < 1e-9));
        let op = c.operator().unwrap();
        assert!(weak_residual(&op, &u, &ScalarField::constant(g, 1.0), &BoundaryField::zeros(&g)) <= st.residual * 1.01 + 1e-15);
    }

    #[test]
    fn pure_neumann_constraint_and_rejection() {
        let g = Grid::new(6, 4, 5, 1.0, 1.0, 0.0, 1.0).unwrap();
        let c = EllipticCoeffs::constant(g, 1.3, 0.0, 0.0).unwrap();
        let f = ScalarField::from_fn(g, |x, _, p| (std::f64::consts::PI * x).cos() + (p - 0.5));
        let f = f.map(|v| v); // mean is already zero up to quadrature
        let m = integrate(&f) / g.volume();
        let f = f.map(|v| v - m);
        let (u, _) = elliptic_solve(&c, &f, &BoundaryField::zeros(&g), opts()).unwrap();
        assert!(integrate(&u).abs() <= 1e-10);
        let bad = ScalarField::constant(g, 1.0);
        assert!(matches!(
            elliptic_solve(&c, &bad, &BoundaryField::zeros(&g), opts()),
            Err(Error::IncompatibleData { .. })
        ));
    }

    #[test]
    fn elliptic_mms_order() {
        let e: Vec<f64> = [8, 16, 32]
            .iter()
            .map(|&n| manufactured::elliptic_error(n, opts()).unwrap())
            .collect();
        let o = observed_orders(&e);
        assert!(o.iter().all(|&x| x >= 1.8), "{e:?} {o:?}");
    }

    #[test]
    fn lifting() {
        let g = Grid::new(5, 5, 5, 1.0, 1.0, 0.0, 1.0).unwrap();
        let c = EllipticCoeffs::constant(g, 1.0, 0.0, 2.0).unwrap();
        let z = lift_boundary(&c, &BoundaryField::zeros(&g), opts()).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));
        // phi = alpha * c everywhere -> U = c
        let u = lift_boundary(&c, &BoundaryField::constant(&g, 2.0 * 0.75), opts()).unwrap();
        assert!(u.values.iter().all(|v| (v - 0.75).abs() < 1e-9));
        let data = BoundaryField::from_fn(&g, |_, x, y, p| (x + 2.0 * y).sin() + p * p);
        let u = lift_boundary(&c, &data, opts()).unwrap();
        assert!(boundary_residual(&c.operator().unwrap(), &u, &data) <= 10.0 * opts().tol);
        let pure = EllipticCoeffs::constant(g, 1.0, 0.0, 0.0).unwrap();
        assert!(lift_boundary(&pure, &data, opts()).is_err());
    }

    #[test]
    fn constants_are_steady() {
        let g = Grid::new(4, 4, 4, 1.0, 1.0, 0.0, 1.0).unwrap();
        let problem = LinearParabolicProblem {
            coeffs: EllipticCoeffs::constant(g, 2.0, 0.0, 0.0).unwrap(),
            forcing: Forcing::Zero,
            boundary: BoundaryData::Homogeneous,
            u0: ScalarField::constant(g, 3.5),
            horizon: 1.0,
        };
        let t = rothe_march(&problem, 5, opts()).unwrap();
        for v in &t.v_steps {
            assert!(v.values.iter().all(|x| (x - 3.5).abs() < 1e-12));
        }
        assert!(t.certificates.pass());
    }

    #[test]
    fn scalar_ode_reduction() {
        let g = Grid::new(3, 3, 3, 1.0, 1.0, 0.0, 1.0).unwrap();
        let gamma = 2.0;
        let n = 10;
        let problem = LinearParabolicProblem {
            coeffs: EllipticCoeffs::constant(g, 1.0, 1.0, 0.0).unwrap(),
            forcing: Forcing::Analytic(Arc::new(move |_, _, _, _| gamma)),
            boundary: BoundaryData::Homogeneous,
            u0: ScalarField::zeros(g),
            horizon: 1.0,
        };
        let t = rothe_march(&problem, n, opts()).unwrap();
        let h = t.h;
        assert!((t.v_steps[0].values[0] - gamma * h / (1.0 + h)).abs() < 1e-12);
        let mut prev = 0.0;
        let mut exact = 0.0;
        for v in &t.v_steps {
            exact = (exact + h * gamma) / (1.0 + h);
            let x = v.values[5];
            assert!(x > prev && x < gamma);
            assert!((x - exact).abs() < 1e-11);
            prev = x;
        }
    }

    #[test]
    fn zero_data_certificate_trivial() {
        let g = Grid::new(3, 3, 3, 1.0, 1.0, 0.0, 1.0).unwrap();
        let problem = LinearParabolicProblem {
            coeffs: EllipticCoeffs::constant(g, 1.0, 0.5, 1.0).unwrap(),
            forcing: Forcing::Zero,
            boundary: BoundaryData::Homogeneous,
            u0: ScalarField::zeros(g),
            horizon: 1.0,
        };
        let t = rothe_march(&problem, 3, opts()).unwrap();
        let c = t.certificates;
        assert_eq!((c.l2_lhs, c.l2_rhs, c.energy_lhs, c.energy_rhs), (0.0, 0.0, 0.0, 0.0));
        assert!(c.pass());
        assert!(c.to_key_value().contains("l2_pass: true"));
    }

    #[test]
    fn random_certificates_small() {
        let g = Grid::new(6, 5, 7, 1.0, 1.0, 0.0, 1.0).unwrap();
        for seed in 0..6 {
            let p = random_certificate_problem(g, 8, seed).unwrap();
            let t = rothe_march(&p, 8, opts()).unwrap();
            assert!(t.certificates.pass(), "{}", t.certificates.to_key_value());
            assert!(t.certificates.l2_slack() > 0.0);
            assert_eq!(energy_certificates(&t, &p).unwrap(), t.certificates);
        }
    }

    #[test]
    fn discrete_maximum_principle() {
        let g = Grid::new(6, 4, 6, 1.0, 1.0, 0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let a: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(0.1..5.0)).collect();
            let robin = BoundaryField::from_fn(&g, |_, _, _, _| rng.gen_range(0.0..3.0));
            let coeffs = EllipticCoeffs::new(g, a, vec![0.0; g.len()], robin).unwrap();
            let steps = (0..4).map(|_| ScalarField::from_fn(g, |_, _, _| rng.gen_range(0.0..1.0))).collect();
            let mut u0 = ScalarField::from_fn(g, |_, _, _| rng.gen_range(0.0..1.0));
            u0.values[3] = 0.0;
            let problem = LinearParabolicProblem {
                coeffs,
                forcing: Forcing::Steps(steps),
                boundary: BoundaryData::Homogeneous,
                u0,
                horizon: 0.5,
            };
            let t = rothe_march(&problem, 4, opts()).unwrap();
            assert!(t.v_steps.iter().all(|v| v.min() >= -1e-12));
        }
    }

    #[test]
    fn deterministic() {
        let g = Grid::new(5, 4, 5, 1.0, 1.0, 0.0, 1.0).unwrap();
        let p = random_certificate_problem(g, 4, 99).unwrap();
        let a = rothe_march(&p, 4, opts()).unwrap();
        let b = rothe_march(&p, 4, opts()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_input() {
        let g = Grid::new(3, 3, 3, 1.0, 1.0, 0.0, 1.0).unwrap();
        let p = random_certificate_problem(g, 2, 1).unwrap();
        assert!(rothe_march(&p, 0, opts()).is_err());
        assert!(rothe_march(&p, 3, opts()).is_err());
        assert!(EllipticCoeffs::constant(g, 0.0, 1.0, 0.0).is_err());
        assert!(EllipticCoeffs::constant(g, 1.0, -1.0, 0.0).is_err());
    }

    #[test]
    fn solver_failure_carries_step() {
        let g = Grid::new(6, 6, 6, 1.0, 1.0, 0.0, 1.0).unwrap();
        let p = random_certificate_problem(g, 2, 5).unwrap();
        let err = rothe_march(&p, 2, CgOptions { tol: 1e-14, max_iter: Some(1) }).unwrap_err();
        assert!(matches!(err, Error::StepFailed { step: 1, .. }));
    }
}
