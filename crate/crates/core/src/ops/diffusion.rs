//! Cell-centred second-order diffusion with Robin closure by ghost cells.
//!
//! The operator is
//!
//! ```text
//! L u = -div_h(kh grad_h u) - d_p(a d_p u) + b u
//! ```
//!
//! with `d_n u + alpha u = phi` on every exterior face. A ghost value `g`
//! mirrored across a face at distance `h` from the interior centre `f`
//! satisfies `(g - f)/h + alpha (g + f)/2 = phi`, which eliminates to an
//! outward normal derivative `(phi - alpha f) / (1 + alpha h / 2)`. The
//! resulting matrix is symmetric with nonnegative diagonal excess, so the
//! shifted operator `c I + L` is an M-matrix for any `c > 0`.

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, Side, WeightProfile};
use crate::thermo::{exner, Diffusivity, PhysicalParams};

/// Per-face values on each of the six sides, numbered as in
/// [`Grid::boundary_face`].
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryField {
    sides: [Vec<f64>; 6],
}

fn side_slot(side: Side) -> usize {
    match side {
        Side::West => 0,
        Side::East => 1,
        Side::South => 2,
        Side::North => 3,
        Side::Top => 4,
        Side::Bottom => 5,
    }
}

impl BoundaryField {
    pub fn zeros(grid: &Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        Self {
            sides: Side::ALL.map(|s| vec![c; grid.side_faces(s).0]),
        }
    }

    /// Evaluates `f(side, x, y, p)` at every face centre.
    pub fn from_fn(grid: &Grid, mut f: impl FnMut(Side, f64, f64, f64) -> f64) -> Self {
        Self {
            sides: Side::ALL.map(|s| {
                (0..grid.side_faces(s).0)
                    .map(|n| {
                        let (_, _, (x, y, p)) = grid.boundary_face(s, n);
                        f(s, x, y, p)
                    })
                    .collect()
            }),
        }
    }

    pub fn side(&self, side: Side) -> &[f64] {
        &self.sides[side_slot(side)]
    }

    pub fn side_mut(&mut self, side: Side) -> &mut [f64] {
        &mut self.sides[side_slot(side)]
    }

    pub fn zip_map(&self, other: &BoundaryField, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = self.clone();
        for (o, b) in out.sides.iter_mut().zip(&other.sides) {
            for (x, y) in o.iter_mut().zip(b) {
                *x = f(*x, *y);
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for s in out.sides.iter_mut() {
            for x in s.iter_mut() {
                *x = f(*x);
            }
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.sides.iter().flatten().copied()
    }

    pub fn max(&self) -> f64 {
        self.iter().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.iter().fold(f64::INFINITY, f64::min)
    }

    fn check_shape(&self, grid: &Grid) -> Result<()> {
        for s in Side::ALL {
            if self.side(s).len() != grid.side_faces(s).0 {
                return Err(Error::InvalidGrid(format!(
                    "boundary data on {s:?} has {} faces, grid has {}",
                    self.side(s).len(),
                    grid.side_faces(s).0
                )));
            }
        }
        Ok(())
    }
}

/// Robin coefficient and target value for one prognostic variable:
/// `d_n q = alpha (b - q)` on every face, i.e. `phi = alpha b`.
/// The top side (`p = p1`) always carries `alpha = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct RobinBc {
    pub alpha: BoundaryField,
    pub data: BoundaryField,
}

impl RobinBc {
    /// Homogeneous Neumann on every side.
    pub fn neumann(grid: &Grid) -> Self {
        Self {
            alpha: BoundaryField::zeros(grid),
            data: BoundaryField::zeros(grid),
        }
    }

    /// Constant coefficients: `alpha_0, b_0` on the bottom, `alpha_ll, b_ll`
    /// on the side walls, zero flux on the top.
    pub fn uniform(grid: &Grid, alpha_0: f64, b_0: f64, alpha_ll: f64, b_ll: f64) -> Result<Self> {
        let bc = Self {
            alpha: BoundaryField::from_fn(grid, |s, _, _, _| match s {
                Side::Top => 0.0,
                Side::Bottom => alpha_0,
                _ => alpha_ll,
            }),
            data: BoundaryField::from_fn(grid, |s, _, _, _| match s {
                Side::Top => 0.0,
                Side::Bottom => b_0,
                _ => b_ll,
            }),
        };
        bc.validate(grid)?;
        Ok(bc)
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        self.alpha.check_shape(grid)?;
        self.data.check_shape(grid)?;
        if self.alpha.iter().chain(self.data.iter()).any(|v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParams(
                "Robin coefficients and boundary data must be finite and nonnegative".into(),
            ));
        }
        if self.alpha.side(Side::Top).iter().any(|&a| a != 0.0) {
            return Err(Error::InvalidParams("the top boundary is zero-flux; alpha must be 0 there".into()));
        }
        Ok(())
    }

    /// `phi = alpha * b` on every face.
    pub fn flux_data(&self) -> BoundaryField {
        self.alpha.zip_map(&self.data, |a, b| a * b)
    }

    /// Largest boundary target value on the sides where the condition acts
    /// (bottom and walls).
    pub fn data_sup(&self) -> f64 {
        [Side::West, Side::East, Side::South, Side::North, Side::Bottom]
            .iter()
            .flat_map(|&s| self.data.side(s).iter().copied())
            .fold(0.0, f64::max)
    }
}

/// Boundary conditions for `T`, `q_v`, `q_c`, `q_r` in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct RobinBCSet {
    pub vars: [RobinBc; 4],
}

impl RobinBCSet {
    pub fn neumann(grid: &Grid) -> Self {
        Self {
            vars: std::array::from_fn(|_| RobinBc::neumann(grid)),
        }
    }
}

/// Ghost value outside a face whose interior neighbour holds `interior`, for
/// `d_n u = alpha (data - u)` at spacing `h`. `alpha = 0` gives the mirror.
#[inline]
pub fn robin_ghost(interior: f64, alpha: f64, data: f64, h: f64) -> f64 {
    (alpha * data + interior * (1.0 / h - 0.5 * alpha)) / (1.0 / h + 0.5 * alpha)
}

/// [`robin_ghost`] for face `face` on `side` of `f`.
pub fn robin_ghost_at(f: &ScalarField, bc: &RobinBc, side: Side, face: usize) -> f64 {
    let (cell, h, _) = f.grid.boundary_face(side, face);
    robin_ghost(f.values[cell], bc.alpha.side(side)[face], bc.data.side(side)[face], h)
}

/// Symmetric diffusion operator with Robin closure, applied matrix-free.
#[derive(Debug, Clone)]
pub struct EllipticOperator {
    grid: Grid,
    kh: f64,
    /// Vertical coefficient on the `nx * ny * (nz + 1)` horizontal faces,
    /// `k = 0` at `p1`.
    a_face: Vec<f64>,
    b: Vec<f64>,
    alpha: BoundaryField,
    /// Diagonal of `L`.
    diag: Vec<f64>,
    /// Multiplier turning boundary data `phi` into a right-hand side term.
    bnd_gain: BoundaryField,
}

impl EllipticOperator {
    pub fn new(grid: Grid, kh: f64, a_face: Vec<f64>, b: Vec<f64>, alpha: BoundaryField) -> Result<Self> {
        if !(kh > 0.0 && kh.is_finite()) {
            return Err(Error::InvalidParams(format!("horizontal coefficient must be positive, got {kh}")));
        }
        if a_face.len() != grid.nx * grid.ny * (grid.nz + 1) {
            return Err(Error::InvalidGrid("vertical face coefficient has the wrong length".into()));
        }
        if a_face.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidParams("vertical coefficient must be positive".into()));
        }
        if b.len() != grid.len() || b.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParams("zeroth-order coefficient must be nonnegative per cell".into()));
        }
        alpha.check_shape(&grid)?;
        if alpha.iter().any(|v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParams("Robin coefficients must be nonnegative".into()));
        }

        let (nx, ny, nz) = (grid.nx, grid.ny, grid.nz);
        let cx = kh / (grid.dx * grid.dx);
        let cy = kh / (grid.dy * grid.dy);
        let dp2 = grid.dp * grid.dp;
        let mut diag = b.clone();
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let n = grid.idx(i, j, k);
                    let mut d = 0.0;
                    if i > 0 {
                        d += cx;
                    }
                    if i + 1 < nx {
                        d += cx;
                    }
                    if j > 0 {
                        d += cy;
                    }
                    if j + 1 < ny {
                        d += cy;
                    }
                    if k > 0 {
                        d += a_face[grid.idx(i, j, k)] / dp2;
                    }
                    if k + 1 < nz {
                        d += a_face[grid.idx(i, j, k) + nx * ny] / dp2;
                    }
                    diag[n] += d;
                }
            }
        }

        let mut bnd_gain = BoundaryField::zeros(&grid);
        for side in Side::ALL {
            for f in 0..grid.side_faces(side).0 {
                let (cell, h, _) = grid.boundary_face(side, f);
                let coeff = match side {
                    Side::Top => a_face[cell],
                    Side::Bottom => a_face[cell + nx * ny],
                    _ => kh,
                };
                let al = alpha.side(side)[f];
                let gain = coeff / (h * (1.0 + 0.5 * al * h));
                bnd_gain.side_mut(side)[f] = gain;
                diag[cell] += gain * al;
            }
        }

        Ok(Self {
            grid,
            kh,
            a_face,
            b,
            alpha,
            diag,
            bnd_gain,
        })
    }

    /// Face coefficients from a cell field: arithmetic mean on interior faces,
    /// linear extrapolation from the two nearest cells on the top and bottom
    /// faces (floored at half the adjacent value).
    pub fn faces_from_cells(grid: &Grid, a: &[f64]) -> Vec<f64> {
        let plane = grid.nx * grid.ny;
        let nz = grid.nz;
        let edge = |near: f64, next: f64| (1.5 * near - 0.5 * next).max(0.5 * near);
        let mut out = vec![0.0; plane * (nz + 1)];
        for k in 0..=nz {
            for m in 0..plane {
                let cell = |kk: usize| a[m + plane * kk];
                out[m + plane * k] = if nz == 1 && (k == 0 || k == 1) {
                    cell(0)
                } else if k == 0 {
                    edge(cell(0), cell(1))
                } else if k == nz {
                    edge(cell(nz - 1), cell(nz - 2))
                } else {
                    0.5 * (cell(k - 1) + cell(k))
                };
            }
        }
        out
    }

    /// Moisture-equation operator: `kh = mu`, `a = nu * w_face^2` with the
    /// face weight the arithmetic mean of the adjacent level weights.
    pub fn weighted(grid: Grid, diff: Diffusivity, w: &WeightProfile, bc: &RobinBc) -> Result<Self> {
        if w.w.len() != grid.nz {
            return Err(Error::MismatchedLevels {
                expected: grid.nz,
                got: w.w.len(),
            });
        }
        bc.validate(&grid)?;
        let plane = grid.nx * grid.ny;
        let mut a_face = vec![0.0; plane * (grid.nz + 1)];
        for k in 0..=grid.nz {
            let wf = if k == 0 {
                w.w[0]
            } else if k == grid.nz {
                w.w[grid.nz - 1]
            } else {
                0.5 * (w.w[k - 1] + w.w[k])
            };
            let a = diff.nu * wf * wf;
            a_face[plane * k..plane * (k + 1)].fill(a);
        }
        Self::new(grid, diff.mu, a_face, vec![0.0; grid.len()], bc.alpha.clone())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn horizontal_coeff(&self) -> f64 {
        self.kh
    }

    pub fn alpha(&self) -> &BoundaryField {
        &self.alpha
    }

    pub fn zeroth_order(&self) -> &[f64] {
        &self.b
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Smallest diffusion coefficient, horizontal or vertical.
    pub fn ellipticity(&self) -> f64 {
        self.a_face.iter().copied().fold(self.kh, f64::min)
    }

    /// Whether the operator annihilates constants (no `b`, no Robin terms).
    pub fn is_pure_neumann(&self) -> bool {
        self.b.iter().all(|&v| v == 0.0) && self.alpha.iter().all(|v| v == 0.0)
    }

    /// Operator with an extra zeroth-order term added cell by cell.
    pub fn with_added_reaction(&self, extra: &[f64]) -> Self {
        let mut out = self.clone();
        for ((b, d), e) in out.b.iter_mut().zip(out.diag.iter_mut()).zip(extra) {
            *b += e;
            *d += e;
        }
        out
    }

    /// `out = shift * u + L u` with homogeneous boundary data.
    pub fn apply_shifted(&self, shift: f64, u: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let (nx, ny, nz) = (g.nx, g.ny, g.nz);
        let plane = nx * ny;
        let cx = self.kh / (g.dx * g.dx);
        let cy = self.kh / (g.dy * g.dy);
        let dp2 = g.dp * g.dp;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let n = g.idx(i, j, k);
                    let mut acc = (shift + self.diag[n]) * u[n];
                    if i > 0 {
                        acc -= cx * u[n - 1];
                    }
                    if i + 1 < nx {
                        acc -= cx * u[n + 1];
                    }
                    if j > 0 {
                        acc -= cy * u[n - nx];
                    }
                    if j + 1 < ny {
                        acc -= cy * u[n + nx];
                    }
                    if k > 0 {
                        acc -= self.a_face[n] / dp2 * u[n - plane];
                    }
                    if k + 1 < nz {
                        acc -= self.a_face[n + plane] / dp2 * u[n + plane];
                    }
                    out[n] = acc;
                }
            }
        }
    }

    pub fn apply(&self, u: &ScalarField) -> ScalarField {
        let mut out = ScalarField::zeros(self.grid);
        self.apply_shifted(0.0, &u.values, &mut out.values);
        out
    }

    /// Right-hand-side contribution of boundary data `phi` (`d_n u + alpha u = phi`).
    pub fn boundary_source(&self, phi: &BoundaryField) -> ScalarField {
        let mut out = ScalarField::zeros(self.grid);
        self.add_boundary_source(phi, &mut out.values);
        out
    }

    pub fn add_boundary_source(&self, phi: &BoundaryField, out: &mut [f64]) {
        for side in Side::ALL {
            let gain = self.bnd_gain.side(side);
            for (f, &ph) in phi.side(side).iter().enumerate() {
                if ph != 0.0 {
                    let (cell, _, _) = self.grid.boundary_face(side, f);
                    out[cell] += gain[f] * ph;
                }
            }
        }
    }

    /// Diffusion tendency `-L u + boundary source` for data `phi`.
    pub fn diffusion(&self, u: &ScalarField, phi: &BoundaryField) -> ScalarField {
        let mut out = self.apply(u);
        for v in out.values.iter_mut() {
            *v = -*v;
        }
        self.add_boundary_source(phi, &mut out.values);
        out
    }

    /// Outward normal derivative at each boundary face for data `phi`.
    pub fn normal_derivative(&self, u: &ScalarField, phi: &BoundaryField) -> BoundaryField {
        let mut out = BoundaryField::zeros(&self.grid);
        for side in Side::ALL {
            for f in 0..self.grid.side_faces(side).0 {
                let (cell, h, _) = self.grid.boundary_face(side, f);
                let al = self.alpha.side(side)[f];
                out.side_mut(side)[f] = (phi.side(side)[f] - al * u.values[cell]) / (1.0 + 0.5 * al * h);
            }
        }
        out
    }

    /// Face values `(u + ghost)/2` at each boundary face for data `phi`.
    pub fn face_values(&self, u: &ScalarField, phi: &BoundaryField) -> BoundaryField {
        let dn = self.normal_derivative(u, phi);
        let mut out = BoundaryField::zeros(&self.grid);
        for side in Side::ALL {
            for f in 0..self.grid.side_faces(side).0 {
                let (cell, h, _) = self.grid.boundary_face(side, f);
                out.side_mut(side)[f] = u.values[cell] + 0.5 * h * dn.side(side)[f];
            }
        }
        out
    }

    /// Symmetric energy form, summed face by face:
    /// interior fluxes, boundary Robin terms and the zeroth-order term.
    pub fn bilinear(&self, u: &ScalarField, v: &ScalarField) -> f64 {
        let g = &self.grid;
        let (nx, ny, nz) = (g.nx, g.ny, g.nz);
        let plane = nx * ny;
        let vol = g.cell_volume();
        let (u, v) = (&u.values, &v.values);
        let mut s = 0.0;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let n = g.idx(i, j, k);
                    if i + 1 < nx {
                        s += self.kh * (u[n + 1] - u[n]) * (v[n + 1] - v[n]) / (g.dx * g.dx) * vol;
                    }
                    if j + 1 < ny {
                        s += self.kh * (u[n + nx] - u[n]) * (v[n + nx] - v[n]) / (g.dy * g.dy) * vol;
                    }
                    if k + 1 < nz {
                        s += self.a_face[n + plane] * (u[n + plane] - u[n]) * (v[n + plane] - v[n])
                            / (g.dp * g.dp)
                            * vol;
                    }
                    s += self.b[n] * u[n] * v[n] * vol;
                }
            }
        }
        for side in Side::ALL {
            let (count, area) = g.side_faces(side);
            for f in 0..count {
                let (cell, h, _) = g.boundary_face(side, f);
                let al = self.alpha.side(side)[f];
                if al != 0.0 {
                    let gain = self.bnd_gain.side(side)[f] * h;
                    s += gain * al * u[cell] * v[cell] * area;
                }
            }
        }
        s
    }

    /// Discrete `||grad u||^2` over interior faces.
    pub fn grad_norm_sq(&self, u: &ScalarField) -> f64 {
        let g = &self.grid;
        let (nx, ny, nz) = (g.nx, g.ny, g.nz);
        let plane = nx * ny;
        let u = &u.values;
        let mut s = 0.0;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let n = g.idx(i, j, k);
                    if i + 1 < nx {
                        s += ((u[n + 1] - u[n]) / g.dx).powi(2);
                    }
                    if j + 1 < ny {
                        s += ((u[n + nx] - u[n]) / g.dy).powi(2);
                    }
                    if k + 1 < nz {
                        s += ((u[n + plane] - u[n]) / g.dp).powi(2);
                    }
                }
            }
        }
        s * g.cell_volume()
    }
}

/// `mu Lap_h f + nu d_p(w^2 d_p f)` with Robin closure from `bc`.
pub fn apply_diffusion(f: &ScalarField, diff: Diffusivity, w: &WeightProfile, bc: &RobinBc) -> Result<ScalarField> {
    let op = EllipticOperator::weighted(f.grid, diff, w, bc)?;
    Ok(op.diffusion(f, &bc.flux_data()))
}

/// Exner factor `(p/p0_pt)^kappa` per level.
pub fn exner_levels(grid: &Grid, params: &PhysicalParams) -> Vec<f64> {
    grid.p_centers().iter().map(|&p| exner(p, params)).collect()
}

/// Multiplies every level `k` of `f` by `factor[k]`.
pub fn scale_levels(f: &ScalarField, factor: &[f64]) -> ScalarField {
    let plane = f.grid.nx * f.grid.ny;
    let mut out = f.clone();
    for (n, v) in out.values.iter_mut().enumerate() {
        *v *= factor[n / plane];
    }
    out
}

/// Potential-temperature diffusion
/// `mu Lap_h theta + nu (p0/p)^kappa d_p(w^2 d_p((p/p0)^kappa theta))`.
///
/// `bc` is stated for temperature; with `T = exner * theta` the operator is
/// the temperature diffusion of `exner * theta` divided by `exner`.
pub fn apply_theta_diffusion(
    theta: &ScalarField,
    diff: Diffusivity,
    w: &WeightProfile,
    params: &PhysicalParams,
    bc: &RobinBc,
) -> Result<ScalarField> {
    let ex = exner_levels(&theta.grid, params);
    let t = scale_levels(theta, &ex);
    let dt = apply_diffusion(&t, diff, w, bc)?;
    let inv: Vec<f64> = ex.iter().map(|e| 1.0 / e).collect();
    Ok(scale_levels(&dt, &inv))
}
