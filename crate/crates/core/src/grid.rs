//! Cylinder discretization, cell-centred scalar fields and the discrete norms.
//!
//! The horizontal cross-section is the rectangle `[0, lx] x [0, ly]`; the
//! vertical coordinate is pressure on `(p1, p0)`. Cell index `k` grows with
//! pressure, so `k = 0` touches the top boundary (`p = p1`) and `k = nz - 1`
//! touches the bottom boundary (`p = p0`).

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::thermo::{BackgroundProfile, PhysicalParams};

/// Boundary classification of an exterior face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    /// Side walls `(x, y) on the rectangle edge`.
    GammaLateral,
    /// Bottom, `p = p0`.
    Gamma0,
    /// Top, `p = p1`.
    Gamma1,
}

/// One of the six sides of the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    West,
    East,
    South,
    North,
    /// `p = p1`
    Top,
    /// `p = p0`
    Bottom,
}

impl Side {
    pub const ALL: [Side; 6] = [
        Side::West,
        Side::East,
        Side::South,
        Side::North,
        Side::Top,
        Side::Bottom,
    ];

    pub fn tag(self) -> BoundaryTag {
        match self {
            Side::West | Side::East | Side::South | Side::North => BoundaryTag::GammaLateral,
            Side::Top => BoundaryTag::Gamma1,
            Side::Bottom => BoundaryTag::Gamma0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub lx: f64,
    pub ly: f64,
    pub p1: f64,
    pub p0: f64,
    pub dx: f64,
    pub dy: f64,
    pub dp: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, nz: usize, lx: f64, ly: f64, p1: f64, p0: f64) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::InvalidGrid(format!(
                "cell counts must be positive, got {nx}x{ny}x{nz}"
            )));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "horizontal extents must be positive, got lx={lx}, ly={ly}"
            )));
        }
        if !(p1 < p0 && p1.is_finite() && p0.is_finite()) {
            return Err(Error::InvalidGrid(format!("need p1 < p0, got p1={p1}, p0={p0}")));
        }
        Ok(Self {
            nx,
            ny,
            nz,
            lx,
            ly,
            p1,
            p0,
            dx: lx / nx as f64,
            dy: ly / ny as f64,
            dp: (p0 - p1) / nz as f64,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index, x fastest.
    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny && k < self.nz);
        i + self.nx * (j + self.ny * k)
    }

    #[inline]
    pub fn ijk(&self, n: usize) -> (usize, usize, usize) {
        let i = n % self.nx;
        let j = (n / self.nx) % self.ny;
        let k = n / (self.nx * self.ny);
        (i, j, k)
    }

    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.dx * self.dy * self.dp
    }

    pub fn volume(&self) -> f64 {
        self.lx * self.ly * (self.p0 - self.p1)
    }

    #[inline]
    pub fn x_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx
    }

    #[inline]
    pub fn y_center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dy
    }

    #[inline]
    pub fn p_center(&self, k: usize) -> f64 {
        self.p1 + (k as f64 + 0.5) * self.dp
    }

    /// Pressure of the horizontal face below cell `k - 1` and above cell `k`;
    /// `k = 0` is `p1`, `k = nz` is `p0`.
    #[inline]
    pub fn p_face(&self, k: usize) -> f64 {
        if k == self.nz {
            self.p0
        } else {
            self.p1 + k as f64 * self.dp
        }
    }

    pub fn p_centers(&self) -> Vec<f64> {
        (0..self.nz).map(|k| self.p_center(k)).collect()
    }

    /// Cell-centre coordinates `(x, y, p)` of flat index `n`.
    pub fn center(&self, n: usize) -> (f64, f64, f64) {
        let (i, j, k) = self.ijk(n);
        (self.x_center(i), self.y_center(j), self.p_center(k))
    }

    /// Number of faces on a side and the area of each.
    pub fn side_faces(&self, side: Side) -> (usize, f64) {
        match side {
            Side::West | Side::East => (self.ny * self.nz, self.dy * self.dp),
            Side::South | Side::North => (self.nx * self.nz, self.dx * self.dp),
            Side::Top | Side::Bottom => (self.nx * self.ny, self.dx * self.dy),
        }
    }

    pub fn exterior_face_count(&self) -> usize {
        Side::ALL.iter().map(|&s| self.side_faces(s).0).sum()
    }

    /// Cell adjacent to face `f` on `side`, the normal spacing, and the face
    /// centre coordinates.
    ///
    /// Face numbering: West/East by `(j, k)` with `j` fastest, South/North by
    /// `(i, k)` with `i` fastest, Top/Bottom by `(i, j)` with `i` fastest.
    pub fn boundary_face(&self, side: Side, f: usize) -> (usize, f64, (f64, f64, f64)) {
        match side {
            Side::West | Side::East => {
                let (j, k) = (f % self.ny, f / self.ny);
                let (i, x) = if side == Side::West {
                    (0, 0.0)
                } else {
                    (self.nx - 1, self.lx)
                };
                (self.idx(i, j, k), self.dx, (x, self.y_center(j), self.p_center(k)))
            }
            Side::South | Side::North => {
                let (i, k) = (f % self.nx, f / self.nx);
                let (j, y) = if side == Side::South {
                    (0, 0.0)
                } else {
                    (self.ny - 1, self.ly)
                };
                (self.idx(i, j, k), self.dy, (self.x_center(i), y, self.p_center(k)))
            }
            Side::Top | Side::Bottom => {
                let (i, j) = (f % self.nx, f / self.nx);
                let (k, p) = if side == Side::Top {
                    (0, self.p1)
                } else {
                    (self.nz - 1, self.p0)
                };
                (self.idx(i, j, k), self.dp, (self.x_center(i), self.y_center(j), p))
            }
        }
    }

    /// Tag of every exterior face, side by side.
    pub fn boundary_tags(&self) -> impl Iterator<Item = (Side, usize, BoundaryTag)> + '_ {
        Side::ALL
            .into_iter()
            .flat_map(move |s| (0..self.side_faces(s).0).map(move |f| (s, f, s.tag())))
    }
}

/// Cell-centred scalar data on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(f64, f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|n| {
                let (x, y, p) = grid.center(n);
                f(x, y, p)
            })
            .collect();
        Self { grid, values }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Centred vertical derivative, one-sided in the first and last level.
    pub fn vertical_derivative(&self) -> ScalarField {
        let g = self.grid;
        let mut out = ScalarField::zeros(g);
        if g.nz < 2 {
            return out;
        }
        for k in 0..g.nz {
            let (km, kp, span) = if k == 0 {
                (0, 1, g.dp)
            } else if k == g.nz - 1 {
                (k - 1, k, g.dp)
            } else {
                (k - 1, k + 1, 2.0 * g.dp)
            };
            for j in 0..g.ny {
                for i in 0..g.nx {
                    out.values[g.idx(i, j, k)] =
                        (self.values[g.idx(i, j, kp)] - self.values[g.idx(i, j, km)]) / span;
                }
            }
        }
        out
    }

    /// Writes the plain-text snapshot: header `nx ny nz Lx Ly p1 p0`, then one
    /// value per line in x-fastest order. Values use the shortest decimal
    /// representation that reads back to the same `f64`.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let g = &self.grid;
        let mut buf = String::with_capacity(24 * (g.len() + 1));
        writeln!(buf, "{} {} {} {:e} {:e} {:e} {:e}", g.nx, g.ny, g.nz, g.lx, g.ly, g.p1, g.p0)
            .expect("write to String");
        for v in &self.values {
            writeln!(buf, "{v:e}").expect("write to String");
        }
        w.write_all(buf.as_bytes())
    }

    pub fn read_snapshot<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty snapshot".into()))??;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 7 {
            return Err(Error::Parse(format!("malformed snapshot header: {header:?}")));
        }
        let count = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Parse(format!("bad cell count {s:?}: {e}")))
        };
        let real = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad header value {s:?}: {e}")))
        };
        let grid = Grid::new(
            count(h[0])?,
            count(h[1])?,
            count(h[2])?,
            real(h[3])?,
            real(h[4])?,
            real(h[5])?,
            real(h[6])?,
        )?;
        let mut values = Vec::with_capacity(grid.len());
        for line in lines {
            for tok in line?.split_whitespace() {
                values.push(
                    tok.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("bad value {tok:?}: {e}")))?,
                );
            }
        }
        ScalarField::from_values(grid, values)
    }
}

/// The prognostic quadruple.
#[derive(Debug, Clone, PartialEq)]
pub struct StateFields {
    pub t: ScalarField,
    pub qv: ScalarField,
    pub qc: ScalarField,
    pub qr: ScalarField,
}

impl StateFields {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            t: ScalarField::zeros(grid),
            qv: ScalarField::zeros(grid),
            qc: ScalarField::zeros(grid),
            qr: ScalarField::zeros(grid),
        }
    }

    pub fn grid(&self) -> Grid {
        self.t.grid
    }

    pub fn fields(&self) -> [&ScalarField; 4] {
        [&self.t, &self.qv, &self.qc, &self.qr]
    }

    pub fn fields_mut(&mut self) -> [&mut ScalarField; 4] {
        [&mut self.t, &mut self.qv, &mut self.qc, &mut self.qr]
    }

    pub fn is_finite(&self) -> bool {
        self.fields().iter().all(|f| f.is_finite())
    }

    /// Physical-state check: every field at or above `-nonneg_tol`.
    pub fn is_physical(&self, nonneg_tol: f64) -> bool {
        self.fields().iter().all(|f| f.min() >= -nonneg_tol)
    }
}

pub const DEFAULT_NONNEG_TOL: f64 = 1e-10;

/// Per-level weight `g p / (R Tbar(p))` at the cell-centre pressures.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightProfile {
    pub w: Vec<f64>,
}

impl WeightProfile {
    pub fn new(grid: &Grid, params: &PhysicalParams, profile: &BackgroundProfile) -> Result<Self> {
        if profile.tbar.len() != grid.nz {
            return Err(Error::MismatchedLevels {
                expected: grid.nz,
                got: profile.tbar.len(),
            });
        }
        let w = (0..grid.nz)
            .map(|k| params.g * grid.p_center(k) / (params.r * profile.tbar[k]))
            .collect();
        Ok(Self { w })
    }

    pub fn uniform(nz: usize, value: f64) -> Self {
        Self { w: vec![value; nz] }
    }

    pub fn min(&self) -> f64 {
        self.w.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.w.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Midpoint-rule integral over the cylinder.
pub fn integrate(f: &ScalarField) -> f64 {
    f.values.iter().sum::<f64>() * f.grid.cell_volume()
}

pub fn inner(f: &ScalarField, g: &ScalarField) -> f64 {
    debug_assert_eq!(f.grid, g.grid);
    f.values.iter().zip(&g.values).map(|(a, b)| a * b).sum::<f64>() * f.grid.cell_volume()
}

pub fn l2_norm(f: &ScalarField) -> f64 {
    inner(f, f).sqrt()
}

pub fn linf_norm(f: &ScalarField) -> f64 {
    f.values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn lm_norm(f: &ScalarField, m: f64) -> Result<f64> {
    if !(m >= 1.0) {
        return Err(Error::InvalidNormOrder(m));
    }
    if m == 2.0 {
        return Ok(l2_norm(f));
    }
    let s = f.values.iter().map(|v| v.abs().powf(m)).sum::<f64>() * f.grid.cell_volume();
    Ok(s.powf(1.0 / m))
}

/// Discrete `|| w * g_p ||_{L2}` for a vertical-derivative field `g_p`.
pub fn weighted_vertical_seminorm(g_p: &ScalarField, w: &WeightProfile) -> Result<f64> {
    let g = g_p.grid;
    if w.w.len() != g.nz {
        return Err(Error::MismatchedLevels {
            expected: g.nz,
            got: w.w.len(),
        });
    }
    let plane = g.nx * g.ny;
    let s: f64 = g_p
        .values
        .iter()
        .enumerate()
        .map(|(n, v)| {
            let wv = w.w[n / plane] * v;
            wv * wv
        })
        .sum();
    Ok((s * g.cell_volume()).sqrt())
}
