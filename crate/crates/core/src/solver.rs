//! Jacobi-preconditioned conjugate gradients for `(shift I + L) x = rhs`.

use crate::error::{Error, Result};
use crate::ops::EllipticOperator;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    /// Relative residual target `||r|| <= tol ||rhs||`.
    pub tol: f64,
    /// Defaults to ten times the number of unknowns.
    pub max_iter: Option<usize>,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CgStats {
    pub iterations: usize,
    /// Final relative residual.
    pub residual: f64,
}

/// Tolerance on `|sum rhs| / sum |rhs|` for singular problems.
pub const COMPAT_TOL: f64 = 1e-8;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn remove_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    for x in v.iter_mut() {
        *x -= m;
    }
}

/// Solves `(shift I + L) x = rhs` starting from the contents of `x`.
///
/// When `shift == 0` and `L` annihilates constants, the right-hand side must
/// sum to zero (up to [`COMPAT_TOL`]) and the mean-zero solution is returned.
pub fn pcg(op: &EllipticOperator, shift: f64, rhs: &[f64], x: &mut [f64], opts: CgOptions) -> Result<CgStats> {
    let n = rhs.len();
    assert_eq!(x.len(), n, "solution and right-hand side lengths differ");
    let singular = shift == 0.0 && op.is_pure_neumann();
    let mut b = rhs.to_vec();
    if singular {
        let net: f64 = b.iter().sum();
        let scale: f64 = b.iter().map(|v| v.abs()).sum();
        if net.abs() > COMPAT_TOL * scale {
            return Err(Error::IncompatibleData {
                net: net * op.grid().cell_volume(),
            });
        }
        remove_mean(&mut b);
        remove_mean(x);
    }
    let bnorm = dot(&b, &b).sqrt();
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(CgStats::default());
    }
    let max_iter = opts.max_iter.unwrap_or(10 * n).max(1);
    let target = opts.tol * bnorm;

    let inv_diag: Vec<f64> = op
        .diagonal()
        .iter()
        .map(|d| {
            let d = d + shift;
            if d > 0.0 {
                1.0 / d
            } else {
                1.0
            }
        })
        .collect();

    let mut r = vec![0.0; n];
    op.apply_shifted(shift, x, &mut r);
    for (ri, bi) in r.iter_mut().zip(&b) {
        *ri = bi - *ri;
    }
    if singular {
        remove_mean(&mut r);
    }
    let mut rnorm = dot(&r, &r).sqrt();
    if rnorm <= target {
        return Ok(CgStats {
            iterations: 0,
            residual: rnorm / bnorm,
        });
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
    if singular {
        remove_mean(&mut z);
    }
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];

    for it in 1..=max_iter {
        op.apply_shifted(shift, &p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return Err(Error::SolverNoConvergence {
                iterations: it,
                residual: rnorm / bnorm,
            });
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        if singular {
            remove_mean(&mut r);
        }
        rnorm = dot(&r, &r).sqrt();
        if rnorm <= target {
            // confirm against the true residual to avoid drift
            let mut tr = vec![0.0; n];
            op.apply_shifted(shift, x, &mut tr);
            for (ti, bi) in tr.iter_mut().zip(&b) {
                *ti = bi - *ti;
            }
            if singular {
                remove_mean(&mut tr);
            }
            let true_norm = dot(&tr, &tr).sqrt();
            if true_norm <= target {
                if singular {
                    remove_mean(x);
                }
                return Ok(CgStats {
                    iterations: it,
                    residual: true_norm / bnorm,
                });
            }
            r = tr;
            rnorm = true_norm;
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        if singular {
            remove_mean(&mut z);
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverNoConvergence {
        iterations: max_iter,
        residual: rnorm / bnorm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::ops::BoundaryField;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn op(g: Grid, b: f64, alpha: f64) -> EllipticOperator {
        let faces = vec![1.5; g.nx * g.ny * (g.nz + 1)];
        EllipticOperator::new(g, 1.0, faces, vec![b; g.len()], BoundaryField::constant(&g, alpha)).unwrap()
    }

    #[test]
    fn solves_random_system() {
        let g = Grid::new(6, 5, 7, 1.0, 1.0, 0.0, 1.0).unwrap();
        let a = op(g, 0.3, 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let exact: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut rhs = vec![0.0; g.len()];
        a.apply_shifted(0.0, &exact, &mut rhs);
        let mut x = vec![0.0; g.len()];
        let st = pcg(&a, 0.0, &rhs, &mut x, CgOptions::default()).unwrap();
        assert!(st.residual <= 1e-10);
        let err = x.iter().zip(&exact).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let g = Grid::new(3, 3, 3, 1.0, 1.0, 0.0, 1.0).unwrap();
        let mut x = vec![1.0; g.len()];
        let st = pcg(&op(g, 1.0, 0.0), 0.0, &vec![0.0; g.len()], &mut x, CgOptions::default()).unwrap();
        assert_eq!(st.iterations, 0);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn singular_case() {
        let g = Grid::new(5, 4, 6, 1.0, 1.0, 0.0, 1.0).unwrap();
        let a = op(g, 0.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rhs: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bad = rhs.clone();
        let m = rhs.iter().sum::<f64>() / rhs.len() as f64;
        rhs.iter_mut().for_each(|v| *v -= m);
        let mut x = vec![0.0; g.len()];
        pcg(&a, 0.0, &rhs, &mut x, CgOptions::default()).unwrap();
        assert!(x.iter().sum::<f64>().abs() < 1e-10);
        let mut y = vec![0.0; g.len()];
        a.apply_shifted(0.0, &x, &mut y);
        assert!(y.iter().zip(&rhs).all(|(a, b)| (a - b).abs() < 1e-8));
        assert!(matches!(
            pcg(&a, 0.0, &bad, &mut x, CgOptions::default()),
            Err(Error::IncompatibleData { .. })
        ));
    }

    #[test]
    fn reports_non_convergence() {
        let g = Grid::new(8, 8, 8, 1.0, 1.0, 0.0, 1.0).unwrap();
        let a = op(g, 0.0, 1.0);
        let rhs: Vec<f64> = (0..g.len()).map(|i| (i % 7) as f64).collect();
        let mut x = vec![0.0; g.len()];
        let err = pcg(&a, 0.0, &rhs, &mut x, CgOptions { tol: 1e-14, max_iter: Some(2) }).unwrap_err();
        assert!(matches!(err, Error::SolverNoConvergence { iterations: 2, .. }));
        assert!(err.is_runtime());
    }
}
