//! Verification batteries for the linear parabolic solver, shared by the CLI
//! and the acceptance tests.

use rayon::prelude::*;

use crate::config::BatterySection;
use crate::error::Result;
use crate::grid::Grid;
use crate::rothe::{energy_certificates, manufactured, random_certificate_problem, rothe_march, EnergyReport};
use crate::solver::CgOptions;

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateOutcome {
    pub seed: u64,
    pub report: EnergyReport,
}

/// Random homogeneous-data problems on `dims` with `steps` Rothe steps each,
/// seeds `seed, seed + 1, ...`, solved in parallel.
pub fn certificate_battery(dims: [usize; 3], steps: usize, problems: usize, seed: u64, opts: CgOptions) -> Result<Vec<CertificateOutcome>> {
    let grid = Grid::new(dims[0], dims[1], dims[2], 1.0, 1.0, 0.0, 1.0)?;
    (0..problems as u64)
        .into_par_iter()
        .map(|i| {
            let s = seed.wrapping_add(i);
            let problem = random_certificate_problem(grid, steps, s)?;
            let traj = rothe_march(&problem, steps, opts)?;
            Ok(CertificateOutcome {
                seed: s,
                report: energy_certificates(&traj, &problem)?,
            })
        })
        .collect()
}

/// Smallest relative slack `slack / rhs` over both certificates and all outcomes.
pub fn worst_relative_slack(outcomes: &[CertificateOutcome]) -> f64 {
    outcomes
        .iter()
        .flat_map(|o| {
            let r = &o.report;
            [r.l2_slack() / r.l2_rhs, r.energy_slack() / r.energy_rhs]
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmsStudy {
    pub spatial_n: Vec<usize>,
    pub spatial_errors: Vec<f64>,
    pub spatial_orders: Vec<f64>,
    pub temporal_grid: usize,
    pub temporal_steps: Vec<usize>,
    pub temporal_errors: Vec<f64>,
    pub temporal_orders: Vec<f64>,
}

impl MmsStudy {
    pub fn min_spatial_order(&self) -> f64 {
        self.spatial_orders.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn min_temporal_order(&self) -> f64 {
        self.temporal_orders.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// CSV rows `kind,size,error,order` (order empty on the first rung).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,size,error,order\n");
        let mut rows = |kind: &str, sizes: &[usize], errs: &[f64], orders: &[f64]| {
            for (i, (n, e)) in sizes.iter().zip(errs).enumerate() {
                let o = if i == 0 { String::new() } else { format!("{:e}", orders[i - 1]) };
                s += &format!("{kind},{n},{e:e},{o}\n");
            }
        };
        rows("spatial", &self.spatial_n, &self.spatial_errors, &self.spatial_orders);
        rows("temporal", &self.temporal_steps, &self.temporal_errors, &self.temporal_orders);
        s
    }
}

/// Spatial ladder with the steady manufactured solution, temporal ladder
/// with the time-dependent one on a fixed grid. Rungs run in parallel.
pub fn mms_study(b: &BatterySection, opts: CgOptions) -> Result<MmsStudy> {
    b.validate()?;
    let spatial_errors = b
        .mms_ladder
        .par_iter()
        .map(|&n| manufactured::spatial_error(n, b.mms_spatial_steps, opts))
        .collect::<Result<Vec<_>>>()?;
    let temporal_errors = b
        .mms_temporal_steps
        .par_iter()
        .map(|&steps| manufactured::temporal_error(b.mms_temporal_grid, steps, opts))
        .collect::<Result<Vec<_>>>()?;
    let ratio_orders = |sizes: &[usize], errs: &[f64]| -> Vec<f64> {
        sizes
            .windows(2)
            .zip(errs.windows(2))
            .map(|(n, e)| (e[0] / e[1]).ln() / (n[1] as f64 / n[0] as f64).ln())
            .collect()
    };
    Ok(MmsStudy {
        spatial_orders: ratio_orders(&b.mms_ladder, &spatial_errors),
        spatial_n: b.mms_ladder.clone(),
        spatial_errors,
        temporal_orders: ratio_orders(&b.mms_temporal_steps, &temporal_errors),
        temporal_grid: b.mms_temporal_grid,
        temporal_steps: b.mms_temporal_steps.clone(),
        temporal_errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rothe::observed_orders;

    #[test]
    fn small_certificate_battery_passes() {
        let out = certificate_battery([5, 4, 6], 6, 4, 100, CgOptions::default()).unwrap();
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|o| o.report.pass()));
        assert!(worst_relative_slack(&out) >= -1e-10);
        assert_eq!(out, certificate_battery([5, 4, 6], 6, 4, 100, CgOptions::default()).unwrap());
    }

    #[test]
    fn orders_match_halving_formula() {
        let b = BatterySection {
            mms_ladder: vec![4, 8],
            mms_temporal_grid: 4,
            mms_temporal_steps: vec![4, 8],
            ..BatterySection::default()
        };
        let s = mms_study(&b, CgOptions::default()).unwrap();
        assert_eq!(s.spatial_orders, observed_orders(&s.spatial_errors));
        assert_eq!(s.temporal_orders, observed_orders(&s.temporal_errors));
        assert_eq!(s.to_csv().lines().count(), 5);
    }

    #[test]
    fn degenerate_ladder_rejected() {
        let b = BatterySection { mms_ladder: vec![1, 2], ..BatterySection::default() };
        assert!(mms_study(&b, CgOptions::default()).is_err());
    }
}
