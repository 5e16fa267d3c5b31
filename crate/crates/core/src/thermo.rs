//! Thermodynamic closures: Clausius-Clapeyron saturation pressure, saturation
//! mixing ratio with cutoff and cap, potential temperature, background profile.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Horizontal and vertical diffusivity of one prognostic variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diffusivity {
    pub mu: f64,
    pub nu: f64,
}

/// Physical and closure constants.
///
/// Only `t0_ref = 273.15 K` is a value commonly fixed for this model; the
/// other defaults are standard literature values (gas constants, heat
/// capacity, latent heat, gravity, `es0`) or artifact choices sized for
/// desk-scale runs (rates, thresholds, diffusivities, cutoffs).
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalParams {
    pub r: f64,
    pub r_v: f64,
    pub c_p: f64,
    pub latent_heat: f64,
    pub g: f64,
    pub t0_ref: f64,
    pub es0: f64,
    pub t_floor: f64,
    /// Upper end of the temperature range where the saturation law is trusted.
    /// Informational only; never enforced.
    pub t_hi_valid: f64,
    pub qvs_cap: f64,
    /// `e_s >= sat_frac_max * p` short-circuits the saturation ratio to the cap.
    pub sat_frac_max: f64,
    pub v_sed: f64,
    pub c_ev: f64,
    pub c_cd: f64,
    pub c_cn: f64,
    pub c_ac: f64,
    pub c_cr: f64,
    pub beta_ev: f64,
    pub q_ac_star: f64,
    /// Diffusivities of `T`, `q_v`, `q_c`, `q_r` in that order.
    pub diffusivity: [Diffusivity; 4],
    pub p0_pt: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        let d = Diffusivity { mu: 0.01, nu: 2.0e5 };
        Self {
            r: 287.0,
            r_v: 461.5,
            c_p: 1004.0,
            latent_heat: 2.5e6,
            g: 9.81,
            t0_ref: 273.15,
            es0: 611.2,
            t_floor: 150.0,
            t_hi_valid: 330.0,
            qvs_cap: 0.04,
            sat_frac_max: 0.5,
            v_sed: 3.0,
            c_ev: 0.05,
            c_cd: 100.0,
            c_cn: 1.0,
            c_ac: 0.5,
            c_cr: 50.0,
            beta_ev: 0.5,
            q_ac_star: 5e-4,
            diffusivity: [d; 4],
            p0_pt: 1.0e5,
        }
    }
}

impl PhysicalParams {
    /// `R / c_p`, always derived.
    #[inline]
    pub fn kappa(&self) -> f64 {
        self.r / self.c_p
    }

    /// `R / R_v`.
    #[inline]
    pub fn epsilon(&self) -> f64 {
        self.r / self.r_v
    }

    #[inline]
    pub fn l_over_cp(&self) -> f64 {
        self.latent_heat / self.c_p
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("r", self.r),
            ("r_v", self.r_v),
            ("c_p", self.c_p),
            ("latent_heat", self.latent_heat),
            ("g", self.g),
            ("es0", self.es0),
            ("t0_ref", self.t0_ref),
            ("qvs_cap", self.qvs_cap),
            ("p0_pt", self.p0_pt),
            ("sat_frac_max", self.sat_frac_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if self.sat_frac_max >= 1.0 {
            return Err(Error::InvalidParams(format!(
                "sat_frac_max must be below 1, got {}",
                self.sat_frac_max
            )));
        }
        let nonneg = [
            ("t_floor", self.t_floor),
            ("q_ac_star", self.q_ac_star),
            ("c_ev", self.c_ev),
            ("c_cd", self.c_cd),
            ("c_cn", self.c_cn),
            ("c_ac", self.c_ac),
            ("c_cr", self.c_cr),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        if !(self.beta_ev > 0.0 && self.beta_ev <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "beta_ev must lie in (0, 1], got {}",
                self.beta_ev
            )));
        }
        if !self.v_sed.is_finite() {
            return Err(Error::InvalidParams("v_sed must be finite".into()));
        }
        for (n, d) in self.diffusivity.iter().enumerate() {
            if !(d.mu > 0.0 && d.nu > 0.0 && d.mu.is_finite() && d.nu.is_finite()) {
                return Err(Error::InvalidParams(format!(
                    "diffusivities must be positive (variable {n}: mu={}, nu={})",
                    d.mu, d.nu
                )));
            }
        }
        Ok(())
    }
}

/// Background temperature per pressure level.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundProfile {
    pub tbar: Vec<f64>,
}

impl BackgroundProfile {
    pub fn new(tbar: Vec<f64>) -> Result<Self> {
        if tbar.is_empty() || tbar.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidParams(
                "background temperatures must be positive and finite".into(),
            ));
        }
        Ok(Self { tbar })
    }

    /// Profile varying linearly in pressure from `t_top` at `p1` to `t_bottom`
    /// at `p0`, sampled at the cell centres.
    pub fn linear(grid: &crate::grid::Grid, t_top: f64, t_bottom: f64) -> Result<Self> {
        let span = grid.p0 - grid.p1;
        Self::new(
            grid.p_centers()
                .iter()
                .map(|p| t_top + (t_bottom - t_top) * (p - grid.p1) / span)
                .collect(),
        )
    }

    pub fn min(&self) -> f64 {
        self.tbar.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.tbar.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Clausius-Clapeyron saturation vapour pressure, zero at and below the floor.
pub fn saturation_vapor_pressure(t: f64, params: &PhysicalParams) -> f64 {
    if t <= params.t_floor {
        return 0.0;
    }
    params.es0 * ((params.latent_heat / params.r_v) * (1.0 / params.t0_ref - 1.0 / t)).exp()
}

/// Saturation mixing ratio, always in `[0, qvs_cap]`.
pub fn saturation_mixing_ratio(p: f64, t: f64, params: &PhysicalParams) -> Result<f64> {
    if !(p > 0.0) {
        return Err(Error::InvalidParams(format!("pressure must be positive, got {p}")));
    }
    Ok(qvs_unchecked(p, t, params))
}

/// Same as [`saturation_mixing_ratio`] for callers that already know `p > 0`.
#[inline]
pub(crate) fn qvs_unchecked(p: f64, t: f64, params: &PhysicalParams) -> f64 {
    if t <= params.t_floor {
        return 0.0;
    }
    let es = saturation_vapor_pressure(t, params);
    if es >= p * params.sat_frac_max {
        return params.qvs_cap;
    }
    (params.epsilon() * es / (p - es)).min(params.qvs_cap)
}

/// Largest secant slope of `q_vs(p, .)` over `samples` equal subintervals of
/// `[t_lo, t_hi]`.
pub fn lipschitz_bound_qvs_sampled(
    p: f64,
    t_lo: f64,
    t_hi: f64,
    samples: usize,
    params: &PhysicalParams,
) -> Result<f64> {
    if !(t_lo < t_hi) {
        return Err(Error::InvalidParams(format!(
            "empty temperature interval [{t_lo}, {t_hi}]"
        )));
    }
    let samples = samples.max(1);
    let h = (t_hi - t_lo) / samples as f64;
    let mut prev = saturation_mixing_ratio(p, t_lo, params)?;
    let mut best = 0.0f64;
    for n in 1..=samples {
        let t = if n == samples { t_hi } else { t_lo + n as f64 * h };
        let q = qvs_unchecked(p, t, params);
        best = best.max((q - prev).abs() / h);
        prev = q;
    }
    Ok(best)
}

/// Certified Lipschitz constant of `q_vs` in `T` on `[t_lo, t_hi]`, from a
/// dense sample (20 000 subintervals).
pub fn lipschitz_bound_qvs(p: f64, t_lo: f64, t_hi: f64, params: &PhysicalParams) -> Result<f64> {
    lipschitz_bound_qvs_sampled(p, t_lo, t_hi, 20_000, params)
}

/// Exner factor `(p / p0_pt)^kappa`, so that `T = exner * theta`.
#[inline]
pub fn exner(p: f64, params: &PhysicalParams) -> f64 {
    (p / params.p0_pt).powf(params.kappa())
}

pub fn theta_from_t(t: f64, p: f64, params: &PhysicalParams) -> f64 {
    t * (params.p0_pt / p).powf(params.kappa())
}

pub fn t_from_theta(theta: f64, p: f64, params: &PhysicalParams) -> f64 {
    theta * (p / params.p0_pt).powf(params.kappa())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> PhysicalParams {
        PhysicalParams::default()
    }

    #[test]
    fn es_at_reference_is_es0() {
        let p = params();
        assert_eq!(saturation_vapor_pressure(p.t0_ref, &p), p.es0);
    }

    #[test]
    fn cutoff_below_floor() {
        let p = params();
        assert_eq!(saturation_vapor_pressure(p.t_floor, &p), 0.0);
        assert_eq!(saturation_vapor_pressure(p.t_floor / 2.0, &p), 0.0);
        assert_eq!(saturation_mixing_ratio(9e4, p.t_floor, &p).unwrap(), 0.0);
        assert_eq!(saturation_mixing_ratio(9e4, -5.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn es_matches_closed_form_at_283() {
        // 611.2 * exp((2.5e6/461.5) * (1/273.15 - 1/283.15)), mpmath at 30 digits
        let p = params();
        let got = saturation_vapor_pressure(283.15, &p);
        let oracle = 1_231.306_803_170_837_3;
        assert!((got - oracle).abs() / oracle < 1e-13, "{got}");
    }

    #[test]
    fn qvs_matches_closed_form() {
        // E e_s / (p - e_s) with E = 287/461.5, e_s(283.15) above, p = 9e4.
        let p = params();
        let got = saturation_mixing_ratio(9e4, 283.15, &p).unwrap();
        let oracle = 0.008_626_142_811_699_572;
        assert!((got - oracle).abs() / oracle < 1e-12, "{got}");
    }

    #[test]
    fn qvs_rejects_nonpositive_pressure() {
        let p = params();
        assert!(saturation_mixing_ratio(0.0, 280.0, &p).is_err());
        assert!(saturation_mixing_ratio(-1.0, 280.0, &p).is_err());
    }

    #[test]
    fn qvs_guard_and_cap() {
        let p = params();
        // hot and low pressure: e_s exceeds half of p
        assert_eq!(saturation_mixing_ratio(1000.0, 320.0, &p).unwrap(), p.qvs_cap);
        // moderately hot: formula exceeds cap but guard not hit
        let q = saturation_mixing_ratio(5e4, 310.0, &p).unwrap();
        assert_eq!(q, p.qvs_cap);
    }

    #[test]
    fn theta_examples() {
        let p = params();
        assert_eq!(theta_from_t(287.3, p.p0_pt, &p), 287.3);
        let q = PhysicalParams {
            r: 2.0,
            c_p: 7.0,
            ..params()
        };
        let got = theta_from_t(300.0, 5e4, &q);
        // 300 * 2^(2/7)
        let oracle = 365.704_096_261_342_6;
        assert!((got - oracle).abs() / oracle < 1e-14, "{got}");
    }

    #[test]
    fn lipschitz_below_floor_is_zero() {
        let p = params();
        assert_eq!(lipschitz_bound_qvs(9e4, 10.0, 100.0, &p).unwrap(), 0.0);
        assert!(lipschitz_bound_qvs(9e4, 300.0, 300.0, &p).is_err());
    }

    #[test]
    fn lipschitz_sampling_is_self_consistent() {
        let p = params();
        let c1 = lipschitz_bound_qvs_sampled(9e4, 260.0, 300.0, 5_000, &p).unwrap();
        let c2 = lipschitz_bound_qvs_sampled(9e4, 260.0, 300.0, 10_000, &p).unwrap();
        assert!(((c2 - c1) / c2).abs() < 0.01, "{c1} vs {c2}");
        let secant = (saturation_mixing_ratio(9e4, 300.0, &p).unwrap()
            - saturation_mixing_ratio(9e4, 260.0, &p).unwrap())
        .abs()
            / 40.0;
        assert!(c2 >= secant);
    }

    #[test]
    fn lipschitz_across_the_kink() {
        let p = params();
        let c = lipschitz_bound_qvs(5e4, 100.0, 200.0, &p).unwrap();
        for (t1, t2) in [(149.0, 151.0), (150.0, 199.0), (120.0, 180.0)] {
            let d = (saturation_mixing_ratio(5e4, t1, &p).unwrap()
                - saturation_mixing_ratio(5e4, t2, &p).unwrap())
            .abs();
            assert!(d <= c * (t1 - t2).abs() * (1.0 + 1e-9));
        }
    }

    #[test]
    fn validation() {
        assert!(params().validate().is_ok());
        assert!(PhysicalParams { beta_ev: 0.0, ..params() }.validate().is_err());
        assert!(PhysicalParams { beta_ev: 1.5, ..params() }.validate().is_err());
        assert!(PhysicalParams { c_ac: -1.0, ..params() }.validate().is_err());
        assert!(PhysicalParams { r: 0.0, ..params() }.validate().is_err());
        let mut bad = params();
        bad.diffusivity[2].nu = 0.0;
        assert!(bad.validate().is_err());
        assert!(BackgroundProfile::new(vec![280.0, -1.0]).is_err());
    }

    proptest! {
        #[test]
        fn es_is_monotone(t1 in 0.0f64..400.0, t2 in 0.0f64..400.0) {
            let p = params();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(saturation_vapor_pressure(lo, &p) <= saturation_vapor_pressure(hi, &p));
        }

        #[test]
        fn qvs_in_range(pr in 1.0f64..2e5, t in -50.0f64..450.0) {
            let p = params();
            let q = saturation_mixing_ratio(pr, t, &p).unwrap();
            prop_assert!((0.0..=p.qvs_cap).contains(&q));
        }

        #[test]
        fn theta_inverse(t in 150.0f64..350.0, pr in 1e3f64..1.1e5) {
            let p = params();
            let back = t_from_theta(theta_from_t(t, pr, &p), pr, &p);
            prop_assert!(((back - t) / t).abs() < 1e-13);
        }

        #[test]
        fn theta_linear_in_t(t1 in 0.0f64..400.0, t2 in 0.0f64..400.0, pr in 1e3f64..1.1e5) {
            let p = params();
            let lhs = theta_from_t(t1 + t2, pr, &p);
            let rhs = theta_from_t(t1, pr, &p) + theta_from_t(t2, pr, &p);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
    }
}
