//! Randomized property batteries over the pointwise kernels.
//!
//! Each battery draws its own seeded stream, so results depend only on the
//! seed and the sample count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::microphysics::{
    moisture_cancellation_residual, power_law, s_ev, source_rates_with, tendencies_from_rates, PointState,
    ThermoMode,
};
use crate::thermo::{lipschitz_bound_qvs, saturation_mixing_ratio, saturation_vapor_pressure, PhysicalParams};

/// Deliberate kernel defects for checking that the batteries can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelFault {
    #[default]
    None,
    /// Evaluate `-s_ev` instead of `s_ev`.
    FlipEvaporationSign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatteryResult {
    pub name: String,
    pub samples: usize,
    pub failures: usize,
    /// Largest violation measure seen (battery specific, 0 when none).
    pub worst: f64,
}

impl BatteryResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn line(&self) -> String {
        format!(
            "{} {} samples={} failures={} worst={:e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.samples,
            self.failures,
            self.worst
        )
    }
}

struct Tally {
    samples: usize,
    failures: usize,
    worst: f64,
}

impl Tally {
    fn new() -> Self {
        Self { samples: 0, failures: 0, worst: 0.0 }
    }

    fn check(&mut self, ok: bool, measure: f64) {
        self.samples += 1;
        if !ok {
            self.failures += 1;
            self.worst = self.worst.max(measure.abs());
        }
    }

    fn finish(self, name: impl Into<String>) -> BatteryResult {
        BatteryResult {
            name: name.into(),
            samples: self.samples,
            failures: self.failures,
            worst: self.worst,
        }
    }
}

fn evaporation(fault: KernelFault) -> impl Fn(f64, f64, f64, f64, &PhysicalParams) -> f64 {
    move |t, qr, qv, qvs, p| match fault {
        KernelFault::None => s_ev(t, qr, qv, qvs, p),
        KernelFault::FlipEvaporationSign => -s_ev(t, qr, qv, qvs, p),
    }
}

fn random_point(rng: &mut ChaCha8Rng) -> (PointState, f64) {
    let s = PointState {
        t: rng.gen_range(200.0..320.0),
        qv: rng.gen_range(0.0..0.03),
        qc: rng.gen_range(0.0..5e-3),
        qr: rng.gen_range(0.0..5e-3),
    };
    (s, rng.gen_range(2e4..1.05e5))
}

/// Moisture cancellation is exact; heat cancellation holds to `1e-14` relative.
pub fn cancellation_battery(params: &PhysicalParams, samples: usize, seed: u64, fault: KernelFault) -> [BatteryResult; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ev = evaporation(fault);
    let lc = params.l_over_cp();
    let mut moist = Tally::new();
    let mut heat = Tally::new();
    for _ in 0..samples {
        let (s, p) = random_point(&mut rng);
        let r = source_rates_with(s, p, params, &ev);
        let t = tendencies_from_rates(r, p, params, ThermoMode::Temperature);
        let exact = moisture_cancellation_residual(&r);
        let direct = (t.d_qv + t.d_qr) - (r.s_ac + r.s_cr - r.s_cd);
        let bound = 4.0 * f64::EPSILON * (r.s_ev.abs() + r.s_cd.abs() + r.s_ac.abs() + r.s_cr.abs());
        moist.check(exact == 0.0 && direct.abs() <= bound, exact.abs().max(direct.abs()));
        let resid = t.d_thermo - lc * (t.d_qc + t.d_qr);
        let scale = t.d_thermo.abs().max(lc * (t.d_qc.abs() + t.d_qr.abs())).max(f64::MIN_POSITIVE);
        heat.check(resid.abs() <= 1e-14 * scale, resid / scale);
    }
    [moist.finish("moisture-cancellation"), heat.finish("heat-cancellation")]
}

/// `(a^beta - b^beta)(a - b) >= 0` for nonnegative pairs.
pub fn monotonicity_battery(beta: f64, samples: usize, seed: u64) -> BatteryResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new();
    for _ in 0..samples {
        let a: f64 = rng.gen_range(0.0..1e-2);
        let b: f64 = if rng.gen_bool(0.1) { a } else { rng.gen_range(0.0..1e-2) };
        let v = (power_law(a, beta) - power_law(b, beta)) * (a - b);
        t.check(v >= 0.0, v);
    }
    t.finish(format!("monotonicity beta={beta}"))
}

/// Monotone `e_s` on a dense grid, exact value at the reference temperature,
/// zero at and below the floor, `q_vs` within `[0, cap]`.
pub fn saturation_battery(params: &PhysicalParams, samples: usize, seed: u64) -> BatteryResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new();
    let (lo, hi) = (params.t_floor - 50.0, params.t_hi_valid + 40.0);
    let mut prev = saturation_vapor_pressure(lo, params);
    for n in 1..samples {
        let temp = lo + (hi - lo) * n as f64 / (samples - 1) as f64;
        let es = saturation_vapor_pressure(temp, params);
        t.check(es >= prev, prev - es);
        prev = es;
    }
    let at_ref = saturation_vapor_pressure(params.t0_ref, params);
    t.check(at_ref == params.es0, at_ref - params.es0);
    for _ in 0..samples {
        let p = rng.gen_range(1e3..1.2e5);
        let cold = rng.gen_range(0.0..=params.t_floor);
        let es = saturation_vapor_pressure(cold, params);
        let q = saturation_mixing_ratio(p, cold, params).unwrap_or(f64::NAN);
        t.check(es == 0.0 && q == 0.0, es.max(q));
        let temp = rng.gen_range(0.0..400.0);
        let q = saturation_mixing_ratio(p, temp, params).unwrap_or(f64::NAN);
        t.check((0.0..=params.qvs_cap).contains(&q), q);
    }
    t.finish("saturation-law")
}

/// Positive-part Lipschitz on random quadruples and the sampled Lipschitz
/// bound of `q_vs` on random temperature pairs.
pub fn lipschitz_battery(params: &PhysicalParams, samples: usize, seed: u64) -> BatteryResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new();
    for _ in 0..samples {
        let [x1, y1, x2, y2]: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let lhs = ((x1 - y1).max(0.0) - (x2 - y2).max(0.0)).abs();
        let rhs = (x1 - x2).abs() + (y1 - y2).abs();
        t.check(lhs <= rhs, lhs - rhs);
    }
    let (t_lo, t_hi) = (params.t_floor - 20.0, 310.0);
    for p in [5e4, 7.5e4, 1e5] {
        let l = lipschitz_bound_qvs(p, t_lo, t_hi, params).unwrap_or(f64::NAN);
        for _ in 0..samples / 3 {
            let a = rng.gen_range(t_lo..t_hi);
            let b = rng.gen_range(t_lo..t_hi);
            let qa = saturation_mixing_ratio(p, a, params).unwrap_or(f64::NAN);
            let qb = saturation_mixing_ratio(p, b, params).unwrap_or(f64::NAN);
            let diff = (qa - qb).abs();
            // secants on the dense partition bound pair slopes up to the
            // curvature across one subinterval
            t.check(diff <= l * (1.0 + 1e-3) * (a - b).abs(), diff - l * (a - b).abs());
        }
    }
    t.finish("lipschitz")
}

/// With `T, q_c, q_r >= 0`: `s_ev, s_ac, s_cr >= 0`.
pub fn sign_battery(params: &PhysicalParams, samples: usize, seed: u64, fault: KernelFault) -> BatteryResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ev = evaporation(fault);
    let mut t = Tally::new();
    for _ in 0..samples {
        let (s, p) = random_point(&mut rng);
        let r = source_rates_with(s, p, params, &ev);
        let worst = r.s_ev.min(r.s_ac).min(r.s_cr);
        t.check(worst >= 0.0, worst);
    }
    t.finish("sign-structure")
}

/// Every battery in a fixed order; sub-seeds derive from `seed`.
pub fn kernel_selftest(params: &PhysicalParams, samples: usize, seed: u64, fault: KernelFault) -> Vec<BatteryResult> {
    let mut out: Vec<BatteryResult> = cancellation_battery(params, samples, seed, fault).into();
    for (i, beta) in [0.3, 0.5, 1.0].into_iter().enumerate() {
        out.push(monotonicity_battery(beta, samples, seed.wrapping_add(1 + i as u64)));
    }
    out.push(saturation_battery(params, samples, seed.wrapping_add(10)));
    out.push(lipschitz_battery(params, samples, seed.wrapping_add(11)));
    out.push(sign_battery(params, samples, seed.wrapping_add(12), fault));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_batteries_pass() {
        let r = kernel_selftest(&PhysicalParams::default(), 10_000, 0, KernelFault::None);
        assert_eq!(r.len(), 8);
        for b in &r {
            assert!(b.passed(), "{}", b.line());
            assert!(b.samples >= 10_000, "{}", b.line());
        }
    }

    #[test]
    fn flipped_evaporation_is_caught() {
        let r = kernel_selftest(&PhysicalParams::default(), 2_000, 0, KernelFault::FlipEvaporationSign);
        let failing: Vec<&str> = r.iter().filter(|b| !b.passed()).map(|b| b.name.as_str()).collect();
        assert_eq!(failing, ["sign-structure"]);
    }

    #[test]
    fn deterministic() {
        let p = PhysicalParams::default();
        assert_eq!(
            kernel_selftest(&p, 500, 9, KernelFault::None),
            kernel_selftest(&p, 500, 9, KernelFault::None)
        );
    }

    #[test]
    fn non_monotone_law_fails() {
        // a decreasing power is outside the admissible range and must be flagged
        let r = monotonicity_battery(-0.5, 1_000, 1);
        assert!(!r.passed());
    }
}
