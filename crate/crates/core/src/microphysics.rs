//! Pointwise Kessler-type warm-rain kernels and per-equation source assembly.

use serde::{Deserialize, Serialize};

use crate::grid::{ScalarField, StateFields};
use crate::thermo::{qvs_unchecked, PhysicalParams};

/// Which thermodynamic variable is prognostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThermoMode {
    Temperature,
    Theta,
}

/// State at a single point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointState {
    pub t: f64,
    pub qv: f64,
    pub qc: f64,
    pub qr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SourceRates {
    pub s_ev: f64,
    pub s_cd: f64,
    pub s_ac: f64,
    pub s_cr: f64,
    pub s_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Tendencies {
    pub d_qv: f64,
    pub d_qc: f64,
    pub d_qr: f64,
    /// `d_T` in temperature mode, `d_theta` in theta mode.
    pub d_thermo: f64,
    pub rates: SourceRates,
}

#[inline]
fn pos(x: f64) -> f64 {
    x.max(0.0)
}

/// `x^beta` with the `beta = 1` case kept exact.
#[inline]
pub fn power_law(x: f64, beta: f64) -> f64 {
    if beta == 1.0 {
        x
    } else {
        x.powf(beta)
    }
}

/// Rain evaporation `C_ev T (q_r+)^beta (q_vs - q_v)+`.
#[inline]
pub fn s_ev(t: f64, qr: f64, qv: f64, qvs: f64, params: &PhysicalParams) -> f64 {
    let qr = pos(qr);
    if qr == 0.0 {
        return 0.0;
    }
    let deficit = pos(qvs - qv);
    if deficit == 0.0 {
        return 0.0;
    }
    params.c_ev * t * power_law(qr, params.beta_ev) * deficit
}

/// Condensation `C_cd (q_v - q_vs) q_c + C_cn (q_v - q_vs)+`; negative when
/// cloud water evaporates into subsaturated air.
#[inline]
pub fn s_cd(qv: f64, qvs: f64, qc: f64, params: &PhysicalParams) -> f64 {
    let excess = qv - qvs;
    params.c_cd * excess * qc + params.c_cn * pos(excess)
}

/// Autoconversion `C_ac (q_c - q_ac*)+`.
#[inline]
pub fn s_ac(qc: f64, params: &PhysicalParams) -> f64 {
    params.c_ac * pos(qc - params.q_ac_star)
}

/// Collection `C_cr q_c q_r`.
#[inline]
pub fn s_cr(qc: f64, qr: f64, params: &PhysicalParams) -> f64 {
    params.c_cr * qc * qr
}

/// All four rates at a point, with `q_vs` evaluated from `(p, T)`.
pub fn source_rates(s: PointState, p: f64, params: &PhysicalParams) -> SourceRates {
    source_rates_with(s, p, params, s_ev)
}

pub(crate) fn source_rates_with(
    s: PointState,
    p: f64,
    params: &PhysicalParams,
    ev: impl Fn(f64, f64, f64, f64, &PhysicalParams) -> f64,
) -> SourceRates {
    let qvs = qvs_unchecked(p, s.t, params);
    let ev = ev(s.t, s.qr, s.qv, qvs, params);
    let cd = s_cd(s.qv, qvs, s.qc, params);
    SourceRates {
        s_ev: ev,
        s_cd: cd,
        s_ac: s_ac(s.qc, params),
        s_cr: s_cr(s.qc, s.qr, params),
        s_t: params.l_over_cp() * (cd - ev),
    }
}

/// Signed pathway coefficients: rows `q_v, q_c, q_r, heating / (L/c_p)`,
/// columns `s_ev, s_cd, s_ac, s_cr`.
pub const PATHWAYS: [[f64; 4]; 4] = [
    [1.0, -1.0, 0.0, 0.0],
    [0.0, 1.0, -1.0, -1.0],
    [-1.0, 0.0, 1.0, 1.0],
    [-1.0, 1.0, 0.0, 0.0],
];

/// Pathway contributions to one equation; every product is exact.
pub fn pathway_terms(row: usize, r: &SourceRates) -> [f64; 4] {
    let rates = [r.s_ev, r.s_cd, r.s_ac, r.s_cr];
    std::array::from_fn(|c| PATHWAYS[row][c] * rates[c])
}

fn row_sum(row: usize, r: &SourceRates) -> f64 {
    let t = pathway_terms(row, r);
    (t[0] + t[1]) + (t[2] + t[3])
}

pub fn tendencies_from_rates(r: SourceRates, p: f64, params: &PhysicalParams, mode: ThermoMode) -> Tendencies {
    let d_thermo = match mode {
        ThermoMode::Temperature => r.s_t,
        ThermoMode::Theta => (params.p0_pt / p).powf(params.kappa()) * r.s_t,
    };
    Tendencies {
        d_qv: row_sum(0, &r),
        d_qc: row_sum(1, &r),
        d_qr: row_sum(2, &r),
        d_thermo,
        rates: r,
    }
}

/// Error-free sum of `terms`, rounded once at the end (Shewchuk expansion).
/// Returns exactly `0.0` iff the real sum vanishes.
pub fn exact_sum(terms: &[f64]) -> f64 {
    let mut parts: Vec<f64> = Vec::with_capacity(terms.len());
    for &x in terms {
        let mut q = x;
        let mut next = Vec::with_capacity(parts.len() + 1);
        for &e in &parts {
            let s = q + e;
            let bv = s - q;
            let err = (q - (s - bv)) + (e - bv);
            if err != 0.0 {
                next.push(err);
            }
            q = s;
        }
        if q != 0.0 {
            next.push(q);
        }
        parts = next;
    }
    parts.iter().sum()
}

/// Real value of `(d_qv + d_qr) - (s_ac + s_cr - s_cd)` over the pathway
/// decomposition. Evaporation enters both equations and must drop out.
pub fn moisture_cancellation_residual(r: &SourceRates) -> f64 {
    let mut terms = Vec::with_capacity(11);
    terms.extend(pathway_terms(0, r));
    terms.extend(pathway_terms(2, r));
    terms.extend([-r.s_ac, -r.s_cr, r.s_cd]);
    exact_sum(&terms)
}

/// Source contributions to each prognostic equation at one point.
pub fn assemble_tendencies(s: PointState, p: f64, params: &PhysicalParams, mode: ThermoMode) -> Tendencies {
    tendencies_from_rates(source_rates(s, p, params), p, params, mode)
}

/// `Q = q_v + q_r` and `H = T - (L/c_p)(q_c + q_r)`.
pub fn transformed_state(state: &StateFields, params: &PhysicalParams) -> (ScalarField, ScalarField) {
    let q = state.qv.zip_map(&state.qr, |v, r| v + r);
    let lc = params.l_over_cp();
    let liquid = state.qc.zip_map(&state.qr, |c, r| c + r);
    let h = state.t.zip_map(&liquid, |t, l| t - lc * l);
    (q, h)
}

/// Inverse of [`transformed_state`] given the liquid species.
pub fn state_from_transformed(
    q: &ScalarField,
    h: &ScalarField,
    qc: &ScalarField,
    qr: &ScalarField,
    params: &PhysicalParams,
) -> StateFields {
    let lc = params.l_over_cp();
    let liquid = qc.zip_map(qr, |c, r| c + r);
    StateFields {
        t: h.zip_map(&liquid, |h, l| h + lc * l),
        qv: q.zip_map(qr, |q, r| q - r),
        qc: qc.clone(),
        qr: qr.clone(),
    }
}
