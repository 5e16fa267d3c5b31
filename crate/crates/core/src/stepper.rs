//! Full nonlinear model: Picard iteration over four decoupled implicit
//! diffusion solves per time step, run loop with diagnostics, bounds
//! monitoring and the two-trajectory continuous-dependence experiment.
//!
//! Every Picard iterate solves, per variable,
//!
//! ```text
//! (q - q_old)/dt + out q + loss(U^m) q + L q = inflow(q^m) + gain(U^m) + boundary
//! ```
//!
//! Outflow through cell faces and every sink that is proportional to the
//! unknown sit on the diagonal; inflow and sources sit on the right-hand
//! side, evaluated at the iterate. Each system is a symmetric M-matrix plus a
//! nonnegative diagonal, so nonnegative data give nonnegative iterates. At the
//! fixed point the splitting reproduces the fully implicit step with every
//! closure evaluated at the new state.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{l2_norm, weighted_vertical_seminorm, Grid, StateFields, WeightProfile};
use crate::microphysics::{power_law, s_ac, s_cd, s_ev, transformed_state, ThermoMode};
use crate::ops::{exner_levels, EllipticOperator, RobinBCSet, Sedimentation, VelocityField};
use crate::solver::{pcg, CgOptions};
use crate::thermo::{qvs_unchecked, BackgroundProfile, PhysicalParams};

pub const VAR_NAMES: [&str; 4] = ["T", "qv", "qc", "qr"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClampPolicy {
    #[default]
    Monitor,
    /// Floor `q_v, q_c, q_r` at zero after every step and record the mass removed.
    Clamp,
}

/// Time-stepping controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControls {
    pub dt: f64,
    pub picard_tol: f64,
    pub picard_max: usize,
    pub cg: CgOptions,
    pub clamp: ClampPolicy,
}

impl Default for StepControls {
    fn default() -> Self {
        Self {
            dt: 0.1,
            picard_tol: 1e-9,
            picard_max: 40,
            cg: CgOptions::default(),
            clamp: ClampPolicy::Monitor,
        }
    }
}

/// Resolved model with everything that stays fixed over a run precomputed.
#[derive(Debug, Clone)]
pub struct Model {
    pub grid: Grid,
    pub params: PhysicalParams,
    pub profile: BackgroundProfile,
    pub weights: WeightProfile,
    pub bc: RobinBCSet,
    pub velocity: VelocityField,
    pub mode: ThermoMode,
    pub controls: StepControls,
    pub envelope: Envelope,
    ops: [EllipticOperator; 4],
    bnd_source: [Vec<f64>; 4],
    sed: Sedimentation,
    sed_out: Vec<f64>,
    adv_out: Vec<f64>,
    /// Exner factor per cell.
    exner: Vec<f64>,
    pressure: Vec<f64>,
    /// `R omega / (c_p p)` per cell.
    compression: Vec<f64>,
}

pub struct StepOutcome {
    pub state: StateFields,
    pub iterations: usize,
    /// Summed relative L2 change of the last Picard iterate.
    pub residual: f64,
    pub clamped_mass: f64,
}

impl Model {
    pub fn new(
        grid: Grid,
        params: PhysicalParams,
        profile: BackgroundProfile,
        bc: RobinBCSet,
        velocity: VelocityField,
        mode: ThermoMode,
        controls: StepControls,
    ) -> Result<Self> {
        params.validate()?;
        if !(controls.dt > 0.0 && controls.dt.is_finite()) {
            return Err(Error::InvalidParams(format!("dt must be positive, got {}", controls.dt)));
        }
        if !(controls.picard_tol > 0.0) || controls.picard_max == 0 {
            return Err(Error::InvalidParams("picard_tol must be positive and picard_max at least 1".into()));
        }
        if *velocity.grid() != grid {
            return Err(Error::InvalidGrid("velocity lives on a different grid".into()));
        }
        let weights = WeightProfile::new(&grid, &params, &profile)?;
        let ops = [0, 1, 2, 3].map(|v| EllipticOperator::weighted(grid, params.diffusivity[v], &weights, &bc.vars[v]));
        let [o0, o1, o2, o3] = ops;
        let ops = [o0?, o1?, o2?, o3?];
        let bnd_source = [0, 1, 2, 3].map(|v| ops[v].boundary_source(&bc.vars[v].flux_data()).values);
        let sed = Sedimentation::new(grid, &params, &profile)?;
        let sed_out = sed.outflow_rates();
        let adv_out = velocity.outflow_rates();
        let plane = grid.nx * grid.ny;
        let ex_lv = exner_levels(&grid, &params);
        let exner = (0..grid.len()).map(|n| ex_lv[n / plane]).collect();
        let pressure: Vec<f64> = (0..grid.len()).map(|n| grid.p_center(n / plane)).collect();
        let omega = velocity.omega_at_centers();
        let compression = (0..grid.len())
            .map(|n| params.kappa() * omega.values[n] / pressure[n])
            .collect();
        Ok(Self {
            grid,
            params,
            profile,
            weights,
            bc,
            velocity,
            mode,
            controls,
            envelope: Envelope::default(),
            ops,
            bnd_source,
            sed,
            sed_out,
            adv_out,
            exner,
            pressure,
            compression,
        })
    }

    /// Same model with different step controls.
    pub fn with_controls(&self, controls: StepControls) -> Result<Self> {
        if !(controls.dt > 0.0 && controls.picard_tol > 0.0 && controls.picard_max > 0) {
            return Err(Error::InvalidParams("invalid step controls".into()));
        }
        let mut m = self.clone();
        m.controls = controls;
        Ok(m)
    }

    /// `max(sup q_v0, sup of the q_v boundary targets, qvs_cap)`.
    pub fn q_v_star(&self, initial: &StateFields) -> f64 {
        initial
            .qv
            .max()
            .max(self.bc.vars[1].data_sup())
            .max(self.params.qvs_cap)
    }

    /// Extra diagonal and right-hand side of each variable's system at iterate `it`.
    fn assemble(&self, old: &StateFields, it: &StateFields) -> [(Vec<f64>, Vec<f64>); 4] {
        let n = self.grid.len();
        let prm = &self.params;
        let inv_dt = 1.0 / self.controls.dt;
        let lc = prm.l_over_cp();
        let mut sys: [(Vec<f64>, Vec<f64>); 4] = std::array::from_fn(|v| {
            let q_old = &old.fields()[v].values;
            let rhs = (0..n).map(|i| q_old[i] * inv_dt + self.bnd_source[v][i]).collect();
            (self.adv_out.clone(), rhs)
        });

        // upwind inflow from neighbours at the iterate
        for v in 1..4 {
            let inflow = self.velocity.inflow(&it.fields()[v].values);
            for (r, f) in sys[v].1.iter_mut().zip(inflow) {
                *r += f;
            }
        }
        match self.mode {
            ThermoMode::Temperature => {
                let inflow = self.velocity.inflow(&it.t.values);
                for i in 0..n {
                    sys[0].1[i] += inflow[i] + self.compression[i] * it.t.values[i];
                }
            }
            ThermoMode::Theta => {
                let theta: Vec<f64> = (0..n).map(|i| it.t.values[i] / self.exner[i]).collect();
                let inflow = self.velocity.inflow(&theta);
                for i in 0..n {
                    sys[0].1[i] += self.exner[i] * inflow[i];
                }
            }
        }
        let sed_in = self.sed.inflow(&it.qr.values);
        for i in 0..n {
            sys[3].0[i] += self.sed_out[i];
            sys[3].1[i] += sed_in[i];
        }

        for i in 0..n {
            let (t, qv, qc, qr) = (it.t.values[i], it.qv.values[i], it.qc.values[i], it.qr.values[i]);
            let qvs = qvs_unchecked(self.pressure[i], t, prm);
            let (qc_p, qr_p) = (qc.max(0.0), qr.max(0.0));
            let deficit = (qvs - qv).max(0.0);
            let excess = (qv - qvs).max(0.0);

            // heating at the iterate
            let ev = s_ev(t, qr, qv, qvs, prm);
            let cd = s_cd(qv, qvs, qc, prm);
            sys[0].1[i] += lc * (cd - ev);

            // vapour relaxes toward saturation: K (q_vs - q_v)
            let ev_coeff = if deficit > 0.0 { prm.c_ev * t.max(0.0) * power_law(qr_p, prm.beta_ev) } else { 0.0 };
            let k = ev_coeff + prm.c_cd * qc_p + if excess > 0.0 { prm.c_cn } else { 0.0 };
            sys[1].0[i] += k;
            sys[1].1[i] += k * qvs;

            // cloud: condensation gain, evaporation / autoconversion / collection sinks
            sys[2].1[i] += (prm.c_cd * qc_p + prm.c_cn) * excess;
            sys[2].0[i] += prm.c_cd * deficit + prm.c_cr * qr_p;
            if qc > prm.q_ac_star {
                sys[2].0[i] += prm.c_ac;
                sys[2].1[i] += prm.c_ac * prm.q_ac_star;
            }

            // rain: autoconversion and collection gains, evaporation sink
            sys[3].1[i] += s_ac(qc, prm) + prm.c_cr * qc_p * qr_p;
            if qr_p > 0.0 && deficit > 0.0 {
                sys[3].0[i] += prm.c_ev * t.max(0.0) * deficit * power_law(qr_p, prm.beta_ev) / qr_p;
            }
        }
        sys
    }

    /// One implicit step from `old`, iterating until the summed relative
    /// change drops below `picard_tol`.
    pub fn picard_step(&self, old: &StateFields) -> Result<StepOutcome> {
        if !old.is_finite() {
            return Err(Error::InvalidParams("state contains non-finite values".into()));
        }
        if old.grid() != self.grid {
            return Err(Error::InvalidGrid("state lives on a different grid".into()));
        }
        let c = self.controls;
        let inv_dt = 1.0 / c.dt;
        let floor = 1e-12 * self.grid.volume().sqrt();
        let mut it = old.clone();
        let mut residual = f64::INFINITY;
        for m in 1..=c.picard_max {
            let sys = self.assemble(old, &it);
            let updates: Vec<Result<Vec<f64>>> = sys
                .into_par_iter()
                .enumerate()
                .map(|(v, (diag, rhs))| {
                    let op = self.ops[v].with_added_reaction(&diag);
                    let cur = &it.fields()[v].values;
                    let mut r = vec![0.0; cur.len()];
                    op.apply_shifted(inv_dt, cur, &mut r);
                    for (ri, bi) in r.iter_mut().zip(&rhs) {
                        *ri = bi - *ri;
                    }
                    let mut delta = vec![0.0; cur.len()];
                    pcg(&op, inv_dt, &r, &mut delta, c.cg)?;
                    Ok(delta)
                })
                .collect();
            residual = 0.0;
            let mut next = it.clone();
            for (v, upd) in updates.into_iter().enumerate() {
                let delta = upd?;
                let f = &mut next.fields_mut()[v].values;
                for (x, d) in f.iter_mut().zip(&delta) {
                    *x += d;
                }
                let dn = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
                let un = f.iter().map(|x| x * x).sum::<f64>().sqrt();
                let cv = self.grid.cell_volume().sqrt();
                residual += dn * cv / (un * cv + floor);
            }
            if !residual.is_finite() || !next.is_finite() {
                return Err(Error::PicardNoConvergence { iterations: m, residual });
            }
            it = next;
            if residual < c.picard_tol {
                let clamped_mass = self.apply_clamp(&mut it);
                return Ok(StepOutcome {
                    state: it,
                    iterations: m,
                    residual,
                    clamped_mass,
                });
            }
        }
        Err(Error::PicardNoConvergence {
            iterations: c.picard_max,
            residual,
        })
    }

    fn apply_clamp(&self, s: &mut StateFields) -> f64 {
        if self.controls.clamp != ClampPolicy::Clamp {
            return 0.0;
        }
        let mut removed = 0.0;
        for f in [&mut s.qv, &mut s.qc, &mut s.qr] {
            for x in f.values.iter_mut() {
                if *x < 0.0 {
                    removed -= *x;
                    *x = 0.0;
                }
            }
        }
        removed * self.grid.cell_volume()
    }

    /// Diagnostics of one state.
    pub fn record(&self, time: f64, s: &StateFields, iterations: usize, residual: f64, clamped: f64) -> StepRecord {
        let (q, h) = transformed_state(s, &self.params);
        let fields = s.fields();
        let stats = fields.map(|f| FieldStats {
            min: f.min(),
            max: f.max(),
            l2: l2_norm(f),
        });
        let mut h1 = [0.0; 4];
        let mut wnorm = [0.0; 4];
        for v in 0..4 {
            h1[v] = (stats[v].l2.powi(2) + self.ops[v].grad_norm_sq(fields[v])).sqrt();
            wnorm[v] = weighted_vertical_seminorm(&fields[v].vertical_derivative(), &self.weights).unwrap_or(f64::NAN);
        }
        StepRecord {
            time,
            stats,
            q_l2: l2_norm(&q),
            h_l2: l2_norm(&h),
            picard_iters: iterations,
            residual,
            h1_proxy: h1,
            w_seminorm: wnorm,
            clamped_mass: clamped,
        }
    }

    /// Steps from `initial` until `t_end`, calling `observe(step, time, state)`
    /// after the initial state and after every step.
    pub fn run(
        &self,
        initial: &StateFields,
        t_end: f64,
        mut observe: impl FnMut(usize, f64, &StateFields) -> Result<()>,
    ) -> Result<RunOutput> {
        let dt = self.controls.dt;
        if !(t_end >= dt) {
            return Err(Error::InvalidParams(format!("t_end ({t_end}) must be at least dt ({dt})")));
        }
        let steps = (t_end / dt).round() as usize;
        let mut state = initial.clone();
        let mut records = vec![self.record(0.0, &state, 0, 0.0, 0.0)];
        observe(0, 0.0, &state)?;
        let mut clamped_total = 0.0;
        for k in 1..=steps {
            let time = k as f64 * dt;
            let out = self.picard_step(&state).map_err(|e| Error::RunFailed {
                time,
                source: Box::new(Error::StepFailed { step: k, source: Box::new(e) }),
            })?;
            state = out.state;
            clamped_total += out.clamped_mass;
            records.push(self.record(time, &state, out.iterations, out.residual, out.clamped_mass));
            observe(k, time, &state)?;
        }
        let bounds = bounds_report(&records, self.q_v_star(initial), &self.envelope);
        Ok(RunOutput {
            records,
            bounds,
            final_state: state,
            clamped_total,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldStats {
    pub min: f64,
    pub max: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub time: f64,
    /// `T, q_v, q_c, q_r`.
    pub stats: [FieldStats; 4],
    pub q_l2: f64,
    pub h_l2: f64,
    pub picard_iters: usize,
    pub residual: f64,
    pub h1_proxy: [f64; 4],
    pub w_seminorm: [f64; 4],
    pub clamped_mass: f64,
}

pub struct RunOutput {
    pub records: Vec<StepRecord>,
    pub bounds: BoundsReport,
    pub final_state: StateFields,
    pub clamped_total: f64,
}

/// Generous limits for the quantities without a computable bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Envelope {
    pub q_max: f64,
    pub t_min: f64,
    pub t_max: f64,
    /// Allowed undershoot below zero.
    pub nonneg_tol: f64,
    /// Allowed overshoot above `q_v*`.
    pub qv_tol: f64,
}

impl Default for Envelope {
    fn default() -> Self {
        Self {
            q_max: 1.0,
            t_min: 0.0,
            t_max: 1000.0,
            nonneg_tol: crate::grid::DEFAULT_NONNEG_TOL,
            qv_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub time: f64,
    pub variable: &'static str,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub min: [f64; 4],
    pub max: [f64; 4],
    pub q_v_star: f64,
    pub violations: Vec<Violation>,
}

impl BoundsReport {
    pub fn summary(&self) -> String {
        let mut s = format!("q_v_star: {:e}\n", self.q_v_star);
        for v in 0..4 {
            s += &format!("{}: min {:e} max {:e}\n", VAR_NAMES[v], self.min[v], self.max[v]);
        }
        s += &format!("violations: {}\n", self.violations.len());
        for x in &self.violations {
            s += &format!("  t={:e} {} value {:e} bound {:e}\n", x.time, x.variable, x.value, x.bound);
        }
        s
    }
}

/// Checks every record: `q_v <= q_v* + qv_tol`, nonnegativity of all fields,
/// finiteness, and the envelope for `T`, `q_c`, `q_r`.
pub fn bounds_report(records: &[StepRecord], q_v_star: f64, env: &Envelope) -> BoundsReport {
    let mut min = [f64::INFINITY; 4];
    let mut max = [f64::NEG_INFINITY; 4];
    let mut violations = Vec::new();
    for r in records {
        for v in 0..4 {
            let s = r.stats[v];
            min[v] = min[v].min(s.min);
            max[v] = max[v].max(s.max);
            let name = VAR_NAMES[v];
            if !(s.min.is_finite() && s.max.is_finite()) {
                violations.push(Violation { time: r.time, variable: name, value: f64::NAN, bound: f64::NAN });
                continue;
            }
            let lower = if v == 0 { env.t_min } else { 0.0 };
            if s.min < lower - env.nonneg_tol {
                violations.push(Violation { time: r.time, variable: name, value: s.min, bound: lower });
            }
            let upper = match v {
                0 => env.t_max,
                1 => q_v_star + env.qv_tol,
                _ => env.q_max,
            };
            if s.max > upper {
                violations.push(Violation { time: r.time, variable: name, value: s.max, bound: upper });
            }
        }
    }
    BoundsReport {
        min,
        max,
        q_v_star,
        violations,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DependenceReport {
    pub eps: f64,
    /// `(t, d(t))`.
    pub distance: Vec<(f64, f64)>,
    pub amplification: f64,
    pub t_of_max: f64,
    /// `d(t_end) / d(0)`.
    pub final_ratio: f64,
}

/// `(||dT||^2 + sum ||dq_j||^2)^(1/2)`.
pub fn state_distance(a: &StateFields, b: &StateFields) -> f64 {
    a.fields()
        .iter()
        .zip(b.fields())
        .map(|(x, y)| l2_norm(&x.zip_map(y, |p, q| p - q)).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Fixed positive perturbation direction: uniform in `[0, 1)` per cell,
/// scaled per variable by the sup of the base field (or 1 if that is zero).
pub fn perturbation_direction(base: &StateFields, seed: u64) -> StateFields {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = StateFields::zeros(base.grid());
    for (o, b) in out.fields_mut().into_iter().zip(base.fields()) {
        let scale = b.values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let scale = if scale > 0.0 { scale } else { 1.0 };
        for x in o.values.iter_mut() {
            *x = scale * rng.gen::<f64>();
        }
    }
    out
}

fn trajectory(model: &Model, init: &StateFields, t_end: f64) -> Result<Vec<(f64, StateFields)>> {
    let mut states = Vec::new();
    model.run(init, t_end, |_, t, s| {
        states.push((t, s.clone()));
        Ok(())
    })?;
    Ok(states)
}

/// Runs the base trajectory once and one perturbed trajectory per `eps`
/// (in parallel), returning `A = sup_t d(t) / d(0)` for each.
pub fn continuous_dependence_experiment(
    model: &Model,
    init: &StateFields,
    t_end: f64,
    eps_list: &[f64],
    seed: u64,
) -> Result<Vec<DependenceReport>> {
    if eps_list.is_empty() {
        return Err(Error::InvalidParams("need at least one eps".into()));
    }
    if let Some(e) = eps_list.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(Error::InvalidParams(format!("eps must be positive, got {e}")));
    }
    let dir = perturbation_direction(init, seed);
    let base = trajectory(model, init, t_end)?;
    eps_list
        .par_iter()
        .map(|&eps| {
            let mut pert = init.clone();
            for (p, d) in pert.fields_mut().into_iter().zip(dir.fields()) {
                for (x, y) in p.values.iter_mut().zip(&d.values) {
                    *x += eps * y;
                }
            }
            let d0 = state_distance(&pert, init);
            if !(d0 > 0.0) {
                return Err(Error::InvalidParams("initial perturbation is degenerate (d(0) = 0)".into()));
            }
            let other = trajectory(model, &pert, t_end)?;
            let distance: Vec<(f64, f64)> = base
                .iter()
                .zip(&other)
                .map(|((t, a), (_, b))| (*t, state_distance(a, b)))
                .collect();
            let (t_of_max, dmax) = distance
                .iter()
                .fold((0.0, 0.0), |(tm, m), &(t, d)| if d > m { (t, d) } else { (tm, m) });
            let amplification = dmax / d0;
            let final_ratio = distance.last().map_or(1.0, |&(_, d)| d / d0);
            if !amplification.is_finite() {
                return Err(Error::InvalidParams(format!("amplification is not finite for eps = {eps}")));
            }
            Ok(DependenceReport {
                eps,
                distance,
                amplification,
                t_of_max,
                final_ratio,
            })
        })
        .collect()
}

/// CSV header of the time series.
pub const CSV_COLUMNS: [&str; 17] = [
    "time", "T_min", "T_max", "T_L2", "qv_min", "qv_max", "qv_L2", "qc_min", "qc_max", "qc_L2", "qr_min", "qr_max",
    "qr_L2", "Q_L2", "H_L2", "picard_iters", "residual",
];

/// Writes `# seed=<seed>`, the header and one row per record.
pub fn write_csv<W: std::io::Write>(mut w: W, seed: u64, records: &[StepRecord]) -> std::io::Result<()> {
    writeln!(w, "# seed={seed}")?;
    writeln!(w, "{}", CSV_COLUMNS.join(","))?;
    for r in records {
        let mut row = vec![format!("{:e}", r.time)];
        for s in &r.stats {
            row.push(format!("{:e}", s.min));
            row.push(format!("{:e}", s.max));
            row.push(format!("{:e}", s.l2));
        }
        row.push(format!("{:e}", r.q_l2));
        row.push(format!("{:e}", r.h_l2));
        row.push(r.picard_iters.to_string());
        row.push(format!("{:e}", r.residual));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
