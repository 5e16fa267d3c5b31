//! TOML run configuration: parsing, validation, defaults and the mapping to a
//! [`Model`] plus an initial state.
//!
//! Every section and key is optional; omitted keys take the defaults below.
//! Unknown keys are errors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, StateFields};
use crate::microphysics::ThermoMode;
use crate::ops::{convection_cell_for_cfl, make_convection_cell, RobinBCSet, RobinBc, VelocityField};
use crate::solver::CgOptions;
use crate::stepper::{ClampPolicy, Envelope, Model, StepControls};
use crate::thermo::{saturation_mixing_ratio, BackgroundProfile, Diffusivity, PhysicalParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub grid: GridSection,
    pub physics: PhysicsSection,
    pub closures: ClosureSection,
    pub boundary: BoundarySection,
    pub velocity: VelocitySection,
    pub time: TimeSection,
    pub output: OutputSection,
    pub initial: InitialSection,
    pub battery: BatterySection,
}

/// Domain `[0, lx] x [0, ly] x (p1, p0)`; lengths in m, pressures in Pa.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub lx: f64,
    pub ly: f64,
    pub p1: f64,
    pub p0: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            nx: 24,
            ny: 4,
            nz: 24,
            lx: 1.0e4,
            ly: 1.0e4,
            p1: 5.0e4,
            p0: 1.0e5,
        }
    }
}

/// Thermodynamic constants (SI) and the background temperature profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsSection {
    pub r: f64,
    pub r_v: f64,
    pub c_p: f64,
    pub latent_heat: f64,
    pub g: f64,
    pub t0_ref: f64,
    pub es0: f64,
    pub t_floor: f64,
    pub t_hi_valid: f64,
    pub qvs_cap: f64,
    pub sat_frac_max: f64,
    pub p0_pt: f64,
    /// Background temperature at `p1` and at `p0` (K), linear in between.
    pub tbar_top: f64,
    pub tbar_bottom: f64,
    /// Horizontal diffusivities of `T, qv, qc, qr` (m^2/s).
    pub mu: [f64; 4],
    /// Vertical diffusivities of `T, qv, qc, qr` (weighted, Pa^2/s scale).
    pub nu: [f64; 4],
}

impl Default for PhysicsSection {
    fn default() -> Self {
        let p = PhysicalParams::default();
        Self {
            r: p.r,
            r_v: p.r_v,
            c_p: p.c_p,
            latent_heat: p.latent_heat,
            g: p.g,
            t0_ref: p.t0_ref,
            es0: p.es0,
            t_floor: p.t_floor,
            t_hi_valid: p.t_hi_valid,
            qvs_cap: p.qvs_cap,
            sat_frac_max: p.sat_frac_max,
            p0_pt: p.p0_pt,
            tbar_top: 255.0,
            tbar_bottom: 290.0,
            mu: p.diffusivity.map(|d| d.mu),
            nu: p.diffusivity.map(|d| d.nu),
        }
    }
}

/// Microphysical rates (1/s unless noted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosureSection {
    /// Rain fall speed in the sedimentation term; the sign picks the direction.
    pub v_sed: f64,
    pub c_ev: f64,
    pub c_cd: f64,
    pub c_cn: f64,
    pub c_ac: f64,
    pub c_cr: f64,
    pub beta_ev: f64,
    /// Autoconversion threshold (kg/kg).
    pub q_ac_star: f64,
}

impl Default for ClosureSection {
    fn default() -> Self {
        let p = PhysicalParams::default();
        Self {
            v_sed: p.v_sed,
            c_ev: p.c_ev,
            c_cd: p.c_cd,
            c_cn: p.c_cn,
            c_ac: p.c_ac,
            c_cr: p.c_cr,
            beta_ev: p.beta_ev,
            q_ac_star: p.q_ac_star,
        }
    }
}

/// `d_n q = alpha (b - q)` with one constant pair on the bottom and one on
/// the side walls; the top is always zero-flux.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct BoundarySpec {
    pub alpha_0: f64,
    pub b_0: f64,
    pub alpha_ll: f64,
    pub b_ll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundarySection {
    #[serde(rename = "T")]
    pub t: BoundarySpec,
    pub qv: BoundarySpec,
    pub qc: BoundarySpec,
    pub qr: BoundarySpec,
}

impl Default for BoundarySection {
    fn default() -> Self {
        Self {
            t: BoundarySpec { alpha_0: 1e-3, b_0: 290.0, alpha_ll: 0.0, b_ll: 0.0 },
            qv: BoundarySpec { alpha_0: 1e-3, b_0: 0.012, alpha_ll: 0.0, b_ll: 0.0 },
            qc: BoundarySpec::default(),
            qr: BoundarySpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VelocityKind {
    None,
    /// Single overturning cell in the x-p plane.
    Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VelocitySection {
    pub kind: VelocityKind,
    /// Stream-function amplitude; used only when `cfl` is 0.
    pub amplitude: f64,
    /// When positive, scale the cell so that its Courant number at `dt` equals this.
    pub cfl: f64,
}

impl Default for VelocitySection {
    fn default() -> Self {
        Self {
            kind: VelocityKind::Cell,
            amplitude: 0.0,
            cfl: 0.45,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    pub dt: f64,
    pub t_end: f64,
    pub picard_tol: f64,
    pub picard_max: usize,
    /// Relative residual of the inner linear solves.
    pub cg_tol: f64,
    pub mode: ThermoMode,
    pub clamp: ClampPolicy,
}

impl Default for TimeSection {
    fn default() -> Self {
        let c = StepControls::default();
        Self {
            dt: 0.1,
            t_end: 5.0,
            picard_tol: c.picard_tol,
            picard_max: c.picard_max,
            cg_tol: c.cg.tol,
            mode: ThermoMode::Theta,
            clamp: ClampPolicy::Monitor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Write snapshots every `cadence` steps; 0 disables snapshots.
    pub cadence: usize,
    pub envelope: Envelope,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            cadence: 10,
            envelope: Envelope::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialKind {
    Zero,
    /// `T = Tbar`, `qv = rh * qvs`, constant `qc`, `qr`.
    Uniform,
    /// Each value drawn independently: `T = Tbar (1 + t_noise (2U - 1))`,
    /// `qv = rh U qvs(p, T)`, `qc = qc U`, `qr = qr U`.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub kind: InitialKind,
    pub rh: f64,
    pub qc: f64,
    pub qr: f64,
    pub t_noise: f64,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            kind: InitialKind::Random,
            rh: 1.1,
            qc: 1e-3,
            qr: 5e-4,
            t_noise: 0.01,
        }
    }
}

/// Settings of the verification batteries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatterySection {
    /// Random certificate problems.
    pub problems: usize,
    pub cert_grid: [usize; 3],
    pub cert_steps: usize,
    /// Cells per direction of the spatial refinement ladder.
    pub mms_ladder: Vec<usize>,
    pub mms_spatial_steps: usize,
    pub mms_temporal_grid: usize,
    pub mms_temporal_steps: Vec<usize>,
    pub min_spatial_order: f64,
    pub min_temporal_order: f64,
    pub eps: Vec<f64>,
    /// Allowed relative spread of the amplification factors.
    pub dependence_tol: f64,
    pub kernel_samples: usize,
}

impl Default for BatterySection {
    fn default() -> Self {
        Self {
            problems: 20,
            cert_grid: [16, 16, 16],
            cert_steps: 32,
            mms_ladder: vec![8, 16, 32],
            mms_spatial_steps: 1,
            mms_temporal_grid: 16,
            mms_temporal_steps: vec![16, 32, 64],
            min_spatial_order: 1.8,
            min_temporal_order: 0.9,
            eps: vec![1e-2, 1e-3, 1e-4],
            dependence_tol: 0.1,
            kernel_samples: 10_000,
        }
    }
}

impl BatterySection {
    /// Battery sizes must describe real refinement and real grids.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.cert_grid.iter().product::<usize>() <= 1 || self.cert_grid.contains(&0) {
            return bad(format!("certificate grid {:?} is degenerate", self.cert_grid));
        }
        if self.problems == 0 || self.cert_steps == 0 {
            return bad("need at least one certificate problem and one step".into());
        }
        if self.mms_ladder.len() < 2 || self.mms_ladder.iter().any(|&n| n < 2) {
            return bad(format!("MMS ladder {:?} needs two or more grids of at least 2 cells", self.mms_ladder));
        }
        if self.mms_temporal_grid < 2 || self.mms_temporal_steps.len() < 2 || self.mms_temporal_steps.contains(&0) {
            return bad("temporal ladder needs a grid of at least 2 cells and two or more step counts".into());
        }
        if self.mms_spatial_steps == 0 || self.kernel_samples == 0 {
            return bad("step and sample counts must be positive".into());
        }
        Ok(())
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn grid(&self) -> Result<Grid> {
        let g = &self.grid;
        Grid::new(g.nx, g.ny, g.nz, g.lx, g.ly, g.p1, g.p0).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn params(&self) -> Result<PhysicalParams> {
        let (ph, cl) = (&self.physics, &self.closures);
        let p = PhysicalParams {
            r: ph.r,
            r_v: ph.r_v,
            c_p: ph.c_p,
            latent_heat: ph.latent_heat,
            g: ph.g,
            t0_ref: ph.t0_ref,
            es0: ph.es0,
            t_floor: ph.t_floor,
            t_hi_valid: ph.t_hi_valid,
            qvs_cap: ph.qvs_cap,
            sat_frac_max: ph.sat_frac_max,
            v_sed: cl.v_sed,
            c_ev: cl.c_ev,
            c_cd: cl.c_cd,
            c_cn: cl.c_cn,
            c_ac: cl.c_ac,
            c_cr: cl.c_cr,
            beta_ev: cl.beta_ev,
            q_ac_star: cl.q_ac_star,
            diffusivity: std::array::from_fn(|v| Diffusivity { mu: ph.mu[v], nu: ph.nu[v] }),
            p0_pt: ph.p0_pt,
        };
        p.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(p)
    }

    pub fn controls(&self) -> Result<StepControls> {
        let t = &self.time;
        if !(t.dt > 0.0 && t.dt.is_finite()) {
            return Err(Error::Config(format!("time.dt must be positive, got {}", t.dt)));
        }
        if !(t.t_end >= t.dt && t.t_end.is_finite()) {
            return Err(Error::Config(format!("time.t_end ({}) must be at least dt ({})", t.t_end, t.dt)));
        }
        if !(t.picard_tol > 0.0) || t.picard_max == 0 || !(t.cg_tol > 0.0) {
            return Err(Error::Config("picard_tol and cg_tol must be positive, picard_max at least 1".into()));
        }
        Ok(StepControls {
            dt: t.dt,
            picard_tol: t.picard_tol,
            picard_max: t.picard_max,
            cg: CgOptions { tol: t.cg_tol, max_iter: None },
            clamp: t.clamp,
        })
    }

    fn velocity(&self, grid: Grid) -> Result<VelocityField> {
        let v = &self.velocity;
        if !(v.cfl >= 0.0 && v.cfl.is_finite() && v.amplitude.is_finite()) {
            return Err(Error::Config("velocity.cfl must be nonnegative and amplitude finite".into()));
        }
        let field = match v.kind {
            VelocityKind::None => Ok(VelocityField::zeros(grid)),
            VelocityKind::Cell if v.cfl > 0.0 => convection_cell_for_cfl(grid, self.time.dt, v.cfl),
            VelocityKind::Cell => make_convection_cell(grid, v.amplitude),
        };
        field.map_err(|e| Error::Config(e.to_string()))
    }

    fn boundary(&self, grid: &Grid) -> Result<RobinBCSet> {
        let b = &self.boundary;
        let mk = |s: &BoundarySpec| RobinBc::uniform(grid, s.alpha_0, s.b_0, s.alpha_ll, s.b_ll);
        let vars = [mk(&b.t), mk(&b.qv), mk(&b.qc), mk(&b.qr)];
        let [a, c, d, e] = vars;
        let map = |r: Result<RobinBc>| r.map_err(|e| Error::Config(e.to_string()));
        Ok(RobinBCSet { vars: [map(a)?, map(c)?, map(d)?, map(e)?] })
    }

    pub fn profile(&self, grid: &Grid) -> Result<BackgroundProfile> {
        BackgroundProfile::linear(grid, self.physics.tbar_top, self.physics.tbar_bottom)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn model(&self) -> Result<Model> {
        let grid = self.grid()?;
        let params = self.params()?;
        let controls = self.controls()?;
        let profile = self.profile(&grid)?;
        let bc = self.boundary(&grid)?;
        let vel = self.velocity(grid)?;
        let mut model = Model::new(grid, params, profile, bc, vel, self.time.mode, controls)
            .map_err(|e| Error::Config(e.to_string()))?;
        model.envelope = self.output.envelope;
        Ok(model)
    }

    /// Initial state drawn from the `[initial]` section with a seeded stream.
    pub fn initial_state(&self, model: &Model, seed: u64) -> Result<StateFields> {
        let ini = &self.initial;
        if [ini.rh, ini.qc, ini.qr, ini.t_noise].iter().any(|v| !(*v >= 0.0 && v.is_finite())) || ini.t_noise >= 1.0 {
            return Err(Error::Config("initial amplitudes must be nonnegative (t_noise < 1)".into()));
        }
        let g = model.grid;
        let mut s = StateFields::zeros(g);
        if ini.kind == InitialKind::Zero {
            return Ok(s);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plane = g.nx * g.ny;
        let random = ini.kind == InitialKind::Random;
        let draw = |rng: &mut ChaCha8Rng| if random { rng.gen::<f64>() } else { 1.0 };
        for n in 0..g.len() {
            let k = n / plane;
            let p = g.p_center(k);
            let tbar = model.profile.tbar[k];
            let t = if random { tbar * (1.0 + ini.t_noise * (2.0 * rng.gen::<f64>() - 1.0)) } else { tbar };
            let qvs = saturation_mixing_ratio(p, t, &model.params)?;
            s.t.values[n] = t;
            s.qv.values[n] = ini.rh * draw(&mut rng) * qvs;
            s.qc.values[n] = ini.qc * draw(&mut rng);
            s.qr.values[n] = ini.qr * draw(&mut rng);
        }
        Ok(s)
    }

    /// Configuration that produces an all-zero run: zero data, no velocity,
    /// homogeneous Neumann boundaries.
    pub fn zero_data() -> Self {
        Self {
            grid: GridSection { nx: 4, ny: 2, nz: 4, ..GridSection::default() },
            boundary: BoundarySection {
                t: BoundarySpec::default(),
                qv: BoundarySpec::default(),
                qc: BoundarySpec::default(),
                qr: BoundarySpec::default(),
            },
            velocity: VelocitySection { kind: VelocityKind::None, amplitude: 0.0, cfl: 0.0 },
            time: TimeSection { t_end: 0.5, ..TimeSection::default() },
            initial: InitialSection { kind: InitialKind::Zero, ..InitialSection::default() },
            ..Self::default()
        }
    }
}
