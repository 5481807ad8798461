//! Convergence studies, scheme comparisons and report output.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::band::{solve_bands, BandTable};
use crate::blochxform::{cell_forward, cell_inverse, BlochBasis};
use crate::error::{Error, Result};
use crate::grid::{difference_norms, discrete_norms, gaussian_profile, sample_gaussian, Norms, SimulationGrid, WaveField};
use crate::potential::{ExternalPotential, LatticeSpec, PeriodicPotential};
use crate::steppers::{evolve, EvolveOptions, Scheme, Splitting, StepperConfig};
use crate::wkb::{
    build_wkb_initial, hj_solve, max_group_velocity, reconstruct_sc, support_interval, transport_solve, BerryTerm,
    AmplitudeField, CausticPolicy, CausticReport, HjOptions, InitialPhase, PhaseField,
};

/// Default plane-wave cutoff for `R` points per cell.
pub fn default_truncation(resolution: usize) -> usize {
    resolution / 2 + 16
}

/// Which discretization parameter a study refines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    /// Vary `R` at fixed step count.
    Spatial,
    /// Vary the step size at fixed `R`.
    Temporal,
}

impl FromStr for Study {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "spatial" => Ok(Study::Spatial),
            "temporal" => Ok(Study::Temporal),
            other => Err(Error::Config(format!("unknown study `{other}`"))),
        }
    }
}

impl std::fmt::Display for Study {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Study::Spatial => "spatial",
            Study::Temporal => "temporal",
        })
    }
}

/// Initial state of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialState {
    /// Normalized Gaussian centred at `π`.
    Gaussian,
    /// Gaussian envelope times the Bloch function of a band at `k = 0` (0-based band).
    BandPacket(usize),
}

impl FromStr for InitialState {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "gaussian" {
            return Ok(InitialState::Gaussian);
        }
        match s.strip_prefix("band:").map(str::parse::<usize>) {
            Some(Ok(m)) if m >= 1 => Ok(InitialState::BandPacket(m - 1)),
            _ => Err(Error::Config(format!("unknown initial state `{s}`"))),
        }
    }
}

impl std::fmt::Display for InitialState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitialState::Gaussian => f.write_str("gaussian"),
            InitialState::BandPacket(m) => write!(f, "band:{}", m + 1),
        }
    }
}

/// How the reference solution is built: Strang BD on a grid refined by
/// `refine` in `R`, with `dt_divisor` times more steps than the finest level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferencePolicy {
    pub refine: usize,
    pub dt_divisor: usize,
}

impl Default for ReferencePolicy {
    fn default() -> Self {
        Self { refine: 2, dt_divisor: 10 }
    }
}

/// A convergence experiment, read from flat `key = value` text.
///
/// Keys: `scenario`, `epsilon` (decimal or `1/N`), `R`, `M`, `Lambda`,
/// `lattice`, `external`, `initial`, `schemes`, `splitting`, `study`,
/// `resolutions`, `dt`, `T`, `reference_refine`, `reference_dt_divisor`,
/// `out`, `seed`. Lists are comma separated; `#` starts a comment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub epsilon: f64,
    pub resolution: usize,
    pub bands: usize,
    pub truncation: Option<usize>,
    pub lattice: LatticeSpec,
    pub external: ExternalPotential,
    pub initial: InitialState,
    pub schemes: Vec<Scheme>,
    pub splitting: Splitting,
    pub study: Study,
    /// `R` values for spatial studies, increasing.
    pub resolutions: Vec<usize>,
    /// Step sizes; a single entry for spatial studies, decreasing for temporal ones.
    pub dts: Vec<f64>,
    pub t_end: f64,
    pub reference: ReferencePolicy,
    pub output: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: "default".into(),
            epsilon: 1.0 / 32.0,
            resolution: 16,
            bands: 8,
            truncation: None,
            lattice: LatticeSpec::Mathieu,
            external: ExternalPotential::None,
            initial: InitialState::Gaussian,
            schemes: vec![Scheme::BlochDecomposition],
            splitting: Splitting::Strang,
            study: Study::Temporal,
            resolutions: vec![16],
            dts: vec![0.01],
            t_end: 0.1,
            reference: ReferencePolicy::default(),
            output: PathBuf::from("out"),
            seed: 0,
        }
    }
}

fn parse_real(s: &str) -> Result<f64> {
    let s = s.trim();
    let bad = || Error::Config(format!("bad number `{s}`"));
    match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            Ok(a / b)
        }
        None => s.parse().map_err(|_| bad()),
    }
}

fn parse_list<T>(s: &str, item: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(|t| item(t.trim())).collect()
}

fn parse_count(s: &str) -> Result<usize> {
    s.trim().parse().map_err(|_| Error::Config(format!("bad count `{s}`")))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let value = value.trim();
            match key.trim() {
                "scenario" => cfg.scenario = value.to_string(),
                "epsilon" => cfg.epsilon = parse_real(value)?,
                "R" => cfg.resolution = parse_count(value)?,
                "M" => cfg.bands = parse_count(value)?,
                "Lambda" => cfg.truncation = Some(parse_count(value)?),
                "lattice" => cfg.lattice = value.parse()?,
                "external" => cfg.external = value.parse()?,
                "initial" => cfg.initial = value.parse()?,
                "schemes" => cfg.schemes = parse_list(value, str::parse)?,
                "splitting" => cfg.splitting = value.parse()?,
                "study" => cfg.study = value.parse()?,
                "resolutions" => cfg.resolutions = parse_list(value, parse_count)?,
                "dt" => cfg.dts = parse_list(value, parse_real)?,
                "T" => cfg.t_end = parse_real(value)?,
                "reference_refine" => cfg.reference.refine = parse_count(value)?,
                "reference_dt_divisor" => cfg.reference.dt_divisor = parse_count(value)?,
                "out" => cfg.output = PathBuf::from(value),
                "seed" => cfg.seed = value.parse().map_err(|_| Error::Config(format!("bad seed `{value}`")))?,
                other => return Err(Error::Config(format!("line {}: unknown key `{other}`", lineno + 1))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical `key = value` text; parsing it gives back the same config.
    pub fn to_text(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        let mut s = String::new();
        let _ = writeln!(s, "scenario = {}", self.scenario);
        let _ = writeln!(s, "epsilon = 1/{}", (1.0 / self.epsilon).round());
        let _ = writeln!(s, "R = {}", self.resolution);
        let _ = writeln!(s, "M = {}", self.bands);
        if let Some(l) = self.truncation {
            let _ = writeln!(s, "Lambda = {l}");
        }
        let _ = writeln!(s, "lattice = {}", self.lattice);
        let _ = writeln!(s, "external = {}", self.external);
        let _ = writeln!(s, "initial = {}", self.initial);
        let _ = writeln!(s, "schemes = {}", join(self.schemes.iter().map(|x| x.to_string()).collect()));
        let _ = writeln!(s, "splitting = {}", self.splitting);
        let _ = writeln!(s, "study = {}", self.study);
        let _ = writeln!(s, "resolutions = {}", join(self.resolutions.iter().map(|x| x.to_string()).collect()));
        let _ = writeln!(s, "dt = {}", join(self.dts.iter().map(|x| format!("{x:e}")).collect()));
        let _ = writeln!(s, "T = {:e}", self.t_end);
        let _ = writeln!(s, "reference_refine = {}", self.reference.refine);
        let _ = writeln!(s, "reference_dt_divisor = {}", self.reference.dt_divisor);
        let _ = writeln!(s, "out = {}", self.output.display());
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    /// Hex SHA-256 of the canonical text.
    pub fn digest(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        SimulationGrid::new(self.epsilon, self.resolution)?;
        if self.schemes.is_empty() {
            return Err(Error::Config("no schemes selected".into()));
        }
        if self.dts.is_empty() || self.dts.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Config("dt list must be non-empty and positive".into()));
        }
        if !(self.t_end > 0.0) {
            return Err(Error::Config("T must be positive".into()));
        }
        match self.study {
            Study::Temporal if self.dts.windows(2).any(|w| w[1] >= w[0]) => {
                Err(Error::Config("dt list must be strictly decreasing".into()))
            }
            Study::Spatial if self.resolutions.is_empty() || self.resolutions.windows(2).any(|w| w[1] <= w[0]) => {
                Err(Error::Config("resolutions must be strictly increasing".into()))
            }
            _ => Ok(()),
        }
    }

    fn steps_for(&self, dt: f64) -> Result<usize> {
        let n = self.t_end / dt;
        if (n - n.round()).abs() > 1e-6 * n.max(1.0) {
            return Err(Error::Config(format!("T = {} is not a multiple of dt = {dt}", self.t_end)));
        }
        Ok(n.round() as usize)
    }

    fn truncation_for(&self, resolution: usize) -> usize {
        self.truncation.unwrap_or_else(|| default_truncation(resolution)).max(resolution / 2 + 1)
    }
}

/// One grid of an experiment with its band table and lattice.
pub struct Setup {
    pub grid: Arc<SimulationGrid>,
    pub lattice: Arc<PeriodicPotential>,
    pub bands: Arc<BandTable>,
}

impl Setup {
    pub fn new(lattice: &LatticeSpec, epsilon: f64, resolution: usize, bands: usize, truncation: usize) -> Result<Self> {
        let grid = Arc::new(SimulationGrid::new(epsilon, resolution)?);
        let lattice = Arc::new(lattice.build(truncation)?);
        let bands = Arc::new(solve_bands(lattice.clone(), grid.clone(), truncation, bands.min(2 * truncation))?);
        Ok(Self { grid, lattice, bands })
    }

    pub fn initial(&self, state: InitialState) -> Result<WaveField> {
        match state {
            InitialState::Gaussian => Ok(sample_gaussian(self.grid.clone())),
            InitialState::BandPacket(m) => build_wkb_initial(
                &self.bands,
                m,
                &|x| Complex64::new(gaussian_profile(x), 0.0),
                InitialPhase::ZERO,
                self.grid.clone(),
            ),
        }
    }

    pub fn stepper(&self, scheme: Scheme, external: &ExternalPotential, splitting: Splitting, dt: f64) -> StepperConfig {
        match scheme {
            Scheme::BlochDecomposition => StepperConfig::bloch(self.bands.clone(), external.clone(), splitting, dt),
            Scheme::TimeSplitting => {
                StepperConfig::splitting_spectral(self.lattice.clone(), external.clone(), splitting, dt)
            }
        }
    }
}

/// Errors of one scheme at one refinement level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelResult {
    pub scheme: Scheme,
    /// `Δx/ε = 1/R` for spatial studies, `Δt` for temporal ones.
    pub h: f64,
    pub l2: f64,
    pub linf: f64,
    pub seconds_per_step: f64,
    pub mass_drift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub scenario: String,
    pub study: Study,
    pub levels: Vec<LevelResult>,
}

/// `log(e_i/e_{i+1}) / log(h_i/h_{i+1})` between adjacent levels.
pub fn observed_orders(h: &[f64], errors: &[f64]) -> Vec<f64> {
    h.windows(2)
        .zip(errors.windows(2))
        .map(|(h, e)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
        .collect()
}

impl ErrorReport {
    pub fn schemes(&self) -> Vec<Scheme> {
        let mut out: Vec<Scheme> = Vec::new();
        for l in &self.levels {
            if !out.contains(&l.scheme) {
                out.push(l.scheme);
            }
        }
        out
    }

    pub fn levels_of(&self, scheme: Scheme) -> Vec<&LevelResult> {
        self.levels.iter().filter(|l| l.scheme == scheme).collect()
    }

    /// Observed `(l², l^∞)` orders for one scheme.
    pub fn orders(&self, scheme: Scheme) -> (Vec<f64>, Vec<f64>) {
        let lv = self.levels_of(scheme);
        let h: Vec<f64> = lv.iter().map(|l| l.h).collect();
        let l2: Vec<f64> = lv.iter().map(|l| l.l2).collect();
        let linf: Vec<f64> = lv.iter().map(|l| l.linf).collect();
        (observed_orders(&h, &l2), observed_orders(&h, &linf))
    }
}

/// `(l², l^∞)` norms of `a - b`.
pub fn compare_solutions(a: &WaveField, b: &WaveField) -> Result<Norms> {
    difference_norms(a, b)
}

/// Runs every configured scheme at every refinement level against a common
/// fine-grid Bloch-decomposition reference.
pub fn run_convergence_study(config: &ExperimentConfig) -> Result<ErrorReport> {
    config.validate()?;
    let (resolutions, dts): (Vec<usize>, Vec<f64>) = match config.study {
        Study::Spatial => (config.resolutions.clone(), vec![config.dts[0]; config.resolutions.len()]),
        Study::Temporal => (vec![config.resolution; config.dts.len()], config.dts.clone()),
    };
    let finest_r = *resolutions.iter().max().expect("validated");
    let finest_dt = dts.iter().cloned().fold(f64::INFINITY, f64::min);
    let reference_r = finest_r * config.reference.refine;
    if reference_r <= finest_r && config.study == Study::Spatial {
        return Err(Error::ReferenceTooCoarse {
            reference: reference_r,
            finest: finest_r,
        });
    }
    let reference_setup = Setup::new(
        &config.lattice,
        config.epsilon,
        reference_r,
        config.bands,
        config.truncation_for(reference_r),
    )?;
    let reference_steps = config.steps_for(finest_dt)? * config.reference.dt_divisor.max(1);
    let reference = evolve(
        &reference_setup.initial(config.initial)?,
        &reference_setup.stepper(Scheme::BlochDecomposition, &config.external, Splitting::Strang, finest_dt),
        config.t_end,
        reference_steps,
        &EvolveOptions::default(),
    )?
    .final_state;

    let mut levels = Vec::new();
    let mut cached: Option<(usize, Setup)> = None;
    for (&r, &dt) in resolutions.iter().zip(&dts) {
        if cached.as_ref().is_none_or(|(cr, _)| *cr != r) {
            cached = Some((r, Setup::new(&config.lattice, config.epsilon, r, config.bands, config.truncation_for(r))?));
        }
        let setup = &cached.as_ref().expect("set above").1;
        let psi0 = setup.initial(config.initial)?;
        let exact = reference.restrict_to(&setup.grid)?;
        for &scheme in &config.schemes {
            let stepper = setup.stepper(scheme, &config.external, config.splitting, dt);
            let traj = evolve(&psi0, &stepper, config.t_end, config.steps_for(dt)?, &EvolveOptions::default())?;
            let err = compare_solutions(&traj.final_state, &exact)?;
            levels.push(LevelResult {
                scheme,
                h: match config.study {
                    Study::Spatial => 1.0 / r as f64,
                    Study::Temporal => dt,
                },
                l2: err.l2,
                linf: err.linf,
                seconds_per_step: traj.seconds_per_step,
                mass_drift: traj.mass_drift(),
            });
        }
    }
    Ok(ErrorReport {
        scenario: config.scenario.clone(),
        study: config.study,
        levels,
    })
}

/// A single-band WKB run checked against the full Bloch-decomposition solver.
#[derive(Clone)]
pub struct WkbScenario {
    pub lattice: LatticeSpec,
    /// 0-based band index.
    pub band: usize,
    pub external: ExternalPotential,
    pub phi0: InitialPhase,
    pub epsilon: f64,
    /// Points per cell of the comparison grid.
    pub resolution: usize,
    /// Bands kept by the full solver.
    pub bd_bands: usize,
    pub truncation: usize,
    pub t_end: f64,
    /// Number of comparison instants after `t = 0`, evenly spaced.
    pub snapshots: usize,
    pub bd_steps: usize,
    /// Phase grid size; must be a multiple of the comparison grid size.
    pub nx: usize,
    pub berry: BerryTerm,
    /// Quasi-momentum nodes of the band table used for WKB; at least `1/ε`.
    pub wkb_cells: usize,
}

impl WkbScenario {
    /// Mathieu band 1 under the harmonic potential with `φ₀ = 0`.
    pub fn mathieu_ground(epsilon: f64) -> Self {
        let cells = (1.0 / epsilon).round() as usize;
        Self {
            lattice: LatticeSpec::Mathieu,
            band: 0,
            external: ExternalPotential::Harmonic,
            phi0: InitialPhase::ZERO,
            epsilon,
            resolution: 32,
            bd_bands: 16,
            truncation: 32,
            t_end: 1.0,
            snapshots: 20,
            bd_steps: 200,
            nx: cells * 32 * 2,
            berry: BerryTerm::Include,
            wkb_cells: cells.max(64),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WkbComparison {
    pub times: Vec<f64>,
    pub l2: Vec<f64>,
    pub linf: Vec<f64>,
    pub caustic: CausticReport,
}

impl WkbComparison {
    pub fn sup_l2(&self) -> f64 {
        self.l2.iter().cloned().fold(0.0, f64::max)
    }

    pub fn sup_linf(&self) -> f64 {
        self.linf.iter().cloned().fold(0.0, f64::max)
    }
}

fn wkb_envelope(x: f64) -> Complex64 {
    Complex64::new((-5.0 * (x - PI).powi(2)).exp(), 0.0)
}

/// Phase and amplitude of a WKB scenario, ready for reconstruction on the
/// comparison grid.
pub struct WkbSolution {
    pub grid: Arc<SimulationGrid>,
    pub table: BandTable,
    pub band: usize,
    pub phase: PhaseField,
    pub amplitude: AmplitudeField,
    pub caustic: CausticReport,
}

impl WkbSolution {
    /// `ψ^sc` at the phase-grid time level nearest to `t`.
    pub fn field_near(&self, t: f64) -> Result<WaveField> {
        let level = self.phase.index_near(t);
        reconstruct_sc(&self.phase, &self.amplitude, &self.table, self.band, self.grid.clone(), level)
    }
}

/// Solves the eikonal and transport equations for the Gaussian envelope
/// `e^{-5(x-π)²}`. Time levels of the phase grid align with the scenario's
/// snapshot instants.
pub fn solve_wkb(s: &WkbScenario, grid: Arc<SimulationGrid>, lattice: Arc<PeriodicPotential>) -> Result<WkbSolution> {
    if !s.nx.is_multiple_of(grid.len()) {
        return Err(Error::Config(format!(
            "phase grid size {} is not a multiple of {}",
            s.nx,
            grid.len()
        )));
    }
    if s.snapshots == 0 {
        return Err(Error::Config("snapshot count must be positive".into()));
    }
    let wkb_grid = Arc::new(SimulationGrid::new(1.0 / s.wkb_cells as f64, 4)?);
    let table = solve_bands(lattice, wkb_grid, s.truncation, s.band + 2)?;

    let vmax = max_group_velocity(&table, s.band)?;
    let dx = 2.0 * PI / s.nx as f64;
    let per_snapshot = ((s.t_end / s.snapshots as f64) / (0.45 * dx / vmax.max(1e-12))).ceil().max(1.0) as usize;
    let hj_dt = s.t_end / (per_snapshot * s.snapshots) as f64;
    let speed = 1.1 * vmax;
    let options = HjOptions {
        policy: CausticPolicy::Error,
        window: support_interval(&wkb_envelope, 1e-10, speed * s.t_end, s.nx),
    };
    let hj = hj_solve(&table, s.band, &s.external, s.phi0, s.t_end, s.nx, hj_dt, &options)?;
    let support = support_interval(&wkb_envelope, 1e-16, speed * s.t_end, s.nx);
    let amplitude = transport_solve(&table, s.band, &s.external, &hj.phase, &wkb_envelope, s.berry, support)?;
    Ok(WkbSolution {
        grid,
        table,
        band: s.band,
        phase: hj.phase,
        amplitude,
        caustic: hj.caustic,
    })
}

/// Builds `a₀ χ_m e^{iφ₀/ε}` with the Gaussian envelope `e^{-5(x-π)²}`, evolves it
/// with Strang BD, and compares against the WKB reconstruction at each
/// snapshot.
pub fn run_wkb_comparison(s: &WkbScenario) -> Result<WkbComparison> {
    let sim = Setup::new(&s.lattice, s.epsilon, s.resolution, s.bd_bands, s.truncation)?;
    if s.snapshots == 0 || !s.bd_steps.is_multiple_of(s.snapshots) {
        return Err(Error::Config("BD steps must be a positive multiple of the snapshot count".into()));
    }
    let wkb = solve_wkb(s, sim.grid.clone(), sim.lattice.clone())?;
    let psi0 = build_wkb_initial(&wkb.table, s.band, &wkb_envelope, s.phi0, sim.grid.clone())?;
    let bd = evolve(
        &psi0,
        &sim.stepper(Scheme::BlochDecomposition, &s.external, Splitting::Strang, s.t_end / s.bd_steps as f64),
        s.t_end,
        s.bd_steps,
        &EvolveOptions {
            snapshot_every: Some(s.bd_steps / s.snapshots),
            band_masses: false,
        },
    )?;

    let mut out = WkbComparison {
        times: Vec::new(),
        l2: Vec::new(),
        linf: Vec::new(),
        caustic: wkb.caustic.clone(),
    };
    for (t, psi) in &bd.snapshots {
        let err = compare_solutions(psi, &wkb.field_near(*t)?)?;
        out.times.push(*t);
        out.l2.push(err.l2);
        out.linf.push(err.linf);
    }
    Ok(out)
}

/// Output flavours of [`emit_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
    Svg,
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
            ReportFormat::Svg => "svg",
        }
    }
}

fn sci(x: f64) -> String {
    format!("{x:.5e}")
}

/// Rows of `(scheme, quantity, cells)`; order rows leave the first cell blank.
fn table_rows(report: &ErrorReport) -> (usize, Vec<(String, &'static str, Vec<String>)>) {
    let width = report
        .schemes()
        .iter()
        .map(|&s| report.levels_of(s).len())
        .max()
        .unwrap_or(0);
    let mut rows = Vec::new();
    for scheme in report.schemes() {
        let lv = report.levels_of(scheme);
        let name = scheme.to_string();
        let pad = |mut v: Vec<String>| {
            v.resize(width, String::new());
            v
        };
        let shifted = |o: Vec<f64>| pad(std::iter::once(String::new()).chain(o.into_iter().map(|x| format!("{x:.2}"))).collect());
        let (o2, oinf) = report.orders(scheme);
        let h_label = match report.study {
            Study::Spatial => "dx_over_eps",
            Study::Temporal => "dt",
        };
        rows.push((name.clone(), h_label, pad(lv.iter().map(|l| sci(l.h)).collect())));
        rows.push((name.clone(), "l2", pad(lv.iter().map(|l| sci(l.l2)).collect())));
        rows.push((name.clone(), "order_l2", shifted(o2)));
        rows.push((name.clone(), "linf", pad(lv.iter().map(|l| sci(l.linf)).collect())));
        rows.push((name.clone(), "order_linf", shifted(oinf)));
        rows.push((name.clone(), "mass_drift", pad(lv.iter().map(|l| sci(l.mass_drift)).collect())));
    }
    (width, rows)
}

/// Renders a report. Timings are left out so that output depends only on
/// the numbers being compared.
pub fn render_report(report: &ErrorReport, format: ReportFormat) -> Result<String> {
    if report.levels.is_empty() {
        return Err(Error::Config("empty report".into()));
    }
    let (width, rows) = table_rows(report);
    let mut s = String::new();
    match format {
        ReportFormat::Csv => {
            let header: Vec<String> = (1..=width).map(|i| format!("level{i}")).collect();
            let _ = writeln!(s, "scheme,quantity,{}", header.join(","));
            for (scheme, q, cells) in rows {
                let _ = writeln!(s, "{scheme},{q},{}", cells.join(","));
            }
        }
        ReportFormat::Markdown => {
            let _ = writeln!(s, "### {} ({} study)\n", report.scenario, report.study);
            let header: Vec<String> = (1..=width).map(|i| format!("level {i}")).collect();
            let _ = writeln!(s, "| scheme | quantity | {} |", header.join(" | "));
            let _ = writeln!(s, "|---|---|{}", "---|".repeat(width));
            for (scheme, q, cells) in rows {
                let _ = writeln!(s, "| {scheme} | {q} | {} |", cells.join(" | "));
            }
        }
        ReportFormat::Svg => s = render_svg(report),
    }
    Ok(s)
}

fn render_svg(report: &ErrorReport) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const PAD: f64 = 50.0;
    let pts: Vec<&LevelResult> = report.levels.iter().filter(|l| l.l2 > 0.0 && l.h > 0.0).collect();
    let bounds = |f: &dyn Fn(&LevelResult) -> f64| {
        let lo = pts.iter().map(|l| f(l).log10()).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(|l| f(l).log10()).fold(f64::NEG_INFINITY, f64::max);
        if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let (hx0, hx1) = bounds(&|l| l.h);
    let (ey0, ey1) = bounds(&|l| l.l2);
    let px = |h: f64| PAD + (h.log10() - hx0) / (hx1 - hx0) * (W - 2.0 * PAD);
    let py = |e: f64| H - PAD - (e.log10() - ey0) / (ey1 - ey0) * (H - 2.0 * PAD);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{PAD} {PAD} V{:.1} H{:.1}" stroke="black" fill="none"/>"#,
        H - PAD,
        W - PAD
    );
    let xlabel = match report.study {
        Study::Spatial => "dx/eps",
        Study::Temporal => "dt",
    };
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{xlabel} (log)</text>"#, W / 2.0, H - 15.0);
    let _ = writeln!(s, r#"<text x="15" y="{:.1}" font-size="12" transform="rotate(-90 15 {:.1})" text-anchor="middle">l2 error (log)</text>"#, H / 2.0, H / 2.0);
    for (i, scheme) in report.schemes().into_iter().enumerate() {
        let color = colors[i % colors.len()];
        let lv: Vec<&&LevelResult> = pts.iter().filter(|l| l.scheme == scheme).collect();
        let path: Vec<String> = lv.iter().map(|l| format!("{:.1},{:.1}", px(l.h), py(l.l2))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" stroke="{color}" fill="none"/>"#, path.join(" "));
        for l in &lv {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, px(l.h), py(l.l2));
        }
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="12" fill="{color}">{scheme}</text>"#, W - PAD - 30.0, PAD + 15.0 * i as f64);
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `<dir>/<scenario>.<ext>` and returns its path.
pub fn emit_report(report: &ErrorReport, format: ReportFormat, dir: &Path) -> Result<PathBuf> {
    let body = render_report(report, format)?;
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.{}", report.scenario, format.extension()));
    std::fs::write(&path, body)?;
    Ok(path)
}

/// Outcome of one self-test check.
#[derive(Debug, Clone)]
pub struct Check {
    pub module: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct SelftestSummary {
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl SelftestSummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.passed)
    }
}

fn check(module: &'static str, name: &'static str, value: Result<f64>, tol: f64) -> Check {
    match value {
        Ok(v) => Check {
            module,
            name,
            passed: v <= tol,
            detail: format!("{v:.3e} (tolerance {tol:.0e})"),
        },
        Err(e) => Check {
            module,
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn max_abs_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Small-size invariant checks across all modules.
pub fn selftest(seed: u64) -> SelftestSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    let grid = Arc::new(SimulationGrid::new(1.0 / 8.0, 16).expect("valid grid"));
    let random = WaveField::from_fn(grid.clone(), |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));

    checks.push(check(
        "blochxform",
        "cell transform round trip",
        Ok(max_abs_diff(cell_inverse(&cell_forward(&random)).values(), random.values())),
        1e-12,
    ));

    let setup = Setup::new(&LatticeSpec::Mathieu, 1.0 / 8.0, 16, 12, 16);
    checks.push(check(
        "band",
        "eigen-residual",
        match &setup {
            Err(e) => Err(Error::Config(e.to_string())),
            Ok(s) => (|| {
            let mut worst: f64 = 0.0;
            for (l, &k) in s.grid.k_nodes().iter().enumerate() {
                let h = crate::band::assemble_hk(&s.lattice, k, 16)?;
                for m in 0..s.bands.bands() {
                    let v = nalgebra::DVector::from_column_slice(s.bands.vector(m, l));
                    let r = h.as_matrix() * &v - v.scale(s.bands.energy(m, l));
                    worst = worst.max(r.norm());
                }
            }
            Ok(worst)
        })(),
        },
        1e-10,
    ));

    if let Ok(s) = &setup {
        let smooth = sample_gaussian(grid.clone());
        let projected = BlochBasis::new(&s.bands).and_then(|b| {
            let tilde = cell_forward(&smooth);
            let once = b.reconstruct(&b.project(&tilde)?)?;
            let twice = b.reconstruct(&b.project(&once)?)?;
            Ok(max_abs_diff(once.values(), twice.values()))
        });
        checks.push(check("blochxform", "projection idempotency", projected, 1e-10));

        let gauge = (|| {
            let phases: Vec<f64> = (0..s.bands.bands() * grid.cells()).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            let cells = grid.cells();
            let rotated = Arc::new(s.bands.rephased(|m, l| phases[m * cells + l]));
            let cfg = StepperConfig::bloch(s.bands.clone(), ExternalPotential::Harmonic, Splitting::Strang, 0.01);
            let cfg_rot = StepperConfig::bloch(rotated, ExternalPotential::Harmonic, Splitting::Strang, 0.01);
            let a = evolve(&smooth, &cfg, 0.05, 5, &EvolveOptions::default())?.final_state;
            let b = evolve(&smooth, &cfg_rot, 0.05, 5, &EvolveOptions::default())?.final_state;
            Ok(max_abs_diff(a.values(), b.values()))
        })();
        checks.push(check("steppers", "gauge invariance of BD", gauge, 1e-12));

        let one_step = (|| {
            let cfg = StepperConfig::bloch(s.bands.clone(), ExternalPotential::None, Splitting::Strang, 0.1);
            let a = evolve(&smooth, &cfg, 0.1, 1, &EvolveOptions::default())?.final_state;
            let b = evolve(&smooth, &cfg, 0.1, 10, &EvolveOptions::default())?.final_state;
            Ok(difference_norms(&a, &b)?.l2)
        })();
        checks.push(check("steppers", "BD one-step exactness", one_step, 1e-10));

        let dir = std::env::temp_dir().join(format!("blochdec-selftest-{}-{seed}", std::process::id()));
        let cache = (|| -> Result<f64> {
            std::fs::create_dir_all(&dir)?;
            let path = dir.join("bands.bin");
            s.bands.save(&path)?;
            let mut bytes = std::fs::read(&path)?;
            let i = rng.gen_range(0..bytes.len());
            bytes[i] ^= 0x01;
            std::fs::write(&path, bytes)?;
            match BandTable::load(&path, s.grid.clone(), s.lattice.clone()) {
                Err(Error::Corrupted(_)) => Ok(0.0),
                Err(e) => Err(e),
                Ok(_) => Ok(1.0),
            }
        })();
        let _ = std::fs::remove_dir_all(&dir);
        checks.push(check("band", "corrupted cache detected", cache, 0.0));
    }

    let free = (|| {
        let lattice = Arc::new(PeriodicPotential::free(8)?);
        let cfg = StepperConfig::splitting_spectral(lattice, ExternalPotential::None, Splitting::Strang, 0.05);
        let plane = WaveField::sample(grid.clone(), |x| Complex64::from_polar(1.0, 3.0 * x));
        let out = evolve(&plane, &cfg, 0.1, 2, &EvolveOptions::default())?.final_state;
        // e^{3ix} evolves with frequency ε·9/2 under iε∂ₜψ = -ε²/2 ∂ₓₓψ.
        let phase = Complex64::from_polar(1.0, -grid.epsilon() * 4.5 * 0.1);
        Ok(max_abs_diff(out.values(), plane.scaled(phase).values()))
    })();
    checks.push(check("steppers", "free plane wave", free, 1e-12));

    checks.push(check(
        "grid",
        "Gaussian normalization",
        Ok((discrete_norms(&sample_gaussian(grid)).l2 - 1.0).abs()),
        1e-10,
    ));

    SelftestSummary { seed, checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_of_power_laws() {
        let h = [0.1f64, 0.05, 0.025, 0.0125];
        for p in [1.0, 2.0, 4.5] {
            let e: Vec<f64> = h.iter().map(|h| 3.0 * h.powf(p)).collect();
            for o in observed_orders(&h, &e) {
                assert!((o - p).abs() < 1e-10);
            }
        }
        assert!(observed_orders(&[0.1], &[1.0]).is_empty());
    }

    #[test]
    fn config_round_trip() {
        let text = "scenario = t3\nepsilon = 1/32 # lattice\nR = 16\nM = 8\nlattice = kronig_penney\n\
                    external = harmonic\nschemes = bd, ts\nstudy = spatial\nresolutions = 4,8,16\n\
                    dt = 0.1\nT = 0.1\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.schemes, vec![Scheme::BlochDecomposition, Scheme::TimeSplitting]);
        assert_eq!(cfg.resolutions, vec![4, 8, 16]);
        assert!((cfg.epsilon - 1.0 / 32.0).abs() < 1e-15);
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(cfg.digest(), ExperimentConfig::parse(&cfg.to_text()).unwrap().digest());
    }

    #[test]
    fn config_rejects_bad_input() {
        assert!(ExperimentConfig::parse("R 16").is_err());
        assert!(ExperimentConfig::parse("colour = red").is_err());
        assert!(ExperimentConfig::parse("study = temporal\ndt = 0.01, 0.02").is_err());
        assert!(ExperimentConfig::parse("epsilon = 0.3").is_err());
    }

    fn sample_report(levels: usize) -> ErrorReport {
        ErrorReport {
            scenario: "sample".into(),
            study: Study::Spatial,
            levels: (0..levels)
                .map(|i| LevelResult {
                    scheme: Scheme::BlochDecomposition,
                    h: 1.0 / (4 << i) as f64,
                    l2: 0.3 / 10f64.powi(3 * i as i32),
                    linf: 0.5 / 10f64.powi(3 * i as i32),
                    seconds_per_step: 0.001 * (i + 1) as f64,
                    mass_drift: 1e-15,
                })
                .collect(),
        }
    }

    #[test]
    fn csv_shape_and_blank_orders() {
        let csv = render_report(&sample_report(4), ReportFormat::Csv).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "scheme,quantity,level1,level2,level3,level4");
        assert!(lines.iter().skip(1).all(|l| l.split(',').count() == 6));
        let order = lines.iter().find(|l| l.starts_with("bd,order_l2")).unwrap();
        assert!(order.starts_with("bd,order_l2,,"));

        let single = render_report(&sample_report(1), ReportFormat::Csv).unwrap();
        assert!(single.contains("bd,order_l2,\n"));
        assert!(render_report(&sample_report(0), ReportFormat::Csv).is_err());
    }

    #[test]
    fn emitted_files_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut report = sample_report(3);
        for format in [ReportFormat::Csv, ReportFormat::Markdown, ReportFormat::Svg] {
            let a = std::fs::read(emit_report(&report, format, dir.path()).unwrap()).unwrap();
            report.levels[0].seconds_per_step *= 7.0;
            let b = std::fs::read(emit_report(&report, format, dir.path()).unwrap()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn compare_identical_and_constant_offset() {
        let g = Arc::new(SimulationGrid::new(0.25, 8).unwrap());
        let a = sample_gaussian(g.clone());
        let n = compare_solutions(&a, &a).unwrap();
        assert_eq!((n.l2, n.linf), (0.0, 0.0));
        let c = 0.3;
        let b = WaveField::from_fn(g, |l, r| a.get(l, r) + c);
        let n = compare_solutions(&b, &a).unwrap();
        assert!((n.l2 - c * (2.0 * PI).sqrt()).abs() < 1e-12);
        assert!((n.linf - c).abs() < 1e-12);
    }

    #[test]
    fn reference_must_be_finer() {
        let cfg = ExperimentConfig {
            study: Study::Spatial,
            resolutions: vec![4, 8],
            reference: ReferencePolicy { refine: 1, dt_divisor: 1 },
            ..ExperimentConfig::default()
        };
        assert!(matches!(run_convergence_study(&cfg), Err(Error::ReferenceTooCoarse { .. })));
    }

    #[test]
    fn selftest_passes() {
        let s = selftest(7);
        assert!(s.passed(), "{:?}", s.first_failure());
    }
}
