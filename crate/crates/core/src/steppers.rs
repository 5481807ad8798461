//! Time integrators: the Bloch-decomposition stepper (exact lattice flow in
//! band coordinates, then the external potential as a phase) and the classical
//! time-splitting spectral stepper (free flow in Fourier space, then the full
//! potential as a phase).

use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::band::BandTable;
use crate::blochxform::{band_mass_with, BandMass, BlochBasis, CellTransform};
use crate::error::{Error, Result};
use crate::grid::{check_same_grid, SimulationGrid, WaveField};
use crate::potential::{ExternalPotential, PeriodicPotential};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    BlochDecomposition,
    TimeSplitting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Splitting {
    Lie,
    Strang,
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "bd" => Ok(Scheme::BlochDecomposition),
            "ts" => Ok(Scheme::TimeSplitting),
            other => Err(Error::Config(format!("unknown scheme `{other}`"))),
        }
    }
}

impl FromStr for Splitting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "lie" => Ok(Splitting::Lie),
            "strang" => Ok(Splitting::Strang),
            other => Err(Error::Config(format!("unknown splitting `{other}`"))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::BlochDecomposition => "bd",
            Scheme::TimeSplitting => "ts",
        })
    }
}

impl std::fmt::Display for Splitting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Splitting::Lie => "lie",
            Splitting::Strang => "strang",
        })
    }
}

#[derive(Debug, Clone)]
pub struct StepperConfig {
    pub scheme: Scheme,
    pub splitting: Splitting,
    pub dt: f64,
    /// Required by the Bloch-decomposition scheme.
    pub bands: Option<Arc<BandTable>>,
    /// Required by the time-splitting scheme.
    pub lattice: Option<Arc<PeriodicPotential>>,
    pub external: ExternalPotential,
}

impl StepperConfig {
    pub fn bloch(bands: Arc<BandTable>, external: ExternalPotential, splitting: Splitting, dt: f64) -> Self {
        Self {
            scheme: Scheme::BlochDecomposition,
            splitting,
            dt,
            bands: Some(bands),
            lattice: None,
            external,
        }
    }

    pub fn splitting_spectral(
        lattice: Arc<PeriodicPotential>,
        external: ExternalPotential,
        splitting: Splitting,
        dt: f64,
    ) -> Self {
        Self {
            scheme: Scheme::TimeSplitting,
            splitting,
            dt,
            bands: None,
            lattice: Some(lattice),
            external,
        }
    }
}

enum Engine {
    Bloch {
        basis: BlochBasis,
        cells: CellTransform,
    },
    Spectral {
        forward: Arc<dyn Fft<f64>>,
        inverse: Arc<dyn Fft<f64>>,
        /// `κ²` in FFT order.
        wavenumber_sq: Vec<f64>,
        /// `V(x/ε) + U(x)` at the grid points.
        potential: Vec<f64>,
    },
}

/// A stepper with transforms planned and per-grid tables precomputed.
pub struct Propagator {
    grid: Arc<SimulationGrid>,
    splitting: Splitting,
    dt: f64,
    external: Vec<f64>,
    engine: Engine,
}

impl Propagator {
    pub fn new(config: &StepperConfig, grid: Arc<SimulationGrid>) -> Result<Self> {
        if !(config.dt.is_finite() && config.dt != 0.0) {
            return Err(Error::Config(format!("time step {} must be nonzero", config.dt)));
        }
        let external: Vec<f64> = grid.x_nodes().iter().map(|&x| config.external.value(x)).collect();
        let engine = match config.scheme {
            Scheme::BlochDecomposition => {
                let table = config
                    .bands
                    .as_ref()
                    .ok_or_else(|| Error::Config("Bloch-decomposition stepper needs a band table".into()))?;
                check_same_grid(table.grid(), &grid)?;
                Engine::Bloch {
                    basis: BlochBasis::new(table)?,
                    cells: CellTransform::new(grid.cells()),
                }
            }
            Scheme::TimeSplitting => {
                let lattice = config
                    .lattice
                    .as_ref()
                    .ok_or_else(|| Error::Config("time-splitting stepper needs a lattice potential".into()))?;
                let n = grid.len();
                let mut planner = FftPlanner::new();
                let wavenumber_sq = (0..n)
                    .map(|j| {
                        let kappa = if j < n / 2 { j as f64 } else { j as f64 - n as f64 };
                        kappa * kappa
                    })
                    .collect();
                let eps = grid.epsilon();
                let potential = grid
                    .x_nodes()
                    .iter()
                    .zip(&external)
                    .map(|(&x, &u)| lattice.value(x / eps) + u)
                    .collect();
                Engine::Spectral {
                    forward: planner.plan_fft_forward(n),
                    inverse: planner.plan_fft_inverse(n),
                    wavenumber_sq,
                    potential,
                }
            }
        };
        Ok(Self {
            grid,
            splitting: config.splitting,
            dt: config.dt,
            external,
            engine,
        })
    }

    pub fn grid(&self) -> &Arc<SimulationGrid> {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    /// One step of length `dt` with the configured splitting.
    pub fn step(&self, psi: &WaveField) -> Result<WaveField> {
        check_same_grid(&self.grid, psi.grid())?;
        let dt = self.dt;
        match self.splitting {
            Splitting::Lie => {
                let a = self.lattice_part(psi, dt)?;
                Ok(self.potential_part(&a, dt))
            }
            Splitting::Strang => {
                let a = self.lattice_part(psi, 0.5 * dt)?;
                let b = self.potential_part(&a, dt);
                self.lattice_part(&b, 0.5 * dt)
            }
        }
    }

    /// Exact lattice flow (BD) or free flow (TS) over `dt`.
    fn lattice_part(&self, psi: &WaveField, dt: f64) -> Result<WaveField> {
        let eps = self.grid.epsilon();
        match &self.engine {
            Engine::Bloch { basis, cells } => {
                let tilde = cells.forward(psi);
                let evolved = basis.filter(&tilde, |m, l| Complex64::from_polar(1.0, -basis.energy(m, l) * dt / eps))?;
                Ok(cells.inverse(&evolved))
            }
            Engine::Spectral {
                forward,
                inverse,
                wavenumber_sq,
                ..
            } => {
                let n = wavenumber_sq.len();
                let mut buf = psi.values().to_vec();
                forward.process(&mut buf);
                let scale = 1.0 / n as f64;
                buf.par_iter_mut().zip(wavenumber_sq).for_each(|(z, &k2)| {
                    *z *= Complex64::from_polar(scale, -eps * k2 * dt / 2.0);
                });
                inverse.process(&mut buf);
                WaveField::new(self.grid.clone(), buf)
            }
        }
    }

    fn potential_part(&self, psi: &WaveField, dt: f64) -> WaveField {
        let eps = self.grid.epsilon();
        let pot = match &self.engine {
            Engine::Bloch { .. } => &self.external,
            Engine::Spectral { potential, .. } => potential,
        };
        let mut out = psi.clone();
        out.values_mut().par_iter_mut().zip(pot).for_each(|(z, &v)| {
            if v != 0.0 {
                *z *= Complex64::from_polar(1.0, -v * dt / eps);
            }
        });
        out
    }
}

/// Exact evolution under the lattice Hamiltonian through the band basis.
/// `dt` may be negative.
pub fn bd_periodic_flow(psi: &WaveField, bands: &BandTable, dt: f64, eps: f64) -> Result<WaveField> {
    check_same_grid(bands.grid(), psi.grid())?;
    let basis = BlochBasis::new(bands)?;
    let cells = CellTransform::new(psi.grid().cells());
    let evolved = basis.filter(&cells.forward(psi), |m, l| {
        Complex64::from_polar(1.0, -basis.energy(m, l) * dt / eps)
    })?;
    Ok(cells.inverse(&evolved))
}

/// `ψ · e^{-iU(x) dt/ε}` pointwise.
pub fn external_phase(psi: &WaveField, external: &ExternalPotential, dt: f64, eps: f64) -> WaveField {
    let grid = psi.grid().clone();
    let mut out = psi.clone();
    for (z, &x) in out.values_mut().iter_mut().zip(grid.x_nodes()) {
        let u = external.value(x);
        if u != 0.0 {
            *z *= Complex64::from_polar(1.0, -u * dt / eps);
        }
    }
    out
}

pub fn bd_step(psi: &WaveField, config: &StepperConfig) -> Result<WaveField> {
    if config.scheme != Scheme::BlochDecomposition {
        return Err(Error::Config("bd_step called with a time-splitting configuration".into()));
    }
    Propagator::new(config, psi.grid().clone())?.step(psi)
}

pub fn ts_step(psi: &WaveField, config: &StepperConfig) -> Result<WaveField> {
    if config.scheme != Scheme::TimeSplitting {
        return Err(Error::Config("ts_step called with a Bloch-decomposition configuration".into()));
    }
    Propagator::new(config, psi.grid().clone())?.step(psi)
}

#[derive(Debug, Clone, Default)]
pub struct EvolveOptions {
    /// Keep the state every this many steps (the final state is always kept).
    pub snapshot_every: Option<usize>,
    /// Track per-band masses after every step. Needs a band table.
    pub band_masses: bool,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub final_state: WaveField,
    /// `(t, ψ(t))`, including `t = 0` when snapshots are on.
    pub snapshots: Vec<(f64, WaveField)>,
    /// Discrete mass after each step, starting with the initial mass.
    pub mass: Vec<f64>,
    /// Per-step band masses, when requested.
    pub band_masses: Vec<Vec<BandMass>>,
    pub seconds_per_step: f64,
}

impl Trajectory {
    /// `max_n |mass_n - mass_0|`.
    pub fn mass_drift(&self) -> f64 {
        let m0 = self.mass[0];
        self.mass.iter().map(|m| (m - m0).abs()).fold(0.0, f64::max)
    }
}

/// `steps` applications of the configured step with `dt = t_end / steps`.
pub fn evolve(
    psi0: &WaveField,
    config: &StepperConfig,
    t_end: f64,
    steps: usize,
    options: &EvolveOptions,
) -> Result<Trajectory> {
    if steps == 0 || !(t_end > 0.0) {
        return Err(Error::Config(format!("need steps ≥ 1 and T > 0 (got {steps}, {t_end})")));
    }
    let dt = t_end / steps as f64;
    let mut cfg = config.clone();
    cfg.dt = dt;
    let prop = Propagator::new(&cfg, psi0.grid().clone())?;
    let masses_with = if options.band_masses {
        let table = config
            .bands
            .as_ref()
            .ok_or_else(|| Error::Config("band-mass monitoring needs a band table".into()))?;
        Some((BlochBasis::new(table)?, CellTransform::new(psi0.grid().cells())))
    } else {
        None
    };
    let record_masses = |psi: &WaveField| -> Result<Vec<BandMass>> {
        let (basis, cells) = masses_with.as_ref().expect("checked above");
        (0..basis.bands()).map(|m| band_mass_with(basis, cells, psi, m)).collect()
    };

    let mut traj = Trajectory {
        final_state: psi0.clone(),
        snapshots: Vec::new(),
        mass: vec![psi0.mass()],
        band_masses: Vec::new(),
        seconds_per_step: 0.0,
    };
    if options.snapshot_every.is_some() {
        traj.snapshots.push((0.0, psi0.clone()));
    }
    if masses_with.is_some() {
        traj.band_masses.push(record_masses(psi0)?);
    }
    let start = Instant::now();
    let mut psi = psi0.clone();
    for n in 1..=steps {
        psi = prop.step(&psi)?;
        if !psi.is_finite() {
            return Err(Error::NonFinite { step: n });
        }
        traj.mass.push(psi.mass());
        if masses_with.is_some() {
            traj.band_masses.push(record_masses(&psi)?);
        }
        if let Some(every) = options.snapshot_every {
            if n % every.max(1) == 0 || n == steps {
                traj.snapshots.push((n as f64 * dt, psi.clone()));
            }
        }
    }
    traj.seconds_per_step = start.elapsed().as_secs_f64() / steps as f64;
    traj.final_state = psi;
    Ok(traj)
}
