//! Single-band WKB asymptotics: `ψ ≈ a(t,x) χ_m(x/ε, ∂ₓφ) e^{iφ(t,x)/ε}` with
//! the phase from the band Hamilton-Jacobi equation and the amplitude from the
//! Berry-corrected transport equation.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;

use crate::band::{chi_series, eigensolve, shift_modes, BandTable, Gauge};
use crate::error::{Error, Result};
use crate::grid::{SimulationGrid, WaveField};
use crate::potential::ExternalPotential;

const K_QUANTUM: f64 = 1e6;
const GAP_TOL: f64 = 1e-8;
const MIN_NODE_OVERLAP: f64 = 0.5;
const RELAXATION_FACTOR: f64 = 1.1;
const CFL: f64 = 0.5;
const CAUSTIC_GROWTH: f64 = 50.0;

/// Bloch functions of one band at arbitrary quasi-momentum, in a gauge that is
/// smooth and periodic across the zone edge.
///
/// A fresh eigensolve at the folded momentum is phase-matched to the nearest
/// parallel-transported table node and then multiplied by `e^{iγ(k + 1/2)}`,
/// where `γ` is the band's Zak phase. Momenta outside the zone are reached by
/// relabeling modes, `χ̂(λ, k + n) = χ̂(λ + n, k)`.
pub struct BlochWaves<'a> {
    table: &'a BandTable,
    band: usize,
    gamma: f64,
    berry_nodes: Vec<Option<f64>>,
    cache: Mutex<HashMap<i64, Arc<Vec<Complex64>>>>,
}

fn fold(p: f64) -> (i64, i64) {
    // Quantized folded momentum key in [-K/2, K/2) and the number of zones crossed.
    let key = (p * K_QUANTUM).round() as i64;
    let half = (K_QUANTUM / 2.0) as i64;
    let period = K_QUANTUM as i64;
    let folded = (key + half).rem_euclid(period) - half;
    (folded, (key - folded) / period)
}

impl<'a> BlochWaves<'a> {
    pub fn new(table: &'a BandTable, band: usize) -> Result<Self> {
        if band >= table.bands() {
            return Err(Error::BandIndexOutOfRange {
                index: band,
                available: table.bands(),
            });
        }
        if table.gauge() != Gauge::ParallelTransport {
            return Err(Error::Config("smooth Bloch gauge needs a parallel-transported band table".into()));
        }
        let gamma = table.holonomy(band).unwrap_or(0.0);
        let berry_nodes = (0..table.grid().cells())
            .map(|l| table.berry_connection(band, l).ok().map(|b| b.im))
            .collect();
        Ok(Self {
            table,
            band,
            gamma,
            berry_nodes,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn band(&self) -> usize {
        self.band
    }

    /// Zak phase used for the periodic gauge.
    pub fn zak_phase(&self) -> f64 {
        self.gamma
    }

    fn folded_vector(&self, key: i64) -> Result<Arc<Vec<Complex64>>> {
        if let Some(v) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(v.clone());
        }
        let k = key as f64 / K_QUANTUM;
        let table = self.table;
        let m = self.band;
        let (energies, vectors) = eigensolve(table.potential(), k, table.truncation())?;
        let below = if m > 0 { energies[m] - energies[m - 1] } else { f64::INFINITY };
        let above = energies.get(m + 1).map_or(f64::INFINITY, |e| e - energies[m]);
        let gap = below.min(above);
        if gap <= GAP_TOL {
            return Err(Error::BandGapTooSmall { band: m, k, gap });
        }
        let mut v: Vec<Complex64> = vectors.column(m).iter().copied().collect();
        let cells = table.grid().cells();
        let node = ((k + 0.5) * cells as f64).round() as usize;
        let reference: Vec<Complex64> = if node >= cells {
            let ext = shift_modes(table.vector(m, 0), 1);
            let ph = Complex64::from_polar(1.0, -self.gamma);
            ext.into_iter().map(|z| z * ph).collect()
        } else {
            table.vector(m, node).to_vec()
        };
        let overlap: Complex64 = reference.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
        if overlap.norm() < MIN_NODE_OVERLAP {
            return Err(Error::BandGapTooSmall { band: m, k, gap });
        }
        let phase = (overlap / overlap.norm()).conj() * Complex64::from_polar(1.0, self.gamma * (k + 0.5));
        v.iter_mut().for_each(|z| *z *= phase);
        let v = Arc::new(v);
        self.cache.lock().expect("cache lock").insert(key, v.clone());
        Ok(v)
    }

    /// Coefficients `χ̂_m(λ, p)`, `λ = -Λ, …, Λ-1`.
    pub fn coefficients(&self, p: f64) -> Result<Vec<Complex64>> {
        let (key, zones) = fold(p);
        let v = self.folded_vector(key)?;
        Ok(if zones == 0 { v.to_vec() } else { shift_modes(&v, zones) })
    }

    /// `χ_m(y, p)`.
    pub fn chi(&self, y: f64, p: f64) -> Result<Complex64> {
        Ok(chi_series(&self.coefficients(p)?, self.table.truncation(), y))
    }

    /// `(E, ∂_k E, ∂²_k E)` at `p`.
    pub fn jet(&self, p: f64) -> (f64, f64, f64) {
        self.table.band_jet(self.band, p).expect("band index checked")
    }

    /// Berry connection in the periodic gauge (imaginary part), linearly
    /// interpolated between table nodes.
    pub fn berry(&self, p: f64) -> Result<f64> {
        let cells = self.table.grid().cells();
        let s = (p + 0.5).rem_euclid(1.0) * cells as f64;
        let i = s.floor() as usize % cells;
        let t = s - s.floor();
        let j = (i + 1) % cells;
        let k = p.rem_euclid(1.0);
        let at = |l: usize| {
            self.berry_nodes[l].ok_or(Error::BandGapTooSmall {
                band: self.band,
                k,
                gap: self.table.gap(self.band, l),
            })
        };
        Ok((1.0 - t) * at(i)? + t * at(j)? + self.gamma)
    }
}

/// An initial phase profile `φ₀` and its derivative.
#[derive(Clone, Copy)]
pub struct InitialPhase {
    pub value: fn(f64) -> f64,
    pub slope: fn(f64) -> f64,
}

impl InitialPhase {
    pub const ZERO: InitialPhase = InitialPhase {
        value: |_| 0.0,
        slope: |_| 0.0,
    };
    /// `φ₀ = -cos x`
    pub const NEG_COS: InitialPhase = InitialPhase {
        value: |x| -x.cos(),
        slope: f64::sin,
    };
}

/// `f(x) χ_m(x/ε, φ₀'(x)) e^{iφ₀(x)/ε}` on the two-scale grid.
pub fn build_wkb_initial(
    table: &BandTable,
    band: usize,
    amplitude: &dyn Fn(f64) -> Complex64,
    phase: InitialPhase,
    grid: Arc<SimulationGrid>,
) -> Result<WaveField> {
    let waves = BlochWaves::new(table, band)?;
    let eps = grid.epsilon();
    let mut values = Vec::with_capacity(grid.len());
    for &x in grid.x_nodes() {
        let f = amplitude(x);
        if f == Complex64::new(0.0, 0.0) {
            values.push(f);
            continue;
        }
        let chi = waves.chi(x / eps, (phase.slope)(x))?;
        values.push(f * chi * Complex64::from_polar(1.0, (phase.value)(x) / eps));
    }
    WaveField::new(grid, values)
}

/// What to do when the phase develops a caustic before `t_end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CausticPolicy {
    #[default]
    Error,
    /// Stop at the onset and return what was computed.
    Truncate,
}

#[derive(Debug, Clone, Default)]
pub struct HjOptions {
    pub policy: CausticPolicy,
    /// Only watch `|∂ₓₓφ|` inside `[lo, hi]`; defaults to the whole domain.
    pub window: Option<(f64, f64)>,
}

/// Caustic onset diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct CausticReport {
    pub detected: bool,
    pub onset_time: Option<f64>,
    pub threshold: f64,
    /// `(t, max |∂ₓₓφ|)` after every step.
    pub history: Vec<(f64, f64)>,
}

/// Phase `φ` and its gradient `p = ∂ₓφ` on a uniform periodic grid, at every
/// time level of the Hamilton-Jacobi integration.
#[derive(Debug, Clone)]
pub struct PhaseField {
    pub band: usize,
    pub x: Vec<f64>,
    pub times: Vec<f64>,
    pub slope: Vec<Vec<f64>>,
    pub phase: Vec<Vec<f64>>,
}

impl PhaseField {
    pub fn nx(&self) -> usize {
        self.x.len()
    }

    pub fn dx(&self) -> f64 {
        2.0 * PI / self.x.len() as f64
    }

    /// Index of the stored time level closest to `t`.
    pub fn index_near(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, &ti) in self.times.iter().enumerate() {
            if (ti - t).abs() < (self.times[best] - t).abs() {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
pub struct HjSolution {
    pub phase: PhaseField,
    pub caustic: CausticReport,
}

/// Interval where `|f| ≥ rel · max|f|` on `nx` points, widened by `margin`.
pub fn support_interval(f: &dyn Fn(f64) -> Complex64, rel: f64, margin: f64, nx: usize) -> Option<(f64, f64)> {
    let xs: Vec<f64> = (0..nx).map(|j| 2.0 * PI * j as f64 / nx as f64).collect();
    let mags: Vec<f64> = xs.iter().map(|&x| f(x).norm()).collect();
    let peak = mags.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return None;
    }
    let inside: Vec<f64> = xs.iter().zip(&mags).filter(|(_, &m)| m >= rel * peak).map(|(&x, _)| x).collect();
    Some((inside[0] - margin, inside[inside.len() - 1] + margin))
}

/// `max_k |∂_k E_m(k)|`, sampled at eight points per table node.
pub fn max_group_velocity(table: &BandTable, band: usize) -> Result<f64> {
    let n = 8 * table.grid().cells();
    (0..n).try_fold(0.0f64, |acc, i| Ok(acc.max(table.band_slope(band, -0.5 + i as f64 / n as f64)?.abs())))
}

fn van_leer(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

struct HjOperator<'a> {
    waves: &'a BlochWaves<'a>,
    potential: Vec<f64>,
    /// `U'` at the nodes when it exists; the force then enters as a source
    /// term instead of through the flux, so the limiter never sees `U`.
    force: Option<Vec<f64>>,
    speed: f64,
    dx: f64,
}

impl HjOperator<'_> {
    /// Returns `(∂ₜp, ∂ₜφ)` for the relaxed scheme.
    fn rates(&self, p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = p.len();
        let a = self.speed;
        let energy: Vec<f64> = p.iter().map(|&q| self.waves.jet(q).0).collect();
        let flux_part: Vec<f64> = match self.force {
            Some(_) => energy.clone(),
            None => energy.iter().zip(&self.potential).map(|(e, u)| e + u).collect(),
        };
        let plus: Vec<f64> = flux_part.iter().zip(p).map(|(f, q)| f + a * q).collect();
        let minus: Vec<f64> = flux_part.iter().zip(p).map(|(f, q)| f - a * q).collect();
        let slope = |w: &[f64], j: usize| van_leer(w[j] - w[(j + n - 1) % n], w[(j + 1) % n] - w[j]);
        let flux: Vec<f64> = (0..n)
            .map(|j| {
                let jp = (j + 1) % n;
                let left = plus[j] + 0.5 * slope(&plus, j);
                let right = minus[jp] - 0.5 * slope(&minus, jp);
                0.5 * (left + right)
            })
            .collect();
        let dp = (0..n)
            .map(|j| {
                let source = self.force.as_ref().map_or(0.0, |f| f[j]);
                -(flux[j] - flux[(j + n - 1) % n]) / self.dx - source
            })
            .collect();
        let dphi = energy.iter().zip(&self.potential).map(|(e, u)| -(e + u)).collect();
        (dp, dphi)
    }
}

fn max_second_derivative(p: &[f64], x: &[f64], dx: f64, window: Option<(f64, f64)>) -> f64 {
    let n = p.len();
    (0..n)
        .filter(|&j| window.is_none_or(|(lo, hi)| x[j] >= lo && x[j] <= hi))
        .map(|j| ((p[(j + 1) % n] - p[(j + n - 1) % n]) / (2.0 * dx)).abs())
        .fold(0.0, f64::max)
}

/// Integrates `∂ₜφ + E_m(∂ₓφ) + U = 0` on `nx` uniform points of `[0, 2π)`.
///
/// The gradient `p` is advanced with a second-order relaxed scheme (MUSCL on
/// the characteristic variables `E(p) ± a p`, Heun in time, `-U'` as a
/// source) and `φ` pointwise with the same stages. A potential without a
/// derivative is put into the flux instead. The step is shortened so that `t_end` is hit exactly.
#[allow(clippy::too_many_arguments)]
pub fn hj_solve(
    table: &BandTable,
    band: usize,
    external: &ExternalPotential,
    phi0: InitialPhase,
    t_end: f64,
    nx: usize,
    dt: f64,
    options: &HjOptions,
) -> Result<HjSolution> {
    let waves = BlochWaves::new(table, band)?;
    if nx < 8 || !(t_end > 0.0) || !(dt > 0.0) {
        return Err(Error::Config(format!("bad Hamilton-Jacobi setup: nx={nx}, T={t_end}, dt={dt}")));
    }
    let dx = 2.0 * PI / nx as f64;
    let vmax = max_group_velocity(table, band)?;
    let limit = CFL * dx / vmax.max(1e-300);
    if dt > limit {
        return Err(Error::CflViolation { dt, limit });
    }
    // Tolerate rounding when dt was computed as t_end / n.
    let steps = (t_end / dt * (1.0 - 1e-12)).ceil() as usize;
    let dt = t_end / steps as f64;
    let x: Vec<f64> = (0..nx).map(|j| j as f64 * dx).collect();
    let op = HjOperator {
        waves: &waves,
        potential: x.iter().map(|&x| external.value(x)).collect(),
        force: x.iter().map(|&x| external.derivative(x)).collect(),
        speed: RELAXATION_FACTOR * vmax,
        dx,
    };
    let mut p: Vec<f64> = x.iter().map(|&x| (phi0.slope)(x)).collect();
    let mut phi: Vec<f64> = x.iter().map(|&x| (phi0.value)(x)).collect();
    let initial = max_second_derivative(&p, &x, dx, options.window);
    let threshold = CAUSTIC_GROWTH * initial.max(1.0);

    let mut field = PhaseField {
        band,
        x: x.clone(),
        times: vec![0.0],
        slope: vec![p.clone()],
        phase: vec![phi.clone()],
    };
    let mut report = CausticReport {
        detected: false,
        onset_time: None,
        threshold,
        history: vec![(0.0, initial)],
    };
    for n in 1..=steps {
        let (dp1, dphi1) = op.rates(&p);
        let p1: Vec<f64> = p.iter().zip(&dp1).map(|(a, b)| a + dt * b).collect();
        let phi1: Vec<f64> = phi.iter().zip(&dphi1).map(|(a, b)| a + dt * b).collect();
        let (dp2, dphi2) = op.rates(&p1);
        for j in 0..nx {
            p[j] = 0.5 * (p[j] + p1[j] + dt * dp2[j]);
            phi[j] = 0.5 * (phi[j] + phi1[j] + dt * dphi2[j]);
        }
        if p.iter().chain(&phi).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: n });
        }
        let t = n as f64 * dt;
        let curvature = max_second_derivative(&p, &x, dx, options.window);
        report.history.push((t, curvature));
        if curvature > threshold {
            report.detected = true;
            report.onset_time = Some(t);
            match options.policy {
                CausticPolicy::Error => return Err(Error::CausticReached(Box::new(report))),
                CausticPolicy::Truncate => break,
            }
        }
        field.times.push(t);
        field.slope.push(p.clone());
        field.phase.push(phi.clone());
    }
    Ok(HjSolution { phase: field, caustic: report })
}

/// Whether the transport equation keeps the Berry-phase term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BerryTerm {
    #[default]
    Include,
    Omit,
}

/// Complex amplitude on the phase grid at every stored time level.
#[derive(Debug, Clone)]
pub struct AmplitudeField {
    pub band: usize,
    pub times: Vec<f64>,
    pub values: Vec<Vec<Complex64>>,
}

impl AmplitudeField {
    /// `Σ |a|² Δx` at time level `i`.
    pub fn mass(&self, i: usize) -> f64 {
        let n = self.values[i].len();
        self.values[i].iter().map(|z| z.norm_sqr()).sum::<f64>() * 2.0 * PI / n as f64
    }
}

/// Periodic cubic Lagrange interpolation on `n` uniform points of `[0, 2π)`.
fn cubic_at<T>(values: &[T], x: f64) -> T
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
{
    let n = values.len();
    let s = x.rem_euclid(2.0 * PI) / (2.0 * PI) * n as f64;
    let i = s.floor();
    let t = s - i;
    let i = i as isize;
    let at = |o: isize| values[(i + o).rem_euclid(n as isize) as usize];
    let w0 = -t * (t - 1.0) * (t - 2.0) / 6.0;
    let w1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
    let w2 = -(t + 1.0) * t * (t - 2.0) / 2.0;
    let w3 = (t + 1.0) * t * (t - 1.0) / 6.0;
    at(-1) * w0 + at(0) * w1 + at(1) * w2 + at(2) * w3
}

/// Solves `∂ₜa + E'(p)∂ₓa + ½∂ₓ(E'(p))a - β(p)U'(x)a = 0` along a phase
/// trajectory.
///
/// Strang splitting: half a step of the local exponential factor, a
/// semi-Lagrangian advection step (midpoint departure points, cubic
/// interpolation), then the other half step. Amplitude is kept at zero
/// outside `support`, the region reachable from the initial data.
pub fn transport_solve(
    table: &BandTable,
    band: usize,
    external: &ExternalPotential,
    phase: &PhaseField,
    a0: &dyn Fn(f64) -> Complex64,
    berry: BerryTerm,
    support: Option<(f64, f64)>,
) -> Result<AmplitudeField> {
    let waves = BlochWaves::new(table, band)?;
    let n = phase.nx();
    let dx = phase.dx();
    let x = &phase.x;
    let inside = |xj: f64| support.is_none_or(|(lo, hi)| xj >= lo && xj <= hi);
    let force: Vec<f64> = if external.is_zero() || berry == BerryTerm::Omit {
        vec![0.0; n]
    } else {
        x.iter()
            .map(|&xj| external.derivative(xj).ok_or(Error::NonSmoothForce))
            .collect::<Result<_>>()?
    };

    let velocity = |p: &[f64]| -> Vec<f64> { p.iter().map(|&q| waves.jet(q).1).collect() };
    let rate = |p: &[f64]| -> Result<Vec<Complex64>> {
        (0..n)
            .map(|j| {
                if !inside(x[j]) {
                    return Ok(Complex64::new(0.0, 0.0));
                }
                let (_, _, curv) = waves.jet(p[j]);
                let px = (p[(j + 1) % n] - p[(j + n - 1) % n]) / (2.0 * dx);
                let b = if force[j] != 0.0 { waves.berry(p[j])? } else { 0.0 };
                Ok(Complex64::new(-0.5 * curv * px, b * force[j]))
            })
            .collect()
    };

    let mut a: Vec<Complex64> = x
        .iter()
        .map(|&xj| if inside(xj) { a0(xj) } else { Complex64::new(0.0, 0.0) })
        .collect();
    let mut out = AmplitudeField {
        band,
        times: vec![phase.times[0]],
        values: vec![a.clone()],
    };
    for step in 1..phase.times.len() {
        let dt = phase.times[step] - phase.times[step - 1];
        let (p0, p1) = (&phase.slope[step - 1], &phase.slope[step]);
        let g0 = rate(p0)?;
        for (z, g) in a.iter_mut().zip(&g0) {
            *z *= (g * (0.5 * dt)).exp();
        }
        let v0 = velocity(p0);
        let v1 = velocity(p1);
        let vmid: Vec<f64> = v0.iter().zip(&v1).map(|(a, b)| 0.5 * (a + b)).collect();
        let advected: Vec<Complex64> = (0..n)
            .map(|j| {
                if !inside(x[j]) {
                    return Complex64::new(0.0, 0.0);
                }
                let half = x[j] - 0.5 * dt * vmid[j];
                let depart = x[j] - dt * cubic_at(&vmid, half);
                cubic_at(&a, depart)
            })
            .collect();
        a = advected;
        let g1 = rate(p1)?;
        for (z, g) in a.iter_mut().zip(&g1) {
            *z *= (g * (0.5 * dt)).exp();
        }
        if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite { step });
        }
        out.times.push(phase.times[step]);
        out.values.push(a.clone());
    }
    Ok(out)
}

/// Assembles `a χ_m(x/ε, ∂ₓφ) e^{iφ/ε}` at time level `level` on a two-scale
/// grid. When the phase grid contains the fine grid points they are read
/// directly; otherwise values are interpolated.
pub fn reconstruct_sc(
    phase: &PhaseField,
    amplitude: &AmplitudeField,
    table: &BandTable,
    band: usize,
    grid: Arc<SimulationGrid>,
    level: usize,
) -> Result<WaveField> {
    let waves = BlochWaves::new(table, band)?;
    let eps = grid.epsilon();
    let n = phase.nx();
    let stride = n.is_multiple_of(grid.len()).then(|| n / grid.len());
    let (p, phi, a) = (&phase.slope[level], &phase.phase[level], &amplitude.values[level]);
    let mut values = Vec::with_capacity(grid.len());
    for (i, &x) in grid.x_nodes().iter().enumerate() {
        let (pv, phv, av) = match stride {
            Some(s) => (p[i * s], phi[i * s], a[i * s]),
            None => (cubic_at(p, x), cubic_at(phi, x), cubic_at(a, x)),
        };
        if av == Complex64::new(0.0, 0.0) {
            values.push(av);
            continue;
        }
        let chi = waves.chi(x / eps, pv)?;
        values.push(av * chi * Complex64::from_polar(1.0, phv / eps));
    }
    WaveField::new(grid, values)
}

/// A point `(t, X_t, Ξ_t)` on a bicharacteristic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayPoint {
    pub t: f64,
    pub x: f64,
    pub xi: f64,
}

/// RK4 integration of `Ẋ = E_m'(Ξ)`, `Ξ̇ = -U'(X)`.
pub fn bicharacteristics(
    table: &BandTable,
    band: usize,
    external: &ExternalPotential,
    x0: f64,
    xi0: f64,
    t_end: f64,
    dt: f64,
) -> Result<Vec<RayPoint>> {
    if !external.is_smooth() {
        return Err(Error::NonSmoothForce);
    }
    if band >= table.bands() {
        return Err(Error::BandIndexOutOfRange {
            index: band,
            available: table.bands(),
        });
    }
    let steps = (t_end / dt).ceil().max(1.0) as usize;
    let dt = t_end / steps as f64;
    let rhs = |x: f64, xi: f64| -> (f64, f64) {
        let v = table.band_jet(band, xi).expect("band checked").1;
        let f = external.derivative(x.rem_euclid(2.0 * PI)).expect("smooth potential");
        (v, -f)
    };
    let mut out = Vec::with_capacity(steps + 1);
    let (mut x, mut xi) = (x0, xi0);
    out.push(RayPoint { t: 0.0, x, xi });
    for n in 1..=steps {
        let (k1x, k1p) = rhs(x, xi);
        let (k2x, k2p) = rhs(x + 0.5 * dt * k1x, xi + 0.5 * dt * k1p);
        let (k3x, k3p) = rhs(x + 0.5 * dt * k2x, xi + 0.5 * dt * k2p);
        let (k4x, k4p) = rhs(x + dt * k3x, xi + dt * k3p);
        x += dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        xi += dt / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        out.push(RayPoint { t: n as f64 * dt, x, xi });
    }
    Ok(out)
}

/// First time two neighbouring rays from a family launched on `[lo, hi]` with
/// `Ξ₀ = φ₀'(x₀)` cross, or `None` if they stay ordered up to `t_end`.
#[allow(clippy::too_many_arguments)]
pub fn first_fold_time(
    table: &BandTable,
    band: usize,
    external: &ExternalPotential,
    phi0: InitialPhase,
    window: (f64, f64),
    rays: usize,
    t_end: f64,
    dt: f64,
) -> Result<Option<f64>> {
    let starts: Vec<f64> = (0..rays)
        .map(|i| window.0 + (window.1 - window.0) * i as f64 / (rays - 1) as f64)
        .collect();
    let paths = starts
        .iter()
        .map(|&x0| bicharacteristics(table, band, external, x0, (phi0.slope)(x0), t_end, dt))
        .collect::<Result<Vec<_>>>()?;
    for step in 1..paths[0].len() {
        if paths.windows(2).any(|w| w[1][step].x <= w[0][step].x) {
            return Ok(Some(paths[0][step].t));
        }
    }
    Ok(None)
}
