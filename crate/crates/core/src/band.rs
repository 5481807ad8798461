//! Bloch bands from the truncated plane-wave eigenproblem.
//!
//! At quasi-momentum `k` the periodic part `χ(y, k) = Σ_λ χ̂(λ) e^{iλy}` of a
//! Bloch wave solves `H(k) χ̂ = E χ̂`, where `H(k)` couples the `2Λ` modes
//! `λ ∈ {-Λ, …, Λ-1}` through the lattice coefficients and carries the kinetic
//! term `½(k + λ)²` on its diagonal. Coefficient vectors are stored with unit
//! Euclidean norm, so `∫₀^{2π} |χ|² dy = 2π`.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::SimulationGrid;
use crate::potential::PeriodicPotential;

const CACHE_MAGIC: &[u8; 4] = b"BDBT";
const GAP_TOL: f64 = 1e-8;
const HOLONOMY_MIN_OVERLAP: f64 = 0.5;
const CURVATURE_STEP: f64 = 1e-3;

/// Dense `2Λ × 2Λ` Hermitian matrix `H(k)`.
#[derive(Debug, Clone)]
pub struct HermitianMatrix(DMatrix<Complex64>);

impl HermitianMatrix {
    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.0
    }
}

/// Assembles `H(k)` for modes `λ = -Λ, …, Λ-1` (row `i` holds `λ = i - Λ`).
pub fn assemble_hk(potential: &PeriodicPotential, k: f64, truncation: usize) -> Result<HermitianMatrix> {
    if truncation == 0 || truncation > potential.truncation() {
        return Err(Error::TruncationTooSmall {
            available: potential.truncation(),
            requested: truncation,
        });
    }
    let n = 2 * truncation;
    let lam0 = truncation as f64;
    let m = DMatrix::from_fn(n, n, |i, j| {
        let mut h = potential.coefficient(i as i64 - j as i64);
        if i == j {
            h += 0.5 * (k - lam0 + i as f64).powi(2);
        }
        h
    });
    Ok(HermitianMatrix(m))
}

/// All eigenpairs of `H(k)`, energies ascending, vectors as columns.
pub fn eigensolve(potential: &PeriodicPotential, k: f64, truncation: usize) -> Result<(Vec<f64>, DMatrix<Complex64>)> {
    let h = assemble_hk(potential, k, truncation)?.into_matrix();
    let eig = SymmetricEigen::try_new(h, 1e-15, 0).ok_or(Error::EigensolverFailure { k })?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let energies = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    Ok((energies, vectors))
}

/// Phase convention of the stored eigenvectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gauge {
    /// Anchored at the first node, then parallel-transported along the k-grid.
    ParallelTransport,
    /// Phases were modified after the solve.
    Rephased,
}

/// Energies and eigenvectors of the lowest `M` bands on the k-nodes of a grid.
#[derive(Debug, Clone)]
pub struct BandTable {
    grid: Arc<SimulationGrid>,
    potential: Arc<PeriodicPotential>,
    bands: usize,
    truncation: usize,
    energies: Vec<f64>,
    /// First energy above the stored bands at each node (for gap checks).
    ceiling: Vec<f64>,
    vectors: Vec<Complex64>,
    holonomy: Vec<Option<f64>>,
    gauge: Gauge,
    interp: Vec<Vec<Complex64>>,
}

/// Solves the lowest `bands` eigenpairs at every `k_ℓ` of `grid`.
pub fn solve_bands(
    potential: Arc<PeriodicPotential>,
    grid: Arc<SimulationGrid>,
    truncation: usize,
    bands: usize,
) -> Result<BandTable> {
    let capacity = 2 * truncation;
    if bands == 0 || bands > capacity {
        return Err(Error::BandCountExceedsTruncation { bands, capacity });
    }
    if 2 * truncation <= grid.resolution() {
        return Err(Error::TruncationMismatch {
            lambda: truncation,
            resolution: grid.resolution(),
        });
    }
    let solved: Vec<(Vec<f64>, DMatrix<Complex64>)> = grid
        .k_nodes()
        .par_iter()
        .map(|&k| eigensolve(&potential, k, truncation))
        .collect::<Result<_>>()?;

    let cells = grid.cells();
    let mut energies = vec![0.0; bands * cells];
    let mut ceiling = vec![f64::INFINITY; cells];
    let mut vectors = vec![Complex64::new(0.0, 0.0); bands * cells * capacity];
    for (l, (e, v)) in solved.iter().enumerate() {
        if bands < capacity {
            ceiling[l] = e[bands];
        }
        for m in 0..bands {
            energies[m * cells + l] = e[m];
            let base = (m * cells + l) * capacity;
            for i in 0..capacity {
                vectors[base + i] = v[(i, m)];
            }
        }
    }
    let mut table = BandTable {
        grid,
        potential,
        bands,
        truncation,
        energies,
        ceiling,
        vectors,
        holonomy: Vec::new(),
        gauge: Gauge::ParallelTransport,
        interp: Vec::new(),
    };
    table.fix_gauge();
    table.finish();
    Ok(table)
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn unit_phase(z: Complex64) -> Complex64 {
    let r = z.norm();
    if r > 0.0 {
        z / r
    } else {
        Complex64::new(1.0, 0.0)
    }
}

/// `(Sv)(λ) = v(λ + shift)`: the coefficient vector of the same Bloch wave
/// relabeled at quasi-momentum `k + shift`.
pub(crate) fn shift_modes(v: &[Complex64], shift: i64) -> Vec<Complex64> {
    let n = v.len() as i64;
    (0..n)
        .map(|i| {
            let j = i + shift;
            if (0..n).contains(&j) {
                v[j as usize]
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect()
}

impl BandTable {
    fn fix_gauge(&mut self) {
        let cells = self.grid.cells();
        let cap = 2 * self.truncation;
        for m in 0..self.bands {
            let first = (m * cells) * cap;
            let v0 = &mut self.vectors[first..first + cap];
            let mut best = 0;
            for (i, z) in v0.iter().enumerate() {
                if z.norm() > v0[best].norm() + 1e-12 {
                    best = i;
                }
            }
            let anchor = unit_phase(v0[best]).conj();
            v0.iter_mut().for_each(|z| *z *= anchor);
            for l in 1..cells {
                let (head, tail) = self.vectors.split_at_mut((m * cells + l) * cap);
                let prev = &head[(m * cells + l - 1) * cap..];
                let cur = &mut tail[..cap];
                let align = unit_phase(inner(prev, cur)).conj();
                cur.iter_mut().for_each(|z| *z *= align);
            }
        }
        self.gauge = Gauge::ParallelTransport;
    }

    fn finish(&mut self) {
        let cells = self.grid.cells();
        self.holonomy = (0..self.bands)
            .map(|m| {
                let isolated = self.gap(m, 0) > GAP_TOL && self.gap(m, cells - 1) > GAP_TOL;
                let last = self.vector_slice(m, cells - 1);
                let wrapped = shift_modes(self.vector_slice(m, 0), 1);
                let overlap = inner(last, &wrapped);
                (isolated && overlap.norm() >= HOLONOMY_MIN_OVERLAP).then(|| overlap.arg())
            })
            .collect();
        self.interp = (0..self.bands)
            .map(|m| trig_coefficients(&self.energies[m * cells..(m + 1) * cells]))
            .collect();
    }

    pub fn grid(&self) -> &Arc<SimulationGrid> {
        &self.grid
    }

    pub fn potential(&self) -> &Arc<PeriodicPotential> {
        &self.potential
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Mode truncation `Λ`; vectors have `2Λ` entries.
    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn gauge(&self) -> Gauge {
        self.gauge
    }

    fn check_band(&self, m: usize) -> Result<()> {
        if m < self.bands {
            Ok(())
        } else {
            Err(Error::BandIndexOutOfRange {
                index: m,
                available: self.bands,
            })
        }
    }

    /// `E_m(k_ℓ)` (0-based band and node indices).
    pub fn energy(&self, m: usize, l: usize) -> f64 {
        self.energies[m * self.grid.cells() + l]
    }

    pub fn energies(&self, m: usize) -> &[f64] {
        let cells = self.grid.cells();
        &self.energies[m * cells..(m + 1) * cells]
    }

    /// Coefficients `χ̂_m(λ, k_ℓ)` for `λ = -Λ, …, Λ-1`.
    pub fn vector(&self, m: usize, l: usize) -> &[Complex64] {
        self.vector_slice(m, l)
    }

    fn vector_slice(&self, m: usize, l: usize) -> &[Complex64] {
        let cap = 2 * self.truncation;
        let base = (m * self.grid.cells() + l) * cap;
        &self.vectors[base..base + cap]
    }

    /// `min(E_m - E_{m-1}, E_{m+1} - E_m)` at node `ℓ`.
    pub fn gap(&self, m: usize, l: usize) -> f64 {
        let e = self.energy(m, l);
        let below = if m > 0 { e - self.energy(m - 1, l) } else { f64::INFINITY };
        let above = if m + 1 < self.bands {
            self.energy(m + 1, l) - e
        } else {
            self.ceiling[l] - e
        };
        below.min(above)
    }

    /// Zak phase of band `m` in the stored gauge: `arg ⟨v(k_L), S v(k_1)⟩`.
    /// `None` when the band touches a neighbour at the zone edge.
    pub fn holonomy(&self, m: usize) -> Option<f64> {
        if self.gauge == Gauge::ParallelTransport {
            self.holonomy.get(m).copied().flatten()
        } else {
            None
        }
    }

    /// Multiplies every stored eigenvector by `e^{iθ(m, ℓ)}`.
    pub fn rephased(&self, theta: impl Fn(usize, usize) -> f64) -> BandTable {
        let mut out = self.clone();
        let cap = 2 * self.truncation;
        let cells = self.grid.cells();
        for m in 0..self.bands {
            for l in 0..cells {
                let ph = Complex64::from_polar(1.0, theta(m, l));
                let base = (m * cells + l) * cap;
                out.vectors[base..base + cap].iter_mut().for_each(|z| *z *= ph);
            }
        }
        out.gauge = Gauge::Rephased;
        out
    }

    /// Trigonometric interpolant of `E_m` (period 1 in `k`).
    pub fn eval_band(&self, m: usize, k: f64) -> Result<f64> {
        self.check_band(m)?;
        Ok(trig_eval(&self.interp[m], self.grid.cells(), k).0)
    }

    /// Group velocity `∂_k E_m` from the interpolant.
    pub fn band_slope(&self, m: usize, k: f64) -> Result<f64> {
        self.check_band(m)?;
        Ok(trig_eval(&self.interp[m], self.grid.cells(), k).1)
    }

    /// `∂²_k E_m` from the interpolant.
    pub fn band_curvature(&self, m: usize, k: f64) -> Result<f64> {
        self.check_band(m)?;
        Ok(trig_eval(&self.interp[m], self.grid.cells(), k).2)
    }

    /// `(E, ∂_k E, ∂²_k E)` in one pass.
    pub fn band_jet(&self, m: usize, k: f64) -> Result<(f64, f64, f64)> {
        self.check_band(m)?;
        Ok(trig_eval(&self.interp[m], self.grid.cells(), k))
    }

    /// `χ_m(y, k_ℓ) = Σ_λ χ̂_m(λ, k_ℓ) e^{iλy}`.
    pub fn eval_chi(&self, m: usize, l: usize, y: f64) -> Result<Complex64> {
        self.check_band(m)?;
        if l >= self.grid.cells() {
            return Err(Error::ShapeMismatch(format!("k index {l} beyond {} nodes", self.grid.cells())));
        }
        Ok(chi_series(self.vector_slice(m, l), self.truncation, y))
    }

    /// Berry connection `⟨χ_m, ∂_k χ_m⟩` at node `ℓ`, normalized per unit
    /// coefficient norm. Computed from the phases of the two neighbouring
    /// overlaps, so the result is purely imaginary and follows the stored gauge.
    pub fn berry_connection(&self, m: usize, l: usize) -> Result<Complex64> {
        self.check_band(m)?;
        let cells = self.grid.cells();
        let gap = self.gap(m, l);
        if gap <= GAP_TOL {
            return Err(Error::BandGapTooSmall {
                band: m,
                k: self.grid.k_nodes()[l],
                gap,
            });
        }
        let v = self.vector_slice(m, l);
        let gamma = self.holonomy(m);
        let next = if l + 1 < cells {
            inner(v, self.vector_slice(m, l + 1))
        } else {
            let w = shift_modes(self.vector_slice(m, 0), 1);
            match gamma {
                Some(g) => inner(v, &w) * Complex64::from_polar(1.0, -g),
                None => Complex64::new(inner(v, &w).norm(), 0.0),
            }
        };
        let prev = if l > 0 {
            inner(self.vector_slice(m, l - 1), v)
        } else {
            let w = shift_modes(self.vector_slice(m, cells - 1), -1);
            match gamma {
                Some(g) => inner(&w, v) * Complex64::from_polar(1.0, -g),
                None => Complex64::new(inner(&w, v).norm(), 0.0),
            }
        };
        let dk = 1.0 / cells as f64;
        Ok(Complex64::new(0.0, (next.arg() + prev.arg()) / (2.0 * dk)))
    }

    /// Effective mass `1 / E_m''(k0)` from a central difference of direct
    /// eigensolves at `k0 ± h`.
    pub fn effective_mass(&self, m: usize, k0: f64) -> Result<f64> {
        self.check_band(m)?;
        let h = CURVATURE_STEP;
        let e = |k: f64| -> Result<f64> { Ok(eigensolve(&self.potential, k, self.truncation)?.0[m]) };
        let curvature = (e(k0 + h)? - 2.0 * e(k0)? + e(k0 - h)?) / (h * h);
        if curvature.abs() < 1e-10 {
            return Err(Error::DegenerateCurvature(curvature));
        }
        Ok(1.0 / curvature)
    }

    /// Writes the binary cache: header, energies, coefficients in `(m, ℓ, λ)`
    /// order, the first energy above the table per node, and a SHA-256 trailer.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&(self.grid.cells() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.bands as u32).to_le_bytes());
        buf.extend_from_slice(&(self.truncation as u32).to_le_bytes());
        buf.extend_from_slice(&self.grid.epsilon().to_le_bytes());
        buf.extend_from_slice(&self.potential.digest().to_le_bytes());
        for e in &self.energies {
            buf.extend_from_slice(&e.to_le_bytes());
        }
        for z in &self.vectors {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
        for e in &self.ceiling {
            buf.extend_from_slice(&e.to_le_bytes());
        }
        let sum = Sha256::digest(&buf);
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(&buf)?;
        out.write_all(&sum)?;
        out.flush()?;
        Ok(())
    }

    /// Reads a cache written by [`BandTable::save`], checking integrity and
    /// that it was produced for this grid and potential.
    pub fn load(path: &Path, grid: Arc<SimulationGrid>, potential: Arc<PeriodicPotential>) -> Result<BandTable> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        if bytes.len() < 32 + 32 {
            return Err(Error::Corrupted("band cache truncated".into()));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err(Error::Corrupted("band cache checksum mismatch".into()));
        }
        let mut rd = ByteReader { buf: body, pos: 0 };
        if rd.take(4)? != CACHE_MAGIC {
            return Err(Error::Corrupted("bad band cache magic".into()));
        }
        let cells = rd.u32()? as usize;
        let bands = rd.u32()? as usize;
        let truncation = rd.u32()? as usize;
        let epsilon = rd.f64()?;
        let digest = rd.u64()?;
        if cells != grid.cells() || (epsilon - grid.epsilon()).abs() > 1e-15 {
            return Err(Error::ShapeMismatch(format!(
                "cache holds {cells} k-nodes, grid has {}",
                grid.cells()
            )));
        }
        if digest != potential.digest() {
            return Err(Error::Corrupted("band cache belongs to a different potential".into()));
        }
        if 2 * truncation <= grid.resolution() || truncation == 0 {
            return Err(Error::TruncationMismatch {
                lambda: truncation,
                resolution: grid.resolution(),
            });
        }
        if truncation > potential.truncation() {
            return Err(Error::TruncationTooSmall {
                available: potential.truncation(),
                requested: truncation,
            });
        }
        let energies = (0..bands * cells).map(|_| rd.f64()).collect::<Result<Vec<_>>>()?;
        let vectors = (0..bands * cells * 2 * truncation)
            .map(|_| Ok(Complex64::new(rd.f64()?, rd.f64()?)))
            .collect::<Result<Vec<_>>>()?;
        let ceiling = (0..cells).map(|_| rd.f64()).collect::<Result<Vec<_>>>()?;
        if rd.pos != body.len() {
            return Err(Error::Corrupted("trailing bytes in band cache".into()));
        }
        let mut table = BandTable {
            grid,
            potential,
            bands,
            truncation,
            energies,
            ceiling,
            vectors,
            holonomy: Vec::new(),
            gauge: Gauge::ParallelTransport,
            interp: Vec::new(),
        };
        table.finish();
        Ok(table)
    }

    /// `k, E_1, …, E_M` rows for plotting.
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        write!(out, "k")?;
        for m in 0..self.bands {
            write!(out, ",E{}", m + 1)?;
        }
        writeln!(out)?;
        for (l, k) in self.grid.k_nodes().iter().enumerate() {
            write!(out, "{k:.6e}")?;
            for m in 0..self.bands {
                write!(out, ",{:.12e}", self.energy(m, l))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(Error::Corrupted("band cache truncated".into()));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// `Σ_λ c(λ) e^{iλy}` for coefficients `λ = -Λ, …, Λ-1`.
pub(crate) fn chi_series(coeffs: &[Complex64], truncation: usize, y: f64) -> Complex64 {
    let step = Complex64::from_polar(1.0, y);
    let mut w = Complex64::from_polar(1.0, -(truncation as f64) * y);
    let mut acc = Complex64::new(0.0, 0.0);
    for c in coeffs {
        acc += c * w;
        w *= step;
    }
    acc
}

fn trig_coefficients(values: &[f64]) -> Vec<Complex64> {
    let n = values.len();
    (0..=n / 2)
        .map(|p| {
            values
                .iter()
                .enumerate()
                .map(|(j, &v)| v * Complex64::from_polar(1.0, -2.0 * PI * (p * j) as f64 / n as f64))
                .sum::<Complex64>()
                / n as f64
        })
        .collect()
}

/// Value and first two derivatives of the period-1 interpolant through the
/// nodes `k_ℓ = -1/2 + ℓ/L`.
fn trig_eval(coeffs: &[Complex64], n: usize, k: f64) -> (f64, f64, f64) {
    let s = (k + 0.5).rem_euclid(1.0);
    let mut v = coeffs[0].re;
    let mut d1 = 0.0;
    let mut d2 = 0.0;
    let top = if n.is_multiple_of(2) { n / 2 } else { n / 2 + 1 };
    for (p, c) in coeffs.iter().enumerate().take(top).skip(1) {
        let w = 2.0 * PI * p as f64;
        let e = c * Complex64::from_polar(1.0, w * s);
        v += 2.0 * e.re;
        d1 += -2.0 * w * e.im;
        d2 += -2.0 * w * w * e.re;
    }
    if n.is_multiple_of(2) && n > 1 {
        let a = coeffs[n / 2].re;
        let w = PI * n as f64;
        v += a * (w * s).cos();
        d1 -= a * w * (w * s).sin();
        d2 -= a * w * w * (w * s).cos();
    }
    (v, d1, d2)
}
