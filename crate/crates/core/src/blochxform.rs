//! Cell transform between `ψ_{ℓ,r}` and its quasi-momentum representation
//! `ψ̃_{ℓ,r}`, and projection of `ψ̃` onto Bloch bands.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::band::BandTable;
use crate::error::{Error, Result};
use crate::grid::{check_same_grid, discrete_norms, CellField, SimulationGrid, WaveField};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Band coefficients `C_{m,ℓ}` stored band-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BlochCoeffs {
    bands: usize,
    cells: usize,
    values: Vec<Complex64>,
}

impl BlochCoeffs {
    pub fn zeros(bands: usize, cells: usize) -> Self {
        Self {
            bands,
            cells,
            values: vec![Complex64::new(0.0, 0.0); bands * cells],
        }
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn get(&self, m: usize, l: usize) -> Complex64 {
        self.values[m * self.cells + l]
    }

    pub fn set(&mut self, m: usize, l: usize, z: Complex64) {
        self.values[m * self.cells + l] = z;
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    /// Rows `m, ℓ, Re C, Im C` (1-based indices).
    pub fn write_csv(&self, out: &mut impl std::io::Write) -> Result<()> {
        writeln!(out, "m,l,re,im")?;
        for m in 0..self.bands {
            for l in 0..self.cells {
                let z = self.get(m, l);
                writeln!(out, "{},{},{:.12e},{:.12e}", m + 1, l + 1, z.re, z.im)?;
            }
        }
        Ok(())
    }
}

/// Length-`L` transforms along the cell index.
#[derive(Clone)]
pub struct CellTransform {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl CellTransform {
    pub fn new(cells: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(cells),
            inverse: planner.plan_fft_inverse(cells),
        }
    }

    /// `ψ̃_{ℓ,r} = Σ_j ψ_{j,r} e^{-2πi k_ℓ j}`, i.e. a DFT in `j` of `(-1)^j ψ_{j,r}`.
    pub fn forward(&self, psi: &WaveField) -> CellField {
        let grid = psi.grid().clone();
        let (cells, res) = (grid.cells(), grid.resolution());
        let mut cols = transpose(psi.values(), cells, res);
        cols.par_chunks_mut(cells).for_each(|col| {
            for (j, z) in col.iter_mut().enumerate() {
                if j % 2 == 1 {
                    *z = -*z;
                }
            }
            self.forward.process(col);
        });
        CellField::new(grid, transpose(&cols, res, cells)).expect("shape preserved")
    }

    /// `ψ_{ℓ,r} = (1/L) Σ_j ψ̃_{j,r} e^{2πi k_j ℓ}`.
    pub fn inverse(&self, tilde: &CellField) -> WaveField {
        let grid = tilde.grid().clone();
        let (cells, res) = (grid.cells(), grid.resolution());
        let mut cols = transpose(tilde.values(), cells, res);
        let scale = 1.0 / cells as f64;
        cols.par_chunks_mut(cells).for_each(|col| {
            self.inverse.process(col);
            for (l, z) in col.iter_mut().enumerate() {
                *z *= if l % 2 == 1 { -scale } else { scale };
            }
        });
        WaveField::new(grid, transpose(&cols, res, cells)).expect("shape preserved")
    }
}

fn transpose(values: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); values.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = values[i * cols + j];
        }
    }
    out
}

pub fn cell_forward(psi: &WaveField) -> CellField {
    CellTransform::new(psi.grid().cells()).forward(psi)
}

pub fn cell_inverse(tilde: &CellField) -> WaveField {
    CellTransform::new(tilde.grid().cells()).inverse(tilde)
}

/// Per-node slices of the band table restricted to the `R` lowest modes,
/// laid out in FFT order, with the length-`R` transforms needed to use them.
#[derive(Clone)]
pub struct BlochBasis {
    grid: Arc<SimulationGrid>,
    bands: usize,
    energies: Vec<f64>,
    /// `(ℓ, m, ·)`: `χ̂_m(λ, k_ℓ)` at FFT index of `λ`.
    slices: Vec<Complex64>,
    /// `(ℓ, r)`: `e^{-i k_ℓ y_r}`.
    modulation: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl BlochBasis {
    pub fn new(table: &BandTable) -> Result<Self> {
        let grid = table.grid().clone();
        let res = grid.resolution();
        let lam = table.truncation();
        if lam <= res / 2 {
            return Err(Error::TruncationMismatch {
                lambda: lam,
                resolution: res,
            });
        }
        let (cells, bands) = (grid.cells(), table.bands());
        let mut slices = vec![Complex64::new(0.0, 0.0); cells * bands * res];
        for l in 0..cells {
            for m in 0..bands {
                let v = table.vector(m, l);
                let dst = &mut slices[(l * bands + m) * res..(l * bands + m + 1) * res];
                for (idx, d) in dst.iter_mut().enumerate() {
                    let lambda = if idx < res / 2 { idx as i64 } else { idx as i64 - res as i64 };
                    *d = v[(lambda + lam as i64) as usize];
                }
            }
        }
        let mut energies = vec![0.0; cells * bands];
        for l in 0..cells {
            for m in 0..bands {
                energies[l * bands + m] = table.energy(m, l);
            }
        }
        let mut modulation = Vec::with_capacity(cells * res);
        for &k in grid.k_nodes() {
            for &y in grid.y_nodes() {
                modulation.push(Complex64::from_polar(1.0, -k * y));
            }
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            forward: planner.plan_fft_forward(res),
            inverse: planner.plan_fft_inverse(res),
            grid,
            bands,
            energies,
            slices,
            modulation,
        })
    }

    pub fn grid(&self) -> &Arc<SimulationGrid> {
        &self.grid
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// `E_m(k_ℓ)`.
    pub fn energy(&self, m: usize, l: usize) -> f64 {
        self.energies[l * self.bands + m]
    }

    fn check(&self, field_grid: &SimulationGrid) -> Result<()> {
        check_same_grid(&self.grid, field_grid)
    }

    /// Row kernel of the projection: `out[m] = (2π/R) Σ_λ conj(χ̂_m) FFT(ψ̃ e^{-iky})(λ)`.
    fn project_row(&self, l: usize, row: &[Complex64], scratch: &mut [Complex64], out: &mut [Complex64]) {
        let res = self.grid.resolution();
        let modulation = &self.modulation[l * res..(l + 1) * res];
        for ((s, z), w) in scratch.iter_mut().zip(row).zip(modulation) {
            *s = z * w;
        }
        self.forward.process(scratch);
        let scale = TWO_PI / res as f64;
        for (m, c) in out.iter_mut().enumerate() {
            let basis = &self.slices[(l * self.bands + m) * res..(l * self.bands + m + 1) * res];
            let dot: Complex64 = basis.iter().zip(scratch.iter()).map(|(b, g)| b.conj() * g).sum();
            *c = dot * scale;
        }
    }

    /// Row kernel of the reconstruction.
    fn reconstruct_row(&self, l: usize, coeffs: impl Fn(usize) -> Complex64, row: &mut [Complex64]) {
        let res = self.grid.resolution();
        row.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for m in 0..self.bands {
            let c = coeffs(m);
            if c == Complex64::new(0.0, 0.0) {
                continue;
            }
            let basis = &self.slices[(l * self.bands + m) * res..(l * self.bands + m + 1) * res];
            for (z, b) in row.iter_mut().zip(basis) {
                *z += c * b;
            }
        }
        self.inverse.process(row);
        let modulation = &self.modulation[l * res..(l + 1) * res];
        let scale = 1.0 / TWO_PI;
        for (z, w) in row.iter_mut().zip(modulation) {
            *z *= w.conj() * scale;
        }
    }

    pub fn project(&self, tilde: &CellField) -> Result<BlochCoeffs> {
        self.check(tilde.grid())?;
        let (cells, res, bands) = (self.grid.cells(), self.grid.resolution(), self.bands);
        let mut by_row = vec![Complex64::new(0.0, 0.0); cells * bands];
        by_row
            .par_chunks_mut(bands)
            .enumerate()
            .for_each_init(
                || vec![Complex64::new(0.0, 0.0); res],
                |scratch, (l, out)| self.project_row(l, tilde.row(l), scratch, out),
            );
        let mut coeffs = BlochCoeffs::zeros(bands, cells);
        for l in 0..cells {
            for m in 0..bands {
                coeffs.set(m, l, by_row[l * bands + m]);
            }
        }
        Ok(coeffs)
    }

    pub fn reconstruct(&self, coeffs: &BlochCoeffs) -> Result<CellField> {
        self.check_coeffs(coeffs)?;
        self.reconstruct_with(|m, l| coeffs.get(m, l))
    }

    /// Reconstruction from band `m` alone.
    pub fn reconstruct_band(&self, coeffs: &BlochCoeffs, band: usize) -> Result<CellField> {
        self.check_coeffs(coeffs)?;
        if band >= self.bands {
            return Err(Error::BandIndexOutOfRange {
                index: band,
                available: self.bands,
            });
        }
        self.reconstruct_with(|m, l| if m == band { coeffs.get(m, l) } else { Complex64::new(0.0, 0.0) })
    }

    fn check_coeffs(&self, coeffs: &BlochCoeffs) -> Result<()> {
        if coeffs.bands != self.bands || coeffs.cells != self.grid.cells() {
            return Err(Error::ShapeMismatch(format!(
                "coefficients {}x{} vs basis {}x{}",
                coeffs.bands,
                coeffs.cells,
                self.bands,
                self.grid.cells()
            )));
        }
        Ok(())
    }

    fn reconstruct_with(&self, coeff: impl Fn(usize, usize) -> Complex64 + Sync) -> Result<CellField> {
        let res = self.grid.resolution();
        let mut values = vec![Complex64::new(0.0, 0.0); self.grid.len()];
        values
            .par_chunks_mut(res)
            .enumerate()
            .for_each(|(l, row)| self.reconstruct_row(l, |m| coeff(m, l), row));
        CellField::new(self.grid.clone(), values)
    }

    /// Project, multiply each `C_{m,ℓ}` by `factor(m, ℓ)`, reconstruct, in a
    /// single pass over rows.
    pub fn filter(&self, tilde: &CellField, factor: impl Fn(usize, usize) -> Complex64 + Sync) -> Result<CellField> {
        self.check(tilde.grid())?;
        let (res, bands) = (self.grid.resolution(), self.bands);
        let mut values = vec![Complex64::new(0.0, 0.0); self.grid.len()];
        values.par_chunks_mut(res).enumerate().for_each_init(
            || (vec![Complex64::new(0.0, 0.0); res], vec![Complex64::new(0.0, 0.0); bands]),
            |(scratch, c), (l, row)| {
                self.project_row(l, tilde.row(l), scratch, c);
                for (m, z) in c.iter_mut().enumerate() {
                    *z *= factor(m, l);
                }
                self.reconstruct_row(l, |m| c[m], row);
            },
        );
        CellField::new(self.grid.clone(), values)
    }
}

pub fn band_project(tilde: &CellField, bands: &BandTable) -> Result<BlochCoeffs> {
    BlochBasis::new(bands)?.project(tilde)
}

pub fn band_reconstruct(coeffs: &BlochCoeffs, bands: &BandTable) -> Result<CellField> {
    BlochBasis::new(bands)?.reconstruct(coeffs)
}

/// Size of the part of `ψ` carried by one band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandMass {
    /// `‖P_m ψ‖`
    pub norm: f64,
    /// `‖P_m ψ‖²`
    pub norm_sq: f64,
}

pub fn band_mass(psi: &WaveField, bands: &BandTable, m: usize) -> Result<BandMass> {
    let basis = BlochBasis::new(bands)?;
    band_mass_with(&basis, &CellTransform::new(psi.grid().cells()), psi, m)
}

/// Masses of every band in the table.
pub fn band_masses(psi: &WaveField, bands: &BandTable) -> Result<Vec<BandMass>> {
    let basis = BlochBasis::new(bands)?;
    let cells = CellTransform::new(psi.grid().cells());
    let coeffs = basis.project(&cells.forward(psi))?;
    (0..basis.bands())
        .map(|m| Ok(mass_of(&cells.inverse(&basis.reconstruct_band(&coeffs, m)?))))
        .collect()
}

pub(crate) fn band_mass_with(basis: &BlochBasis, cells: &CellTransform, psi: &WaveField, m: usize) -> Result<BandMass> {
    let coeffs = basis.project(&cells.forward(psi))?;
    Ok(mass_of(&cells.inverse(&basis.reconstruct_band(&coeffs, m)?)))
}

fn mass_of(f: &WaveField) -> BandMass {
    let norm = discrete_norms(f).l2;
    BandMass {
        norm,
        norm_sq: norm * norm,
    }
}
