//! Two-scale discretization of the periodic domain `[0, 2π]`.
//!
//! The domain holds `L = 1/ε` lattice cells of width `2πε`; each cell is
//! sampled at `R` points. A sample is addressed either by its cell/point pair
//! `(ℓ, r)` or by its position `x_{ℓ,r} = ε(2πℓ + y_r)` (0-based indices
//! throughout this crate). Quasi-momenta live on the `L` nodes
//! `k_ℓ = -1/2 + ℓ/L` of the Brillouin zone.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};

const CELL_COUNT_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct SimulationGrid {
    epsilon: f64,
    cells: usize,
    resolution: usize,
    k_nodes: Vec<f64>,
    y_nodes: Vec<f64>,
    x_nodes: Vec<f64>,
}

impl SimulationGrid {
    /// Builds the grid for `ε = 1/L` with `R` points per cell.
    pub fn new(epsilon: f64, resolution: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) || !epsilon.is_finite() {
            return Err(Error::NonIntegerCellCount { inverse: 1.0 / epsilon });
        }
        let inverse = 1.0 / epsilon;
        let cells = inverse.round();
        if (inverse - cells).abs() > CELL_COUNT_TOL || cells < 1.0 {
            return Err(Error::NonIntegerCellCount { inverse });
        }
        if resolution < 4 || !resolution.is_power_of_two() {
            return Err(Error::ResolutionTooSmall(resolution));
        }
        let cells = cells as usize;
        // Store the exact reciprocal so that L·ε = 1 to rounding.
        let epsilon = 1.0 / cells as f64;
        let k_nodes = (0..cells).map(|l| -0.5 + l as f64 / cells as f64).collect();
        let y_nodes: Vec<f64> = (0..resolution)
            .map(|r| 2.0 * PI * r as f64 / resolution as f64)
            .collect();
        let mut x_nodes = Vec::with_capacity(cells * resolution);
        for l in 0..cells {
            for &y in &y_nodes {
                x_nodes.push(epsilon * (2.0 * PI * l as f64 + y));
            }
        }
        Ok(Self {
            epsilon,
            cells,
            resolution,
            k_nodes,
            y_nodes,
            x_nodes,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Number of lattice cells `L`.
    pub fn cells(&self) -> usize {
        self.cells
    }

    /// Points per cell `R`.
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.cells * self.resolution
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn k_nodes(&self) -> &[f64] {
        &self.k_nodes
    }

    pub fn y_nodes(&self) -> &[f64] {
        &self.y_nodes
    }

    /// Sample positions in row-major `(ℓ, r)` order, which is also increasing `x`.
    pub fn x_nodes(&self) -> &[f64] {
        &self.x_nodes
    }

    pub fn x(&self, cell: usize, point: usize) -> f64 {
        self.x_nodes[cell * self.resolution + point]
    }

    /// Uniform spacing `2π/(LR)`.
    pub fn dx(&self) -> f64 {
        2.0 * PI / self.len() as f64
    }

    pub fn same_shape(&self, other: &SimulationGrid) -> bool {
        self.cells == other.cells
            && self.resolution == other.resolution
            && (self.epsilon - other.epsilon).abs() <= 1e-15
    }

    /// Same lattice, `factor` times more points per cell.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        Self::new(self.epsilon, self.resolution * factor)
    }
}

/// Complex samples `ψ_{ℓ,r}` on a [`SimulationGrid`].
#[derive(Debug, Clone)]
pub struct WaveField {
    grid: Arc<SimulationGrid>,
    values: Vec<Complex64>,
}

/// Mixed `(k_ℓ, y_r)` representation produced by the cell transform.
#[derive(Debug, Clone)]
pub struct CellField {
    grid: Arc<SimulationGrid>,
    values: Vec<Complex64>,
}

macro_rules! field_common {
    ($ty:ident) => {
        impl $ty {
            pub fn new(grid: Arc<SimulationGrid>, values: Vec<Complex64>) -> Result<Self> {
                if values.len() != grid.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "{} samples for a {}x{} grid",
                        values.len(),
                        grid.cells(),
                        grid.resolution()
                    )));
                }
                Ok(Self { grid, values })
            }

            pub fn zeros(grid: Arc<SimulationGrid>) -> Self {
                let values = vec![Complex64::new(0.0, 0.0); grid.len()];
                Self { grid, values }
            }

            pub fn from_fn(
                grid: Arc<SimulationGrid>,
                mut f: impl FnMut(usize, usize) -> Complex64,
            ) -> Self {
                let r_len = grid.resolution();
                let values = (0..grid.len()).map(|i| f(i / r_len, i % r_len)).collect();
                Self { grid, values }
            }

            pub fn grid(&self) -> &Arc<SimulationGrid> {
                &self.grid
            }

            pub fn values(&self) -> &[Complex64] {
                &self.values
            }

            pub fn values_mut(&mut self) -> &mut [Complex64] {
                &mut self.values
            }

            pub fn into_values(self) -> Vec<Complex64> {
                self.values
            }

            pub fn get(&self, cell: usize, point: usize) -> Complex64 {
                self.values[cell * self.grid.resolution() + point]
            }

            pub fn row(&self, cell: usize) -> &[Complex64] {
                let r = self.grid.resolution();
                &self.values[cell * r..(cell + 1) * r]
            }

            pub fn is_finite(&self) -> bool {
                self.values.iter().all(|z| z.re.is_finite() && z.im.is_finite())
            }
        }
    };
}

field_common!(WaveField);
field_common!(CellField);

impl WaveField {
    /// Samples a function of `x` at every grid point.
    pub fn sample(grid: Arc<SimulationGrid>, f: impl Fn(f64) -> Complex64) -> Self {
        let values = grid.x_nodes().iter().map(|&x| f(x)).collect();
        Self { grid, values }
    }

    /// `self - other`, erroring when the grids differ.
    pub fn difference(&self, other: &WaveField) -> Result<WaveField> {
        check_same_grid(&self.grid, &other.grid)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(WaveField {
            grid: self.grid.clone(),
            values,
        })
    }

    pub fn scaled(&self, alpha: Complex64) -> WaveField {
        WaveField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|z| z * alpha).collect(),
        }
    }

    /// Discrete mass `Δx Σ|ψ|²`.
    pub fn mass(&self) -> f64 {
        self.grid.dx() * self.values.iter().map(|z| z.norm_sqr()).sum::<f64>()
    }

    /// Restricts a field on a grid with `m·R` points per cell to `coarse`
    /// (same lattice) by keeping every `m`-th point.
    pub fn restrict_to(&self, coarse: &Arc<SimulationGrid>) -> Result<WaveField> {
        let fine = &self.grid;
        if fine.cells() != coarse.cells() || !fine.resolution().is_multiple_of(coarse.resolution()) {
            return Err(Error::ShapeMismatch(format!(
                "cannot restrict {}x{} onto {}x{}",
                fine.cells(),
                fine.resolution(),
                coarse.cells(),
                coarse.resolution()
            )));
        }
        let stride = fine.resolution() / coarse.resolution();
        let values = (0..coarse.len())
            .map(|i| {
                let (l, r) = (i / coarse.resolution(), i % coarse.resolution());
                self.get(l, r * stride)
            })
            .collect();
        Ok(WaveField {
            grid: coarse.clone(),
            values,
        })
    }
}

const FIELD_MAGIC: &[u8; 4] = b"BDWF";

impl WaveField {
    /// Binary layout: `BDWF`, `u32` cell count, `u32` points per cell, then
    /// little-endian `(re, im)` pairs in grid order.
    pub fn write_binary(&self, path: &std::path::Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(12 + 16 * self.values.len());
        bytes.extend_from_slice(FIELD_MAGIC);
        bytes.extend_from_slice(&(self.grid.cells() as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.grid.resolution() as u32).to_le_bytes());
        for z in &self.values {
            bytes.extend_from_slice(&z.re.to_le_bytes());
            bytes.extend_from_slice(&z.im.to_le_bytes());
        }
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn read_binary(path: &std::path::Path) -> Result<WaveField> {
        let bytes = std::fs::read(path)?;
        let bad = |why: &str| Error::Corrupted(format!("{}: {why}", path.display()));
        if bytes.len() < 12 || &bytes[..4] != FIELD_MAGIC {
            return Err(bad("not a wave-field file"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
        let (cells, resolution) = (word(4), word(8));
        if cells == 0 {
            return Err(bad("zero cells"));
        }
        let grid = Arc::new(SimulationGrid::new(1.0 / cells as f64, resolution)?);
        if bytes.len() != 12 + 16 * grid.len() {
            return Err(bad("length does not match header"));
        }
        let real = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
        let values = (0..grid.len())
            .map(|i| Complex64::new(real(12 + 16 * i), real(20 + 16 * i)))
            .collect();
        WaveField::new(grid, values)
    }

    /// `x,re,im` rows.
    pub fn write_csv(&self, out: &mut impl std::io::Write) -> Result<()> {
        writeln!(out, "x,re,im")?;
        for (x, z) in self.grid.x_nodes().iter().zip(&self.values) {
            writeln!(out, "{x:.12e},{:.12e},{:.12e}", z.re, z.im)?;
        }
        Ok(())
    }
}

pub(crate) fn check_same_grid(a: &SimulationGrid, b: &SimulationGrid) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "grid {}x{} vs {}x{}",
            a.cells(),
            a.resolution(),
            b.cells(),
            b.resolution()
        )))
    }
}

/// The normalized Gaussian `(10/π)^{1/4} exp(-5(x-π)²)` used as initial data.
pub fn gaussian_profile(x: f64) -> f64 {
    (10.0 / PI).powf(0.25) * (-5.0 * (x - PI).powi(2)).exp()
}

pub fn sample_gaussian(grid: Arc<SimulationGrid>) -> WaveField {
    WaveField::sample(grid, |x| Complex64::new(gaussian_profile(x), 0.0))
}

/// Discrete `(l², l^∞)` norms with quadrature weight `Δx = 2π/(LR)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub l2: f64,
    pub linf: f64,
}

pub fn discrete_norms(field: &WaveField) -> Norms {
    let dx = field.grid().dx();
    let mut sum = 0.0;
    let mut linf: f64 = 0.0;
    for z in field.values() {
        let a = z.norm();
        sum += a * a;
        linf = linf.max(a);
    }
    Norms {
        l2: (dx * sum).sqrt(),
        linf,
    }
}

/// Norms of the pointwise difference `a - b`.
pub fn difference_norms(a: &WaveField, b: &WaveField) -> Result<Norms> {
    Ok(discrete_norms(&a.difference(b)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip_and_corruption() {
        let dir = std::env::temp_dir().join(format!("bdwf-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("psi.bdwf");
        let g = Arc::new(SimulationGrid::new(0.25, 8).unwrap());
        let psi = WaveField::from_fn(g, |l, r| Complex64::new(l as f64, -(r as f64) / 3.0));
        psi.write_binary(&path).unwrap();
        let back = WaveField::read_binary(&path).unwrap();
        assert_eq!(back.values(), psi.values());
        assert!(back.grid().same_shape(psi.grid()));
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(WaveField::read_binary(&path), Err(Error::Corrupted(_))));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn half_epsilon_grid() {
        let g = SimulationGrid::new(0.5, 8).unwrap();
        assert_eq!(g.cells(), 2);
        assert_eq!(g.k_nodes(), &[-0.5, 0.0]);
        for (r, &y) in g.y_nodes().iter().enumerate() {
            assert!((y - r as f64 * PI / 4.0).abs() < 1e-15);
        }
    }

    #[test]
    fn second_cell_origin() {
        let g = SimulationGrid::new(1.0 / 32.0, 16).unwrap();
        assert_eq!(g.cells(), 32);
        assert!((g.x(1, 0) - 2.0 * PI / 32.0).abs() < 1e-15);
        assert!((g.x(1, 0) - 0.19635).abs() < 1e-5);
    }

    #[test]
    fn index_maps_match_scalar_loop() {
        let g = SimulationGrid::new(1.0 / 3.0, 8).unwrap();
        assert_eq!(g.cells(), 3);
        let mut i = 0;
        for l in 0..3 {
            for r in 0..8 {
                let x = (2.0 * PI * l as f64 + 2.0 * PI * r as f64 / 8.0) / 3.0;
                assert!((g.x_nodes()[i] - x).abs() < 1e-14);
                i += 1;
            }
        }
        let last = g.x(2, 7);
        assert!(last < 2.0 * PI);
        assert!((last - 2.0 * PI * 23.0 / 24.0).abs() < 1e-14);
    }

    #[test]
    fn invariants_hold() {
        for (eps, r) in [(1.0, 4), (0.5, 8), (1.0 / 7.0, 16), (1.0 / 64.0, 32)] {
            let g = SimulationGrid::new(eps, r).unwrap();
            assert!((g.cells() as f64 * g.epsilon() - 1.0).abs() <= 1e-12);
            assert!(g.k_nodes().iter().all(|&k| (-0.5..0.5).contains(&k)));
            assert!(g.x_nodes().iter().all(|&x| (0.0..2.0 * PI).contains(&x)));
            let gaps: Vec<f64> = g.x_nodes().windows(2).map(|w| w[1] - w[0]).collect();
            let max_gap = gaps.iter().cloned().fold(0.0, f64::max);
            assert!(gaps.iter().all(|&d| d > 0.0));
            assert!((max_gap - g.dx()).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(
            SimulationGrid::new(0.3, 8),
            Err(Error::NonIntegerCellCount { .. })
        ));
        assert!(matches!(
            SimulationGrid::new(0.5, 2),
            Err(Error::ResolutionTooSmall(2))
        ));
        assert!(matches!(
            SimulationGrid::new(0.5, 12),
            Err(Error::ResolutionTooSmall(12))
        ));
    }

    #[test]
    fn gaussian_values_and_mass() {
        let peak = (10.0 / PI).powf(0.25);
        assert!((gaussian_profile(PI) - 1.335711).abs() < 1e-6);
        assert!((gaussian_profile(PI) - peak).abs() < 1e-15);
        assert!(gaussian_profile(0.0) < 1e-21);
        let g = Arc::new(SimulationGrid::new(1.0 / 32.0, 8).unwrap());
        let psi = sample_gaussian(g);
        assert!((discrete_norms(&psi).l2 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_and_zero_norms() {
        let g = Arc::new(SimulationGrid::new(0.25, 16).unwrap());
        let zero = WaveField::zeros(g.clone());
        assert_eq!(discrete_norms(&zero), Norms { l2: 0.0, linf: 0.0 });
        let one = WaveField::sample(g, |_| Complex64::new(1.0, 0.0));
        let n = discrete_norms(&one);
        assert!((n.l2 - (2.0 * PI).sqrt()).abs() < 1e-12);
        assert_eq!(n.linf, 1.0);
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let a = WaveField::zeros(Arc::new(SimulationGrid::new(0.5, 8).unwrap()));
        let b = WaveField::zeros(Arc::new(SimulationGrid::new(0.5, 16).unwrap()));
        assert!(matches!(difference_norms(&a, &b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn restriction_keeps_shared_points() {
        let fine = Arc::new(SimulationGrid::new(0.25, 16).unwrap());
        let coarse = Arc::new(SimulationGrid::new(0.25, 8).unwrap());
        let f = WaveField::sample(fine, |x| Complex64::new(x.sin(), x.cos()));
        let c = f.restrict_to(&coarse).unwrap();
        for (z, &x) in c.values().iter().zip(coarse.x_nodes()) {
            assert!((z - Complex64::new(x.sin(), x.cos())).norm() < 1e-14);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn field(seed: &[(f64, f64)], grid: &Arc<SimulationGrid>) -> WaveField {
            WaveField::from_fn(grid.clone(), |l, r| {
                let (a, b) = seed[(l * grid.resolution() + r) % seed.len()];
                Complex64::new(a, b)
            })
        }

        proptest! {
            #[test]
            fn norms_are_norms(
                a in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 64),
                b in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 64),
                alpha_re in -3.0f64..3.0,
                alpha_im in -3.0f64..3.0,
            ) {
                let grid = Arc::new(SimulationGrid::new(0.25, 16).unwrap());
                let f = field(&a, &grid);
                let g = field(&b, &grid);
                let alpha = Complex64::new(alpha_re, alpha_im);
                let nf = discrete_norms(&f);
                let ng = discrete_norms(&g);
                let scaled = discrete_norms(&f.scaled(alpha));
                prop_assert!((scaled.l2 - alpha.norm() * nf.l2).abs() <= 1e-12 * (1.0 + scaled.l2));
                prop_assert!((scaled.linf - alpha.norm() * nf.linf).abs() <= 1e-12 * (1.0 + scaled.linf));
                let sum = WaveField::new(
                    grid.clone(),
                    f.values().iter().zip(g.values()).map(|(x, y)| x + y).collect(),
                ).unwrap();
                let ns = discrete_norms(&sum);
                prop_assert!(ns.l2 <= nf.l2 + ng.l2 + 1e-12);
                prop_assert!(ns.linf <= nf.linf + ng.linf + 1e-12);
            }
        }
    }
}
