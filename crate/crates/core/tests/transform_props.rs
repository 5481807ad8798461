use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use blochdec::band::{solve_bands, BandTable};
use blochdec::blochxform::{band_masses, cell_forward, cell_inverse, BlochBasis, BlochCoeffs};
use blochdec::grid::{SimulationGrid, WaveField};
use blochdec::potential::PeriodicPotential;
use num_complex::Complex64;
use proptest::prelude::*;

/// Mathieu tables with `M = R/4` bands on a few `(L, R)` shapes. The bands
/// must be resolved by `R` points per cell for the sliced basis to be
/// orthonormal to rounding.
const SHAPES: [(usize, usize); 4] = [(4, 16), (8, 16), (64, 16), (32, 32)];

fn table(i: usize) -> &'static (Arc<BandTable>, BlochBasis) {
    static TABLES: OnceLock<Vec<(Arc<BandTable>, BlochBasis)>> = OnceLock::new();
    &TABLES.get_or_init(|| {
        SHAPES
            .iter()
            .map(|&(cells, res)| {
                let grid = Arc::new(SimulationGrid::new(1.0 / cells as f64, res).unwrap());
                let lam = res / 2 + 16;
                let pot = Arc::new(PeriodicPotential::mathieu(lam).unwrap());
                let t = Arc::new(solve_bands(pot, grid, lam, res / 4).unwrap());
                let basis = BlochBasis::new(&t).unwrap();
                (t, basis)
            })
            .collect()
    })[i]
}

fn random_field(grid: Arc<SimulationGrid>, seed: &[(f64, f64)]) -> WaveField {
    let n = seed.len();
    WaveField::from_fn(grid, |l, r| {
        let (a, b) = seed[(l * 31 + r * 7) % n];
        Complex64::new(a, b)
    })
}

fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn coeff_strategy() -> impl Strategy<Value = (usize, Vec<(f64, f64)>)> {
    (0..SHAPES.len(), prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 64..=64))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cell_transform_is_invertible_and_scaled_unitary(
        cells_log in 0u32..6,
        res_log in 2u32..5,
        seed in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 17..40),
    ) {
        let grid = Arc::new(SimulationGrid::new(1.0 / (1u32 << cells_log) as f64, 1 << res_log).unwrap());
        let psi = random_field(grid.clone(), &seed);
        let tilde = cell_forward(&psi);
        prop_assert!(max_diff(cell_inverse(&tilde).values(), psi.values()) < 1e-12);
        let a: f64 = psi.values().iter().map(|z| z.norm_sqr()).sum();
        let b: f64 = tilde.values().iter().map(|z| z.norm_sqr()).sum();
        prop_assert!((b - grid.cells() as f64 * a).abs() < 1e-10 * b.max(1.0));
    }

    #[test]
    fn band_limited_round_trip_and_parseval((shape, seed) in coeff_strategy()) {
        let (t, basis) = table(shape);
        let grid = t.grid();
        let mut coeffs = BlochCoeffs::zeros(t.bands(), grid.cells());
        for m in 0..t.bands() {
            for l in 0..grid.cells() {
                let (a, b) = seed[(m * 13 + l * 5) % seed.len()];
                coeffs.set(m, l, Complex64::new(a, b));
            }
        }
        let psi = cell_inverse(&basis.reconstruct(&coeffs).unwrap());
        let back = basis.project(&cell_forward(&psi)).unwrap();
        prop_assert!(max_diff(back.values(), coeffs.values()) < 1e-10);

        let sum: f64 = coeffs.values().iter().map(|z| z.norm_sqr()).sum();
        let eps = grid.epsilon();
        prop_assert!((psi.mass() - eps * eps / (2.0 * PI) * sum).abs() < 1e-10 * psi.mass());

        let split: f64 = band_masses(&psi, t).unwrap().iter().map(|b| b.norm_sq).sum();
        prop_assert!((split - psi.mass()).abs() < 1e-10 * psi.mass());
    }

    #[test]
    fn projection_is_idempotent((shape, seed) in coeff_strategy()) {
        let (t, basis) = table(shape);
        let psi = random_field(t.grid().clone(), &seed);
        let once = basis.reconstruct(&basis.project(&cell_forward(&psi)).unwrap()).unwrap();
        let twice = basis.reconstruct(&basis.project(&once).unwrap()).unwrap();
        let scale = once.values().iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
        prop_assert!(max_diff(once.values(), twice.values()) < 1e-10 * scale);
    }

    #[test]
    fn coefficients_follow_eigenvector_phases(
        (shape, seed) in coeff_strategy(),
        phases in prop::collection::vec(0.0..2.0 * PI, 8..24),
    ) {
        let (t, basis) = table(shape);
        let theta = |m: usize, l: usize| phases[(m * 3 + l) % phases.len()];
        let rotated = BlochBasis::new(&t.rephased(theta)).unwrap();
        let tilde = cell_forward(&random_field(t.grid().clone(), &seed));
        let c = basis.project(&tilde).unwrap();
        let c_rot = rotated.project(&tilde).unwrap();
        for m in 0..t.bands() {
            for l in 0..t.grid().cells() {
                let expected = c.get(m, l) * Complex64::from_polar(1.0, -theta(m, l));
                prop_assert!((c_rot.get(m, l) - expected).norm() < 1e-11);
            }
        }
        let a = basis.reconstruct(&c).unwrap();
        let b = rotated.reconstruct(&c_rot).unwrap();
        prop_assert!(max_diff(a.values(), b.values()) < 1e-11);
    }
}
