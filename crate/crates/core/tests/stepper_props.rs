use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use blochdec::band::{solve_bands, BandTable};
use blochdec::grid::{sample_gaussian, SimulationGrid, WaveField};
use blochdec::potential::{ExternalPotential, PeriodicPotential};
use blochdec::steppers::{bd_periodic_flow, evolve, EvolveOptions, Splitting, StepperConfig};
use num_complex::Complex64;
use proptest::prelude::*;

fn mathieu() -> &'static Arc<BandTable> {
    static TABLE: OnceLock<Arc<BandTable>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let grid = Arc::new(SimulationGrid::new(1.0 / 16.0, 16).unwrap());
        let pot = Arc::new(PeriodicPotential::mathieu(24).unwrap());
        Arc::new(solve_bands(pot, grid, 24, 8).unwrap())
    })
}

fn packet(grid: Arc<SimulationGrid>, shift: f64, momentum: f64) -> WaveField {
    WaveField::sample(grid, |x| {
        Complex64::from_polar((-5.0 * (x - shift).powi(2)).exp(), momentum * x)
    })
}

fn max_diff(a: &WaveField, b: &WaveField) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn bd_output_ignores_eigenvector_phases(
        phases in prop::collection::vec(0.0..2.0 * PI, 5..40),
        shift in 2.0..4.0f64,
        momentum in -3.0..3.0f64,
    ) {
        let t = mathieu();
        let psi = packet(t.grid().clone(), shift, momentum);
        let rotated = Arc::new(t.rephased(|m, l| phases[(m * 7 + l) % phases.len()]));
        let a = StepperConfig::bloch(t.clone(), ExternalPotential::Harmonic, Splitting::Strang, 0.02);
        let b = StepperConfig::bloch(rotated, ExternalPotential::Harmonic, Splitting::Strang, 0.02);
        let ra = evolve(&psi, &a, 0.1, 5, &EvolveOptions::default()).unwrap().final_state;
        let rb = evolve(&psi, &b, 0.1, 5, &EvolveOptions::default()).unwrap().final_state;
        prop_assert!(max_diff(&ra, &rb) < 1e-12);
    }

    #[test]
    fn periodic_flow_is_a_group(t1 in 0.0..0.5f64, t2 in 0.0..0.5f64, shift in 2.0..4.0f64) {
        let t = mathieu();
        let eps = t.grid().epsilon();
        let psi = packet(t.grid().clone(), shift, 0.0);
        let split = bd_periodic_flow(&bd_periodic_flow(&psi, t, t1, eps).unwrap(), t, t2, eps).unwrap();
        let joint = bd_periodic_flow(&psi, t, t1 + t2, eps).unwrap();
        prop_assert!(max_diff(&split, &joint) < 1e-12);
    }

    #[test]
    fn time_splitting_conserves_mass(
        dt in 0.001..0.05f64,
        momentum in -5.0..5.0f64,
        field in prop::sample::select(vec![0usize, 1, 2]),
    ) {
        let grid = Arc::new(SimulationGrid::new(1.0 / 16.0, 16).unwrap());
        let lattice = Arc::new(PeriodicPotential::kronig_penney(16).unwrap());
        let external = [ExternalPotential::None, ExternalPotential::Harmonic, ExternalPotential::Step][field].clone();
        let cfg = StepperConfig::splitting_spectral(lattice, external, Splitting::Strang, dt);
        let psi = packet(grid, PI, momentum);
        let traj = evolve(&psi, &cfg, 10.0 * dt, 10, &EvolveOptions::default()).unwrap();
        prop_assert!(traj.mass_drift() < 1e-12);
    }
}

#[test]
fn strang_and_lie_agree_without_external_force() {
    let t = mathieu();
    let psi = sample_gaussian(t.grid().clone());
    let strang = StepperConfig::bloch(t.clone(), ExternalPotential::None, Splitting::Strang, 0.1);
    let lie = StepperConfig::bloch(t.clone(), ExternalPotential::None, Splitting::Lie, 0.1);
    let a = evolve(&psi, &strang, 0.3, 3, &EvolveOptions::default()).unwrap().final_state;
    let b = evolve(&psi, &lie, 0.3, 3, &EvolveOptions::default()).unwrap().final_state;
    assert!(max_diff(&a, &b) < 1e-12);
}
