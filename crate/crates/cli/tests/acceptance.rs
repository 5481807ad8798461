//! End-to-end acceptance checks. Prints one `PASS`/`FAIL` line per criterion
//! and exits non-zero if any fails. Set `BLOCHDEC_EXTENDED=1` to add the
//! `ε = 1/1024` Kronig–Penney comparison, which takes tens of minutes.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use blochdec::band::solve_bands;
use blochdec::blochxform::{band_masses, cell_forward, cell_inverse, BlochBasis};
use blochdec::grid::{difference_norms, sample_gaussian, SimulationGrid, WaveField};
use blochdec::harness::{
    run_convergence_study, run_wkb_comparison, ExperimentConfig, InitialState, Setup, Study,
    WkbScenario,
};
use blochdec::potential::{ExternalPotential, LatticeSpec, PeriodicPotential};
use blochdec::steppers::{evolve, EvolveOptions, Scheme, Splitting, StepperConfig};
use blochdec::wkb::{hj_solve, support_interval, CausticPolicy, HjOptions, InitialPhase};
use blochdec::Result;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

fn sci(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", items.join(", "))
}

fn evolve_final(psi: &WaveField, cfg: &StepperConfig, t_end: f64, steps: usize) -> Result<WaveField> {
    Ok(evolve(psi, cfg, t_end, steps, &EvolveOptions::default())?.final_state)
}

fn free_particle() -> Result<Outcome> {
    let (eps, t_end) = (1.0 / 32.0, 0.1);
    let grid = Arc::new(SimulationGrid::new(eps, 32)?);
    let table = Arc::new(solve_bands(Arc::new(PeriodicPotential::free(32)?), grid.clone(), 32, 24)?);
    let psi0 = sample_gaussian(grid.clone());
    let cfg = StepperConfig::bloch(table, ExternalPotential::None, Splitting::Strang, t_end);
    let out = evolve_final(&psi0, &cfg, t_end, 1)?;
    let amp = (10.0 / PI).powf(0.25);
    let s = Complex64::new(1.0, 10.0 * eps * t_end);
    let exact = WaveField::sample(grid, |x| amp / s.sqrt() * (-5.0 * (x - PI).powi(2) / s).exp());
    let err = difference_norms(&out, &exact)?.l2;
    outcome(err <= 1e-6, format!("l2 error {err:.3e} (limit 1e-6)"))
}

fn one_step() -> Result<Outcome> {
    let setup = Setup::new(&LatticeSpec::Mathieu, 1.0 / 32.0, 32, 16, 32)?;
    let psi0 = setup.initial(InitialState::Gaussian)?;
    let cfg = setup.stepper(Scheme::BlochDecomposition, &ExternalPotential::None, Splitting::Strang, 0.1);
    let a = evolve_final(&psi0, &cfg, 0.1, 1)?;
    let b = evolve_final(&psi0, &cfg, 0.1, 100)?;
    let err = difference_norms(&a, &b)?.l2;
    outcome(err <= 1e-10, format!("N=1 vs N=100 l2 {err:.3e} (limit 1e-10)"))
}

fn spatial() -> Result<Outcome> {
    let cfg = ExperimentConfig {
        scenario: "spatial".into(),
        epsilon: 1.0 / 32.0,
        bands: 16,
        study: Study::Spatial,
        resolutions: vec![4, 8, 16, 32],
        dts: vec![0.1],
        t_end: 0.1,
        ..ExperimentConfig::default()
    };
    let report = run_convergence_study(&cfg)?;
    let errors: Vec<f64> = report.levels.iter().map(|l| l.l2).collect();
    let (orders, _) = report.orders(Scheme::BlochDecomposition);
    let decreasing = errors.windows(2).all(|w| w[1] < w[0]);
    let last_order = *orders.last().expect("four levels");
    let last = *errors.last().expect("four levels");
    outcome(
        decreasing && last_order > 6.0 && last <= 1e-5,
        format!("errors {}, final order {last_order:.2} (> 6), final error limit 1e-5", sci(&errors)),
    )
}

/// Least-squares slope of `log e` against `log h`.
fn fitted_order(h: &[f64], e: &[f64]) -> f64 {
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn temporal() -> Result<Outcome> {
    let cfg = ExperimentConfig {
        scenario: "temporal".into(),
        epsilon: 1.0 / 32.0,
        resolution: 16,
        bands: 8,
        external: ExternalPotential::Harmonic,
        study: Study::Temporal,
        dts: vec![0.05, 0.025, 0.0125, 0.00625, 0.003125],
        t_end: 1.0,
        ..ExperimentConfig::default()
    };
    let report = run_convergence_study(&cfg)?;
    let h: Vec<f64> = report.levels.iter().map(|l| l.h).collect();
    let e: Vec<f64> = report.levels.iter().map(|l| l.l2).collect();
    let p = fitted_order(&h, &e);
    outcome((p - 2.0).abs() <= 0.2, format!("errors {}, fitted order {p:.3} (2 ± 0.2)", sci(&e)))
}

fn stagnation() -> Result<Outcome> {
    let (eps, t_end) = (1.0 / 256.0, 1.0);
    let external = ExternalPotential::Harmonic;
    let setup = Setup::new(&LatticeSpec::Mathieu, eps, 16, 8, 24)?;
    let fine = Setup::new(&LatticeSpec::Mathieu, eps, 32, 8, 32)?;
    let exact = evolve_final(
        &fine.initial(InitialState::Gaussian)?,
        &fine.stepper(Scheme::BlochDecomposition, &external, Splitting::Strang, 1e-4),
        t_end,
        10_000,
    )?
    .restrict_to(&setup.grid)?;
    let psi0 = setup.initial(InitialState::Gaussian)?;
    let ts = evolve_final(&psi0, &setup.stepper(Scheme::TimeSplitting, &external, Splitting::Strang, 1e-3), t_end, 1000)?;
    let bd = evolve_final(&psi0, &setup.stepper(Scheme::BlochDecomposition, &external, Splitting::Strang, 1e-2), t_end, 100)?;
    let e_ts = difference_norms(&ts, &exact)?.l2;
    let e_bd = difference_norms(&bd, &exact)?.l2;
    outcome(
        e_ts >= 10.0 * e_bd,
        format!("TS(dt=1e-3) {e_ts:.3e} vs BD(dt=1e-2) {e_bd:.3e}, ratio {:.1} (at least 10)", e_ts / e_bd),
    )
}

fn band_mass_table() -> Result<Outcome> {
    let expected = [7.91e-1, 1.11e-1, 5.92e-1, 8.80e-2];
    let setup = Setup::new(&LatticeSpec::Mathieu, 1.0 / 32.0, 32, 8, 32)?;
    let masses = band_masses(&setup.initial(InitialState::Gaussian)?, &setup.bands)?;
    let norms: Vec<f64> = masses.iter().map(|b| b.norm).collect();
    let total: f64 = masses.iter().map(|b| b.norm_sq).sum();
    let worst = expected
        .iter()
        .zip(&norms)
        .map(|(e, n)| (n - e).abs() / e)
        .fold(0.0, f64::max);
    outcome(
        worst <= 0.05 && (total - 1.0).abs() <= 2e-2,
        format!(
            "norms {}, worst relative deviation {:.1}% (limit 5%), sum of squares {total:.8}",
            sci(&norms[..4]),
            100.0 * worst
        ),
    )
}

fn mass_conservation() -> Result<Outcome> {
    let mut parts = Vec::new();
    let mut passed = true;
    for (lattice, limit) in [(LatticeSpec::Mathieu, 1e-5), (LatticeSpec::KronigPenney, 5e-3)] {
        let setup = Setup::new(&lattice, 1.0 / 32.0, 32, 16, 64)?;
        let cfg = setup.stepper(Scheme::BlochDecomposition, &ExternalPotential::Harmonic, Splitting::Strang, 0.01);
        let drift = evolve(&setup.initial(InitialState::Gaussian)?, &cfg, 1.0, 100, &EvolveOptions::default())?.mass_drift();
        passed &= drift <= limit;
        parts.push(format!("{lattice} drift {drift:.3e} (limit {limit:.0e})"));
    }
    outcome(passed, parts.join(", "))
}

fn gauge() -> Result<Outcome> {
    let setup = Setup::new(&LatticeSpec::Mathieu, 1.0 / 16.0, 16, 8, 24)?;
    let psi0 = setup.initial(InitialState::Gaussian)?;
    let external = ExternalPotential::Harmonic;
    let base = evolve_final(&psi0, &setup.stepper(Scheme::BlochDecomposition, &external, Splitting::Strang, 0.02), 0.1, 5)?;
    let cells = setup.grid.cells();
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phases: Vec<f64> = (0..setup.bands.bands() * cells).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
        let rotated = Arc::new(setup.bands.rephased(|m, l| phases[m * cells + l]));
        let cfg = StepperConfig::bloch(rotated, external.clone(), Splitting::Strang, 0.02);
        let out = evolve_final(&psi0, &cfg, 0.1, 5)?;
        worst = worst.max(difference_norms(&out, &base)?.linf);
    }
    outcome(worst <= 1e-12, format!("worst l-inf change over 10 seeds {worst:.3e} (limit 1e-12)"))
}

fn wkb_comparison() -> Result<Outcome> {
    let c = run_wkb_comparison(&WkbScenario::mathieu_ground(1.0 / 32.0))?;
    let sup = c.sup_l2();
    outcome(sup <= 2e-2, format!("sup-L2 {sup:.3e} (limit 2e-2), sup-Linf {:.3e}", c.sup_linf()))
}

fn caustic_onset() -> Result<Outcome> {
    let grid = Arc::new(SimulationGrid::new(1.0 / 256.0, 4)?);
    let table = solve_bands(Arc::new(PeriodicPotential::kronig_penney(64)?), grid, 32, 4)?;
    let envelope = |x: f64| Complex64::new((-5.0 * (x - PI).powi(2)).exp(), 0.0);
    let mut onsets = Vec::new();
    for nx in [2048, 4096] {
        let options = HjOptions {
            policy: CausticPolicy::Truncate,
            window: support_interval(&envelope, 1e-10, 0.0, nx),
        };
        let dt = 0.3 * 2.0 * PI / nx as f64;
        let sol = hj_solve(&table, 1, &ExternalPotential::Harmonic, InitialPhase::NEG_COS, 0.8, nx, dt, &options)?;
        onsets.push(sol.caustic.onset_time);
    }
    let passed = match (onsets[0], onsets[1]) {
        (Some(a), Some(b)) => (0.19..=0.29).contains(&b) && (a - b).abs() <= 0.02,
        _ => false,
    };
    outcome(passed, format!("onset at nx=2048, 4096: {onsets:.3?} (expected [0.19, 0.29], spread ≤ 0.02)"))
}

fn transform_invariants() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = [0.0f64; 4];
    for (cells, res) in [(4, 16), (8, 16), (64, 16), (32, 32), (16, 64)] {
        let grid = Arc::new(SimulationGrid::new(1.0 / cells as f64, res)?);
        let psi = WaveField::from_fn(grid.clone(), |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let tilde = cell_forward(&psi);
        let back = cell_inverse(&tilde);
        worst[0] = worst[0].max(difference_norms(&back, &psi)?.linf);
        let ratio = tilde.values().iter().map(|z| z.norm_sqr()).sum::<f64>()
            / (cells as f64 * psi.values().iter().map(|z| z.norm_sqr()).sum::<f64>());
        worst[1] = worst[1].max((ratio - 1.0).abs());

        let lam = res / 2 + 16;
        let table = solve_bands(Arc::new(PeriodicPotential::mathieu(lam)?), grid.clone(), lam, res / 4)?;
        let basis = BlochBasis::new(&table)?;
        let once = basis.reconstruct(&basis.project(&tilde)?)?;
        let twice = basis.reconstruct(&basis.project(&once)?)?;
        let d = once.values().iter().zip(twice.values()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        worst[2] = worst[2].max(d);

        let smooth = cell_inverse(&once);
        let split: f64 = band_masses(&smooth, &table)?.iter().map(|b| b.norm_sq).sum();
        worst[3] = worst[3].max((split - smooth.mass()).abs() / smooth.mass());
    }
    let limits = [1e-12, 1e-12, 1e-10, 1e-10];
    outcome(
        worst.iter().zip(&limits).all(|(w, l)| w <= l),
        format!(
            "round trip {:.1e}, scaled unitarity {:.1e}, idempotency {:.1e}, band-mass Parseval {:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

/// Kronig–Penney with harmonic confinement at `ε = 1/1024`, `t = 0.1`:
/// TS at `Δt = 2e-5`, `R = 64` and BD at `Δt = 0.1`, `R = 8`, both against
/// BD at `Δt = 1e-5`, `R = 128`. Each error must lie within a factor 3 of
/// the expected value.
fn extended_kronig_penney() -> Result<Outcome> {
    let (eps, t_end) = (1.0 / 1024.0, 0.1);
    let external = ExternalPotential::Harmonic;
    let lattice = LatticeSpec::KronigPenney;
    let fine = Setup::new(&lattice, eps, 128, 32, 80)?;
    let exact = evolve_final(
        &fine.initial(InitialState::Gaussian)?,
        &fine.stepper(Scheme::BlochDecomposition, &external, Splitting::Strang, 1e-5),
        t_end,
        10_000,
    )?;
    let ts_setup = Setup::new(&lattice, eps, 64, 8, 48)?;
    let ts = evolve_final(
        &ts_setup.initial(InitialState::Gaussian)?,
        &ts_setup.stepper(Scheme::TimeSplitting, &external, Splitting::Strang, 2e-5),
        t_end,
        5000,
    )?;
    let bd_setup = Setup::new(&lattice, eps, 8, 4, 20)?;
    let bd = evolve_final(
        &bd_setup.initial(InitialState::Gaussian)?,
        &bd_setup.stepper(Scheme::BlochDecomposition, &external, Splitting::Strang, 0.1),
        t_end,
        1,
    )?;
    let e_ts = difference_norms(&ts, &exact.restrict_to(&ts_setup.grid)?)?;
    let e_bd = difference_norms(&bd, &exact.restrict_to(&bd_setup.grid)?)?;
    let pairs = [
        ("TS linf", e_ts.linf, 1.61),
        ("BD linf", e_bd.linf, 9.16e-2),
        ("TS l2", e_ts.l2, 2.63e-1),
        ("BD l2", e_bd.l2, 1.71e-2),
    ];
    let passed = pairs.iter().all(|(_, v, e)| *v >= e / 3.0 && *v <= 3.0 * e);
    let detail = pairs
        .iter()
        .map(|(n, v, e)| format!("{n} {v:.3e} (expected {e:.2e})"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(passed, detail)
}

type Criterion = (&'static str, fn() -> Result<Outcome>);

fn main() -> ExitCode {
    let mut criteria: Vec<Criterion> = vec![
        ("free particle against closed form", free_particle),
        ("one-step exactness without external potential", one_step),
        ("spatial spectral convergence", spatial),
        ("temporal second order", temporal),
        ("TS stagnation vs BD at eps = 1/256", stagnation),
        ("Mathieu band masses", band_mass_table),
        ("mass conservation over T = 1", mass_conservation),
        ("gauge invariance", gauge),
        ("WKB against BD, Mathieu band 1", wkb_comparison),
        ("caustic onset, Kronig-Penney band 2", caustic_onset),
        ("Bloch transform invariants", transform_invariants),
    ];
    if std::env::var("BLOCHDEC_EXTENDED").is_ok_and(|v| v == "1") {
        criteria.push(("extended: Kronig-Penney at eps = 1/1024", extended_kronig_penney));
    }
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (passed, detail) = match run() {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !passed {
            failures += 1;
        }
        println!(
            "{} {}: {name}: {detail} [{:.1} s]",
            if passed { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
