use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use blochdec::grid::{difference_norms, WaveField};
use blochdec::harness::{
    default_truncation, emit_report, run_convergence_study, run_wkb_comparison, selftest, solve_wkb, ExperimentConfig,
    InitialState, ReportFormat, Setup, WkbScenario,
};
use blochdec::potential::{ExternalPotential, LatticeSpec};
use blochdec::steppers::{evolve, EvolveOptions, Scheme, Splitting};
use blochdec::wkb::InitialPhase;
use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(name = "blochdec", version, about = "Semiclassical Schrödinger solvers with lattice potentials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a band table and write the binary cache plus a CSV of energies.
    Bands {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evolve a state with BD or TS and write snapshots.
    Evolve(EvolveArgs),
    /// Print the l2 and l-inf norms of the difference of two binary fields.
    Compare { a: PathBuf, b: PathBuf },
    /// Single-band WKB approximation, optionally checked against BD.
    Wkb(WkbArgs),
    /// Run a convergence study described by a config file.
    Convergence {
        #[arg(long)]
        config: PathBuf,
        /// Report formats, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "csv")]
        format: Vec<ReportFormat>,
        /// Overrides `out` in the config file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run small invariant checks across all modules.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct GridArgs {
    /// Lattice period, decimal or `1/N`.
    #[arg(long, value_parser = parse_real, default_value = "1/32")]
    eps: f64,
    /// Points per cell.
    #[arg(long = "R", default_value_t = 16)]
    resolution: usize,
    /// Number of bands.
    #[arg(long = "M", default_value_t = 8)]
    bands: usize,
    /// Plane-wave cutoff; defaults to R/2 + 16.
    #[arg(long = "Lambda")]
    truncation: Option<usize>,
    /// mathieu, kronig_penney, free or file:<path>.
    #[arg(long, default_value = "mathieu")]
    lattice: LatticeSpec,
}

impl GridArgs {
    fn setup(&self) -> Result<Setup> {
        let lam = self.truncation.unwrap_or_else(|| default_truncation(self.resolution));
        Ok(Setup::new(&self.lattice, self.eps, self.resolution, self.bands, lam)?)
    }

    fn describe(&self) -> String {
        format!(
            "eps={:e} R={} M={} Lambda={:?} lattice={}",
            self.eps, self.resolution, self.bands, self.truncation, self.lattice
        )
    }
}

#[derive(Args)]
struct EvolveArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value = "bd")]
    scheme: Scheme,
    #[arg(long, default_value = "strang")]
    order: Splitting,
    /// none, linear:<E>, harmonic, step or file:<path>.
    #[arg(long, default_value = "none")]
    external: ExternalPotential,
    /// `gaussian` or `band:m` (1-based).
    #[arg(long, default_value = "gaussian")]
    initial: InitialState,
    #[arg(long = "T", value_parser = parse_real, default_value = "0.1")]
    t_end: f64,
    #[arg(long, default_value_t = 10)]
    steps: usize,
    #[arg(long)]
    snapshot_every: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Phi0 {
    Zero,
    NegCos,
}

#[derive(Clone, Copy, ValueEnum)]
enum Envelope {
    Gaussian,
}

#[derive(Args)]
struct WkbArgs {
    /// Band index, 1-based.
    #[arg(long, default_value_t = 1)]
    band: usize,
    #[arg(long, value_enum, default_value = "zero")]
    phi0: Phi0,
    #[arg(long, value_enum, default_value = "gaussian")]
    f0: Envelope,
    #[arg(long, value_parser = parse_real, default_value = "1/32")]
    eps: f64,
    #[arg(long, default_value = "mathieu")]
    lattice: LatticeSpec,
    #[arg(long, default_value = "harmonic")]
    external: ExternalPotential,
    #[arg(long, value_parser = parse_real, default_value = "1")]
    t_end: f64,
    /// Phase grid size; defaults to 64 points per cell.
    #[arg(long)]
    nx: Option<usize>,
    /// Also run BD and write the error at each snapshot.
    #[arg(long)]
    compare: bool,
    #[arg(long)]
    out: PathBuf,
}

fn parse_real(s: &str) -> Result<f64, String> {
    let bad = || format!("bad number `{s}`");
    match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            Ok(a / b)
        }
        None => s.trim().parse().map_err(|_| bad()),
    }
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Records written files and writes `manifest.json` next to them.
struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn text(&mut self, name: &str, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let path = self.path(name);
        let mut out = BufWriter::new(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        write(&mut out)?;
        out.flush()?;
        Ok(())
    }

    fn record(&mut self, path: &Path) {
        let name = path.strip_prefix(&self.dir).unwrap_or(path);
        self.files.push(name.display().to_string());
    }

    fn finish(self, config_hash: &str) -> Result<()> {
        let manifest = serde_json::json!({
            "files": self.files,
            "config_hash": config_hash,
        });
        fs::write(self.dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }
}

fn write_field(out: &mut Output, stem: &str, psi: &WaveField) -> Result<()> {
    psi.write_binary(&out.path(&format!("{stem}.bin")))?;
    out.text(&format!("{stem}.csv"), |w| Ok(psi.write_csv(&mut &mut *w)?))
}

fn bands(grid: &GridArgs, dir: &Path) -> Result<()> {
    let setup = grid.setup()?;
    let mut out = Output::new(dir)?;
    setup.bands.save(&out.path("bands.bin"))?;
    out.text("bands.csv", |w| Ok(setup.bands.write_csv(&mut &mut *w)?))?;
    out.finish(&sha256_hex(&grid.describe()))
}

fn run_evolve(args: &EvolveArgs) -> Result<()> {
    if args.steps == 0 {
        bail!("--steps must be positive");
    }
    let setup = args.grid.setup()?;
    let psi0 = setup.initial(args.initial)?;
    let cfg = setup.stepper(args.scheme, &args.external, args.order, args.t_end / args.steps as f64);
    let options = EvolveOptions {
        snapshot_every: args.snapshot_every,
        band_masses: false,
    };
    let traj = evolve(&psi0, &cfg, args.t_end, args.steps, &options)?;

    let mut out = Output::new(&args.out)?;
    write_field(&mut out, "initial", &psi0)?;
    for (i, (_, psi)) in traj.snapshots.iter().enumerate() {
        write_field(&mut out, &format!("snapshot_{i:04}"), psi)?;
    }
    write_field(&mut out, "final", &traj.final_state)?;
    let dt = args.t_end / args.steps as f64;
    out.text("mass.csv", |w| {
        writeln!(w, "t,mass")?;
        for (i, m) in traj.mass.iter().enumerate() {
            writeln!(w, "{:.12e},{m:.15e}", i as f64 * dt)?;
        }
        Ok(())
    })?;
    out.text("snapshots.csv", |w| {
        writeln!(w, "index,t")?;
        for (i, (t, _)) in traj.snapshots.iter().enumerate() {
            writeln!(w, "{i},{t:.12e}")?;
        }
        Ok(())
    })?;
    println!(
        "{} steps, mass drift {:.3e}, {:.3e} s per step",
        args.steps,
        traj.mass_drift(),
        traj.seconds_per_step
    );
    let text = format!(
        "{} scheme={} order={} external={} initial={} T={:e} steps={}",
        args.grid.describe(),
        args.scheme,
        args.order,
        args.external,
        args.initial,
        args.t_end,
        args.steps
    );
    out.finish(&sha256_hex(&text))
}

fn compare(a: &Path, b: &Path) -> Result<()> {
    let a = WaveField::read_binary(a)?;
    let b = WaveField::read_binary(b)?;
    let n = difference_norms(&a, &b)?;
    println!("l2 {:.6e}\nlinf {:.6e}", n.l2, n.linf);
    Ok(())
}

fn wkb(args: &WkbArgs) -> Result<()> {
    if args.band == 0 {
        bail!("--band is 1-based");
    }
    let Envelope::Gaussian = args.f0;
    let mut s = WkbScenario::mathieu_ground(args.eps);
    s.lattice = args.lattice.clone();
    s.band = args.band - 1;
    s.external = args.external.clone();
    s.phi0 = match args.phi0 {
        Phi0::Zero => InitialPhase::ZERO,
        Phi0::NegCos => InitialPhase::NEG_COS,
    };
    s.t_end = args.t_end;
    s.bd_steps = ((200.0 * args.t_end).ceil() as usize).div_ceil(s.snapshots) * s.snapshots;
    if let Some(nx) = args.nx {
        s.nx = nx;
    }
    let mut out = Output::new(&args.out)?;
    if args.compare {
        let c = run_wkb_comparison(&s)?;
        out.text("wkb_errors.csv", |w| {
            writeln!(w, "t,l2,linf")?;
            for ((t, l2), linf) in c.times.iter().zip(&c.l2).zip(&c.linf) {
                writeln!(w, "{t:.6e},{l2:.6e},{linf:.6e}")?;
            }
            Ok(())
        })?;
        println!("sup l2 {:.6e}, sup linf {:.6e}", c.sup_l2(), c.sup_linf());
    } else {
        let setup = Setup::new(&s.lattice, s.epsilon, s.resolution, s.bd_bands, s.truncation)?;
        let sol = solve_wkb(&s, setup.grid.clone(), setup.lattice.clone())?;
        write_field(&mut out, "wkb_final", &sol.field_near(s.t_end)?)?;
        if let Some(tc) = sol.caustic.onset_time {
            println!("caustic at t = {tc:.4}");
        }
    }
    let text = format!(
        "wkb band={} phi0={} eps={:e} lattice={} external={} T={:e} nx={} compare={}",
        args.band,
        matches!(args.phi0, Phi0::NegCos),
        args.eps,
        args.lattice,
        args.external,
        args.t_end,
        s.nx,
        args.compare
    );
    out.finish(&sha256_hex(&text))
}

fn convergence(config: &Path, formats: &[ReportFormat], out_dir: Option<&Path>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(dir) = out_dir {
        cfg.output = dir.to_path_buf();
    }
    let report = run_convergence_study(&cfg)?;
    let mut out = Output::new(&cfg.output)?;
    for &format in formats {
        let path = emit_report(&report, format, &cfg.output)?;
        out.record(&path);
    }
    for scheme in report.schemes() {
        let (l2, _) = report.orders(scheme);
        let orders: Vec<String> = l2.iter().map(|o| format!("{o:.2}")).collect();
        println!("{scheme}: l2 orders [{}]", orders.join(", "));
    }
    out.finish(&cfg.digest())
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("BLOCHDEC_THREADS") {
        let n: usize = v.parse().with_context(|| format!("BLOCHDEC_THREADS={v}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    init_threads()?;
    match cli.command {
        Command::Bands { grid, out } => bands(&grid, &out)?,
        Command::Evolve(args) => run_evolve(&args)?,
        Command::Compare { a, b } => compare(&a, &b)?,
        Command::Wkb(args) => wkb(&args)?,
        Command::Convergence { config, format, out } => convergence(&config, &format, out.as_deref())?,
        Command::Selftest { seed } => {
            let summary = selftest(seed);
            for c in &summary.checks {
                println!("{} {}: {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.module, c.name, c.detail);
            }
            if let Some(c) = summary.first_failure() {
                eprintln!("first failure: {} / {} (seed {})", c.module, c.name, summary.seed);
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
