//! Lattice potentials (2π-periodic, fast scale) and external potentials
//! (slowly varying, on the macroscopic domain `[0, 2π]`).

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rustfft::FftPlanner;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Pointwise description of the lattice potential, kept alongside the Fourier
/// table so the time-splitting solver can sample it without Gibbs ringing.
#[derive(Debug, Clone, PartialEq)]
pub enum LatticeShape {
    /// `V(y) = cos y`
    Mathieu,
    /// `V(y) = 1` outside `[π/2, 3π/2]`, `0` inside.
    KronigPenney,
    /// Uniform samples of one period, linearly interpolated.
    Tabulated(Vec<f64>),
    /// No lattice.
    Free,
}

/// Truncated Fourier table `V̂(λ)` of a real 2π-periodic potential.
///
/// With truncation `Λ` the table stores `λ ∈ {1-2Λ, …, 2Λ-1}`, which is the
/// full range of index differences appearing in the `2Λ × 2Λ` Hamiltonian.
#[derive(Debug, Clone)]
pub struct PeriodicPotential {
    truncation: usize,
    coeffs: Vec<Complex64>,
    shape: LatticeShape,
}

impl PeriodicPotential {
    fn from_fn(
        truncation: usize,
        shape: LatticeShape,
        f: impl Fn(i64) -> Complex64,
    ) -> Result<Self> {
        if truncation == 0 {
            return Err(Error::Config("potential truncation must be positive".into()));
        }
        let reach = 2 * truncation as i64 - 1;
        let coeffs = (-reach..=reach).map(f).collect();
        Ok(Self {
            truncation,
            coeffs,
            shape,
        })
    }

    pub fn free(truncation: usize) -> Result<Self> {
        Self::from_fn(truncation, LatticeShape::Free, |_| Complex64::new(0.0, 0.0))
    }

    /// `V(y) = cos y`.
    pub fn mathieu(truncation: usize) -> Result<Self> {
        Self::from_fn(truncation, LatticeShape::Mathieu, |l| {
            if l.abs() == 1 {
                Complex64::new(0.5, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    /// Piecewise constant well: zero on `[π/2, 3π/2]`, one elsewhere.
    pub fn kronig_penney(truncation: usize) -> Result<Self> {
        Self::from_fn(truncation, LatticeShape::KronigPenney, kronig_penney_coefficient)
    }

    /// Builds the table from `n ≥ 4Λ` uniform samples `V(2πj/n)`.
    pub fn from_samples(samples: &[f64], truncation: usize) -> Result<Self> {
        let needed = 4 * truncation;
        if samples.len() < needed || truncation == 0 {
            return Err(Error::InsufficientSamples {
                needed: needed.max(4),
                got: samples.len(),
            });
        }
        let n = samples.len();
        let mut buf: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let scale = 1.0 / n as f64;
        let raw = |l: i64| buf[l.rem_euclid(n as i64) as usize] * scale;
        Self::from_fn(
            truncation,
            LatticeShape::Tabulated(samples.to_vec()),
            |l| 0.5 * (raw(l) + raw(-l).conj()),
        )
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn shape(&self) -> &LatticeShape {
        &self.shape
    }

    /// Largest `|λ|` held in the table.
    pub fn reach(&self) -> usize {
        2 * self.truncation - 1
    }

    /// `V̂(λ)`, zero outside the stored range.
    pub fn coefficient(&self, lambda: i64) -> Complex64 {
        let reach = self.reach() as i64;
        if lambda.abs() > reach {
            Complex64::new(0.0, 0.0)
        } else {
            self.coeffs[(lambda + reach) as usize]
        }
    }

    /// Same potential, different truncation. Tabulated potentials keep their
    /// samples and need enough of them.
    pub fn with_truncation(&self, truncation: usize) -> Result<Self> {
        match &self.shape {
            LatticeShape::Mathieu => Self::mathieu(truncation),
            LatticeShape::KronigPenney => Self::kronig_penney(truncation),
            LatticeShape::Free => Self::free(truncation),
            LatticeShape::Tabulated(s) => Self::from_samples(s, truncation),
        }
    }

    /// Truncated Fourier series `Σ V̂(λ) e^{iλy}`.
    pub fn series(&self, y: f64) -> Complex64 {
        let reach = self.reach() as i64;
        (-reach..=reach)
            .map(|l| self.coefficient(l) * Complex64::from_polar(1.0, l as f64 * y))
            .sum()
    }

    /// Pointwise value of the potential at fast variable `y` (any real).
    pub fn value(&self, y: f64) -> f64 {
        let y = y.rem_euclid(2.0 * PI);
        match &self.shape {
            LatticeShape::Mathieu => y.cos(),
            LatticeShape::KronigPenney => {
                if (PI / 2.0..=3.0 * PI / 2.0).contains(&y) {
                    0.0
                } else {
                    1.0
                }
            }
            LatticeShape::Free => 0.0,
            LatticeShape::Tabulated(s) => periodic_linear(s, y),
        }
    }

    /// Stable digest of the coefficient table, used to tag band caches.
    pub fn digest(&self) -> u64 {
        let mut h = Sha256::new();
        h.update((self.truncation as u64).to_le_bytes());
        for c in &self.coeffs {
            h.update(c.re.to_le_bytes());
            h.update(c.im.to_le_bytes());
        }
        let out = h.finalize();
        u64::from_le_bytes(out[..8].try_into().expect("digest has 32 bytes"))
    }
}

fn kronig_penney_coefficient(l: i64) -> Complex64 {
    let value = if l == 0 {
        0.5
    } else if l % 2 == 0 {
        0.0
    } else {
        let lf = l as f64;
        (lf * PI / 2.0).sin() / (PI * lf)
    };
    Complex64::new(value, 0.0)
}

fn periodic_linear(samples: &[f64], y: f64) -> f64 {
    let n = samples.len();
    let s = y / (2.0 * PI) * n as f64;
    let i = s.floor();
    let frac = s - i;
    let i = (i as usize) % n;
    samples[i] * (1.0 - frac) + samples[(i + 1) % n] * frac
}

impl FromStr for LatticeSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "mathieu" => Ok(LatticeSpec::Mathieu),
            "kronig_penney" | "kronig-penney" => Ok(LatticeSpec::KronigPenney),
            "free" | "none" => Ok(LatticeSpec::Free),
            _ => match s.strip_prefix("file:") {
                Some(path) if !path.is_empty() => Ok(LatticeSpec::File(path.into())),
                _ => Err(Error::Config(format!("unknown lattice `{s}`"))),
            },
        }
    }
}

/// Lattice choice as written in configuration files.
#[derive(Debug, Clone, PartialEq)]
pub enum LatticeSpec {
    Mathieu,
    KronigPenney,
    Free,
    /// Whitespace-separated samples of one period.
    File(std::path::PathBuf),
}

impl LatticeSpec {
    pub fn build(&self, truncation: usize) -> Result<PeriodicPotential> {
        match self {
            LatticeSpec::Mathieu => PeriodicPotential::mathieu(truncation),
            LatticeSpec::KronigPenney => PeriodicPotential::kronig_penney(truncation),
            LatticeSpec::Free => PeriodicPotential::free(truncation),
            LatticeSpec::File(path) => {
                let text = std::fs::read_to_string(path)?;
                let samples = text
                    .split_whitespace()
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| Error::Config(format!("bad sample `{t}` in {}", path.display())))
                    })
                    .collect::<Result<Vec<_>>>()?;
                PeriodicPotential::from_samples(&samples, truncation)
            }
        }
    }
}

impl fmt::Display for LatticeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatticeSpec::Mathieu => f.write_str("mathieu"),
            LatticeSpec::KronigPenney => f.write_str("kronig_penney"),
            LatticeSpec::Free => f.write_str("free"),
            LatticeSpec::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

/// Slowly varying potential `U(x)` on `[0, 2π]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ExternalPotential {
    #[default]
    None,
    /// `U(x) = E x`
    Linear(f64),
    /// `U(x) = (x - π)²`
    Harmonic,
    /// `U(x) = 1` on the closed interval `[π/2, 3π/2]`, zero elsewhere.
    Step,
    /// Uniform samples on `[0, 2π)`, periodic linear interpolation.
    Sampled(Vec<f64>),
}

const DOMAIN_SLACK: f64 = 1e-12;

impl ExternalPotential {
    pub fn is_zero(&self) -> bool {
        matches!(self, ExternalPotential::None)
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        if !(-DOMAIN_SLACK..=2.0 * PI + DOMAIN_SLACK).contains(&x) {
            return Err(Error::OutOfDomain(x));
        }
        Ok(self.value(x))
    }

    /// Unchecked evaluation for points already known to be in the domain.
    pub(crate) fn value(&self, x: f64) -> f64 {
        match self {
            ExternalPotential::None => 0.0,
            ExternalPotential::Linear(e) => e * x,
            ExternalPotential::Harmonic => (x - PI).powi(2),
            ExternalPotential::Step => {
                if (PI / 2.0..=3.0 * PI / 2.0).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            }
            ExternalPotential::Sampled(s) => periodic_linear(s, x.rem_euclid(2.0 * PI)),
        }
    }

    /// `U'(x)`, or `None` when the potential has jumps.
    pub fn derivative(&self, x: f64) -> Option<f64> {
        match self {
            ExternalPotential::None => Some(0.0),
            ExternalPotential::Linear(e) => Some(*e),
            ExternalPotential::Harmonic => Some(2.0 * (x - PI)),
            ExternalPotential::Step => None,
            ExternalPotential::Sampled(s) => {
                let n = s.len();
                let h = 2.0 * PI / n as f64;
                let i = ((x.rem_euclid(2.0 * PI)) / h).floor() as usize % n;
                Some((s[(i + 1) % n] - s[i]) / h)
            }
        }
    }

    pub fn is_smooth(&self) -> bool {
        !matches!(self, ExternalPotential::Step)
    }
}

impl FromStr for ExternalPotential {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "none" | "" => Ok(ExternalPotential::None),
            "harmonic" => Ok(ExternalPotential::Harmonic),
            "step" => Ok(ExternalPotential::Step),
            _ => {
                let field = s
                    .strip_prefix("linear:")
                    .ok_or_else(|| Error::Config(format!("unknown external potential `{s}`")))?;
                let e = field
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad field strength `{field}`")))?;
                Ok(ExternalPotential::Linear(e))
            }
        }
    }
}

impl fmt::Display for ExternalPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExternalPotential::None => f.write_str("none"),
            ExternalPotential::Linear(e) => write!(f, "linear:{e}"),
            ExternalPotential::Harmonic => f.write_str("harmonic"),
            ExternalPotential::Step => f.write_str("step"),
            ExternalPotential::Sampled(s) => write!(f, "sampled[{}]", s.len()),
        }
    }
}
