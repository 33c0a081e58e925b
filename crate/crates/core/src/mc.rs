//! The standard Monte Carlo method: simulate every subrisk loss of every
//! event and add them up.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::portfolio::io::fmt_f64;
use crate::portfolio::{LossModel, LossTerm};
use crate::rng::{domain, substream};

/// Which procedure produced a matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Standard,
    DirectUpper,
    DirectLower,
    SirUpper,
    SirLower,
}

impl Method {
    fn code(self) -> u8 {
        match self {
            Method::Standard => 0,
            Method::DirectUpper => 1,
            Method::DirectLower => 2,
            Method::SirUpper => 3,
            Method::SirLower => 4,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => Method::Standard,
            1 => Method::DirectUpper,
            2 => Method::DirectLower,
            3 => Method::SirUpper,
            4 => Method::SirLower,
            _ => return None,
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Standard => "standard",
            Method::DirectUpper => "direct-F+",
            Method::DirectLower => "direct-F-",
            Method::SirUpper => "sir-F+",
            Method::SirLower => "sir-F-",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "standard" => Method::Standard,
            "direct-F+" => Method::DirectUpper,
            "direct-F-" => Method::DirectLower,
            "sir-F+" => Method::SirUpper,
            "sir-F-" => Method::SirLower,
            _ => return Err(Error::Config(format!("unknown method tag {s:?}"))),
        })
    }
}

/// `M x n_years` simulated yearly totals, row-major by replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateMatrix {
    pub method: Method,
    pub seed: u64,
    n_replicates: usize,
    n_years: usize,
    values: Vec<f64>,
}

/// Leading bytes of the binary matrix format.
///
/// Layout: magic, then little-endian `u64` replicates, `u64` years, `u64`
/// seed, one method byte, seven zero bytes, then the values as little-endian
/// `f64` in replicate-major order.
pub const MATRIX_MAGIC: &[u8; 8] = b"RLMATRX1";

impl ReplicateMatrix {
    pub fn new(method: Method, seed: u64, n_replicates: usize, n_years: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_replicates * n_years {
            return Err(Error::Invalid(format!(
                "{} values do not fill a {n_replicates} x {n_years} matrix",
                values.len()
            )));
        }
        Ok(Self {
            method,
            seed,
            n_replicates,
            n_years,
            values,
        })
    }

    pub fn n_replicates(&self) -> usize {
        self.n_replicates
    }

    pub fn n_years(&self) -> usize {
        self.n_years
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Total of replicate `m` in year index `y` (0-based).
    pub fn get(&self, m: usize, y: usize) -> f64 {
        self.values[m * self.n_years + y]
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.values[m * self.n_years..(m + 1) * self.n_years]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n_years.max(1)).take(self.n_replicates)
    }

    pub fn column(&self, y: usize) -> Vec<f64> {
        (0..self.n_replicates).map(|m| self.get(m, y)).collect()
    }

    /// CSV with header `replicate,year,total`; replicates and years 1-based.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(["replicate", "year", "total"])?;
        for m in 0..self.n_replicates {
            for y in 0..self.n_years {
                w.write_record([(m + 1).to_string(), (y + 1).to_string(), fmt_f64(self.get(m, y))])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, method: Method, seed: u64) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut cells = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let parse = |i: usize| -> Result<f64> {
                rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Row {
                    path: path.to_path_buf(),
                    line,
                    msg: "malformed matrix row".into(),
                })
            };
            cells.push((parse(0)? as usize, parse(1)? as usize, parse(2)?));
        }
        let m = cells.iter().map(|c| c.0).max().unwrap_or(0);
        let ny = cells.iter().map(|c| c.1).max().unwrap_or(0);
        let mut values = vec![f64::NAN; m * ny];
        for (r, y, v) in cells {
            values[(r - 1) * ny + (y - 1)] = v;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Invalid(format!("{}: matrix has missing cells", path.display())));
        }
        Self::new(method, seed, m, ny, values)
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MATRIX_MAGIC)?;
        w.write_all(&(self.n_replicates as u64).to_le_bytes())?;
        w.write_all(&(self.n_years as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&[self.method.code(), 0, 0, 0, 0, 0, 0, 0])?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MATRIX_MAGIC {
            return Err(Error::Invalid(format!("{}: not a replicate matrix", path.display())));
        }
        let mut word = [0u8; 8];
        let mut next = |r: &mut BufReader<File>| -> Result<u64> {
            r.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let m = next(&mut r)? as usize;
        let ny = next(&mut r)? as usize;
        let seed = next(&mut r)?;
        let mut tag = [0u8; 8];
        r.read_exact(&mut tag)?;
        let method = Method::from_code(tag[0])
            .ok_or_else(|| Error::Invalid(format!("{}: unknown method code {}", path.display(), tag[0])))?;
        let mut values = Vec::with_capacity(m * ny);
        let mut buf = [0u8; 8];
        for _ in 0..m * ny {
            r.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        Self::new(method, seed, m, ny, values)
    }
}

enum Damage {
    Point(f64),
    TwoGamma(Gamma<f64>, Gamma<f64>, f64),
}

impl Damage {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Damage::Point(mu) => *mu,
            Damage::TwoGamma(ga, gb, mu) => {
                let x = ga.sample(rng);
                let y = gb.sample(rng);
                let s = x + y;
                // both shapes tiny enough to underflow
                if s > 0.0 {
                    x / s
                } else {
                    *mu
                }
            }
        }
    }
}

struct TermSampler {
    p: f64,
    exposure: f64,
    n_sub: u32,
    damage: Damage,
}

impl TermSampler {
    fn new(t: &LossTerm) -> Self {
        let mu = t.mean_damage();
        let damage = if t.is_point_mass() {
            Damage::Point(mu)
        } else {
            Damage::TwoGamma(
                Gamma::new(t.alpha, 1.0).expect("alpha > 0"),
                Gamma::new(t.beta, 1.0).expect("beta > 0"),
                mu,
            )
        };
        Self {
            p: t.p,
            exposure: t.exposure,
            n_sub: t.n_sub,
            damage,
        }
    }
}

/// Per-year term samplers, prepared once and reused for every replicate.
pub struct StandardSimulator {
    years: Vec<Vec<TermSampler>>,
}

impl StandardSimulator {
    pub fn new(model: &LossModel) -> Self {
        let years = (1..=model.n_years())
            .into_par_iter()
            .map(|y| {
                model
                    .year_terms(y)
                    .iter()
                    .filter(|t| t.p > 0.0)
                    .map(TermSampler::new)
                    .collect()
            })
            .collect();
        Self { years }
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    /// One yearly total for year index `y` (0-based).
    pub fn simulate_year<R: Rng>(&self, y: usize, rng: &mut R) -> f64 {
        simulate_terms(&self.years[y], rng)
    }

    /// `m` replicates; cell `(m, y)` draws from stream `(seed, m, y)`.
    pub fn run(&self, m: usize, seed: u64) -> ReplicateMatrix {
        let ny = self.n_years();
        let values = (0..m * ny)
            .into_par_iter()
            .map(|idx| {
                let (rep, y) = (idx / ny, idx % ny);
                let mut rng = substream(seed, domain::STANDARD, rep as u64, y as u64);
                self.simulate_year(y, &mut rng)
            })
            .collect();
        ReplicateMatrix::new(Method::Standard, seed, m, ny, values).expect("sized by construction")
    }
}

fn simulate_terms<R: Rng>(samplers: &[TermSampler], rng: &mut R) -> f64 {
    let mut total = 0.0;
    for s in samplers {
        let mut damage = 0.0;
        for _ in 0..s.n_sub {
            if rng.random::<f64>() < s.p {
                damage += s.damage.sample(rng);
            }
        }
        total += s.exposure * damage;
    }
    total
}

/// Simulates one year's total from its terms.
pub fn simulate_year_standard<R: Rng>(terms: &[LossTerm], rng: &mut R) -> f64 {
    let samplers: Vec<TermSampler> = terms.iter().filter(|t| t.p > 0.0).map(TermSampler::new).collect();
    simulate_terms(&samplers, rng)
}

pub fn run_standard(model: &LossModel, m: usize, seed: u64) -> Result<ReplicateMatrix> {
    if m == 0 {
        return Err(Error::Config("need at least one replicate".into()));
    }
    Ok(StandardSimulator::new(model).run(m, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::portfolio::synthetic::{generate, SyntheticConfig};
    use crate::portfolio::year_summary;
    use crate::stats::{mean, variance};

    fn term(p: f64, alpha: f64, beta: f64, exposure: f64, n_sub: u32) -> LossTerm {
        LossTerm {
            year: 1,
            event: 1,
            risk: 0,
            p,
            alpha,
            beta,
            exposure,
            n_sub,
        }
    }

    #[test]
    fn zero_probability_gives_zero() {
        let mut rng = substream(1, 0, 0, 0);
        let terms = [term(0.0, 1.0, 1.0, 10.0, 5), term(0.0, 2.0, 1.0, 3.0, 1)];
        assert_eq!(simulate_year_standard(&terms, &mut rng), 0.0);
    }

    #[test]
    fn point_mass_damage() {
        let mut rng = substream(1, 0, 0, 0);
        let beta = 1e9;
        let alpha = beta * (0.3 / 0.7);
        let total = simulate_year_standard(&[term(1.0, alpha, beta, 100.0, 1)], &mut rng);
        assert!((total - 30.0).abs() < 1e-9, "{total}");
    }

    #[test]
    fn sample_mean_matches_expected_total() {
        let model = generate(&SyntheticConfig {
            n_risks: 100,
            n_years: 3,
            events_per_year: 3.0,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let sim = StandardSimulator::new(&model);
        let mat = sim.run(100_000, 42);
        for y in 0..model.n_years() as usize {
            let s = year_summary(y as u32 + 1, model.year_terms(y as u32 + 1));
            let col = mat.column(y);
            let se = (variance(&col) / col.len() as f64).sqrt();
            assert!(
                (mean(&col) - s.expected_total).abs() <= 4.0 * se.max(1e-12),
                "year {}",
                y + 1
            );
            let model_var = s.upper.vbar * s.n as f64;
            assert!((variance(&col) / model_var - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let model = generate(&SyntheticConfig {
            n_risks: 50,
            n_years: 4,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let a = run_standard(&model, 3, 9).unwrap();
        let b = run_standard(&model, 3, 9).unwrap();
        assert_eq!(a, b);
        let one = run_standard(&model, 1, 9).unwrap();
        assert_eq!(one.row(0), a.row(0));
    }

    #[test]
    fn larger_variance_year_has_larger_spread() {
        let model = generate(&SyntheticConfig {
            n_risks: 300,
            n_years: 12,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let sums = model.summaries();
        let var_of = |i: usize| sums[i].upper.vbar * sums[i].n as f64;
        let lo = (0..sums.len())
            .filter(|&i| var_of(i) > 0.0)
            .min_by(|&a, &b| var_of(a).total_cmp(&var_of(b)))
            .unwrap();
        let hi = (0..sums.len())
            .max_by(|&a, &b| var_of(a).total_cmp(&var_of(b)))
            .unwrap();
        let mat = run_standard(&model, 2000, 5).unwrap();
        assert!(variance(&mat.column(hi)) > variance(&mat.column(lo)));
    }

    #[test]
    fn exports_round_trip() {
        let values: Vec<f64> = (0..6).map(|i| i as f64 * 0.1 + 1e-17).collect();
        let m = ReplicateMatrix::new(Method::SirLower, 77, 2, 3, values).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("m.bin");
        m.write_binary(&bin).unwrap();
        assert_eq!(ReplicateMatrix::read_binary(&bin).unwrap(), m);
        let bytes = std::fs::read(&bin).unwrap();
        assert_eq!(&bytes[..8], MATRIX_MAGIC);
        assert_eq!(bytes.len(), 40 + 6 * 8);
        let csv = dir.path().join("m.csv");
        m.write_csv(&csv).unwrap();
        assert_eq!(ReplicateMatrix::read_csv(&csv, Method::SirLower, 77).unwrap(), m);
    }

    #[test]
    fn method_tags_round_trip() {
        for m in [
            Method::Standard,
            Method::DirectUpper,
            Method::DirectLower,
            Method::SirUpper,
            Method::SirLower,
        ] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
    }
}
