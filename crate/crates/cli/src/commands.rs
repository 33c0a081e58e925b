use std::fs::{self, File};
use std::io::{BufWriter, Read};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{ArgMatches, Command};
use conloss_core::bounds::log_bound;
use conloss_core::mc::{StandardSimulator, MATRIX_MAGIC};
use conloss_core::portfolio::bootstrap::bootstrap_scale;
use conloss_core::portfolio::io::{fmt_f64, load_model, write_model};
use conloss_core::portfolio::synthetic::{generate, SyntheticConfig};
use conloss_core::portfolio::toy::{generate_toy, toy_model, ToyScenario};
use conloss_core::portfolio::{select_years, LossModel};
use conloss_core::returns::{aggregate_levels, attach_baseline, LevelMatrix, ReturnLevelReport, DEFAULT_KS};
use conloss_core::rng::{domain, substream};
use conloss_core::sampler::Tail;
use conloss_core::sensitivity::{
    run_sensitivity, write_quantiles_csv, write_samples_csv, SensitivityConfig, SensitivityResult, Side,
};
use conloss_core::stats::{mean, variance, wilson_interval, Z90};
use conloss_core::{run_conservative, Error, Method, ReplicateMatrix, SamplingPath, Scenario};
use rayon::prelude::*;

use crate::config::{resolved_entries, write_manifest};
use crate::*;

/// Output directory plus the manifest entries echoed into it.
struct Output {
    dir: PathBuf,
    sub: &'static str,
    entries: Vec<(String, String)>,
}

impl Output {
    fn new(cmd: &Command, sub: &'static str, matches: &ArgMatches, dir: &Path) -> Result<Self> {
        let sm = matches
            .subcommand_matches(sub)
            .with_context(|| format!("no matches for {sub}"))?;
        let entries = resolved_entries(cmd, sub, sm)?;
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            sub,
            entries,
        })
    }

    /// Records a value chosen by the program, such as a default list that
    /// depends on the input.
    fn resolve(&mut self, key: &str, value: String) {
        if !self.entries.iter().any(|(k, _)| k == key) {
            self.entries.push((key.to_string(), value));
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn finish(self) -> Result<()> {
        write_manifest(&self.dir, self.sub, &self.entries)
    }
}

pub fn dispatch(cmd: &Command, command: &Cmd, matches: &ArgMatches) -> Result<()> {
    match command {
        Cmd::Summarize(a) => summarize(Output::new(cmd, "summarize", matches, &a.out)?, a),
        Cmd::BoundsCurve(a) => bounds_curve(Output::new(cmd, "bounds-curve", matches, &a.out)?, a),
        Cmd::Run(a) => run(Output::new(cmd, "run", matches, &a.out)?, a),
        Cmd::ReturnLevels(a) => return_levels(Output::new(cmd, "return-levels", matches, &a.out)?, a),
        Cmd::Sensitivity(a) => sensitivity(Output::new(cmd, "sensitivity", matches, &a.out)?, a),
        Cmd::Bench(a) => bench(Output::new(cmd, "bench", matches, &a.out)?, a),
        Cmd::ToyGen(a) => toy_gen(Output::new(cmd, "toy-gen", matches, &a.out)?, a),
        Cmd::SynthGen(a) => synth_gen(Output::new(cmd, "synth-gen", matches, &a.out)?, a),
        Cmd::Bootstrap(a) => bootstrap(Output::new(cmd, "bootstrap", matches, &a.out)?, a),
        Cmd::Replay(_) => bail!("nested replay"),
    }
}

fn load(input: &InputArgs) -> Result<LossModel> {
    Ok(load_model(&input.portfolio, &input.events, input.n_years)?)
}

fn list_string<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Explicit return periods, or the defaults that fit `n_years`.
fn resolve_ks(out: &mut Output, ks: &Option<List<u32>>, n_years: usize) -> Vec<u32> {
    let ks = match ks {
        Some(List(ks)) => ks.clone(),
        None => DEFAULT_KS.iter().copied().filter(|&k| k as usize <= n_years).collect(),
    };
    out.resolve("ks", list_string(&ks));
    ks
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn summarize(out: Output, a: &SummarizeArgs) -> Result<()> {
    let model = load(&a.input)?;
    let summaries = model.summaries();
    let mut flags: Vec<String> = vec![String::new(); summaries.len()];
    for (tag, year) in select_years(&summaries) {
        let f = &mut flags[year as usize - 1];
        f.push(tag);
    }
    let mut w = csv_writer(&out.path("summary.csv"))?;
    w.write_record([
        "year",
        "n_ev",
        "expected_total",
        "n_p_gt_0",
        "p_bar",
        "mu_bar",
        "n",
        "upper_vbar",
        "upper_k",
        "upper_k1",
        "upper_cstar",
        "lower_vbar",
        "lower_k",
        "lower_k1",
        "lower_cstar",
        "selection",
    ])?;
    for (s, flag) in summaries.iter().zip(&flags) {
        let d = &s.descriptive;
        w.write_record([
            s.year.to_string(),
            d.n_ev.to_string(),
            fmt_f64(s.expected_total),
            d.n_p_gt_0.to_string(),
            fmt_f64(d.p_bar),
            fmt_f64(d.mu_bar),
            s.n.to_string(),
            fmt_f64(s.upper.vbar),
            fmt_f64(s.upper.k),
            fmt_f64(s.upper.k1),
            fmt_f64(s.upper.cstar),
            fmt_f64(s.lower.vbar),
            fmt_f64(s.lower.k),
            fmt_f64(s.lower.k1),
            fmt_f64(s.lower.cstar),
            flag.clone(),
        ])?;
    }
    w.flush()?;
    out.finish()
}

fn bounds_curve(mut out: Output, a: &BoundsCurveArgs) -> Result<()> {
    let model = load(&a.input)?;
    if a.year == 0 || a.year > model.n_years() {
        bail!(Error::Config(format!(
            "year {} is outside 1..={}",
            a.year,
            model.n_years()
        )));
    }
    if a.t_points < 2 {
        bail!(Error::Config("need at least two grid points".into()));
    }
    let summary = conloss_core::portfolio::year_summary(a.year, model.year_terms(a.year));
    if summary.is_degenerate() {
        bail!(Error::Invalid(format!("year {} has no random loss", a.year)));
    }
    let stats = match a.tail {
        Tail::Upper => &summary.upper,
        Tail::Lower => &summary.lower,
    };
    let n = stats.n as f64;
    let t_max = a
        .t_max
        .unwrap_or_else(|| (8.0 * (stats.vbar / n).sqrt()).min(stats.cstar));
    if !(t_max > 0.0 && t_max.is_finite()) {
        bail!(Error::Config(format!("t-max must be positive, got {t_max}")));
    }
    out.resolve("t-max", fmt_f64(t_max));
    let grid: Vec<f64> = (0..a.t_points)
        .map(|i| t_max * i as f64 / (a.t_points - 1) as f64)
        .collect();

    let band: Option<Vec<(f64, f64)>> = if a.mc_replicates > 0 {
        let Some(seed) = a.seed else {
            bail!(Error::Config("--seed is required with --mc-replicates".into()));
        };
        let sim = StandardSimulator::new(&model);
        let y = a.year as usize - 1;
        let mut excess: Vec<f64> = (0..a.mc_replicates)
            .into_par_iter()
            .map(|r| {
                let mut rng = substream(seed, domain::STANDARD, r as u64, y as u64);
                let s = sim.simulate_year(y, &mut rng) - summary.expected_total;
                match a.tail {
                    Tail::Upper => s,
                    Tail::Lower => -s,
                }
            })
            .collect();
        excess.sort_by(f64::total_cmp);
        let r = a.mc_replicates as u64;
        Some(
            grid.iter()
                .map(|&t| {
                    let below = excess.partition_point(|&x| x < n * t);
                    let (lo, hi) = wilson_interval(r - below as u64, r, Z90);
                    (lo.ln(), hi.ln())
                })
                .collect(),
        )
    } else {
        None
    };

    let mut w = csv_writer(&out.path("curve.csv"))?;
    w.write_record(["t", "family", "log_prob_bound", "mc_lo", "mc_hi"])?;
    for (i, &t) in grid.iter().enumerate() {
        for &family in &a.families.0 {
            let b = log_bound(family, t, stats)?;
            let (lo, hi) = band
                .as_ref()
                .map(|b| (fmt_f64(b[i].0), fmt_f64(b[i].1)))
                .unwrap_or_default();
            w.write_record([fmt_f64(t), family.to_string(), fmt_f64(n * b), lo, hi])?;
        }
    }
    w.flush()?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(out.path("year.json"))?), &summary)?;
    out.finish()
}

fn write_matrix(m: &ReplicateMatrix, out: &Output, stem: &str, format: MatrixFormat) -> Result<()> {
    match format {
        MatrixFormat::Csv => m.write_csv(&out.path(&format!("{stem}.csv")))?,
        MatrixFormat::Binary => m.write_binary(&out.path(&format!("{stem}.bin")))?,
    }
    Ok(())
}

fn read_matrix(path: &Path) -> Result<ReplicateMatrix> {
    let mut head = [0u8; 8];
    let is_binary = File::open(path)
        .and_then(|mut f| f.read(&mut head))
        .with_context(|| format!("reading {}", path.display()))?
        == head.len()
        && &head == MATRIX_MAGIC;
    let m = if is_binary {
        ReplicateMatrix::read_binary(path)?
    } else {
        ReplicateMatrix::read_csv(path, Method::Standard, 0)?
    };
    Ok(m)
}

fn write_report(report: &ReturnLevelReport, out: &Output) -> Result<()> {
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    report.write_csv(&out.path("return_levels.csv"))?;
    report.write_json(&out.path("return_levels.json"))?;
    Ok(())
}

fn run(mut out: Output, a: &RunArgs) -> Result<()> {
    let model = load(&a.input)?;
    let ks = resolve_ks(&mut out, &a.ks, model.n_years() as usize);
    match a.method {
        RunMethod::Standard => {
            let m = conloss_core::mc::run_standard(&model, a.m, a.seed)?;
            write_matrix(&m, &out, "standard", a.matrix_format)?;
            let lm = LevelMatrix::from_matrix(&m, &ks)?;
            write_report(&aggregate_levels(&lm, &lm), &out)?;
        }
        RunMethod::Direct | RunMethod::Sir => {
            let path = if a.method == RunMethod::Sir {
                SamplingPath::Sir
            } else {
                SamplingPath::Direct
            };
            let run = run_conservative(&model.summaries(), a.m, a.family, path, a.seed)?;
            write_matrix(&run.lower, &out, "lower", a.matrix_format)?;
            write_matrix(&run.upper, &out, "upper", a.matrix_format)?;
            if path == SamplingPath::Sir {
                let mut w = csv_writer(&out.path("diagnostics.csv"))?;
                w.write_record(["year", "m", "ess_upper", "ess_lower", "low_ess"])?;
                for d in &run.diagnostics {
                    if d.low_ess() {
                        eprintln!(
                            "warning: year {}: effective sample size {:.1}/{:.1} of {}",
                            d.year, d.ess_upper, d.ess_lower, d.m
                        );
                    }
                    w.write_record([
                        d.year.to_string(),
                        d.m.to_string(),
                        fmt_f64(d.ess_upper),
                        fmt_f64(d.ess_lower),
                        d.low_ess().to_string(),
                    ])?;
                }
                w.flush()?;
            }
            let lo = LevelMatrix::from_matrix(&run.lower, &ks)?;
            let hi = LevelMatrix::from_matrix(&run.upper, &ks)?;
            write_report(&aggregate_levels(&lo, &hi), &out)?;
        }
    }
    out.finish()
}

fn return_levels(mut out: Output, a: &ReturnLevelsArgs) -> Result<()> {
    let lower = read_matrix(&a.lower)?;
    let upper = read_matrix(&a.upper)?;
    if lower.n_replicates() != upper.n_replicates() || lower.n_years() != upper.n_years() {
        bail!(Error::Invalid("lower and upper matrices differ in shape".into()));
    }
    let ks = resolve_ks(&mut out, &a.ks, lower.n_years());
    let lo = LevelMatrix::from_matrix(&lower, &ks)?;
    let hi = LevelMatrix::from_matrix(&upper, &ks)?;
    let mut report = aggregate_levels(&lo, &hi);
    if let Some(path) = &a.baseline {
        let Some(seed) = a.seed else {
            bail!(Error::Config("--seed is required with --baseline".into()));
        };
        let base = read_matrix(path)?;
        if base.n_years() != lower.n_years() {
            bail!(Error::Invalid("baseline covers a different number of years".into()));
        }
        let bl = LevelMatrix::from_matrix(&base, &ks)?;
        attach_baseline(&mut report, &lo, &hi, &bl, a.bootstrap, seed)?;
    }
    write_report(&report, &out)?;
    out.finish()
}

fn sensitivity(mut out: Output, a: &SensitivityArgs) -> Result<()> {
    let model = load(&a.input)?;
    let ks = resolve_ks(&mut out, &a.ks, model.n_years() as usize);
    let Some(&k_max) = ks.iter().max() else {
        bail!(Error::Config("no return periods".into()));
    };
    let samples_k = a.samples_k.unwrap_or(k_max);
    out.resolve("samples-k", samples_k.to_string());
    let mut results: Vec<SensitivityResult> = Vec::new();
    for &scenario in &a.scenarios.0 {
        let delta = match (scenario, a.delta) {
            (Scenario::P0, _) => 0.0,
            (_, Some(d)) => d,
            (s, None) => s.default_delta(),
        };
        let cfg = SensitivityConfig {
            scenario,
            delta,
            replicates: a.replicates,
            m: a.m,
            ks: ks.clone(),
            family: a.family,
            path: a.path,
            seed: a.seed,
        };
        results.push(run_sensitivity(&model, &cfg)?);
    }
    write_quantiles_csv(&results, &out.path("sensitivity_quantiles.csv"))?;
    write_samples_csv(&results, samples_k, &out.path("sensitivity_samples.csv"))?;

    let mut w = csv_writer(&out.path("variance_ratios.csv"))?;
    w.write_record(["scenario", "k", "side", "variance_ratio"])?;
    for res in results.iter().filter(|r| r.replicates.len() >= 2) {
        for &k in &ks {
            for side in [Side::Lower, Side::Upper] {
                w.write_record([
                    res.scenario.to_string(),
                    k.to_string(),
                    side.to_string(),
                    fmt_f64(res.variance_ratio(k, side)?),
                ])?;
            }
        }
    }
    w.flush()?;

    if let Some(p0) = results.iter().find(|r| r.scenario == Scenario::P0) {
        let mut w = csv_writer(&out.path("median_ratios.csv"))?;
        w.write_record(["scenario", "k", "side", "median", "ratio_to_p0"])?;
        for res in &results {
            for &k in &ks {
                for side in [Side::Lower, Side::Upper] {
                    let med = res.pooled_quantile(k, side, 0.5)?;
                    let base = p0.pooled_quantile(k, side, 0.5)?;
                    w.write_record([
                        res.scenario.to_string(),
                        k.to_string(),
                        side.to_string(),
                        fmt_f64(med),
                        fmt_f64(med / base),
                    ])?;
                }
            }
        }
        w.flush()?;
    }
    out.finish()
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let sd = if xs.len() >= 2 { variance(xs).sqrt() } else { 0.0 };
    (mean(xs), sd)
}

fn bench(out: Output, a: &BenchArgs) -> Result<()> {
    if a.repeats == 0 {
        bail!(Error::Config("need at least one repeat".into()));
    }
    let model = load(&a.input)?;
    let mut w = csv_writer(&out.path("bench.csv"))?;
    w.write_record([
        "method",
        "m",
        "repeats",
        "setup_mean_s",
        "setup_sd_s",
        "sim_mean_s",
        "sim_sd_s",
    ])?;
    for &method in &a.methods.0 {
        for &m in &a.m.0 {
            let mut setup = Vec::with_capacity(a.repeats);
            let mut sim = Vec::with_capacity(a.repeats);
            for r in 0..a.repeats {
                let seed = a.seed.wrapping_add(r as u64);
                let t0 = Instant::now();
                match method {
                    RunMethod::Standard => {
                        let s = StandardSimulator::new(&model);
                        let t1 = Instant::now();
                        std::hint::black_box(s.run(m, seed));
                        setup.push((t1 - t0).as_secs_f64());
                        sim.push(t1.elapsed().as_secs_f64());
                    }
                    RunMethod::Direct | RunMethod::Sir => {
                        let path = if method == RunMethod::Sir {
                            SamplingPath::Sir
                        } else {
                            SamplingPath::Direct
                        };
                        let summaries = model.summaries();
                        let t1 = Instant::now();
                        std::hint::black_box(run_conservative(&summaries, m, a.family, path, seed)?);
                        setup.push((t1 - t0).as_secs_f64());
                        sim.push(t1.elapsed().as_secs_f64());
                    }
                }
            }
            let (sm, ss) = mean_sd(&setup);
            let (rm, rs) = mean_sd(&sim);
            let name = match method {
                RunMethod::Standard => "standard",
                RunMethod::Direct => "direct",
                RunMethod::Sir => "sir",
            };
            eprintln!("{name} M={m}: setup {sm:.4}s ({ss:.4}), simulation {rm:.4}s ({rs:.4})");
            w.write_record([
                name.to_string(),
                m.to_string(),
                a.repeats.to_string(),
                fmt_f64(sm),
                fmt_f64(ss),
                fmt_f64(rm),
                fmt_f64(rs),
            ])?;
        }
    }
    w.flush()?;
    out.finish()
}

fn toy_gen(out: Output, a: &ToyGenArgs) -> Result<()> {
    let terms = generate_toy(ToyScenario {
        tag: a.scenario,
        n: a.n,
        seed: a.seed,
    });
    write_model(&out.dir, &toy_model(&terms)?)?;
    out.finish()
}

fn synth_gen(out: Output, a: &SynthGenArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        n_risks: a.n_risks,
        n_years: a.n_years,
        events_per_year: a.events_per_year,
        seed: a.seed,
        ..SyntheticConfig::default()
    };
    write_model(&out.dir, &generate(&cfg)?)?;
    out.finish()
}

fn bootstrap(out: Output, a: &BootstrapArgs) -> Result<()> {
    let model = load(&a.input)?;
    write_model(&out.dir, &bootstrap_scale(&model, a.factor, a.seed)?)?;
    out.finish()
}
