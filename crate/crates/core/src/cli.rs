//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 when an inequality check fails, 1 on usage,
//! configuration or numerical errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::constants::{audit_density, audit_gradient, ConstantTable};
use crate::error::{Error, Result};
use crate::output::{csv_string, fmt_float, write_atomic};
use crate::perturbation::{barycenter_normalize, random_band_limited, Perturbation};
use crate::quadrature::RuleSpec;
use crate::rescale::{check_comparison, check_profile_bound, check_rescaling_sweep, StarBody};
use crate::space::SpaceSpec;
use crate::spectral::{gap_ratio_closed_form, SpectralBounds};
use crate::stability::{check_both, run_campaign, second_variation_probe, CampaignAggregate, CampaignConfig, SampleRecord};

/// Environment variable that sizes the worker pool.
pub const THREADS_ENV: &str = "GEOSPHERE_THREADS";

#[derive(Parser, Debug)]
#[command(name = "geosphere", version, about = "Stability checks for geodesic spheres in rank-one symmetric spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
struct OutputArgs {
    /// Write the main CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a JSON run manifest here.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Built-in spaces and their dimensions.
    Spaces(OutputArgs),
    /// Volume and perimeter of geodesic balls.
    Profile(ProfileArgs),
    /// Constants table, or a randomized audit of the density and gradient bounds.
    Constants(ConstantsArgs),
    /// Eigenvalue bounds and the spectral gap ratio.
    Spectral(SpectralArgs),
    /// Check one perturbation (JSON file) against both deficit lower bounds.
    Verify(VerifyArgs),
    /// Run a seeded campaign described by a JSON config.
    Sample(SampleArgs),
    /// Second-variation probe along a perturbation direction.
    Probe(ProbeArgs),
    /// Dilation, comparison and profile bounds on random star-shaped bodies.
    RescaleCheck(RescaleArgs),
    /// Emit a random band-limited, normalized perturbation as JSON.
    Perturb(PerturbArgs),
}

#[derive(Args, Debug, Serialize)]
struct ProfileArgs {
    #[arg(long, value_parser = parse_space)]
    space: SpaceSpec,
    /// Geodesic radii.
    #[arg(long = "R", value_delimiter = ',', required = true)]
    radius: Vec<f64>,
    #[arg(long, value_parser = parse_rule)]
    rule: Option<RuleSpec>,
    #[command(flatten)]
    #[serde(skip)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
struct ConstantsArgs {
    #[arg(long, value_parser = parse_space)]
    space: SpaceSpec,
    #[arg(long = "R0")]
    r0: f64,
    /// Sphere radius for the threshold; defaults to R0.
    #[arg(long = "R")]
    radius: Option<f64>,
    /// Run the randomized audits with this many samples instead of printing the table.
    #[arg(long)]
    audit: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    #[serde(skip)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
struct SpectralArgs {
    #[arg(long, value_parser = parse_space)]
    space: SpaceSpec,
    #[arg(long = "R", value_delimiter = ',', required = true)]
    radius: Vec<f64>,
    #[command(flatten)]
    #[serde(skip)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
struct VerifyArgs {
    /// Perturbation JSON, as written by `perturb`.
    #[arg(long)]
    perturbation: PathBuf,
    #[arg(long = "R0")]
    r0: Option<f64>,
    #[arg(long, value_parser = parse_rule)]
    rule: Option<RuleSpec>,
    #[command(flatten)]
    #[serde(skip)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
struct SampleArgs {
    /// Campaign JSON config.
    #[arg(long)]
    config: PathBuf,
    /// Also write one CSV row per sample here.
    #[arg(long)]
    records: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
struct ProbeArgs {
    /// Direction as perturbation JSON.
    #[arg(long)]
    direction: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1e-2, 5e-3, 2.5e-3])]
    t: Vec<f64>,
    #[arg(long, value_parser = parse_rule)]
    rule: Option<RuleSpec>,
    #[command(flatten)]
    #[serde(skip)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
struct RescaleArgs {
    #[arg(long, value_parser = parse_space)]
    space: SpaceSpec,
    #[arg(long = "R")]
    radius: f64,
    #[arg(long, default_value_t = 10)]
    bodies: usize,
    #[arg(long, default_value_t = 2)]
    band_limit: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_rule)]
    rule: Option<RuleSpec>,
    #[command(flatten)]
    #[serde(skip)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
struct PerturbArgs {
    #[arg(long, value_parser = parse_space)]
    space: SpaceSpec,
    #[arg(long = "R")]
    radius: f64,
    #[arg(long, default_value_t = 4)]
    band_limit: usize,
    #[arg(long)]
    amplitude: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_rule)]
    rule: Option<RuleSpec>,
    #[command(flatten)]
    #[serde(skip)]
    output: OutputArgs,
}

fn parse_space(s: &str) -> std::result::Result<SpaceSpec, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// `product:<level>` or `mc:<count>:<seed>`.
pub fn parse_rule(s: &str) -> std::result::Result<RuleSpec, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |t: &str| t.parse::<u64>().map_err(|e| format!("`{t}`: {e}"));
    match parts.as_slice() {
        ["product", level] => Ok(RuleSpec::Product { level: num(level)? as usize }),
        ["mc" | "monte-carlo", count, seed] => Ok(RuleSpec::MonteCarlo {
            count: num(count)? as usize,
            seed: num(seed)?,
        }),
        _ => Err(format!("expected `product:<level>` or `mc:<count>:<seed>`, got `{s}`")),
    }
}

/// Provenance of one invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// The parsed configuration, as canonical JSON.
    pub config: serde_json::Value,
    /// SHA-256 of `config` serialized compactly.
    pub config_digest: String,
    pub seeds: Vec<u64>,
    pub tool_version: String,
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new<C: Serialize>(command: &str, config: &C, seeds: Vec<u64>) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        Ok(RunManifest {
            command: command.to_string(),
            config_digest: digest(&config)?,
            config,
            seeds,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: BTreeMap::new(),
        })
    }
}

/// Hex SHA-256 of the compact JSON form.
pub fn digest(value: &serde_json::Value) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Parses JSON, reporting schema errors with the offending field path.
pub fn parse_config<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

#[derive(Debug, PartialEq, Eq)]
enum Outcome {
    Clean,
    Violations,
}

impl Outcome {
    fn from_pass(pass: bool) -> Self {
        if pass {
            Outcome::Clean
        } else {
            Outcome::Violations
        }
    }
}

struct Emitter {
    manifest: RunManifest,
    out: Option<PathBuf>,
    manifest_path: Option<PathBuf>,
}

impl Emitter {
    fn new<C: Serialize>(command: &str, config: &C, seeds: Vec<u64>, output: &OutputArgs) -> Result<Self> {
        Ok(Emitter {
            manifest: RunManifest::new(command, config, seeds)?,
            out: output.out.clone(),
            manifest_path: output.manifest.clone(),
        })
    }

    fn main(&mut self, text: &str) -> Result<()> {
        match &self.out {
            Some(path) => {
                write_atomic(path, text.as_bytes())?;
                self.manifest.outputs.insert("main".into(), path.display().to_string());
            }
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout.write_all(text.as_bytes())?;
                stdout.flush()?;
            }
        }
        Ok(())
    }

    fn extra(&mut self, key: &str, path: &Path, text: &str) -> Result<()> {
        write_atomic(path, text.as_bytes())?;
        self.manifest.outputs.insert(key.into(), path.display().to_string());
        Ok(())
    }

    fn finish(self) -> Result<()> {
        if let Some(path) = &self.manifest_path {
            let mut text = serde_json::to_string_pretty(&self.manifest)?;
            text.push('\n');
            write_atomic(path, text.as_bytes())?;
        }
        Ok(())
    }
}

fn rule_or_default(rule: Option<RuleSpec>, space: SpaceSpec) -> RuleSpec {
    rule.unwrap_or_else(|| RuleSpec::default_for(space.n()))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn spaces(output: &OutputArgs) -> Result<Outcome> {
    let mut em = Emitter::new("spaces", &(), vec![], output)?;
    let rows = SpaceSpec::builtin().map(|s| {
        let (g, k) = s.symmetric_pair();
        vec![
            s.label(),
            s.algebra().symbol().to_string(),
            s.m().to_string(),
            s.d().to_string(),
            s.n().to_string(),
            s.horizontal_dim().to_string(),
            s.vertical_dim().to_string(),
            g,
            k,
        ]
    });
    em.main(&csv_string(&["space", "algebra", "m", "d", "n", "horizontal_dim", "vertical_dim", "G", "K"], rows)?)?;
    em.finish()?;
    Ok(Outcome::Clean)
}

fn profile(args: &ProfileArgs) -> Result<Outcome> {
    let mut em = Emitter::new("profile", args, vec![], &args.output)?;
    let rule = rule_or_default(args.rule, args.space).build(args.space.n())?;
    let k = args.space.kernels();
    let mut rows = Vec::new();
    for &r in &args.radius {
        let ball = Perturbation::zero(args.space, r)?;
        let vq = crate::functionals::volume_g(args.space, &ball, &rule)?;
        let pq = crate::functionals::perimeter_g(args.space, &ball, &rule)?;
        rows.push(vec![
            args.space.label(),
            fmt_float(r),
            fmt_float(k.ball_volume(r)),
            fmt_float(k.ball_perimeter(r)),
            fmt_float(vq.value),
            fmt_float(pq.value),
        ]);
    }
    em.main(&csv_string(&["space", "R", "volume", "perimeter", "volume_quadrature", "perimeter_quadrature"], rows)?)?;
    em.finish()?;
    Ok(Outcome::Clean)
}

fn constants(args: &ConstantsArgs) -> Result<Outcome> {
    let mut em = Emitter::new("constants", args, vec![args.seed], &args.output)?;
    let outcome = match args.audit {
        None => {
            let table = ConstantTable::compute(args.space, args.r0, args.radius.unwrap_or(args.r0))?;
            em.main(&csv_string(&ConstantTable::CSV_HEADER, [table.csv_record()])?)?;
            Outcome::Clean
        }
        Some(samples) => {
            let mut audits = audit_density(args.space, args.r0, samples, args.seed);
            audits.extend(audit_gradient(args.space, args.r0, samples, args.seed.wrapping_add(1))?);
            let rows = audits.iter().map(|a| {
                vec![
                    args.space.label(),
                    a.name.clone(),
                    a.samples.to_string(),
                    a.violations.to_string(),
                    fmt_float(a.worst_slack),
                    a.passed().to_string(),
                ]
            });
            em.main(&csv_string(&["space", "audit", "samples", "violations", "worst_slack", "pass"], rows)?)?;
            Outcome::from_pass(audits.iter().all(|a| a.passed()))
        }
    };
    em.finish()?;
    Ok(outcome)
}

fn spectral(args: &SpectralArgs) -> Result<Outcome> {
    let mut em = Emitter::new("spectral", args, vec![], &args.output)?;
    let mut rows = Vec::new();
    let mut pass = true;
    for &r in &args.radius {
        let b = SpectralBounds::new(args.space, r)?;
        pass &= b.ratio_bound < 0.5;
        rows.push(vec![
            args.space.label(),
            fmt_float(r),
            fmt_float(b.lambda1),
            fmt_float(b.lambda2_lower),
            fmt_float(b.ratio_bound),
            fmt_float(gap_ratio_closed_form(args.space, r)),
            fmt_float(b.scaled_lambda2()),
        ]);
    }
    em.main(&csv_string(
        &["space", "R", "lambda1", "lambda2_lower", "ratio", "ratio_closed_form", "R2_lambda2_lower"],
        rows,
    )?)?;
    em.finish()?;
    Ok(Outcome::from_pass(pass))
}

fn verify(args: &VerifyArgs) -> Result<Outcome> {
    let p = Perturbation::from_json(&read(&args.perturbation)?)?;
    let space = p.space();
    let config = serde_json::json!({ "perturbation": p, "R0": args.r0, "rule": args.rule });
    let mut em = Emitter::new("verify", &config, p.seed().into_iter().collect(), &args.output)?;
    let rule = rule_or_default(args.rule, space).build(space.n())?;
    let table = ConstantTable::compute(space, args.r0.unwrap_or(p.radius()), p.radius())?;
    let (theorem1, intermediate) = check_both(space, &p, &rule, &table)?;
    let record = SampleRecord { theorem1, intermediate };
    em.main(&csv_string(&SampleRecord::CSV_HEADER, [record.csv_record()])?)?;
    em.finish()?;
    Ok(Outcome::from_pass(record.theorem1.pass() == Some(true) && record.intermediate.verdict.passed()))
}

fn sample(args: &SampleArgs) -> Result<Outcome> {
    let config: CampaignConfig = parse_config(&read(&args.config)?)?;
    let seeds = (0..config.samples as u64).map(|i| config.seed.wrapping_add(i)).collect();
    let mut em = Emitter::new("sample", &config, seeds, &args.output)?;
    let report = run_campaign(&config)?;
    em.main(&csv_string(&CampaignAggregate::CSV_HEADER, [report.aggregate.csv_record()])?)?;
    if let Some(path) = &args.records {
        let text = csv_string(&SampleRecord::CSV_HEADER, report.records.iter().map(SampleRecord::csv_record))?;
        em.extra("records", path, &text)?;
    }
    em.finish()?;
    Ok(Outcome::from_pass(report.aggregate.passed()))
}

fn probe(args: &ProbeArgs) -> Result<Outcome> {
    let direction = Perturbation::from_json(&read(&args.direction)?)?;
    let space = direction.space();
    let config = serde_json::json!({ "direction": direction, "t": args.t, "rule": args.rule });
    let mut em = Emitter::new("probe", &config, vec![], &args.output)?;
    let rule = rule_or_default(args.rule, space).build(space.n())?;
    let report = match second_variation_probe(space, &direction, &args.t, &rule) {
        Ok(r) => r,
        Err(e @ Error::ProbeConvergence(_)) => {
            eprintln!("geosphere: {e}");
            em.finish()?;
            return Ok(Outcome::Violations);
        }
        Err(e) => return Err(e),
    };
    let rows = (0..report.t.len()).map(|i| {
        vec![
            space.label(),
            fmt_float(report.t[i]),
            fmt_float(report.deficit[i]),
            fmt_float(report.ratio[i]),
            fmt_float(report.limit),
            fmt_float(report.quadratic_form),
            fmt_float(report.tolerance),
            report.passed.to_string(),
        ]
    });
    em.main(&csv_string(
        &["space", "t", "deficit", "ratio", "limit", "quadratic_form", "tolerance", "pass"],
        rows,
    )?)?;
    em.finish()?;
    Ok(Outcome::from_pass(report.passed))
}

fn rescale_check(args: &RescaleArgs) -> Result<Outcome> {
    let seeds: Vec<u64> = (0..args.bodies as u64).map(|i| args.seed.wrapping_add(i)).collect();
    let mut em = Emitter::new("rescale-check", args, seeds.clone(), &args.output)?;
    let rule = rule_or_default(args.rule, args.space).build(args.space.n())?;
    let factors: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    let mut rows = Vec::new();
    let mut pass = true;
    let row = |kind: &str, seed: String, t: String, margins: [f64; 4], ok: bool| {
        let mut r = vec![args.space.label(), kind.to_string(), seed, t];
        r.extend(margins.iter().map(|&x| fmt_float(x)));
        r.push(ok.to_string());
        r
    };
    for &seed in &seeds {
        let body = StarBody::random(args.space, args.radius, args.band_limit, seed)?;
        for c in check_rescaling_sweep(&body, args.radius, &factors, &rule)? {
            pass &= c.passed;
            rows.push(row(
                "dilation",
                seed.to_string(),
                fmt_float(c.t),
                [c.volume_lower_margin, c.volume_upper_margin, c.perimeter_margin, f64::NAN],
                c.passed,
            ));
        }
        let c = check_comparison(&body, args.radius, &rule)?;
        pass &= c.passed;
        rows.push(row(
            "comparison",
            seed.to_string(),
            String::new(),
            [c.volume_lower_margin, c.volume_upper_margin, c.perimeter_lower_margin, c.perimeter_upper_margin],
            c.passed,
        ));
    }
    let grid: Vec<f64> = (1..=300).map(|i| i as f64 / 100.0).collect();
    let profile = check_profile_bound(args.space, &grid)?;
    pass &= profile.passed();
    rows.push(row(
        "profile",
        String::new(),
        String::new(),
        [profile.worst_slack, f64::NAN, f64::NAN, f64::NAN],
        profile.passed(),
    ));
    for r in &mut rows {
        for f in r.iter_mut() {
            if f == "NaN" {
                f.clear();
            }
        }
    }
    em.main(&csv_string(&["space", "check", "seed", "t", "margin_1", "margin_2", "margin_3", "margin_4", "pass"], rows)?)?;
    em.finish()?;
    Ok(Outcome::from_pass(pass))
}

fn perturb(args: &PerturbArgs) -> Result<Outcome> {
    let mut em = Emitter::new("perturb", args, vec![args.seed], &args.output)?;
    let rule = rule_or_default(args.rule, args.space).build(args.space.n())?;
    let p = random_band_limited(args.space, args.radius, args.band_limit, args.amplitude, args.seed, &rule)?;
    let p = barycenter_normalize(args.space, &p, &rule)?;
    let mut text = p.to_json()?;
    text.push('\n');
    em.main(&text)?;
    em.finish()?;
    Ok(Outcome::Clean)
}

/// Sizes the global rayon pool from [`THREADS_ENV`] when it is set.
fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let threads: usize = v.trim().parse().map_err(|_| Error::Config {
            path: THREADS_ENV.into(),
            message: format!("expected a positive integer, got `{v}`"),
        })?;
        // a pool may already exist when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    configure_threads()?;
    match &cli.command {
        Command::Spaces(o) => spaces(o),
        Command::Profile(a) => profile(a),
        Command::Constants(a) => constants(a),
        Command::Spectral(a) => spectral(a),
        Command::Verify(a) => verify(a),
        Command::Sample(a) => sample(a),
        Command::Probe(a) => probe(a),
        Command::RescaleCheck(a) => rescale_check(a),
        Command::Perturb(a) => perturb(a),
    }
}

/// Runs the CLI and returns the process exit code.
pub fn main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(Outcome::Clean) => 0,
        Ok(Outcome::Violations) => 2,
        Err(e) => {
            eprintln!("geosphere: {e}");
            1
        }
    }
}
