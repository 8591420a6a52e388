//! Checks of the quantitative stability inequality, the intermediate estimate and
//! the small-amplitude behavior of the deficit, plus seeded sampling campaigns.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::ConstantTable;
use crate::error::{Error, Result};
use crate::output::fmt_float;
use crate::functionals::{difference_stderr, sample_nodes, DeficitIntegrands, DeficitReport, Verdict};
use crate::perturbation::{
    barycenter_normalize, barycenter_vector, c0_norm, c1_norm, random_band_limited, volume_defect, Perturbation,
    DEFAULT_GRID_DENSITY,
};
use crate::quadrature::{chunked_sum, RuleKind, RuleSpec, SphereRule};
use crate::space::{sphere_area, SpaceSpec};
use crate::spectral::lambda1;

/// Product-rule tolerance on margins, relative to the ball perimeter.
pub const PRODUCT_TOLERANCE: f64 = 1e-10;
/// Accepted volume defect relative to the ball volume.
pub const VOLUME_TOLERANCE: f64 = 1e-10;
/// Accepted barycenter defect relative to `n w_n psi(R)`.
pub const BARYCENTER_TOLERANCE: f64 = 1e-8;

fn weighted(rule: &SphereRule, values: &[f64]) -> f64 {
    let v: Vec<f64> = values.iter().zip(rule.weights()).map(|(x, w)| x * w).collect();
    chunked_sum(&v)
}

fn check_volume(space: SpaceSpec, p: &Perturbation, rule: &SphereRule) -> Result<()> {
    let defect = volume_defect(space, p, rule)?;
    let scale = space.kernels().ball_volume(p.radius());
    if defect.abs() > VOLUME_TOLERANCE * scale {
        return Err(Error::Unnormalized(format!(
            "volume defect {defect:e} exceeds {:e}",
            VOLUME_TOLERANCE * scale
        )));
    }
    Ok(())
}

fn check_barycenter(space: SpaceSpec, p: &Perturbation, rule: &SphereRule) -> Result<()> {
    let b = barycenter_vector(space, p, rule)?;
    let norm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = BARYCENTER_TOLERANCE * space.kernels().psi(p.radius()) * sphere_area(space.n());
    if norm > scale {
        return Err(Error::Unnormalized(format!("barycenter defect {norm:e} exceeds {scale:e}")));
    }
    Ok(())
}

/// Shared evaluation of one perturbation.
struct Evaluation {
    report: DeficitReport,
    integrands: DeficitIntegrands,
    controlled: Vec<f64>,
    ball_perimeter: f64,
}

fn evaluate(space: SpaceSpec, p: &Perturbation, rule: &SphereRule, table: &ConstantTable, barycenter: bool) -> Result<Evaluation> {
    check_volume(space, p, rule)?;
    if barycenter {
        check_barycenter(space, p, rule)?;
    }
    let c1 = c1_norm(p, DEFAULT_GRID_DENSITY)?;
    if c1 > table.epsilon {
        return Err(Error::Hypothesis(format!(
            "C1 norm {c1:e} exceeds the admissibility threshold {:e}",
            table.epsilon
        )));
    }
    let c0 = c0_norm(p, DEFAULT_GRID_DENSITY)?;
    let radius = p.radius();
    let samples = sample_nodes(space, p, rule)?;
    let integrands = DeficitIntegrands::new(space, radius, &samples);
    let controlled = integrands.controlled_excess(space, radius);
    let report = DeficitReport {
        space,
        radius,
        seed: p.seed(),
        deficit: weighted(rule, &integrands.excess),
        l2_sq: weighted(rule, &integrands.l2),
        grad_sq: weighted(rule, &integrands.grad),
        c1,
        c0,
        epsilon: Some(table.epsilon),
        rhs_thm1: None,
        margin: None,
        stderr: None,
        verdict: None,
    };
    Ok(Evaluation {
        report,
        integrands,
        controlled,
        ball_perimeter: space.kernels().ball_perimeter(radius),
    })
}

/// Coefficients `(a, b)` of the right-hand side `a ||rho||^2 + b ||grad rho||^2`.
pub fn theorem1_coefficients(radius: f64, table: &ConstantTable) -> (f64, f64) {
    let r2 = radius * radius;
    (r2 * table.lambda2_lower / 48.0, r2 / 32.0)
}

/// Coefficients of the intermediate lower bound, given the sup norms of `rho`.
pub fn intermediate_coefficients(space: SpaceSpec, radius: f64, table: &ConstantTable, c0: f64, c1: f64) -> Result<(f64, f64)> {
    let r2 = radius * radius;
    let l1 = lambda1(space, radius)?;
    Ok((-(table.k2 * c0 + r2 * l1) / 2.0, r2 * (1.0 - table.k3 * c1) / 2.0))
}

fn attach(eval: &Evaluation, rule: &SphereRule, a: f64, b: f64) -> (f64, f64, Option<f64>, Verdict) {
    let r = &eval.report;
    let rhs = a * r.l2_sq + b * r.grad_sq;
    let margin = r.deficit - rhs;
    let per_node: Vec<f64> = eval
        .integrands
        .l2
        .iter()
        .zip(&eval.integrands.grad)
        .map(|(l, g)| a * l + b * g)
        .collect();
    let stderr = difference_stderr(rule, &eval.controlled, &per_node);
    let verdict = Verdict::from_margin(margin, stderr, PRODUCT_TOLERANCE * eval.ball_perimeter);
    (rhs, margin, stderr, verdict)
}

/// Evaluates the deficit against `(R^2 lambda_2 / 48) ||rho||^2 + (R^2 / 32) ||grad rho||^2`.
///
/// `p` must be volume and barycenter normalized under `rule` and satisfy the `C^1` hypothesis
/// for the table's threshold.
pub fn check_theorem1(space: SpaceSpec, p: &Perturbation, rule: &SphereRule, table: &ConstantTable) -> Result<DeficitReport> {
    check_table(space, p, table)?;
    let eval = evaluate(space, p, rule, table, true)?;
    Ok(theorem1_report(&eval, rule, table))
}

fn theorem1_report(eval: &Evaluation, rule: &SphereRule, table: &ConstantTable) -> DeficitReport {
    let (a, b) = theorem1_coefficients(eval.report.radius, table);
    let (rhs, margin, stderr, verdict) = attach(eval, rule, a, b);
    DeficitReport {
        rhs_thm1: Some(rhs),
        margin: Some(margin),
        stderr,
        verdict: Some(verdict),
        ..eval.report.clone()
    }
}

fn check_table(space: SpaceSpec, p: &Perturbation, table: &ConstantTable) -> Result<()> {
    if table.space != space || table.radius != p.radius() {
        return Err(Error::Precondition(format!(
            "constant table for {} at R = {} does not match {space} at R = {}",
            table.space,
            table.radius,
            p.radius()
        )));
    }
    Ok(())
}

/// Measured deficit against the intermediate lower bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntermediateReport {
    pub deficit: f64,
    pub rhs: f64,
    pub margin: f64,
    pub stderr: Option<f64>,
    pub verdict: Verdict,
}

fn intermediate_report(eval: &Evaluation, rule: &SphereRule, table: &ConstantTable) -> Result<IntermediateReport> {
    let r = &eval.report;
    let (a, b) = intermediate_coefficients(r.space, r.radius, table, r.c0, r.c1)?;
    let (rhs, margin, stderr, verdict) = attach(eval, rule, a, b);
    Ok(IntermediateReport {
        deficit: r.deficit,
        rhs,
        margin,
        stderr,
        verdict,
    })
}

/// Evaluates the intermediate estimate; only the volume constraint is required.
pub fn check_intermediate(space: SpaceSpec, p: &Perturbation, rule: &SphereRule, table: &ConstantTable) -> Result<IntermediateReport> {
    check_table(space, p, table)?;
    let eval = evaluate(space, p, rule, table, false)?;
    intermediate_report(&eval, rule, table)
}

/// Both checks from one evaluation.
pub fn check_both(
    space: SpaceSpec,
    p: &Perturbation,
    rule: &SphereRule,
    table: &ConstantTable,
) -> Result<(DeficitReport, IntermediateReport)> {
    check_table(space, p, table)?;
    let eval = evaluate(space, p, rule, table, true)?;
    Ok((theorem1_report(&eval, rule, table), intermediate_report(&eval, rule, table)?))
}

/// `deficit(t) / t^2` along a fixed direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub t: Vec<f64>,
    pub deficit: Vec<f64>,
    pub ratio: Vec<f64>,
    /// Linear Richardson extrapolation of the last two ratios to `t = 0`.
    pub limit: f64,
    /// Theorem right-hand side per `t^2` at the smallest `t`.
    pub quadratic_form: f64,
    pub tolerance: f64,
    /// `deficit(t) <= deficit(t')` whenever `t < t'`.
    pub monotone: bool,
    pub passed: bool,
}

/// Relative change allowed between the last two ratios.
pub const PROBE_STABILITY: f64 = 0.05;

/// Measures `deficit(t p0) / t^2` after normalizing each `t p0`, and extrapolates to `t -> 0`.
pub fn second_variation_probe(
    space: SpaceSpec,
    direction: &Perturbation,
    t_list: &[f64],
    rule: &SphereRule,
) -> Result<ProbeReport> {
    if t_list.len() < 2 || t_list.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::Precondition("probe needs at least two positive amplitudes".into()));
    }
    let radius = direction.radius();
    let table = ConstantTable::compute(space, radius, radius)?;
    let (a, b) = theorem1_coefficients(radius, &table);
    let mut deficit = Vec::with_capacity(t_list.len());
    let mut ratio = Vec::with_capacity(t_list.len());
    let mut quad = Vec::with_capacity(t_list.len());
    for &t in t_list {
        let p = barycenter_normalize(space, &direction.scaled(t)?, rule)?;
        let samples = sample_nodes(space, &p, rule)?;
        let terms = DeficitIntegrands::new(space, radius, &samples);
        let d = weighted(rule, &terms.excess);
        deficit.push(d);
        ratio.push(d / (t * t));
        quad.push((a * weighted(rule, &terms.l2) + b * weighted(rule, &terms.grad)) / (t * t));
    }
    let k = t_list.len();
    let (t1, t2) = (t_list[k - 2], t_list[k - 1]);
    let (r1, r2) = (ratio[k - 2], ratio[k - 1]);
    let tolerance = 1e-6 * space.kernels().ball_perimeter(radius);
    if direction.is_zero() {
        return Ok(ProbeReport {
            t: t_list.to_vec(),
            deficit,
            ratio,
            limit: 0.0,
            quadratic_form: 0.0,
            tolerance,
            monotone: true,
            passed: true,
        });
    }
    if (r2 - r1).abs() > PROBE_STABILITY * r2.abs() {
        return Err(Error::ProbeConvergence(format!(
            "deficit / t^2 moved from {r1:e} to {r2:e} between t = {t1} and t = {t2}"
        )));
    }
    let limit = (t1 * r2 - t2 * r1) / (t1 - t2);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| t_list[i].total_cmp(&t_list[j]));
    let monotone = order.windows(2).all(|w| deficit[w[0]] <= deficit[w[1]]);
    let quadratic_form = quad[order[0]];
    Ok(ProbeReport {
        t: t_list.to_vec(),
        deficit,
        ratio,
        limit,
        quadratic_form,
        tolerance,
        monotone,
        passed: limit >= quadratic_form - tolerance,
    })
}

/// Seeded sampling campaign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub space: SpaceSpec,
    #[serde(rename = "R")]
    pub radius: f64,
    /// Radius bound for the constants; defaults to `R`.
    #[serde(rename = "R0", default, skip_serializing_if = "Option::is_none")]
    pub r0: Option<f64>,
    pub band_limit: usize,
    pub amplitude: f64,
    pub samples: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<RuleSpec>,
}

impl CampaignConfig {
    pub fn rule_spec(&self) -> RuleSpec {
        self.rule.clone().unwrap_or_else(|| RuleSpec::default_for(self.space.n()))
    }

    pub fn r0(&self) -> f64 {
        self.r0.unwrap_or(self.radius)
    }
}

/// One campaign sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub theorem1: DeficitReport,
    pub intermediate: IntermediateReport,
}

impl SampleRecord {
    pub const CSV_HEADER: [&'static str; 17] = [
        "space",
        "m",
        "R",
        "seed",
        "c1",
        "l2_sq",
        "grad_sq",
        "deficit",
        "rhs",
        "margin",
        "stderr",
        "pass",
        "verdict",
        "rhs_intermediate",
        "margin_intermediate",
        "stderr_intermediate",
        "pass_intermediate",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        let mut row = self.theorem1.csv_record();
        let i = &self.intermediate;
        row.push(self.theorem1.verdict.map_or("", Verdict::as_str).to_string());
        row.push(fmt_float(i.rhs));
        row.push(fmt_float(i.margin));
        row.push(i.stderr.map_or(String::new(), fmt_float));
        row.push(i.verdict.passed().to_string());
        row
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignAggregate {
    pub space: SpaceSpec,
    #[serde(rename = "R")]
    pub radius: f64,
    pub band_limit: usize,
    pub amplitude: f64,
    pub epsilon: f64,
    pub samples: usize,
    pub failures: usize,
    pub inconclusive: usize,
    pub intermediate_violations: usize,
    pub min_margin: Option<f64>,
    pub min_intermediate_margin: Option<f64>,
    pub max_stderr: Option<f64>,
}

impl CampaignAggregate {
    pub const CSV_HEADER: [&'static str; 13] = [
        "space",
        "m",
        "R",
        "band_limit",
        "amplitude",
        "epsilon",
        "samples",
        "failures",
        "inconclusive",
        "intermediate_violations",
        "min_margin",
        "min_intermediate_margin",
        "max_stderr",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map_or(String::new(), fmt_float);
        vec![
            self.space.label(),
            self.space.m().to_string(),
            fmt_float(self.radius),
            self.band_limit.to_string(),
            fmt_float(self.amplitude),
            fmt_float(self.epsilon),
            self.samples.to_string(),
            self.failures.to_string(),
            self.inconclusive.to_string(),
            self.intermediate_violations.to_string(),
            opt(self.min_margin),
            opt(self.min_intermediate_margin),
            opt(self.max_stderr),
        ]
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.intermediate_violations == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub aggregate: CampaignAggregate,
    pub records: Vec<SampleRecord>,
}

/// Runs `samples` seeded perturbations (seeds `seed, seed+1, ...`) through normalization
/// and both checks. The amplitude is capped at half the admissibility threshold.
pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignReport> {
    let space = config.space;
    let table = ConstantTable::compute(space, config.r0(), config.radius)?;
    let amplitude = config.amplitude.min(table.epsilon / 2.0);
    let rule = config.rule_spec().build(space.n())?;
    let records: Vec<SampleRecord> = (0..config.samples as u64)
        .into_par_iter()
        .map(|i| {
            let seed = config.seed.wrapping_add(i);
            let run = || -> Result<SampleRecord> {
                let p = random_band_limited(space, config.radius, config.band_limit, amplitude, seed, &rule)?;
                let (theorem1, intermediate) = check_both(space, &p, &rule, &table)?;
                Ok(SampleRecord { theorem1, intermediate })
            };
            run().map_err(|e| Error::Inadmissible(format!("sample with seed {seed}: {e}")))
        })
        .collect::<Result<_>>()?;
    let fold_min = |it: &mut dyn Iterator<Item = f64>| it.fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.min(x))));
    let aggregate = CampaignAggregate {
        space,
        radius: config.radius,
        band_limit: config.band_limit,
        amplitude,
        epsilon: table.epsilon,
        samples: records.len(),
        failures: records.iter().filter(|r| r.theorem1.verdict == Some(Verdict::Fail)).count(),
        inconclusive: records
            .iter()
            .filter(|r| r.theorem1.verdict == Some(Verdict::InconclusiveAtResolution))
            .count(),
        intermediate_violations: records.iter().filter(|r| !r.intermediate.verdict.passed()).count(),
        min_margin: fold_min(&mut records.iter().filter_map(|r| r.theorem1.margin)),
        min_intermediate_margin: fold_min(&mut records.iter().map(|r| r.intermediate.margin)),
        max_stderr: if rule.kind() == RuleKind::MonteCarlo {
            records
                .iter()
                .filter_map(|r| r.theorem1.stderr)
                .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))))
        } else {
            None
        },
    };
    Ok(CampaignReport { aggregate, records })
}
