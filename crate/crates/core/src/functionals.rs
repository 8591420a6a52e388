//! Perimeter, volume, barycenter and Sobolev norms of radial graphs over a geodesic sphere.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::output::fmt_float;
use crate::hopf::split_norms;
use crate::perturbation::{barycenter_vector, Perturbation};
use crate::quadrature::{chunked_sum, Estimate, RuleKind, SphereRule};
use crate::space::{sphere_area, SpaceSpec};

/// Perturbation data at one quadrature node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeSample {
    /// `rho(phi)`.
    pub rho: f64,
    /// `|grad^h rho|^2`, fiber part of the round gradient.
    pub h2: f64,
    /// `|grad^v rho|^2`.
    pub v2: f64,
}

/// Evaluates `rho` and the split of its gradient at every node of `rule`.
pub fn sample_nodes(space: SpaceSpec, p: &Perturbation, rule: &SphereRule) -> Result<Vec<NodeSample>> {
    if p.space() != space || rule.dim() != space.n() {
        return Err(Error::Precondition(format!(
            "perturbation on {} and rule of dimension {} do not match space {space}",
            p.space(),
            rule.dim()
        )));
    }
    let n = space.n();
    let samples: Vec<NodeSample> = (0..rule.len())
        .into_par_iter()
        .map(|i| {
            let phi = rule.node(i);
            let mut g = [0.0; 16];
            let g = &mut g[..n];
            let rho = p.value_and_gradient_into(phi, g);
            let (h2, v2) = split_norms(space, phi, g);
            NodeSample { rho, h2, v2 }
        })
        .collect();
    if let Some(node) = samples.iter().position(|s| !(s.rho > -1.0)) {
        return Err(Error::Inadmissible(format!(
            "rho = {} <= -1 at quadrature node {node}",
            samples[node].rho
        )));
    }
    Ok(samples)
}

/// `R^2 (|grad^h|^2 / (sinh^2 r cosh^2 r) + |grad^v|^2 / sinh^2 r)` at `r`.
fn metric_gradient_sq(radius: f64, r: f64, s: &NodeSample) -> f64 {
    let sh2 = r.sinh().powi(2);
    let ch2 = r.cosh().powi(2);
    radius * radius * (s.h2 / (sh2 * ch2) + s.v2 / sh2)
}

fn pair_stderr(rule: &SphereRule, values: &[f64]) -> Option<f64> {
    if rule.kind() != RuleKind::MonteCarlo {
        return None;
    }
    let pairs: Vec<f64> = values.chunks_exact(2).map(|p| 0.5 * (p[0] + p[1])).collect();
    let m = pairs.len() as f64;
    let mean = chunked_sum(&pairs) / m;
    let dev: Vec<f64> = pairs.iter().map(|p| (p - mean).powi(2)).collect();
    Some(rule.total_measure() * (chunked_sum(&dev) / (m - 1.0) / m).sqrt())
}

fn weighted_sum(rule: &SphereRule, values: &[f64]) -> Result<f64> {
    if let Some(node) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Inadmissible(format!("non-finite integrand at quadrature node {node}")));
    }
    let weighted: Vec<f64> = values.iter().zip(rule.weights()).map(|(v, w)| v * w).collect();
    Ok(chunked_sum(&weighted))
}

/// Riemannian perimeter of the radial graph `R (1 + rho)`.
pub fn perimeter_g(space: SpaceSpec, p: &Perturbation, rule: &SphereRule) -> Result<Estimate> {
    perimeter_from_samples(space, p.radius(), &sample_nodes(space, p, rule)?, rule)
}

/// [`perimeter_g`] from precomputed node samples; `radius` may differ from the one sampled.
pub fn perimeter_from_samples(space: SpaceSpec, radius: f64, samples: &[NodeSample], rule: &SphereRule) -> Result<Estimate> {
    let k = space.kernels();
    let values: Vec<f64> = samples
        .par_iter()
        .map(|s| {
            let r = radius * (1.0 + s.rho);
            k.phi_prime(r) * (1.0 + metric_gradient_sq(radius, r, s)).sqrt()
        })
        .collect();
    let value = weighted_sum(rule, &values)?;
    Ok(Estimate {
        value,
        stderr: pair_stderr(rule, &values),
    })
}

/// Riemannian volume enclosed by the radial graph `R (1 + rho)`.
pub fn volume_g(space: SpaceSpec, p: &Perturbation, rule: &SphereRule) -> Result<Estimate> {
    volume_from_samples(space, p.radius(), &sample_nodes(space, p, rule)?, rule)
}

/// [`volume_g`] from precomputed node samples.
pub fn volume_from_samples(space: SpaceSpec, radius: f64, samples: &[NodeSample], rule: &SphereRule) -> Result<Estimate> {
    let k = space.kernels();
    let values: Vec<f64> = samples.par_iter().map(|s| k.phi(radius * (1.0 + s.rho))).collect();
    let value = weighted_sum(rule, &values)?;
    Ok(Estimate {
        value,
        stderr: pair_stderr(rule, &values),
    })
}

/// `int phi psi(R(1+rho)) dphi`, computed from increments `psi(R(1+rho)) - psi(R)`.
pub fn barycenter_defect(space: SpaceSpec, p: &Perturbation, rule: &SphereRule) -> Result<Vec<f64>> {
    barycenter_vector(space, p, rule)
}

/// Squared `L^2` norms of `rho` and its metric gradient on the geodesic sphere of radius `R`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SobolevNorms {
    pub l2_sq: f64,
    pub grad_sq: f64,
}

fn sobolev_integrands(space: SpaceSpec, radius: f64, samples: &[NodeSample]) -> (Vec<f64>, Vec<f64>) {
    let pp = space.kernels().phi_prime(radius);
    let sh2 = radius.sinh().powi(2);
    let ch2 = radius.cosh().powi(2);
    samples
        .iter()
        .map(|s| (s.rho * s.rho * pp, (s.h2 + ch2 * s.v2) / (sh2 * ch2) * pp))
        .unzip()
}

pub fn sobolev_norms(space: SpaceSpec, p: &Perturbation, rule: &SphereRule) -> Result<SobolevNorms> {
    let samples = sample_nodes(space, p, rule)?;
    let (l2, grad) = sobolev_integrands(space, p.radius(), &samples);
    Ok(SobolevNorms {
        l2_sq: weighted_sum(rule, &l2)?,
        grad_sq: weighted_sum(rule, &grad)?,
    })
}

/// Outcome of an inequality check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    /// Margin negative but within three standard errors.
    InconclusiveAtResolution,
    Fail,
}

impl Verdict {
    /// Product rules: tolerance in absolute units. Monte Carlo: three standard errors.
    pub fn from_margin(margin: f64, stderr: Option<f64>, tolerance: f64) -> Verdict {
        match stderr {
            Some(se) => {
                if margin >= 0.0 {
                    Verdict::Pass
                } else if margin >= -3.0 * se {
                    Verdict::InconclusiveAtResolution
                } else {
                    Verdict::Fail
                }
            }
            None => {
                if margin >= -tolerance {
                    Verdict::Pass
                } else {
                    Verdict::Fail
                }
            }
        }
    }

    pub fn passed(self) -> bool {
        self != Verdict::Fail
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::InconclusiveAtResolution => "inconclusive-at-resolution",
            Verdict::Fail => "fail",
        }
    }
}

/// Per-perturbation record of the deficit and the norms entering the stability inequality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeficitReport {
    pub space: SpaceSpec,
    #[serde(rename = "R")]
    pub radius: f64,
    pub seed: Option<u64>,
    pub deficit: f64,
    pub l2_sq: f64,
    pub grad_sq: f64,
    pub c1: f64,
    pub c0: f64,
    pub epsilon: Option<f64>,
    pub rhs_thm1: Option<f64>,
    pub margin: Option<f64>,
    /// Standard error of the margin (of the deficit before a right-hand side is attached).
    pub stderr: Option<f64>,
    pub verdict: Option<Verdict>,
}

impl DeficitReport {
    pub fn pass(&self) -> Option<bool> {
        self.verdict.map(Verdict::passed)
    }

    pub const CSV_HEADER: [&'static str; 12] = [
        "space", "m", "R", "seed", "c1", "l2_sq", "grad_sq", "deficit", "rhs", "margin", "stderr", "pass",
    ];

    /// Fields in [`Self::CSV_HEADER`] order; floats use the shortest round-trip form.
    pub fn csv_record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map_or(String::new(), fmt_float);
        vec![
            self.space.label(),
            self.space.m().to_string(),
            fmt_float(self.radius),
            self.seed.map_or(String::new(), |s| s.to_string()),
            fmt_float(self.c1),
            fmt_float(self.l2_sq),
            fmt_float(self.grad_sq),
            fmt_float(self.deficit),
            opt(self.rhs_thm1),
            opt(self.margin),
            opt(self.stderr),
            self.pass().map_or(String::new(), |p| p.to_string()),
        ]
    }
}

/// Per-node integrands shared by the deficit and the inequality checks.
#[derive(Clone, Debug)]
pub struct DeficitIntegrands {
    /// `phi'(rbar) sqrt(1 + X) - phi'(R)`, evaluated without cancellation.
    pub excess: Vec<f64>,
    /// `phi(rbar) - phi(R)`, whose integral vanishes under the volume constraint.
    pub volume_increment: Vec<f64>,
    pub l2: Vec<f64>,
    pub grad: Vec<f64>,
}

impl DeficitIntegrands {
    pub fn new(space: SpaceSpec, radius: f64, samples: &[NodeSample]) -> Self {
        let k = space.kernels();
        let (excess, volume_increment): (Vec<f64>, Vec<f64>) = samples
            .par_iter()
            .map(|s| {
                let h = radius * s.rho;
                let r = radius + h;
                let x = metric_gradient_sq(radius, r, s);
                let e = k.phi_prime_increment(radius, h) + k.phi_prime(r) * x / (1.0 + (1.0 + x).sqrt());
                (e, k.phi_increment(radius, h))
            })
            .unzip();
        let (l2, grad) = sobolev_integrands(space, radius, samples);
        DeficitIntegrands {
            excess,
            volume_increment,
            l2,
            grad,
        }
    }

    /// Excess with the first-order volume term removed; same integral under the
    /// volume constraint, much smaller variance.
    pub fn controlled_excess(&self, space: SpaceSpec, radius: f64) -> Vec<f64> {
        let k = space.kernels();
        let kappa = k.phi_second(radius) / k.phi_prime(radius);
        self.excess
            .iter()
            .zip(&self.volume_increment)
            .map(|(e, v)| e - kappa * v)
            .collect()
    }
}

/// Isoperimetric deficit `Per_g(E) - Per_g(B(R))` with norms and sup sizes.
///
/// The deficit is integrated node by node from the stable excess, so it stays
/// accurate when it is many orders of magnitude below the perimeter.
pub fn deficit(space: SpaceSpec, p: &Perturbation, rule: &SphereRule) -> Result<DeficitReport> {
    let samples = sample_nodes(space, p, rule)?;
    let radius = p.radius();
    let terms = DeficitIntegrands::new(space, radius, &samples);
    let value = weighted_sum(rule, &terms.excess)?;
    let stderr = pair_stderr(rule, &terms.controlled_excess(space, radius));
    let density = crate::perturbation::DEFAULT_GRID_DENSITY;
    Ok(DeficitReport {
        space,
        radius,
        seed: p.seed(),
        deficit: value,
        l2_sq: weighted_sum(rule, &terms.l2)?,
        grad_sq: weighted_sum(rule, &terms.grad)?,
        c1: crate::perturbation::c1_norm(p, density)?,
        c0: crate::perturbation::c0_norm(p, density)?,
        epsilon: None,
        rhs_thm1: None,
        margin: None,
        stderr,
        verdict: None,
    })
}

/// Standard error of `sum w (a_i - b_i)` for a Monte Carlo rule.
pub fn difference_stderr(rule: &SphereRule, a: &[f64], b: &[f64]) -> Option<f64> {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    pair_stderr(rule, &diff)
}

/// Perimeter of the geodesic ball, `n w_n phi'(R)`.
pub fn ball_perimeter(space: SpaceSpec, radius: f64) -> f64 {
    sphere_area(space.n()) * space.kernels().phi_prime(radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hopf::quaternion_multiply;
    use crate::perturbation::{barycenter_normalize, volume_normalize, Term};
    use crate::quadrature::{monte_carlo_rule, product_rule};
    use crate::space::{ball_volume, Algebra};

    fn term(degree: usize, index: usize, coeff: f64) -> Term {
        Term { degree, index, coeff }
    }

    #[test]
    fn ball_values_for_zero_perturbation() {
        for s in SpaceSpec::builtin().into_iter().filter(|s| s.n() <= 8) {
            let rule = product_rule(s.n(), 4).unwrap();
            let p = Perturbation::zero(s, 0.6).unwrap();
            let per = perimeter_g(s, &p, &rule).unwrap().value;
            assert!((per / ball_perimeter(s, 0.6) - 1.0).abs() < 1e-13);
            let vol = volume_g(s, &p, &rule).unwrap().value;
            assert!((vol / ball_volume(s, 0.6) - 1.0).abs() < 1e-13);
            let d = deficit(s, &p, &rule).unwrap();
            assert_eq!(d.deficit, 0.0);
            assert_eq!((d.l2_sq, d.grad_sq), (0.0, 0.0));
            assert!(barycenter_defect(s, &p, &rule).unwrap().iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn complex_ball_volume_closed_form() {
        let s: SpaceSpec = "CH2".parse().unwrap();
        let rule = product_rule(4, 3).unwrap();
        let vol = volume_g(s, &Perturbation::zero(s, 0.7).unwrap(), &rule).unwrap().value;
        let expected = std::f64::consts::PI.powi(2) / 2.0 * 0.7f64.sinh().powi(4);
        assert!((vol / expected - 1.0).abs() < 1e-13);
    }

    #[test]
    fn constant_perturbation_is_a_dilation() {
        let s: SpaceSpec = "HH2".parse().unwrap();
        let rule = product_rule(8, 2).unwrap();
        let p = Perturbation::new(s, 0.4, &[term(0, 0, 0.1)], None).unwrap();
        let vol = volume_g(s, &p, &rule).unwrap().value;
        assert!((vol / ball_volume(s, 0.44) - 1.0).abs() < 1e-13);
        let norms = sobolev_norms(s, &p, &rule).unwrap();
        let expected = 0.01 * ball_perimeter(s, 0.4);
        assert!((norms.l2_sq / expected - 1.0).abs() < 1e-13);
        assert_eq!(norms.grad_sq, 0.0);
    }

    /// Constant-curvature perimeter written out directly from sinh, for d = 1.
    fn real_hyperbolic_perimeter(n: usize, radius: f64, p: &Perturbation, rule: &SphereRule) -> f64 {
        let mut acc = crate::quad1d::CompensatedSum::new();
        for (x, w) in rule.nodes().zip(rule.weights()) {
            let (rho, g) = p.value_and_gradient(x);
            let r = radius * (1.0 + rho);
            let g2: f64 = g.iter().map(|c| c * c).sum();
            acc.add(w * r.sinh().powi(n as i32 - 1) * (1.0 + radius * radius * g2 / r.sinh().powi(2)).sqrt());
        }
        acc.value()
    }

    #[test]
    fn real_hyperbolic_reduction() {
        for m in [2, 3] {
            let s = SpaceSpec::new(Algebra::R, m).unwrap();
            let rule = product_rule(m, 10).unwrap();
            let p = Perturbation::new(s, 0.8, &[term(1, 0, 0.05), term(2, 1, 0.08), term(3, 0, -0.03)], None).unwrap();
            let a = perimeter_g(s, &p, &rule).unwrap().value;
            let b = real_hyperbolic_perimeter(m, 0.8, &p, &rule);
            assert!((a / b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deficit_matches_perimeter_difference() {
        let s: SpaceSpec = "CH2".parse().unwrap();
        let rule = product_rule(4, 8).unwrap();
        let p = Perturbation::new(s, 0.5, &[term(2, 4, 0.03)], None).unwrap();
        let p = volume_normalize(s, &p, &rule).unwrap();
        let d = deficit(s, &p, &rule).unwrap().deficit;
        let direct = perimeter_g(s, &p, &rule).unwrap().value - ball_perimeter(s, 0.5);
        assert!(d > 0.0);
        assert!((d - direct).abs() < 1e-12 * ball_perimeter(s, 0.5));
        // perimeter at two quadrature levels
        let fine = perimeter_g(s, &p, &product_rule(4, 10).unwrap()).unwrap().value;
        assert!((fine - d - ball_perimeter(s, 0.5)).abs() < 1e-10);
    }

    #[test]
    fn degree_one_eigenfunction_ratio_on_rh3() {
        let s: SpaceSpec = "RH3".parse().unwrap();
        let radius: f64 = 0.9;
        let rule = product_rule(3, 6).unwrap();
        let f = Perturbation::new(s, radius, &[term(1, 2, 0.3)], None).unwrap();
        let norms = sobolev_norms(s, &f, &rule).unwrap();
        let lambda1 = 2.0 / radius.sinh().powi(2);
        assert!((norms.grad_sq / norms.l2_sq / lambda1 - 1.0).abs() < 1e-13);
    }

    #[test]
    fn barycenter_defect_sign_for_degree_one_shift() {
        let s: SpaceSpec = "RH3".parse().unwrap();
        let p = Perturbation::new(s, 1.0, &[term(1, 0, 0.1)], None).unwrap();
        let coarse = barycenter_defect(s, &p, &product_rule(3, 8).unwrap()).unwrap();
        let fine = barycenter_defect(s, &p, &product_rule(3, 12).unwrap()).unwrap();
        assert!(coarse[0] > 0.0);
        assert!(coarse[1].abs() < 1e-14 && coarse[2].abs() < 1e-14);
        assert!((coarse[0] - fine[0]).abs() < 1e-12 * fine[0]);
    }

    #[test]
    fn deficit_invariant_under_fiber_rotation() {
        // right multiplication by a unit quaternion on each H component is an isometry of HH2
        let s: SpaceSpec = "HH2".parse().unwrap();
        let rule = product_rule(8, 6).unwrap();
        let q = {
            let v = [0.3, -0.5, 0.1, 0.7];
            let nrm = v.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
            v.map(|x| x / nrm)
        };
        let p = Perturbation::new(s, 0.5, &[term(2, 3, 0.04), term(2, 17, -0.03), term(3, 5, 0.02)], None).unwrap();
        let p = barycenter_normalize(s, &p, &rule).unwrap();
        let rotate = |x: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; 8];
            for c in 0..2 {
                let a: [f64; 4] = x[4 * c..4 * c + 4].try_into().unwrap();
                out[4 * c..4 * c + 4].copy_from_slice(&quaternion_multiply(&a, &q));
            }
            out
        };
        // the pulled-back perturbation evaluated through the rotation, on a rotated rule
        let base = deficit(s, &p, &rule).unwrap().deficit;
        let samples: Vec<NodeSample> = rule
            .nodes()
            .map(|x| {
                let y = rotate(x);
                let (rho, g) = p.value_and_gradient(&y);
                // gradient of rho o rotation at x is the inverse rotation of g; norms are preserved
                let (h2, v2) = split_norms(s, &y, &g);
                NodeSample { rho, h2, v2 }
            })
            .collect();
        let terms = DeficitIntegrands::new(s, 0.5, &samples);
        let rotated = weighted_sum(&rule, &terms.excess).unwrap();
        // rule is not rotation invariant; difference is quadrature error
        assert!((rotated / base - 1.0).abs() < 1e-4, "{rotated} vs {base}");
    }

    #[test]
    fn monte_carlo_deficit_has_stderr() {
        let s: SpaceSpec = "OH2".parse().unwrap();
        let rule = monte_carlo_rule(16, 4000, 1).unwrap();
        let p = Perturbation::new(s, 0.5, &[term(2, 0, 0.01), term(2, 40, 0.01)], None).unwrap();
        let p = volume_normalize(s, &p, &rule).unwrap();
        let d = deficit(s, &p, &rule).unwrap();
        assert!(d.stderr.unwrap() > 0.0);
        assert!(d.deficit > 0.0);
    }

    #[test]
    fn verdict_policy() {
        assert_eq!(Verdict::from_margin(-1.0, Some(0.5), 0.0), Verdict::InconclusiveAtResolution);
        assert_eq!(Verdict::from_margin(-2.0, Some(0.5), 0.0), Verdict::Fail);
        assert_eq!(Verdict::from_margin(-1e-12, None, 1e-10), Verdict::Pass);
        assert_eq!(Verdict::from_margin(-1e-9, None, 1e-10), Verdict::Fail);
        assert!(Verdict::InconclusiveAtResolution.passed());
    }
}
