//! Dilations of star-shaped bodies, Euclidean/Riemannian comparison and the profile bound.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::constants::AuditReport;
use crate::error::{Error, Result};
use crate::output::fmt_float;
use crate::functionals::{perimeter_from_samples, sample_nodes, volume_from_samples, NodeSample};
use crate::harmonic::harmonic_basis;
use crate::perturbation::{c0_norm, max_value, Perturbation, Term, DEFAULT_GRID_DENSITY};
use crate::quadrature::{chunked_sum, SphereRule};
use crate::space::SpaceSpec;

/// Star-shaped body `{ s phi : 0 <= s < r(phi) }` with `r = R_b (1 + rho)`.
#[derive(Clone, Debug)]
pub struct StarBody {
    graph: Perturbation,
    r_out: f64,
}

impl StarBody {
    pub fn new(graph: Perturbation) -> Result<Self> {
        let r_out = graph.radius() * (1.0 + max_value(&graph, DEFAULT_GRID_DENSITY)?);
        Ok(StarBody { graph, r_out })
    }

    /// Geodesic ball of radius `r`.
    pub fn ball(space: SpaceSpec, r: f64) -> Result<Self> {
        Self::new(Perturbation::zero(space, r)?)
    }

    /// Seeded body with degrees `0..=band_limit` and bounding radius below `radius`.
    pub fn random(space: SpaceSpec, radius: f64, band_limit: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut terms = Vec::new();
        for degree in 0..=band_limit {
            for index in 0..harmonic_basis(space.n(), degree)?.len() {
                let coeff: f64 = StandardNormal.sample(&mut rng);
                terms.push(Term { degree, index, coeff });
            }
        }
        let base = Uniform::new(0.3, 0.6).expect("valid range").sample(&mut rng) * radius;
        let amplitude = Uniform::new(0.05, 0.4).expect("valid range").sample(&mut rng);
        let unit = Perturbation::new_unchecked(space, base, &terms, Some(seed))?;
        let scale = amplitude / c0_norm(&unit, DEFAULT_GRID_DENSITY)?;
        let scaled: Vec<Term> = terms.iter().map(|t| Term { coeff: t.coeff * scale, ..*t }).collect();
        Self::new(Perturbation::new(space, base, &scaled, Some(seed))?)
    }

    pub fn graph(&self) -> &Perturbation {
        &self.graph
    }

    pub fn space(&self) -> SpaceSpec {
        self.graph.space()
    }

    /// Upper bound on `r(phi)` from a grid scan.
    pub fn r_out(&self) -> f64 {
        self.r_out
    }

    /// `(1 + t)` times the body.
    pub fn dilated(&self, t: f64) -> Result<Self> {
        Ok(StarBody {
            graph: self.graph.with_radius(self.graph.radius() * (1.0 + t))?,
            r_out: self.r_out * (1.0 + t),
        })
    }
}

/// Riemannian and Euclidean volume and perimeter of a body.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measures {
    pub vol_g: f64,
    pub per_g: f64,
    pub vol_e: f64,
    pub per_e: f64,
}

/// Measures of a body by radial-graph quadrature under `rule`.
pub fn measures(body: &StarBody, rule: &SphereRule) -> Result<Measures> {
    let samples = sample_nodes(body.space(), body.graph(), rule)?;
    measures_from_samples(body.space(), body.graph().radius(), &samples, rule)
}

/// Measures of the graph of `radius (1 + rho)`; dilations only change `radius`.
fn measures_from_samples(space: SpaceSpec, radius: f64, samples: &[NodeSample], rule: &SphereRule) -> Result<Measures> {
    let n = space.n() as i32;
    let (ve, pe): (Vec<f64>, Vec<f64>) = samples
        .iter()
        .zip(rule.weights())
        .map(|(s, w)| {
            let r = radius * (1.0 + s.rho);
            let g2 = radius * radius * (s.h2 + s.v2);
            (w * r.powi(n) / n as f64, w * r.powi(n - 1) * (1.0 + g2 / (r * r)).sqrt())
        })
        .unzip();
    Ok(Measures {
        vol_g: volume_from_samples(space, radius, samples, rule)?.value,
        per_g: perimeter_from_samples(space, radius, samples, rule)?.value,
        vol_e: chunked_sum(&ve),
        per_e: chunked_sum(&pe),
    })
}

fn check_dilation(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Precondition(format!("dilation parameter must lie in [0, 1] (got {t})")));
    }
    Ok(())
}

/// Measures of `(1 + t)` times the body.
pub fn dilate_measures(body: &StarBody, t: f64, rule: &SphereRule) -> Result<Measures> {
    check_dilation(t)?;
    measures(&body.dilated(t)?, rule)
}

/// `(2^n + 2)(R omega_g'(2R) + 1)`.
pub fn rescaling_constant(space: SpaceSpec, radius: f64) -> f64 {
    let n = space.n() as i32;
    (2f64.powi(n) + 2.0) * (radius * space.kernels().omega_deriv(1, 2.0 * radius) + 1.0)
}

fn contained(body: &StarBody, radius: f64) -> Result<()> {
    if body.r_out() > radius {
        return Err(Error::Precondition(format!(
            "body reaches radius {} outside the ball of radius {radius}",
            body.r_out()
        )));
    }
    Ok(())
}

/// Margins of the three dilation inequalities; nonnegative means satisfied.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescaleCheck {
    pub t: f64,
    pub constant: f64,
    pub volume_lower_margin: f64,
    pub volume_upper_margin: f64,
    pub perimeter_margin: f64,
    pub passed: bool,
}

impl RescaleCheck {
    pub const CSV_HEADER: [&'static str; 6] = ["t", "C", "volume_lower_margin", "volume_upper_margin", "perimeter_margin", "pass"];

    pub fn csv_record(&self) -> Vec<String> {
        vec![
            fmt_float(self.t),
            fmt_float(self.constant),
            fmt_float(self.volume_lower_margin),
            fmt_float(self.volume_upper_margin),
            fmt_float(self.perimeter_margin),
            self.passed.to_string(),
        ]
    }
}

const RELATIVE_ROUNDING: f64 = 1e-12;

/// `(1+t)^n Vol(G) <= Vol((1+t)G) <= (1+Ct) Vol(G)` and `Per((1+t)G) <= (1+Ct) Per(G)`.
pub fn check_rescaling_bounds(body: &StarBody, radius: f64, t: f64, rule: &SphereRule) -> Result<RescaleCheck> {
    Ok(check_rescaling_sweep(body, radius, &[t], rule)?.remove(0))
}

/// [`check_rescaling_bounds`] for several dilation factors, sampling the body once.
pub fn check_rescaling_sweep(body: &StarBody, radius: f64, ts: &[f64], rule: &SphereRule) -> Result<Vec<RescaleCheck>> {
    contained(body, radius)?;
    for &t in ts {
        check_dilation(t)?;
    }
    let space = body.space();
    let samples = sample_nodes(space, body.graph(), rule)?;
    let base_radius = body.graph().radius();
    let base = measures_from_samples(space, base_radius, &samples, rule)?;
    let c = rescaling_constant(space, radius);
    let n = space.n() as i32;
    ts.iter()
        .map(|&t| {
            let moved = measures_from_samples(space, base_radius * (1.0 + t), &samples, rule)?;
            let volume_lower_margin = moved.vol_g - (1.0 + t).powi(n) * base.vol_g;
            let volume_upper_margin = (1.0 + c * t) * base.vol_g - moved.vol_g;
            let perimeter_margin = (1.0 + c * t) * base.per_g - moved.per_g;
            let ok = |m: f64, scale: f64| m >= -RELATIVE_ROUNDING * scale;
            let passed = ok(volume_lower_margin, moved.vol_g) && ok(volume_upper_margin, moved.vol_g) && ok(perimeter_margin, moved.per_g);
            Ok(RescaleCheck {
                t,
                constant: c,
                volume_lower_margin,
                volume_upper_margin,
                perimeter_margin,
                passed,
            })
        })
        .collect()
}

/// Margins of `V <= Vol_g <= (1 + omega_g'(R) R) V` and the same for perimeters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCheck {
    pub volume_lower_margin: f64,
    pub volume_upper_margin: f64,
    pub perimeter_lower_margin: f64,
    pub perimeter_upper_margin: f64,
    pub passed: bool,
}

pub fn check_comparison(body: &StarBody, radius: f64, rule: &SphereRule) -> Result<ComparisonCheck> {
    contained(body, radius)?;
    let m = measures(body, rule)?;
    let factor = 1.0 + body.space().kernels().omega_deriv(1, radius) * radius;
    let c = ComparisonCheck {
        volume_lower_margin: m.vol_g - m.vol_e,
        volume_upper_margin: factor * m.vol_e - m.vol_g,
        perimeter_lower_margin: m.per_g - m.per_e,
        perimeter_upper_margin: factor * m.per_e - m.per_g,
        passed: false,
    };
    let tol_v = RELATIVE_ROUNDING * m.vol_g;
    let tol_p = RELATIVE_ROUNDING * m.per_g;
    Ok(ComparisonCheck {
        passed: c.volume_lower_margin >= -tol_v
            && c.volume_upper_margin >= -tol_v
            && c.perimeter_lower_margin >= -tol_p
            && c.perimeter_upper_margin >= -tol_p,
        ..c
    })
}

/// `phi'(s) <= cosh(s)^{d - 1/n} (n phi(s))^{(n-1)/n}` on a grid of positive `s`.
pub fn check_profile_bound(space: SpaceSpec, s_grid: &[f64]) -> Result<AuditReport> {
    let k = space.kernels();
    let (n, d) = (space.n() as f64, space.d() as f64);
    let mut report = AuditReport::new("profile");
    for &s in s_grid {
        if !(s > 0.0) {
            return Err(Error::Precondition(format!("profile grid must be positive (got {s})")));
        }
        let rhs = s.cosh().powf(d - 1.0 / n) * (n * k.phi(s)).powf((n - 1.0) / n);
        report.record(k.phi_prime(s), rhs);
    }
    Ok(report)
}
