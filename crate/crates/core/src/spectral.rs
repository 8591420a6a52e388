//! Laplacian eigenvalue bounds on geodesic spheres and low-degree harmonic coefficients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturbation::Perturbation;
use crate::quadrature::{chunked_sum, SphereRule};
use crate::space::{sphere_area, SpaceSpec};

/// `[j(j+d-2) + j(n-d) cosh^2 R] / (sinh^2 R cosh^2 R)`; exact for `j = 1`.
pub fn eigenvalue_lower_bound(space: SpaceSpec, radius: f64, j: usize) -> Result<f64> {
    if !(radius > 0.0) || j == 0 {
        return Err(Error::Precondition(format!(
            "eigenvalue bound needs R > 0 and j >= 1 (R = {radius}, j = {j})"
        )));
    }
    let (n, d, j) = (space.n() as f64, space.d() as f64, j as f64);
    let ch2 = radius.cosh().powi(2);
    let sh2 = radius.sinh().powi(2);
    Ok((j * (j + d - 2.0) + j * (n - d) * ch2) / (sh2 * ch2))
}

/// First nonzero eigenvalue of the Laplacian on the geodesic sphere of radius `R`.
pub fn lambda1(space: SpaceSpec, radius: f64) -> Result<f64> {
    eigenvalue_lower_bound(space, radius, 1)
}

/// `((d-1) + (n-d) cosh^2 R) / (2d + 2(n-d) cosh^2 R)`.
pub fn gap_ratio_closed_form(space: SpaceSpec, radius: f64) -> f64 {
    let (n, d) = (space.n() as f64, space.d() as f64);
    let ch2 = radius.cosh().powi(2);
    ((d - 1.0) + (n - d) * ch2) / (2.0 * d + 2.0 * (n - d) * ch2)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralBounds {
    #[serde(rename = "R")]
    pub radius: f64,
    pub lambda1: f64,
    pub lambda2_lower: f64,
    pub ratio_bound: f64,
}

impl SpectralBounds {
    pub fn new(space: SpaceSpec, radius: f64) -> Result<Self> {
        let lambda1 = lambda1(space, radius)?;
        let lambda2_lower = eigenvalue_lower_bound(space, radius, 2)?;
        Ok(SpectralBounds {
            radius,
            lambda1,
            lambda2_lower,
            ratio_bound: lambda1 / lambda2_lower,
        })
    }

    /// `R^2 lambda_2` (lower bound), which stays away from zero as `R -> 0`.
    pub fn scaled_lambda2(&self) -> f64 {
        self.radius * self.radius * self.lambda2_lower
    }
}

/// Coefficients of `rho` on `1` and on `sqrt(n) x^k / R`, normalized by the ball perimeter.
///
/// The constant factor `phi'(R)` cancels, so these are means over the unit sphere.
pub fn low_harmonic_coefficients(space: SpaceSpec, p: &Perturbation, rule: &SphereRule) -> Result<(f64, Vec<f64>)> {
    let n = space.n();
    if p.space() != space || rule.dim() != n {
        return Err(Error::Precondition("perturbation, rule and space disagree".into()));
    }
    let values = p.values_on(rule);
    let area = sphere_area(n);
    let weighted: Vec<f64> = values.iter().zip(rule.weights()).map(|(v, w)| v * w).collect();
    let c0 = chunked_sum(&weighted) / area;
    let scale = (n as f64).sqrt() / area;
    let c1 = (0..n)
        .map(|k| {
            let terms: Vec<f64> = weighted.iter().zip(rule.nodes()).map(|(v, x)| v * x[k]).collect();
            scale * chunked_sum(&terms)
        })
        .collect();
    Ok((c0, c1))
}
