//! Explicit constants of the stability estimate and numerical audits of the inequalities they realize.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::output::fmt_float;
use crate::space::SpaceSpec;
use crate::spectral::eigenvalue_lower_bound;

/// Grid size of the 1-D maximizer before golden-section refinement.
pub const GRID_POINTS: usize = 2000;
/// Multiplicative safety margin on the maximized constants.
pub const INFLATION: f64 = 1.0 + 1e-6;
const GOLDEN_TOL: f64 = 1e-10;

/// Maximum of `f` on `[a, b]`: grid scan, then golden section around the best grid point.
pub fn maximize<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, grid: usize) -> f64 {
    let h = (b - a) / (grid - 1) as f64;
    let (mut best_i, mut best) = (0, f(a));
    for i in 1..grid {
        let v = f(a + h * i as f64);
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let mut lo = a + h * best_i.saturating_sub(1) as f64;
    let mut hi = (a + h * (best_i + 1) as f64).min(b);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > GOLDEN_TOL * (b - a).max(1e-300) {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        }
    }
    best.max(f1).max(f2)
}

fn check_k(k: u32) -> Result<()> {
    if (1..=3).contains(&k) {
        Ok(())
    } else {
        Err(Error::DerivativeOrder(k))
    }
}

/// `(A_k, B_k, C_k)` without the `(n, k) = (2, 3)` guard; `omega_3` vanishes at 0 there,
/// so the scan starts just off the origin.
pub(crate) fn abc_unchecked(space: SpaceSpec, r0: f64, k: u32, grid: usize) -> (f64, f64, f64) {
    let kern = space.kernels();
    let n = space.n() as f64;
    let start = if space.n() == 2 && k == 3 { 1e-9 * r0 } else { 0.0 };
    let log_slope = |r: f64| {
        if r == 0.0 {
            0.0
        } else {
            r * kern.omega_deriv(k, r) / kern.omega(k, r)
        }
    };
    let a = (n - k as f64) + maximize(log_slope, start, r0, grid);
    let b = maximize(|r| kern.omega(k, 2.0 * r) / kern.omega(k, r), start, r0, grid);
    let c = kern.omega(k, 2.0 * r0);
    (a * INFLATION, b * INFLATION, c)
}

/// `A_k = (n-k) + max r omega_k'/omega_k`, `B_k = max omega_k(2r)/omega_k(r)` over `[0, R0]`,
/// `C_k = omega_k(2 R0)`.
pub fn abc_constants(space: SpaceSpec, r0: f64, k: u32) -> Result<(f64, f64, f64)> {
    check_k(k)?;
    if !(r0 > 0.0) {
        return Err(Error::Precondition(format!("R0 must be positive (got {r0})")));
    }
    if space.n() == 2 && k == 3 {
        return Err(Error::DegenerateConstant);
    }
    Ok(abc_unchecked(space, r0, k, GRID_POINTS))
}

/// `D = max_i R0 (omega_1^i)'(2 R0)` over the vertical and horizontal metric weights.
pub fn gradient_constant(space: SpaceSpec, r0: f64) -> Result<f64> {
    if !(r0 > 0.0) {
        return Err(Error::Precondition(format!("R0 must be positive (got {r0})")));
    }
    let kern = space.kernels();
    let v = r0 * kern.omega_vertical_deriv(2.0 * r0);
    let h = r0 * kern.omega_horizontal_deriv(2.0 * r0);
    Ok(v.max(h) * INFLATION)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantTable {
    pub space: SpaceSpec,
    #[serde(rename = "R0")]
    pub r0: f64,
    #[serde(rename = "R")]
    pub radius: f64,
    #[serde(rename = "A")]
    pub a: [f64; 3],
    #[serde(rename = "B")]
    pub b: [f64; 3],
    #[serde(rename = "C")]
    pub c: [f64; 3],
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "K1")]
    pub k1: f64,
    #[serde(rename = "K2")]
    pub k2: f64,
    #[serde(rename = "K3")]
    pub k3: f64,
    pub lambda2_lower: f64,
    pub epsilon: f64,
}

impl ConstantTable {
    pub fn compute(space: SpaceSpec, r0: f64, radius: f64) -> Result<Self> {
        Self::with_grid(space, r0, radius, GRID_POINTS)
    }

    /// Same table with a different optimizer grid (for refinement checks).
    pub fn with_grid(space: SpaceSpec, r0: f64, radius: f64, grid: usize) -> Result<Self> {
        if !(radius > 0.0 && radius <= r0) {
            return Err(Error::Precondition(format!("need 0 < R <= R0 (R = {radius}, R0 = {r0})")));
        }
        let mut a = [0.0; 3];
        let mut b = [0.0; 3];
        let mut c = [0.0; 3];
        for k in 1..=3u32 {
            let (ak, bk, ck) = abc_unchecked(space, r0, k, grid);
            a[k as usize - 1] = ak;
            b[k as usize - 1] = bk;
            c[k as usize - 1] = ck;
        }
        let d = gradient_constant(space, r0)?;
        let (k1, k2, k3) = combine(space, &a, &b, &c, d);
        let lambda2_lower = eigenvalue_lower_bound(space, radius, 2)?;
        let epsilon = epsilon_from(radius, lambda2_lower, k1, k2, k3);
        Ok(ConstantTable {
            space,
            r0,
            radius,
            a,
            b,
            c,
            d,
            k1,
            k2,
            k3,
            lambda2_lower,
            epsilon,
        })
    }

    pub const CSV_HEADER: [&'static str; 17] = [
        "space", "R0", "R", "A1", "A2", "A3", "B1", "B2", "B3", "C1", "C2", "C3", "D", "K1", "K2", "K3", "epsilon",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        let mut row = vec![self.space.label(), fmt_float(self.r0), fmt_float(self.radius)];
        row.extend(self.a.iter().chain(&self.b).chain(&self.c).map(|&x| fmt_float(x)));
        row.extend([self.d, self.k1, self.k2, self.k3, self.epsilon].iter().map(|&x| fmt_float(x)));
        row
    }
}

fn combine(space: SpaceSpec, a: &[f64; 3], b: &[f64; 3], c: &[f64; 3], d: f64) -> (f64, f64, f64) {
    let n = space.n() as f64;
    let k1 = (c[1] + c[2]).powi(2) + n * n / 2.0 * (b[0] + 2.0 * c[1]).powi(2);
    let k2 = b[2] * c[1] * c[2] / 3.0 + a[2] * c[1] * c[1];
    (k1, k2, d + 2.0)
}

fn epsilon_from(radius: f64, lambda2_lower: f64, k1: f64, k2: f64, k3: f64) -> f64 {
    0.5f64
        .min(1.0 / (3.0 * k1))
        .min(radius * radius * lambda2_lower / (24.0 * k2))
        .min(1.0 / (16.0 * k3))
}

/// `(K1, K2, K3)`. For `n = 2` the third-order constants are taken off the origin.
pub fn k_constants(space: SpaceSpec, r0: f64) -> Result<(f64, f64, f64)> {
    let t = ConstantTable::compute(space, r0, r0)?;
    Ok((t.k1, t.k2, t.k3))
}

/// Admissibility threshold on `||rho||_{C^1}`.
pub fn epsilon_threshold(space: SpaceSpec, r0: f64, radius: f64) -> Result<f64> {
    Ok(ConstantTable::compute(space, r0, radius)?.epsilon)
}

/// Counts of a randomized inequality audit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub name: String,
    pub samples: usize,
    pub violations: usize,
    /// Smallest `(rhs - lhs) / scale` seen; negative means a violation.
    pub worst_slack: f64,
}

impl AuditReport {
    pub(crate) fn new(name: &str) -> Self {
        AuditReport {
            name: name.to_string(),
            samples: 0,
            violations: 0,
            worst_slack: f64::INFINITY,
        }
    }

    /// Records `lhs <= rhs` up to a relative rounding allowance.
    pub(crate) fn record(&mut self, lhs: f64, rhs: f64) {
        let scale = lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
        let slack = (rhs - lhs) / scale;
        self.samples += 1;
        if slack < -1e-12 {
            self.violations += 1;
        }
        self.worst_slack = self.worst_slack.min(slack);
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Randomized audit of the three pointwise density inequalities for `k = 1, 2, 3`.
///
/// Besides the lower bound and the cap, the upper bound is checked in three forms:
/// as stated on `phi^{(k)}`, on `omega_k`, and on `phi^{(k)}` with the `(1+tau)^{n-k}` factor
/// that the `omega` form implies.
pub fn audit_density(space: SpaceSpec, r0: f64, samples: usize, seed: u64) -> Vec<AuditReport> {
    let kern = space.kernels();
    let n = space.n() as i32;
    let abc: Vec<(f64, f64, f64)> = (1..=3).map(|k| abc_unchecked(space, r0, k, GRID_POINTS)).collect();
    let mut lower = AuditReport::new("density-lower");
    let mut upper = AuditReport::new("density-upper");
    let mut upper_weight = AuditReport::new("density-upper-weight");
    let mut upper_rescaled = AuditReport::new("density-upper-rescaled");
    let mut cap = AuditReport::new("density-cap");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let deriv = |k: u32, r: f64| -> f64 {
        match k {
            1 => kern.phi_prime(r),
            2 => kern.phi_second(r),
            _ => kern.phi_third(r),
        }
    };
    for _ in 0..samples {
        let radius = r0 * (1.0 - rng.random::<f64>());
        let tau: f64 = rng.random_range(-1.0..=1.0);
        let r = radius * (1.0 + tau);
        for k in 1..=3u32 {
            let (a, b, c) = abc[k as usize - 1];
            let at_r = deriv(k, radius);
            let moved = deriv(k, r);
            lower.record((1.0 - a * tau.abs()) * at_r, moved);
            upper.record(moved, b * at_r);
            upper_weight.record(kern.omega(k, r), b * kern.omega(k, radius));
            if tau > -1.0 {
                upper_rescaled.record(moved, (1.0 + tau).powi(n - k as i32) * b * at_r);
            }
            cap.record(kern.omega(k, r), c);
        }
    }
    vec![lower, upper, upper_weight, upper_rescaled, cap]
}

/// Randomized audit of the two-sided gradient comparison with the computed `D`.
pub fn audit_gradient(space: SpaceSpec, r0: f64, samples: usize, seed: u64) -> Result<Vec<AuditReport>> {
    let d = gradient_constant(space, r0)?;
    let mut left = AuditReport::new("gradient-left");
    let mut right = AuditReport::new("gradient-right");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xi = |r: f64, h2: f64, v2: f64| {
        let (sh2, ch2) = (r.sinh().powi(2), r.cosh().powi(2));
        r * r * (h2 + ch2 * v2) / (sh2 * ch2)
    };
    for _ in 0..samples {
        let radius = r0 * (1.0 - rng.random::<f64>());
        let rho = 1.0 - 2.0 * rng.random::<f64>();
        let g2 = rng.random::<f64>() * 10.0;
        let frac = if space.d() == 1 { 0.0 } else { rng.random::<f64>() };
        let (h2, v2) = (frac * g2, (1.0 - frac) * g2);
        let rbar = radius * (1.0 + rho);
        let middle = xi(rbar, h2, v2);
        left.record(middle, h2 + v2);
        right.record((1.0 - d * rho.abs()) * xi(radius, h2, v2), middle);
    }
    Ok(vec![left, right])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Algebra;

    #[test]
    fn euclidean_limit() {
        for m in [2, 3, 5] {
            let s = SpaceSpec::new(Algebra::R, m).unwrap();
            let (a, b, c) = abc_constants(s, 1e-5, 1).unwrap();
            assert!((a - (m as f64 - 1.0)).abs() < 1e-5);
            assert!((b - 1.0).abs() < 1e-5);
            assert!((c - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn complex_c2_closed_form() {
        let s: SpaceSpec = "CH2".parse().unwrap();
        let (_, _, c2) = abc_constants(s, 1.0, 2).unwrap();
        let expected = s.kernels().phi_second(2.0) / 4.0;
        assert!((c2 / expected - 1.0).abs() < 1e-14);
    }

    #[test]
    fn degenerate_pair_is_rejected() {
        let s: SpaceSpec = "RH2".parse().unwrap();
        assert!(matches!(abc_constants(s, 1.0, 3), Err(Error::DegenerateConstant)));
        assert!(abc_constants(s, 1.0, 2).is_ok());
        assert!(matches!(abc_constants(s, 1.0, 4), Err(Error::DerivativeOrder(4))));
        // the table still has finite third-order entries
        let t = ConstantTable::compute(s, 1.0, 0.5).unwrap();
        assert!(t.a[2].is_finite() && t.b[2].is_finite() && t.epsilon > 0.0);
    }

    #[test]
    fn gradient_constant_small_radius() {
        let s: SpaceSpec = "HH2".parse().unwrap();
        assert!(gradient_constant(s, 1e-6).unwrap() < 1e-10);
        let kern = s.kernels();
        let r0: f64 = 0.8;
        let expected = r0 * kern.omega_vertical_deriv(1.6).max(kern.omega_horizontal_deriv(1.6));
        assert!((gradient_constant(s, r0).unwrap() / expected - 1.0 - 1e-6).abs() < 1e-14);
    }

    #[test]
    fn k_constants_and_epsilon() {
        for s in SpaceSpec::builtin() {
            let t = ConstantTable::compute(s, 1.0, 0.5).unwrap();
            let n = s.n() as f64;
            assert_eq!(t.k3, t.d + 2.0);
            assert!(t.k1 >= n * n / 2.0);
            assert!(t.epsilon > 0.0 && t.epsilon <= 0.5);
            assert!(t.b.iter().all(|b| *b >= 1.0));
            for k in 0..3 {
                assert!(t.c[k] >= s.kernels().omega(k as u32 + 1, 0.0));
            }
            let eps: Vec<f64> = [0.5, 1.0, 2.0].iter().map(|r0| epsilon_threshold(s, *r0, 0.25).unwrap()).collect();
            assert!(eps[1] <= eps[0] && eps[2] <= eps[1], "{s}: {eps:?}");
        }
    }

    #[test]
    fn grid_refinement_is_stable() {
        for s in SpaceSpec::builtin() {
            let a = ConstantTable::with_grid(s, 1.0, 1.0, GRID_POINTS).unwrap();
            let b = ConstantTable::with_grid(s, 1.0, 1.0, 2 * GRID_POINTS).unwrap();
            for (x, y) in a.a.iter().chain(&a.b).zip(b.a.iter().chain(&b.b)) {
                assert!((x / y - 1.0).abs() <= 1e-8, "{s}: {x} vs {y}");
            }
            assert!((a.epsilon / b.epsilon - 1.0).abs() <= 1e-8);
        }
    }

    #[test]
    fn complex_table_regression() {
        let s: SpaceSpec = "CH2".parse().unwrap();
        let t = ConstantTable::compute(s, 1.0, 1.0).unwrap();
        let golden = ConstantTable::with_grid(s, 1.0, 1.0, 2 * GRID_POINTS).unwrap();
        for (x, y) in [t.k1, t.k2, t.k3, t.epsilon].iter().zip([golden.k1, golden.k2, golden.k3, golden.epsilon]) {
            assert!((x / y - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn maximizer_finds_interior_peak() {
        let m = maximize(|x| -(x - 0.3141592653).powi(2), 0.0, 1.0, 50);
        assert!(m.abs() < 1e-18);
    }

    #[test]
    fn density_audits() {
        for s in SpaceSpec::builtin() {
            for r in audit_density(s, 1.0, 2000, 7) {
                match r.name.as_str() {
                    "density-upper" => {}
                    _ => assert!(r.passed(), "{s}: {r:?}"),
                }
            }
            assert!(audit_gradient(s, 1.0, 2000, 7).unwrap().iter().all(AuditReport::passed));
        }
    }

    #[test]
    fn literal_upper_density_bound_fails_for_dilations() {
        // phi'(2R) / phi'(R) >= 2^{n-1}, while B_1 stays near 1 for small R0
        let s: SpaceSpec = "RH3".parse().unwrap();
        let (_, b1, _) = abc_constants(s, 0.1, 1).unwrap();
        let k = s.kernels();
        assert!(k.phi_prime(0.2) > b1 * k.phi_prime(0.1));
        let upper = audit_density(s, 0.1, 500, 1).into_iter().find(|r| r.name == "density-upper").unwrap();
        assert!(upper.violations > 0);
    }
}
