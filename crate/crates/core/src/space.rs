//! Rank-one symmetric spaces of non-compact type and their radial kernels.
//!
//! In normal coordinates about a base point the metric of `KH^m` is radial,
//! and everything the stability estimates consume reduces to a handful of
//! functions of the geodesic radius `r`:
//!
//! ```text
//! omega_g(r) = sinh^{n-1}(r) cosh^{d-1}(r) / r^{n-1}
//! phi(r)     = int_0^r t^{n-1} omega_g(t) dt
//! psi(r)     = int_0^r t^n     omega_g(t) dt
//! omega_k(r) = phi^{(k)}(r) / r^{n-k},   k = 1, 2, 3
//! ```
//!
//! All `omega` functions are written in terms of `S(r) = sinh(r)/r` so they
//! can be evaluated at `r = 0` without a removable singularity.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad1d::{adaptive_gauss_kronrod, gauss_legendre};

/// Real division algebras.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algebra {
    R,
    C,
    H,
    O,
}

impl Algebra {
    /// Real dimension of the algebra.
    pub fn dim(self) -> usize {
        match self {
            Algebra::R => 1,
            Algebra::C => 2,
            Algebra::H => 4,
            Algebra::O => 8,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Algebra::R => 'R',
            Algebra::C => 'C',
            Algebra::H => 'H',
            Algebra::O => 'O',
        }
    }
}

impl FromStr for Algebra {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "R" | "r" => Ok(Algebra::R),
            "C" | "c" => Ok(Algebra::C),
            "H" | "h" => Ok(Algebra::H),
            "O" | "o" => Ok(Algebra::O),
            other => Err(Error::InvalidSpace(format!("unknown algebra `{other}`"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawSpace {
    Label(String),
    Parts { algebra: Algebra, m: usize },
}

/// The ambient space `KH^m`, with real dimension `n = m d`.
///
/// Serializes as `{"algebra": "C", "m": 2}`; a label such as `"CH2"` is also accepted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawSpace", into = "RawSpace")]
pub struct SpaceSpec {
    algebra: Algebra,
    m: usize,
}

impl TryFrom<RawSpace> for SpaceSpec {
    type Error = Error;

    fn try_from(raw: RawSpace) -> Result<Self> {
        match raw {
            RawSpace::Label(label) => label.parse(),
            RawSpace::Parts { algebra, m } => SpaceSpec::new(algebra, m),
        }
    }
}

impl From<SpaceSpec> for RawSpace {
    fn from(s: SpaceSpec) -> Self {
        RawSpace::Parts {
            algebra: s.algebra,
            m: s.m,
        }
    }
}

impl SpaceSpec {
    pub fn new(algebra: Algebra, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidSpace(format!("m must be at least 2 (got {m})")));
        }
        if algebra == Algebra::O && m != 2 {
            return Err(Error::InvalidSpace(
                "the octonionic hyperbolic space exists only for m = 2".into(),
            ));
        }
        Ok(SpaceSpec { algebra, m })
    }

    /// The five spaces used throughout the test-suite and CLI.
    pub fn builtin() -> [SpaceSpec; 5] {
        [
            SpaceSpec { algebra: Algebra::R, m: 2 },
            SpaceSpec { algebra: Algebra::R, m: 3 },
            SpaceSpec { algebra: Algebra::C, m: 2 },
            SpaceSpec { algebra: Algebra::H, m: 2 },
            SpaceSpec { algebra: Algebra::O, m: 2 },
        ]
    }

    pub fn algebra(&self) -> Algebra {
        self.algebra
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.algebra.dim()
    }

    pub fn n(&self) -> usize {
        self.m * self.d()
    }

    /// Short label such as `CH2`.
    pub fn label(&self) -> String {
        format!("{}H{}", self.algebra.symbol(), self.m)
    }

    /// Dimension of the horizontal (curvature -4) distribution on spheres.
    pub fn horizontal_dim(&self) -> usize {
        self.d() - 1
    }

    /// Dimension of the vertical (curvature -1) distribution on spheres.
    pub fn vertical_dim(&self) -> usize {
        self.n() - self.d()
    }

    /// Symmetric pair `(G, K)` with `M = G/K`, as metadata.
    pub fn symmetric_pair(&self) -> (String, String) {
        let m = self.m;
        match self.algebra {
            Algebra::R => (format!("SO({m},1)"), format!("SO({m})")),
            Algebra::C => (format!("SU({m},1)"), format!("S(U({m})U(1))")),
            Algebra::H => (format!("Sp({m},1)"), format!("Sp({m})Sp(1)")),
            Algebra::O => ("F4(-20)".into(), "Spin(9)".into()),
        }
    }

    /// Cached radial kernels for this space.
    pub fn kernels(&self) -> &'static RadialKernels {
        static CACHE: OnceLock<Mutex<HashMap<SpaceSpec, &'static RadialKernels>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("kernel cache poisoned");
        guard
            .entry(*self)
            .or_insert_with(|| Box::leak(Box::new(RadialKernels::new(*self))))
    }
}

impl fmt::Display for SpaceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for SpaceSpec {
    type Err = Error;

    /// Parses labels of the form `CH2`, `RH3`, `OH2`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut chars = s.chars();
        let algebra = chars
            .next()
            .ok_or_else(|| Error::InvalidSpace("empty space label".into()))?;
        let rest: String = chars.collect();
        let m = rest
            .strip_prefix(['H', 'h'])
            .and_then(|m| m.parse::<usize>().ok())
            .ok_or_else(|| Error::InvalidSpace(format!("expected a label like CH2, got `{s}`")))?;
        SpaceSpec::new(algebra.to_string().parse()?, m)
    }
}

/// Volume of the Euclidean unit ball in `R^n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    use std::f64::consts::PI;
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * PI / n as f64 * unit_ball_volume(n - 2),
    }
}

/// Surface measure of `S^{n-1}`, i.e. `n * unit_ball_volume(n)`.
pub fn sphere_area(n: usize) -> f64 {
    n as f64 * unit_ball_volume(n)
}

/// Below this radius `sinh(r)/r` is evaluated by its Taylor series.
pub const SERIES_CUTOFF: f64 = 1e-3;

/// `phi` and `psi` use their power series up to this radius; beyond it adaptive quadrature.
pub const POWER_SERIES_MAX_RADIUS: f64 = 3.5;

const POWER_SERIES_TERMS: usize = 320;

/// `S(r) = sinh(r)/r`, even, `S(0) = 1`.
pub fn sinhc(r: f64) -> f64 {
    let r = r.abs();
    if r < SERIES_CUTOFF {
        let u = r * r;
        // 1 + u/3! + u^2/5! + ... (8 terms)
        let mut term = 1.0;
        let mut sum = 1.0;
        for j in 1..8 {
            term *= u / ((2 * j) as f64 * (2 * j + 1) as f64);
            sum += term;
        }
        sum
    } else {
        r.sinh() / r
    }
}

/// Derivative of `sinh(r)/r`; odd in `r`.
pub fn sinhc_deriv(r: f64) -> f64 {
    let sign = r.signum();
    let r = r.abs();
    let value = if r < 1.0 {
        // sum_{j>=1} 2j r^{2j-1} / (2j+1)!
        let u = r * r;
        let mut coeff = 1.0 / 6.0;
        let mut power = r;
        let mut sum = 0.0;
        for j in 1..16 {
            if j > 1 {
                coeff /= (2 * j) as f64 * (2 * j + 1) as f64;
                power *= u;
            }
            sum += 2.0 * j as f64 * coeff * power;
        }
        sum
    } else {
        (r.cosh() - r.sinh() / r) / r
    };
    sign * value
}

/// One term `coeff * S^p * r^q * cosh^e` of a normalized density.
#[derive(Clone, Copy, Debug)]
struct DensityTerm {
    coeff: f64,
    s_pow: i32,
    r_pow: i32,
    c_pow: i32,
}

impl DensityTerm {
    fn value(&self, s: f64, r: f64, c: f64) -> f64 {
        self.coeff * s.powi(self.s_pow) * r.powi(self.r_pow) * c.powi(self.c_pow)
    }

    fn deriv(&self, s: f64, ds: f64, r: f64, c: f64, sh: f64) -> f64 {
        let mut acc = 0.0;
        if self.s_pow != 0 {
            acc += self.s_pow as f64 * s.powi(self.s_pow - 1) * ds * r.powi(self.r_pow) * c.powi(self.c_pow);
        }
        if self.r_pow != 0 {
            acc += self.r_pow as f64 * s.powi(self.s_pow) * r.powi(self.r_pow - 1) * c.powi(self.c_pow);
        }
        if self.c_pow != 0 {
            acc += self.c_pow as f64 * s.powi(self.s_pow) * r.powi(self.r_pow) * c.powi(self.c_pow - 1) * sh;
        }
        self.coeff * acc
    }
}

fn density_terms(n: usize, d: usize, k: u32) -> Vec<DensityTerm> {
    let (n, d) = (n as f64, d as f64);
    let (ni, di) = (n as i32, d as i32);
    let t = |coeff: f64, s_pow: i32, r_pow: i32, c_pow: i32| DensityTerm {
        coeff,
        s_pow,
        r_pow,
        c_pow,
    };
    let raw = match k {
        1 => vec![t(1.0, ni - 1, 0, di - 1)],
        2 => vec![t(n - 1.0, ni - 2, 0, di), t(d - 1.0, ni, 2, di - 2)],
        3 => vec![
            t((n - 1.0) * (n - 2.0), ni - 3, 0, di + 1),
            t(2.0 * d * n - d - n, ni - 1, 2, di - 1),
            t((d - 1.0) * (d - 2.0), ni + 1, 4, di - 3),
        ],
        // omega_1^1 = S^2 and omega_1^2 = S^2 cosh^2
        11 => vec![t(1.0, 2, 0, 0)],
        12 => vec![t(1.0, 2, 0, 2)],
        _ => unreachable!("density index {k}"),
    };
    raw.into_iter().filter(|t| t.coeff != 0.0).collect()
}

/// Multiply two truncated power series in `u`.
fn series_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let len = a.len().min(b.len());
    let mut out = vec![0.0; len];
    for (i, ai) in a.iter().enumerate() {
        if *ai == 0.0 {
            continue;
        }
        for (j, bj) in b.iter().take(len - i).enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

fn series_pow(a: &[f64], e: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    out[0] = 1.0;
    for _ in 0..e {
        out = series_mul(&out, a);
    }
    out
}

/// Sum of a series with nonnegative coefficients in `u >= 0`.
fn positive_series(coeffs: &[f64], u: f64) -> f64 {
    let mut sum = 0.0;
    let mut power = 1.0;
    let mut prev = f64::INFINITY;
    for c in coeffs {
        let term = c * power;
        sum += term;
        if term <= 1e-18 * sum && term < prev {
            break;
        }
        prev = term;
        power *= u;
    }
    sum
}

/// Closed-form radial kernels of a fixed space.
#[derive(Debug)]
pub struct RadialKernels {
    space: SpaceSpec,
    n: usize,
    d: usize,
    omega_terms: [Vec<DensityTerm>; 5],
    phi_series: Vec<f64>,
    psi_series: Vec<f64>,
    gl: [(Vec<f64>, Vec<f64>); 3],
}

impl RadialKernels {
    pub fn new(space: SpaceSpec) -> Self {
        let (n, d) = (space.n(), space.d());
        // omega_1(r) = S^{n-1} cosh^{d-1} = sum_j a_j r^{2j}
        let mut s_series = vec![0.0; POWER_SERIES_TERMS];
        let mut c_series = vec![0.0; POWER_SERIES_TERMS];
        s_series[0] = 1.0;
        c_series[0] = 1.0;
        for j in 1..POWER_SERIES_TERMS {
            let jf = j as f64;
            s_series[j] = s_series[j - 1] / ((2.0 * jf) * (2.0 * jf + 1.0));
            c_series[j] = c_series[j - 1] / ((2.0 * jf - 1.0) * (2.0 * jf));
        }
        let omega1 = series_mul(&series_pow(&s_series, n - 1), &series_pow(&c_series, d - 1));
        let phi_series = omega1
            .iter()
            .enumerate()
            .map(|(j, a)| a / (n + 2 * j) as f64)
            .collect();
        let psi_series = omega1
            .iter()
            .enumerate()
            .map(|(j, a)| a / (n + 1 + 2 * j) as f64)
            .collect();
        RadialKernels {
            space,
            n,
            d,
            omega_terms: [
                density_terms(n, d, 1),
                density_terms(n, d, 2),
                density_terms(n, d, 3),
                density_terms(n, d, 11),
                density_terms(n, d, 12),
            ],
            phi_series,
            psi_series,
            gl: [gauss_legendre(4), gauss_legendre(8), gauss_legendre(16)],
        }
    }

    pub fn space(&self) -> SpaceSpec {
        self.space
    }

    fn eval_terms(&self, idx: usize, r: f64) -> f64 {
        let r = r.abs();
        let (s, c) = (sinhc(r), r.cosh());
        self.omega_terms[idx].iter().map(|t| t.value(s, r, c)).sum()
    }

    fn eval_terms_deriv(&self, idx: usize, r: f64) -> f64 {
        let sign = if r < 0.0 { -1.0 } else { 1.0 };
        let r = r.abs();
        let (s, ds, c, sh) = (sinhc(r), sinhc_deriv(r), r.cosh(), r.sinh());
        sign * self.omega_terms[idx]
            .iter()
            .map(|t| t.deriv(s, ds, r, c, sh))
            .sum::<f64>()
    }

    /// Volume density `omega_g(r)`; equals 1 at the origin.
    pub fn volume_density(&self, r: f64) -> f64 {
        self.eval_terms(0, r)
    }

    /// `omega_k(r) = phi^{(k)}(r) / r^{n-k}` for `k` in `1..=3`; even in `r`.
    pub fn omega(&self, k: u32, r: f64) -> f64 {
        assert!((1..=3).contains(&k), "omega_k is defined for k = 1, 2, 3");
        self.eval_terms(k as usize - 1, r)
    }

    pub fn omega_deriv(&self, k: u32, r: f64) -> f64 {
        assert!((1..=3).contains(&k), "omega_k is defined for k = 1, 2, 3");
        self.eval_terms_deriv(k as usize - 1, r)
    }

    /// `sinh^2(r)/r^2`, the vertical metric weight.
    pub fn omega_vertical(&self, r: f64) -> f64 {
        self.eval_terms(3, r)
    }

    pub fn omega_vertical_deriv(&self, r: f64) -> f64 {
        self.eval_terms_deriv(3, r)
    }

    /// `sinh^2(r) cosh^2(r)/r^2`, the horizontal metric weight.
    pub fn omega_horizontal(&self, r: f64) -> f64 {
        self.eval_terms(4, r)
    }

    pub fn omega_horizontal_deriv(&self, r: f64) -> f64 {
        self.eval_terms_deriv(4, r)
    }

    /// `phi'(r) = sinh^{n-1}(r) cosh^{d-1}(r)`.
    pub fn phi_prime(&self, r: f64) -> f64 {
        r.sinh().powi(self.n as i32 - 1) * r.cosh().powi(self.d as i32 - 1)
    }

    pub fn phi_second(&self, r: f64) -> f64 {
        let (n, d) = (self.n as i32, self.d as i32);
        let (s, c) = (r.sinh(), r.cosh());
        let mut v = (n - 1) as f64 * s.powi(n - 2) * c.powi(d);
        if d > 1 {
            v += (d - 1) as f64 * s.powi(n) * c.powi(d - 2);
        }
        v
    }

    pub fn phi_third(&self, r: f64) -> f64 {
        let (n, d) = (self.n as i32, self.d as i32);
        let (s, c) = (r.sinh(), r.cosh());
        let mut v = (2 * d * n - d - n) as f64 * s.powi(n - 1) * c.powi(d - 1);
        if n > 2 {
            v += ((n - 1) * (n - 2)) as f64 * s.powi(n - 3) * c.powi(d + 1);
        }
        if d > 2 {
            v += ((d - 1) * (d - 2)) as f64 * s.powi(n + 1) * c.powi(d - 3);
        }
        v
    }

    /// `phi(r)`, the radial volume profile.
    pub fn phi(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        if self.space.algebra() == Algebra::C {
            return r.sinh().powi(self.n as i32) / self.n as f64;
        }
        if r <= POWER_SERIES_MAX_RADIUS {
            r.powi(self.n as i32) * positive_series(&self.phi_series, r * r)
        } else {
            adaptive_gauss_kronrod(|t| self.phi_prime(t), 0.0, r, 1e-13)
        }
    }

    /// `phi(r) / r^n`, finite and positive at the origin (`1/n`).
    pub fn phi_scaled(&self, r: f64) -> f64 {
        let r = r.abs();
        if self.space.algebra() == Algebra::C {
            return sinhc(r).powi(self.n as i32) / self.n as f64;
        }
        if r <= POWER_SERIES_MAX_RADIUS {
            positive_series(&self.phi_series, r * r)
        } else {
            self.phi(r) / r.powi(self.n as i32)
        }
    }

    /// `psi(r) = int_0^r t phi'(t) dt`.
    pub fn psi(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        if r <= POWER_SERIES_MAX_RADIUS {
            r.powi(self.n as i32 + 1) * positive_series(&self.psi_series, r * r)
        } else {
            adaptive_gauss_kronrod(|t| t * self.phi_prime(t), 0.0, r, 1e-13)
        }
    }

    /// Derivatives `phi^{(k)}` for `k = 0..=3`.
    pub fn phi_deriv(&self, r: f64, k: u32) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(Error::Precondition(format!("radius must be >= 0 (got {r})")));
        }
        match k {
            0 => Ok(self.phi(r)),
            1 => Ok(self.phi_prime(r)),
            2 => Ok(self.phi_second(r)),
            3 => Ok(self.phi_third(r)),
            k => Err(Error::DerivativeOrder(k)),
        }
    }

    /// Integral of `f` over `[r0, r0 + h]` with a Gauss rule sized for `|h| / r0`,
    /// or `None` when the step is too long for a single panel.
    fn short_integral<F: Fn(f64) -> f64>(&self, f: F, r0: f64, h: f64) -> Option<f64> {
        let rel = h.abs() / r0;
        let rule = if rel <= 1e-3 {
            &self.gl[0]
        } else if rel <= 0.05 {
            &self.gl[1]
        } else if rel <= 0.25 {
            &self.gl[2]
        } else {
            return None;
        };
        let c = r0 + 0.5 * h;
        let half = 0.5 * h;
        let mut acc = crate::quad1d::CompensatedSum::new();
        for (x, w) in rule.0.iter().zip(&rule.1) {
            acc.add(w * f(c + half * x));
        }
        Some(acc.value() * half)
    }

    /// `phi(r0 + h) - phi(r0)` without cancellation for small `h`.
    pub fn phi_increment(&self, r0: f64, h: f64) -> f64 {
        if h == 0.0 {
            return 0.0;
        }
        self.short_integral(|t| self.phi_prime(t), r0, h)
            .unwrap_or_else(|| self.phi(r0 + h) - self.phi(r0))
    }

    /// `psi(r0 + h) - psi(r0)` without cancellation for small `h`.
    pub fn psi_increment(&self, r0: f64, h: f64) -> f64 {
        if h == 0.0 {
            return 0.0;
        }
        self.short_integral(|t| t * self.phi_prime(t), r0, h)
            .unwrap_or_else(|| self.psi(r0 + h) - self.psi(r0))
    }

    /// `phi'(r0 + h) - phi'(r0)` without cancellation for small `h`.
    pub fn phi_prime_increment(&self, r0: f64, h: f64) -> f64 {
        if h == 0.0 {
            return 0.0;
        }
        self.short_integral(|t| self.phi_second(t), r0, h)
            .unwrap_or_else(|| self.phi_prime(r0 + h) - self.phi_prime(r0))
    }

    /// Riemannian volume of the geodesic ball of radius `radius`.
    pub fn ball_volume(&self, radius: f64) -> f64 {
        sphere_area(self.n) * self.phi(radius)
    }

    /// Riemannian perimeter of the geodesic ball of radius `radius`.
    pub fn ball_perimeter(&self, radius: f64) -> f64 {
        sphere_area(self.n) * self.phi_prime(radius)
    }
}

pub fn volume_density(space: SpaceSpec, r: f64) -> f64 {
    space.kernels().volume_density(r)
}

pub fn phi_deriv(space: SpaceSpec, r: f64, k: u32) -> Result<f64> {
    space.kernels().phi_deriv(r, k)
}

pub fn psi(space: SpaceSpec, r: f64) -> f64 {
    space.kernels().psi(r)
}

pub fn ball_volume(space: SpaceSpec, radius: f64) -> f64 {
    space.kernels().ball_volume(radius)
}

pub fn ball_perimeter(space: SpaceSpec, radius: f64) -> f64 {
    space.kernels().ball_perimeter(radius)
}
