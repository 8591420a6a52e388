//! Band-limited radial perturbations of a geodesic sphere and their normalization.
//!
//! The boundary of the perturbed set is `{ R (1 + rho(phi)) phi : phi in S^{n-1} }`
//! in normal coordinates, with `rho` a finite combination of harmonic
//! polynomials restricted to the unit sphere.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonic::{basis_element, harmonic_basis};
use crate::poly::{CompiledPolynomial, Polynomial};
use crate::quad1d::CompensatedSum;
use crate::quadrature::{chunked_sum, SphereRule};
use crate::space::{sphere_area, SpaceSpec};

/// Default number of grid points for sup-norm estimates.
pub const DEFAULT_GRID_DENSITY: usize = 4096;

/// Safety factor applied to grid-based sup-norm estimates.
pub const SUP_SAFETY_FACTOR: f64 = 1.05;

const GRID_SEED: u64 = 0x5eed_0f_5e11;
const MAX_NORMALIZATION_ITERATIONS: usize = 100;

/// One harmonic coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub degree: usize,
    pub index: usize,
    pub coeff: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PerturbationFile {
    space: SpaceSpec,
    #[serde(rename = "R")]
    radius: f64,
    terms: Vec<Term>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

/// Radial perturbation `rho` of the geodesic sphere of radius `R`.
#[derive(Clone, Debug)]
pub struct Perturbation {
    space: SpaceSpec,
    radius: f64,
    coeffs: BTreeMap<(usize, usize), f64>,
    seed: Option<u64>,
    poly: Arc<CompiledPolynomial>,
}

impl PartialEq for Perturbation {
    fn eq(&self, other: &Self) -> bool {
        self.space == other.space && self.radius.to_bits() == other.radius.to_bits() && self.coeffs == other.coeffs && self.seed == other.seed
    }
}

impl Serialize for Perturbation {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        PerturbationFile {
            space: self.space,
            radius: self.radius,
            terms: self.terms(),
            seed: self.seed,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Perturbation {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let file = PerturbationFile::deserialize(deserializer)?;
        Perturbation::new(file.space, file.radius, &file.terms, file.seed).map_err(serde::de::Error::custom)
    }
}

fn compile(space: SpaceSpec, coeffs: &BTreeMap<(usize, usize), f64>) -> Result<CompiledPolynomial> {
    let n = space.n();
    let mut p = Polynomial::zero(n);
    for (&(degree, index), &c) in coeffs {
        p.add_scaled(&basis_element(n, degree, index)?, c);
    }
    Ok(p.compile())
}

impl Perturbation {
    /// Builds and validates a perturbation; rejects `rho <= -1` on the check grid.
    pub fn new(space: SpaceSpec, radius: f64, terms: &[Term], seed: Option<u64>) -> Result<Self> {
        let p = Self::new_unchecked(space, radius, terms, seed)?;
        p.check_admissible()?;
        Ok(p)
    }

    pub(crate) fn new_unchecked(space: SpaceSpec, radius: f64, terms: &[Term], seed: Option<u64>) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Precondition(format!("base radius must be positive (got {radius})")));
        }
        let mut coeffs = BTreeMap::new();
        for t in terms {
            if !t.coeff.is_finite() {
                return Err(Error::Precondition(format!(
                    "coefficient ({}, {}) is not finite",
                    t.degree, t.index
                )));
            }
            let dim = harmonic_basis(space.n(), t.degree)?.len();
            if t.index >= dim {
                return Err(Error::Precondition(format!(
                    "degree {} has {dim} basis elements, index {} requested",
                    t.degree, t.index
                )));
            }
            *coeffs.entry((t.degree, t.index)).or_insert(0.0) += t.coeff;
        }
        Self::from_map(space, radius, coeffs, seed)
    }

    fn from_map(space: SpaceSpec, radius: f64, coeffs: BTreeMap<(usize, usize), f64>, seed: Option<u64>) -> Result<Self> {
        let poly = Arc::new(compile(space, &coeffs)?);
        Ok(Perturbation {
            space,
            radius,
            coeffs,
            seed,
            poly,
        })
    }

    pub fn zero(space: SpaceSpec, radius: f64) -> Result<Self> {
        Self::new(space, radius, &[], None)
    }

    pub fn space(&self) -> SpaceSpec {
        self.space
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn terms(&self) -> Vec<Term> {
        self.coeffs
            .iter()
            .map(|(&(degree, index), &coeff)| Term { degree, index, coeff })
            .collect()
    }

    pub fn coefficient(&self, degree: usize, index: usize) -> f64 {
        self.coeffs.get(&(degree, index)).copied().unwrap_or(0.0)
    }

    /// Highest degree with a nonzero coefficient (0 for the zero perturbation).
    pub fn band_limit(&self) -> usize {
        self.coeffs
            .iter()
            .filter(|(_, c)| **c != 0.0)
            .map(|(k, _)| k.0)
            .max()
            .unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.values().all(|c| *c == 0.0)
    }

    /// `rho(phi)`.
    pub fn evaluate(&self, phi: &[f64]) -> f64 {
        self.poly.eval(phi)
    }

    /// `rho(phi)` and the round-sphere gradient at `phi`.
    pub fn value_and_gradient(&self, phi: &[f64]) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; phi.len()];
        let v = self.value_and_gradient_into(phi, &mut g);
        (v, g)
    }

    /// Writes the tangent gradient into `grad` and returns `rho(phi)`.
    pub fn value_and_gradient_into(&self, phi: &[f64], grad: &mut [f64]) -> f64 {
        let v = self.poly.eval_with_gradient(phi, grad);
        let radial: f64 = grad.iter().zip(phi).map(|(g, x)| g * x).sum();
        grad.iter_mut().zip(phi).for_each(|(g, x)| *g -= radial * x);
        v
    }

    /// Round-sphere gradient of `rho` at `phi`, tangent to the sphere.
    pub fn tangent_gradient(&self, phi: &[f64]) -> Vec<f64> {
        self.value_and_gradient(phi).1
    }

    /// Same shape with all coefficients multiplied by `t`.
    pub fn scaled(&self, t: f64) -> Result<Self> {
        let coeffs = self.coeffs.iter().map(|(k, c)| (*k, c * t)).collect();
        let p = Self::from_map(self.space, self.radius, coeffs, self.seed)?;
        p.check_admissible()?;
        Ok(p)
    }

    /// Adds `c0` to the constant coefficient and `c1[k]` to the coefficient of `x_k`.
    pub fn shifted(&self, c0: f64, c1: &[f64]) -> Result<Self> {
        let mut coeffs = self.coeffs.clone();
        if c0 != 0.0 {
            *coeffs.entry((0, 0)).or_insert(0.0) += c0;
        }
        for (k, a) in c1.iter().enumerate() {
            if *a != 0.0 {
                *coeffs.entry((1, k)).or_insert(0.0) += a;
            }
        }
        Self::from_map(self.space, self.radius, coeffs, self.seed)
    }

    /// Same `rho` over a sphere of another radius.
    pub fn with_radius(&self, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Precondition(format!("base radius must be positive (got {radius})")));
        }
        Ok(Perturbation { radius, ..self.clone() })
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    /// Values of `rho` at every node of `rule`, in node order.
    pub fn values_on(&self, rule: &SphereRule) -> Vec<f64> {
        (0..rule.len()).into_par_iter().map(|i| self.evaluate(rule.node(i))).collect()
    }

    fn check_admissible(&self) -> Result<()> {
        let grid = sphere_grid(self.space.n(), DEFAULT_GRID_DENSITY);
        let min = grid
            .par_chunks(self.space.n())
            .map(|x| self.evaluate(x))
            .reduce(|| f64::INFINITY, f64::min);
        if !(min > -1.0) {
            return Err(Error::Inadmissible(format!("rho reaches {min} <= -1 on the check grid")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }
}

/// Deterministic quasi-uniform point set on `S^{n-1}`, flattened row-major.
///
/// Equally spaced on the circle, a Fibonacci lattice on `S^2`, and seeded
/// Gaussian directions in higher dimension.
pub fn sphere_grid(n: usize, count: usize) -> Arc<Vec<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Vec<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(g) = cache.lock().expect("grid cache poisoned").get(&(n, count)) {
        return g.clone();
    }
    let grid = Arc::new(build_grid(n, count));
    cache.lock().expect("grid cache poisoned").entry((n, count)).or_insert(grid).clone()
}

fn build_grid(n: usize, count: usize) -> Vec<f64> {
    use std::f64::consts::PI;
    let mut out = Vec::with_capacity(n * count);
    match n {
        2 => {
            for j in 0..count {
                let t = 2.0 * PI * j as f64 / count as f64;
                out.extend([t.cos(), t.sin()]);
            }
        }
        3 => {
            let golden = PI * (3.0 - 5f64.sqrt());
            for j in 0..count {
                let z = 1.0 - (2.0 * j as f64 + 1.0) / count as f64;
                let r = (1.0 - z * z).sqrt();
                let t = golden * j as f64;
                out.extend([r * t.cos(), r * t.sin(), z]);
            }
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(GRID_SEED ^ n as u64);
            let mut x = vec![0.0; n];
            for _ in 0..count {
                x.iter_mut().for_each(|c| *c = rng.sample(StandardNormal));
                let norm = x.iter().map(|c| c * c).sum::<f64>().sqrt();
                out.extend(x.iter().map(|c| c / norm));
            }
        }
    }
    out
}

/// Maximize `f` over the sphere: grid scan, then coordinate pattern search from the best candidates.
fn sphere_max<F>(n: usize, density: usize, f: F) -> f64
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let grid = sphere_grid(n, density);
    let values: Vec<f64> = grid.par_chunks(n).map(&f).collect();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|a, b| values[*b].total_cmp(&values[*a]).then(a.cmp(b)));
    let spacing = (sphere_area(n) / density as f64).powf(1.0 / (n as f64 - 1.0)).min(1.0);
    let starts: Vec<usize> = order.into_iter().take(8).collect();
    let refined: Vec<f64> = starts
        .par_iter()
        .map(|&i| pattern_search(&f, grid[i * n..(i + 1) * n].to_vec(), values[i], spacing))
        .collect();
    refined.into_iter().fold(values.iter().copied().fold(0.0, f64::max), f64::max)
}

fn pattern_search<F: Fn(&[f64]) -> f64>(f: &F, mut x: Vec<f64>, mut fx: f64, mut h: f64) -> f64 {
    let n = x.len();
    let mut y = vec![0.0; n];
    while h > 1e-7 {
        let mut improved = false;
        for i in 0..n {
            for s in [1.0, -1.0] {
                y.copy_from_slice(&x);
                y[i] += s * h;
                let norm = y.iter().map(|c| c * c).sum::<f64>().sqrt();
                y.iter_mut().for_each(|c| *c /= norm);
                let fy = f(&y);
                if fy > fx {
                    fx = fy;
                    x.copy_from_slice(&y);
                    improved = true;
                }
            }
        }
        if !improved {
            h *= 0.5;
        }
    }
    fx
}

/// Estimate of `sup (|rho| + |grad rho|)`, inflated by [`SUP_SAFETY_FACTOR`].
pub fn c1_norm(p: &Perturbation, grid_density: usize) -> Result<f64> {
    if grid_density < 1000 {
        return Err(Error::Precondition(format!("grid density must be at least 1000 (got {grid_density})")));
    }
    if p.is_zero() {
        return Ok(0.0);
    }
    let n = p.space().n();
    let raw = sphere_max(n, grid_density, |x| {
        let mut g = [0.0; 16];
        let g = &mut g[..n];
        let v = p.value_and_gradient_into(x, g);
        v.abs() + g.iter().map(|c| c * c).sum::<f64>().sqrt()
    });
    Ok(SUP_SAFETY_FACTOR * raw)
}

/// Estimate of `sup |rho|`, inflated by [`SUP_SAFETY_FACTOR`].
pub fn c0_norm(p: &Perturbation, grid_density: usize) -> Result<f64> {
    if grid_density < 1000 {
        return Err(Error::Precondition(format!("grid density must be at least 1000 (got {grid_density})")));
    }
    if p.is_zero() {
        return Ok(0.0);
    }
    Ok(SUP_SAFETY_FACTOR * sphere_max(p.space().n(), grid_density, |x| p.evaluate(x).abs()))
}

/// Estimate of `max(sup rho, 0)`, inflated by [`SUP_SAFETY_FACTOR`].
pub fn max_value(p: &Perturbation, grid_density: usize) -> Result<f64> {
    if grid_density < 1000 {
        return Err(Error::Precondition(format!("grid density must be at least 1000 (got {grid_density})")));
    }
    if p.is_zero() {
        return Ok(0.0);
    }
    Ok(SUP_SAFETY_FACTOR * sphere_max(p.space().n(), grid_density, |x| p.evaluate(x)))
}

/// Volume defect `int phi(R(1+rho)) - n w_n phi(R)` from per-node increments,
/// together with the sum of absolute weighted increments.
fn volume_defect_from(space: SpaceSpec, radius: f64, rule: &SphereRule, rho: &[f64], shift: f64) -> (f64, f64, f64) {
    let k = space.kernels();
    let w = rule.weights();
    let incr: Vec<(f64, f64)> = rho
        .par_iter()
        .zip(w)
        .map(|(r, wi)| {
            let h = radius * (r + shift);
            (wi * k.phi_increment(radius, h), wi * k.phi_prime(radius + h) * radius)
        })
        .collect();
    let values: Vec<f64> = incr.iter().map(|v| v.0).collect();
    let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let derivs: Vec<f64> = incr.iter().map(|v| v.1).collect();
    (chunked_sum(&values), chunked_sum(&abs), chunked_sum(&derivs))
}

/// Solve for the constant shift that restores the ball volume.
fn volume_shift(space: SpaceSpec, radius: f64, rule: &SphereRule, rho: &[f64]) -> Result<f64> {
    let min_rho = rho.iter().copied().fold(f64::INFINITY, f64::min);
    let mut lo = -1.0 - min_rho + 1e-9;
    let mut hi = 1.0;
    let eval = |c: f64| volume_defect_from(space, radius, rule, rho, c);
    let (f_lo, _, _) = eval(lo);
    let (f_hi, _, _) = eval(hi);
    if !(f_lo < 0.0 && f_hi > 0.0) {
        return Err(Error::Normalization(format!(
            "volume shift is not bracketed by [{lo}, {hi}] (defects {f_lo:e}, {f_hi:e})"
        )));
    }
    let mut c = 0.0f64.clamp(lo, hi);
    let mut best = (f64::INFINITY, c);
    for _ in 0..MAX_NORMALIZATION_ITERATIONS {
        let (f, abs_sum, df) = eval(c);
        if f.abs() < best.0 {
            best = (f.abs(), c);
        }
        if f == 0.0 || f.abs() <= 4.0 * f64::EPSILON * abs_sum {
            return Ok(c);
        }
        if f < 0.0 {
            lo = lo.max(c);
        } else {
            hi = hi.min(c);
        }
        let newton = c - f / df;
        let next = if newton > lo && newton < hi && df > 0.0 { newton } else { 0.5 * (lo + hi) };
        if next == c {
            return Ok(c);
        }
        c = next;
    }
    let ball = sphere_area(space.n()) * space.kernels().phi(radius);
    if best.0 <= 1e-12 * ball {
        return Ok(best.1);
    }
    Err(Error::Normalization(format!(
        "volume iteration stalled with defect {:e}",
        best.0
    )))
}

/// Shifts the constant coefficient so that `int phi(R(1+rho)) = n w_n phi(R)` under `rule`.
pub fn volume_normalize(space: SpaceSpec, p: &Perturbation, rule: &SphereRule) -> Result<Perturbation> {
    check_compatible(space, p, rule)?;
    if p.is_zero() {
        return Ok(p.clone());
    }
    let rho = p.values_on(rule);
    let c = volume_shift(space, p.radius(), rule, &rho)?;
    let out = p.shifted(c, &[])?;
    out.check_admissible()?;
    Ok(out)
}

fn check_compatible(space: SpaceSpec, p: &Perturbation, rule: &SphereRule) -> Result<()> {
    if p.space() != space || rule.dim() != space.n() {
        return Err(Error::Precondition(format!(
            "perturbation on {} and rule of dimension {} do not match space {space}",
            p.space(),
            rule.dim()
        )));
    }
    Ok(())
}

/// Barycenter defect `int phi (psi(R(1+rho)) - psi(R))` per coordinate, the Jacobian
/// with respect to the degree-one coefficients and the scale `sum |terms|`.
fn barycenter_system(space: SpaceSpec, radius: f64, rule: &SphereRule, rho: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>, f64) {
    let n = space.n();
    let k = space.kernels();
    let per_node: Vec<(f64, f64)> = rho
        .par_iter()
        .map(|r| {
            let h = radius * r;
            let rb = radius + h;
            (k.psi_increment(radius, h), rb * k.phi_prime(rb) * radius)
        })
        .collect();
    let w = rule.weights();
    let mut defect = vec![0.0; n];
    let mut jac = vec![vec![0.0; n]; n];
    let mut scale = 0.0;
    for a in 0..n {
        let vals: Vec<f64> = (0..rule.len()).map(|i| w[i] * rule.node(i)[a] * per_node[i].0).collect();
        scale += chunked_sum(&vals.iter().map(|v| v.abs()).collect::<Vec<_>>());
        defect[a] = chunked_sum(&vals);
        for b in a..n {
            let vals: Vec<f64> = (0..rule.len())
                .map(|i| w[i] * rule.node(i)[a] * rule.node(i)[b] * per_node[i].1)
                .collect();
            let v = chunked_sum(&vals);
            jac[a][b] = v;
            jac[b][a] = v;
        }
    }
    (defect, jac, scale)
}

/// `int phi (psi(R(1+rho)) - psi(R))` under `rule`; zero exactly when the barycenter is at the origin.
pub fn barycenter_vector(space: SpaceSpec, p: &Perturbation, rule: &SphereRule) -> Result<Vec<f64>> {
    check_compatible(space, p, rule)?;
    let rho = p.values_on(rule);
    let k = space.kernels();
    let radius = p.radius();
    let incr: Vec<f64> = rho.par_iter().map(|r| k.psi_increment(radius, radius * r)).collect();
    let w = rule.weights();
    Ok((0..space.n())
        .map(|a| {
            let vals: Vec<f64> = (0..rule.len()).map(|i| w[i] * rule.node(i)[a] * incr[i]).collect();
            chunked_sum(&vals)
        })
        .collect())
}

/// Volume defect `int phi(R(1+rho)) - n w_n phi(R)` under `rule`.
pub fn volume_defect(space: SpaceSpec, p: &Perturbation, rule: &SphereRule) -> Result<f64> {
    check_compatible(space, p, rule)?;
    let rho = p.values_on(rule);
    Ok(volume_defect_from(space, p.radius(), rule, &rho, 0.0).0)
}

fn solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| a[i][j]);
    let rhs = nalgebra::DVector::from_column_slice(b);
    let x = m.lu().solve(&rhs)?;
    Some(x.iter().copied().collect())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Adjusts the degree-one coefficients (and the constant) until both the barycenter
/// and the volume constraints hold under `rule`.
pub fn barycenter_normalize(space: SpaceSpec, p: &Perturbation, rule: &SphereRule) -> Result<Perturbation> {
    check_compatible(space, p, rule)?;
    if p.is_zero() {
        return Ok(p.clone());
    }
    let radius = p.radius();
    let n = space.n();
    let target = 1e-10 * space.kernels().psi(radius) * sphere_area(n);
    let mut current = volume_normalize(space, p, rule)?;
    let (mut defect, mut jac, mut scale) = barycenter_system(space, radius, rule, &current.values_on(rule));
    let mut stalls = 0;
    for _ in 0..MAX_NORMALIZATION_ITERATIONS {
        let dnorm = norm(&defect);
        if dnorm == 0.0 || dnorm <= 8.0 * f64::EPSILON * scale {
            return Ok(current);
        }
        let rhs: Vec<f64> = defect.iter().map(|d| -d).collect();
        let step = solve(&jac, &rhs)
            .ok_or_else(|| Error::Normalization("singular barycenter Jacobian".into()))?;
        // damped Newton: halve the step until the defect decreases
        let mut damping = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let shift: Vec<f64> = step.iter().map(|s| damping * s).collect();
            let trial = current.shifted(0.0, &shift)?;
            let trial_rho = trial.values_on(rule);
            let c = volume_shift(space, radius, rule, &trial_rho)?;
            let trial = trial.shifted(c, &[])?;
            let trial_rho: Vec<f64> = trial_rho.iter().map(|r| r + c).collect();
            let sys = barycenter_system(space, radius, rule, &trial_rho);
            if norm(&sys.0) < dnorm {
                accepted = Some((trial, sys));
                break;
            }
            damping *= 0.5;
        }
        match accepted {
            Some((trial, sys)) => {
                current = trial;
                (defect, jac, scale) = sys;
                stalls = 0;
            }
            None => {
                // no decrease is possible: the defect is at rounding level
                stalls += 1;
                if dnorm <= target || stalls > 1 {
                    break;
                }
            }
        }
    }
    let dnorm = norm(&defect);
    if dnorm > target {
        return Err(Error::Normalization(format!(
            "barycenter defect {dnorm:e} above tolerance {target:e} after {MAX_NORMALIZATION_ITERATIONS} iterations"
        )));
    }
    current.check_admissible()?;
    Ok(current)
}

/// Seeded random perturbation on degrees `0..=band_limit`, scaled so that its
/// `C^1` norm does not exceed `amplitude`, then volume and barycenter normalized.
pub fn random_band_limited(
    space: SpaceSpec,
    radius: f64,
    band_limit: usize,
    amplitude: f64,
    seed: u64,
    rule: &SphereRule,
) -> Result<Perturbation> {
    if band_limit < 2 {
        return Err(Error::Precondition(format!("band limit must be at least 2 (got {band_limit})")));
    }
    if !(amplitude >= 0.0) {
        return Err(Error::Precondition(format!("amplitude must be nonnegative (got {amplitude})")));
    }
    if amplitude == 0.0 {
        return Ok(Perturbation::zero(space, radius)?.with_seed(Some(seed)));
    }
    let n = space.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut terms = Vec::new();
    for degree in 0..=band_limit {
        let dim = harmonic_basis(n, degree)?.len();
        for index in 0..dim {
            let z: f64 = rng.sample(StandardNormal);
            terms.push(Term { degree, index, coeff: z });
        }
    }
    let shape = Perturbation::new_unchecked(space, radius, &terms, Some(seed))?;
    let mut factor = amplitude / c1_norm(&shape, DEFAULT_GRID_DENSITY)?;
    for _ in 0..10 {
        let p = shape.scaled(factor)?;
        let p = barycenter_normalize(space, &p, rule)?;
        let c1 = c1_norm(&p, DEFAULT_GRID_DENSITY)?;
        if c1 <= amplitude {
            return Ok(p);
        }
        factor *= amplitude / c1 * (1.0 - 1e-3);
    }
    Err(Error::Normalization(format!(
        "could not keep the C1 norm below {amplitude} after normalization"
    )))
}

/// Mean of `rho` against the sphere measure, with compensated summation.
pub fn sphere_mean(p: &Perturbation, rule: &SphereRule) -> f64 {
    let values = p.values_on(rule);
    let s: CompensatedSum = values.iter().zip(rule.weights()).map(|(v, w)| v * w).collect();
    s.value() / rule.total_measure()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{monte_carlo_rule, product_rule};

    fn ch2() -> SpaceSpec {
        "CH2".parse().unwrap()
    }

    fn term(degree: usize, index: usize, coeff: f64) -> Term {
        Term { degree, index, coeff }
    }

    #[test]
    fn evaluation_examples() {
        let s = ch2();
        let zero = Perturbation::zero(s, 0.5).unwrap();
        assert_eq!(zero.evaluate(&[1.0, 0.0, 0.0, 0.0]), 0.0);
        let p = Perturbation::new(s, 0.5, &[term(1, 0, 0.1)], None).unwrap();
        assert_eq!(p.evaluate(&[1.0, 0.0, 0.0, 0.0]), 0.1);
        // x1^2 - x2^2 built from the monomial basis
        let mut q = Polynomial::monomial(vec![2, 0, 0, 0], 1.0);
        q.add_term(vec![0, 2, 0, 0], -1.0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(q.eval(&[h, h, 0.0, 0.0]).abs() < 1e-16);
    }

    #[test]
    fn degree_one_gradient_is_projection() {
        let s = ch2();
        let p = Perturbation::new(s, 0.5, &[term(1, 0, 1.0)], None).unwrap();
        let phi = [0.5, 0.5, 0.5, 0.5];
        let g = p.tangent_gradient(&phi);
        let expected = [1.0 - 0.25, -0.25, -0.25, -0.25];
        for (a, b) in g.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let c = Perturbation::new(s, 0.5, &[term(0, 0, 0.3)], None).unwrap();
        assert!(c.tangent_gradient(&phi).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn rejects_inadmissible_and_malformed_terms() {
        let s = ch2();
        assert!(matches!(
            Perturbation::new(s, 0.5, &[term(0, 0, -1.5)], None),
            Err(Error::Inadmissible(_))
        ));
        assert!(Perturbation::new(s, 0.5, &[term(1, 7, 0.1)], None).is_err());
        assert!(Perturbation::new(s, -0.5, &[], None).is_err());
        assert!(Perturbation::new(s, 0.5, &[term(2, 0, f64::NAN)], None).is_err());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let s = ch2();
        let p = Perturbation::new(
            s,
            0.5,
            &[term(0, 0, 0.1 + 0.2), term(2, 3, -1.0 / 3.0), term(3, 1, 1e-17)],
            Some(7),
        )
        .unwrap();
        let text = p.to_json().unwrap();
        let back = Perturbation::from_json(&text).unwrap();
        assert_eq!(back, p);
        for (a, b) in back.terms().iter().zip(p.terms()) {
            assert_eq!(a.coeff.to_bits(), b.coeff.to_bits());
        }
        assert!(text.contains("\"R\""));
    }

    #[test]
    fn json_errors_carry_paths() {
        let err = Perturbation::from_json(r#"{"space":{"algebra":"C","m":2},"R":0.5,"terms":[{"degree":2,"index":0,"coef":1}]}"#)
            .unwrap_err();
        match err {
            Error::Config { path, .. } => assert!(path.starts_with("terms[0]"), "{path}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn c1_norm_examples() {
        let s = ch2();
        let zero = Perturbation::zero(s, 0.5).unwrap();
        assert_eq!(c1_norm(&zero, 2000).unwrap(), 0.0);
        let c = 0.2;
        let p = Perturbation::new(s, 0.5, &[term(1, 0, c)], None).unwrap();
        // on a great circle through e1: |cos t| + |sin t|, maximal at t = pi/4
        let exact = c * 2f64.sqrt();
        let est = c1_norm(&p, DEFAULT_GRID_DENSITY).unwrap();
        assert!(est >= exact && est <= SUP_SAFETY_FACTOR * exact * (1.0 + 1e-9), "{est} vs {exact}");
        let p2 = p.scaled(2.0).unwrap();
        assert_eq!(c1_norm(&p2, DEFAULT_GRID_DENSITY).unwrap(), 2.0 * est);
        assert!(c1_norm(&p, 10).is_err());
    }

    #[test]
    fn volume_normalize_examples() {
        let s = ch2();
        let rule = product_rule(4, 8).unwrap();
        let p = Perturbation::new(s, 0.5, &[term(0, 0, 0.1)], None).unwrap();
        let q = volume_normalize(s, &p, &rule).unwrap();
        assert!(q.coefficient(0, 0).abs() < 1e-15);
        let zero = Perturbation::zero(s, 0.5).unwrap();
        assert_eq!(volume_normalize(s, &zero, &rule).unwrap(), zero);
    }

    #[test]
    fn volume_shift_is_second_order_and_stable_across_rules() {
        // x1^2 - x2^2 is harmonic; expand it in the orthonormal degree-2 basis by projection
        let s = ch2();
        let mut shape = Polynomial::monomial(vec![2, 0, 0, 0], 0.05);
        shape.add_term(vec![0, 2, 0, 0], -0.05);
        let rule_hi = product_rule(4, 16).unwrap();
        let basis = harmonic_basis(4, 2).unwrap();
        let area = sphere_area(4);
        let terms: Vec<Term> = basis
            .iter()
            .map(|e| {
                let c = rule_hi.integrate(|x| shape.eval(x) * e.polynomial.eval(x)).unwrap().value / area;
                term(2, e.index, c)
            })
            .collect();
        let p = Perturbation::new(s, 0.5, &terms, None).unwrap();
        let a = volume_normalize(s, &p, &product_rule(4, 8).unwrap()).unwrap().coefficient(0, 0);
        let b = volume_normalize(s, &p, &rule_hi).unwrap().coefficient(0, 0);
        assert!(a < 0.0 && a.abs() < 0.05 * 0.05 * 10.0, "{a}");
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn normalizations_meet_both_constraints() {
        let s = ch2();
        let rule = product_rule(4, 8).unwrap();
        let p = Perturbation::new(s, 0.5, &[term(1, 0, 0.1), term(2, 3, 0.05), term(3, 2, -0.02)], None).unwrap();
        let q = barycenter_normalize(s, &p, &rule).unwrap();
        let k = s.kernels();
        let vol_tol = 1e-12 * sphere_area(4) * k.phi(0.5);
        let bar_tol = 1e-10 * k.psi(0.5) * sphere_area(4);
        assert!(volume_defect(s, &q, &rule).unwrap().abs() <= vol_tol);
        assert!(norm(&barycenter_vector(s, &q, &rule).unwrap()) <= bar_tol);
        assert!(q.coefficient(1, 0).abs() < 0.01);
        let again = volume_normalize(s, &q, &rule).unwrap();
        assert!((again.coefficient(0, 0) - q.coefficient(0, 0)).abs() < 1e-15);
    }

    #[test]
    fn even_perturbations_are_already_barycentric() {
        let s = ch2();
        let rule = product_rule(4, 8).unwrap();
        let p = Perturbation::new(s, 0.5, &[term(2, 1, 0.05), term(4, 0, 0.01)], None).unwrap();
        let v = volume_normalize(s, &p, &rule).unwrap();
        assert!(norm(&barycenter_vector(s, &v, &rule).unwrap()) < 1e-16);
        let b = barycenter_normalize(s, &p, &rule).unwrap();
        for k in 0..4 {
            assert_eq!(b.coefficient(1, k), 0.0);
        }
    }

    #[test]
    fn random_band_limited_example() {
        let s = ch2();
        let rule = product_rule(4, 12).unwrap();
        let p = random_band_limited(s, 0.5, 4, 0.05, 1, &rule).unwrap();
        let c1 = c1_norm(&p, DEFAULT_GRID_DENSITY).unwrap();
        assert!(c1 > 0.0 && c1 <= 0.05);
        let vol = volume_defect(s, &p, &rule).unwrap();
        assert!(vol.abs() <= 1e-12 * sphere_area(4) * s.kernels().phi(0.5));
        let again = random_band_limited(s, 0.5, 4, 0.05, 1, &rule).unwrap();
        assert_eq!(again, p);
        let zero = random_band_limited(s, 0.5, 4, 0.0, 1, &rule).unwrap();
        assert!(zero.is_zero());
        assert!(random_band_limited(s, 0.5, 1, 0.05, 1, &rule).is_err());
    }

    #[test]
    fn monte_carlo_normalization_in_dimension_sixteen() {
        let s: SpaceSpec = "OH2".parse().unwrap();
        let rule = monte_carlo_rule(16, 20_000, 3).unwrap();
        let p = random_band_limited(s, 0.5, 2, 1e-3, 5, &rule).unwrap();
        let bar = barycenter_vector(s, &p, &rule).unwrap();
        assert!(norm(&bar) <= 1e-10 * s.kernels().psi(0.5) * sphere_area(16));
    }

    #[test]
    fn sphere_grids_are_unit_and_cached() {
        for n in [2, 3, 4, 16] {
            let g = sphere_grid(n, 1000);
            assert_eq!(g.len(), 1000 * n);
            for x in g.chunks(n) {
                assert!((x.iter().map(|c| c * c).sum::<f64>() - 1.0).abs() < 1e-14);
            }
            assert!(Arc::ptr_eq(&g, &sphere_grid(n, 1000)));
        }
    }
}
