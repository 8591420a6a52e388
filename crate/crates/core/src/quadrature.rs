//! Integration over the unit sphere `S^{n-1}`.
//!
//! Two rule families: a tensor product of Gauss-Gegenbauer rules in polar
//! angles (polynomially exact, `n <= 8`) and antithetic Monte Carlo.

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad1d::CompensatedSum;
use crate::space::sphere_area;

/// Largest dimension accepted by [`product_rule`].
pub const MAX_PRODUCT_DIM: usize = 8;

/// Smallest node count accepted by [`monte_carlo_rule`].
pub const MIN_MONTE_CARLO_NODES: usize = 1000;

/// Nodes per summation chunk; fixes the reduction tree independent of thread count.
const CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    ProductGauss,
    MonteCarlo,
}

impl RuleKind {
    fn as_str(self) -> &'static str {
        match self {
            RuleKind::ProductGauss => "product-gauss",
            RuleKind::MonteCarlo => "monte-carlo",
        }
    }
}

/// A quadrature rule on `S^{n-1}` with nodes stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SphereRule {
    n: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    kind: RuleKind,
    exact_degree: Option<usize>,
    seed: Option<u64>,
}

/// Integral value with a Monte Carlo standard error when applicable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: Option<f64>,
}

/// How to build a rule; used by configuration files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RuleSpec {
    Product { level: usize },
    MonteCarlo { count: usize, seed: u64 },
}

impl RuleSpec {
    pub fn build(&self, n: usize) -> Result<SphereRule> {
        match *self {
            RuleSpec::Product { level } => product_rule(n, level),
            RuleSpec::MonteCarlo { count, seed } => monte_carlo_rule(n, count, seed),
        }
    }

    /// Product rule when the dimension allows it, otherwise Monte Carlo.
    pub fn default_for(n: usize) -> RuleSpec {
        match n {
            0..=3 => RuleSpec::Product { level: 16 },
            4 => RuleSpec::Product { level: 12 },
            5..=6 => RuleSpec::Product { level: 8 },
            7..=MAX_PRODUCT_DIM => RuleSpec::Product { level: 5 },
            _ => RuleSpec::MonteCarlo { count: 200_000, seed: 0 },
        }
    }
}

/// `Gamma(k / 2)` for integer `k >= 1`.
pub fn gamma_half(k: usize) -> f64 {
    assert!(k >= 1, "gamma_half needs k >= 1");
    let mut g = if k % 2 == 0 { 1.0 } else { std::f64::consts::PI.sqrt() };
    let mut x = if k % 2 == 0 { 1.0 } else { 0.5 };
    while 2.0 * x < k as f64 {
        g *= x;
        x += 1.0;
    }
    g
}

/// Exact `int_{S^{n-1}} x^alpha` for a multi-index `alpha` of length `n`.
pub fn sphere_moment(alpha: &[usize]) -> f64 {
    if alpha.iter().any(|a| a % 2 == 1) {
        return 0.0;
    }
    let total: usize = alpha.iter().sum();
    let num: f64 = alpha.iter().map(|a| gamma_half(a + 1)).product();
    2.0 * num / gamma_half(total + alpha.len())
}

/// Gauss rule for the weight `(1 - t^2)^a` on `[-1, 1]` (Golub-Welsch).
pub fn gauss_gegenbauer(points: usize, a: f64) -> (Vec<f64>, Vec<f64>) {
    let lambda = a + 0.5;
    let mut jacobi = DMatrix::<f64>::zeros(points, points);
    for j in 1..points {
        let jf = j as f64;
        let beta = jf * (jf + 2.0 * lambda - 1.0) / (4.0 * (jf + lambda) * (jf + lambda - 1.0));
        jacobi[(j, j - 1)] = beta.sqrt();
        jacobi[(j - 1, j)] = beta.sqrt();
    }
    // int (1-t^2)^a dt = sqrt(pi) Gamma(a+1) / Gamma(a+3/2)
    let mu0 = std::f64::consts::PI.sqrt() * gamma_half((2.0 * a + 2.0).round() as usize)
        / gamma_half((2.0 * a + 3.0).round() as usize);
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..points)
        .map(|i| (eig.eigenvalues[i], mu0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    // enforce the reflection symmetry of the weight exactly
    let mut nodes = vec![0.0; points];
    let mut weights = vec![0.0; points];
    for i in 0..points {
        let j = points - 1 - i;
        nodes[i] = 0.5 * (pairs[i].0 - pairs[j].0);
        weights[i] = 0.5 * (pairs[i].1 + pairs[j].1);
    }
    if points % 2 == 1 {
        nodes[points / 2] = 0.0;
    }
    (nodes, weights)
}

fn product_nodes(k: usize, level: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    if k == 2 {
        let count = 2 * level;
        let w = 2.0 * std::f64::consts::PI / count as f64;
        let nodes = (0..count)
            .map(|j| {
                let theta = std::f64::consts::PI * (j as f64 + 0.5) / level as f64;
                vec![theta.cos(), theta.sin()]
            })
            .collect();
        return (nodes, vec![w; count]);
    }
    let (inner_nodes, inner_weights) = product_nodes(k - 1, level);
    let (ts, tw) = gauss_gegenbauer(level, (k as f64 - 3.0) / 2.0);
    let mut nodes = Vec::with_capacity(ts.len() * inner_nodes.len());
    let mut weights = Vec::with_capacity(nodes.capacity());
    for (t, wt) in ts.iter().zip(&tw) {
        let s = (1.0 - t * t).sqrt();
        for (y, wy) in inner_nodes.iter().zip(&inner_weights) {
            let mut x = Vec::with_capacity(k);
            x.push(*t);
            x.extend(y.iter().map(|c| s * c));
            nodes.push(x);
            weights.push(wt * wy);
        }
    }
    (nodes, weights)
}

/// Tensor-product rule on `S^{n-1}`, exact for polynomials of degree `2 level - 1`.
pub fn product_rule(n: usize, level: usize) -> Result<SphereRule> {
    if n > MAX_PRODUCT_DIM {
        return Err(Error::ProductRuleDimension(n));
    }
    if n < 2 || level < 1 {
        return Err(Error::Precondition(format!(
            "product rule needs n >= 2 and level >= 1 (got n = {n}, level = {level})"
        )));
    }
    let (nodes, mut weights) = product_nodes(n, level);
    let total: CompensatedSum = weights.iter().copied().collect();
    let scale = sphere_area(n) / total.value();
    weights.iter_mut().for_each(|w| *w *= scale);
    Ok(SphereRule {
        n,
        nodes: nodes.into_iter().flatten().collect(),
        weights,
        kind: RuleKind::ProductGauss,
        exact_degree: Some(2 * level - 1),
        seed: None,
    })
}

/// Equal-weight Monte Carlo rule with antithetic node pairs `(x, -x)`.
pub fn monte_carlo_rule(n: usize, count: usize, seed: u64) -> Result<SphereRule> {
    if n < 2 {
        return Err(Error::Precondition(format!("need n >= 2 (got {n})")));
    }
    if count < MIN_MONTE_CARLO_NODES || count % 2 == 1 {
        return Err(Error::Precondition(format!(
            "Monte Carlo rules need an even node count of at least {MIN_MONTE_CARLO_NODES} (got {count})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = Vec::with_capacity(count * n);
    let mut x = vec![0.0; n];
    for _ in 0..count / 2 {
        let norm = loop {
            x.iter_mut().for_each(|c| *c = rng.sample(StandardNormal));
            let norm = x.iter().map(|c| c * c).sum::<f64>().sqrt();
            if norm > 1e-300 {
                break norm;
            }
        };
        nodes.extend(x.iter().map(|c| c / norm));
        nodes.extend(x.iter().map(|c| -c / norm));
    }
    Ok(SphereRule {
        n,
        nodes,
        weights: vec![sphere_area(n) / count as f64; count],
        kind: RuleKind::MonteCarlo,
        exact_degree: None,
        seed: Some(seed),
    })
}

/// Deterministic compensated sum of `values`, parallel over fixed chunks.
pub fn chunked_sum(values: &[f64]) -> f64 {
    let partials: Vec<f64> = values
        .par_chunks(CHUNK)
        .map(|c| c.iter().copied().collect::<CompensatedSum>().value())
        .collect();
    partials.into_iter().collect::<CompensatedSum>().value()
}

impl SphereRule {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn kind(&self) -> RuleKind {
        self.kind
    }

    pub fn exact_degree(&self) -> Option<usize> {
        self.exact_degree
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.n..(i + 1) * self.n]
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.nodes.chunks_exact(self.n)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_measure(&self) -> f64 {
        self.weights.iter().copied().collect::<CompensatedSum>().value()
    }

    /// Evaluate `f` at every node, in parallel, keeping node order.
    pub fn evaluate<F>(&self, f: F) -> Result<Vec<f64>>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let values: Vec<f64> = self.nodes.par_chunks(self.n).map(&f).collect();
        if let Some(node) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node });
        }
        Ok(values)
    }

    /// `sum_i w_i f(x_i)`.
    pub fn integrate<F>(&self, f: F) -> Result<Estimate>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let values = self.evaluate(f)?;
        self.integrate_values(&values)
    }

    /// Integrate precomputed node values (in node order).
    pub fn integrate_values(&self, values: &[f64]) -> Result<Estimate> {
        assert_eq!(values.len(), self.len(), "one value per node");
        if let Some(node) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node });
        }
        let weighted: Vec<f64> = values.par_iter().zip(&self.weights).map(|(v, w)| v * w).collect();
        let value = chunked_sum(&weighted);
        let stderr = match self.kind {
            RuleKind::ProductGauss => None,
            RuleKind::MonteCarlo => Some(self.pair_stderr(values)),
        };
        Ok(Estimate { value, stderr })
    }

    /// Standard error from the antithetic pair means.
    fn pair_stderr(&self, values: &[f64]) -> f64 {
        let pairs: Vec<f64> = values.chunks_exact(2).map(|p| 0.5 * (p[0] + p[1])).collect();
        let m = pairs.len() as f64;
        let mean = chunked_sum(&pairs) / m;
        let dev: Vec<f64> = pairs.par_iter().map(|p| (p - mean).powi(2)).collect();
        let var = chunked_sum(&dev) / (m - 1.0);
        self.total_measure() * (var / m).sqrt()
    }

    /// Plain-text serialization: one header line, then `x_1 ... x_n w` per node.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.len() * self.n * 24);
        let exact = self.exact_degree.map_or("-".to_string(), |d| d.to_string());
        let seed = self.seed.map_or("-".to_string(), |s| s.to_string());
        writeln!(
            out,
            "# sphere-rule kind={} n={} exact_degree={} seed={} count={}",
            self.kind.as_str(),
            self.n,
            exact,
            seed,
            self.len()
        )
        .expect("writing to a String");
        for (x, w) in self.nodes().zip(&self.weights) {
            for c in x {
                write!(out, "{c} ").expect("writing to a String");
            }
            writeln!(out, "{w}").expect("writing to a String");
        }
        out
    }
}

impl FromStr for SphereRule {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|h| h.strip_prefix("# sphere-rule "))
            .ok_or_else(|| Error::Parse("missing `# sphere-rule` header".into()))?;
        let mut kind = None;
        let mut n = None;
        let mut exact_degree = None;
        let mut seed = None;
        let mut count = None;
        for field in header.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("malformed header field `{field}`")))?;
            let bad = |_| Error::Parse(format!("bad value for `{key}`: `{value}`"));
            match key {
                "kind" => {
                    kind = Some(match value {
                        "product-gauss" => RuleKind::ProductGauss,
                        "monte-carlo" => RuleKind::MonteCarlo,
                        _ => return Err(Error::Parse(format!("unknown rule kind `{value}`"))),
                    })
                }
                "n" => n = Some(value.parse::<usize>().map_err(bad)?),
                "exact_degree" if value != "-" => exact_degree = Some(value.parse::<usize>().map_err(bad)?),
                "seed" if value != "-" => seed = Some(value.parse::<u64>().map_err(bad)?),
                "count" => count = Some(value.parse::<usize>().map_err(bad)?),
                _ => {}
            }
        }
        let n = n.ok_or_else(|| Error::Parse("header lacks `n`".into()))?;
        let kind = kind.ok_or_else(|| Error::Parse("header lacks `kind`".into()))?;
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 2)))?;
            if values.len() != n + 1 {
                return Err(Error::Parse(format!(
                    "line {}: expected {} numbers, found {}",
                    lineno + 2,
                    n + 1,
                    values.len()
                )));
            }
            nodes.extend_from_slice(&values[..n]);
            weights.push(values[n]);
        }
        if let Some(c) = count {
            if c != weights.len() {
                return Err(Error::Parse(format!("header says {c} nodes, found {}", weights.len())));
            }
        }
        Ok(SphereRule {
            n,
            nodes,
            weights,
            kind,
            exact_degree,
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::unit_ball_volume;
    use std::f64::consts::PI;

    fn monomial(alpha: &[usize]) -> impl Fn(&[f64]) -> f64 + Sync + '_ {
        move |x: &[f64]| x.iter().zip(alpha).map(|(c, a)| c.powi(*a as i32)).product()
    }

    fn multi_indices(n: usize, degree: usize) -> Vec<Vec<usize>> {
        if n == 1 {
            return vec![vec![degree]];
        }
        let mut out = Vec::new();
        for first in 0..=degree {
            for mut rest in multi_indices(n - 1, degree - first) {
                rest.insert(0, first);
                out.push(rest);
            }
        }
        out
    }

    #[test]
    fn gamma_half_matches_statrs() {
        for k in 1..40 {
            let expected = statrs::function::gamma::gamma(k as f64 / 2.0);
            // the Lanczos approximation in statrs is good to roughly 1e-12
            assert!((gamma_half(k) / expected - 1.0).abs() < 1e-11, "k={k}");
        }
    }

    #[test]
    fn gegenbauer_rule_integrates_weighted_monomials() {
        for a in [0.0, 0.5, 1.0, 2.5] {
            let (t, w) = gauss_gegenbauer(6, a);
            for deg in (0..12).step_by(2) {
                let q: f64 = t.iter().zip(&w).map(|(x, wi)| wi * x.powi(deg)).sum();
                // int t^deg (1-t^2)^a = B((deg+1)/2, a+1)
                let exact = gamma_half(deg as usize + 1) * gamma_half((2.0 * a + 2.0) as usize)
                    / gamma_half(deg as usize + (2.0 * a + 3.0) as usize);
                assert!((q / exact - 1.0).abs() < 1e-13, "a={a} deg={deg}");
            }
        }
    }

    #[test]
    fn product_rule_basic_moments() {
        let rule = product_rule(4, 6).unwrap();
        assert_eq!(rule.len(), 2 * 6usize.pow(3));
        assert!((rule.integrate(|_| 1.0).unwrap().value - 2.0 * PI * PI).abs() < 1e-13);
        let x2 = rule.integrate(|x| x[2] * x[2]).unwrap().value;
        assert!((x2 - 2.0 * PI * PI / 4.0).abs() < 1e-13);
        let x1x2 = rule.integrate(|x| x[0] * x[0] * x[1] * x[1]).unwrap().value;
        assert!((x1x2 - 2.0 * PI * PI / 24.0).abs() < 1e-13);
        for x in rule.nodes() {
            let norm: f64 = x.iter().map(|c| c * c).sum();
            assert!((norm.sqrt() - 1.0).abs() < 1e-14);
        }
        assert_eq!(rule.integrate(|_| 1.0).unwrap().stderr, None);
    }

    #[test]
    fn product_rule_exactness_against_moment_formula() {
        for n in 2..=5 {
            let level = 4;
            let rule = product_rule(n, level).unwrap();
            for degree in 0..=rule.exact_degree().unwrap() {
                for alpha in multi_indices(n, degree) {
                    let q = rule.integrate(monomial(&alpha)).unwrap().value;
                    let exact = sphere_moment(&alpha);
                    assert!(
                        (q - exact).abs() <= 1e-12 * exact.abs().max(sphere_area(n)),
                        "n={n} alpha={alpha:?}: {q} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn product_rule_dimension_limit() {
        assert!(matches!(product_rule(9, 2), Err(Error::ProductRuleDimension(9))));
        assert!(product_rule(4, 0).is_err());
    }

    #[test]
    fn sphere_moment_totals() {
        for n in 2..17 {
            let alpha = vec![0; n];
            assert!((sphere_moment(&alpha) / (n as f64 * unit_ball_volume(n)) - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn monte_carlo_moments() {
        let rule = monte_carlo_rule(16, 200_000, 42).unwrap();
        let total = 16.0 * unit_ball_volume(16);
        let one = rule.integrate(|_| 1.0).unwrap();
        assert!((one.value - total).abs() < 1e-12 * total);
        let odd = rule.integrate(|x| x[0]).unwrap();
        assert!(odd.value.abs() <= 3.0 * odd.stderr.unwrap() + 1e-15);
        // pair means of x1^2 are not zero, so the error estimate is informative
        let e = rule.integrate(|x| x[0] * x[0]).unwrap();
        let exact = total / 16.0;
        assert!((e.value - exact).abs() <= 3.0 * e.stderr.unwrap());
        assert!(e.stderr.unwrap() > 0.0);
    }

    #[test]
    fn monte_carlo_is_seeded_and_rejects_odd_counts() {
        let a = monte_carlo_rule(5, 2000, 1).unwrap();
        let b = monte_carlo_rule(5, 2000, 1).unwrap();
        let c = monte_carlo_rule(5, 2000, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(monte_carlo_rule(5, 2001, 1).is_err());
        assert!(monte_carlo_rule(5, 10, 1).is_err());
    }

    #[test]
    fn non_finite_values_are_reported() {
        let rule = product_rule(3, 3).unwrap();
        let err = rule.integrate(|x| if x[0] > 0.5 { f64::NAN } else { 0.0 }).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn parallel_and_serial_sums_agree() {
        let rule = product_rule(6, 6).unwrap();
        let f = |x: &[f64]| (x[0] * 3.0).exp() * x[1].cos();
        let parallel = rule.integrate(f).unwrap().value;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let serial = pool.install(|| rule.integrate(f).unwrap().value);
        assert_eq!(parallel.to_bits(), serial.to_bits());
    }

    #[test]
    fn refinement_converges() {
        let f = |x: &[f64]| (2.0 * x[0] + x[2]).exp();
        let values: Vec<f64> = (1..8)
            .map(|l| product_rule(4, l).unwrap().integrate(f).unwrap().value)
            .collect();
        let reference = product_rule(4, 20).unwrap().integrate(f).unwrap().value;
        let errs: Vec<f64> = values.iter().map(|v| (v - reference).abs()).collect();
        for w in errs.windows(3) {
            assert!(w[2] <= w[0] || w[2] < 1e-13);
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        for rule in [product_rule(3, 4).unwrap(), monte_carlo_rule(4, 1000, 9).unwrap()] {
            let text = rule.to_text();
            let back: SphereRule = text.parse().unwrap();
            assert_eq!(back, rule);
        }
        assert!("garbage".parse::<SphereRule>().is_err());
    }

    #[test]
    fn rule_spec_json() {
        let spec: RuleSpec = serde_json::from_str(r#"{"kind":"product","level":12}"#).unwrap();
        assert_eq!(spec, RuleSpec::Product { level: 12 });
        let spec: RuleSpec = serde_json::from_str(r#"{"kind":"monte-carlo","count":2000,"seed":3}"#).unwrap();
        assert_eq!(spec.build(16).unwrap().len(), 2000);
        assert!(matches!(RuleSpec::default_for(16), RuleSpec::MonteCarlo { .. }));
    }
}
