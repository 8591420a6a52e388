//! Sparse real polynomials in `n` variables.

use std::collections::BTreeMap;

/// Exponent vector of a monomial.
pub type Exponents = Vec<u8>;

#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    n: usize,
    terms: BTreeMap<Exponents, f64>,
}

impl Polynomial {
    pub fn zero(n: usize) -> Self {
        Polynomial {
            n,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self::monomial(vec![0; n], c)
    }

    pub fn variable(n: usize, i: usize) -> Self {
        let mut e = vec![0; n];
        e[i] = 1;
        Self::monomial(e, 1.0)
    }

    pub fn monomial(exponents: Exponents, coeff: f64) -> Self {
        let mut p = Self::zero(exponents.len());
        p.add_term(exponents, coeff);
        p
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exponents, f64)> {
        self.terms.iter().map(|(e, c)| (e, *c))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add_term(&mut self, exponents: Exponents, coeff: f64) {
        assert_eq!(exponents.len(), self.n, "exponent vector length");
        if coeff == 0.0 {
            return;
        }
        let entry = self.terms.entry(exponents).or_insert(0.0);
        *entry += coeff;
        if *entry == 0.0 {
            self.terms.retain(|_, c| *c != 0.0);
        }
    }

    pub fn add_scaled(&mut self, other: &Polynomial, s: f64) {
        for (e, c) in other.terms() {
            self.add_term(e.clone(), s * c);
        }
    }

    pub fn scaled(&self, s: f64) -> Polynomial {
        let mut out = Polynomial::zero(self.n);
        out.add_scaled(self, s);
        out
    }

    /// Largest total degree, or `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.terms.keys().map(|e| total_degree(e)).max()
    }

    pub fn is_homogeneous(&self, degree: usize) -> bool {
        self.terms.keys().all(|e| total_degree(e) == degree)
    }

    pub fn partial(&self, i: usize) -> Polynomial {
        let mut out = Polynomial::zero(self.n);
        for (e, c) in self.terms() {
            if e[i] > 0 {
                let mut f = e.clone();
                f[i] -= 1;
                out.add_term(f, c * e[i] as f64);
            }
        }
        out
    }

    /// Euclidean Laplacian.
    pub fn laplacian(&self) -> Polynomial {
        let mut out = Polynomial::zero(self.n);
        for (e, c) in self.terms() {
            for i in 0..self.n {
                if e[i] >= 2 {
                    let mut f = e.clone();
                    f[i] -= 2;
                    out.add_term(f, c * (e[i] as f64) * (e[i] as f64 - 1.0));
                }
            }
        }
        out
    }

    /// Product with `|x|^2`.
    pub fn mul_norm_sq(&self) -> Polynomial {
        let mut out = Polynomial::zero(self.n);
        for (e, c) in self.terms() {
            for i in 0..self.n {
                let mut f = e.clone();
                f[i] += 2;
                out.add_term(f, c);
            }
        }
        out
    }

    /// Largest absolute coefficient.
    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms()
            .map(|(e, c)| c * e.iter().zip(x).map(|(k, xi)| xi.powi(*k as i32)).product::<f64>())
            .sum()
    }

    pub fn compile(&self) -> CompiledPolynomial {
        CompiledPolynomial::new(self)
    }
}

pub fn total_degree(e: &[u8]) -> usize {
    e.iter().map(|k| *k as usize).sum()
}

/// All exponent vectors of total degree `degree` in `n` variables, lexicographically descending.
pub fn monomials(n: usize, degree: usize) -> Vec<Exponents> {
    let mut out = Vec::new();
    let mut current = vec![0u8; n];
    fill_monomials(0, degree, &mut current, &mut out);
    out
}

fn fill_monomials(i: usize, remaining: usize, current: &mut Exponents, out: &mut Vec<Exponents>) {
    let n = current.len();
    if i == n - 1 {
        current[i] = remaining as u8;
        out.push(current.clone());
        return;
    }
    for k in (0..=remaining).rev() {
        current[i] = k as u8;
        fill_monomials(i + 1, remaining - k, current, out);
    }
    current[i] = 0;
}

/// Number of monomials of degree `degree` in `n` variables.
pub fn monomial_count(n: usize, degree: usize) -> usize {
    binomial(n + degree - 1, degree)
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Polynomial laid out for fast evaluation with gradient.
#[derive(Clone, Debug)]
pub struct CompiledPolynomial {
    n: usize,
    max_exp: usize,
    // per monomial: coefficient and (variable, exponent) pairs with exponent > 0
    coeffs: Vec<f64>,
    factors: Vec<Vec<(usize, usize)>>,
}

impl CompiledPolynomial {
    fn new(p: &Polynomial) -> Self {
        let mut coeffs = Vec::with_capacity(p.len());
        let mut factors = Vec::with_capacity(p.len());
        let mut max_exp = 0;
        for (e, c) in p.terms() {
            coeffs.push(c);
            let f: Vec<(usize, usize)> = e
                .iter()
                .enumerate()
                .filter(|(_, k)| **k > 0)
                .map(|(i, k)| (i, *k as usize))
                .collect();
            max_exp = f.iter().fold(max_exp, |m, (_, k)| m.max(*k));
            factors.push(f);
        }
        CompiledPolynomial {
            n: p.n(),
            max_exp,
            coeffs,
            factors,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn power_table(&self, x: &[f64]) -> Vec<f64> {
        let stride = self.max_exp + 1;
        let mut pow = vec![1.0; self.n * stride];
        for (i, xi) in x.iter().enumerate() {
            for k in 1..stride {
                pow[i * stride + k] = pow[i * stride + k - 1] * xi;
            }
        }
        pow
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let stride = self.max_exp + 1;
        let pow = self.power_table(x);
        self.coeffs
            .iter()
            .zip(&self.factors)
            .map(|(c, f)| c * f.iter().map(|(i, k)| pow[i * stride + k]).product::<f64>())
            .sum()
    }

    /// Value and Euclidean gradient at `x`; the gradient is written into `grad`.
    pub fn eval_with_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let stride = self.max_exp + 1;
        let pow = self.power_table(x);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut value = 0.0;
        for (c, f) in self.coeffs.iter().zip(&self.factors) {
            value += c * f.iter().map(|(i, k)| pow[i * stride + k]).product::<f64>();
            for (a, (i, k)) in f.iter().enumerate() {
                let others: f64 = f
                    .iter()
                    .enumerate()
                    .filter(|(b, _)| *b != a)
                    .map(|(_, (j, l))| pow[j * stride + l])
                    .product();
                grad[*i] += c * *k as f64 * pow[i * stride + k - 1] * others;
            }
        }
        value
    }
}
