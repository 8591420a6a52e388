//! Homogeneous harmonic polynomials (spherical harmonics) in `n` variables.
//!
//! Degree 0 is the constant 1 and degree 1 the coordinate functions `x_k`.
//! For degree `j >= 2` the basis is the harmonic projection of the monomials
//! with `alpha_1 <= 1`, orthonormalized in the mean inner product
//! `<p, q> = |S^{n-1}|^{-1} int p q`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::poly::{binomial, monomials, total_degree, Polynomial};
use crate::quadrature::sphere_moment;
use crate::space::sphere_area;

/// Largest monomial count a basis may be built from.
pub const MAX_MONOMIALS: usize = 2000;

#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicBasisElement {
    pub degree: usize,
    pub index: usize,
    pub polynomial: Polynomial,
}

/// `dim H_j` in `n` variables.
pub fn harmonic_dimension(n: usize, degree: usize) -> usize {
    match degree {
        0 => 1,
        1 => n,
        j => binomial(n + j - 1, j) - binomial(n + j - 3, j - 2),
    }
}

/// Harmonic part of a homogeneous polynomial of degree `degree`.
pub fn harmonic_projection(p: &Polynomial, degree: usize) -> Polynomial {
    let n = p.n() as f64;
    let m = degree as f64;
    let mut out = p.clone();
    let mut lap = p.laplacian();
    let mut k = 1usize;
    let mut denom = 1.0;
    while !lap.is_empty() {
        denom *= 2.0 * k as f64 * (n + 2.0 * m - 4.0 - 2.0 * (k as f64 - 1.0));
        let mut term = lap.clone();
        for _ in 0..k {
            term = term.mul_norm_sq();
        }
        let sign = if k % 2 == 1 { -1.0 } else { 1.0 };
        out.add_scaled(&term, sign / denom);
        lap = lap.laplacian();
        k += 1;
    }
    out
}

fn mean_moment(alpha: &[u8], beta: &[u8], area: f64) -> f64 {
    let sum: Vec<usize> = alpha.iter().zip(beta).map(|(a, b)| (*a + *b) as usize).collect();
    sphere_moment(&sum) / area
}

fn build_basis(n: usize, degree: usize) -> Result<Vec<HarmonicBasisElement>> {
    if degree == 0 {
        return Ok(vec![HarmonicBasisElement {
            degree,
            index: 0,
            polynomial: Polynomial::constant(n, 1.0),
        }]);
    }
    if degree == 1 {
        return Ok((0..n)
            .map(|k| HarmonicBasisElement {
                degree,
                index: k,
                polynomial: Polynomial::variable(n, k),
            })
            .collect());
    }
    let all = monomials(n, degree);
    if all.len() > MAX_MONOMIALS {
        return Err(Error::BandLimit {
            n,
            degree,
            count: all.len(),
        });
    }
    let index: HashMap<&[u8], usize> = all.iter().enumerate().map(|(i, e)| (e.as_slice(), i)).collect();
    let seeds: Vec<&Vec<u8>> = all.iter().filter(|e| e[0] <= 1).collect();
    let dim = harmonic_dimension(n, degree);
    debug_assert_eq!(seeds.len(), dim);
    let mut coeffs = DMatrix::<f64>::zeros(all.len(), dim);
    for (col, e) in seeds.iter().enumerate() {
        let h = harmonic_projection(&Polynomial::monomial((*e).clone(), 1.0), degree);
        for (f, c) in h.terms() {
            coeffs[(index[f.as_slice()], col)] = c;
        }
    }
    let area = sphere_area(n);
    let gram_mon = DMatrix::<f64>::from_fn(all.len(), all.len(), |a, b| mean_moment(&all[a], &all[b], area));
    let gram = coeffs.transpose() * &gram_mon * &coeffs;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Precondition(format!("harmonic Gram matrix is singular (n = {n}, degree = {degree})")))?;
    // Q = P L^{-T}, so that Q^T G Q = I
    let l = chol.l();
    let lt_inv = l
        .transpose()
        .try_inverse()
        .ok_or_else(|| Error::Precondition("triangular factor not invertible".into()))?;
    let q = coeffs * lt_inv;
    Ok((0..dim)
        .map(|col| {
            let mut p = Polynomial::zero(n);
            for (row, e) in all.iter().enumerate() {
                let c = q[(row, col)];
                if c != 0.0 {
                    p.add_term(e.clone(), c);
                }
            }
            HarmonicBasisElement {
                degree,
                index: col,
                polynomial: p,
            }
        })
        .collect())
}

/// Cached basis of harmonic polynomials of a given degree.
pub fn harmonic_basis(n: usize, degree: usize) -> Result<Arc<Vec<HarmonicBasisElement>>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Vec<HarmonicBasisElement>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(b) = cache.lock().expect("basis cache poisoned").get(&(n, degree)) {
        return Ok(b.clone());
    }
    let basis = Arc::new(build_basis(n, degree)?);
    let mut guard = cache.lock().expect("basis cache poisoned");
    Ok(guard.entry((n, degree)).or_insert(basis).clone())
}

/// The element `(degree, index)`.
pub fn basis_element(n: usize, degree: usize, index: usize) -> Result<Polynomial> {
    let basis = harmonic_basis(n, degree)?;
    basis
        .get(index)
        .map(|e| e.polynomial.clone())
        .ok_or_else(|| Error::Precondition(format!("degree {degree} has {} basis elements, index {index} requested", basis.len())))
}

/// Checks that `p` is homogeneous of degree `degree` and harmonic to `tol` (relative to its coefficients).
pub fn is_harmonic(p: &Polynomial, degree: usize, tol: f64) -> bool {
    p.terms().all(|(e, _)| total_degree(e) == degree) && p.laplacian().max_abs_coeff() <= tol * p.max_abs_coeff().max(1.0)
}
