//! Division-algebra arithmetic and the Hopf splitting of sphere tangent vectors.
//!
//! `R^n` is identified with `K^m`: coordinates `d*i .. d*(i+1)` hold the i-th
//! `K`-component. The tangent space of the unit sphere at `phi` splits as
//! `H + V + N`, where `H` is tangent to the Hopf fiber through `phi`
//! (dimension `d - 1`), `N` is the normal `phi` itself and `V` is the rest.

use crate::error::{Error, Result};
use crate::space::{Algebra, SpaceSpec};

/// Octonion as 8 real coordinates in the basis `1, e1, ..., e7`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Octonion(pub [f64; 8]);

impl Octonion {
    pub fn unit(i: usize) -> Self {
        let mut c = [0.0; 8];
        c[i] = 1.0;
        Octonion(c)
    }

    pub fn conj(&self) -> Self {
        let mut c = self.0;
        for x in &mut c[1..] {
            *x = -*x;
        }
        Octonion(c)
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn inverse(&self) -> Self {
        let n2 = self.norm_sq();
        let mut c = self.conj().0;
        for x in &mut c {
            *x /= n2;
        }
        Octonion(c)
    }
}

impl std::ops::Mul for Octonion {
    type Output = Octonion;

    fn mul(self, rhs: Octonion) -> Octonion {
        Octonion(octonion_multiply(&self.0, &rhs.0))
    }
}

/// Cayley-Dickson product on `2^k`-dimensional algebras:
/// `(p, q)(r, s) = (p r - conj(s) q, s p + q conj(r))`.
pub fn cd_mul(a: &[f64], b: &[f64], out: &mut [f64]) {
    let len = a.len();
    debug_assert!(len == b.len() && len == out.len() && len.is_power_of_two());
    if len == 1 {
        out[0] = a[0] * b[0];
        return;
    }
    let h = len / 2;
    let (p, q) = a.split_at(h);
    let (r, s) = b.split_at(h);
    let mut s_conj = [0.0; 8];
    let mut r_conj = [0.0; 8];
    conj_into(s, &mut s_conj[..h]);
    conj_into(r, &mut r_conj[..h]);
    let mut t1 = [0.0; 8];
    let mut t2 = [0.0; 8];
    cd_mul(p, r, &mut t1[..h]);
    cd_mul(&s_conj[..h], q, &mut t2[..h]);
    for i in 0..h {
        out[i] = t1[i] - t2[i];
    }
    cd_mul(s, p, &mut t1[..h]);
    cd_mul(q, &r_conj[..h], &mut t2[..h]);
    for i in 0..h {
        out[h + i] = t1[i] + t2[i];
    }
}

fn conj_into(x: &[f64], out: &mut [f64]) {
    out[0] = x[0];
    for i in 1..x.len() {
        out[i] = -x[i];
    }
}

pub fn octonion_multiply(a: &[f64; 8], b: &[f64; 8]) -> [f64; 8] {
    let mut out = [0.0; 8];
    cd_mul(a, b, &mut out);
    out
}

pub fn quaternion_multiply(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    cd_mul(a, b, &mut out);
    out
}

/// Right multiplication by the imaginary units, applied to each `K`-component.
#[derive(Clone, Copy, Debug)]
pub struct ImaginaryAction {
    algebra: Algebra,
}

impl ImaginaryAction {
    pub fn new(algebra: Algebra) -> Self {
        ImaginaryAction { algebra }
    }

    /// Number of imaginary units, `d - 1`.
    pub fn count(&self) -> usize {
        self.algebra.dim() - 1
    }

    /// `J_alpha x` for `alpha` in `1..d`.
    pub fn apply(&self, alpha: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(alpha, x, &mut out);
        out
    }

    pub fn apply_into(&self, alpha: usize, x: &[f64], out: &mut [f64]) {
        let d = self.algebra.dim();
        assert!(alpha >= 1 && alpha < d, "imaginary unit index out of range");
        assert_eq!(x.len() % d, 0);
        let mut unit = [0.0; 8];
        unit[alpha] = 1.0;
        for (xc, oc) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            cd_mul(xc, &unit[..d], oc);
        }
    }
}

/// Horizontal and vertical parts of a tangent vector.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentSplit {
    pub v_h: Vec<f64>,
    pub v_v: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthonormal frame of the Hopf fiber direction plus `phi` for the Cayley plane.
///
/// The fiber through `phi = (a, b)` is the unit sphere of the octonionic line
/// `{(x, m x)}` with `m = b a^{-1}` (or `{(m x, x)}` with `m = a b^{-1}`).
fn cayley_line_frame(phi: &[f64]) -> [[f64; 16]; 8] {
    let a = Octonion(phi[..8].try_into().expect("16 coordinates"));
    let b = Octonion(phi[8..].try_into().expect("16 coordinates"));
    let swap = b.norm_sq() > a.norm_sq();
    let m = if swap { a * b.inverse() } else { b * a.inverse() };
    let scale = 1.0 / (1.0 + m.norm_sq()).sqrt();
    let mut frame = [[0.0; 16]; 8];
    for (beta, row) in frame.iter_mut().enumerate() {
        let e = Octonion::unit(beta);
        let me = m * e;
        let (first, second) = if swap { (me.0, e.0) } else { (e.0, me.0) };
        for i in 0..8 {
            row[i] = first[i] * scale;
            row[8 + i] = second[i] * scale;
        }
    }
    frame
}

fn check_inputs(space: SpaceSpec, phi: &[f64], v: &[f64]) -> Result<()> {
    let n = space.n();
    if phi.len() != n || v.len() != n {
        return Err(Error::Precondition(format!(
            "expected vectors of length {n}, got {} and {}",
            phi.len(),
            v.len()
        )));
    }
    let norm = dot(phi, phi).sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::Precondition(format!("phi is not a unit vector (|phi| = {norm})")));
    }
    let vn = dot(v, v).sqrt();
    let radial = dot(v, phi);
    if radial.abs() > 1e-10 * vn {
        return Err(Error::Precondition(format!(
            "v is not tangent at phi (<v, phi> = {radial:e})"
        )));
    }
    Ok(())
}

/// Orthogonal splitting of a tangent vector `v` at `phi` into fiber and complementary parts.
pub fn split_tangent(space: SpaceSpec, phi: &[f64], v: &[f64]) -> Result<TangentSplit> {
    check_inputs(space, phi, v)?;
    let n = space.n();
    let mut v_h = vec![0.0; n];
    match space.algebra() {
        Algebra::R => {}
        Algebra::C | Algebra::H => {
            let action = ImaginaryAction::new(space.algebra());
            let mut jphi = vec![0.0; n];
            for alpha in 1..space.d() {
                action.apply_into(alpha, phi, &mut jphi);
                let c = dot(v, &jphi);
                for (h, j) in v_h.iter_mut().zip(&jphi) {
                    *h += c * j;
                }
            }
        }
        Algebra::O => {
            let frame = cayley_line_frame(phi);
            for row in &frame {
                let c = dot(v, row);
                for (h, l) in v_h.iter_mut().zip(row) {
                    *h += c * l;
                }
            }
            let c = dot(v, phi);
            for (h, p) in v_h.iter_mut().zip(phi) {
                *h -= c * p;
            }
        }
    }
    let v_v = v.iter().zip(&v_h).map(|(a, b)| a - b).collect();
    Ok(TangentSplit { v_h, v_v })
}

/// `(|v_h|^2, |v_v|^2)` without the precondition checks or allocation.
///
/// `phi` must be a unit vector and `v` tangent at `phi`.
pub fn split_norms(space: SpaceSpec, phi: &[f64], v: &[f64]) -> (f64, f64) {
    let total = dot(v, v);
    let h2 = match space.algebra() {
        Algebra::R => 0.0,
        Algebra::C | Algebra::H => {
            let d = space.d();
            let action = ImaginaryAction::new(space.algebra());
            let mut jphi = [0.0; 16];
            let jphi = &mut jphi[..phi.len()];
            (1..d)
                .map(|alpha| {
                    action.apply_into(alpha, phi, jphi);
                    dot(v, jphi).powi(2)
                })
                .sum()
        }
        Algebra::O => {
            let frame = cayley_line_frame(phi);
            let along: f64 = frame.iter().map(|row| dot(v, row).powi(2)).sum();
            along - dot(v, phi).powi(2)
        }
    };
    let h2 = h2.clamp(0.0, total);
    (h2, total - h2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let v = random_vec(rng, n);
        let norm = dot(&v, &v).sqrt();
        v.into_iter().map(|x| x / norm).collect()
    }

    fn random_tangent(rng: &mut ChaCha8Rng, phi: &[f64]) -> Vec<f64> {
        let v = random_vec(rng, phi.len());
        let c = dot(&v, phi);
        let mut t: Vec<f64> = v.iter().zip(phi).map(|(a, b)| a - c * b).collect();
        let c = dot(&t, phi);
        t.iter_mut().zip(phi).for_each(|(a, b)| *a -= c * b);
        t
    }

    fn octonion_from(v: &[f64]) -> [f64; 8] {
        v.try_into().unwrap()
    }

    #[test]
    fn octonion_units() {
        let one = Octonion::unit(0).0;
        let e1 = Octonion::unit(1).0;
        let e3 = Octonion::unit(3).0;
        assert_eq!(octonion_multiply(&one, &e3), e3);
        assert_eq!(octonion_multiply(&e1, &e1), [-1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        // with this doubling e1 e2 = e3 (the quaternion k)
        assert_eq!(octonion_multiply(&e1, &Octonion::unit(2).0), e3);
    }

    #[test]
    fn basis_products_are_signed_units() {
        for i in 0..8 {
            for j in 0..8 {
                let p = octonion_multiply(&Octonion::unit(i).0, &Octonion::unit(j).0);
                let nonzero: Vec<_> = p.iter().filter(|x| **x != 0.0).collect();
                assert_eq!(nonzero.len(), 1);
                assert_eq!(nonzero[0].abs(), 1.0);
                if i != j && i > 0 && j > 0 {
                    // distinct imaginary units anticommute
                    let q = octonion_multiply(&Octonion::unit(j).0, &Octonion::unit(i).0);
                    assert!(p.iter().zip(&q).all(|(a, b)| *a == -*b));
                }
            }
        }
    }

    #[test]
    fn octonions_compose_norms_and_are_alternative() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let a = Octonion(octonion_from(&random_vec(&mut rng, 8)));
            let b = Octonion(octonion_from(&random_vec(&mut rng, 8)));
            let ab = a * b;
            assert!((ab.norm() / (a.norm() * b.norm()) - 1.0).abs() < 1e-12);
            let lhs = (a * a) * b;
            let rhs = a * (a * b);
            for (x, y) in lhs.0.iter().zip(&rhs.0) {
                assert!((x - y).abs() < 1e-12 * lhs.norm().max(1.0));
            }
        }
    }

    #[test]
    fn octonions_are_not_associative() {
        let (e1, e2, e4) = (Octonion::unit(1), Octonion::unit(2), Octonion::unit(4));
        assert_ne!((e1 * e2) * e4, e1 * (e2 * e4));
    }

    #[test]
    fn quaternions_are_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<[f64; 4]> = (0..3).map(|_| random_vec(&mut rng, 4).try_into().unwrap()).collect();
        let l = quaternion_multiply(&quaternion_multiply(&v[0], &v[1]), &v[2]);
        let r = quaternion_multiply(&v[0], &quaternion_multiply(&v[1], &v[2]));
        for (x, y) in l.iter().zip(&r) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn imaginary_action_is_a_complex_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for algebra in [Algebra::C, Algebra::H, Algebra::O] {
            let action = ImaginaryAction::new(algebra);
            let n = 2 * algebra.dim();
            for _ in 0..50 {
                let phi = random_unit(&mut rng, n);
                let v = random_vec(&mut rng, n);
                let frame: Vec<_> = (1..algebra.dim()).map(|a| action.apply(a, &phi)).collect();
                for (a, ja) in frame.iter().enumerate() {
                    assert!(dot(ja, &phi).abs() < 1e-12);
                    for (b, jb) in frame.iter().enumerate() {
                        let expected = if a == b { 1.0 } else { 0.0 };
                        assert!((dot(ja, jb) - expected).abs() < 1e-12);
                    }
                    let alpha = a + 1;
                    let jv = action.apply(alpha, &v);
                    assert!((dot(&jv, &jv) - dot(&v, &v)).abs() < 1e-12 * dot(&v, &v));
                    assert!(dot(&jv, &v).abs() < 1e-12 * dot(&v, &v));
                    let jjv = action.apply(alpha, &jv);
                    for (x, y) in jjv.iter().zip(&v) {
                        assert!((x + y).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn complex_examples() {
        let s: SpaceSpec = "CH2".parse().unwrap();
        let phi = [1.0, 0.0, 0.0, 0.0];
        let j1 = ImaginaryAction::new(Algebra::C).apply(1, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(j1, vec![-2.0, 1.0, -4.0, 3.0]);
        let fiber = [0.0, 1.0, 0.0, 0.0];
        let split = split_tangent(s, &phi, &fiber).unwrap();
        assert_eq!(split.v_h, fiber.to_vec());
        assert_eq!(split.v_v, vec![0.0; 4]);
        let e3 = [0.0, 0.0, 1.0, 0.0];
        let split = split_tangent(s, &phi, &e3).unwrap();
        assert_eq!(split.v_h, vec![0.0; 4]);
        assert_eq!(split.v_v, e3.to_vec());
    }

    #[test]
    fn rejects_bad_inputs() {
        let s: SpaceSpec = "CH2".parse().unwrap();
        assert!(split_tangent(s, &[2.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]).is_err());
        assert!(split_tangent(s, &[1.0, 0.0, 0.0, 0.0], &[1.0, 1.0, 0.0, 0.0]).is_err());
        assert!(split_tangent(s, &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn real_case_is_purely_vertical() {
        let s: SpaceSpec = "RH3".parse().unwrap();
        let split = split_tangent(s, &[0.0, 0.0, 1.0], &[0.3, -0.2, 0.0]).unwrap();
        assert_eq!(split.v_h, vec![0.0; 3]);
        assert_eq!(split.v_v, vec![0.3, -0.2, 0.0]);
    }

    #[test]
    fn split_is_orthogonal_and_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for s in SpaceSpec::builtin() {
            let draws = if s.algebra() == Algebra::O { 10_000 } else { 500 };
            for _ in 0..draws {
                let phi = random_unit(&mut rng, s.n());
                let v = random_tangent(&mut rng, &phi);
                let split = split_tangent(s, &phi, &v).unwrap();
                let vv = dot(&v, &v);
                let (h2, v2) = (dot(&split.v_h, &split.v_h), dot(&split.v_v, &split.v_v));
                assert!((h2 + v2 - vv).abs() < 1e-10 * vv);
                assert!(dot(&split.v_h, &split.v_v).abs() < 1e-10 * vv);
                let (fh, fv) = split_norms(s, &phi, &v);
                assert!((fh - h2).abs() < 1e-10 * vv && (fv - v2).abs() < 1e-10 * vv);
                if s.algebra() != Algebra::O {
                    continue;
                }
                let again = split_tangent(s, &phi, &split.v_h).unwrap();
                assert!(again.v_v.iter().all(|x| x.abs() < 1e-10));
                let again = split_tangent(s, &phi, &split.v_v).unwrap();
                assert!(again.v_h.iter().all(|x| x.abs() < 1e-10));
            }
        }
    }

    #[test]
    fn cayley_frame_is_orthonormal_and_contains_phi() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let phi = random_unit(&mut rng, 16);
            let frame = cayley_line_frame(&phi);
            for (i, a) in frame.iter().enumerate() {
                for (j, b) in frame.iter().enumerate() {
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((dot(a, b) - expected).abs() < 1e-12);
                }
            }
            let along: f64 = frame.iter().map(|row| dot(&phi, row).powi(2)).sum();
            assert!((along - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn horizontal_dimension_is_d_minus_one() {
        // project an orthonormal basis of the tangent space: trace of the
        // horizontal projector equals its rank
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for s in SpaceSpec::builtin() {
            let n = s.n();
            let phi = random_unit(&mut rng, n);
            let mut trace = 0.0;
            for i in 0..n {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                let c = phi[i];
                let t: Vec<f64> = e.iter().zip(&phi).map(|(a, b)| a - c * b).collect();
                let split = split_tangent(s, &phi, &t).unwrap();
                trace += split.v_h[i];
            }
            assert!((trace - s.horizontal_dim() as f64).abs() < 1e-10, "{s}: {trace}");
        }
    }
}
