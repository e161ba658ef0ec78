//! Fixed-size complex matrices and their exponentials.

use num_complex::Complex64 as C64;

pub type Mat<const N: usize> = [[C64; N]; N];
pub type Vector<const N: usize> = [C64; N];
pub type Mat2 = Mat<2>;
pub type Mat4 = Mat<4>;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

pub fn zeros<const N: usize>() -> Mat<N> {
    [[ZERO; N]; N]
}

pub fn identity<const N: usize>() -> Mat<N> {
    let mut m = zeros::<N>();
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = ONE;
    }
    m
}

pub fn mul<const N: usize>(a: &Mat<N>, b: &Mat<N>) -> Mat<N> {
    let mut c = zeros::<N>();
    for i in 0..N {
        for k in 0..N {
            let aik = a[i][k];
            for j in 0..N {
                c[i][j] += aik * b[k][j];
            }
        }
    }
    c
}

pub fn matvec<const N: usize>(a: &Mat<N>, x: &Vector<N>) -> Vector<N> {
    let mut y = [ZERO; N];
    for i in 0..N {
        for j in 0..N {
            y[i] += a[i][j] * x[j];
        }
    }
    y
}

pub fn scale<const N: usize>(a: &Mat<N>, s: C64) -> Mat<N> {
    let mut c = *a;
    c.iter_mut().flatten().for_each(|x| *x *= s);
    c
}

pub fn add<const N: usize>(a: &Mat<N>, b: &Mat<N>) -> Mat<N> {
    let mut c = *a;
    for i in 0..N {
        for j in 0..N {
            c[i][j] += b[i][j];
        }
    }
    c
}

/// Max absolute column sum.
pub fn norm1<const N: usize>(a: &Mat<N>) -> f64 {
    (0..N).map(|j| (0..N).map(|i| a[i][j].norm()).sum::<f64>()).fold(0.0, f64::max)
}

pub fn max_abs_diff<const N: usize>(a: &Mat<N>, b: &Mat<N>) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Solves a x = b by Gaussian elimination with partial pivoting; `None` if singular.
pub fn solve<const N: usize>(a: &Mat<N>, b: &Vector<N>) -> Option<Vector<N>> {
    let mut m = *a;
    let mut x = *b;
    for col in 0..N {
        let piv = (col..N).max_by(|&i, &j| m[i][col].norm().total_cmp(&m[j][col].norm()))?;
        if m[piv][col].norm() == 0.0 {
            return None;
        }
        m.swap(col, piv);
        x.swap(col, piv);
        for row in col + 1..N {
            let f = m[row][col] / m[col][col];
            for k in col..N {
                let t = m[col][k];
                m[row][k] -= f * t;
            }
            let t = x[col];
            x[row] -= f * t;
        }
    }
    for col in (0..N).rev() {
        let mut s = x[col];
        for k in col + 1..N {
            s -= m[col][k] * x[k];
        }
        x[col] = s / m[col][col];
    }
    Some(x)
}

/// Eigenpair nearest `shift` by inverse iteration.
pub fn eig_near<const N: usize>(a: &Mat<N>, shift: C64, iterations: usize) -> Option<(C64, Vector<N>)> {
    let mut shifted = *a;
    for (i, row) in shifted.iter_mut().enumerate() {
        row[i] -= shift;
    }
    let mut v = [ONE; N];
    let mut lam = shift;
    for _ in 0..iterations {
        let w = solve(&shifted, &v)?;
        let n = w.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return None;
        }
        v = w.map(|x| x / n);
        let av = matvec(a, &v);
        let num: C64 = v.iter().zip(&av).map(|(x, y)| x.conj() * y).sum();
        lam = num;
    }
    Some((lam, v))
}

/// Eigenvalues of a 3x3 matrix as roots of the characteristic cubic (Durand-Kerner);
/// accurate enough to seed `eig_near`.
pub fn eig3_estimates(a: &Mat<3>) -> [C64; 3] {
    let tr = a[0][0] + a[1][1] + a[2][2];
    let minors = a[0][0] * a[1][1] - a[0][1] * a[1][0] + a[0][0] * a[2][2] - a[0][2] * a[2][0] + a[1][1] * a[2][2] - a[1][2] * a[2][1];
    let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    let p = |x: C64| ((x - tr) * x + minors) * x - det;
    let r = 1.0 + norm1(a);
    let seed = C64::new(0.4, 0.9);
    let mut z = [seed * r, seed * seed * r, seed * seed * seed * r];
    for _ in 0..500 {
        let mut moved: f64 = 0.0;
        for i in 0..3 {
            let mut den = ONE;
            for j in 0..3 {
                if j != i {
                    den *= z[i] - z[j];
                }
            }
            if den.norm() == 0.0 {
                continue;
            }
            let step = p(z[i]) / den;
            z[i] -= step;
            moved = moved.max(step.norm());
        }
        if moved <= 1e-15 * r {
            break;
        }
    }
    z
}

/// Scaling and squaring with a degree-18 Taylor polynomial. Works for any N; used
/// for the 4x4 local couplings and as the independent route for the 2x2 closed form.
pub fn expm_series<const N: usize>(a: &Mat<N>) -> Mat<N> {
    let norm = norm1(a);
    let mut squarings = 0u32;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as u32;
    }
    let a = scale(a, C64::new(0.5f64.powi(squarings as i32), 0.0));
    // Horner evaluation of sum_k a^k / k!
    let mut result = identity::<N>();
    for k in (1..=18).rev() {
        result = mul(&a, &result);
        result = scale(&result, C64::new(1.0 / k as f64, 0.0));
        result = add(&result, &identity::<N>());
    }
    for _ in 0..squarings {
        result = mul(&result, &result);
    }
    result
}

/// Eigenvalues of a 2x2 matrix, larger real part first.
pub fn eig2(a: &Mat2) -> [C64; 2] {
    let half_trace = (a[0][0] + a[1][1]) * 0.5;
    let s = discriminant_root(a);
    let (l1, l2) = (half_trace + s, half_trace - s);
    if l1.re >= l2.re {
        [l1, l2]
    } else {
        [l2, l1]
    }
}

fn discriminant_root(a: &Mat2) -> C64 {
    let h = (a[0][0] - a[1][1]) * 0.5;
    (h * h + a[0][1] * a[1][0]).sqrt()
}

/// Closed-form 2x2 exponential from the eigen-decomposition
/// exp(A) = sum over eigenvalues of e^lambda P_lambda, with P_lambda the spectral
/// projectors (A - lambda' I)/(lambda - lambda'). When the eigenvalues are within
/// 1e-8 (relative to the matrix scale) the projector form is replaced by the series
/// e^{t/2} [cosh s I + (sinh s / s) B].
pub fn expm2(a: &Mat2) -> Mat2 {
    let half_trace = (a[0][0] + a[1][1]) * 0.5;
    let s = discriminant_root(a);
    let b = [[a[0][0] - half_trace, a[0][1]], [a[1][0], a[1][1] - half_trace]];
    let scale_ref = norm1(a).max(1e-300);
    if (2.0 * s).norm() <= 1e-8 * scale_ref.max(1.0) || s.norm() < 1e-3 {
        let s2 = s * s;
        let cosh = ONE + s2 * (0.5 + s2 * (1.0 / 24.0 + s2 * (1.0 / 720.0 + s2 / 40320.0)));
        let sinhc = ONE + s2 * (1.0 / 6.0 + s2 * (1.0 / 120.0 + s2 * (1.0 / 5040.0 + s2 / 362880.0)));
        let e = half_trace.exp();
        return [
            [e * (cosh + sinhc * b[0][0]), e * sinhc * b[0][1]],
            [e * sinhc * b[1][0], e * (cosh + sinhc * b[1][1])],
        ];
    }
    let ep = (half_trace + s).exp() * 0.5;
    let em = (half_trace - s).exp() * 0.5;
    let inv_s = ONE / s;
    let mut out = zeros::<2>();
    for i in 0..2 {
        for j in 0..2 {
            let id = if i == j { ONE } else { ZERO };
            let bs = b[i][j] * inv_s;
            out[i][j] = ep * (id + bs) + em * (id - bs);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn diagonal_exponential() {
        let a: Mat2 = [[c(1.0, 2.0), ZERO], [ZERO, c(-3.0, 0.5)]];
        let e = expm2(&a);
        assert!((e[0][0] - c(1.0, 2.0).exp()).norm() < 1e-14);
        assert!((e[1][1] - c(-3.0, 0.5).exp()).norm() < 1e-14);
        assert!(e[0][1].norm() < 1e-15);
    }

    #[test]
    fn defective_jordan_block() {
        // eigenvalues coincide exactly: exp([[l,1],[0,l]]) = e^l [[1,1],[0,1]]
        let l = c(0.3, -0.7);
        let e = expm2(&[[l, ONE], [ZERO, l]]);
        let el = l.exp();
        assert!((e[0][0] - el).norm() < 1e-14);
        assert!((e[0][1] - el).norm() < 1e-14);
        assert!(e[1][0].norm() < 1e-15);
    }

    #[test]
    fn rotation_generator() {
        let th = 0.9;
        let e = expm2(&[[ZERO, c(-th, 0.0)], [c(th, 0.0), ZERO]]);
        assert!((e[0][0] - c(th.cos(), 0.0)).norm() < 1e-14);
        assert!((e[1][0] - c(th.sin(), 0.0)).norm() < 1e-14);
    }

    #[test]
    fn large_stiff_decay_does_not_overflow() {
        let a: Mat2 = [[c(-2000.0, 5.0), c(30.0, 0.0)], [c(30.0, 0.0), c(-1.0, 0.0)]];
        let e = expm2(&a);
        assert!(e.iter().flatten().all(|x| x.is_finite()));
        assert!(max_abs_diff(&e, &expm_series(&a)) < 1e-12);
    }

    #[test]
    fn series_matches_product_of_commuting_parts() {
        let mut a = zeros::<4>();
        for i in 0..4 {
            a[i][i] = c(-0.1 * i as f64, i as f64);
        }
        a[1][2] = c(0.3, 0.0);
        a[2][1] = c(0.3, 0.0);
        let half = expm_series(&scale(&a, c(0.5, 0.0)));
        let full = expm_series(&a);
        assert!(max_abs_diff(&mul(&half, &half), &full) < 1e-13);
    }

    #[test]
    fn solve_and_inverse_iteration() {
        let a: Mat<3> = [[c(2.0, 0.0), c(1.0, 1.0), ZERO], [c(0.0, -1.0), c(3.0, 0.0), c(1.0, 0.0)], [ZERO, c(0.5, 0.0), c(-1.0, 2.0)]];
        let b = [c(1.0, 0.0), c(0.0, 1.0), c(2.0, -1.0)];
        let x = solve(&a, &b).unwrap();
        let r = matvec(&a, &x);
        assert!((0..3).all(|i| (r[i] - b[i]).norm() < 1e-14));
        let (lam, v) = eig_near(&a, c(-1.0, 2.0), 30).unwrap();
        let av = matvec(&a, &v);
        assert!((0..3).all(|i| (av[i] - lam * v[i]).norm() < 1e-12));
        let e = eig2(&[[c(1.0, 0.0), c(2.0, 0.0)], [c(0.5, 0.0), c(-1.0, 0.0)]]);
        let (l2, _) = eig_near(&[[c(1.0, 0.0), c(2.0, 0.0)], [c(0.5, 0.0), c(-1.0, 0.0)]], c(-1.5, 0.0), 30).unwrap();
        assert!((l2 - e[1]).norm() < 1e-12);
        for guess in eig3_estimates(&a) {
            let (lam, _) = eig_near(&a, guess + 1e-9, 30).unwrap();
            assert!((lam - guess).norm() < 1e-8, "{lam} {guess}");
        }
    }

    proptest! {
        #[test]
        fn closed_form_matches_series(
            v in proptest::collection::vec(-3.0f64..3.0, 8)
        ) {
            let a: Mat2 = [[c(v[0], v[1]), c(v[2], v[3])], [c(v[4], v[5]), c(v[6], v[7])]];
            let e1 = expm2(&a);
            let e2 = expm_series(&a);
            let scale = e2.iter().flatten().map(|x| x.norm()).fold(1.0, f64::max);
            prop_assert!(max_abs_diff(&e1, &e2) < 1e-11 * scale);
        }

        #[test]
        fn near_degenerate_pairs_are_smooth(eps in -1e-9f64..1e-9) {
            let l = c(-0.4, 1.1);
            let a: Mat2 = [[l + eps, c(0.2, 0.0)], [c(eps, 0.0), l - eps]];
            prop_assert!(max_abs_diff(&expm2(&a), &expm_series(&a)) < 1e-12);
        }
    }
}
