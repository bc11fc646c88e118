use std::sync::Arc;

use nalgebra::DMatrix;
use overdet_core::problem::{sqrt_spd, ProblemSpec, RescaledProblem};
use proptest::prelude::*;

fn spec(f: &str, f0: &str, f1: &str, b: &[&str], a: DMatrix<f64>) -> ProblemSpec {
    ProblemSpec::parse(2, f, f0, f1, b, a).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    // The rescaled evaluators are the data composed with z -> p + eps z.
    #[test]
    fn rescaled_data_are_compositions(
        p in prop::array::uniform2(-1.0f64..1.0),
        z in prop::array::uniform2(-1.2f64..1.2),
        eps in prop_oneof![-0.3f64..-0.01, 0.01f64..0.3],
        u in -1.0f64..1.0,
    ) {
        let s = Arc::new(spec("(1 + x1^2) * exp(u) + sin(x2)", "cos(x1) + x2^3", "2 + tanh(x1 * x2)", &["x2", "-x1^2"], DMatrix::identity(2, 2)));
        let rp = RescaledProblem::new(s.clone(), &p, eps, 0.3);
        let x = [p[0] + eps * z[0], p[1] + eps * z[1]];
        prop_assert_eq!(rp.forcing(&z, u).unwrap(), s.forcing_at(&x, u).unwrap());
        prop_assert_eq!(rp.forcing_du(&z, u).unwrap(), s.forcing_du_at(&x, u).unwrap());
        prop_assert_eq!(rp.f0(&z).unwrap(), s.f0_at(&x).unwrap());
        prop_assert_eq!(rp.f1(&z).unwrap(), s.f1_at(&x).unwrap());
        let mut b = [0.0; 3];
        rp.drift(&z, &mut b).unwrap();
        prop_assert_eq!(&b[..2], &s.drift_at(&x).unwrap()[..]);
        prop_assert!((rp.lambda() * eps * eps - 0.3).abs() < 1e-14);
        prop_assert!((rp.c_from_scaled(0.7) * eps - 0.7).abs() < 1e-14);

        // chain rule: d/dz f0(p + eps z) = eps grad f0
        let h = 1e-6;
        let g = s.grad_f0_at(&x).unwrap();
        for j in 0..2 {
            let mut zp = z;
            let mut zm = z;
            zp[j] += h;
            zm[j] -= h;
            let fd = (rp.f0(&zp).unwrap() - rp.f0(&zm).unwrap()) / (2.0 * h);
            prop_assert!((fd - eps * g[j]).abs() < 1e-8, "{} vs {}", fd, eps * g[j]);
        }
    }
}

/// Central-difference Hessian and gradient of `f` at `y`.
fn fd_derivs(f: &dyn Fn(&[f64]) -> f64, y: &[f64], h: f64) -> (Vec<f64>, DMatrix<f64>) {
    let n = y.len();
    let shifted = |d: &[(usize, f64)]| {
        let mut v = y.to_vec();
        for &(i, s) in d {
            v[i] += s;
        }
        f(&v)
    };
    let g = (0..n).map(|i| (shifted(&[(i, h)]) - shifted(&[(i, -h)])) / (2.0 * h)).collect();
    let hess = DMatrix::from_fn(n, n, |i, j| {
        (shifted(&[(i, h), (j, h)]) - shifted(&[(i, h), (j, -h)]) - shifted(&[(i, -h), (j, h)]) + shifted(&[(i, -h), (j, -h)]))
            / (4.0 * h * h)
    });
    (g, hess)
}

#[test]
fn affine_reduction_maps_operator_to_laplacian() {
    let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
    // quadratic data: the principal parts are constant
    let q = DMatrix::from_row_slice(2, 2, &[1.5, -0.4, -0.4, 0.7]);
    let f0 = "0.75*x1^2 - 0.4*x1*x2 + 0.35*x2^2 + 0.2*x1 - x2";
    let s = spec("exp(u)", f0, "1 + 0.3*x1", &["1 + x2", "x1*x2"], a.clone());
    let r = s.affine_reduce().unwrap();
    assert!(r.is_identity_matrix());
    let (sqrt_a, inv_sqrt_a) = sqrt_spd(&a);
    assert!((&sqrt_a * &sqrt_a - &a).abs().max() < 1e-14);
    assert!((r.frame() - &sqrt_a).abs().max() < 1e-14);
    let expected_trace = (&a * &q).trace();

    for y in [[0.3, -0.2], [-1.1, 0.4], [0.0, 0.0], [0.8, 0.9]] {
        let x: Vec<f64> = (0..2).map(|i| (0..2).map(|j| sqrt_a[(i, j)] * y[j]).sum()).collect();
        let v = |yy: &[f64]| r.f0_at(yy).unwrap();
        let (gy, hy) = fd_derivs(&v, &y, 1e-3);
        // a_ij d_ij u in x equals the Laplacian in y
        assert!((hy.trace() - expected_trace).abs() < 1e-8, "{} vs {expected_trace}", hy.trace());

        // first-order terms: b~ . grad_y v = b . grad_x u
        let bx = s.drift_at(&x).unwrap();
        let by = r.drift_at(&y).unwrap();
        let gx = s.grad_f0_at(&x).unwrap();
        let lhs: f64 = (0..2).map(|i| by[i] * gy[i]).sum();
        let rhs: f64 = (0..2).map(|i| bx[i] * gx[i]).sum();
        assert!((lhs - rhs).abs() < 1e-8, "{lhs} vs {rhs}");

        // data are composed with the map
        assert!((r.f1_at(&y).unwrap() - s.f1_at(&x).unwrap()).abs() < 1e-14);
        assert!((r.forcing_at(&y, 0.3).unwrap() - s.forcing_at(&x, 0.3).unwrap()).abs() < 1e-14);

        // the metric conormal derivative is the normal derivative in y
        for t in [0.0f64, 0.7, 2.1, 4.0] {
            let ny = [t.cos(), t.sin()];
            let nu_raw: Vec<f64> = (0..2).map(|i| (0..2).map(|j| inv_sqrt_a[(i, j)] * ny[j]).sum()).collect();
            let len = (nu_raw[0] * nu_raw[0] + nu_raw[1] * nu_raw[1]).sqrt();
            let nu = [nu_raw[0] / len, nu_raw[1] / len];
            let a_nu = [a[(0, 0)] * nu[0] + a[(0, 1)] * nu[1], a[(1, 0)] * nu[0] + a[(1, 1)] * nu[1]];
            let conormal = (a_nu[0] * gx[0] + a_nu[1] * gx[1]) / (nu[0] * a_nu[0] + nu[1] * a_nu[1]).sqrt();
            let dy = ny[0] * gy[0] + ny[1] * gy[1];
            assert!((conormal - dy).abs() < 1e-8, "{conormal} vs {dy}");
        }
    }
}

#[test]
fn content_hash_tracks_data() {
    let a = spec("exp(u)", "1", "1", &["0", "0"], DMatrix::identity(2, 2));
    let b = spec("exp(u)", "1", "1", &["0", "0"], DMatrix::identity(2, 2));
    let c = spec("exp(u)", "1", "1.0001", &["0", "0"], DMatrix::identity(2, 2));
    assert_eq!(a.content_hash(), b.content_hash());
    assert_ne!(a.content_hash(), c.content_hash());
    assert_eq!(a.content_hash().len(), 64);
}
