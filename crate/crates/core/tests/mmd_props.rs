use ngil::matrix::Matrix;
use ngil::mmd::{
    kernel_eval, mmd2_grad, mmd2_hat, mmd2_value_and_grad, mmd_hat, KernelConfig, NormMode,
};
use proptest::prelude::*;

fn sample(max_rows: usize, dim: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_rows).prop_flat_map(move |n| {
        prop::collection::vec(-4.0f64..4.0, n * dim)
            .prop_map(move |v| Matrix::from_vec(n, dim, v).unwrap())
    })
}

fn pair() -> impl Strategy<Value = (Matrix, Matrix)> {
    (1usize..4).prop_flat_map(|d| (sample(12, d), sample(12, d)))
}

fn mode() -> impl Strategy<Value = KernelConfig> {
    prop_oneof![Just(NormMode::PlainL2), Just(NormMode::SquaredL2)].prop_map(|norm_mode| {
        KernelConfig {
            norm_mode,
            ..KernelConfig::default()
        }
    })
}

/// Naive estimator written straight from the definition.
fn oracle(x: &Matrix, y: &Matrix, cfg: &KernelConfig) -> f64 {
    let mean = |a: &Matrix, b: &Matrix| {
        let mut s = 0.0;
        for i in a.iter_rows() {
            for j in b.iter_rows() {
                s += kernel_eval(i, j, cfg).unwrap();
            }
        }
        s / (a.rows() * b.rows()) as f64
    };
    mean(x, x) + mean(y, y) - 2.0 * mean(x, y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn estimator_axioms((x, y) in pair(), cfg in mode()) {
        prop_assert_eq!(mmd2_hat(&x, &x, &cfg).unwrap(), 0.0);
        let xy = mmd2_hat(&x, &y, &cfg).unwrap();
        let yx = mmd2_hat(&y, &x, &cfg).unwrap();
        prop_assert!((xy - yx).abs() <= 1e-12);
        prop_assert!(xy >= -1e-12);
        prop_assert!((xy - oracle(&x, &y, &cfg)).abs() <= 1e-12);
        prop_assert!((mmd_hat(&x, &y, &cfg).unwrap() - xy.max(0.0).sqrt()).abs() <= 1e-15);
    }

    #[test]
    fn row_order_does_not_matter((x, y) in pair(), rot in 0usize..12) {
        let cfg = KernelConfig::default();
        let order: Vec<usize> = (0..x.rows()).map(|i| (i + rot) % x.rows()).collect();
        let shuffled = x.select_rows(&order);
        let a = mmd2_hat(&x, &y, &cfg).unwrap();
        let b = mmd2_hat(&shuffled, &y, &cfg).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn fused_and_separate_passes_agree((x, y) in pair(), cfg in mode()) {
        let (v, gx, gy) = mmd2_value_and_grad(&x, &y, &cfg).unwrap();
        let (ex, ey) = mmd2_grad(&x, &y, &cfg).unwrap();
        prop_assert!((v - mmd2_hat(&x, &y, &cfg).unwrap()).abs() <= 1e-12);
        prop_assert!(gx.max_abs_diff(&ex) <= 1e-12);
        prop_assert!(gy.max_abs_diff(&ey) <= 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences((x, y) in pair(), cfg in mode()) {
        let (gx, gy) = mmd2_grad(&x, &y, &cfg).unwrap();
        let eps = 1e-6;
        for (which, g) in [(0, &gx), (1, &gy)] {
            for k in 0..g.as_slice().len() {
                let bump = |d: f64| {
                    let (mut a, mut b) = (x.clone(), y.clone());
                    let m = if which == 0 { &mut a } else { &mut b };
                    m.as_mut_slice()[k] += d;
                    mmd2_hat(&a, &b, &cfg).unwrap()
                };
                let numeric = (bump(eps) - bump(-eps)) / (2.0 * eps);
                let analytic = g.as_slice()[k];
                // plain L2 has a kink at coincident points; random reals never coincide
                prop_assert!((numeric - analytic).abs() <= 1e-5 * analytic.abs().max(1.0), "{} vs {}", numeric, analytic);
            }
        }
    }
}

#[test]
fn larger_shifts_give_larger_discrepancy() {
    let cfg = KernelConfig::default();
    let x = Matrix::from_vec(6, 1, vec![-1.0, -0.4, 0.0, 0.3, 0.9, 1.5]).unwrap();
    let mut last = -1.0;
    for delta in [0.0, 0.5, 1.0, 2.0] {
        let mut y = x.clone();
        y.as_mut_slice().iter_mut().for_each(|v| *v += delta);
        let m = mmd2_hat(&x, &y, &cfg).unwrap();
        assert!(m > last, "delta {delta}: {m} <= {last}");
        last = m;
    }
}
