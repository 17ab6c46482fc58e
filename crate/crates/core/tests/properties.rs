//! Cross-module properties checked on randomized inputs.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rayon::prelude::*;

use retarded_ou::analysis::{
    bdg_ratio, dalpha_mode_sup, dalpha_norm, ensemble_holder_estimate, holder_estimate, BProcess,
    StructureAccumulator,
};
use retarded_ou::convolution::{convolve_direct, convolve_factorized, AlphaWindow, ConvolutionConfig};
use retarded_ou::delay::{DelayOperator, DelaySpec, Kernel, KernelSpec, MatrixSpec, Segment, ThetaGrid};
use retarded_ou::deterministic::{holder_norm, solve_delay_classical, ForcingFunction};
use retarded_ou::green::{green_method_of_steps, green_volterra_series, quasi_semigroup_residual};
use retarded_ou::noise::{sample_noise, QWiener};
use retarded_ou::path::{TimeGrid, Trajectory};
use retarded_ou::spectral::{operator_norm, DenseOperator, SpectralModel};

fn scalar_op(r: f64, m: usize, b: f64, c: f64) -> DelayOperator {
    DelayOperator::standard(
        ThetaGrid::new(r, m).unwrap(),
        DenseOperator::diagonal(&[b]).unwrap(),
        move |t| c * (1.0 + t),
        DenseOperator::identity(1),
    )
    .unwrap()
}

/// `Y_j = Σ_{k<j} w_{j−k} ΔB_k` with `w_m² h = ∫_{(m−1)h}^{mh} s^{2H−1} ds`: a
/// Riemann-Liouville surrogate whose structure function scales like `δ^{2H}`.
fn riemann_liouville(hurst: f64, grid: TimeGrid, q: &QWiener, idx: u64) -> Trajectory {
    let h = grid.h();
    let steps = grid.steps();
    let e = 2.0 * hurst;
    let w: Vec<f64> = (0..=steps)
        .map(|m| if m == 0 { 0.0 } else { ((m as f64 * h).powf(e) - ((m - 1) as f64 * h).powf(e)) / (e * h) })
        .map(f64::sqrt)
        .collect();
    let noise = sample_noise(q, grid, idx);
    let mut y = Trajectory::zeros(grid, 1);
    for j in 1..=steps {
        y.node_mut(j)[0] = (0..j).map(|k| w[j - k] * noise.increment(k)[0]).sum();
    }
    y
}

#[test]
fn holder_estimate_recovers_surrogate_exponents() {
    let grid = TimeGrid::new(1.0 / 512.0, 512).unwrap();
    let q = QWiener::new(vec![1.0], 31).unwrap();
    for hurst in [0.3, 0.5, 0.7] {
        let template = StructureAccumulator::dyadic(grid, 6).unwrap();
        let rep = ensemble_holder_estimate(template, 10_000, |i| Ok(riemann_liouville(hurst, grid, &q, i))).unwrap();
        assert!((rep.estimate - hurst).abs() <= 0.05, "H = {hurst}: {}", rep.estimate);
    }
}

#[test]
fn holder_estimate_is_invariant_under_path_scaling() {
    let grid = TimeGrid::new(1.0 / 256.0, 256).unwrap();
    let q = QWiener::new(vec![1.0, 0.5], 4).unwrap();
    let paths: Vec<Trajectory> = (0..200).map(|i| sample_noise(&q, grid, i).cumulative().clone()).collect();
    let scaled: Vec<Trajectory> = paths
        .iter()
        .map(|y| y.map_nodes(|v| v.iter().map(|x| 3.0 * x).collect()).unwrap())
        .collect();
    let a = holder_estimate(&paths, 5).unwrap();
    let b = holder_estimate(&scaled, 5).unwrap();
    assert!((a.estimate - b.estimate).abs() < 1e-12);
    assert!(a.band_lo <= a.estimate && a.estimate <= a.band_hi);
}

/// `sup_θ ‖ψ‖ … ` helper: the C^α norm of the forcing sampled on a grid.
fn forcing_norm(f: &ForcingFunction, grid: TimeGrid, alpha: f64) -> f64 {
    holder_norm(&f.sample(grid).unwrap(), alpha)
}

#[test]
fn apriori_constant_does_not_grow_under_refinement() {
    let alpha = 0.5;
    let model = SpectralModel::dirichlet_laplacian(3);
    let cases: Vec<(f64, f64, f64, [f64; 3], f64)> = vec![
        (0.0, 0.0, 0.0, [1.0, 0.0, 0.0], 0.0),
        (0.5, 0.0, 0.0, [1.0, -1.0, 0.5], 0.0),
        (1.0, 1.0, 0.0, [0.2, 0.1, -0.3], 0.0),
        (0.0, 2.0, 1.0, [0.0, 0.0, 0.0], 1.0),
        (0.8, 0.5, 0.5, [1.0, 1.0, 1.0], 0.5),
        (-0.5, 1.0, 0.0, [0.5, -0.5, 0.5], 2.0),
        (0.3, -1.0, 2.0, [2.0, 0.0, -1.0], 0.0),
        (1.5, 0.0, 1.0, [-1.0, 0.3, 0.2], 1.0),
        (0.0, 0.0, 3.0, [0.1, 0.1, 0.1], 0.0),
        (1.0, 1.0, 1.0, [1.0, -2.0, 1.0], 1.5),
    ];
    let ratios = |m: usize| -> Vec<f64> {
        cases
            .iter()
            .map(|&(b1, c, amp, x, hist)| {
                let grid = ThetaGrid::new(0.5, m).unwrap();
                let op = DelayOperator::standard(
                    grid,
                    DenseOperator::identity(3).scaled(b1),
                    move |t| c * (1.0 - t),
                    DenseOperator::identity(3).scaled(0.5),
                )
                .unwrap();
                let f = ForcingFunction::new(3, alpha, move |t| DVector::from_vec(vec![amp * t.sqrt(), amp * (3.0 * t).sin(), amp]));
                let phi0 = DVector::from_row_slice(&x);
                let phi1 = Segment::constant(grid, &DVector::from_element(3, hist));
                let sol = solve_delay_classical(&model, &op, &f, &phi0, &phi1, 1.0).unwrap();
                let lhs = holder_norm(&sol.trajectory, alpha);
                let rhs = phi0.norm()
                    + sol.compatibility_norm.unwrap()
                    + hist * 3f64.sqrt()
                    + forcing_norm(&f, sol.trajectory.grid(), alpha);
                lhs / rhs
            })
            .collect()
    };
    let fitted = ratios(10).into_iter().fold(0.0, f64::max);
    for m in [20, 40] {
        let worst = ratios(m).into_iter().fold(0.0, f64::max);
        assert!(worst <= fitted * 1.01, "M = {m}: {worst} vs fitted {fitted}");
    }
}

fn prop_delay_model() -> impl Strategy<Value = (f64, f64, f64)> {
    (-1.5f64..1.5, -2.0f64..2.0, -3.0f64..-0.1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn volterra_series_within_tail_of_method_of_steps((b, c, a) in prop_delay_model()) {
        let model = SpectralModel::new(vec![a], "scalar").unwrap();
        let op = scalar_op(0.5, 20, b, c);
        let g = green_method_of_steps(&model, &op, 1.0).unwrap();
        let s = green_volterra_series(&model, &op, 1.0, 12).unwrap();
        for j in 0..=g.grid().steps() {
            prop_assert!(operator_norm(&(s.table.matrix(j) - g.matrix(j))) <= s.tail_bound + 5.0 * g.h());
        }
    }

    #[test]
    fn green_is_zero_before_zero_and_identity_at_zero((b, c, a) in prop_delay_model(), t in -3.0f64..-1e-9) {
        let model = SpectralModel::new(vec![a, 2.0 * a], "pair").unwrap();
        let op = DelayOperator::standard(
            ThetaGrid::new(0.5, 10).unwrap(),
            DenseOperator::new(DMatrix::from_row_slice(2, 2, &[b, 0.1, -0.2, b])).unwrap(),
            move |th| c * th,
            DenseOperator::identity(2),
        ).unwrap();
        let g = green_method_of_steps(&model, &op, 1.0).unwrap();
        prop_assert_eq!(g.at(t).unwrap(), DMatrix::zeros(2, 2));
        prop_assert_eq!(g.matrix(0), DMatrix::identity(2, 2));
    }

    #[test]
    fn quasi_semigroup_is_exact_at_t_zero((b, c, a) in prop_delay_model(), s_steps in 0usize..=40, x0 in -2.0f64..2.0) {
        let model = SpectralModel::new(vec![a], "scalar").unwrap();
        let op = scalar_op(0.5, 10, b, c);
        let g = green_method_of_steps(&model, &op, 2.0).unwrap();
        let s = s_steps as f64 * 0.05;
        let r = quasi_semigroup_residual(&g, &op, s, 0.0, &DVector::from_vec(vec![x0])).unwrap();
        prop_assert!(r <= 1e-12 * (1.0 + x0.abs() * g.norms().into_iter().fold(0.0, f64::max)));
    }

    #[test]
    fn classical_solver_reproduces_green_action((b, c, a) in prop_delay_model(), x0 in -2.0f64..2.0) {
        let model = SpectralModel::new(vec![a], "scalar").unwrap();
        let op = scalar_op(0.5, 20, b, c);
        let g = green_method_of_steps(&model, &op, 1.0).unwrap();
        let x = DVector::from_vec(vec![x0]);
        let sol = solve_delay_classical(&model, &op, &ForcingFunction::zero(1), &x, &Segment::zeros(op.grid(), 1), 1.0).unwrap();
        let h = op.grid().step();
        for j in 0..=g.grid().steps() {
            let gx = g.matrix(j)[(0, 0)] * x0;
            prop_assert!((gx - sol.trajectory.node(j)[0]).abs() <= 10.0 * h * (1.0 + x0.abs()));
        }
    }

    #[test]
    fn dalpha_grid_sup_matches_closed_form(a in -200.0f64..-0.1, alpha in 0.05f64..0.95, x in 0.1f64..5.0) {
        let model = SpectralModel::new(vec![a], "scalar").unwrap();
        let v = dalpha_norm(&model, alpha, &DVector::from_vec(vec![x]), 20.0).unwrap();
        let exact = dalpha_mode_sup(a, alpha) * x;
        prop_assert!((v / exact - 1.0).abs() < 0.01, "{} vs {}", v, exact);
    }

    #[test]
    fn both_convolutions_vanish_at_zero_and_are_linear_in_b(seed in any::<u64>(), s1 in -2.0f64..2.0, s2 in -2.0f64..2.0) {
        let model = SpectralModel::new(vec![-1.0, -3.0], "pair").unwrap();
        let op = DelayOperator::standard(ThetaGrid::new(0.25, 4).unwrap(), DenseOperator::identity(2).scaled(0.5), |t| 1.0 + t, DenseOperator::identity(2)).unwrap();
        let g = green_method_of_steps(&model, &op, 0.5).unwrap();
        let q = QWiener::new(vec![1.0, 0.4], seed).unwrap();
        let noise = sample_noise(&q, g.grid(), 0);
        let b1 = DenseOperator::new(DMatrix::from_row_slice(2, 2, &[s1, 0.3, 0.0, 1.0])).unwrap();
        let b2 = DenseOperator::new(DMatrix::from_row_slice(2, 2, &[0.2, s2, -1.0, 0.0])).unwrap();
        let sum = DenseOperator::new(b1.matrix() + b2.matrix()).unwrap();
        let (d1, d2, ds) = (convolve_direct(&g, &b1, &noise).unwrap(), convolve_direct(&g, &b2, &noise).unwrap(), convolve_direct(&g, &sum, &noise).unwrap());
        for ((x, y), z) in d1.values().iter().zip(d2.values()).zip(ds.values()) {
            prop_assert!((x + y - z).abs() < 1e-12 * (1.0 + z.abs()));
        }
        let cfg = ConvolutionConfig::new(0.3, 4.0, AlphaWindow::Moment).unwrap();
        let f = convolve_factorized(&g, &op, &b1, &noise, &cfg).unwrap();
        prop_assert_eq!(f.trajectory.node(0), &[0.0, 0.0][..]);
        prop_assert_eq!(d1.node(0), &[0.0, 0.0][..]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn bdg_ratio_is_invariant_under_joint_scaling(c in 0.1f64..10.0, seed in any::<u64>()) {
        let model = SpectralModel::new(vec![-1.0, -2.0], "pair").unwrap();
        let spec = DelaySpec { r: 0.25, b1: MatrixSpec::Identity(0.5), b0: MatrixSpec::Identity(0.25), kernel: KernelSpec::Constant(1.0) };
        let q = QWiener::new(vec![1.0, 0.5], seed).unwrap();
        let bp = BProcess::Schedule { breaks: vec![0.0, 0.5], scales: vec![1.0, 0.3], b: DenseOperator::identity(2) };
        let one = bdg_ratio(&model, &spec, &bp, &q, 4.0, 1.0, 50, &[4, 8], None).unwrap();
        let two = bdg_ratio(&model, &spec, &bp.scaled(c), &q, 4.0, 1.0, 50, &[4, 8], None).unwrap();
        prop_assert!((one.ratio - two.ratio).abs() <= 1e-9 * one.ratio);
        for (g1, g2) in one.grids.iter().zip(&two.grids) {
            prop_assert!((g2.lhs / g1.lhs / c.powi(4) - 1.0).abs() < 1e-9);
            prop_assert!((g2.rhs / g1.rhs / c.powi(4) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ensemble_estimates_do_not_depend_on_scheduling(seed in any::<u64>()) {
        let grid = TimeGrid::new(1.0 / 128.0, 128).unwrap();
        let q = QWiener::new(vec![1.0], seed).unwrap();
        let template = StructureAccumulator::dyadic(grid, 5).unwrap();
        let gen = |i: u64| Ok(sample_noise(&q, grid, i).cumulative().clone());
        let pooled = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = ensemble_holder_estimate(template.clone(), 300, gen).unwrap();
        let b = pooled.install(|| ensemble_holder_estimate(template, 300, gen)).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn zero_kernel_matches_kernel_free_operator() {
    let model = SpectralModel::dirichlet_laplacian(3);
    let spec = DelaySpec { r: 0.25, b1: MatrixSpec::Identity(0.7), b0: MatrixSpec::Identity(1.0), kernel: KernelSpec::Zero };
    let with = spec.build(3, 16).unwrap();
    let without = DelayOperator::general(ThetaGrid::new(0.25, 16).unwrap(), vec![(0.25, DenseOperator::identity(3).scaled(0.7))], Kernel::None).unwrap();
    let a = green_method_of_steps(&model, &with, 1.0).unwrap();
    let b = green_method_of_steps(&model, &without, 1.0).unwrap();
    assert!(a.max_entry_difference(&b).unwrap() < 1e-15);
    let q = QWiener::power_law(3, 2.0, 0).unwrap();
    let bs: Vec<f64> = (0..4u64)
        .into_par_iter()
        .map(|i| {
            let noise = sample_noise(&q, a.grid(), i);
            convolve_direct(&a, &DenseOperator::identity(3), &noise)
                .unwrap()
                .sup_distance(&convolve_direct(&b, &DenseOperator::identity(3), &noise).unwrap())
                .unwrap()
        })
        .collect();
    assert!(bs.iter().all(|&d| d < 1e-14));
}
