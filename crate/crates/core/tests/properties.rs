use bohmlab::formalism::{
    born_distribution, density_update, ideal_measurement, povm_of, strong_measure, DensityMatrix, Effects,
};
use bohmlab::hilbert::{partial_trace, spectral_decompose, tensor_product, HermitianOperator, Operator, StateVector};
use bohmlab::nogo::{self, povm_map, quadratic_map_test};
use bohmlab::rng::Stream;
use bohmlab::C64;
use proptest::prelude::*;

fn hermitian(dim: usize, seed: u64) -> HermitianOperator {
    let mut s = Stream::new(seed, 1);
    let rows: Vec<Vec<C64>> = (0..dim).map(|_| (0..dim).map(|_| C64::new(s.normal(), s.normal())).collect()).collect();
    HermitianOperator::symmetrized(&Operator::from_rows(&rows).unwrap())
}

/// Hermitian operator with a repeated eigenvalue.
fn degenerate(dim: usize, seed: u64) -> HermitianOperator {
    let mut s = Stream::new(seed, 2);
    let v = nogo::random_state(dim, &mut s).unwrap();
    let p = v.projector();
    HermitianOperator::symmetrized(&(&Operator::identity(dim) - &p.scale_real(3.0)))
}

fn state(dim: usize, seed: u64) -> StateVector {
    nogo::random_state(dim, &mut Stream::new(seed, 3)).unwrap()
}

fn rotate(n: [f64; 3], axis: [f64; 3], angle: f64) -> [f64; 3] {
    // Rodrigues
    let (c, s) = (angle.cos(), angle.sin());
    let dot: f64 = n.iter().zip(&axis).map(|(a, b)| a * b).sum();
    let cross = [axis[1] * n[2] - axis[2] * n[1], axis[2] * n[0] - axis[0] * n[2], axis[0] * n[1] - axis[1] * n[0]];
    [0, 1, 2].map(|i| n[i] * c + cross[i] * s + axis[i] * dot * (1.0 - c))
}

fn unit(theta: f64, phi: f64) -> [f64; 3] {
    [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spectral_projectors_resolve_identity(dim in 1usize..7, seed in any::<u64>()) {
        let a = hermitian(dim, seed);
        let dec = spectral_decompose(&a, None).unwrap();
        prop_assert!(dec.reconstruct().max_abs_diff(a.op()) < 1e-10);
        let sum = dec.projectors.iter().fold(Operator::zeros(dim), |acc, p| &acc + p.op());
        prop_assert!(sum.max_abs_diff(&Operator::identity(dim)) < 1e-10);
        for p in &dec.projectors {
            prop_assert!((p.op() * p.op()).max_abs_diff(p.op()) < 1e-10);
        }
        prop_assert!(dec.eigenvalues.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn degenerate_eigenspaces_merge(dim in 2usize..7, seed in any::<u64>()) {
        let dec = spectral_decompose(&degenerate(dim, seed), None).unwrap();
        prop_assert_eq!(dec.eigenvalues.len(), 2);
        prop_assert!((dec.projectors[1].op().trace().re - (dim - 1) as f64).abs() < 1e-9);
    }

    #[test]
    fn partial_trace_of_product(da in 1usize..4, db in 1usize..4, seed in any::<u64>()) {
        let (u, v) = (state(da, seed), state(db, seed ^ 0x5555));
        let prod = tensor_product(&u.projector(), &v.projector()).unwrap();
        prop_assert!(partial_trace(&prod, 0, &[da, db]).unwrap().max_abs_diff(&u.projector()) < 1e-12);
        prop_assert!(partial_trace(&prod, 1, &[da, db]).unwrap().max_abs_diff(&v.projector()) < 1e-12);
    }

    #[test]
    fn born_distribution_sums_to_one(dim in 1usize..7, seed in any::<u64>()) {
        let m = ideal_measurement(&hermitian(dim, seed)).unwrap();
        let d = born_distribution(&m, &state(dim, seed)).unwrap();
        prop_assert!(d.iter().all(|(_, p)| *p >= -1e-14));
        prop_assert!((d.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(povm_of(&m).unwrap().closure_defect() < 1e-10);
    }

    #[test]
    fn collapse_is_reproducible(dim in 2usize..6, seed in any::<u64>()) {
        let m = ideal_measurement(&degenerate(dim, seed)).unwrap();
        let psi = state(dim, seed);
        let mut s = Stream::new(seed, 4);
        let (label, post) = strong_measure(&m, &psi, &mut s).unwrap();
        // measuring again reads the same label with certainty
        let again = born_distribution(&m, &post).unwrap();
        let p = again.iter().find(|(l, _)| l.same_as(&label)).map_or(0.0, |x| x.1);
        prop_assert!((p - 1.0).abs() < 1e-10);
    }

    #[test]
    fn density_update_preserves_trace(dim in 2usize..6, seed in any::<u64>()) {
        let m = ideal_measurement(&hermitian(dim, seed)).unwrap();
        let w = DensityMatrix::pure(&state(dim, seed)).unwrap();
        for (label, o) in m.effects() {
            if w.probability(&m, |l| l.same_as(&label)) < 1e-9 {
                continue;
            }
            let (p, post) = density_update(&w, &m, &label).unwrap();
            prop_assert!((p - (w.op() * &o).trace().re).abs() < 1e-12);
            prop_assert!((post.op().trace().re - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn povm_maps_satisfy_quadratic_inequality(dim in 2usize..5, outcomes in 2usize..6, seed in any::<u64>()) {
        let mut s = Stream::new(seed, 5);
        let povm = nogo::random_povm(dim, outcomes, &mut s).unwrap();
        let pairs: Vec<_> = (0..8)
            .map(|_| {
                let a = nogo::random_state(dim, &mut s).unwrap().scale(C64::new(3.0 * s.uniform(), 0.0));
                (a, nogo::random_state(dim, &mut s).unwrap())
            })
            .collect();
        let r = quadratic_map_test(povm_map(&povm), &pairs).unwrap();
        prop_assert!(r.holds(1e-10), "slack {}", r.worst_slack);
    }

    #[test]
    fn bell_terms_invariant_under_rotation(
        t in proptest::array::uniform3(0.0f64..std::f64::consts::PI),
        p in proptest::array::uniform3(0.0f64..std::f64::consts::TAU),
        axis in (0.0f64..std::f64::consts::PI, 0.0f64..std::f64::consts::TAU),
        angle in -std::f64::consts::PI..std::f64::consts::PI,
    ) {
        let dirs = [unit(t[0], p[0]), unit(t[1], p[1]), unit(t[2], p[2])];
        let before = nogo::bell_terms(dirs[0], dirs[1], dirs[2]).unwrap();
        let ax = unit(axis.0, axis.1);
        let r = dirs.map(|d| rotate(d, ax, angle));
        let after = nogo::bell_terms(r[0], r[1], r[2]).unwrap();
        for (x, y) in before.iter().zip(&after) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        let dot = |u: [f64; 3], v: [f64; 3]| u.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        prop_assert!((before[0] - 0.5 * (1.0 + dot(dirs[0], dirs[1]))).abs() < 1e-12);
    }
}
