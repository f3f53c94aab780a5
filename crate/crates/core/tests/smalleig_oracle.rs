use achopf_core::linalg::{max_abs, CMat, C64};
use achopf_core::smalleig::{char_poly_roots, eig_dense, eigenvalues};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_real(rng: &mut ChaCha8Rng, n: usize) -> CMat {
    CMat::from_fn(n, n, |_, _| C64::new(rng.gen_range(-1.0..1.0), 0.0))
}

fn random_complex(rng: &mut ChaCha8Rng, n: usize) -> CMat {
    CMat::from_fn(n, n, |_, _| {
        C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    })
}

/// Greedy nearest matching; enough for five well-separated roots.
fn matched_distance(a: &[C64], b: &[C64]) -> f64 {
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for z in a {
        let (j, d) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, w)| (j, (z - w).norm()))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        used[j] = true;
        worst = worst.max(d);
    }
    worst
}

fn min_gap(v: &[C64]) -> f64 {
    let mut g = f64::INFINITY;
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            g = g.min((v[i] - v[j]).norm());
        }
    }
    g
}

#[test]
fn qr_and_characteristic_polynomial_agree_on_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(20240611);
    let mut checked = 0;
    for trial in 0..1000 {
        let a = if trial % 2 == 0 {
            random_real(&mut rng, 5)
        } else {
            random_complex(&mut rng, 5)
        };
        let qr = eigenvalues(&a).unwrap();
        let cp = char_poly_roots(&a).unwrap();
        // Root conditioning degrades like 1/gap; skip near-collisions.
        if min_gap(&qr) < 1e-3 {
            continue;
        }
        checked += 1;
        let d = matched_distance(&qr, &cp);
        assert!(d < 1e-9, "trial {trial}: {d:e}\n{qr:?}\n{cp:?}");
    }
    assert!(checked > 950, "only {checked} trials were well separated");
}

#[test]
fn biorthogonality_on_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let a = random_complex(&mut rng, 5);
        let sys = eig_dense(&a).unwrap();
        if min_gap(&sys.values) < 1e-3 {
            continue;
        }
        for i in 0..5 {
            let yi = sys.dual(i);
            for j in 0..5 {
                let want = if i == j { 1.0 } else { 0.0 };
                let got = yi.dotc(&sys.right[j]);
                assert!((got - want).norm() < 1e-10, "({i},{j}) {got}");
            }
        }
    }
}

fn real_matrix(n: usize) -> impl Strategy<Value = CMat> {
    prop::collection::vec(-10.0f64..10.0, n * n)
        .prop_map(move |v| CMat::from_fn(n, n, |i, j| C64::new(v[i * n + j], 0.0)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn residuals_are_small(a in real_matrix(5)) {
        let sys = eig_dense(&a).unwrap();
        let scale = max_abs(&a).max(1.0);
        for i in 0..sys.len() {
            if sys.condition[i].is_infinite() { continue; }
            let r = (&a * &sys.right[i] - &sys.right[i] * sys.values[i]).norm();
            prop_assert!(r <= 1e-11 * scale, "right residual {r:e}");
            let l = (a.adjoint() * &sys.left[i] - &sys.left[i] * sys.values[i].conj()).norm();
            prop_assert!(l <= 1e-11 * scale, "left residual {l:e}");
        }
    }

    #[test]
    fn real_spectra_are_conjugation_closed(a in real_matrix(5)) {
        let v = eigenvalues(&a).unwrap();
        let conj: Vec<C64> = v.iter().map(|z| z.conj()).collect();
        let scale = max_abs(&a).max(1.0);
        prop_assert!(matched_distance(&v, &conj) <= 1e-12 * scale);
    }

    #[test]
    fn permutation_similarity_preserves_spectrum(a in real_matrix(4), shift in 0usize..4) {
        let n = 4;
        let p = CMat::from_fn(n, n, |i, j| {
            if j == (i + shift + 1) % n { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) }
        });
        let b = p.transpose() * &a * &p;
        let va = eigenvalues(&a).unwrap();
        let vb = eigenvalues(&b).unwrap();
        let scale = max_abs(&a).max(1.0);
        if min_gap(&va) > 1e-4 * scale {
            prop_assert!(matched_distance(&va, &vb) <= 1e-10 * scale);
        }
    }

    #[test]
    fn sorted_by_real_part(a in real_matrix(5)) {
        let v = eigenvalues(&a).unwrap();
        for w in v.windows(2) {
            prop_assert!(w[0].re >= w[1].re - 1e-12 * max_abs(&a).max(1.0));
        }
    }
}
