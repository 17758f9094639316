use mgrid_core::consensus::{
    build_laplacian, consensus_rates, enumerate_topologies, enumerate_topologies_with_pinning, lambda2, leader_pinning,
    min_consensus_gain, validate_topology, CommTopology, SharedMeasurement,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

const WN: f64 = 314.159_265_358_979_3;

/// Number of spanning trees found by checking connectivity of every (N−1)-edge subset.
fn brute_force_count(n: usize) -> usize {
    let all: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    (0u32..1 << all.len())
        .filter(|m| m.count_ones() as usize == n - 1)
        .filter(|m| {
            let mut label: Vec<usize> = (0..n).collect();
            for (b, &(i, j)) in all.iter().enumerate() {
                if m >> b & 1 == 1 {
                    let (a, c) = (label[i], label[j]);
                    label.iter_mut().filter(|l| **l == c).for_each(|l| *l = a);
                }
            }
            label.iter().all(|&l| l == label[0])
        })
        .count()
}

#[test]
fn enumeration_matches_cayley_and_brute_force() {
    for n in 2..=5 {
        let trees = enumerate_topologies(n).unwrap();
        assert_eq!(trees.len(), n.pow(n as u32 - 2), "N = {n}");
        assert_eq!(trees.len(), brute_force_count(n), "N = {n}");
    }
    assert_eq!(enumerate_topologies(6).unwrap().len(), 1296);
}

#[test]
fn every_tree_is_valid_and_pinned_connected() {
    for n in 2..=6 {
        for t in enumerate_topologies(n).unwrap() {
            assert!(validate_topology(&t.adjacency, &t.pinning));
            assert!(t.lambda2 > 0.0);
            assert_eq!(t.directed_links(), 2 * (n - 1));
        }
    }
}

#[test]
fn star_at_the_leader_comes_first() {
    let t = &enumerate_topologies(4).unwrap()[0];
    assert_eq!(t.degree(0), 3);
    assert!((1..4).all(|k| t.degree(k) == 1));
}

fn determinant_at(l: &DMatrix<f64>, g: &[f64], lambda: f64) -> f64 {
    let n = l.nrows();
    let mut m = l.clone();
    for i in 0..n {
        m[(i, i)] += g[i] - lambda;
    }
    m.determinant()
}

fn random_graph(n: usize, bits: &[bool], pinning: &[f64]) -> Option<CommTopology> {
    let all: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let edges: Vec<(usize, usize)> = all.iter().zip(bits).filter(|(_, &b)| b).map(|(&e, _)| e).collect();
    CommTopology::from_edges(0, n, &edges, pinning).ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn laplacian_rows_sum_to_zero_and_l_plus_g_is_psd(
        n in 2usize..7,
        bits in prop::collection::vec(any::<bool>(), 15),
        g0 in 0.1f64..5.0,
    ) {
        let mut s = DMatrix::zeros(n, n);
        let mut idx = 0;
        for i in 0..n {
            for j in i + 1..n {
                if bits[idx] {
                    s[(i, j)] = 1.0;
                    s[(j, i)] = 1.0;
                }
                idx += 1;
            }
        }
        let l = build_laplacian(&s).unwrap();
        for i in 0..n {
            prop_assert_eq!(l.row(i).iter().sum::<f64>(), 0.0);
        }
        prop_assert_eq!(&l, &l.transpose());
        let mut pinned = l.clone();
        pinned[(0, 0)] += g0;
        let eig = pinned.symmetric_eigenvalues();
        prop_assert!(eig.iter().all(|&e| e > -1e-10), "{eig:?}");
    }

    #[test]
    fn lambda2_is_an_eigenvalue_and_a_rayleigh_lower_bound(
        n in 2usize..7,
        bits in prop::collection::vec(any::<bool>(), 15),
        x in prop::collection::vec(-1.0f64..1.0, 6),
    ) {
        let pinning = leader_pinning(n, 1.0);
        if let Some(t) = random_graph(n, &bits, &pinning) {
            let l = &t.laplacian;
            let lam = lambda2(l, &pinning).unwrap();
            let scale = determinant_at(l, &pinning, lam - 0.5).abs().max(determinant_at(l, &pinning, lam + 0.5).abs());
            prop_assert!(determinant_at(l, &pinning, lam).abs() <= 1e-8 * scale.max(1.0));
            let x = nalgebra::DVector::from_iterator(n, x.iter().copied().take(n));
            let mut m = l.clone();
            for i in 0..n {
                m[(i, i)] += pinning[i];
            }
            let rq = x.dot(&(&m * &x));
            prop_assert!(rq >= lam * x.norm_squared() - 1e-9);
        }
    }

    #[test]
    fn consensus_fixed_point_is_gain_invariant(
        tree in 0usize..16,
        share in 0.0f64..1.0,
        reactive in 0.0f64..1.0,
        k in 0.01f64..500.0,
    ) {
        let t = &enumerate_topologies_with_pinning(&leader_pinning(4, 1.0)).unwrap()[tree];
        let own = SharedMeasurement { omega: WN, power_share: share, reactive_share: reactive };
        let received = vec![Some(own); 4];
        for dg in 0..4 {
            let (f, v) = consensus_rates(dg, &received, own, &t.adjacency, &t.pinning, k, k, WN);
            prop_assert_eq!((f, v), (0.0, 0.0));
        }
    }

    #[test]
    fn minimum_gain_is_half_the_inverse_connectivity(tree in 0usize..16) {
        let t = &enumerate_topologies(4).unwrap()[tree];
        let k = min_consensus_gain(t).unwrap();
        prop_assert!((k * 2.0 * t.lambda2 - 1.0).abs() < 1e-12);
    }
}
