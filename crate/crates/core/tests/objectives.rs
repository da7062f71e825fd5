mod common;

use common::*;
use densemetric::density::{density_regularizer, DensityState};
use densemetric::{contrastive_loss, mine_pairs, mine_triplets, mine_tuplets, npair_loss, triplet_loss, Error, Matrix};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn permute(f: &Matrix, labels: &[usize], perm: &[usize]) -> (Matrix, Vec<usize>) {
    let rows: Vec<Vec<f64>> = perm.iter().map(|&i| f.row(i).to_vec()).collect();
    (Matrix::from_rows(&rows).unwrap(), perm.iter().map(|&i| labels[i]).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_match_naive(seed in 0u64..1000, classes in 2usize..5, per in 2usize..5, margin in 0.1f64..2.0) {
        let labels = grouped_labels(classes, per);
        let f = unit_rows(labels.len(), 6, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let pairs = mine_pairs(&labels);
        let c = contrastive_loss(&f, &pairs, margin).unwrap().value;
        prop_assert!((c - naive_contrastive(&f, &pairs.positives, &pairs.negatives, margin)).abs() < 1e-10);
        prop_assert!(c >= 0.0);

        let trips = mine_triplets(&labels, 2, &mut rng).unwrap();
        let t: Vec<_> = trips.triplets.iter().map(|t| (t.anchor, t.positive, t.negative)).collect();
        let v = triplet_loss(&f, &trips, margin).unwrap().value;
        prop_assert!((v - naive_triplet(&f, &t, margin)).abs() < 1e-10);
        prop_assert!(v >= 0.0);

        let tups = mine_tuplets(&labels, &mut rng).unwrap();
        let t: Vec<_> = tups.tuplets.iter().map(|t| (t.anchor, t.positive, t.negatives.clone())).collect();
        let v = npair_loss(&f, &tups).unwrap().value;
        prop_assert!((v - naive_npair(&f, &t)).abs() < 1e-10);
        prop_assert!(v >= 0.0);
    }

    #[test]
    fn regularizer_is_permutation_invariant(seed in 0u64..1000, eta in 0.0f64..1.0) {
        let labels = grouped_labels(3, 4);
        let f = unit_rows(12, 5, seed);
        let mut state = DensityState::new(vec![0.3, 0.9, 1.4], 0.5, eta, 1.0).unwrap();
        state.alphas = vec![0.2, 0.6, 1.1];
        let perm: Vec<usize> = (0..12).map(|i| (i * 5 + seed as usize) % 12).collect();
        let (pf, pl) = permute(&f, &labels, &perm);
        let a = density_regularizer(&f, &labels, &state).unwrap();
        let b = density_regularizer(&pf, &pl, &state).unwrap();
        prop_assert!((a.value - b.value).abs() < 1e-12);
        for (x, y) in a.d_alpha.iter().zip(&b.d_alpha) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_eta_penalizes_only_alpha_spread(seed in 0u64..1000, a in 0.0f64..2.0, b in 0.0f64..2.0) {
        let labels = grouped_labels(2, 3);
        let f = unit_rows(6, 4, seed);
        let mut state = DensityState::new(vec![0.2, 3.0], 0.5, 0.0, 1.0).unwrap();
        state.alphas = vec![a, b];
        let out = density_regularizer(&f, &labels, &state).unwrap();
        // W = 1 for both classes: 1/4 * 2 (a - b)^2
        prop_assert!((out.penalty - 0.5 * (a - b) * (a - b)).abs() < 1e-12);
    }
}

#[test]
fn coincident_positive_pair_costs_nothing() {
    let f = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
    let pairs = densemetric::PairSet {
        positives: vec![(0, 1)],
        negatives: vec![],
    };
    let out = contrastive_loss(&f, &pairs, 1.0).unwrap();
    assert_eq!(out.value, 0.0);
    assert!(out.d_embeddings.as_slice().iter().all(|&g| g == 0.0));
}

#[test]
fn npair_survives_large_score_gaps() {
    let f = Matrix::from_rows(&[[30.0, 0.0], [-30.0, 0.0], [30.0, 0.0]]).unwrap();
    let tups = densemetric::TupletSet {
        tuplets: vec![densemetric::losses::Tuplet {
            anchor: 0,
            positive: 1,
            negatives: vec![2],
        }],
    };
    let out = npair_loss(&f, &tups).unwrap();
    // log(1 + e^1800) is 1800 to double precision
    assert!((out.value - 1800.0).abs() < 1e-9);
    assert!(out.d_embeddings.is_finite());
}

#[test]
fn empty_sets_are_rejected() {
    let f = unit_rows(4, 3, 0);
    assert!(matches!(contrastive_loss(&f, &Default::default(), 1.0), Err(Error::EmptyPairSet)));
    assert!(matches!(triplet_loss(&f, &Default::default(), 1.0), Err(Error::EmptyTripletSet)));
    assert!(matches!(npair_loss(&f, &Default::default()), Err(Error::EmptyTupletSet)));
}

#[test]
fn all_singleton_batch_is_rejected() {
    let f = unit_rows(3, 3, 0);
    let state = DensityState::new(vec![1.0; 3], 0.5, 0.5, 1.0).unwrap();
    assert!(matches!(
        density_regularizer(&f, &[0, 1, 2], &state),
        Err(Error::AllSingletonClasses)
    ));
}
