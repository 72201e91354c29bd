use ppi_affinity::losses::{
    composite_loss, huber_loss, rank_loss_surrogate, rank_loss_verbatim, LossConfig, RankVariant,
};
use proptest::prelude::*;

fn paired(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(-5.0f64..5.0, n),
        )
    })
}

fn permuted(v: &[f64], perm: &[usize]) -> Vec<f64> {
    perm.iter().map(|&k| v[k]).collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #[test]
    fn permutation_invariance(
        (y, yhat) in paired(16),
        delta in 0.1f64..3.0,
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut perm: Vec<usize> = (0..y.len()).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let (py, pyhat) = (permuted(&y, &perm), permuted(&yhat, &perm));
        prop_assert!(close(huber_loss(&y, &yhat, delta).unwrap().0, huber_loss(&py, &pyhat, delta).unwrap().0));
        prop_assert!(close(rank_loss_surrogate(&y, &yhat).unwrap().0, rank_loss_surrogate(&py, &pyhat).unwrap().0));
        prop_assert!(close(rank_loss_verbatim(&y, &yhat).unwrap(), rank_loss_verbatim(&py, &pyhat).unwrap()));
    }

    #[test]
    fn surrogate_ignores_prediction_shift((y, yhat) in paired(16), c in -50.0f64..50.0) {
        let shifted: Vec<f64> = yhat.iter().map(|v| v + c).collect();
        let a = rank_loss_surrogate(&y, &yhat).unwrap().0;
        let b = rank_loss_surrogate(&y, &shifted).unwrap().0;
        prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
    }

    #[test]
    fn losses_are_non_negative((y, yhat) in paired(16), delta in 0.1f64..3.0) {
        prop_assert!(huber_loss(&y, &yhat, delta).unwrap().0 >= 0.0);
        prop_assert!(rank_loss_verbatim(&y, &yhat).unwrap() >= 0.0);
        prop_assert!(rank_loss_surrogate(&y, &yhat).unwrap().0 >= 0.0);
    }

    #[test]
    fn total_decomposes(
        (y, yhat) in paired(16),
        lambda in 0.0f64..=1.0,
        delta in 0.1f64..3.0,
        verbatim in any::<bool>(),
    ) {
        let cfg = LossConfig {
            lambda,
            delta,
            rank_variant: if verbatim { RankVariant::Verbatim } else { RankVariant::Surrogate },
        };
        let out = composite_loss(&y, &yhat, &cfg).unwrap();
        prop_assert!((out.total - (lambda * out.huber + (1.0 - lambda) * out.rank)).abs() <= 1e-12);
    }
}

#[test]
fn verbatim_gradient_is_huber_only() {
    let y = [3.0, 1.0, 2.0, 0.5];
    let yhat = [0.0, 2.5, 1.0, 4.0];
    let cfg = LossConfig { lambda: 0.3, delta: 1.0, rank_variant: RankVariant::Verbatim };
    let out = composite_loss(&y, &yhat, &cfg).unwrap();
    let (_, g) = huber_loss(&y, &yhat, 1.0).unwrap();
    for (a, b) in out.grad.iter().zip(&g) {
        assert!((a - 0.3 * b).abs() < 1e-15);
    }
    let flat = LossConfig { lambda: 0.0, ..cfg };
    assert!(composite_loss(&y, &yhat, &flat).unwrap().grad.iter().all(|v| *v == 0.0));
}
