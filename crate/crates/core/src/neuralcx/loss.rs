//! Softmax-over-candidates cross-entropy.

use crate::real::Real;

/// `−ln softmax(scores)[truth]`, computed with a shifted log-sum-exp.
pub fn candidate_loss<T: Real>(scores: &[T], truth: usize) -> T {
    T::of(loss_and_probs(scores, truth).0)
}

/// Loss and `∂loss/∂scores = softmax(scores) − onehot(truth)`.
pub fn candidate_loss_grad<T: Real>(scores: &[T], truth: usize) -> (T, Vec<T>) {
    let (loss, mut g) = loss_and_probs(scores, truth);
    g[truth] -= 1.0;
    (T::of(loss), g.into_iter().map(T::of).collect())
}

fn loss_and_probs<T: Real>(scores: &[T], truth: usize) -> (f64, Vec<f64>) {
    assert!(
        truth < scores.len(),
        "truth {truth} out of range for {} scores",
        scores.len()
    );
    let s: Vec<f64> = scores.iter().map(|x| x.as_f64()).collect();
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = s.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = (sum.ln() - (s[truth] - max)).max(0.0);
    (loss, exps.into_iter().map(|e| e / sum).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_scores_give_ln_k() {
        assert!((candidate_loss(&[0.0f64; 24], 7) - 24f64.ln()).abs() < 1e-12);
        assert!((candidate_loss(&[0.0f64; 24], 7) - 3.17805).abs() < 1e-5);
    }

    #[test]
    fn hand_computed_softmax() {
        let l: f64 = candidate_loss(&[1.0, 2.0, 3.0], 2);
        assert!((l - 0.40761).abs() < 1e-5);
        let want = -(3f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp())).ln();
        assert!((l - want).abs() < 1e-12);
    }

    #[test]
    fn dominant_truth_drives_loss_to_zero() {
        let l: f64 = candidate_loss(&[0.0, 1e4, 0.0], 1);
        assert!(l < 1e-12);
        let l32: f32 = candidate_loss(&[0.0, 1e4, 0.0], 1);
        assert!((0.0..1e-6).contains(&l32));
    }

    #[test]
    fn gradient_sums_to_zero() {
        let (_, g) = candidate_loss_grad(&[0.3f64, -1.0, 2.0, 0.5], 1);
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
        assert!(g[1] < 0.0);
    }

    proptest! {
        #[test]
        fn shift_invariant(s in proptest::collection::vec(-20.0f64..20.0, 2..30), c in -50.0f64..50.0, t in 0usize..30) {
            let t = t % s.len();
            let shifted: Vec<f64> = s.iter().map(|x| x + c).collect();
            prop_assert!((candidate_loss(&s, t) - candidate_loss(&shifted, t)).abs() < 1e-9);
            prop_assert!(candidate_loss(&s, t) >= 0.0);
        }
    }
}
