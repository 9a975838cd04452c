//! Discrete hidden Markov models.
//!
//! A model is `(M_I, M_T, M_E)`: an initial distribution over `N` hidden
//! states, a row-stochastic `N x N` state transition matrix, and a
//! row-stochastic `N x M` emission matrix over observation symbols.
//! Provides the marginal probability of an observation sequence (forward
//! recursion) and a maximum-probability state decoding (max-product dynamic
//! program).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row sums may deviate from 1 by at most this much.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Sequences longer than this are evaluated in log space.
const LOG_SPACE_THRESHOLD: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum HmmError {
    #[error("matrix dimensions are inconsistent: {0}")]
    BadDimensions(String),
    #[error("row {row} does not form a distribution (sum {sum})")]
    NotADistribution { row: usize, sum: f64 },
    #[error("observation index {index} out of range (n_obs {n_obs})")]
    BadObservationIndex { index: usize, n_obs: usize },
    #[error("observation sequence is empty")]
    EmptyObservation,
    #[error("no state path has positive probability for this sequence")]
    ZeroProbabilitySequence,
}

/// A discrete HMM with validated row-stochastic matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Hmm {
    initial: Vec<f64>,
    transition: Vec<Vec<f64>>,
    emission: Vec<Vec<f64>>,
}

fn check_distribution(row: &[f64], index: usize) -> Result<(), HmmError> {
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|&p| !(0.0..=1.0 + ROW_SUM_TOL).contains(&p)) {
        return Err(HmmError::NotADistribution { row: index, sum });
    }
    Ok(())
}

impl Hmm {
    /// Builds a model from `M_I`, `M_T`, `M_E`, validating shapes and row sums.
    pub fn new(
        initial: Vec<f64>,
        transition: Vec<Vec<f64>>,
        emission: Vec<Vec<f64>>,
    ) -> Result<Self, HmmError> {
        let n = initial.len();
        if n == 0 {
            return Err(HmmError::BadDimensions("no states".into()));
        }
        if transition.len() != n || transition.iter().any(|r| r.len() != n) {
            return Err(HmmError::BadDimensions(format!(
                "transition matrix must be {n}x{n}"
            )));
        }
        if emission.len() != n {
            return Err(HmmError::BadDimensions(format!(
                "emission matrix must have {n} rows"
            )));
        }
        let m = emission[0].len();
        if m == 0 || emission.iter().any(|r| r.len() != m) {
            return Err(HmmError::BadDimensions(
                "emission rows must share one positive width".into(),
            ));
        }
        check_distribution(&initial, 0)?;
        for (i, row) in transition.iter().enumerate() {
            check_distribution(row, i)?;
        }
        for (i, row) in emission.iter().enumerate() {
            check_distribution(row, i)?;
        }
        Ok(Self {
            initial,
            transition,
            emission,
        })
    }

    pub fn n_states(&self) -> usize {
        self.initial.len()
    }

    pub fn n_obs(&self) -> usize {
        self.emission[0].len()
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn emission(&self) -> &[Vec<f64>] {
        &self.emission
    }

    fn check_obs(&self, obs: &[usize]) -> Result<(), HmmError> {
        if obs.is_empty() {
            return Err(HmmError::EmptyObservation);
        }
        let m = self.n_obs();
        for &o in obs {
            if o >= m {
                return Err(HmmError::BadObservationIndex { index: o, n_obs: m });
            }
        }
        Ok(())
    }

    /// Marginal probability of `obs` under this model.
    ///
    /// Uses the linear-space forward recursion for short sequences and
    /// switches to log space beyond 64 steps to avoid intermediate underflow.
    pub fn sequence_probability(&self, obs: &[usize]) -> Result<f64, HmmError> {
        self.check_obs(obs)?;
        if obs.len() > LOG_SPACE_THRESHOLD {
            Ok(self.log_forward(obs).exp())
        } else {
            Ok(self.linear_forward(obs))
        }
    }

    /// Natural log of the marginal probability of `obs` (`-inf` when zero).
    pub fn log_sequence_probability(&self, obs: &[usize]) -> Result<f64, HmmError> {
        self.check_obs(obs)?;
        Ok(self.log_forward(obs))
    }

    fn linear_forward(&self, obs: &[usize]) -> f64 {
        let n = self.n_states();
        let mut alpha: Vec<f64> = (0..n)
            .map(|i| self.initial[i] * self.emission[i][obs[0]])
            .collect();
        let mut next = vec![0.0; n];
        for &o in &obs[1..] {
            for (j, slot) in next.iter_mut().enumerate() {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += alpha[i] * self.transition[i][j];
                }
                *slot = acc * self.emission[j][o];
            }
            std::mem::swap(&mut alpha, &mut next);
        }
        alpha.iter().sum()
    }

    fn log_forward(&self, obs: &[usize]) -> f64 {
        let n = self.n_states();
        let ln = |p: f64| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
        let mut alpha: Vec<f64> = (0..n)
            .map(|i| ln(self.initial[i]) + ln(self.emission[i][obs[0]]))
            .collect();
        let mut next = vec![0.0; n];
        let mut terms = vec![0.0; n];
        for &o in &obs[1..] {
            for (j, slot) in next.iter_mut().enumerate() {
                for i in 0..n {
                    terms[i] = alpha[i] + ln(self.transition[i][j]);
                }
                *slot = log_sum_exp(&terms) + ln(self.emission[j][o]);
            }
            std::mem::swap(&mut alpha, &mut next);
        }
        log_sum_exp(&alpha)
    }

    /// A maximum-probability hidden state path for `obs`.
    ///
    /// Ties are broken toward the lower state index at every backtrack step,
    /// so the decoding is deterministic.
    pub fn most_likely_states(&self, obs: &[usize]) -> Result<Vec<usize>, HmmError> {
        self.check_obs(obs)?;
        let n = self.n_states();
        let t_len = obs.len();
        let ln = |p: f64| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };

        let mut delta: Vec<f64> = (0..n)
            .map(|i| ln(self.initial[i]) + ln(self.emission[i][obs[0]]))
            .collect();
        let mut back: Vec<Vec<usize>> = Vec::with_capacity(t_len.saturating_sub(1));
        let mut next = vec![0.0; n];
        for &o in &obs[1..] {
            let mut argmax = vec![0usize; n];
            for j in 0..n {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0;
                for i in 0..n {
                    let v = delta[i] + ln(self.transition[i][j]);
                    if v > best {
                        best = v;
                        best_i = i;
                    }
                }
                next[j] = best + ln(self.emission[j][o]);
                argmax[j] = best_i;
            }
            std::mem::swap(&mut delta, &mut next);
            back.push(argmax);
        }

        let mut best = f64::NEG_INFINITY;
        let mut last = 0;
        for (i, &v) in delta.iter().enumerate() {
            if v > best {
                best = v;
                last = i;
            }
        }
        if best == f64::NEG_INFINITY {
            return Err(HmmError::ZeroProbabilitySequence);
        }
        let mut path = vec![0usize; t_len];
        path[t_len - 1] = last;
        for t in (0..t_len - 1).rev() {
            path[t] = back[t][path[t + 1]];
        }
        Ok(path)
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + terms.iter().map(|&t| (t - max).exp()).sum::<f64>().ln()
}

/// Samples a matrix whose rows are i.i.d. uniform on the probability simplex
/// (normalized unit exponentials). Deterministic for a given RNG state.
pub fn random_row_stochastic<R: rand::Rng>(rows: usize, cols: usize, rng: &mut R) -> Vec<Vec<f64>> {
    assert!(rows >= 1 && cols >= 1, "matrix must be at least 1x1");
    (0..rows)
        .map(|_| {
            let raw: Vec<f64> = (0..cols)
                .map(|_| {
                    let u: f64 = rng.random();
                    (-(1.0 - u).ln()).max(f64::MIN_POSITIVE)
                })
                .collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / sum).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// The two-state health model used as a running example: states
    /// (healthy, faulty), observations (respects, violates).
    pub(crate) fn health_model() -> Hmm {
        Hmm::new(
            vec![0.6, 0.4],
            vec![vec![0.7, 0.3], vec![0.4, 0.6]],
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
        )
        .unwrap()
    }

    /// Enumerates all state paths and sums their joint probabilities.
    fn brute_force_probability(h: &Hmm, obs: &[usize]) -> f64 {
        let n = h.n_states();
        let mut total = 0.0;
        let mut path = vec![0usize; obs.len()];
        loop {
            let mut p = h.initial()[path[0]] * h.emission()[path[0]][obs[0]];
            for t in 1..obs.len() {
                p *= h.transition()[path[t - 1]][path[t]] * h.emission()[path[t]][obs[t]];
            }
            total += p;
            // odometer increment
            let mut t = 0;
            loop {
                if t == path.len() {
                    return total;
                }
                path[t] += 1;
                if path[t] < n {
                    break;
                }
                path[t] = 0;
                t += 1;
            }
        }
    }

    fn brute_force_best_path(h: &Hmm, obs: &[usize]) -> (Vec<usize>, f64) {
        let n = h.n_states();
        let mut best = (vec![0usize; obs.len()], f64::NEG_INFINITY);
        let mut path = vec![0usize; obs.len()];
        loop {
            let mut p = h.initial()[path[0]] * h.emission()[path[0]][obs[0]];
            for t in 1..obs.len() {
                p *= h.transition()[path[t - 1]][path[t]] * h.emission()[path[t]][obs[t]];
            }
            if p > best.1 {
                best = (path.clone(), p);
            }
            let mut t = 0;
            loop {
                if t == path.len() {
                    return best;
                }
                path[t] += 1;
                if path[t] < n {
                    break;
                }
                path[t] = 0;
                t += 1;
            }
        }
    }

    #[test]
    fn single_observation_marginal() {
        let h = health_model();
        // sum_i M_I(i) * M_E(i, respects)
        let p = h.sequence_probability(&[0]).unwrap();
        assert!((p - 0.62).abs() < 1e-12, "p = {p}");
    }

    #[test]
    fn deterministic_chain_is_forced() {
        // one-hot everything: state 0 -> 1 -> 0 -> ..., emitting its own index
        let h = Hmm::new(
            vec![1.0, 0.0],
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .unwrap();
        assert_eq!(h.sequence_probability(&[0, 1, 0, 1]).unwrap(), 1.0);
        assert_eq!(h.sequence_probability(&[0, 1, 1, 1]).unwrap(), 0.0);
        assert_eq!(h.most_likely_states(&[0, 1, 0]).unwrap(), vec![0, 1, 0]);
    }

    #[test]
    fn forward_matches_brute_force_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.random_range(1..=4);
            let m = rng.random_range(1..=3);
            let h = Hmm::new(
                random_row_stochastic(1, n, &mut rng).remove(0),
                random_row_stochastic(n, n, &mut rng),
                random_row_stochastic(n, m, &mut rng),
            )
            .unwrap();
            let len = rng.random_range(1..=8);
            let obs: Vec<usize> = (0..len).map(|_| rng.random_range(0..m)).collect();
            let expected = brute_force_probability(&h, &obs);
            let got = h.sequence_probability(&obs).unwrap();
            assert!((got - expected).abs() < 1e-12, "got {got}, want {expected}");
        }
    }

    #[test]
    fn viterbi_matches_brute_force_argmax() {
        let h = health_model();
        // violates x4, respects, violates x3
        let obs = [1, 1, 1, 1, 0, 1, 1, 1];
        let decoded = h.most_likely_states(&obs).unwrap();
        let (best_path, best_p) = brute_force_best_path(&h, &obs);
        assert_eq!(decoded, best_path);
        // decoded path probability equals the enumerated maximum
        let mut p = h.initial()[decoded[0]] * h.emission()[decoded[0]][obs[0]];
        for t in 1..obs.len() {
            p *= h.transition()[decoded[t - 1]][decoded[t]] * h.emission()[decoded[t]][obs[t]];
        }
        assert!((p - best_p).abs() < 1e-15);
    }

    #[test]
    fn uniform_model_decodes_to_lowest_index() {
        let h = Hmm::new(
            vec![0.5, 0.5],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        )
        .unwrap();
        assert_eq!(h.most_likely_states(&[0, 1, 0, 1]).unwrap(), vec![0; 4]);
    }

    #[test]
    fn impossible_sequence_is_an_error() {
        let h = Hmm::new(
            vec![1.0, 0.0],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .unwrap();
        assert_eq!(
            h.most_likely_states(&[1]),
            Err(HmmError::ZeroProbabilitySequence)
        );
    }

    #[test]
    fn log_and_linear_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let h = Hmm::new(
                random_row_stochastic(1, 3, &mut rng).remove(0),
                random_row_stochastic(3, 3, &mut rng),
                random_row_stochastic(3, 2, &mut rng),
            )
            .unwrap();
            let len = rng.random_range(1..=64);
            let obs: Vec<usize> = (0..len).map(|_| rng.random_range(0..2)).collect();
            let linear = h.linear_forward(&obs);
            let logp = h.log_forward(&obs).exp();
            assert!(
                (linear - logp).abs() <= 1e-9 * linear.max(1e-300),
                "linear {linear} vs log-space {logp}"
            );
        }
    }

    #[test]
    fn total_probability_over_all_sequences_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = Hmm::new(
            random_row_stochastic(1, 2, &mut rng).remove(0),
            random_row_stochastic(2, 2, &mut rng),
            random_row_stochastic(2, 2, &mut rng),
        )
        .unwrap();
        for t in 1..=6 {
            let mut total = 0.0;
            for code in 0..(1u32 << t) {
                let obs: Vec<usize> = (0..t).map(|b| ((code >> b) & 1) as usize).collect();
                total += h.sequence_probability(&obs).unwrap();
            }
            assert!((total - 1.0).abs() < 1e-10, "T={t}: total={total}");
        }
    }

    #[test]
    fn bad_observation_index_rejected() {
        let h = health_model();
        assert_eq!(
            h.sequence_probability(&[2]),
            Err(HmmError::BadObservationIndex { index: 2, n_obs: 2 })
        );
        assert_eq!(h.sequence_probability(&[]), Err(HmmError::EmptyObservation));
    }

    #[test]
    fn invalid_rows_rejected() {
        let err = Hmm::new(
            vec![0.5, 0.4],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![vec![1.0], vec![1.0]],
        );
        assert!(matches!(err, Err(HmmError::NotADistribution { .. })));
    }

    #[test]
    fn single_column_rows_are_exactly_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for row in random_row_stochastic(8, 1, &mut rng) {
            assert_eq!(row, vec![1.0]);
        }
    }

    #[test]
    fn sampled_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for row in random_row_stochastic(100, 5, &mut rng) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn simplex_sampling_is_uniform_in_the_mean() {
        // mean of each coordinate of a uniform simplex sample is 1/cols
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cols = 4;
        let samples = 100_000;
        let mut sums = vec![0.0; cols];
        for _ in 0..samples {
            let row = &random_row_stochastic(1, cols, &mut rng)[0];
            for (s, x) in sums.iter_mut().zip(row) {
                *s += x;
            }
        }
        for s in sums {
            let mean = s / samples as f64;
            assert!((mean - 0.25).abs() < 0.01, "mean {mean}");
        }
    }

    #[test]
    fn decoded_path_beats_random_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let h = Hmm::new(
            random_row_stochastic(1, 3, &mut rng).remove(0),
            random_row_stochastic(3, 3, &mut rng),
            random_row_stochastic(3, 2, &mut rng),
        )
        .unwrap();
        let obs: Vec<usize> = (0..12).map(|_| rng.random_range(0..2)).collect();
        let decoded = h.most_likely_states(&obs).unwrap();
        let joint = |path: &[usize]| {
            let mut p = h.initial()[path[0]] * h.emission()[path[0]][obs[0]];
            for t in 1..obs.len() {
                p *= h.transition()[path[t - 1]][path[t]] * h.emission()[path[t]][obs[t]];
            }
            p
        };
        let best = joint(&decoded);
        for _ in 0..1000 {
            let path: Vec<usize> = (0..obs.len()).map(|_| rng.random_range(0..3)).collect();
            assert!(joint(&path) <= best * (1.0 + 1e-12));
        }
    }
}
