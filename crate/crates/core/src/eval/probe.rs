//! Linear probe (multinomial logistic regression) and cosine k-NN.

use serde::{Deserialize, Serialize};

use super::embed::LabeledVectors;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub iterations: usize,
    /// Initial step size; decays along a half cosine to 0.
    pub step: f64,
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            step: 0.1,
            l2: 1e-4,
        }
    }
}

/// Per-feature mean and standard deviation of the training set.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let n = x.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for v in x {
            for (m, a) in mean.iter_mut().zip(v) {
                *m += a;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for v in x {
            for ((s, a), m) in var.iter_mut().zip(v).zip(&mean) {
                *s += (a - m) * (a - m);
            }
        }
        // constant features are centred but not scaled
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((a, m), s)| (a - m) / s)
            .collect()
    }
}

/// A trained softmax classifier over standardized inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    pub scaler: Standardizer,
    /// `classes × dim`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub classes: usize,
}

fn logits(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for (c, o) in out.iter_mut().enumerate() {
        *o = b[c] + w[c * d..(c + 1) * d].iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}

impl LinearProbe {
    /// Full-batch gradient descent on mean cross-entropy + `l2/2 · ‖W‖²`,
    /// starting from zero weights.
    pub fn fit(train: &LabeledVectors, cfg: &ProbeConfig) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InsufficientData("probe training set is empty".into()));
        }
        let present = train.by_class().iter().filter(|v| !v.is_empty()).count();
        if present < 2 {
            return Err(Error::InsufficientData("probe needs at least two classes in the training set".into()));
        }
        let scaler = Standardizer::fit(&train.x);
        let x: Vec<Vec<f64>> = train.x.iter().map(|v| scaler.apply(v)).collect();
        let (k, d, n) = (train.classes, train.dim(), x.len() as f64);
        let mut w = vec![0.0; k * d];
        let mut b = vec![0.0; k];
        let mut gw = vec![0.0; k * d];
        let mut gb = vec![0.0; k];
        let mut p = vec![0.0; k];
        for it in 0..cfg.iterations {
            gw.iter_mut().for_each(|g| *g = 0.0);
            gb.iter_mut().for_each(|g| *g = 0.0);
            for (xi, &yi) in x.iter().zip(&train.y) {
                logits(&w, &b, xi, &mut p);
                softmax_in_place(&mut p);
                p[yi] -= 1.0;
                for c in 0..k {
                    let r = p[c] / n;
                    gb[c] += r;
                    for (g, v) in gw[c * d..(c + 1) * d].iter_mut().zip(xi) {
                        *g += r * v;
                    }
                }
            }
            let lr = cfg.step * 0.5 * (1.0 + (std::f64::consts::PI * it as f64 / cfg.iterations as f64).cos());
            for (wi, g) in w.iter_mut().zip(&gw) {
                *wi -= lr * (g + cfg.l2 * *wi);
            }
            for (bi, g) in b.iter_mut().zip(&gb) {
                *bi -= lr * g;
            }
        }
        Ok(Self {
            scaler,
            weights: w,
            bias: b,
            classes: k,
        })
    }

    pub fn predict(&self, v: &[f64]) -> usize {
        let x = self.scaler.apply(v);
        let mut z = vec![0.0; self.classes];
        logits(&self.weights, &self.bias, &x, &mut z);
        argmax(&z)
    }

    pub fn accuracy(&self, test: &LabeledVectors) -> Result<f64> {
        if test.is_empty() {
            return Err(Error::InsufficientData("test set is empty".into()));
        }
        let hits = test.x.iter().zip(&test.y).filter(|(v, &y)| self.predict(v) == y).count();
        Ok(hits as f64 / test.len() as f64)
    }
}

/// Top-1 test accuracy of a linear probe trained on `train`.
pub fn linear_probe(train: &LabeledVectors, test: &LabeledVectors, cfg: &ProbeConfig) -> Result<f64> {
    if train.dim() != test.dim() && !test.is_empty() {
        return Err(Error::Shape(format!("train dim {} vs test dim {}", train.dim(), test.dim())));
    }
    LinearProbe::fit(train, cfg)?.accuracy(test)
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter().map(|a| a / n).collect()
    } else {
        v.to_vec()
    }
}

/// Cosine k-NN prediction for every test vector.
///
/// Votes are counted among the `k` most similar training vectors (ties in
/// similarity resolved by lower training index); a tied vote goes to the
/// class with the larger summed similarity, then the lower class id.
pub fn knn_predict(train: &LabeledVectors, test: &LabeledVectors, k: usize) -> Result<Vec<usize>> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::InsufficientData("k-NN needs non-empty train and test sets".into()));
    }
    if k == 0 || k > train.len() {
        return Err(Error::InvalidArgument(format!("k = {k} must lie in 1..={}", train.len())));
    }
    if train.dim() != test.dim() {
        return Err(Error::Shape(format!("train dim {} vs test dim {}", train.dim(), test.dim())));
    }
    let tr: Vec<Vec<f64>> = train.x.iter().map(|v| unit(v)).collect();
    let classes = train.classes.max(test.classes);
    Ok(test
        .x
        .iter()
        .map(|q| {
            let q = unit(q);
            let mut sims: Vec<(f64, usize)> = tr
                .iter()
                .enumerate()
                .map(|(i, t)| (t.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>(), i))
                .collect();
            sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut votes = vec![0usize; classes];
            let mut mass = vec![0.0f64; classes];
            for &(s, i) in &sims[..k] {
                votes[train.y[i]] += 1;
                mass[train.y[i]] += s;
            }
            let mut best = 0;
            for c in 1..classes {
                if votes[c] > votes[best] || (votes[c] == votes[best] && mass[c] > mass[best]) {
                    best = c;
                }
            }
            best
        })
        .collect())
}

pub fn knn_classify(train: &LabeledVectors, test: &LabeledVectors, k: usize) -> Result<f64> {
    let pred = knn_predict(train, test, k)?;
    let hits = pred.iter().zip(&test.y).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lv(x: Vec<Vec<f64>>, y: Vec<usize>, k: usize) -> LabeledVectors {
        LabeledVectors::new(x, y, k).unwrap()
    }

    fn blobs(n: usize, seed: u64) -> LabeledVectors {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let cx = if c == 0 { -2.0 } else { 2.0 };
            x.push(vec![cx + rng.random_range(-1.0..1.0), rng.random_range(-3.0..3.0)]);
            y.push(c);
        }
        lv(x, y, 2)
    }

    #[test]
    fn separable_toy_is_perfect() {
        let acc = linear_probe(&blobs(40, 1), &blobs(200, 2), &ProbeConfig::default()).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn duplicated_training_set_gives_same_probe() {
        let t = blobs(30, 3);
        let mut x = t.x.clone();
        x.extend(t.x.clone());
        let mut y = t.y.clone();
        y.extend(t.y.clone());
        let a = LinearProbe::fit(&t, &ProbeConfig::default()).unwrap();
        let b = LinearProbe::fit(&lv(x, y, 2), &ProbeConfig::default()).unwrap();
        for (u, v) in a.weights.iter().zip(&b.weights) {
            assert!((u - v).abs() < 1e-9);
        }
        let test = blobs(100, 4);
        assert_eq!(a.accuracy(&test).unwrap(), b.accuracy(&test).unwrap());
    }

    #[test]
    fn shuffled_labels_give_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = 5;
        let gen = |n: usize, rng: &mut ChaCha8Rng| {
            let x: Vec<Vec<f64>> = (0..n).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let mut y: Vec<usize> = (0..n).map(|i| i % k).collect();
            y.shuffle(rng);
            lv(x, y, k)
        };
        let train = gen(200, &mut rng);
        let test = gen(1000, &mut rng);
        let acc = linear_probe(&train, &test, &ProbeConfig::default()).unwrap();
        let p = 1.0 / k as f64;
        let sigma = (p * (1.0 - p) / test.len() as f64).sqrt();
        assert!((acc - p).abs() <= 3.0 * sigma, "accuracy {acc}");
    }

    #[test]
    fn single_class_train_is_an_error() {
        let t = lv(vec![vec![1.0], vec![2.0]], vec![0, 0], 2);
        assert!(linear_probe(&t, &t, &ProbeConfig::default()).is_err());
    }

    #[test]
    fn knn_exact_match_wins_with_k1() {
        let train = blobs(20, 6);
        let test = train.subset(&[3, 8, 11]);
        assert_eq!(knn_predict(&train, &test, 1).unwrap(), test.y);
    }

    #[test]
    fn knn_hand_built_vote() {
        // query (1, 0): sims 0.6 (class 0), 0.8 (class 1), 0.0 (class 0)
        let train = lv(
            vec![vec![0.6, 0.8], vec![0.8, 0.6], vec![0.0, 1.0]],
            vec![0, 1, 0],
            2,
        );
        let q = lv(vec![vec![1.0, 0.0]], vec![0], 2);
        assert_eq!(knn_predict(&train, &q, 1).unwrap(), vec![1]);
        // k=2: one vote each, class 1 has the larger summed similarity
        assert_eq!(knn_predict(&train, &q, 2).unwrap(), vec![1]);
        // k=3: class 0 has two votes
        assert_eq!(knn_predict(&train, &q, 3).unwrap(), vec![0]);
        // exact tie in votes and similarity -> lowest class id
        let sym = lv(vec![vec![1.0, 1.0], vec![1.0, -1.0]], vec![1, 0], 2);
        assert_eq!(knn_predict(&sym, &q, 2).unwrap(), vec![0]);
    }

    #[test]
    fn knn_scale_and_normalization_invariant() {
        let train = blobs(50, 7);
        let test = blobs(50, 8);
        let base = knn_predict(&train, &test, 5).unwrap();
        let scale = |s: &LabeledVectors, f: f64| lv(s.x.iter().map(|v| v.iter().map(|a| a * f).collect()).collect(), s.y.clone(), 2);
        assert_eq!(knn_predict(&scale(&train, 3.7), &scale(&test, 0.01), 5).unwrap(), base);
        let normed = |s: &LabeledVectors| lv(s.x.iter().map(|v| unit(v)).collect(), s.y.clone(), 2);
        assert_eq!(knn_predict(&normed(&train), &normed(&test), 5).unwrap(), base);
    }

    #[test]
    fn knn_argument_checks() {
        let t = blobs(4, 9);
        assert!(knn_predict(&t, &t, 5).is_err());
        assert!(knn_predict(&t, &t, 0).is_err());
        let empty = lv(vec![], vec![], 2);
        assert!(knn_classify(&empty, &t, 1).is_err());
    }
}
