//! Feed-forward classification head over ensemble feature vectors.

mod network;

use ndarray::{Array2, ArrayView2};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use network::{Gradients, MlpModel, Mode, Reduction};
use network::Adam;

/// Finite-difference step used by [`gradient_check`].
pub const GRADCHECK_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden_dims: Vec<usize>,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![512, 256, 128],
            dropout: 0.25,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 16,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::param("hidden_dims must be non-empty with positive widths"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::param(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::param("epochs must be at least 1"));
        }
        Ok(())
    }
}

/// Packs rows into a matrix, checking they share one width.
pub fn to_matrix<F: AsRef<[f64]>>(rows: &[F]) -> Result<Array2<f64>> {
    let width = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
    let mut flat = Vec::with_capacity(rows.len() * width);
    for (i, r) in rows.iter().enumerate() {
        let r = r.as_ref();
        if r.len() != width {
            return Err(Error::param(format!("row {i} has width {} but row 0 has {width}", r.len())));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::param(format!("row {i} contains a non-finite value")));
        }
        flat.extend_from_slice(r);
    }
    Array2::from_shape_vec((rows.len(), width), flat).map_err(|e| Error::param(e.to_string()))
}

/// Per-example sampling weights inversely proportional to class frequency.
pub fn class_weights(labels: &[bool]) -> Result<Vec<f64>> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::param("training labels must contain both classes"));
    }
    Ok(labels
        .iter()
        .map(|&l| if l { 1.0 / pos as f64 } else { 1.0 / neg as f64 })
        .collect())
}

/// Draws example indices with replacement according to `weights`.
#[derive(Debug, Clone)]
pub struct WeightedSampler {
    dist: WeightedIndex<f64>,
}

impl WeightedSampler {
    pub fn new(weights: &[f64]) -> Result<Self> {
        let dist = WeightedIndex::new(weights).map_err(|e| Error::param(format!("bad sampling weights: {e}")))?;
        Ok(Self { dist })
    }

    pub fn draw<R: rand::Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| self.dist.sample(rng)).collect()
    }
}

/// A network together with its optimizer state.
pub struct MlpTrainer {
    model: MlpModel,
    adam: Adam,
    rng: ChaCha8Rng,
}

impl MlpTrainer {
    pub fn new(mut model: MlpModel, learning_rate: f64, seed: u64) -> Self {
        let adam = Adam::new(&mut model, learning_rate);
        Self {
            model,
            adam,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// One optimizer step on a batch; returns the mean loss before the update.
    pub fn step(&mut self, x: ArrayView2<f64>, y: &[f64]) -> Result<f64> {
        self.model.check_input(x)?;
        if x.nrows() != y.len() || y.is_empty() {
            return Err(Error::param("batch features and targets differ in length"));
        }
        let cache = self.model.forward(x, Mode::Train, &mut self.rng);
        let loss = MlpModel::loss(&cache.logits, y, Reduction::Mean);
        let grads = self.model.backward(&cache, y, Reduction::Mean);
        self.adam.update(&mut self.model, &grads);
        Ok(loss)
    }

    pub fn model(&self) -> &MlpModel {
        &self.model
    }

    pub fn into_model(self) -> MlpModel {
        self.model
    }
}

/// Trains the head with class-balanced minibatches and returns the final-epoch model.
pub fn mlp_train<F: AsRef<[f64]>>(features: &[F], labels: &[bool], config: &MlpConfig) -> Result<MlpModel> {
    config.validate()?;
    if features.len() != labels.len() {
        return Err(Error::param("features and labels differ in length"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos < 2 || neg < 2 {
        return Err(Error::param(format!(
            "need at least 2 examples per class, got {pos} positive and {neg} negative"
        )));
    }
    let x = to_matrix(features)?;
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let sampler = WeightedSampler::new(&class_weights(labels)?)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = MlpModel::new(x.ncols(), &config.hidden_dims, config.dropout, &mut rng)?;
    let mut trainer = MlpTrainer::new(model, config.learning_rate, rand::Rng::random(&mut rng));
    let batches = labels.len().div_ceil(config.batch_size);
    for _ in 0..config.epochs {
        for _ in 0..batches {
            let idx = sampler.draw(config.batch_size, &mut rng);
            let bx = x.select(ndarray::Axis(0), &idx);
            let by: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            let loss = trainer.step(bx.view(), &by)?;
            if !loss.is_finite() {
                return Err(Error::Numeric("training loss became non-finite".into()));
            }
        }
    }
    Ok(trainer.into_model())
}

/// Probabilities of the positive class, computed row by row with running statistics.
pub fn mlp_predict<F: AsRef<[f64]>>(model: &MlpModel, features: &[F]) -> Result<Vec<f64>> {
    let x = to_matrix(features)?;
    if features.is_empty() {
        return Ok(Vec::new());
    }
    predict_matrix(model, x.view())
}

pub fn predict_matrix(model: &MlpModel, x: ArrayView2<f64>) -> Result<Vec<f64>> {
    model.check_input(x)?;
    // Inference never mutates or consumes randomness; the clone keeps the API immutable.
    let mut m = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cache = m.forward(x, Mode::Inference, &mut rng);
    Ok(cache.logits.iter().map(|&z| logistic(z)).collect())
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Loss and analytic gradients with per-batch normalization and no dropout.
pub fn loss_and_gradients(model: &MlpModel, x: ArrayView2<f64>, y: &[f64], reduction: Reduction) -> Result<(f64, Gradients)> {
    model.check_input(x)?;
    if x.nrows() != y.len() || y.is_empty() {
        return Err(Error::param("batch features and targets differ in length"));
    }
    let mut m = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cache = m.forward(x, Mode::BatchStats, &mut rng);
    let loss = MlpModel::loss(&cache.logits, y, reduction);
    Ok((loss, m.backward(&cache, y, reduction)))
}

fn batch_loss(model: &mut MlpModel, x: ArrayView2<f64>, y: &[f64]) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cache = model.forward(x, Mode::BatchStats, &mut rng);
    MlpModel::loss(&cache.logits, y, Reduction::Mean)
}

/// Largest relative disagreement between analytic and central-difference gradients.
///
/// Relative error is `|a - n| / max(|a| + |n|, 1e-6)` so parameters whose true
/// gradient vanishes are compared absolutely.
pub fn gradient_check(model: &MlpModel, x: ArrayView2<f64>, y: &[f64]) -> Result<f64> {
    let (_, grads) = loss_and_gradients(model, x, y, Reduction::Mean)?;
    let mut probe = model.clone();
    probe.dropout = 0.0;
    let counts: Vec<usize> = probe.params_mut().iter().map(|p| p.len()).collect();
    let mut worst: f64 = 0.0;
    for (t, &len) in counts.iter().enumerate() {
        for i in 0..len {
            let original = probe.params_mut()[t][i];
            probe.params_mut()[t][i] = original + GRADCHECK_STEP;
            let up = batch_loss(&mut probe, x, y);
            probe.params_mut()[t][i] = original - GRADCHECK_STEP;
            let down = batch_loss(&mut probe, x, y);
            probe.params_mut()[t][i] = original;
            let numeric = (up - down) / (2.0 * GRADCHECK_STEP);
            let analytic = grads.0[t][i];
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn toy() -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..200 {
            let label = i % 2 == 0;
            let cx = if label { 1.0 } else { -1.0 };
            let a: f64 = rand::Rng::random_range(&mut rng, -0.6..0.6);
            let b: f64 = rand::Rng::random_range(&mut rng, -1.0..1.0);
            xs.push(vec![cx + a, b]);
            ys.push(label);
        }
        (xs, ys)
    }

    fn small_config() -> MlpConfig {
        MlpConfig {
            hidden_dims: vec![16, 8],
            batch_size: 32,
            ..MlpConfig::default()
        }
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let (x, y) = toy();
        let model = mlp_train(&x, &y, &MlpConfig::default()).unwrap();
        let p = mlp_predict(&model, &x).unwrap();
        let correct = p.iter().zip(&y).filter(|(&s, &l)| (s >= 0.5) == l).count();
        assert_eq!(correct, y.len());
        assert!(p.iter().all(|&s| s > 0.0 && s < 1.0));
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = toy();
        let a = mlp_train(&x, &y, &small_config()).unwrap();
        let b = mlp_train(&x, &y, &small_config()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        let (x, y) = toy();
        for bad in [
            MlpConfig { epochs: 0, ..small_config() },
            MlpConfig { batch_size: 0, ..small_config() },
            MlpConfig { dropout: 1.0, ..small_config() },
            MlpConfig { hidden_dims: vec![], ..small_config() },
        ] {
            assert!(matches!(mlp_train(&x, &y, &bad), Err(Error::Parameter(_))));
        }
    }

    #[test]
    fn single_class_or_tiny_class_rejected() {
        let x = vec![vec![0.0, 1.0]; 6];
        assert!(matches!(mlp_train(&x, &[true; 6], &small_config()), Err(Error::Parameter(_))));
        let y = [true, false, false, false, false, false];
        assert!(matches!(mlp_train(&x, &y, &small_config()), Err(Error::Parameter(_))));
    }

    #[test]
    fn balanced_weights_are_equal() {
        let w = class_weights(&[true, false, true, false]).unwrap();
        assert!(w.iter().all(|&v| v == w[0]));
    }

    #[test]
    fn weighted_sampling_balances_classes() {
        let mut labels = vec![false; 5000];
        labels.extend(vec![true; 100]);
        let sampler = WeightedSampler::new(&class_weights(&labels).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let idx = sampler.draw(100_000, &mut rng);
        let minority = idx.iter().filter(|&&i| labels[i]).count() as f64 / 1e5;
        assert!((minority - 0.5).abs() <= 0.01, "{minority}");
    }

    #[test]
    fn zero_network_predicts_half() {
        let model = MlpModel::zeros(3, &[4, 2]);
        let p = mlp_predict(&model, &[vec![1.0, -2.0, 3.0], vec![0.0; 3]]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let model = MlpModel::zeros(3, &[4]);
        assert!(matches!(mlp_predict(&model, &[vec![1.0, 2.0]]), Err(Error::Parameter(_))));
    }

    #[test]
    fn batch_and_single_predictions_agree() {
        let (x, y) = toy();
        let model = mlp_train(&x, &y, &small_config()).unwrap();
        let batch = mlp_predict(&model, &x).unwrap();
        for (row, &b) in x.iter().zip(&batch) {
            let single = mlp_predict(&model, std::slice::from_ref(row)).unwrap()[0];
            assert!((single - b).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_decreases_on_fixed_batch() {
        let (x, y) = toy();
        let xm = to_matrix(&x[..64]).unwrap();
        let ym: Vec<f64> = y[..64].iter().map(|&l| l as u8 as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = MlpModel::new(2, &[16, 8], 0.0, &mut rng).unwrap();
        let mut trainer = MlpTrainer::new(model, 1e-3, 0);
        let mut prev = f64::INFINITY;
        for _ in 0..10 {
            let loss = trainer.step(xm.view(), &ym).unwrap();
            assert!(loss < prev, "{loss} !< {prev}");
            prev = loss;
        }
    }

    #[test]
    fn linear_model_matches_logistic_regression() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = MlpModel::new(3, &[], 0.0, &mut rng).unwrap();
        let x = array![[0.5, -1.0, 2.0], [1.5, 0.2, -0.3], [-0.7, 0.9, 0.1], [0.0, 0.4, -1.2]];
        let y = [1.0, 0.0, 1.0, 0.0];
        let (_, g) = loss_and_gradients(&model, x.view(), &y, Reduction::Mean).unwrap();
        let w = &model.output.weights;
        let b = model.output.bias[0];
        let mut gw = [0.0; 3];
        let mut gb = 0.0;
        for (r, &t) in x.rows().into_iter().zip(&y) {
            let z: f64 = (0..3).map(|k| r[k] * w[[k, 0]]).sum::<f64>() + b;
            let e = logistic(z) - t;
            for (g, x) in gw.iter_mut().zip(r) {
                *g += e * x / 4.0;
            }
            gb += e / 4.0;
        }
        for (got, want) in g.0[0].iter().zip(gw) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((g.0[1][0] - gb).abs() < 1e-12);
    }

    #[test]
    fn duplicated_rows_double_sum_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = MlpModel::new(2, &[], 0.0, &mut rng).unwrap();
        let one = array![[0.3, -0.8]];
        let two = array![[0.3, -0.8], [0.3, -0.8]];
        let (_, g1) = loss_and_gradients(&model, one.view(), &[1.0], Reduction::Sum).unwrap();
        let (_, g2) = loss_and_gradients(&model, two.view(), &[1.0, 1.0], Reduction::Sum).unwrap();
        for (a, b) in g1.flat().iter().zip(g2.flat()) {
            assert_eq!(2.0 * a, b);
        }
    }

    #[test]
    fn gradient_check_on_twenty_seeds() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = MlpModel::new(4, &[6, 5], 0.0, &mut rng).unwrap();
            let x = Array2::from_shape_simple_fn((6, 4), || rand::Rng::random_range(&mut rng, -2.0..2.0));
            let y: Vec<f64> = (0..6).map(|i| (i % 2) as f64).collect();
            let err = gradient_check(&model, x.view(), &y).unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn json_round_trip() {
        let (x, y) = toy();
        let model = mlp_train(&x, &y, &MlpConfig { epochs: 1, ..small_config() }).unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back: MlpModel = serde_json::from_str(&json).unwrap();
        assert_eq!(model, back);
        assert_eq!(mlp_predict(&back, &x).unwrap(), mlp_predict(&model, &x).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn predictions_lie_in_unit_interval(seed in 0u64..1000, v in prop::collection::vec(-50.0f64..50.0, 3)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = MlpModel::new(3, &[5, 4], 0.25, &mut rng).unwrap();
            let p = mlp_predict(&model, std::slice::from_ref(&v)).unwrap()[0];
            prop_assert!(p > 0.0 && p < 1.0);
            prop_assert_eq!(p, mlp_predict(&model, &[v]).unwrap()[0]);
        }
    }
}
