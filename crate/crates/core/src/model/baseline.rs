//! Multinomial logistic regression over per-pixel features, trained by
//! mini-batch gradient descent on the weighted cross-entropy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{extract_features, weighted_ce_loss, ClassWeights, FeatureConfig, Features};
use crate::error::{Error, Result};
use crate::raster::{GeoTransform, LabelRaster, RasterTile, IGNORE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 20,
            batch_size: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineParams {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub feature_config: FeatureConfig,
    /// Row-major `num_classes x feature_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub seed: u64,
    pub hyperparams: Hyperparams,
    /// Mean mini-batch loss of every epoch.
    pub loss_trace: Vec<f64>,
}

impl BaselineParams {
    /// All-zero parameters.
    pub fn zeros(num_classes: usize, feature_dim: usize, feature_config: FeatureConfig) -> Self {
        Self {
            num_classes,
            feature_dim,
            feature_config,
            weights: vec![0.0; num_classes * feature_dim],
            bias: vec![0.0; num_classes],
            seed: 0,
            hyperparams: Hyperparams::default(),
            loss_trace: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.num_classes * self.feature_dim
            || self.bias.len() != self.num_classes
        {
            return Err(Error::Shape(format!(
                "parameters do not match {} classes x {} features",
                self.num_classes, self.feature_dim
            )));
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::Data("parameters contain non-finite values".into()));
        }
        self.feature_config.validate()
    }

    fn logits_into(&self, x: &[f32], out: &mut [f64]) {
        let d = self.feature_dim;
        for (c, o) in out.iter_mut().enumerate() {
            let row = &self.weights[c * d..(c + 1) * d];
            let mut s = self.bias[c];
            for (w, &v) in row.iter().zip(x) {
                s += w * f64::from(v);
            }
            *o = s;
        }
    }
}

/// Fit softmax regression. Parameters start at zero; batches are drawn from
/// a seeded shuffle of the labelled pixels each epoch, so results depend
/// only on the inputs and `seed`.
pub fn train_baseline(
    features: &Features,
    labels: &[i16],
    weights: &ClassWeights,
    hp: &Hyperparams,
    seed: u64,
) -> Result<BaselineParams> {
    if labels.len() != features.n {
        return Err(Error::Shape(format!(
            "{} labels for {} feature rows",
            labels.len(),
            features.n
        )));
    }
    if hp.batch_size == 0 || !(hp.learning_rate > 0.0) {
        return Err(Error::Config("batch size and learning rate must be positive".into()));
    }
    let k = weights.len();
    if let Some(&t) = labels.iter().find(|&&t| t < IGNORE || t as i64 >= k as i64) {
        return Err(Error::Data(format!("label {t} outside {{-1, 0..{k}}}")));
    }
    let mut order: Vec<usize> = (0..features.n).filter(|&i| labels[i] != IGNORE).collect();
    if order.is_empty() {
        return Err(Error::Empty("no labelled pixels to train on".into()));
    }
    let d = features.dim;
    let mut params = BaselineParams::zeros(k, d, features.config);
    params.seed = seed;
    params.hyperparams = *hp;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut logits = Vec::with_capacity(hp.batch_size * k);
    let mut targets = Vec::with_capacity(hp.batch_size);
    let mut grad_w = vec![0.0; k * d];
    let mut grad_b = vec![0.0; k];
    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(hp.batch_size) {
            logits.clear();
            logits.resize(batch.len() * k, 0.0);
            targets.clear();
            for (j, &i) in batch.iter().enumerate() {
                params.logits_into(features.row(i), &mut logits[j * k..(j + 1) * k]);
                targets.push(labels[i]);
            }
            let out = weighted_ce_loss(&logits, &targets, weights)?;
            if !out.loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: out.loss,
                });
            }
            grad_w.iter_mut().for_each(|g| *g = 0.0);
            grad_b.iter_mut().for_each(|g| *g = 0.0);
            for (j, &i) in batch.iter().enumerate() {
                let x = features.row(i);
                let g = &out.grad[j * k..(j + 1) * k];
                for c in 0..k {
                    let gc = g[c];
                    if gc == 0.0 {
                        continue;
                    }
                    grad_b[c] += gc;
                    for (gw, &v) in grad_w[c * d..(c + 1) * d].iter_mut().zip(x) {
                        *gw += gc * f64::from(v);
                    }
                }
            }
            for (w, g) in params.weights.iter_mut().zip(&grad_w) {
                *w -= hp.learning_rate * g;
            }
            for (b, g) in params.bias.iter_mut().zip(&grad_b) {
                *b -= hp.learning_rate * g;
            }
            epoch_loss += out.loss;
            batches += 1;
        }
        let mean = epoch_loss / batches as f64;
        if !mean.is_finite() || params.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        log::debug!("epoch {epoch}: loss {mean:.6}");
        params.loss_trace.push(mean);
    }
    Ok(params)
}

/// Pixel-major logits, `num_classes` per row.
pub fn predict(params: &BaselineParams, features: &Features) -> Result<Vec<f64>> {
    if features.dim != params.feature_dim {
        return Err(Error::Shape(format!(
            "features have {} columns, model expects {}",
            features.dim, params.feature_dim
        )));
    }
    let k = params.num_classes;
    let mut out = vec![0.0; features.n * k];
    out.par_chunks_mut(k)
        .enumerate()
        .for_each(|(i, o)| params.logits_into(features.row(i), o));
    Ok(out)
}

/// Per-pixel class scores for a whole raster.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitRaster {
    pub width: u32,
    pub height: u32,
    pub num_classes: usize,
    pub data: Vec<f64>,
    pub transform: GeoTransform,
}

impl LogitRaster {
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.num_classes..(i + 1) * self.num_classes]
    }

    /// Highest-scoring class per pixel; ties go to the lowest class id.
    pub fn argmax_values(&self) -> Vec<i16> {
        self.data
            .chunks(self.num_classes)
            .map(|z| {
                let mut best = 0;
                for c in 1..z.len() {
                    if z[c] > z[best] {
                        best = c;
                    }
                }
                best as i16
            })
            .collect()
    }

    pub fn argmax(&self) -> Result<LabelRaster> {
        let k = u8::try_from(self.num_classes)
            .map_err(|_| Error::Shape(format!("{} classes exceed 255", self.num_classes)))?;
        LabelRaster::new(self.width, self.height, self.argmax_values(), self.transform, k)
    }
}

/// Extract the model's features from `tile` and score every pixel.
pub fn predict_tile(params: &BaselineParams, tile: &RasterTile) -> Result<LogitRaster> {
    let features = extract_features(tile, &params.feature_config)?;
    Ok(LogitRaster {
        width: tile.width(),
        height: tile.height(),
        num_classes: params.num_classes,
        data: predict(params, &features)?,
        transform: *tile.transform(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::WeightingStrategy;
    use rand::Rng;

    fn feats(rows: &[[f32; 2]]) -> Features {
        Features {
            n: rows.len(),
            dim: 2,
            config: FeatureConfig::pixel_local(),
            data: rows.iter().flatten().copied().collect(),
        }
    }

    fn separable(n: usize, seed: u64) -> (Features, Vec<i16>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        while rows.len() < n {
            let x: f32 = rng.random_range(0.0..1.0);
            let y: f32 = rng.random_range(0.0..1.0);
            let margin = x + y - 1.0;
            if margin.abs() < 0.1 {
                continue;
            }
            rows.push([x, y]);
            labels.push(i16::from(margin > 0.0));
        }
        (feats(&rows), labels)
    }

    /// Brute force: is there a direction (sampled every degree) and a
    /// threshold along it that splits the two classes?
    fn linearly_separable(f: &Features, labels: &[i16]) -> bool {
        (0..360).any(|deg| {
            let a = (deg as f64).to_radians();
            let proj = |i: usize| a.cos() * f64::from(f.row(i)[0]) + a.sin() * f64::from(f.row(i)[1]);
            let max0 = (0..f.n).filter(|&i| labels[i] == 0).map(proj).fold(f64::MIN, f64::max);
            let min1 = (0..f.n).filter(|&i| labels[i] == 1).map(proj).fold(f64::MAX, f64::min);
            max0 < min1
        })
    }

    #[test]
    fn fits_separable_data() {
        let (f, labels) = separable(400, 11);
        assert!(linearly_separable(&f, &labels));
        let hp = Hyperparams {
            learning_rate: 2.0,
            epochs: 200,
            batch_size: 32,
        };
        let params = train_baseline(&f, &labels, &ClassWeights::uniform(2), &hp, 5).unwrap();
        let pred = predict(&params, &f).unwrap();
        let correct = pred
            .chunks(2)
            .zip(&labels)
            .filter(|(z, &t)| i16::from(z[1] > z[0]) == t)
            .count();
        assert!(correct as f64 / 400.0 >= 0.99, "accuracy {}", correct as f64 / 400.0);
        assert!(params.loss_trace.last().unwrap() < &params.loss_trace[0]);
    }

    #[test]
    fn zero_epochs_returns_zero_init() {
        let (f, labels) = separable(20, 1);
        let hp = Hyperparams {
            epochs: 0,
            ..Hyperparams::default()
        };
        let params = train_baseline(&f, &labels, &ClassWeights::uniform(2), &hp, 0).unwrap();
        assert!(params.weights.iter().chain(&params.bias).all(|&v| v == 0.0));
        assert!(params.loss_trace.is_empty());
    }

    #[test]
    fn deterministic_given_seed() {
        let (f, labels) = separable(100, 2);
        let w = ClassWeights {
            w: vec![1.0, 3.0],
            strategy: WeightingStrategy::Inverse,
        };
        let a = train_baseline(&f, &labels, &w, &Hyperparams::default(), 9).unwrap();
        let b = train_baseline(&f, &labels, &w, &Hyperparams::default(), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_ignored_is_error() {
        let f = feats(&[[0.0, 0.0]]);
        assert!(matches!(
            train_baseline(&f, &[-1], &ClassWeights::uniform(2), &Hyperparams::default(), 0),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let f = feats(&[[1e30, -1e30], [-1e30, 1e30]]);
        let hp = Hyperparams {
            learning_rate: 1e300,
            epochs: 5,
            batch_size: 2,
        };
        let err = train_baseline(&f, &[0, 1], &ClassWeights::uniform(2), &hp, 0).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }

    #[test]
    fn zero_params_tie_to_class_zero() {
        let p = BaselineParams::zeros(4, 2, FeatureConfig::pixel_local());
        let tile = RasterTile::filled(3, 2, 2, 0.7).unwrap();
        let logits = predict_tile(&p, &tile).unwrap();
        assert!(logits.argmax_values().iter().all(|&c| c == 0));
    }

    #[test]
    fn dominant_row_wins_everywhere() {
        let mut p = BaselineParams::zeros(4, 2, FeatureConfig::pixel_local());
        p.bias[3] = 1e6;
        let tile = RasterTile::filled(3, 2, 2, 0.1).unwrap();
        assert!(predict_tile(&p, &tile).unwrap().argmax_values().iter().all(|&c| c == 3));
    }

    #[test]
    fn hand_computed_logits() {
        let mut p = BaselineParams::zeros(2, 2, FeatureConfig::pixel_local());
        p.weights = vec![1.0, 2.0, -1.0, 0.5];
        p.bias = vec![0.5, -0.25];
        let f = feats(&[[1.0, 0.0], [0.0, 1.0], [2.0, -1.0]]);
        let z = predict(&p, &f).unwrap();
        // class 0: 0.5 + x + 2y; class 1: -0.25 - x + 0.5y
        assert_eq!(z, vec![1.5, -1.25, 2.5, 0.25, 0.5, -2.75]);
        let wrong = Features {
            n: 1,
            dim: 3,
            config: FeatureConfig::pixel_local(),
            data: vec![0.0; 3],
        };
        assert!(matches!(predict(&p, &wrong), Err(Error::Shape(_))));
    }
}
