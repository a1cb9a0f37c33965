use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How per-class loss weights are derived from class proportions `p_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingStrategy {
    /// `w_k = 1 - p_k`
    Complement,
    /// `w_k = -ln p_k`
    Neglog,
    /// `w_k = 1 / p_k`
    Inverse,
    /// `w_k = 1`, the plain cross-entropy.
    Uniform,
}

impl WeightingStrategy {
    fn name(self) -> &'static str {
        match self {
            WeightingStrategy::Complement => "complement",
            WeightingStrategy::Neglog => "neglog",
            WeightingStrategy::Inverse => "inverse",
            WeightingStrategy::Uniform => "uniform",
        }
    }
}

impl fmt::Display for WeightingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complement" => Ok(Self::Complement),
            "neglog" => Ok(Self::Neglog),
            "inverse" => Ok(Self::Inverse),
            "uniform" | "none" => Ok(Self::Uniform),
            other => Err(Error::Config(format!("unknown weighting strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w: Vec<f64>,
    pub strategy: WeightingStrategy,
}

impl ClassWeights {
    pub fn uniform(k: usize) -> Self {
        Self {
            w: vec![1.0; k],
            strategy: WeightingStrategy::Uniform,
        }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Multiply every weight by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            w: self.w.iter().map(|w| w * c).collect(),
            strategy: self.strategy,
        }
    }
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Empty("class distribution has no classes".into()));
    }
    if let Some((k, v)) = p.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::Data(format!("p[{k}] = {v} is not a probability")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Data(format!("class proportions sum to {s}, not 1")));
    }
    Ok(())
}

fn weight(p: f64, strategy: WeightingStrategy) -> f64 {
    match strategy {
        WeightingStrategy::Complement => 1.0 - p,
        WeightingStrategy::Neglog => -p.ln(),
        WeightingStrategy::Inverse => 1.0 / p,
        WeightingStrategy::Uniform => 1.0,
    }
}

/// Weights for every class. `neglog` and `inverse` are undefined for an
/// absent class, which is an error here.
pub fn compute_weights(p: &[f64], strategy: WeightingStrategy) -> Result<ClassWeights> {
    check_distribution(p)?;
    let needs_support = matches!(strategy, WeightingStrategy::Neglog | WeightingStrategy::Inverse);
    if needs_support {
        if let Some(class) = p.iter().position(|&v| v == 0.0) {
            return Err(Error::DegenerateClass {
                class,
                strategy: strategy.name(),
            });
        }
    }
    Ok(ClassWeights {
        w: p.iter().map(|&v| weight(v, strategy)).collect(),
        strategy,
    })
}

/// Like [`compute_weights`], but classes with `p_k = 0` are dropped by giving
/// them weight zero. They never occur as targets, so the loss is unaffected.
pub fn compute_weights_present(p: &[f64], strategy: WeightingStrategy) -> Result<ClassWeights> {
    check_distribution(p)?;
    Ok(ClassWeights {
        w: p.iter()
            .map(|&v| if v == 0.0 { 0.0 } else { weight(v, strategy) })
            .collect(),
        strategy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_probability() {
        let p = [0.5, 0.5];
        assert_eq!(compute_weights(&p, WeightingStrategy::Complement).unwrap().w[0], 0.5);
        let nl = compute_weights(&p, WeightingStrategy::Neglog).unwrap().w[0];
        assert!((nl - 0.693_147_180_559_945_3).abs() < 1e-15);
        assert_eq!(compute_weights(&p, WeightingStrategy::Inverse).unwrap().w[0], 2.0);
    }

    #[test]
    fn zero_class_is_degenerate() {
        let p = [1.0, 0.0];
        for s in [WeightingStrategy::Inverse, WeightingStrategy::Neglog] {
            assert!(matches!(
                compute_weights(&p, s),
                Err(Error::DegenerateClass { class: 1, .. })
            ));
        }
        assert_eq!(compute_weights(&p, WeightingStrategy::Complement).unwrap().w, vec![0.0, 1.0]);
        assert_eq!(
            compute_weights_present(&p, WeightingStrategy::Inverse).unwrap().w,
            vec![1.0, 0.0]
        );
    }

    #[test]
    fn inverse_equalizes_expected_contribution() {
        let p = [0.6, 0.25, 0.1, 0.04, 0.01];
        let w = compute_weights(&p, WeightingStrategy::Inverse).unwrap();
        for (pk, wk) in p.iter().zip(&w.w) {
            assert!((pk * wk - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_distribution() {
        assert!(compute_weights(&[0.5, 0.6], WeightingStrategy::Complement).is_err());
        assert!(compute_weights(&[-0.1, 1.1], WeightingStrategy::Complement).is_err());
        assert!(compute_weights(&[], WeightingStrategy::Complement).is_err());
    }

    #[test]
    fn parses_names() {
        assert_eq!("inverse".parse::<WeightingStrategy>().unwrap(), WeightingStrategy::Inverse);
        assert!("bogus".parse::<WeightingStrategy>().is_err());
    }
}
