//! Composite word + image classification loss and the annealed image-loss
//! weight schedule.

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::fusion::{AnswerDistribution, ImageDistribution};

/// Probabilities are clamped to this before taking logs.
pub const PROB_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Constant image-loss weight `lambda0`.
    Combined,
    /// Image loss disabled.
    WordOnly,
    /// `max(lambda_min, lambda0 * gamma^epoch)`.
    Annealed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda0: f64,
    pub gamma: f64,
    pub lambda_min: f64,
    pub mode: LossMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda0: 10.0,
            gamma: 0.7,
            lambda_min: 0.0,
            mode: LossMode::Annealed,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda0 >= 0.0) || !(self.lambda_min >= 0.0) {
            return Err(Error::InvalidConfig("lambda0 and lambda_min must be >= 0".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidConfig(format!("gamma {} not in (0, 1]", self.gamma)));
        }
        if self.lambda_min > self.lambda0 {
            return Err(Error::InvalidConfig(format!(
                "lambda_min {} exceeds lambda0 {}",
                self.lambda_min, self.lambda0
            )));
        }
        Ok(())
    }
}

/// Image-loss weight for `epoch` (0-based).
pub fn anneal_lambda(epoch: usize, cfg: &LossConfig) -> f64 {
    match cfg.mode {
        LossMode::WordOnly => 0.0,
        LossMode::Combined => cfg.lambda0,
        LossMode::Annealed => {
            let exp = i32::try_from(epoch).unwrap_or(i32::MAX);
            cfg.lambda_min.max(cfg.lambda0 * cfg.gamma.powi(exp))
        }
    }
}

/// `-ln(max(p[target], eps))`
pub fn cross_entropy(probs: &[f64], target: usize) -> Result<f64> {
    let p = probs.get(target).ok_or(Error::TargetOutOfRange {
        target,
        classes: probs.len(),
    })?;
    Ok(-p.max(PROB_EPS).ln())
}

/// Parts of one sample's loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub word: f64,
    pub image: f64,
    pub total: f64,
}

/// `CE(q, answer_target) + lambda * CE(p, image_target)`.
pub fn combined_loss(
    q: &AnswerDistribution,
    p: &ImageDistribution,
    answer_target: usize,
    image_target: usize,
    lambda: f64,
) -> Result<LossBreakdown> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!("lambda {lambda} must be >= 0")));
    }
    let word = cross_entropy(q.probs(), answer_target)?;
    let image = cross_entropy(p.probs(), image_target)?;
    Ok(LossBreakdown {
        word,
        image,
        total: word + lambda * image,
    })
}

/// Differentiable version of [`combined_loss`] over `[1, V]` / `[1, N]`
/// probability rows. With `lambda == 0` the image term is left out of the
/// graph entirely.
pub fn combined_loss_graph<'t>(
    answer_probs: Var<'t>,
    image_probs: Var<'t>,
    answer_target: usize,
    image_target: usize,
    lambda: f64,
) -> Result<Var<'t>> {
    let v = answer_probs.value().len();
    let n = image_probs.value().len();
    if answer_target >= v {
        return Err(Error::TargetOutOfRange {
            target: answer_target,
            classes: v,
        });
    }
    if image_target >= n {
        return Err(Error::TargetOutOfRange {
            target: image_target,
            classes: n,
        });
    }
    let word = answer_probs.neg_log_prob(answer_target, PROB_EPS);
    if lambda == 0.0 {
        return Ok(word);
    }
    Ok(word.add(image_probs.neg_log_prob(image_target, PROB_EPS).scale(lambda)))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn annealed(lambda0: f64, gamma: f64, lambda_min: f64) -> LossConfig {
        LossConfig {
            lambda0,
            gamma,
            lambda_min,
            mode: LossMode::Annealed,
        }
    }

    #[test]
    fn geometric_decay() {
        let cfg = annealed(10.0, 0.5, 0.0);
        assert_eq!(anneal_lambda(0, &cfg), 10.0);
        assert_eq!(anneal_lambda(1, &cfg), 5.0);
        assert_eq!(anneal_lambda(3, &cfg), 1.25);
    }

    #[test]
    fn floor_applies() {
        let cfg = annealed(10.0, 0.1, 0.1);
        assert_eq!(anneal_lambda(5, &cfg), 0.1);
    }

    #[test]
    fn unit_gamma_is_constant() {
        let cfg = annealed(3.0, 1.0, 0.0);
        assert!((0..20).all(|e| anneal_lambda(e, &cfg) == 3.0));
    }

    #[test]
    fn modes() {
        let mut cfg = annealed(4.0, 0.5, 0.0);
        cfg.mode = LossMode::Combined;
        assert_eq!(anneal_lambda(7, &cfg), 4.0);
        cfg.mode = LossMode::WordOnly;
        assert_eq!(anneal_lambda(0, &cfg), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(annealed(1.0, 0.0, 0.0).validate().is_err());
        assert!(annealed(1.0, 1.5, 0.0).validate().is_err());
        assert!(annealed(1.0, 0.5, 2.0).validate().is_err());
        assert!(LossConfig::default().validate().is_ok());
    }

    #[test]
    fn loss_arithmetic() {
        // CE_word = 0.5, CE_image = 0.3
        let q = AnswerDistribution::new(vec![(-0.5f64).exp(), 1.0 - (-0.5f64).exp()]).unwrap();
        let p = ImageDistribution::new(vec![1.0 - (-0.3f64).exp(), (-0.3f64).exp()]).unwrap();
        let l = combined_loss(&q, &p, 0, 1, 2.0).unwrap();
        assert!((l.total - 1.1).abs() < 1e-12);
        let l0 = combined_loss(&q, &p, 0, 1, 0.0).unwrap();
        assert_eq!(l0.total, l0.word);
    }

    #[test]
    fn uniform_answer_cross_entropy() {
        let q = AnswerDistribution::new(vec![0.25; 4]).unwrap();
        let p = ImageDistribution::new(vec![0.5; 2]).unwrap();
        for t in 0..4 {
            let l = combined_loss(&q, &p, t, 0, 0.0).unwrap();
            assert!((l.word - 4f64.ln()).abs() < 1e-12);
        }
        assert!((4f64.ln() - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn target_out_of_range() {
        let q = AnswerDistribution::new(vec![0.5; 2]).unwrap();
        let p = ImageDistribution::new(vec![0.5; 2]).unwrap();
        assert!(matches!(
            combined_loss(&q, &p, 2, 0, 1.0),
            Err(Error::TargetOutOfRange { target: 2, classes: 2 })
        ));
        assert!(combined_loss(&q, &p, 0, 5, 1.0).is_err());
    }

    #[test]
    fn certain_target_has_zero_loss() {
        assert_eq!(cross_entropy(&[0.0, 1.0], 1).unwrap(), 0.0);
        assert!((cross_entropy(&[0.0, 1.0], 0).unwrap() - 1e9f64.ln()).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn schedule_is_non_increasing(
            lambda0 in 0.0f64..100.0,
            gamma in 0.01f64..=1.0,
            floor_frac in 0.0f64..1.0,
        ) {
            let cfg = annealed(lambda0, gamma, lambda0 * floor_frac);
            let mut prev = f64::INFINITY;
            for epoch in 0..60 {
                let l = anneal_lambda(epoch, &cfg);
                prop_assert!(l <= prev);
                prop_assert!(l >= cfg.lambda_min);
                prop_assert_eq!(l, cfg.lambda_min.max(lambda0 * gamma.powi(epoch as i32)));
                prev = l;
            }
        }

        #[test]
        fn loss_is_affine_in_lambda(
            a in 0.01f64..1.0, b in 0.01f64..1.0, lambda in 0.0f64..20.0,
        ) {
            let q = AnswerDistribution::new(vec![a / (a + b), b / (a + b)]).unwrap();
            let p = ImageDistribution::new(vec![b / (a + b), a / (a + b)]).unwrap();
            let l = combined_loss(&q, &p, 0, 1, lambda).unwrap();
            prop_assert!(l.word >= 0.0 && l.image >= 0.0);
            prop_assert!((l.total - (l.word + lambda * l.image)).abs() < 1e-12);
            let l0 = combined_loss(&q, &p, 0, 1, 0.0).unwrap();
            prop_assert_eq!(l0.total, l.word);
        }
    }
}
