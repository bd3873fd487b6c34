//! Classification and distillation objectives.
//!
//! The distillation term is the KL form
//! `τ² · mean_b Σ_j p_T·(log p_T − log p_S)` with `p = softmax(logits/τ)`.
//! It differs from the plain soft cross-entropy `−τ² Σ p_T log p_S` only by the
//! teacher entropy, a constant for the student, so both give the same student
//! gradients; the KL form is exactly zero when the two distributions agree.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, contract_err, dim_err, Result};
use crate::tensor::{log_softmax_rows, Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KdConfig {
    pub tau: f64,
    pub alpha: f64,
}

impl KdConfig {
    pub fn new(tau: f64, alpha: f64) -> Result<Self> {
        let cfg = KdConfig { tau, alpha };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(config_err!("temperature must be positive, got {}", self.tau));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(config_err!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        Ok(())
    }
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn cross_entropy(graph: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let log_probs = graph.log_softmax(logits)?;
    graph.nll_mean(log_probs, labels)
}

/// Temperature-scaled KL from a fixed teacher to the recorded student logits.
/// Only `student_logits` receives gradient.
pub fn kd_kl(graph: &mut Graph, teacher_logits: &Tensor, student_logits: Var, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let student_shape = graph.value(student_logits)?.shape().to_vec();
    if teacher_logits.shape() != student_shape.as_slice() || student_shape.len() != 2 {
        return Err(dim_err!(
            "teacher logits {:?} vs student logits {student_shape:?}",
            teacher_logits.shape()
        ));
    }
    let teacher_log_probs = tempered_log_probs(teacher_logits, tau)?;
    let scaled = graph.scale(student_logits, 1.0 / tau)?;
    let student_log_probs = graph.log_softmax(scaled)?;
    let kl = graph.soft_target_kl(student_log_probs, &teacher_log_probs)?;
    graph.scale(kl, tau * tau)
}

/// `alpha·ce + (1 − alpha)·kl`.
pub fn combined_loss(graph: &mut Graph, ce: Var, kl: Var, alpha: f64) -> Result<Var> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(config_err!("alpha must lie in (0, 1], got {alpha}"));
    }
    let a = graph.scale(ce, alpha)?;
    let b = graph.scale(kl, 1.0 - alpha)?;
    graph.add(a, b)
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(config_err!("temperature must be positive, got {tau}"));
    }
    Ok(())
}

fn tempered_log_probs(logits: &Tensor, tau: f64) -> Result<Tensor> {
    let inv = 1.0 / tau;
    let scaled: Vec<f64> = logits.data().iter().map(|v| v * inv).collect();
    let classes = logits.shape()[1];
    Tensor::new(logits.shape().to_vec(), log_softmax_rows(&scaled, classes))
}

/// Per-row cross-entropy without recording anything.
pub fn cross_entropy_per_row(logits: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    let &[batch, classes] = logits.shape() else {
        return Err(dim_err!("expected [batch, classes], got {:?}", logits.shape()));
    };
    if labels.len() != batch {
        return Err(dim_err!("{} labels for {batch} rows", labels.len()));
    }
    let log_probs = log_softmax_rows(logits.data(), classes);
    labels
        .iter()
        .enumerate()
        .map(|(b, &y)| {
            if y >= classes {
                Err(contract_err!("label {y} outside [0, {classes})"))
            } else {
                Ok(-log_probs[b * classes + y])
            }
        })
        .collect()
}

/// Per-row `τ²·KL(softmax(t/τ) ‖ softmax(s/τ))` without recording anything.
pub fn kd_kl_per_row(teacher_logits: &Tensor, student_logits: &Tensor, tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    if teacher_logits.shape() != student_logits.shape() || teacher_logits.rank() != 2 {
        return Err(dim_err!(
            "teacher logits {:?} vs student logits {:?}",
            teacher_logits.shape(),
            student_logits.shape()
        ));
    }
    let classes = teacher_logits.shape()[1];
    let t = tempered_log_probs(teacher_logits, tau)?;
    let s = tempered_log_probs(student_logits, tau)?;
    Ok(t.data()
        .chunks(classes)
        .zip(s.data().chunks(classes))
        .map(|(tr, sr)| {
            let kl: f64 = tr.iter().zip(sr).map(|(&t, &q)| t.exp() * (t - q)).sum();
            kl * (tau * tau)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[&[f64]]) -> Tensor {
        Tensor::new(vec![rows.len(), rows[0].len()], rows.concat()).unwrap()
    }

    fn kl_value(teacher: &Tensor, student: &Tensor, tau: f64) -> f64 {
        let mut g = Graph::new();
        let s = g.constant(student.clone());
        let v = kd_kl(&mut g, teacher, s, tau).unwrap();
        g.value(v).unwrap().item().unwrap()
    }

    /// Direct two-class evaluation of τ²·Σ p_T (ln p_T − ln p_S).
    fn two_class_oracle(t: [f64; 2], s: [f64; 2], tau: f64) -> f64 {
        let soft = |z: [f64; 2]| {
            let e0 = (z[0] / tau).exp();
            let e1 = (z[1] / tau).exp();
            [e0 / (e0 + e1), e1 / (e0 + e1)]
        };
        let (pt, ps) = (soft(t), soft(s));
        tau * tau * (pt[0] * (pt[0] / ps[0]).ln() + pt[1] * (pt[1] / ps[1]).ln())
    }

    #[test]
    fn cross_entropy_examples() {
        let mut g = Graph::new();
        let z = g.constant(t2(&[&[0.0, 0.0]]));
        let l = cross_entropy(&mut g, z, &[0]).unwrap();
        assert!((g.value(l).unwrap().item().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);

        let z = g.constant(t2(&[&[20.0, -20.0]]));
        let l = cross_entropy(&mut g, z, &[0]).unwrap();
        assert!(g.value(l).unwrap().item().unwrap() < 1e-8);

        let z = g.constant(t2(&[&[0.0, 0.0]]));
        assert!(matches!(cross_entropy(&mut g, z, &[2]), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn kl_zero_on_identical_inputs() {
        let t = t2(&[&[0.3, -1.2, 2.0], &[5.0, 5.0, -3.0]]);
        assert!(kl_value(&t, &t, 4.0).abs() <= 1e-12);
    }

    #[test]
    fn kl_matches_two_class_oracle() {
        let (t, s) = ([1.0, 0.0], [0.0, 1.0]);
        let tt = t2(&[&t]);
        let ss = t2(&[&s]);
        for tau in [1.0, 2.0, 4.0] {
            let want = two_class_oracle(t, s, tau);
            assert!((kl_value(&tt, &ss, tau) - want).abs() < 1e-14, "tau={tau}");
            let rows = kd_kl_per_row(&tt, &ss, tau).unwrap();
            assert!((rows[0] - want).abs() < 1e-14);
        }
        assert!(kl_value(&tt, &ss, 1.0) > 0.0);
    }

    #[test]
    fn kl_shape_mismatch() {
        let mut g = Graph::new();
        let s = g.constant(t2(&[&[0.0, 1.0]]));
        let t = t2(&[&[0.0, 1.0, 2.0]]);
        assert!(matches!(kd_kl(&mut g, &t, s, 1.0), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn combined_examples() {
        let mut g = Graph::new();
        let ce = g.constant(Tensor::scalar(2.0));
        let kl = g.constant(Tensor::scalar(4.0));
        let c = combined_loss(&mut g, ce, kl, 0.5).unwrap();
        assert_eq!(g.value(c).unwrap().item().unwrap(), 3.0);
        let c = combined_loss(&mut g, ce, kl, 1.0).unwrap();
        assert_eq!(g.value(c).unwrap().item().unwrap(), 2.0);
        assert!(combined_loss(&mut g, ce, kl, 0.0).is_err());
        assert!(KdConfig::new(0.0, 0.5).is_err());
        assert!(KdConfig::new(4.0, 1.5).is_err());
        assert!(KdConfig::new(4.0, 1.0).is_ok());
    }
}
