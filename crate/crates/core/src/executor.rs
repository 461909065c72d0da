//! Turns predicted action sequences into per-step executed actions:
//! temporal ensembling with exponential age weights, a receding-horizon
//! alternative, and exploration noise.

use crate::error::{CoreError, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Overlapping sequence predictions, averaged with weights exp(-m * age)
/// so newer predictions dominate. One buffer per episode, reset at start.
#[derive(Clone, Debug)]
pub struct TemporalEnsemble {
    horizon: usize,
    m: f64,
    entries: Vec<(u64, Vec<Vec<f64>>)>,
}

impl TemporalEnsemble {
    pub fn new(horizon: usize, m: f64) -> Self {
        assert!(horizon >= 1 && m >= 0.0);
        TemporalEnsemble { horizon, m, entries: Vec::new() }
    }

    /// Stores the sequence predicted at step `t0` and drops entries whose
    /// window can no longer cover any step from `t0` on. Recording the same
    /// step twice replaces the earlier prediction.
    pub fn record(&mut self, t0: u64, seq: Vec<Vec<f64>>) {
        assert_eq!(seq.len(), self.horizon, "sequence length != horizon");
        self.entries.retain(|(s, _)| *s != t0 && *s + self.horizon as u64 > t0);
        self.entries.push((t0, seq));
    }

    /// Number of live (unpruned) predictions.
    pub fn entry_count(&self) -> usize {
        self.entries.len()
    }

    /// Weighted average of every stored prediction for step `t`; the
    /// prediction made `age` steps ago contributes with weight exp(-m*age).
    pub fn ensembled_action(&self, t: u64) -> Result<Vec<f64>> {
        let mut sum: Option<Vec<f64>> = None;
        let mut wsum = 0.0;
        for (t0, seq) in &self.entries {
            if *t0 > t || t - *t0 >= self.horizon as u64 {
                continue;
            }
            let age = (t - *t0) as f64;
            let w = (-self.m * age).exp();
            let pred = &seq[(t - *t0) as usize];
            match &mut sum {
                None => sum = Some(pred.iter().map(|v| v * w).collect()),
                Some(acc) => {
                    for (a, v) in acc.iter_mut().zip(pred) {
                        *a += v * w;
                    }
                }
            }
            wsum += w;
        }
        match sum {
            Some(mut acc) => {
                acc.iter_mut().for_each(|v| *v /= wsum);
                Ok(acc)
            }
            None => Err(CoreError::NoCoveringPrediction(t)),
        }
    }
}

/// The every-K-steps alternative: one sequence computed at each
/// multiple-of-K boundary and played back verbatim until the next.
#[derive(Clone, Debug)]
pub struct RecedingHorizon {
    horizon: usize,
    current: Option<(u64, Vec<Vec<f64>>)>,
}

impl RecedingHorizon {
    pub fn new(horizon: usize) -> Self {
        assert!(horizon >= 1);
        RecedingHorizon { horizon, current: None }
    }

    /// True when a fresh sequence is needed before acting at step `t`.
    pub fn needs_prediction(&self, t: u64) -> bool {
        t % self.horizon as u64 == 0 || self.current.is_none()
    }

    pub fn record(&mut self, t0: u64, seq: Vec<Vec<f64>>) {
        assert_eq!(seq.len(), self.horizon, "sequence length != horizon");
        self.current = Some((t0, seq));
    }

    /// Element `t mod K` of the sequence computed at the most recent
    /// boundary; an error if that boundary has no prediction.
    pub fn action(&self, t: u64) -> Result<Vec<f64>> {
        let k = self.horizon as u64;
        let boundary = t - t % k;
        match &self.current {
            Some((t0, seq)) if *t0 == boundary => Ok(seq[(t - boundary) as usize].clone()),
            _ => Err(CoreError::NoCoveringPrediction(t)),
        }
    }
}

/// Adds Gaussian exploration noise per dimension and clips to [-1, 1].
/// sigma = 0 is the identity and draws nothing from the generator.
pub fn explore(action: &[f64], sigma: f64, rng: &mut impl Rng) -> Vec<f64> {
    assert!(sigma >= 0.0);
    if sigma == 0.0 {
        return action.to_vec();
    }
    let noise = Normal::new(0.0, sigma).expect("finite sigma");
    action
        .iter()
        .map(|&a| (a + noise.sample(rng)).clamp(-1.0, 1.0))
        .collect()
}
