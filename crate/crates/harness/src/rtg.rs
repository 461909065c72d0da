//! Return-to-go regression: how much better can RTG be predicted from
//! (observation, upcoming action sequence) than from the observation and a
//! single action? A small MLP is fit per sequence length and scored by
//! held-out L1, with the train/validation split made by episode.

use crate::seeds;
use anyhow::{bail, Result};
use cqn_as::autodiff::{adamw_step, AdamW, ParamTensor, Tape};
use cqn_as::c2f::Semantics;
use cqn_as::envs::EpisodeRecord;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct RtgRow {
    pub k: usize,
    pub val_l1: f64,
}

/// Discounted suffix sums of an episode's rewards.
pub fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (i, &r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[i] = acc;
    }
    out
}

struct Mlp {
    ts: Vec<ParamTensor<f64>>,
}

impl Mlp {
    fn new(input: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ts = vec![
            ParamTensor::scaled_uniform("w1", hidden, input, &mut rng),
            ParamTensor::zeros("b1", 1, hidden),
            ParamTensor::scaled_uniform("w2", hidden, hidden, &mut rng),
            ParamTensor::zeros("b2", 1, hidden),
            ParamTensor::scaled_uniform("w3", 1, hidden, &mut rng),
            ParamTensor::zeros("b3", 1, 1),
        ];
        Mlp { ts }
    }

    fn forward(&self, tape: &mut Tape<f64>, x: usize) -> Result<usize> {
        let ids: Vec<usize> =
            self.ts.iter().enumerate().map(|(k, t)| tape.param(t, k)).collect();
        let h1 = tape.linear(x, ids[0], Some(ids[1]))?;
        let h1 = tape.silu(h1);
        let h2 = tape.linear(h1, ids[2], Some(ids[3]))?;
        let h2 = tape.silu(h2);
        Ok(tape.linear(h2, ids[4], Some(ids[5]))?)
    }

    fn predict(&self, xs: &[f64], rows: usize, cols: usize) -> Result<Vec<f64>> {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant_rows_f64(rows, cols, xs);
        let y = self.forward(&mut tape, x)?;
        Ok(tape.values(y).to_vec())
    }

    fn fit(&mut self, xs: &[f64], ys: &[f64], rows: usize, cols: usize, epochs: usize) -> Result<()> {
        let opt = AdamW::new(3e-3, 0.0);
        let w = vec![1.0 / rows as f64; rows];
        for _ in 0..epochs {
            let mut tape: Tape<f64> = Tape::new();
            let x = tape.constant_rows_f64(rows, cols, xs);
            let pred = self.forward(&mut tape, x)?;
            let target = tape.constant_rows_f64(rows, 1, ys);
            let diff = tape.sub(pred, target);
            let sq = tape.mul(diff, diff);
            let loss = tape.sum_weighted_rows(sq, w.iter().map(|&v| v).collect());
            tape.backward(loss)?;
            for t in &mut self.ts {
                t.zero_grad();
            }
            {
                let ts = &mut self.ts;
                tape.add_param_grads(|k, g| ts[k].accumulate_grad(g));
            }
            let mut refs: Vec<&mut ParamTensor<f64>> = self.ts.iter_mut().collect();
            adamw_step(&mut refs, &opt);
        }
        Ok(())
    }
}

/// The sequence features: observation followed by K actions starting at t,
/// padded past the episode end by the control-semantics null action.
fn features(rec: &EpisodeRecord, t: usize, k: usize, semantics: Semantics) -> Vec<f64> {
    let tr = &rec.transitions;
    let mut row = tr[t].obs.clone();
    for j in 0..k {
        let idx = t + j;
        if idx < tr.len() {
            row.extend_from_slice(&tr[idx].action);
        } else {
            match semantics {
                Semantics::Position => row.extend_from_slice(&tr[tr.len() - 1].action),
                Semantics::Torque => row.extend(std::iter::repeat(0.0).take(tr[0].action.len())),
            }
        }
    }
    row
}

pub fn rtg_regression(
    records: &[EpisodeRecord],
    ks: &[usize],
    gamma: f64,
    semantics: Semantics,
    seed: u64,
) -> Result<Vec<RtgRow>> {
    if records.len() < 5 {
        bail!("return-to-go regression needs at least 5 episodes, got {}", records.len());
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, seeds::RTG, 0));
    order.shuffle(&mut rng);
    let val_n = (records.len() / 5).max(1);
    let (val_eps, train_eps) = order.split_at(val_n);

    let targets: Vec<Vec<f64>> = records
        .iter()
        .map(|r| {
            let rewards: Vec<f64> = r.transitions.iter().map(|t| t.reward).collect();
            returns_to_go(&rewards, gamma)
        })
        .collect();

    let mut out = Vec::with_capacity(ks.len());
    for (ki, &k) in ks.iter().enumerate() {
        let cols = records[0].transitions[0].obs.len()
            + k * records[0].transitions[0].action.len();
        let build = |eps: &[usize]| {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for &e in eps {
                for t in 0..records[e].transitions.len() {
                    xs.extend(features(&records[e], t, k, semantics));
                    ys.push(targets[e][t]);
                }
            }
            (xs, ys)
        };
        let (tr_x, tr_y) = build(train_eps);
        let (va_x, va_y) = build(val_eps);
        let mut mlp = Mlp::new(cols, 32, seeds::derive(seed, seeds::RTG, 1 + ki as u64));
        mlp.fit(&tr_x, &tr_y, tr_y.len(), cols, 400)?;
        let pred = mlp.predict(&va_x, va_y.len(), cols)?;
        let l1 = pred
            .iter()
            .zip(&va_y)
            .map(|(p, y)| (p - y).abs())
            .sum::<f64>()
            / va_y.len() as f64;
        out.push(RtgRow { k, val_l1: l1 });
    }
    Ok(out)
}
