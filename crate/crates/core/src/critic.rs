//! The sequence critic: an observation encoder feeding, per coarseness level,
//! a shared step MLP, a unidirectional GRU over the K sequence steps, and
//! dueling distributional heads that score B bins per action dimension.
//! Supports greedy coarse-to-fine inference of a whole K-step action sequence
//! and Q-evaluation of stored sequences along their own zoom paths.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{
    kernels, CheckpointTensor, GruWeights, NodeId, ParamTensor, Scalar, Tape,
};
use crate::c2f::{self, Interval};
use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug)]
pub struct CriticConfig {
    pub obs_dim: usize,
    /// Action dimensions N.
    pub action_dims: usize,
    /// Sequence length K.
    pub horizon: usize,
    /// Zoom levels L.
    pub levels: usize,
    /// Bins per level B.
    pub bins: usize,
    /// Atoms per value distribution A.
    pub atoms: usize,
    pub v_min: f64,
    pub v_max: f64,
    /// Width of the encoder, step MLP and GRU.
    pub hidden: usize,
}

impl CriticConfig {
    pub fn new(obs_dim: usize, action_dims: usize, horizon: usize) -> Self {
        CriticConfig {
            obs_dim,
            action_dims,
            horizon,
            levels: 3,
            bins: 5,
            atoms: 51,
            v_min: -2.0,
            v_max: 2.0,
            hidden: 512,
        }
    }

    /// The uniform atom grid z_1..z_A on [v_min, v_max].
    pub fn support(&self) -> Vec<f64> {
        let a1 = (self.atoms - 1) as f64;
        (0..self.atoms)
            .map(|a| (self.v_min * (a1 - a as f64) + self.v_max * a as f64) / a1)
            .collect()
    }

    /// Step-feature width: h ++ previous-level action ++ one-hot step index.
    fn step_input(&self) -> usize {
        self.hidden + self.action_dims + self.horizon
    }

    fn root(&self) -> Interval {
        Interval { lo: -1.0, hi: 1.0 }
    }
}

#[derive(Clone, Debug)]
struct LevelParams<F: Scalar> {
    mlp0: ParamTensor<F>,
    mlp1: ParamTensor<F>,
    w_ih: ParamTensor<F>,
    w_hh: ParamTensor<F>,
    b_ih: ParamTensor<F>,
    b_hh: ParamTensor<F>,
    val_w: ParamTensor<F>,
    val_b: ParamTensor<F>,
    adv_w: ParamTensor<F>,
    adv_b: ParamTensor<F>,
}

impl<F: Scalar> LevelParams<F> {
    fn init(cfg: &CriticConfig, level: usize, rng: &mut ChaCha8Rng) -> Self {
        let h = cfg.hidden;
        let n = |s: &str| format!("l{level}.{s}");
        LevelParams {
            mlp0: ParamTensor::scaled_uniform(&n("mlp0.w"), h, cfg.step_input(), rng),
            mlp1: ParamTensor::scaled_uniform(&n("mlp1.w"), h, h, rng),
            w_ih: ParamTensor::scaled_uniform(&n("gru.w_ih"), 3 * h, h, rng),
            w_hh: ParamTensor::orthogonal_blocks(&n("gru.w_hh"), 3 * h, h, rng),
            b_ih: ParamTensor::zeros(&n("gru.b_ih"), 1, 3 * h),
            b_hh: ParamTensor::zeros(&n("gru.b_hh"), 1, 3 * h),
            val_w: ParamTensor::scaled_uniform(&n("val.w"), cfg.action_dims * cfg.atoms, h, rng),
            val_b: ParamTensor::zeros(&n("val.b"), 1, cfg.action_dims * cfg.atoms),
            adv_w: ParamTensor::scaled_uniform(
                &n("adv.w"),
                cfg.action_dims * cfg.bins * cfg.atoms,
                h,
                rng,
            ),
            adv_b: ParamTensor::zeros(&n("adv.b"), 1, cfg.action_dims * cfg.bins * cfg.atoms),
        }
    }
}

/// All trainable tensors of the critic. Cloning yields an independent
/// snapshot, which is how target networks and eval-time copies are made.
#[derive(Clone, Debug)]
pub struct CriticParams<F: Scalar> {
    pub cfg: CriticConfig,
    enc0: ParamTensor<F>,
    enc1: ParamTensor<F>,
    levels: Vec<LevelParams<F>>,
}

impl<F: Scalar> CriticParams<F> {
    pub fn init(cfg: CriticConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc0 = ParamTensor::scaled_uniform("enc0.w", cfg.hidden, cfg.obs_dim, &mut rng);
        let enc1 = ParamTensor::scaled_uniform("enc1.w", cfg.hidden, cfg.hidden, &mut rng);
        let levels = (1..=cfg.levels)
            .map(|l| LevelParams::init(&cfg, l, &mut rng))
            .collect();
        CriticParams { cfg, enc0, enc1, levels }
    }

    /// All tensors zero: useful as a blank slate for hand-crafted weights.
    pub fn zeroed(cfg: CriticConfig) -> Self {
        let mut p = Self::init(cfg, 0);
        for t in p.tensors_mut() {
            t.values.iter_mut().for_each(|v| *v = F::zero());
        }
        p
    }

    /// Stable tensor order; `register` uses positions in this list as
    /// gradient-routing keys and checkpoints use the names.
    pub fn tensors(&self) -> Vec<&ParamTensor<F>> {
        let mut out = vec![&self.enc0, &self.enc1];
        for l in &self.levels {
            out.extend([
                &l.mlp0, &l.mlp1, &l.w_ih, &l.w_hh, &l.b_ih, &l.b_hh, &l.val_w, &l.val_b,
                &l.adv_w, &l.adv_b,
            ]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut ParamTensor<F>> {
        let mut out: Vec<&mut ParamTensor<F>> = vec![&mut self.enc0, &mut self.enc1];
        for l in &mut self.levels {
            out.extend([
                &mut l.mlp0,
                &mut l.mlp1,
                &mut l.w_ih,
                &mut l.w_hh,
                &mut l.b_ih,
                &mut l.b_hh,
                &mut l.val_w,
                &mut l.val_b,
                &mut l.adv_w,
                &mut l.adv_b,
            ]);
        }
        out
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut ParamTensor<F>> {
        self.tensors_mut().into_iter().find(|t| t.name == name)
    }

    pub fn zero_grads(&mut self) {
        for t in self.tensors_mut() {
            t.zero_grad();
        }
    }

    /// Hard copy of another network's values (target initialization and
    /// interval-style target updates). Optimizer state is not touched.
    pub fn copy_values_from(&mut self, other: &Self) {
        let src: Vec<Vec<F>> = other.tensors().iter().map(|t| t.values.clone()).collect();
        for (t, s) in self.tensors_mut().into_iter().zip(src) {
            assert_eq!(t.values.len(), s.len(), "copy_values_from: shape mismatch");
            t.values = s;
        }
    }

    /// Registers every tensor on a tape; key = position in `tensors` order.
    pub fn register(&self, tape: &mut Tape<F>) -> CriticNodes {
        let ts = self.tensors();
        let ids: Vec<NodeId> = ts.iter().enumerate().map(|(k, t)| tape.param(t, k)).collect();
        let mut levels = Vec::with_capacity(self.levels.len());
        for l in 0..self.levels.len() {
            let b = 2 + l * 10;
            levels.push(LevelNodes {
                mlp0: ids[b],
                mlp1: ids[b + 1],
                gru: GruWeights {
                    w_ih: ids[b + 2],
                    w_hh: ids[b + 3],
                    b_ih: ids[b + 4],
                    b_hh: ids[b + 5],
                },
                val_w: ids[b + 6],
                val_b: ids[b + 7],
                adv_w: ids[b + 8],
                adv_b: ids[b + 9],
            });
        }
        CriticNodes { enc0: ids[0], enc1: ids[1], levels }
    }

    /// Routes gradients accumulated on `tape` (after a backward pass) into
    /// this network's tensors.
    pub fn absorb_grads(&mut self, tape: &Tape<F>) {
        let mut ts = self.tensors_mut();
        tape.add_param_grads(|k, g| ts[k].accumulate_grad(g));
    }

    /// Loads checkpoint tensors by name; the sets must match exactly.
    pub fn load_values(&mut self, ckpt: &[CheckpointTensor]) -> Result<()> {
        let mut ts = self.tensors_mut();
        if ckpt.len() != ts.len() {
            return Err(CoreError::BadFormat(format!(
                "checkpoint has {} tensors, network has {}",
                ckpt.len(),
                ts.len()
            )));
        }
        for c in ckpt {
            let t = ts
                .iter_mut()
                .find(|t| t.name == c.name)
                .ok_or_else(|| CoreError::BadFormat(format!("unknown tensor {}", c.name)))?;
            if t.rows != c.rows || t.cols != c.cols {
                return Err(CoreError::BadFormat(format!(
                    "tensor {}: checkpoint {}x{}, network {}x{}",
                    c.name, c.rows, c.cols, t.rows, t.cols
                )));
            }
            for (v, &s) in t.values.iter_mut().zip(&c.values) {
                *v = F::from_f64(s as f64);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
pub struct LevelNodes {
    pub mlp0: NodeId,
    pub mlp1: NodeId,
    pub gru: GruWeights,
    pub val_w: NodeId,
    pub val_b: NodeId,
    pub adv_w: NodeId,
    pub adv_b: NodeId,
}

/// Tape handles for one registration of the critic's tensors.
#[derive(Clone)]
pub struct CriticNodes {
    pub enc0: NodeId,
    pub enc1: NodeId,
    pub levels: Vec<LevelNodes>,
}

/// Encoded observation h_t.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub h: Vec<f64>,
}

/// Chosen bins (1-based) and centroids per level, step and dimension for one
/// K-step sequence. The level-0 conditioning action is the zero vector and is
/// not stored.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqPaths {
    /// [levels][K][N]
    pub bins: Vec<Vec<Vec<usize>>>,
    /// [levels][K][N]
    pub centroids: Vec<Vec<Vec<f64>>>,
}

impl SeqPaths {
    fn empty(cfg: &CriticConfig) -> Self {
        let zs = vec![vec![0.0; cfg.action_dims]; cfg.horizon];
        let zb = vec![vec![0usize; cfg.action_dims]; cfg.horizon];
        SeqPaths {
            bins: vec![zb; cfg.levels],
            centroids: vec![zs; cfg.levels],
        }
    }

    /// The decoded action sequence: finest-level centroids, [K][N].
    pub fn actions(&self) -> Vec<Vec<f64>> {
        self.centroids.last().expect("at least one level").clone()
    }

    /// Builds the zoom paths of an explicit action sequence (scaled space).
    pub fn of_sequence(cfg: &CriticConfig, seq: &[Vec<f64>]) -> Result<Self> {
        if seq.len() != cfg.horizon || seq.iter().any(|a| a.len() != cfg.action_dims) {
            return Err(CoreError::ShapeMismatch(format!(
                "sequence shape {}x{}, want {}x{}",
                seq.len(),
                seq.first().map_or(0, |a| a.len()),
                cfg.horizon,
                cfg.action_dims
            )));
        }
        let space = c2f::ActionSpaceSpec {
            dims: cfg.action_dims,
            levels: cfg.levels,
            bins: cfg.bins,
            low: -1.0,
            high: 1.0,
            semantics: c2f::Semantics::Position,
        };
        let mut out = SeqPaths::empty(cfg);
        for (k, a) in seq.iter().enumerate() {
            let p = c2f::action_to_level_path(&space, a)?;
            for l in 0..cfg.levels {
                for n in 0..cfg.action_dims {
                    out.bins[l][k][n] = p.bins[l][n];
                    out.centroids[l][k][n] = p.centroids[l][n];
                }
            }
        }
        Ok(out)
    }
}

// ---------- graph builders (batched; rows = batch entries) ----------

fn encode_from_node<F: Scalar>(
    tape: &mut Tape<F>,
    nodes: &CriticNodes,
    obs: NodeId,
) -> Result<NodeId> {
    let a = tape.linear(obs, nodes.enc0, None)?;
    let a = tape.silu_layernorm(a);
    let b = tape.linear(a, nodes.enc1, None)?;
    Ok(tape.silu_layernorm(b))
}

/// Encoder forward for a batch of raw observations, flat row-major.
pub fn encode_obs_node<F: Scalar>(
    tape: &mut Tape<F>,
    nodes: &CriticNodes,
    cfg: &CriticConfig,
    obs: &[f64],
    rows: usize,
) -> Result<NodeId> {
    if obs.len() != rows * cfg.obs_dim {
        return Err(CoreError::ShapeMismatch(format!(
            "obs has {} values, want {}x{}",
            obs.len(),
            rows,
            cfg.obs_dim
        )));
    }
    if obs.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::InvalidInput("non-finite observation".into()));
    }
    let x = tape.constant_rows_f64(rows, cfg.obs_dim, obs);
    encode_from_node(tape, nodes, x)
}

/// Dueling atom logits for every step of one level (1-based). `prev` holds
/// the level-(l-1) centroid sequence, flat [rows][K][N] (zeros for level 1).
/// Returns one node per step, each [rows x N*B*A].
pub fn level_forward_nodes<F: Scalar>(
    tape: &mut Tape<F>,
    nodes: &CriticNodes,
    cfg: &CriticConfig,
    level: usize,
    h: NodeId,
    prev: &[f64],
    rows: usize,
) -> Result<Vec<NodeId>> {
    let (k_len, n_dims) = (cfg.horizon, cfg.action_dims);
    if level < 1 || level > cfg.levels {
        return Err(CoreError::OutOfBounds(format!(
            "level {level} outside 1..={}",
            cfg.levels
        )));
    }
    if prev.len() != rows * k_len * n_dims {
        return Err(CoreError::ShapeMismatch(format!(
            "prev sequence has {} values, want {}x{}x{}",
            prev.len(),
            rows,
            k_len,
            n_dims
        )));
    }
    let ln = nodes.levels[level - 1];
    let mut hg = tape.constant(rows, cfg.hidden, vec![F::zero(); rows * cfg.hidden]);
    let mut out = Vec::with_capacity(k_len);
    for k in 0..k_len {
        let mut av = Vec::with_capacity(rows * n_dims);
        for r in 0..rows {
            let base = (r * k_len + k) * n_dims;
            av.extend_from_slice(&prev[base..base + n_dims]);
        }
        let a = tape.constant_rows_f64(rows, n_dims, &av);
        let mut ev = vec![0.0; rows * k_len];
        for r in 0..rows {
            ev[r * k_len + k] = 1.0;
        }
        let e = tape.constant_rows_f64(rows, k_len, &ev);
        let x = tape.concat_cols(&[h, a, e]);
        let m = tape.linear(x, ln.mlp0, None)?;
        let m = tape.silu_layernorm(m);
        let m = tape.linear(m, ln.mlp1, None)?;
        let m = tape.silu_layernorm(m);
        hg = tape.gru_cell(m, hg, ln.gru)?;
        let val = tape.linear(hg, ln.val_w, Some(ln.val_b))?;
        let adv = tape.linear(hg, ln.adv_w, Some(ln.adv_b))?;
        out.push(tape.dueling(val, adv, n_dims, cfg.bins, cfg.atoms));
    }
    Ok(out)
}

fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn greedy_from_h<F: Scalar>(
    p: &CriticParams<F>,
    tape: &mut Tape<F>,
    nodes: &CriticNodes,
    h: NodeId,
    rows: usize,
) -> Result<Vec<SeqPaths>> {
    let cfg = &p.cfg;
    let (k_len, n_dims, bins) = (cfg.horizon, cfg.action_dims, cfg.bins);
    let support = cfg.support();
    let mut ivs = vec![cfg.root(); rows * k_len * n_dims];
    let mut prev = vec![0.0f64; rows * k_len * n_dims];
    let mut paths = vec![SeqPaths::empty(cfg); rows];
    for l in 1..=cfg.levels {
        let qs = level_forward_nodes(tape, nodes, cfg, l, h, &prev, rows)?;
        for (k, &q) in qs.iter().enumerate() {
            let ev_node = tape.expected_value(q, &support);
            let ev: Vec<f64> = tape.values(ev_node).iter().map(|&v| v.to_f64()).collect();
            for r in 0..rows {
                for n in 0..n_dims {
                    let base = r * n_dims * bins + n * bins;
                    let b = argmax_lowest(&ev[base..base + bins]);
                    let idx = (r * k_len + k) * n_dims + n;
                    let sub = c2f::zoom_in(ivs[idx], b + 1, bins)?;
                    ivs[idx] = sub;
                    prev[idx] = sub.midpoint();
                    paths[r].bins[l - 1][k][n] = b + 1;
                    paths[r].centroids[l - 1][k][n] = sub.midpoint();
                }
            }
        }
    }
    Ok(paths)
}

/// Greedy coarse-to-fine inference for a batch of raw observations; the
/// action sequence of row r is `paths[r].actions()`.
pub fn greedy_sequence_batch<F: Scalar>(
    p: &CriticParams<F>,
    obs: &[f64],
    rows: usize,
) -> Result<Vec<SeqPaths>> {
    let mut tape = Tape::new();
    let nodes = p.register(&mut tape);
    let h = encode_obs_node(&mut tape, &nodes, &p.cfg, obs, rows)?;
    greedy_from_h(p, &mut tape, &nodes, h, rows)
}

/// Per-level evaluation nodes for stored sequences: `gathered` holds the
/// chosen-bin atom logits [rows x K*N*A] and `expected` the per-bin expected
/// values [rows x K*N*B], both laid out step-major.
pub struct LevelEvalNodes {
    pub steps: Vec<NodeId>,
    pub gathered: NodeId,
    pub expected: NodeId,
}

/// Builds level-l evaluation nodes for a batch of sequences given by their
/// zoom paths; conditioning comes from each path's own level-(l-1) centroids.
pub fn sequence_level_nodes<F: Scalar>(
    tape: &mut Tape<F>,
    nodes: &CriticNodes,
    cfg: &CriticConfig,
    h: NodeId,
    paths: &[SeqPaths],
    level: usize,
    rows: usize,
) -> Result<LevelEvalNodes> {
    if paths.len() != rows {
        return Err(CoreError::ShapeMismatch(format!(
            "{} paths for {} rows",
            paths.len(),
            rows
        )));
    }
    let (k_len, n_dims) = (cfg.horizon, cfg.action_dims);
    let mut prev = vec![0.0f64; rows * k_len * n_dims];
    if level > 1 {
        for (r, p) in paths.iter().enumerate() {
            for k in 0..k_len {
                for n in 0..n_dims {
                    prev[(r * k_len + k) * n_dims + n] = p.centroids[level - 2][k][n];
                }
            }
        }
    }
    let qs = level_forward_nodes(tape, nodes, cfg, level, h, &prev, rows)?;
    let mut gathered_steps = Vec::with_capacity(k_len);
    for (k, &q) in qs.iter().enumerate() {
        let mut picks = Vec::with_capacity(rows * n_dims);
        for p in paths {
            for n in 0..n_dims {
                picks.push(p.bins[level - 1][k][n] - 1);
            }
        }
        gathered_steps.push(tape.gather_bins(q, picks, n_dims, cfg.bins, cfg.atoms));
    }
    let gathered = tape.concat_cols(&gathered_steps);
    let full = tape.concat_cols(&qs);
    let support = cfg.support();
    let expected = tape.expected_value(full, &support);
    Ok(LevelEvalNodes { steps: qs, gathered, expected })
}

// ---------- single-sample wrappers ----------

pub fn encode_observation<F: Scalar>(p: &CriticParams<F>, obs: &[f64]) -> Result<Features> {
    let mut tape = Tape::new();
    let nodes = p.register(&mut tape);
    let h = encode_obs_node(&mut tape, &nodes, &p.cfg, obs, 1)?;
    Ok(Features { h: tape.values(h).iter().map(|&v| v.to_f64()).collect() })
}

fn feature_node<F: Scalar>(tape: &mut Tape<F>, cfg: &CriticConfig, h: &Features) -> Result<NodeId> {
    if h.h.len() != cfg.hidden {
        return Err(CoreError::ShapeMismatch(format!(
            "features have {} values, hidden is {}",
            h.h.len(),
            cfg.hidden
        )));
    }
    Ok(tape.constant_rows_f64(1, cfg.hidden, &h.h))
}

/// Dueling atom logits of one level for a single feature vector: one
/// [N*B*A]-flat vector per step. `prev_seq` is the level-(l-1) centroid
/// sequence, [K][N].
pub fn level_forward<F: Scalar>(
    p: &CriticParams<F>,
    h: &Features,
    level: usize,
    prev_seq: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let cfg = &p.cfg;
    if prev_seq.len() != cfg.horizon || prev_seq.iter().any(|a| a.len() != cfg.action_dims) {
        return Err(CoreError::ShapeMismatch(format!(
            "prev sequence shape {}x{}, want {}x{}",
            prev_seq.len(),
            prev_seq.first().map_or(0, |a| a.len()),
            cfg.horizon,
            cfg.action_dims
        )));
    }
    let mut tape = Tape::new();
    let nodes = p.register(&mut tape);
    let hn = feature_node(&mut tape, cfg, h)?;
    let flat: Vec<f64> = prev_seq.iter().flatten().copied().collect();
    let qs = level_forward_nodes(&mut tape, &nodes, cfg, level, hn, &flat, 1)?;
    Ok(qs
        .into_iter()
        .map(|q| tape.values(q).iter().map(|&v| v.to_f64()).collect())
        .collect())
}

/// Greedy coarse-to-fine inference for one feature vector: the K x N action
/// sequence and the zoom path that produced it.
pub fn greedy_sequence<F: Scalar>(
    p: &CriticParams<F>,
    h: &Features,
) -> Result<(Vec<Vec<f64>>, SeqPaths)> {
    let mut tape = Tape::new();
    let nodes = p.register(&mut tape);
    let hn = feature_node(&mut tape, &p.cfg, h)?;
    let mut paths = greedy_from_h(p, &mut tape, &nodes, hn, 1)?;
    let path = paths.pop().expect("one row");
    Ok((path.actions(), path))
}

/// Q-evaluation of an explicit sequence along its own zoom path.
#[derive(Clone, Debug)]
pub struct SequenceQ {
    pub paths: SeqPaths,
    /// Atom probabilities of each chosen bin, [L][K][N][A].
    pub probs: Vec<Vec<Vec<Vec<f64>>>>,
    /// Expected value of each chosen bin, [L][K][N].
    pub expected: Vec<Vec<Vec<f64>>>,
    /// Expected value of every bin of the same heads, [L][K][N][B].
    pub expected_all_bins: Vec<Vec<Vec<Vec<f64>>>>,
}

pub fn q_of_sequence<F: Scalar>(
    p: &CriticParams<F>,
    h: &Features,
    seq: &[Vec<f64>],
) -> Result<SequenceQ> {
    let cfg = &p.cfg;
    let paths = SeqPaths::of_sequence(cfg, seq)?;
    let mut tape = Tape::new();
    let nodes = p.register(&mut tape);
    let hn = feature_node(&mut tape, cfg, h)?;
    let support = cfg.support();
    let (k_len, n_dims, bins, atoms) = (cfg.horizon, cfg.action_dims, cfg.bins, cfg.atoms);
    let std_paths = std::slice::from_ref(&paths);
    let mut probs = Vec::with_capacity(cfg.levels);
    let mut expected = Vec::with_capacity(cfg.levels);
    let mut expected_all = Vec::with_capacity(cfg.levels);
    for l in 1..=cfg.levels {
        let nodes_l = sequence_level_nodes(&mut tape, &nodes, cfg, hn, std_paths, l, 1)?;
        let gathered: Vec<f64> = tape
            .values(nodes_l.gathered)
            .iter()
            .map(|&v| v.to_f64())
            .collect();
        let eall: Vec<f64> = tape
            .values(nodes_l.expected)
            .iter()
            .map(|&v| v.to_f64())
            .collect();
        let mut pl = Vec::with_capacity(k_len);
        let mut el = Vec::with_capacity(k_len);
        let mut al = Vec::with_capacity(k_len);
        for k in 0..k_len {
            let mut pk = Vec::with_capacity(n_dims);
            let mut ek = Vec::with_capacity(n_dims);
            let mut ak = Vec::with_capacity(n_dims);
            for n in 0..n_dims {
                let base = (k * n_dims + n) * atoms;
                let mut pr = vec![0.0f64; atoms];
                kernels::softmax(&gathered[base..base + atoms], &mut pr);
                let e: f64 = pr.iter().zip(&support).map(|(p, z)| p * z).sum();
                pk.push(pr);
                ek.push(e);
                let ab = (k * n_dims + n) * bins;
                ak.push(eall[ab..ab + bins].to_vec());
            }
            pl.push(pk);
            el.push(ek);
            al.push(ak);
        }
        probs.push(pl);
        expected.push(el);
        expected_all.push(al);
    }
    Ok(SequenceQ { paths, probs, expected, expected_all_bins: expected_all })
}
