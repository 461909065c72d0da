use super::kernels::{axpy, dot, matmul_xwt, softmax};
use super::{ParamTensor, Scalar};
use crate::error::{CoreError, Result};

pub type NodeId = usize;

/// Handles to the four weight nodes of one GRU cell, registered on a tape.
/// Gate packing order along rows is (z, r, n), each block `hidden` rows.
#[derive(Clone, Copy)]
pub struct GruWeights {
    pub w_ih: NodeId,
    pub w_hh: NodeId,
    pub b_ih: NodeId,
    pub b_hh: NodeId,
}

enum Op<F> {
    Leaf {
        param_key: Option<usize>,
    },
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        c: F,
    },
    ConcatCols {
        parts: Vec<NodeId>,
    },
    SliceCols {
        x: NodeId,
        start: usize,
    },
    LayerNorm {
        x: NodeId,
        rstd: Vec<F>,
    },
    Silu {
        x: NodeId,
    },
    Sigmoid {
        x: NodeId,
    },
    Tanh {
        x: NodeId,
    },
    /// Per (row, dim): q[b][a] = val[a] + adv[b][a] - mean_b adv[b][a].
    Dueling {
        val: NodeId,
        adv: NodeId,
        dims: usize,
        bins: usize,
        atoms: usize,
    },
    /// Select one bin's atom block per (row, dim). picks are 0-based, len rows*dims.
    GatherBins {
        q: NodeId,
        picks: Vec<usize>,
        dims: usize,
        bins: usize,
        atoms: usize,
    },
    /// Softmax over each group of `atoms` columns, dotted with the support grid.
    ExpectedValue {
        logits: NodeId,
        atoms: usize,
        support: Vec<F>,
        probs: Vec<F>,
    },
    /// Sum over rows and atom-groups of CE(softmax(logits), target), row-weighted.
    /// The target is a plain constant, not a differentiable node.
    SoftmaxCrossEntropy {
        logits: NodeId,
        target: Vec<F>,
        atoms: usize,
        row_weights: Vec<F>,
        probs: Vec<F>,
    },
    /// Large-margin hinge over bins per (row, dim):
    /// max_b(q[b] + margin*[b != expert]) - q[expert], row-weighted sum.
    MarginHinge {
        q: NodeId,
        experts: Vec<usize>,
        dims: usize,
        bins: usize,
        row_weights: Vec<F>,
        winners: Vec<usize>,
    },
    /// Scalar: sum_r w_r * sum_c x[r][c].
    SumWeightedRows {
        x: NodeId,
        row_weights: Vec<F>,
    },
    /// Scalar: sum_i coeff_i * part_i over scalar nodes.
    WeightedSum {
        parts: Vec<NodeId>,
        coeffs: Vec<F>,
    },
}

struct Node<F> {
    rows: usize,
    cols: usize,
    values: Vec<F>,
    op: Op<F>,
}

/// Wengert-list tape. Built fresh for each forward pass and dropped after the
/// optimizer step; nodes are row-major [rows x cols] buffers.
pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new() }
    }

    fn push(&mut self, rows: usize, cols: usize, values: Vec<F>, op: Op<F>) -> NodeId {
        debug_assert_eq!(values.len(), rows * cols);
        self.nodes.push(Node { rows, cols, values, op });
        self.nodes.len() - 1
    }

    pub fn rows(&self, id: NodeId) -> usize {
        self.nodes[id].rows
    }

    pub fn cols(&self, id: NodeId) -> usize {
        self.nodes[id].cols
    }

    pub fn values(&self, id: NodeId) -> &[F] {
        &self.nodes[id].values
    }

    /// Gradient of the last `backward` call wrt node `id`, if it was reached.
    pub fn grad(&self, id: NodeId) -> Option<&[F]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }

    pub fn constant(&mut self, rows: usize, cols: usize, values: Vec<F>) -> NodeId {
        self.push(rows, cols, values, Op::Leaf { param_key: None })
    }

    pub fn constant_rows_f64(&mut self, rows: usize, cols: usize, values: &[f64]) -> NodeId {
        let v = values.iter().map(|&x| F::from_f64(x)).collect();
        self.constant(rows, cols, v)
    }

    pub fn scalar(&mut self, v: F) -> NodeId {
        self.constant(1, 1, vec![v])
    }

    /// Registers a parameter as a leaf; values are snapshotted. `key` is the
    /// caller's index into its own tensor list, used to route gradients back.
    pub fn param(&mut self, t: &ParamTensor<F>, key: usize) -> NodeId {
        self.push(t.rows, t.cols, t.values.clone(), Op::Leaf { param_key: Some(key) })
    }

    // ---------- forward builders ----------

    /// y = x W^T (+ b). x: [R x I], w: [O x I], b: [1 x O].
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (r, i) = (self.rows(x), self.cols(x));
        let (o, wi) = (self.rows(w), self.cols(w));
        if i != wi {
            return Err(CoreError::ShapeMismatch(format!(
                "linear: x is {r}x{i} but w is {o}x{wi}"
            )));
        }
        let mut out = vec![F::zero(); r * o];
        matmul_xwt(&self.nodes[x].values, &self.nodes[w].values, &mut out, r, i, o);
        if let Some(b) = b {
            if self.rows(b) != 1 || self.cols(b) != o {
                return Err(CoreError::ShapeMismatch(format!(
                    "linear: bias is {}x{}, want 1x{o}",
                    self.rows(b),
                    self.cols(b)
                )));
            }
            for rr in 0..r {
                let row = &mut out[rr * o..(rr + 1) * o];
                for (y, &bv) in row.iter_mut().zip(&self.nodes[b].values) {
                    *y += bv;
                }
            }
        }
        Ok(self.push(r, o, out, Op::Linear { x, w, b }))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) {
        assert!(
            self.rows(a) == self.rows(b) && self.cols(a) == self.cols(b),
            "{what}: {}x{} vs {}x{}",
            self.rows(a),
            self.cols(a),
            self.rows(b),
            self.cols(b)
        );
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "add");
        let v = self.nodes[a]
            .values
            .iter()
            .zip(&self.nodes[b].values)
            .map(|(&x, &y)| x + y)
            .collect();
        self.push(self.rows(a), self.cols(a), v, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "sub");
        let v = self.nodes[a]
            .values
            .iter()
            .zip(&self.nodes[b].values)
            .map(|(&x, &y)| x - y)
            .collect();
        self.push(self.rows(a), self.cols(a), v, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "mul");
        let v = self.nodes[a]
            .values
            .iter()
            .zip(&self.nodes[b].values)
            .map(|(&x, &y)| x * y)
            .collect();
        self.push(self.rows(a), self.cols(a), v, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: NodeId, c: F) -> NodeId {
        let v = self.nodes[x].values.iter().map(|&t| t * c).collect();
        self.push(self.rows(x), self.cols(x), v, Op::Scale { x, c })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_cols: no parts");
        let rows = self.rows(parts[0]);
        let total: usize = parts.iter().map(|&p| self.cols(p)).sum();
        for &p in parts {
            assert_eq!(self.rows(p), rows, "concat_cols: row mismatch");
        }
        let mut v = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let c = self.cols(p);
                v.extend_from_slice(&self.nodes[p].values[r * c..(r + 1) * c]);
            }
        }
        self.push(rows, total, v, Op::ConcatCols { parts: parts.to_vec() })
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let (r, c) = (self.rows(x), self.cols(x));
        assert!(start + len <= c, "slice_cols: {start}+{len} > {c}");
        let mut v = Vec::with_capacity(r * len);
        for rr in 0..r {
            v.extend_from_slice(&self.nodes[x].values[rr * c + start..rr * c + start + len]);
        }
        self.push(r, len, v, Op::SliceCols { x, start })
    }

    /// Row-wise LayerNorm, epsilon 1e-5, no learned affine.
    pub fn layer_norm(&mut self, x: NodeId) -> NodeId {
        let (r, c) = (self.rows(x), self.cols(x));
        assert!(c >= 2, "layer_norm needs at least 2 features");
        let eps = F::from_f64(1e-5);
        let nf = F::from_f64(c as f64);
        let mut out = vec![F::zero(); r * c];
        let mut rstd = vec![F::zero(); r];
        for rr in 0..r {
            let xr = &self.nodes[x].values[rr * c..(rr + 1) * c];
            let mean = xr.iter().copied().sum::<F>() / nf;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / nf;
            let rs = (var + eps).sqrt().recip();
            rstd[rr] = rs;
            for (o, &v) in out[rr * c..(rr + 1) * c].iter_mut().zip(xr) {
                *o = (v - mean) * rs;
            }
        }
        self.push(r, c, out, Op::LayerNorm { x, rstd })
    }

    pub fn silu(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x]
            .values
            .iter()
            .map(|&t| t / (F::one() + (-t).exp()))
            .collect();
        self.push(self.rows(x), self.cols(x), v, Op::Silu { x })
    }

    /// SiLU(LayerNorm(x)): the activation stack applied after every linear.
    pub fn silu_layernorm(&mut self, x: NodeId) -> NodeId {
        let n = self.layer_norm(x);
        self.silu(n)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x]
            .values
            .iter()
            .map(|&t| F::one() / (F::one() + (-t).exp()))
            .collect();
        self.push(self.rows(x), self.cols(x), v, Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x].values.iter().map(|&t| t.tanh()).collect();
        self.push(self.rows(x), self.cols(x), v, Op::Tanh { x })
    }

    /// One GRU step: h' = (1 - z) * n + z * h_prev, built from primitives so
    /// backward falls out of the tape. Weights are packed (z, r, n) by rows.
    pub fn gru_cell(&mut self, x: NodeId, h_prev: NodeId, w: GruWeights) -> Result<NodeId> {
        let hidden = self.cols(h_prev);
        if self.rows(w.w_ih) != 3 * hidden || self.rows(w.w_hh) != 3 * hidden {
            return Err(CoreError::ShapeMismatch(format!(
                "gru_cell: weight rows {} / {} do not match 3*hidden={}",
                self.rows(w.w_ih),
                self.rows(w.w_hh),
                3 * hidden
            )));
        }
        let xp = self.linear(x, w.w_ih, Some(w.b_ih))?; // [R x 3H]
        let hp = self.linear(h_prev, w.w_hh, Some(w.b_hh))?; // [R x 3H]
        let xz = self.slice_cols(xp, 0, hidden);
        let xr = self.slice_cols(xp, hidden, hidden);
        let xn = self.slice_cols(xp, 2 * hidden, hidden);
        let hz = self.slice_cols(hp, 0, hidden);
        let hr = self.slice_cols(hp, hidden, hidden);
        let hn = self.slice_cols(hp, 2 * hidden, hidden);
        let z_pre = self.add(xz, hz);
        let z = self.sigmoid(z_pre);
        let r_pre = self.add(xr, hr);
        let r = self.sigmoid(r_pre);
        let rhn = self.mul(r, hn);
        let n_pre = self.add(xn, rhn);
        let n = self.tanh(n_pre);
        // (1-z)*n + z*h = n + z*(h - n)
        let h_minus_n = self.sub(h_prev, n);
        let gated = self.mul(z, h_minus_n);
        Ok(self.add(n, gated))
    }

    /// Dueling combine per (row, dim): q[b][a] = val[a] + adv[b][a] - mean_b adv.
    /// val: [R x dims*atoms], adv: [R x dims*bins*atoms] -> [R x dims*bins*atoms].
    pub fn dueling(&mut self, val: NodeId, adv: NodeId, dims: usize, bins: usize, atoms: usize) -> NodeId {
        let r = self.rows(adv);
        assert_eq!(self.cols(val), dims * atoms, "dueling: bad value stream width");
        assert_eq!(self.cols(adv), dims * bins * atoms, "dueling: bad advantage width");
        assert_eq!(self.rows(val), r, "dueling: row mismatch");
        let bf = F::from_f64(bins as f64);
        let mut out = vec![F::zero(); r * dims * bins * atoms];
        for rr in 0..r {
            for d in 0..dims {
                let vrow = &self.nodes[val].values[rr * dims * atoms + d * atoms..][..atoms];
                let abase = rr * dims * bins * atoms + d * bins * atoms;
                for a in 0..atoms {
                    let mut mean = F::zero();
                    for b in 0..bins {
                        mean += self.nodes[adv].values[abase + b * atoms + a];
                    }
                    mean = mean / bf;
                    for b in 0..bins {
                        out[abase + b * atoms + a] =
                            vrow[a] + self.nodes[adv].values[abase + b * atoms + a] - mean;
                    }
                }
            }
        }
        self.push(r, dims * bins * atoms, out, Op::Dueling { val, adv, dims, bins, atoms })
    }

    /// Select the atom block of one bin per (row, dim). picks: 0-based bin per
    /// (row, dim), row-major, len rows*dims. Output [R x dims*atoms].
    pub fn gather_bins(
        &mut self,
        q: NodeId,
        picks: Vec<usize>,
        dims: usize,
        bins: usize,
        atoms: usize,
    ) -> NodeId {
        let r = self.rows(q);
        assert_eq!(self.cols(q), dims * bins * atoms, "gather_bins: bad q width");
        assert_eq!(picks.len(), r * dims, "gather_bins: bad picks length");
        let mut out = vec![F::zero(); r * dims * atoms];
        for rr in 0..r {
            for d in 0..dims {
                let b = picks[rr * dims + d];
                debug_assert!(b < bins);
                let src = rr * dims * bins * atoms + d * bins * atoms + b * atoms;
                let dst = rr * dims * atoms + d * atoms;
                out[dst..dst + atoms]
                    .copy_from_slice(&self.nodes[q].values[src..src + atoms]);
            }
        }
        self.push(r, dims * atoms, out, Op::GatherBins { q, picks, dims, bins, atoms })
    }

    /// Expected value of the categorical distribution in every group of
    /// `atoms` columns: softmax then dot with the support grid.
    /// logits: [R x G*atoms] -> [R x G].
    pub fn expected_value(&mut self, logits: NodeId, support: &[f64]) -> NodeId {
        let atoms = support.len();
        let (r, c) = (self.rows(logits), self.cols(logits));
        assert_eq!(c % atoms, 0, "expected_value: cols not a multiple of atoms");
        let groups = c / atoms;
        let sup: Vec<F> = support.iter().map(|&z| F::from_f64(z)).collect();
        let mut probs = vec![F::zero(); r * c];
        let mut out = vec![F::zero(); r * groups];
        for g in 0..r * groups {
            let lo = &self.nodes[logits].values[g * atoms..(g + 1) * atoms];
            let pr = &mut probs[g * atoms..(g + 1) * atoms];
            softmax(lo, pr);
            out[g] = dot(pr, &sup);
        }
        self.push(r, groups, out, Op::ExpectedValue { logits, atoms, support: sup, probs })
    }

    /// Row-weighted cross-entropy against fixed target probabilities, summed
    /// over rows and atom groups. logits/target: [R x G*atoms], weights: [R].
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        target: &[F],
        atoms: usize,
        row_weights: Vec<F>,
    ) -> Result<NodeId> {
        let (r, c) = (self.rows(logits), self.cols(logits));
        if target.len() != r * c || c % atoms != 0 {
            return Err(CoreError::ShapeMismatch(format!(
                "softmax_cross_entropy: logits {r}x{c}, target len {}, atoms {atoms}",
                target.len()
            )));
        }
        assert_eq!(row_weights.len(), r);
        let tol = F::from_f64(1e-6);
        let groups = c / atoms;
        for g in 0..r * groups {
            let t = &target[g * atoms..(g + 1) * atoms];
            let mut sum = F::zero();
            for &p in t {
                if p < F::zero() {
                    return Err(CoreError::InvalidInput(
                        "softmax_cross_entropy: negative target probability".into(),
                    ));
                }
                sum += p;
            }
            if (sum - F::one()).abs() > tol {
                return Err(CoreError::InvalidInput(format!(
                    "softmax_cross_entropy: target probabilities sum to {sum}, not 1"
                )));
            }
        }
        let mut probs = vec![F::zero(); r * c];
        let mut loss = F::zero();
        for rr in 0..r {
            let w = row_weights[rr];
            for g in 0..groups {
                let base = rr * c + g * atoms;
                let lo = &self.nodes[logits].values[base..base + atoms];
                let pr = &mut probs[base..base + atoms];
                softmax(lo, pr);
                let mut ce = F::zero();
                for (&t, &p) in target[base..base + atoms].iter().zip(pr.iter()) {
                    if t > F::zero() {
                        ce -= t * p.max(F::from_f64(1e-30)).ln();
                    }
                }
                loss += w * ce;
            }
        }
        Ok(self.push(
            1,
            1,
            vec![loss],
            Op::SoftmaxCrossEntropy { logits, target: target.to_vec(), atoms, row_weights, probs },
        ))
    }

    /// Large-margin hinge per (row, dim) over bins of expected values:
    /// max_b(q[b] + margin*[b != expert]) - q[expert]. experts are 0-based,
    /// len rows*dims; ties go to the lowest bin. q: [R x dims*bins] -> scalar.
    pub fn margin_hinge(
        &mut self,
        q: NodeId,
        experts: Vec<usize>,
        dims: usize,
        bins: usize,
        margin: f64,
        row_weights: Vec<F>,
    ) -> NodeId {
        let r = self.rows(q);
        assert_eq!(self.cols(q), dims * bins, "margin_hinge: bad q width");
        assert_eq!(experts.len(), r * dims);
        assert_eq!(row_weights.len(), r);
        let mg = F::from_f64(margin);
        let mut winners = vec![0usize; r * dims];
        let mut loss = F::zero();
        for rr in 0..r {
            for d in 0..dims {
                let e = experts[rr * dims + d];
                debug_assert!(e < bins);
                let base = rr * dims * bins + d * bins;
                let qs = &self.nodes[q].values[base..base + bins];
                let mut best = 0usize;
                let mut best_v = qs[0] + if e != 0 { mg } else { F::zero() };
                for b in 1..bins {
                    let v = qs[b] + if e != b { mg } else { F::zero() };
                    if v > best_v {
                        best_v = v;
                        best = b;
                    }
                }
                winners[rr * dims + d] = best;
                loss += row_weights[rr] * (best_v - qs[e]);
            }
        }
        self.push(1, 1, vec![loss], Op::MarginHinge { q, experts, dims, bins, row_weights, winners })
    }

    /// Scalar: sum_r w_r * sum_c x[r][c].
    pub fn sum_weighted_rows(&mut self, x: NodeId, row_weights: Vec<F>) -> NodeId {
        let (r, c) = (self.rows(x), self.cols(x));
        assert_eq!(row_weights.len(), r);
        let mut s = F::zero();
        for rr in 0..r {
            let row: F = self.nodes[x].values[rr * c..(rr + 1) * c].iter().copied().sum();
            s += row_weights[rr] * row;
        }
        self.push(1, 1, vec![s], Op::SumWeightedRows { x, row_weights })
    }

    /// Scalar linear combination of scalar nodes.
    pub fn weighted_sum(&mut self, parts: &[NodeId], coeffs: &[f64]) -> NodeId {
        assert_eq!(parts.len(), coeffs.len());
        let cs: Vec<F> = coeffs.iter().map(|&c| F::from_f64(c)).collect();
        let mut s = F::zero();
        for (&p, &c) in parts.iter().zip(&cs) {
            assert_eq!(self.nodes[p].values.len(), 1, "weighted_sum: non-scalar part");
            s += c * self.nodes[p].values[0];
        }
        self.push(1, 1, vec![s], Op::WeightedSum { parts: parts.to_vec(), coeffs: cs })
    }

    // ---------- backward ----------

    /// Reverse sweep from a scalar loss. Node gradients are reset per call and
    /// readable via `grad`; parameter routing happens in `add_param_grads`.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let n = self.nodes[loss].values.len();
        if n != 1 {
            return Err(CoreError::InvalidInput(format!(
                "backward: loss must be scalar, has {n} elements"
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss] = Some(vec![F::one()]);
        for id in (0..=loss).rev() {
            let Some(dy) = self.grads[id].take() else { continue };
            backprop_node(&self.nodes, &mut self.grads, id, &dy);
            self.grads[id] = Some(dy);
        }
        Ok(())
    }

    /// Adds dL/dtheta of every registered parameter into the callback;
    /// `key` is the index given at registration. Called after `backward`;
    /// repeated backward + accumulate calls sum up, matching grad semantics.
    pub fn add_param_grads(&self, mut sink: impl FnMut(usize, &[F])) {
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param_key: Some(k) } = node.op {
                if let Some(g) = self.grads.get(id).and_then(|g| g.as_deref()) {
                    sink(k, g);
                }
            }
        }
    }

}

fn grad_buf<'a, F: Scalar>(
    nodes: &[Node<F>],
    grads: &'a mut [Option<Vec<F>>],
    id: NodeId,
) -> &'a mut Vec<F> {
    let len = nodes[id].values.len();
    grads[id].get_or_insert_with(|| vec![F::zero(); len])
}

/// Applies the chain rule for node `id` given its output gradient `dy`,
/// accumulating into the grads of its (strictly earlier) input nodes.
fn backprop_node<F: Scalar>(
    nodes: &[Node<F>],
    grads: &mut [Option<Vec<F>>],
    id: NodeId,
    dy: &[F],
) {
    let (rows, cols) = (nodes[id].rows, nodes[id].cols);
    match &nodes[id].op {
        Op::Leaf { .. } => {}
        Op::Linear { x, w, b } => {
            let (x, w, b) = (*x, *w, *b);
            let (r, i) = (nodes[x].rows, nodes[x].cols);
            let o = cols;
            {
                let wv = &nodes[w].values;
                let gx = grad_buf(nodes, grads, x);
                for rr in 0..r {
                    for oo in 0..o {
                        axpy(
                            &mut gx[rr * i..(rr + 1) * i],
                            dy[rr * o + oo],
                            &wv[oo * i..(oo + 1) * i],
                        );
                    }
                }
            }
            {
                let xv = &nodes[x].values;
                let gw = grad_buf(nodes, grads, w);
                for rr in 0..r {
                    for oo in 0..o {
                        axpy(
                            &mut gw[oo * i..(oo + 1) * i],
                            dy[rr * o + oo],
                            &xv[rr * i..(rr + 1) * i],
                        );
                    }
                }
            }
            if let Some(b) = b {
                let gb = grad_buf(nodes, grads, b);
                for rr in 0..r {
                    for oo in 0..o {
                        gb[oo] += dy[rr * o + oo];
                    }
                }
            }
        }
        Op::Add { a, b } => {
            let (a, b) = (*a, *b);
            axpy(grad_buf(nodes, grads, a), F::one(), dy);
            axpy(grad_buf(nodes, grads, b), F::one(), dy);
        }
        Op::Sub { a, b } => {
            let (a, b) = (*a, *b);
            axpy(grad_buf(nodes, grads, a), F::one(), dy);
            axpy(grad_buf(nodes, grads, b), -F::one(), dy);
        }
        Op::Mul { a, b } => {
            let (a, b) = (*a, *b);
            {
                let bv = &nodes[b].values;
                let ga = grad_buf(nodes, grads, a);
                for ((g, &d), &x) in ga.iter_mut().zip(dy).zip(bv) {
                    *g += d * x;
                }
            }
            {
                let av = &nodes[a].values;
                let gb = grad_buf(nodes, grads, b);
                for ((g, &d), &x) in gb.iter_mut().zip(dy).zip(av) {
                    *g += d * x;
                }
            }
        }
        Op::Scale { x, c } => {
            let (x, c) = (*x, *c);
            axpy(grad_buf(nodes, grads, x), c, dy);
        }
        Op::ConcatCols { parts } => {
            let mut offset = 0;
            for &p in parts {
                let pc = nodes[p].cols;
                let gp = grad_buf(nodes, grads, p);
                for rr in 0..rows {
                    axpy(
                        &mut gp[rr * pc..(rr + 1) * pc],
                        F::one(),
                        &dy[rr * cols + offset..rr * cols + offset + pc],
                    );
                }
                offset += pc;
            }
        }
        Op::SliceCols { x, start } => {
            let (x, start) = (*x, *start);
            let xc = nodes[x].cols;
            let gx = grad_buf(nodes, grads, x);
            for rr in 0..rows {
                axpy(
                    &mut gx[rr * xc + start..rr * xc + start + cols],
                    F::one(),
                    &dy[rr * cols..(rr + 1) * cols],
                );
            }
        }
        Op::LayerNorm { x, rstd } => {
            let yv = &nodes[id].values;
            let nf = F::from_f64(cols as f64);
            let gx = grad_buf(nodes, grads, *x);
            for rr in 0..rows {
                let yr = &yv[rr * cols..(rr + 1) * cols];
                let dr = &dy[rr * cols..(rr + 1) * cols];
                let mean_d = dr.iter().copied().sum::<F>() / nf;
                let mean_dy_y = dr.iter().zip(yr).map(|(&d, &y)| d * y).sum::<F>() / nf;
                for cc in 0..cols {
                    gx[rr * cols + cc] += rstd[rr] * (dr[cc] - mean_d - yr[cc] * mean_dy_y);
                }
            }
        }
        Op::Silu { x } => {
            let xv = &nodes[*x].values;
            let gx = grad_buf(nodes, grads, *x);
            for ((g, &d), &t) in gx.iter_mut().zip(dy).zip(xv) {
                let s = F::one() / (F::one() + (-t).exp());
                *g += d * s * (F::one() + t * (F::one() - s));
            }
        }
        Op::Sigmoid { x } => {
            let yv = &nodes[id].values;
            let gx = grad_buf(nodes, grads, *x);
            for ((g, &d), &s) in gx.iter_mut().zip(dy).zip(yv) {
                *g += d * s * (F::one() - s);
            }
        }
        Op::Tanh { x } => {
            let yv = &nodes[id].values;
            let gx = grad_buf(nodes, grads, *x);
            for ((g, &d), &y) in gx.iter_mut().zip(dy).zip(yv) {
                *g += d * (F::one() - y * y);
            }
        }
        Op::Dueling { val, adv, dims, bins, atoms } => {
            let (val, adv, dims, bins, atoms) = (*val, *adv, *dims, *bins, *atoms);
            let bf = F::from_f64(bins as f64);
            {
                let gv = grad_buf(nodes, grads, val);
                for rr in 0..rows {
                    for d in 0..dims {
                        let abase = rr * dims * bins * atoms + d * bins * atoms;
                        for a in 0..atoms {
                            let mut s = F::zero();
                            for b in 0..bins {
                                s += dy[abase + b * atoms + a];
                            }
                            gv[rr * dims * atoms + d * atoms + a] += s;
                        }
                    }
                }
            }
            {
                let ga = grad_buf(nodes, grads, adv);
                for rr in 0..rows {
                    for d in 0..dims {
                        let abase = rr * dims * bins * atoms + d * bins * atoms;
                        for a in 0..atoms {
                            let mut s = F::zero();
                            for b in 0..bins {
                                s += dy[abase + b * atoms + a];
                            }
                            let m = s / bf;
                            for b in 0..bins {
                                ga[abase + b * atoms + a] += dy[abase + b * atoms + a] - m;
                            }
                        }
                    }
                }
            }
        }
        Op::GatherBins { q, picks, dims, bins, atoms } => {
            let (q, dims, bins, atoms) = (*q, *dims, *bins, *atoms);
            let gq = grad_buf(nodes, grads, q);
            for rr in 0..rows {
                for d in 0..dims {
                    let b = picks[rr * dims + d];
                    let dst = rr * dims * bins * atoms + d * bins * atoms + b * atoms;
                    let src = rr * dims * atoms + d * atoms;
                    axpy(&mut gq[dst..dst + atoms], F::one(), &dy[src..src + atoms]);
                }
            }
        }
        Op::ExpectedValue { logits, atoms, support, probs } => {
            let (logits, atoms) = (*logits, *atoms);
            let yv = &nodes[id].values;
            let gl = grad_buf(nodes, grads, logits);
            for g in 0..yv.len() {
                let d = dy[g];
                if d == F::zero() {
                    continue;
                }
                let pr = &probs[g * atoms..(g + 1) * atoms];
                let y = yv[g];
                for a in 0..atoms {
                    gl[g * atoms + a] += d * pr[a] * (support[a] - y);
                }
            }
        }
        Op::SoftmaxCrossEntropy { logits, target, atoms, row_weights, probs } => {
            let (logits, atoms) = (*logits, *atoms);
            let d = dy[0];
            let c = nodes[logits].cols;
            let groups = c / atoms;
            let gl = grad_buf(nodes, grads, logits);
            for (rr, &w) in row_weights.iter().enumerate() {
                let wd = w * d;
                if wd == F::zero() {
                    continue;
                }
                for g in 0..groups {
                    let base = rr * c + g * atoms;
                    for a in 0..atoms {
                        gl[base + a] += wd * (probs[base + a] - target[base + a]);
                    }
                }
            }
        }
        Op::MarginHinge { q, experts, dims, bins, row_weights, winners } => {
            let (q, dims, bins) = (*q, *dims, *bins);
            let d = dy[0];
            let gq = grad_buf(nodes, grads, q);
            for (rr, &w) in row_weights.iter().enumerate() {
                let wd = w * d;
                if wd == F::zero() {
                    continue;
                }
                for dd in 0..dims {
                    let e = experts[rr * dims + dd];
                    let win = winners[rr * dims + dd];
                    let base = rr * dims * bins + dd * bins;
                    gq[base + win] += wd;
                    gq[base + e] -= wd;
                }
            }
        }
        Op::SumWeightedRows { x, row_weights } => {
            let x = *x;
            let d = dy[0];
            let c = nodes[x].cols;
            let gx = grad_buf(nodes, grads, x);
            for (rr, &w) in row_weights.iter().enumerate() {
                let wd = w * d;
                for g in gx[rr * c..(rr + 1) * c].iter_mut() {
                    *g += wd;
                }
            }
        }
        Op::WeightedSum { parts, coeffs } => {
            let d = dy[0];
            for (&p, &c) in parts.iter().zip(coeffs.iter()) {
                grad_buf(nodes, grads, p)[0] += c * d;
            }
        }
    }
}
