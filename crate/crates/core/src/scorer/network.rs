//! Parameter storage, forward pass and hand-derived backward pass of the
//! attention scorer.
//!
//! All learnable values live in one flat buffer; [`Shape`] fixes the offsets
//! of each tensor. Matrices are row-major with shape `inputs x outputs`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ScorerError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub n_features: usize,
    pub heads: usize,
    pub blocks: usize,
    pub head_dim: usize,
    pub hidden: usize,
}

impl Shape {
    /// Model width `D = heads * head_dim`.
    pub fn width(&self) -> usize {
        self.heads * self.head_dim
    }

    /// Size of one projection network including its output bias.
    fn fcn_size(&self) -> usize {
        let w = self.width();
        w * w + w + w * self.head_dim + self.head_dim
    }

    /// Query, key and value networks of one head. The key network has no
    /// output bias: softmax is invariant to it.
    fn head_group_size(&self) -> usize {
        3 * self.fcn_size() - self.head_dim
    }

    fn embed_len(&self) -> usize {
        self.n_features * self.width()
    }

    fn fcn_base(&self) -> usize {
        2 * self.embed_len()
    }

    fn head_base(&self) -> usize {
        self.fcn_base() + self.blocks * self.heads * self.head_group_size()
    }

    pub fn param_count(&self) -> usize {
        self.head_base() + self.embed_len() * self.hidden + 2 * self.hidden + 1
    }

    pub fn validate(&self) -> Result<(), ScorerError> {
        let fields = [
            ("n_features", self.n_features),
            ("heads", self.heads),
            ("blocks", self.blocks),
            ("head_dim", self.head_dim),
            ("hidden", self.hidden),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(ScorerError::InvalidHyperparams(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    Query = 0,
    Key = 1,
    Value = 2,
}

pub const PROJECTIONS: [Projection; 3] = [Projection::Query, Projection::Key, Projection::Value];

/// Borrowed view of one single-hidden-layer projection network
/// `D -> D -> head_dim`. `b2` is empty for the key network.
#[derive(Debug, Clone, Copy)]
pub struct Fcn<'a, T> {
    pub w1: &'a [T],
    pub b1: &'a [T],
    pub w2: &'a [T],
    pub b2: &'a [T],
}

#[derive(Debug, Clone, Copy)]
pub struct Head<'a, T> {
    pub w1: &'a [T],
    pub b1: &'a [T],
    pub w2: &'a [T],
    pub b2: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> ScorerParams<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.param_count()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self, ScorerError> {
        shape.validate()?;
        if data.len() != shape.param_count() {
            return Err(ScorerError::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                shape.param_count(),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(shape: Shape, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(shape);
        let w = shape.width();
        let mut fill = |slice: &mut [T], fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in slice {
                *v = T::lit(rng.random_range(-limit..limit));
            }
        };
        let embed = shape.embed_len();
        fill(&mut p.data[..embed], 1, w);
        for block in 0..shape.blocks {
            for head in 0..shape.heads {
                for proj in PROJECTIONS {
                    let base = p.fcn_offset(block, head, proj);
                    fill(&mut p.data[base..base + w * w], w, w);
                    let w2 = base + w * w + w;
                    fill(&mut p.data[w2..w2 + w * shape.head_dim], w, shape.head_dim);
                }
            }
        }
        let hb = shape.head_base();
        let hw1 = embed * shape.hidden;
        fill(&mut p.data[hb..hb + hw1], embed, shape.hidden);
        let w2 = hb + hw1 + shape.hidden;
        fill(&mut p.data[w2..w2 + shape.hidden], shape.hidden, 1);
        p
    }

    pub fn seeded(shape: Shape, seed: u64) -> Self {
        Self::init(shape, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn embed_weight(&self, slot: usize) -> &[T] {
        let w = self.shape.width();
        &self.data[slot * w..(slot + 1) * w]
    }

    pub fn embed_bias(&self, slot: usize) -> &[T] {
        let w = self.shape.width();
        let base = self.shape.embed_len();
        &self.data[base + slot * w..base + (slot + 1) * w]
    }

    fn fcn_offset(&self, block: usize, head: usize, proj: Projection) -> usize {
        let s = self.shape;
        let group = s.fcn_base() + (block * s.heads + head) * s.head_group_size();
        match proj {
            Projection::Query => group,
            Projection::Key => group + s.fcn_size(),
            Projection::Value => group + 2 * s.fcn_size() - s.head_dim,
        }
    }

    fn fcn_ranges(&self, block: usize, head: usize, proj: Projection) -> [std::ops::Range<usize>; 4] {
        let w = self.shape.width();
        let d = self.shape.head_dim;
        let base = self.fcn_offset(block, head, proj);
        let b1 = base + w * w;
        let w2 = b1 + w;
        let b2 = w2 + w * d;
        let b2_len = if proj == Projection::Key { 0 } else { d };
        [base..b1, b1..w2, w2..b2, b2..b2 + b2_len]
    }

    pub fn fcn(&self, block: usize, head: usize, proj: Projection) -> Fcn<'_, T> {
        let [w1, b1, w2, b2] = self.fcn_ranges(block, head, proj);
        Fcn {
            w1: &self.data[w1],
            b1: &self.data[b1],
            w2: &self.data[w2],
            b2: &self.data[b2],
        }
    }

    fn head_ranges(&self) -> [std::ops::Range<usize>; 4] {
        let s = self.shape;
        let base = s.head_base();
        let b1 = base + s.embed_len() * s.hidden;
        let w2 = b1 + s.hidden;
        let b2 = w2 + s.hidden;
        [base..b1, b1..w2, w2..b2, b2..b2 + 1]
    }

    pub fn head(&self) -> Head<'_, T> {
        let [w1, b1, w2, b2] = self.head_ranges();
        Head {
            w1: &self.data[w1],
            b1: &self.data[b1],
            w2: &self.data[w2],
            b2: self.data[b2][0],
        }
    }

    /// Mutable access to `(w1, b1, w2, b2)` of the output head.
    pub fn head_mut(&mut self) -> (&mut [T], &mut [T], &mut [T], &mut T) {
        let [w1, b1, w2, _] = self.head_ranges();
        let (pre, b2) = self.data.split_at_mut(w2.end);
        let (pre, w2s) = pre.split_at_mut(w2.start);
        let (pre, b1s) = pre.split_at_mut(b1.start);
        (&mut pre[w1], b1s, w2s, &mut b2[0])
    }
}

fn relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// `out = b + x W` with `W` stored `x.len() x out.len()`.
fn affine<T: Scalar>(x: &[T], w: &[T], b: &[T], out: &mut [T]) {
    let n_out = out.len();
    if b.is_empty() {
        out.fill(T::zero());
    } else {
        out.copy_from_slice(b);
    }
    for (xi, row) in x.iter().zip(w.chunks_exact(n_out)) {
        if *xi == T::zero() {
            continue;
        }
        for (o, wij) in out.iter_mut().zip(row) {
            *o = *o + *xi * *wij;
        }
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] = acc[l] + a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 4..a.len() {
        tail = tail + a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Backward of `out = b + x W`: accumulates `dW`, `db` and (optionally) `dx`.
fn affine_backward<T: Scalar>(x: &[T], w: &[T], dout: &[T], dw: &mut [T], db: &mut [T], dx: Option<&mut [T]>) {
    let n_out = dout.len();
    for (g, d) in db.iter_mut().zip(dout) {
        *g = *g + *d;
    }
    for (xi, row) in x.iter().zip(dw.chunks_exact_mut(n_out)) {
        if *xi == T::zero() {
            continue;
        }
        for (g, d) in row.iter_mut().zip(dout) {
            *g = *g + *xi * *d;
        }
    }
    if let Some(dx) = dx {
        for (g, row) in dx.iter_mut().zip(w.chunks_exact(n_out)) {
            *g = *g + dot(row, dout);
        }
    }
}

/// `H^0`: token `i` is `x_i * w_i + b_i`, flattened row-major (`N x D`).
pub fn embed_features<T: Scalar>(params: &ScorerParams<T>, x: &[T]) -> Result<Vec<T>, ScorerError> {
    let s = params.shape();
    if x.len() != s.n_features {
        return Err(ScorerError::ShapeMismatch(format!(
            "expected {} feature slots, got {}",
            s.n_features,
            x.len()
        )));
    }
    let w = s.width();
    let mut out = vec![T::zero(); s.n_features * w];
    for (i, xi) in x.iter().enumerate() {
        let (wi, bi) = (params.embed_weight(i), params.embed_bias(i));
        for c in 0..w {
            out[i * w + c] = *xi * wi[c] + bi[c];
        }
    }
    Ok(out)
}

/// Intermediates of one projection network applied to every token.
#[derive(Debug, Clone, Default)]
pub struct ProjectionTrace<T> {
    /// Hidden pre-activations, `N x D`.
    pub pre: Vec<T>,
    /// Outputs, `N x head_dim`.
    pub out: Vec<T>,
}

#[derive(Debug, Clone, Default)]
pub struct HeadTrace<T> {
    pub projections: [ProjectionTrace<T>; 3],
    /// Attention weights, `N x N`, row `i` is the softmax over keys for query `i`.
    pub alpha: Vec<T>,
}

#[derive(Debug, Clone, Default)]
pub struct BlockTrace<T> {
    pub heads: Vec<HeadTrace<T>>,
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone, Default)]
pub struct Trace<T> {
    pub input: Vec<T>,
    /// `hidden[l]` is the input of block `l`; the last entry feeds the head.
    pub hidden: Vec<Vec<T>>,
    pub blocks: Vec<BlockTrace<T>>,
    pub head_pre: Vec<T>,
    pub out_pre: T,
    pub score: T,
}

fn project<T: Scalar>(fcn: Fcn<'_, T>, h: &[T], n: usize, width: usize, dim: usize) -> ProjectionTrace<T> {
    let mut pre = vec![T::zero(); n * width];
    let mut out = vec![T::zero(); n * dim];
    let mut act = vec![T::zero(); width];
    for i in 0..n {
        let z = &mut pre[i * width..(i + 1) * width];
        affine(&h[i * width..(i + 1) * width], fcn.w1, fcn.b1, z);
        for (a, zv) in act.iter_mut().zip(z.iter()) {
            *a = relu(*zv);
        }
        affine(&act, fcn.w2, fcn.b2, &mut out[i * dim..(i + 1) * dim]);
    }
    ProjectionTrace { pre, out }
}

/// One multi-head attention block: per-head query/key/value networks,
/// scaled dot-product softmax over all tokens, concatenated head outputs.
pub fn attention_block_forward<T: Scalar>(
    params: &ScorerParams<T>,
    block: usize,
    h: &[T],
) -> Result<(Vec<T>, BlockTrace<T>), ScorerError> {
    let s = params.shape();
    let (n, width, dim) = (s.n_features, s.width(), s.head_dim);
    if h.len() != n * width {
        return Err(ScorerError::ShapeMismatch(format!(
            "block input has {} entries, expected {}",
            h.len(),
            n * width
        )));
    }
    let scale = T::one() / T::lit(dim as f64).sqrt();
    let mut next = vec![T::zero(); n * width];
    let mut trace = BlockTrace {
        heads: Vec::with_capacity(s.heads),
    };
    for head in 0..s.heads {
        let projections = PROJECTIONS.map(|p| project(params.fcn(block, head, p), h, n, width, dim));
        // ReLU maps NaN to 0, so check the hidden layer too
        if !projections
            .iter()
            .all(|p| p.pre.iter().chain(&p.out).all(|x| x.is_finite()))
        {
            return Err(ScorerError::NonFinite { block, head });
        }
        let [q, k, v] = [&projections[0].out, &projections[1].out, &projections[2].out];
        let mut alpha = vec![T::zero(); n * n];
        for i in 0..n {
            let row = &mut alpha[i * n..(i + 1) * n];
            for j in 0..n {
                row[j] = dot(&q[i * dim..(i + 1) * dim], &k[j * dim..(j + 1) * dim]) * scale;
            }
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for a in row.iter_mut() {
                *a = (*a - max).exp();
                sum = sum + *a;
            }
            for a in row.iter_mut() {
                *a = *a / sum;
            }
            let out = &mut next[i * width + head * dim..i * width + (head + 1) * dim];
            for j in 0..n {
                let a = row[j];
                for (o, vv) in out.iter_mut().zip(&v[j * dim..(j + 1) * dim]) {
                    *o = *o + a * *vv;
                }
            }
            if !out.iter().chain(row.iter()).all(|x| x.is_finite()) {
                return Err(ScorerError::NonFinite { block, head });
            }
        }
        trace.heads.push(HeadTrace { projections, alpha });
    }
    Ok((next, trace))
}

/// `ReLU(ReLU(flat(H) W1 + b1) W2 + b2)`; returns `(hidden pre-activations, output pre-activation, score)`.
pub fn score_head<T: Scalar>(params: &ScorerParams<T>, h_last: &[T]) -> Result<(Vec<T>, T, T), ScorerError> {
    let s = params.shape();
    if h_last.len() != s.embed_len() {
        return Err(ScorerError::ShapeMismatch(format!(
            "head input has {} entries, expected {}",
            h_last.len(),
            s.embed_len()
        )));
    }
    let head = params.head();
    let mut pre = vec![T::zero(); s.hidden];
    affine(h_last, head.w1, head.b1, &mut pre);
    let mut out = head.b2;
    for (z, w) in pre.iter().zip(head.w2) {
        out = out + relu(*z) * *w;
    }
    Ok((pre, out, relu(out)))
}

impl<T: Scalar> ScorerParams<T> {
    /// Full pipeline on an already-normalized feature vector.
    pub fn forward(&self, x: &[T]) -> Result<Trace<T>, ScorerError> {
        let mut hidden = vec![embed_features(self, x)?];
        let mut blocks = Vec::with_capacity(self.shape.blocks);
        for block in 0..self.shape.blocks {
            let (next, trace) = attention_block_forward(self, block, hidden.last().expect("nonempty"))?;
            hidden.push(next);
            blocks.push(trace);
        }
        let (head_pre, out_pre, score) = score_head(self, hidden.last().expect("nonempty"))?;
        if !out_pre.is_finite() || !head_pre.iter().all(|v| v.is_finite()) {
            return Err(ScorerError::NonFinite {
                block: self.shape.blocks,
                head: 0,
            });
        }
        Ok(Trace {
            input: x.to_vec(),
            hidden,
            blocks,
            head_pre,
            out_pre,
            score,
        })
    }

    pub fn score(&self, x: &[T]) -> Result<T, ScorerError> {
        Ok(self.forward(x)?.score)
    }

    /// Accumulates `d score / d params * dscore` into `grad`.
    pub fn backward(&self, trace: &Trace<T>, dscore: T, grad: &mut ScorerParams<T>) {
        let s = self.shape;
        let (n, width, dim) = (s.n_features, s.width(), s.head_dim);
        let zero = T::zero();

        let dout = if trace.out_pre > zero { dscore } else { zero };
        if dout == zero {
            return;
        }
        let head = self.head();
        let h_last = trace.hidden.last().expect("nonempty");
        let mut dpre = vec![zero; s.hidden];
        {
            let (gw1, gb1, gw2, gb2) = grad.head_mut();
            *gb2 = *gb2 + dout;
            for r in 0..s.hidden {
                let z = trace.head_pre[r];
                gw2[r] = gw2[r] + relu(z) * dout;
                if z > zero {
                    dpre[r] = head.w2[r] * dout;
                }
            }
            for (g, d) in gb1.iter_mut().zip(&dpre) {
                *g = *g + *d;
            }
            for (xi, row) in h_last.iter().zip(gw1.chunks_exact_mut(s.hidden)) {
                if *xi == zero {
                    continue;
                }
                for (g, d) in row.iter_mut().zip(&dpre) {
                    *g = *g + *xi * *d;
                }
            }
        }
        let mut dh: Vec<T> = head.w1.chunks_exact(s.hidden).map(|row| dot(row, &dpre)).collect();

        let scale = T::one() / T::lit(dim as f64).sqrt();
        for block in (0..s.blocks).rev() {
            let h_in = &trace.hidden[block];
            let mut dh_in = vec![zero; n * width];
            for head in 0..s.heads {
                let ht = &trace.blocks[block].heads[head];
                let [q, k, v] = [&ht.projections[0].out, &ht.projections[1].out, &ht.projections[2].out];
                let alpha = &ht.alpha;
                let mut dq = vec![zero; n * dim];
                let mut dk = vec![zero; n * dim];
                let mut dv = vec![zero; n * dim];
                let mut dalpha = vec![zero; n];
                for i in 0..n {
                    let d_o = &dh[i * width + head * dim..i * width + (head + 1) * dim];
                    let row = &alpha[i * n..(i + 1) * n];
                    let mut weighted = zero;
                    for j in 0..n {
                        dalpha[j] = dot(d_o, &v[j * dim..(j + 1) * dim]);
                        weighted = weighted + row[j] * dalpha[j];
                        for (g, d) in dv[j * dim..(j + 1) * dim].iter_mut().zip(d_o) {
                            *g = *g + row[j] * *d;
                        }
                    }
                    for j in 0..n {
                        let ds = row[j] * (dalpha[j] - weighted) * scale;
                        if ds == zero {
                            continue;
                        }
                        for c in 0..dim {
                            dq[i * dim + c] = dq[i * dim + c] + ds * k[j * dim + c];
                            dk[j * dim + c] = dk[j * dim + c] + ds * q[i * dim + c];
                        }
                    }
                }
                for (proj, dproj) in PROJECTIONS.iter().zip([&dq, &dk, &dv]) {
                    self.projection_backward(
                        block,
                        head,
                        *proj,
                        h_in,
                        &ht.projections[*proj as usize],
                        dproj,
                        grad,
                        &mut dh_in,
                    );
                }
            }
            dh = dh_in;
        }

        let base = s.embed_len();
        let g = grad.as_mut_slice();
        for i in 0..n {
            for c in 0..width {
                let d = dh[i * width + c];
                g[i * width + c] = g[i * width + c] + trace.input[i] * d;
                g[base + i * width + c] = g[base + i * width + c] + d;
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn projection_backward(
        &self,
        block: usize,
        head: usize,
        proj: Projection,
        h_in: &[T],
        pt: &ProjectionTrace<T>,
        dout: &[T],
        grad: &mut ScorerParams<T>,
        dh_in: &mut [T],
    ) {
        let s = self.shape;
        let (width, dim) = (s.width(), s.head_dim);
        let fcn = self.fcn(block, head, proj);
        let [w1r, b1r, w2r, b2r] = self.fcn_ranges(block, head, proj);
        let mut act = vec![T::zero(); width];
        let mut dact = vec![T::zero(); width];
        for i in 0..s.n_features {
            let pre = &pt.pre[i * width..(i + 1) * width];
            for (a, z) in act.iter_mut().zip(pre) {
                *a = relu(*z);
            }
            let d_o = &dout[i * dim..(i + 1) * dim];
            dact.iter_mut().for_each(|v| *v = T::zero());
            {
                let g = grad.as_mut_slice();
                let (lo, hi) = g.split_at_mut(b2r.start);
                affine_backward(
                    &act,
                    fcn.w2,
                    d_o,
                    &mut lo[w2r.clone()],
                    &mut hi[..b2r.len()],
                    Some(&mut dact),
                );
            }
            for (d, z) in dact.iter_mut().zip(pre) {
                if *z <= T::zero() {
                    *d = T::zero();
                }
            }
            let g = grad.as_mut_slice();
            let (lo, hi) = g.split_at_mut(b1r.start);
            affine_backward(
                &h_in[i * width..(i + 1) * width],
                fcn.w1,
                &dact,
                &mut lo[w1r.clone()],
                &mut hi[..width],
                Some(&mut dh_in[i * width..(i + 1) * width]),
            );
        }
    }
}
