//! Scratch reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive applied during a forward pass into a
//! topologically ordered arena. [`Tape::backward`] replays the records in
//! reverse, accumulating `∂loss/∂node` for each node, and
//! [`Tape::accumulate_param_grads`] copies leaf gradients back into the
//! owning [`ParamSet`]. The primitive set is exactly what the embedding /
//! LSTM / 1-D convolution architectures in this crate need; there is no
//! broadcasting beyond bias addition and no GPU path. All arithmetic is
//! `f64`: the finite-difference oracle and the |Δw/w| surprise ratio are
//! both precision-sensitive.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::rng::Rng;
use crate::Result;

/// Natural exponential. Thin wrappers over `libm` keep the crate `no_std`.
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

pub(crate) fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

/// Numerically stable logistic function.
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// In-place stable softmax of one row.
fn softmax_row(row: &mut [f64]) {
    let mut m = f64::NEG_INFINITY;
    for &v in row.iter() {
        if v > m {
            m = v;
        }
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = exp(*v - m);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// log-sum-exp of one row.
fn lse_row(row: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &v in row {
        if v > m {
            m = v;
        }
    }
    let mut sum = 0.0;
    for &v in row {
        sum += exp(v - m);
    }
    m + ln(sum)
}

fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

// ---------------------------------------------------------------------------
// Tensors and parameters
// ---------------------------------------------------------------------------

/// Flat row-major n-dimensional array with an optional gradient slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) || numel != values.len() {
            return Err(CoreError::ShapeMismatch {
                op: "tensor-new",
                lhs: shape,
                rhs: vec![values.len()],
            });
        }
        if !all_finite(&values) {
            return Err(CoreError::NonFinite {
                context: "tensor construction".to_owned(),
            });
        }
        Ok(Tensor {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; numel],
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Tensor::new(vec![1], vec![v])
    }

    /// Uniform init in [−1/√fan_in, +1/√fan_in].
    pub fn uniform_init(shape: Vec<usize>, fan_in: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / sqrt(fan_in.max(1) as f64);
        let numel: usize = shape.iter().product();
        let values = (0..numel).map(|_| rng.uniform_in(-bound, bound)).collect();
        Tensor {
            shape,
            values,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f64]> {
        self.grad.as_deref_mut()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad = Some(vec![0.0; self.values.len()]);
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub(crate) fn add_to_grad(&mut self, delta: &[f64]) {
        let grad = self.grad.get_or_insert_with(|| vec![0.0; self.values.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }
}

/// A named tensor owned by a model.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Ordered collection of uniquely named parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
    index: BTreeMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor, trainable: bool) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(CoreError::InvalidArgument {
                context: format!("duplicate parameter name {name:?}"),
            });
        }
        let slot = self.params.len();
        self.index.insert(name.to_owned(), slot);
        self.params.push(Parameter {
            name: name.to_owned(),
            tensor,
            trainable,
        });
        Ok(slot)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, slot: usize) -> &Parameter {
        &self.params[slot]
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut Parameter {
        &mut self.params[slot]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.slot(name).map(|s| &self.params[s])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Total scalar count across trainable parameters.
    pub fn trainable_scalars(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.tensor.len())
            .sum()
    }

    /// Give every trainable parameter a zeroed grad slot.
    pub fn zero_grads(&mut self) {
        for p in self.params.iter_mut() {
            if p.trainable {
                p.tensor.zero_grad();
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<usize> },
    Add(TensorId, TensorId),
    AddBias(TensorId, TensorId),
    AddN(Vec<TensorId>),
    Mul(TensorId, TensorId),
    Affine { a: TensorId, k: f64 },
    MatMul(TensorId, TensorId),
    Embedding { table: TensorId, ids: Vec<usize> },
    Sigmoid(TensorId),
    Tanh(TensorId),
    Ln(TensorId),
    Softmax(TensorId),
    Conv1d { input: TensorId, weight: TensorId, bias: TensorId },
    MaxOverTime { input: TensorId, argmax: Vec<usize> },
    Dropout { a: TensorId, mask: Vec<f64> },
    ConcatCols(Vec<TensorId>),
    ConcatRows(Vec<TensorId>),
    Row { a: TensorId, row: usize },
    SliceCols { a: TensorId, start: usize, len: usize },
    Pick { a: TensorId, idx: usize },
    Sum(TensorId),
    Mean(TensorId),
    /// `Σ_t weights[t] · (−ln softmax(logits[t])[targets[t]])`; `probs`
    /// caches the row softmax for the backward rule.
    SeqNll {
        logits: TensorId,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Vec<f64>,
    },
    /// Dense cross-entropy against full target rows, averaged over rows.
    DistCrossEntropy {
        logits: TensorId,
        target: Vec<f64>,
        probs: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
}

/// Single-writer record of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: BTreeMap<usize, TensorId>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, op: Op) -> TensorId {
        let grad = vec![0.0; values.len()];
        self.nodes.push(Node {
            shape,
            values,
            grad,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn values(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].values
    }

    pub fn grad(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    /// Value of a scalar node.
    pub fn scalar_value(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].values.len(), 1);
        self.nodes[id.0].values[0]
    }

    // -- leaves -------------------------------------------------------------

    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<TensorId> {
        let t = Tensor::new(shape, values)?;
        Ok(self.push(t.shape.clone(), t.values, Op::Leaf { param: None }))
    }

    pub fn scalar(&mut self, v: f64) -> Result<TensorId> {
        self.constant(vec![1], vec![v])
    }

    /// Bind a parameter onto the tape. Binding the same slot twice returns
    /// the original node so gradients are not double-counted.
    pub fn param(&mut self, set: &ParamSet, slot: usize) -> Result<TensorId> {
        if let Some(&id) = self.bound.get(&slot) {
            return Ok(id);
        }
        let p = set.get(slot);
        if !all_finite(p.tensor.values()) {
            return Err(CoreError::NonFinite {
                context: format!("parameter {:?}", p.name),
            });
        }
        let id = self.push(
            p.tensor.shape().to_owned(),
            p.tensor.values().to_owned(),
            Op::Leaf { param: Some(slot) },
        );
        self.bound.insert(slot, id);
        Ok(id)
    }

    // -- elementwise --------------------------------------------------------

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err("add", a, b));
        }
        let values: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(self.nodes[a.0].shape.clone(), values, Op::Add(a, b)))
    }

    /// `[m, n] + [n]` (or `[1, n]`) row broadcast.
    pub fn add_bias(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId> {
        let (m, n) = self.dims2(a, "add_bias")?;
        let blen = self.nodes[bias.0].values.len();
        if blen != n {
            return Err(self.shape_err("add_bias", a, bias));
        }
        let mut values = self.nodes[a.0].values.clone();
        for r in 0..m {
            for c in 0..n {
                values[r * n + c] += self.nodes[bias.0].values[c];
            }
        }
        Ok(self.push(self.nodes[a.0].shape.clone(), values, Op::AddBias(a, bias)))
    }

    /// Elementwise sum of ≥1 same-shape nodes.
    pub fn add_n(&mut self, ids: &[TensorId]) -> Result<TensorId> {
        let first = *ids.first().ok_or_else(|| CoreError::Empty {
            context: "add_n with no operands".to_owned(),
        })?;
        let mut values = self.nodes[first.0].values.clone();
        for &id in &ids[1..] {
            if self.shape(id) != self.shape(first) {
                return Err(self.shape_err("add_n", first, id));
            }
            for (v, x) in values.iter_mut().zip(&self.nodes[id.0].values) {
                *v += x;
            }
        }
        Ok(self.push(self.nodes[first.0].shape.clone(), values, Op::AddN(ids.to_owned())))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err("mul", a, b));
        }
        let values: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(self.nodes[a.0].shape.clone(), values, Op::Mul(a, b)))
    }

    /// Elementwise `k·x + c`.
    pub fn affine(&mut self, a: TensorId, k: f64, c: f64) -> Result<TensorId> {
        if !k.is_finite() || !c.is_finite() {
            return Err(CoreError::NonFinite {
                context: "affine coefficients".to_owned(),
            });
        }
        let values: Vec<f64> = self.nodes[a.0].values.iter().map(|x| k * x + c).collect();
        Ok(self.push(self.nodes[a.0].shape.clone(), values, Op::Affine { a, k }))
    }

    pub fn sigmoid(&mut self, a: TensorId) -> Result<TensorId> {
        let values: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| sigmoid(x)).collect();
        Ok(self.push(self.nodes[a.0].shape.clone(), values, Op::Sigmoid(a)))
    }

    pub fn tanh(&mut self, a: TensorId) -> Result<TensorId> {
        let values: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| tanh(x)).collect();
        Ok(self.push(self.nodes[a.0].shape.clone(), values, Op::Tanh(a)))
    }

    /// Natural log; rejects nonpositive inputs rather than producing −∞.
    pub fn ln(&mut self, a: TensorId) -> Result<TensorId> {
        if self.nodes[a.0].values.iter().any(|&x| x <= 0.0) {
            return Err(CoreError::NonFinite {
                context: "ln of nonpositive input".to_owned(),
            });
        }
        let values: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| ln(x)).collect();
        Ok(self.push(self.nodes[a.0].shape.clone(), values, Op::Ln(a)))
    }

    /// Row-wise stable softmax of a `[n]` or `[m, n]` node.
    pub fn softmax(&mut self, a: TensorId) -> Result<TensorId> {
        let (m, n) = self.dims2(a, "softmax")?;
        let mut values = self.nodes[a.0].values.clone();
        for r in 0..m {
            softmax_row(&mut values[r * n..(r + 1) * n]);
        }
        Ok(self.push(self.nodes[a.0].shape.clone(), values, Op::Softmax(a)))
    }

    // -- linear algebra -----------------------------------------------------

    /// `[m, k] · [k, n] → [m, n]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, ka) = self.dims2(a, "matmul")?;
        let (kb, n) = self.dims2(b, "matmul")?;
        if ka != kb {
            return Err(self.shape_err("matmul", a, b));
        }
        let av = &self.nodes[a.0].values;
        let bv = &self.nodes[b.0].values;
        let mut values = vec![0.0; m * n];
        for r in 0..m {
            for kk in 0..ka {
                let x = av[r * ka + kk];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[kk * n..(kk + 1) * n];
                let out = &mut values[r * n..(r + 1) * n];
                for c in 0..n {
                    out[c] += x * brow[c];
                }
            }
        }
        Ok(self.push(vec![m, n], values, Op::MatMul(a, b)))
    }

    /// Gather rows of a `[vocab, dim]` table → `[len(ids), dim]`.
    pub fn embedding(&mut self, table: TensorId, ids: &[usize]) -> Result<TensorId> {
        let (vocab, dim) = self.dims2(table, "embedding")?;
        if ids.is_empty() {
            return Err(CoreError::Empty {
                context: "embedding lookup with no ids".to_owned(),
            });
        }
        let mut values = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(CoreError::TokenOutOfRange {
                    id: id as u32,
                    vocab_size: vocab,
                });
            }
            values.extend_from_slice(&self.nodes[table.0].values[id * dim..(id + 1) * dim]);
        }
        Ok(self.push(
            vec![ids.len(), dim],
            values,
            Op::Embedding {
                table,
                ids: ids.to_owned(),
            },
        ))
    }

    /// Valid 1-D convolution: input `[L, C]`, weight `[K, C, F]`, bias `[F]`
    /// → `[L−K+1, F]`.
    pub fn conv1d(&mut self, input: TensorId, weight: TensorId, bias: TensorId) -> Result<TensorId> {
        let (len, channels) = self.dims2(input, "conv1d")?;
        let wshape = self.nodes[weight.0].shape.clone();
        if wshape.len() != 3 || wshape[1] != channels {
            return Err(self.shape_err("conv1d", input, weight));
        }
        let (k, filters) = (wshape[0], wshape[2]);
        if self.nodes[bias.0].values.len() != filters {
            return Err(self.shape_err("conv1d", weight, bias));
        }
        if k > len {
            return Err(CoreError::InvalidArgument {
                context: format!("conv1d kernel {k} longer than input {len}"),
            });
        }
        let out_len = len - k + 1;
        let iv = &self.nodes[input.0].values;
        let wv = &self.nodes[weight.0].values;
        let bv = &self.nodes[bias.0].values;
        let mut values = vec![0.0; out_len * filters];
        for j in 0..out_len {
            let out = &mut values[j * filters..(j + 1) * filters];
            out.copy_from_slice(bv);
            for kk in 0..k {
                for c in 0..channels {
                    let x = iv[(j + kk) * channels + c];
                    if x == 0.0 {
                        continue;
                    }
                    let wrow = &wv[(kk * channels + c) * filters..(kk * channels + c + 1) * filters];
                    for f in 0..filters {
                        out[f] += x * wrow[f];
                    }
                }
            }
        }
        Ok(self.push(vec![out_len, filters], values, Op::Conv1d { input, weight, bias }))
    }

    /// Max over the time axis of `[T, F]`, restricted to positions where
    /// `valid` is true → `[1, F]`. At least one position must be valid.
    pub fn max_over_time(&mut self, input: TensorId, valid: &[bool]) -> Result<TensorId> {
        let (t, f) = self.dims2(input, "max_over_time")?;
        if valid.len() != t {
            return Err(CoreError::InvalidArgument {
                context: format!("validity mask length {} vs {t} time steps", valid.len()),
            });
        }
        if !valid.iter().any(|&v| v) {
            return Err(CoreError::Empty {
                context: "max_over_time with no valid positions".to_owned(),
            });
        }
        let iv = &self.nodes[input.0].values;
        let mut values = vec![f64::NEG_INFINITY; f];
        let mut argmax = vec![0usize; f];
        for (ti, &ok) in valid.iter().enumerate() {
            if !ok {
                continue;
            }
            for fi in 0..f {
                let x = iv[ti * f + fi];
                if x > values[fi] {
                    values[fi] = x;
                    argmax[fi] = ti;
                }
            }
        }
        Ok(self.push(vec![1, f], values, Op::MaxOverTime { input, argmax }))
    }

    /// Inverted dropout. `rng: None` is eval mode and is the identity;
    /// in train mode surviving activations are scaled by `1/(1−rate)`.
    pub fn dropout(&mut self, a: TensorId, rate: f64, rng: Option<&mut Rng>) -> Result<TensorId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(CoreError::InvalidArgument {
                context: format!("dropout rate {rate} outside [0, 1)"),
            });
        }
        let rng = match rng {
            None => return Ok(a),
            Some(r) => r,
        };
        if rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.nodes[a.0].values.len())
            .map(|_| if rng.uniform() < rate { 0.0 } else { 1.0 / keep })
            .collect();
        let values: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        Ok(self.push(self.nodes[a.0].shape.clone(), values, Op::Dropout { a, mask }))
    }

    // -- shape plumbing -----------------------------------------------------

    /// Concatenate `[1, n_i]` nodes along columns → `[1, Σ n_i]`.
    pub fn concat_cols(&mut self, ids: &[TensorId]) -> Result<TensorId> {
        if ids.is_empty() {
            return Err(CoreError::Empty {
                context: "concat_cols with no operands".to_owned(),
            });
        }
        let mut values = Vec::new();
        for &id in ids {
            let (rows, _) = self.dims2(id, "concat_cols")?;
            if rows != 1 {
                return Err(CoreError::InvalidArgument {
                    context: format!("concat_cols expects [1, n] pieces, got {:?}", self.shape(id)),
                });
            }
            values.extend_from_slice(&self.nodes[id.0].values);
        }
        let n = values.len();
        Ok(self.push(vec![1, n], values, Op::ConcatCols(ids.to_owned())))
    }

    /// Stack `[1, n]` nodes into `[m, n]`.
    pub fn concat_rows(&mut self, ids: &[TensorId]) -> Result<TensorId> {
        let first = *ids.first().ok_or_else(|| CoreError::Empty {
            context: "concat_rows with no operands".to_owned(),
        })?;
        let (_, n) = self.dims2(first, "concat_rows")?;
        let mut values = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            let (rows, cols) = self.dims2(id, "concat_rows")?;
            if rows != 1 || cols != n {
                return Err(self.shape_err("concat_rows", first, id));
            }
            values.extend_from_slice(&self.nodes[id.0].values);
        }
        Ok(self.push(vec![ids.len(), n], values, Op::ConcatRows(ids.to_owned())))
    }

    /// Select row `r` of `[m, n]` → `[1, n]`.
    pub fn row(&mut self, a: TensorId, r: usize) -> Result<TensorId> {
        let (m, n) = self.dims2(a, "row")?;
        if r >= m {
            return Err(CoreError::InvalidArgument {
                context: format!("row {r} out of range for {m} rows"),
            });
        }
        let values = self.nodes[a.0].values[r * n..(r + 1) * n].to_owned();
        Ok(self.push(vec![1, n], values, Op::Row { a, row: r }))
    }

    /// Columns `[start, start+len)` of `[m, n]` → `[m, len]`.
    pub fn slice_cols(&mut self, a: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let (m, n) = self.dims2(a, "slice_cols")?;
        if start + len > n || len == 0 {
            return Err(CoreError::InvalidArgument {
                context: format!("slice_cols [{start}, {}) out of range for {n} columns", start + len),
            });
        }
        let mut values = Vec::with_capacity(m * len);
        for r in 0..m {
            values.extend_from_slice(&self.nodes[a.0].values[r * n + start..r * n + start + len]);
        }
        Ok(self.push(vec![m, len], values, Op::SliceCols { a, start, len }))
    }

    /// Single element at flat index → scalar.
    pub fn pick(&mut self, a: TensorId, idx: usize) -> Result<TensorId> {
        if idx >= self.nodes[a.0].values.len() {
            return Err(CoreError::InvalidArgument {
                context: format!("pick index {idx} out of range"),
            });
        }
        let v = self.nodes[a.0].values[idx];
        Ok(self.push(vec![1], vec![v], Op::Pick { a, idx }))
    }

    // -- reductions and losses ----------------------------------------------

    pub fn sum(&mut self, a: TensorId) -> Result<TensorId> {
        let v: f64 = self.nodes[a.0].values.iter().sum();
        Ok(self.push(vec![1], vec![v], Op::Sum(a)))
    }

    pub fn mean(&mut self, a: TensorId) -> Result<TensorId> {
        let n = self.nodes[a.0].values.len();
        let v: f64 = self.nodes[a.0].values.iter().sum::<f64>() / n as f64;
        Ok(self.push(vec![1], vec![v], Op::Mean(a)))
    }

    /// Weighted sparse cross-entropy over logit rows:
    /// `Σ_t weights[t] · (−ln softmax(logits[t])[targets[t]])`.
    ///
    /// With `weights = 1/T` this is mean per-token NLL; with
    /// `weights = −(Q_t − b)` its gradient is the REINFORCE ascent
    /// direction negated.
    pub fn seq_nll(&mut self, logits: TensorId, targets: &[usize], weights: &[f64]) -> Result<TensorId> {
        let (t, n) = self.dims2(logits, "seq_nll")?;
        if targets.len() != t || weights.len() != t {
            return Err(CoreError::InvalidArgument {
                context: format!(
                    "seq_nll: {t} logit rows vs {} targets / {} weights",
                    targets.len(),
                    weights.len()
                ),
            });
        }
        let lv = &self.nodes[logits.0].values;
        let mut probs = lv.clone();
        let mut loss = 0.0;
        for r in 0..t {
            let tgt = targets[r];
            if tgt >= n {
                return Err(CoreError::TokenOutOfRange {
                    id: tgt as u32,
                    vocab_size: n,
                });
            }
            let row = &lv[r * n..(r + 1) * n];
            let lse = lse_row(row);
            loss += weights[r] * (lse - row[tgt]);
            softmax_row(&mut probs[r * n..(r + 1) * n]);
        }
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::SeqNll {
                logits,
                targets: targets.to_owned(),
                weights: weights.to_owned(),
                probs,
            },
        ))
    }

    /// Mean per-token NLL of `targets` under `logits`.
    pub fn sparse_cross_entropy(&mut self, logits: TensorId, targets: &[usize]) -> Result<TensorId> {
        let (t, _) = self.dims2(logits, "sparse_cross_entropy")?;
        let w = vec![1.0 / t as f64; t];
        self.seq_nll(logits, targets, &w)
    }

    /// Dense cross-entropy `−(1/m) Σ_r Σ_c target[r,c] · ln softmax(logits[r])[c]`.
    pub fn cross_entropy(&mut self, logits: TensorId, target: &[f64]) -> Result<TensorId> {
        let (m, n) = self.dims2(logits, "cross_entropy")?;
        if target.len() != m * n {
            return Err(CoreError::InvalidArgument {
                context: format!("cross_entropy target length {} vs logits {m}x{n}", target.len()),
            });
        }
        let lv = &self.nodes[logits.0].values;
        let mut probs = lv.clone();
        let mut loss = 0.0;
        for r in 0..m {
            let row = &lv[r * n..(r + 1) * n];
            let lse = lse_row(row);
            for c in 0..n {
                loss -= target[r * n + c] * (row[c] - lse);
            }
            softmax_row(&mut probs[r * n..(r + 1) * n]);
        }
        loss /= m as f64;
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::DistCrossEntropy {
                logits,
                target: target.to_owned(),
                probs,
            },
        ))
    }

    // -- backward -----------------------------------------------------------

    /// Reverse sweep from a scalar loss. Consumes the tape: a second call
    /// is rejected. All node gradients are checked finite afterwards.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.consumed {
            return Err(CoreError::TapeConsumed);
        }
        if self.nodes[loss.0].values.len() != 1 {
            return Err(CoreError::LossNotScalar {
                shape: self.nodes[loss.0].shape.clone(),
            });
        }
        self.consumed = true;
        self.nodes[loss.0].grad[0] = 1.0;
        for i in (0..=loss.0).rev() {
            let node = self.nodes[i].clone();
            if node.grad.iter().all(|&g| g == 0.0) {
                continue;
            }
            self.propagate(&node);
        }
        for node in &self.nodes {
            if !all_finite(&node.grad) {
                return Err(CoreError::NonFinite {
                    context: "gradient after backward".to_owned(),
                });
            }
        }
        Ok(())
    }

    fn propagate(&mut self, node: &Node) {
        let g = &node.grad;
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                self.accumulate(*a, g);
                self.accumulate(*b, g);
            }
            Op::AddBias(a, bias) => {
                self.accumulate(*a, g);
                let n = self.nodes[bias.0].values.len();
                let m = g.len() / n;
                let bg = &mut self.nodes[bias.0].grad;
                for r in 0..m {
                    for c in 0..n {
                        bg[c] += g[r * n + c];
                    }
                }
            }
            Op::AddN(ids) => {
                for &id in ids {
                    self.accumulate(id, g);
                }
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[b.0].values)
                    .map(|(gi, y)| gi * y)
                    .collect();
                let db: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[a.0].values)
                    .map(|(gi, x)| gi * x)
                    .collect();
                self.accumulate(*a, &da);
                self.accumulate(*b, &db);
            }
            Op::Affine { a, k } => {
                let da: Vec<f64> = g.iter().map(|gi| gi * k).collect();
                self.accumulate(*a, &da);
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                let av = self.nodes[a.0].values.clone();
                let bv = self.nodes[b.0].values.clone();
                // dA = dC · Bᵀ
                {
                    let ag = &mut self.nodes[a.0].grad;
                    for r in 0..m {
                        for kk in 0..k {
                            let mut acc = 0.0;
                            for c in 0..n {
                                acc += g[r * n + c] * bv[kk * n + c];
                            }
                            ag[r * k + kk] += acc;
                        }
                    }
                }
                // dB = Aᵀ · dC
                {
                    let bg = &mut self.nodes[b.0].grad;
                    for kk in 0..k {
                        for r in 0..m {
                            let x = av[r * k + kk];
                            if x == 0.0 {
                                continue;
                            }
                            for c in 0..n {
                                bg[kk * n + c] += x * g[r * n + c];
                            }
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let dim = self.nodes[table.0].shape[1];
                let tg = &mut self.nodes[table.0].grad;
                for (r, &id) in ids.iter().enumerate() {
                    for d in 0..dim {
                        tg[id * dim + d] += g[r * dim + d];
                    }
                }
            }
            Op::Sigmoid(a) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(&node.values)
                    .map(|(gi, y)| gi * y * (1.0 - y))
                    .collect();
                self.accumulate(*a, &da);
            }
            Op::Tanh(a) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(&node.values)
                    .map(|(gi, y)| gi * (1.0 - y * y))
                    .collect();
                self.accumulate(*a, &da);
            }
            Op::Ln(a) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[a.0].values)
                    .map(|(gi, x)| gi / x)
                    .collect();
                self.accumulate(*a, &da);
            }
            Op::Softmax(a) => {
                let n = *node.shape.last().unwrap();
                let m = node.values.len() / n;
                let mut da = vec![0.0; node.values.len()];
                for r in 0..m {
                    let y = &node.values[r * n..(r + 1) * n];
                    let gy = &g[r * n..(r + 1) * n];
                    let dot: f64 = y.iter().zip(gy).map(|(yi, gi)| yi * gi).sum();
                    for c in 0..n {
                        da[r * n + c] = y[c] * (gy[c] - dot);
                    }
                }
                self.accumulate(*a, &da);
            }
            Op::Conv1d { input, weight, bias } => {
                let channels = self.nodes[input.0].shape[1];
                let k = self.nodes[weight.0].shape[0];
                let filters = self.nodes[weight.0].shape[2];
                let out_len = node.shape[0];
                let iv = self.nodes[input.0].values.clone();
                let wv = self.nodes[weight.0].values.clone();
                {
                    let ig = &mut self.nodes[input.0].grad;
                    for j in 0..out_len {
                        let gout = &g[j * filters..(j + 1) * filters];
                        for kk in 0..k {
                            for c in 0..channels {
                                let wrow =
                                    &wv[(kk * channels + c) * filters..(kk * channels + c + 1) * filters];
                                let mut acc = 0.0;
                                for f in 0..filters {
                                    acc += gout[f] * wrow[f];
                                }
                                ig[(j + kk) * channels + c] += acc;
                            }
                        }
                    }
                }
                {
                    let wg = &mut self.nodes[weight.0].grad;
                    for j in 0..out_len {
                        let gout = &g[j * filters..(j + 1) * filters];
                        for kk in 0..k {
                            for c in 0..channels {
                                let x = iv[(j + kk) * channels + c];
                                if x == 0.0 {
                                    continue;
                                }
                                let wrow = &mut wg
                                    [(kk * channels + c) * filters..(kk * channels + c + 1) * filters];
                                for f in 0..filters {
                                    wrow[f] += x * gout[f];
                                }
                            }
                        }
                    }
                }
                {
                    let bg = &mut self.nodes[bias.0].grad;
                    for j in 0..out_len {
                        for f in 0..filters {
                            bg[f] += g[j * filters + f];
                        }
                    }
                }
            }
            Op::MaxOverTime { input, argmax } => {
                let f = node.values.len();
                let ig = &mut self.nodes[input.0].grad;
                for fi in 0..f {
                    ig[argmax[fi] * f + fi] += g[fi];
                }
            }
            Op::Dropout { a, mask } => {
                let da: Vec<f64> = g.iter().zip(mask).map(|(gi, m)| gi * m).collect();
                self.accumulate(*a, &da);
            }
            Op::ConcatCols(ids) | Op::ConcatRows(ids) => {
                let mut offset = 0;
                for &id in ids {
                    let len = self.nodes[id.0].values.len();
                    let slice = g[offset..offset + len].to_owned();
                    self.accumulate(id, &slice);
                    offset += len;
                }
            }
            Op::Row { a, row } => {
                let n = node.values.len();
                let ag = &mut self.nodes[a.0].grad;
                for c in 0..n {
                    ag[row * n + c] += g[c];
                }
            }
            Op::SliceCols { a, start, len } => {
                let n = self.nodes[a.0].shape[1];
                let m = node.shape[0];
                let ag = &mut self.nodes[a.0].grad;
                for r in 0..m {
                    for c in 0..*len {
                        ag[r * n + start + c] += g[r * len + c];
                    }
                }
            }
            Op::Pick { a, idx } => {
                self.nodes[a.0].grad[*idx] += g[0];
            }
            Op::Sum(a) => {
                let da = vec![g[0]; self.nodes[a.0].values.len()];
                self.accumulate(*a, &da);
            }
            Op::Mean(a) => {
                let n = self.nodes[a.0].values.len();
                let da = vec![g[0] / n as f64; n];
                self.accumulate(*a, &da);
            }
            Op::SeqNll {
                logits,
                targets,
                weights,
                probs,
            } => {
                let n = self.nodes[logits.0].shape[1];
                let lg = &mut self.nodes[logits.0].grad;
                for (r, (&tgt, &w)) in targets.iter().zip(weights).enumerate() {
                    for c in 0..n {
                        let onehot = if c == tgt { 1.0 } else { 0.0 };
                        lg[r * n + c] += g[0] * w * (probs[r * n + c] - onehot);
                    }
                }
            }
            Op::DistCrossEntropy { logits, target, probs } => {
                let (m, n) = (self.nodes[logits.0].shape[0], self.nodes[logits.0].shape[1]);
                let lg = &mut self.nodes[logits.0].grad;
                for r in 0..m {
                    let tsum: f64 = target[r * n..(r + 1) * n].iter().sum();
                    for c in 0..n {
                        lg[r * n + c] +=
                            g[0] / m as f64 * (tsum * probs[r * n + c] - target[r * n + c]);
                    }
                }
            }
        }
    }

    fn accumulate(&mut self, id: TensorId, delta: &[f64]) {
        for (g, d) in self.nodes[id.0].grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Copy leaf gradients back into their parameters (accumulating).
    /// Trainable parameters not bound on this tape get a zero grad slot.
    pub fn accumulate_param_grads(&self, set: &mut ParamSet) {
        for p in set.iter_mut() {
            if p.trainable && p.tensor.grad().is_none() {
                p.tensor.zero_grad();
            }
        }
        for node in &self.nodes {
            if let Op::Leaf { param: Some(slot) } = node.op {
                set.get_mut(slot).tensor.add_to_grad(&node.grad);
            }
        }
    }

    // -- helpers ------------------------------------------------------------

    /// Interpret a node as 2-D: `[n]` counts as one row.
    fn dims2(&self, id: TensorId, op: &'static str) -> Result<(usize, usize)> {
        match *self.nodes[id.0].shape.as_slice() {
            [n] => Ok((1, n)),
            [m, n] => Ok((m, n)),
            _ => Err(CoreError::ShapeMismatch {
                op,
                lhs: self.nodes[id.0].shape.clone(),
                rhs: vec![],
            }),
        }
    }

    fn shape_err(&self, op: &'static str, a: TensorId, b: TensorId) -> CoreError {
        CoreError::ShapeMismatch {
            op,
            lhs: self.nodes[a.0].shape.clone(),
            rhs: self.nodes[b.0].shape.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// Finite-difference verification
// ---------------------------------------------------------------------------

/// Hard cap on exhaustively perturbable weights.
pub const FD_SCALAR_LIMIT: usize = 20_000;

/// Whether an evaluation should also populate parameter gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    ValueOnly,
    WithGrad,
}

/// Per-tensor outcome of a finite-difference sweep.
#[derive(Debug, Clone)]
pub struct FdParamReport {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct FdReport {
    pub per_param: Vec<FdParamReport>,
    pub tolerance: f64,
}

impl FdReport {
    pub fn pass(&self) -> bool {
        self.per_param.iter().all(|p| p.max_rel_err <= self.tolerance)
    }
}

/// Compare analytic gradients against central finite differences.
///
/// `eval` must return the loss; under [`GradMode::WithGrad`] it must also
/// leave `∂loss/∂w` in each trainable parameter's grad slot (zeroing
/// first). Each scalar is perturbed by ±`step` in turn. Relative error is
/// `|g − fd| / max(|g|, |fd|, 1)`. A model with no trainable scalars
/// passes vacuously.
pub fn finite_diff_check<F>(
    params: &mut ParamSet,
    mut eval: F,
    tolerance: f64,
    step: f64,
) -> Result<FdReport>
where
    F: FnMut(&mut ParamSet, GradMode) -> Result<f64>,
{
    let scalars = params.trainable_scalars();
    if scalars > FD_SCALAR_LIMIT {
        return Err(CoreError::ModelTooLarge {
            scalars,
            limit: FD_SCALAR_LIMIT,
        });
    }
    params.zero_grads();
    eval(params, GradMode::WithGrad)?;
    let analytic: Vec<(String, Vec<f64>)> = params
        .iter()
        .filter(|p| p.trainable)
        .map(|p| {
            (
                p.name.clone(),
                p.tensor.grad().map(|g| g.to_owned()).unwrap_or_default(),
            )
        })
        .collect();

    let mut per_param = Vec::new();
    let slots: Vec<usize> = (0..params.len()).filter(|&s| params.get(s).trainable).collect();
    for (slot, (name, grad)) in slots.into_iter().zip(analytic) {
        let mut max_rel = 0.0f64;
        for i in 0..params.get(slot).tensor.len() {
            let orig = params.get(slot).tensor.values()[i];
            params.get_mut(slot).tensor.values_mut()[i] = orig + step;
            let hi = eval(params, GradMode::ValueOnly)?;
            params.get_mut(slot).tensor.values_mut()[i] = orig - step;
            let lo = eval(params, GradMode::ValueOnly)?;
            params.get_mut(slot).tensor.values_mut()[i] = orig;
            let fd = (hi - lo) / (2.0 * step);
            let g = grad.get(i).copied().unwrap_or(0.0);
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1.0);
            if rel > max_rel {
                max_rel = rel;
            }
        }
        per_param.push(FdParamReport {
            name,
            max_rel_err: max_rel,
        });
    }
    Ok(FdReport {
        per_param,
        tolerance,
    })
}
