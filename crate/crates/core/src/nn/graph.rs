//! Append-only tape of tensor operations with reverse-mode differentiation.
//!
//! Every operation pushes one record holding its inputs, its output value and
//! whatever it needs for the backward rule. Inputs always precede their
//! consumers, so `backward` is a single reverse sweep over the tape.

use std::collections::HashMap;

use super::{Gradients, NnError, ParamStore, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise non-linearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pointwise {
    Relu,
    Sigmoid,
    Tanh,
}

impl std::str::FromStr for Pointwise {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Pointwise::Relu),
            "sigmoid" => Ok(Pointwise::Sigmoid),
            "tanh" => Ok(Pointwise::Tanh),
            other => Err(NnError::Usage(format!("unknown pointwise kind `{other}`"))),
        }
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(usize),
    Affine { x: usize, w: usize, b: usize },
    Conv { x: usize, k: usize, b: usize },
    Unary { x: usize, kind: Pointwise },
    Exp(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    ScaleBy { x: usize, s: usize },
    Scale { x: usize, c: f64 },
    Concat(Vec<usize>),
    Reshape(usize),
    LogSoftmax(usize),
    Pick { x: usize, index: usize },
    Sum(usize),
    SoftmaxXent { logits: usize, label: usize, probs: Tensor },
}

#[derive(Debug)]
enum Value {
    Owned(Tensor),
    Param(usize),
}

#[derive(Debug)]
struct Record {
    op: Op,
    value: Value,
}

/// A dynamically built computation graph bound to a read-only [`ParamStore`].
pub struct Graph<'s> {
    store: &'s ParamStore,
    records: Vec<Record>,
    param_nodes: HashMap<usize, NodeId>,
    backward_done: bool,
    activation_signature: u64,
    #[cfg(test)]
    pub(crate) corrupt_affine_weight_grad: bool,
}

const FNV_PRIME: u64 = 0x100_0000_01b3;

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            records: Vec::new(),
            param_nodes: HashMap::new(),
            backward_done: false,
            activation_signature: 0xcbf2_9ce4_8422_2325,
            #[cfg(test)]
            corrupt_affine_weight_grad: false,
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Hash of the on/off pattern of every ReLU evaluated so far.
    pub fn activation_signature(&self) -> u64 {
        self.activation_signature
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        match &self.records[id.0].value {
            Value::Owned(t) => t,
            Value::Param(i) => self.store.value(*i),
        }
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id).data()[0]
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.records.push(Record {
            op,
            value: Value::Owned(value),
        });
        NodeId(self.records.len() - 1)
    }

    fn val(&self, i: usize) -> &Tensor {
        self.value(NodeId(i))
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value)
    }

    /// Node for a stored parameter; repeated lookups share one node.
    pub fn param(&mut self, name: &str) -> Result<NodeId, NnError> {
        let index = self
            .store
            .index_of(name)
            .ok_or_else(|| NnError::MissingParam(name.to_string()))?;
        Ok(self.param_by_index(index))
    }

    pub fn param_by_index(&mut self, index: usize) -> NodeId {
        if let Some(&id) = self.param_nodes.get(&index) {
            return id;
        }
        self.records.push(Record {
            op: Op::Param(index),
            value: Value::Param(index),
        });
        let id = NodeId(self.records.len() - 1);
        self.param_nodes.insert(index, id);
        id
    }

    /// `x·W + b` with parameters `{name}.W` of shape `[I, O]` and `{name}.b` of shape `[O]`.
    ///
    /// `x` is `[B, I]`, or `[I]` for a single row.
    pub fn linear(&mut self, x: NodeId, name: &str) -> Result<NodeId, NnError> {
        let w = self.param(&format!("{name}.W"))?;
        let b = self.param(&format!("{name}.b"))?;
        self.affine(x, w, b)
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (rows, inputs, vector_in) = match xv.shape() {
            [i] => (1, *i, true),
            [r, i] => (*r, *i, false),
            s => return Err(NnError::Shape(format!("linear input must be rank 1 or 2, got {s:?}"))),
        };
        let [wi, outputs] = wv.shape() else {
            return Err(NnError::Shape(format!("linear weight must be rank 2, got {:?}", wv.shape())));
        };
        if *wi != inputs {
            return Err(NnError::Shape(format!(
                "linear input {:?} does not match weight {:?}",
                xv.shape(),
                wv.shape()
            )));
        }
        if bv.shape() != [*outputs] {
            return Err(NnError::Shape(format!(
                "linear bias {:?} does not match weight {:?}",
                bv.shape(),
                wv.shape()
            )));
        }
        let outputs = *outputs;
        let mut out = Vec::with_capacity(rows * outputs);
        for _ in 0..rows {
            out.extend_from_slice(bv.data());
        }
        gemm(
            rows,
            inputs,
            outputs,
            xv.data(),
            false,
            wv.data(),
            false,
            &mut out,
        );
        let shape = if vector_in { vec![outputs] } else { vec![rows, outputs] };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(Op::Affine { x: x.0, w: w.0, b: b.0 }, value))
    }

    /// 3×3 convolution, stride 1, zero padding 1.
    pub fn conv3x3(&mut self, x: NodeId, name: &str) -> Result<NodeId, NnError> {
        let k = self.param(&format!("{name}.K"))?;
        let ks = self.value(k).shape();
        if ks.len() != 4 || ks[2] != 3 || ks[3] != 3 {
            return Err(NnError::Shape(format!("conv3x3 `{name}` kernel has shape {ks:?}")));
        }
        self.conv_named(x, name)
    }

    /// Square-kernel convolution with parameters `{name}.K` `[Co, Ci, k, k]` and
    /// `{name}.b` `[Co]`; odd `k`, stride 1, zero padding `k / 2`.
    pub fn conv_named(&mut self, x: NodeId, name: &str) -> Result<NodeId, NnError> {
        let k = self.param(&format!("{name}.K"))?;
        let b = self.param(&format!("{name}.b"))?;
        self.conv(x, k, b)
    }

    pub fn conv(&mut self, x: NodeId, k: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (xv, kv, bv) = (self.value(x), self.value(k), self.value(b));
        let (batch, ci, h, w, batched) = match xv.shape() {
            [c, h, w] => (1, *c, *h, *w, false),
            [n, c, h, w] => (*n, *c, *h, *w, true),
            s => return Err(NnError::Shape(format!("conv input must be rank 3 or 4, got {s:?}"))),
        };
        let &[co, kci, kh, kw] = kv.shape() else {
            return Err(NnError::Shape(format!("conv kernel must be rank 4, got {:?}", kv.shape())));
        };
        if kci != ci {
            return Err(NnError::Shape(format!(
                "conv input has {ci} channels but kernel {:?} expects {kci}",
                kv.shape()
            )));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(NnError::Shape(format!("conv kernel must be square and odd, got {:?}", kv.shape())));
        }
        if bv.shape() != [co] {
            return Err(NnError::Shape(format!("conv bias {:?} for {co} output channels", bv.shape())));
        }
        let geom = ConvGeom { ci, h, w, k: kh };
        let hw = h * w;
        let mut out = vec![0.0; batch * co * hw];
        let mut cols = vec![0.0; geom.col_rows() * hw];
        for n in 0..batch {
            let xin = &xv.data()[n * ci * hw..(n + 1) * ci * hw];
            geom.im2col(xin, &mut cols);
            let y = &mut out[n * co * hw..(n + 1) * co * hw];
            for (c, row) in y.chunks_mut(hw).enumerate() {
                row.fill(bv.data()[c]);
            }
            gemm(co, geom.col_rows(), hw, kv.data(), false, &cols, false, y);
        }
        let shape = if batched { vec![batch, co, h, w] } else { vec![co, h, w] };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(Op::Conv { x: x.0, k: k.0, b: b.0 }, value))
    }

    pub fn pointwise(&mut self, x: NodeId, kind: Pointwise) -> NodeId {
        let xv = self.value(x);
        let data: Vec<f64> = match kind {
            Pointwise::Relu => xv.data().iter().map(|&v| v.max(0.0)).collect(),
            Pointwise::Sigmoid => xv.data().iter().map(|&v| sigmoid(v)).collect(),
            Pointwise::Tanh => xv.data().iter().map(|&v| v.tanh()).collect(),
        };
        let shape = xv.shape().to_vec();
        if kind == Pointwise::Relu {
            let mut sig = self.activation_signature;
            for chunk in data.chunks(64) {
                let mut bits = 0u64;
                for (i, v) in chunk.iter().enumerate() {
                    if *v > 0.0 {
                        bits |= 1 << i;
                    }
                }
                sig = (sig ^ bits).wrapping_mul(FNV_PRIME);
            }
            self.activation_signature = sig;
        }
        self.push(Op::Unary { x: x.0, kind }, Tensor::new(shape, data).expect("same shape"))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.pointwise(x, Pointwise::Relu)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.pointwise(x, Pointwise::Sigmoid)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.pointwise(x, Pointwise::Tanh)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let t = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|v| v.exp()).collect())
            .expect("same shape");
        self.push(Op::Exp(x.0), t)
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<(), NnError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NnError::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: NodeId, b: NodeId, op: Op, f: impl Fn(f64, f64) -> f64) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        self.push(op, t)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_with(a, b, Op::Add(a.0, b.0), |x, y| x + y))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_with(a, b, Op::Sub(a.0, b.0), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_with(a, b, Op::Mul(a.0, b.0), |x, y| x * y))
    }

    /// Multiplies every entry of `x` by the single-element node `s`.
    pub fn scale_by(&mut self, x: NodeId, s: NodeId) -> Result<NodeId, NnError> {
        if self.value(s).len() != 1 {
            return Err(NnError::Shape(format!(
                "scale_by needs a single-element scale, got {:?}",
                self.value(s).shape()
            )));
        }
        let c = self.scalar(s);
        let xv = self.value(x);
        let t = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|v| v * c).collect())
            .expect("same shape");
        Ok(self.push(Op::ScaleBy { x: x.0, s: s.0 }, t))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let xv = self.value(x);
        let t = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|v| v * c).collect())
            .expect("same shape");
        self.push(Op::Scale { x: x.0, c }, t)
    }

    /// Flattens and concatenates the inputs into one vector.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, NnError> {
        if parts.is_empty() {
            return Err(NnError::Usage("concat of nothing".into()));
        }
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let t = Tensor::vector(data);
        Ok(self.push(Op::Concat(parts.iter().map(|p| p.0).collect()), t))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, NnError> {
        let t = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(Op::Reshape(x.0), t))
    }

    /// Row-wise log-softmax over the last dimension.
    pub fn log_softmax(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let k = *xv.shape().last().expect("rank >= 1");
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(k) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let t = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(Op::LogSoftmax(x.0), t)
    }

    /// Single entry of `x` (flat index) as a one-element node.
    pub fn pick(&mut self, x: NodeId, index: usize) -> Result<NodeId, NnError> {
        let xv = self.value(x);
        if index >= xv.len() {
            return Err(NnError::Usage(format!(
                "index {index} out of range for tensor of {} entries",
                xv.len()
            )));
        }
        let v = xv.data()[index];
        Ok(self.push(Op::Pick { x: x.0, index }, Tensor::scalar(v)))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).sum();
        self.push(Op::Sum(x.0), Tensor::scalar(v))
    }

    /// Softmax cross-entropy against one label shared by every row.
    ///
    /// Returns the probabilities and a scalar node holding the summed
    /// negative log-likelihood of `label`.
    pub fn softmax_xent(&mut self, logits: NodeId, label: usize) -> Result<(Tensor, NodeId), NnError> {
        let lv = self.value(logits);
        let k = *lv.shape().last().expect("rank >= 1");
        if lv.rank() > 2 {
            return Err(NnError::Shape(format!("softmax_xent expects [B, K], got {:?}", lv.shape())));
        }
        if label >= k {
            return Err(NnError::Usage(format!("label {label} out of range for {k} classes")));
        }
        let mut probs = lv.data().to_vec();
        let mut loss = 0.0;
        for row in probs.chunks_mut(k) {
            let lse = log_sum_exp(row);
            loss += lse - row[label];
            row.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        let probs = Tensor::new(lv.shape().to_vec(), probs)?;
        let id = self.push(
            Op::SoftmaxXent {
                logits: logits.0,
                label,
                probs: probs.clone(),
            },
            Tensor::scalar(loss),
        );
        Ok((probs, id))
    }

    /// Reverse sweep from a scalar `loss`, returning per-parameter gradients.
    ///
    /// May be called once per graph.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients, NnError> {
        if self.backward_done {
            return Err(NnError::Usage("backward already ran on this graph".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(NnError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients {
            per_param: vec![None; self.store.len()],
        };

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let record = &self.records[i];
            match &record.op {
                Op::Constant => {}
                Op::Param(p) => {
                    let t = Tensor::new(self.store.value(*p).shape().to_vec(), dy)?;
                    match &mut out.per_param[*p] {
                        Some(acc) => acc.add_assign(&t),
                        slot => *slot = Some(t),
                    }
                }
                Op::Affine { x, w, b } => {
                    let (xv, wv) = (self.val(*x), self.val(*w));
                    let inputs = wv.shape()[0];
                    let outputs = wv.shape()[1];
                    let rows = xv.len() / inputs;
                    let mut dx = vec![0.0; rows * inputs];
                    gemm(rows, outputs, inputs, &dy, false, wv.data(), true, &mut dx);
                    let mut dw = vec![0.0; inputs * outputs];
                    gemm(inputs, rows, outputs, xv.data(), true, &dy, false, &mut dw);
                    #[cfg(test)]
                    if self.corrupt_affine_weight_grad {
                        dw.iter_mut().for_each(|v| *v *= 1.1);
                    }
                    let mut db = vec![0.0; outputs];
                    for row in dy.chunks(outputs) {
                        for (acc, v) in db.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                    accumulate(&mut grads, *b, db);
                }
                Op::Conv { x, k, b } => {
                    let (xv, kv) = (self.val(*x), self.val(*k));
                    let s = kv.shape();
                    let (co, ci, ks) = (s[0], s[1], s[2]);
                    let xs = xv.shape();
                    let (h, w) = (xs[xs.len() - 2], xs[xs.len() - 1]);
                    let hw = h * w;
                    let batch = xv.len() / (ci * hw);
                    let geom = ConvGeom { ci, h, w, k: ks };
                    let mut cols = vec![0.0; geom.col_rows() * hw];
                    let mut dcols = vec![0.0; geom.col_rows() * hw];
                    let mut dk = vec![0.0; kv.len()];
                    let mut db = vec![0.0; co];
                    let mut dx = vec![0.0; xv.len()];
                    for n in 0..batch {
                        let xin = &xv.data()[n * ci * hw..(n + 1) * ci * hw];
                        let dyn_ = &dy[n * co * hw..(n + 1) * co * hw];
                        geom.im2col(xin, &mut cols);
                        gemm(co, hw, geom.col_rows(), dyn_, false, &cols, true, &mut dk);
                        dcols.fill(0.0);
                        gemm(geom.col_rows(), co, hw, kv.data(), true, dyn_, false, &mut dcols);
                        geom.col2im(&dcols, &mut dx[n * ci * hw..(n + 1) * ci * hw]);
                        for (c, row) in dyn_.chunks(hw).enumerate() {
                            db[c] += row.iter().sum::<f64>();
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *k, dk);
                    accumulate(&mut grads, *b, db);
                }
                Op::Unary { x, kind } => {
                    let y = self.value(NodeId(i)).data();
                    let dx: Vec<f64> = match kind {
                        Pointwise::Relu => dy
                            .iter()
                            .zip(y)
                            .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                            .collect(),
                        Pointwise::Sigmoid => dy.iter().zip(y).map(|(g, &v)| g * v * (1.0 - v)).collect(),
                        Pointwise::Tanh => dy.iter().zip(y).map(|(g, &v)| g * (1.0 - v * v)).collect(),
                    };
                    accumulate(&mut grads, *x, dx);
                }
                Op::Exp(x) => {
                    let y = self.value(NodeId(i)).data();
                    let dx = dy.iter().zip(y).map(|(g, v)| g * v).collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, dy.clone());
                    accumulate(&mut grads, *b, dy);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, dy.iter().map(|v| -v).collect());
                    accumulate(&mut grads, *a, dy);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.val(*a).data(), self.val(*b).data());
                    let da = dy.iter().zip(bv).map(|(g, v)| g * v).collect();
                    let db = dy.iter().zip(av).map(|(g, v)| g * v).collect();
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::ScaleBy { x, s } => {
                    let c = self.val(*s).data()[0];
                    let xv = self.val(*x).data();
                    let ds = dy.iter().zip(xv).map(|(g, v)| g * v).sum::<f64>();
                    accumulate(&mut grads, *x, dy.iter().map(|g| g * c).collect());
                    accumulate(&mut grads, *s, vec![ds]);
                }
                Op::Scale { x, c } => {
                    accumulate(&mut grads, *x, dy.iter().map(|g| g * c).collect());
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.val(p).len();
                        accumulate(&mut grads, p, dy[offset..offset + n].to_vec());
                        offset += n;
                    }
                }
                Op::Reshape(x) => accumulate(&mut grads, *x, dy),
                Op::LogSoftmax(x) => {
                    let y = self.value(NodeId(i));
                    let k = *y.shape().last().expect("rank >= 1");
                    let mut dx = vec![0.0; dy.len()];
                    for ((dxr, dyr), yr) in dx.chunks_mut(k).zip(dy.chunks(k)).zip(y.data().chunks(k)) {
                        let total: f64 = dyr.iter().sum();
                        for j in 0..k {
                            dxr[j] = dyr[j] - yr[j].exp() * total;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Pick { x, index } => {
                    let mut dx = vec![0.0; self.val(*x).len()];
                    dx[*index] = dy[0];
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sum(x) => {
                    let n = self.val(*x).len();
                    accumulate(&mut grads, *x, vec![dy[0]; n]);
                }
                Op::SoftmaxXent { logits, label, probs } => {
                    let k = *probs.shape().last().expect("rank >= 1");
                    let mut dx = probs.data().to_vec();
                    for row in dx.chunks_mut(k) {
                        row[*label] -= 1.0;
                        row.iter_mut().for_each(|v| *v *= dy[0]);
                    }
                    accumulate(&mut grads, *logits, dx);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], index: usize, g: Vec<f64>) {
    match &mut grads[index] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b;
            }
        }
        slot => *slot = Some(g),
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `c += op(a)·op(b)` where `op(a)` is `m×k` and `op(b)` is `k×n`, all row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64]) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths cover the strided extents checked by callers.
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct ConvGeom {
    ci: usize,
    h: usize,
    w: usize,
    k: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.ci * self.k * self.k
    }

    /// Unrolls zero-padded `k×k` patches into a `[ci·k·k, h·w]` matrix.
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let (h, w, k) = (self.h as isize, self.w as isize, self.k);
        let pad = (k / 2) as isize;
        let hw = self.h * self.w;
        let mut row = 0;
        for c in 0..self.ci {
            let plane = &x[c * hw..(c + 1) * hw];
            for ky in 0..k as isize {
                for kx in 0..k as isize {
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    for y in 0..h {
                        let sy = y + ky - pad;
                        for xx in 0..w {
                            let sx = xx + kx - pad;
                            dst[(y * w + xx) as usize] = if sy >= 0 && sy < h && sx >= 0 && sx < w {
                                plane[(sy * w + sx) as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let (h, w, k) = (self.h as isize, self.w as isize, self.k);
        let pad = (k / 2) as isize;
        let hw = self.h * self.w;
        let mut row = 0;
        for c in 0..self.ci {
            let plane = &mut dx[c * hw..(c + 1) * hw];
            for ky in 0..k as isize {
                for kx in 0..k as isize {
                    let src = &cols[row * hw..(row + 1) * hw];
                    for y in 0..h {
                        let sy = y + ky - pad;
                        if sy < 0 || sy >= h {
                            continue;
                        }
                        for xx in 0..w {
                            let sx = xx + kx - pad;
                            if sx >= 0 && sx < w {
                                plane[(sy * w + sx) as usize] += src[(y * w + xx) as usize];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}
