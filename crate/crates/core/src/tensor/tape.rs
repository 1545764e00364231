//! The recording tape and every differentiable operation.

use rand::Rng;

use super::{gemm, Real, ShapeError, Tensor, View};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One attention problem inside packed query/key matrices: query rows
/// `q_off..q_off+q_len` attend to key rows `k_off..k_off+k_len`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub q_off: usize,
    pub q_len: usize,
    pub k_off: usize,
    pub k_len: usize,
}

impl Segment {
    /// Self-attention over rows `off..off+len`.
    pub fn square(off: usize, len: usize) -> Self {
        Self {
            q_off: off,
            q_len: len,
            k_off: off,
            k_len: len,
        }
    }
}

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Transpose(Var),
    Reshape(Var),
    SliceCols {
        a: Var,
        start: usize,
    },
    SliceRows {
        a: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather {
        table: Var,
        idx: Vec<usize>,
    },
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    Dropout {
        a: Var,
        mask: Vec<T>,
    },
    MaskedFill {
        a: Var,
        mask: Vec<bool>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<T>,
        probs: Vec<T>,
    },
    Sum(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segs: Vec<Segment>,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Append-only record of a computation. Nodes only reference earlier
/// nodes, so reverse insertion order is a valid backward order.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

const LN_EPS: f64 = 1e-5;

fn gelu_fwd<T: Real>(x: T) -> T {
    let half = T::c(0.5);
    half * x * (T::one() + (x * T::c(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let half = T::c(0.5);
    let cdf = half * (T::one() + (x * T::c(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-half * x * x).exp() * T::c(0.398_942_280_401_432_7);
    cdf + x * pdf
}

/// Row-wise softmax in place over `row.len()` entries.
fn softmax_row<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is wanted.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn rc(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a)·op(b)` where `op` transposes when the flag is set.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var, ShapeError> {
        let (ar, ac) = self.rc(a);
        let (br, bc) = self.rc(b);
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(ShapeError::new("matmul", self.shape(a), self.shape(b)));
        }
        let av = if ta {
            View::rm(0, ac).t()
        } else {
            View::rm(0, ac)
        };
        let bv = if tb {
            View::rm(0, bc).t()
        } else {
            View::rm(0, bc)
        };
        let mut out = Tensor::zeros(&[m, n]);
        gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            av,
            self.value(b).data(),
            bv,
            T::zero(),
            out.data_mut(),
            View::rm(0, n),
        );
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul { a, b, ta, tb }, ng))
    }

    fn zip(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>, ShapeError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(ShapeError::new(name, x.shape(), y.shape()));
        }
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        Tensor::from_vec(x.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let out = self.zip(a, b, "add", |p, q| p + q)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let out = self.zip(a, b, "mul", |p, q| p * q)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// Adds a bias vector to every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, ShapeError> {
        let c = self.value(a).cols();
        if self.value(bias).len() != c {
            return Err(ShapeError::new("add_row", self.shape(a), self.shape(bias)));
        }
        let mut out = self.value(a).clone();
        let bd = self.value(bias).data();
        for row in out.data_mut().chunks_exact_mut(c) {
            for (x, &b) in row.iter_mut().zip(bd) {
                *x += b;
            }
        }
        let ng = self.needs(&[a, bias]);
        Ok(self.push(out, Op::AddRow(a, bias), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::c(s);
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x *= s);
        let ng = self.needs(&[a]);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.rc(a);
        let x = self.value(a).data();
        let mut out = Tensor::zeros(&[c, r]);
        let o = out.data_mut();
        for i in 0..r {
            for j in 0..c {
                o[j * r + i] = x[i * c + j];
            }
        }
        let ng = self.needs(&[a]);
        self.push(out, Op::Transpose(a), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, ShapeError> {
        let out = self.value(a).clone().reshaped(shape)?;
        let ng = self.needs(&[a]);
        Ok(self.push(out, Op::Reshape(a), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, ShapeError> {
        let (r, c) = self.rc(a);
        if start + len > c {
            return Err(ShapeError::new("slice_cols", self.shape(a), &[start, len]));
        }
        let x = self.value(a).data();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&x[i * c + start..i * c + start + len]);
        }
        let out = Tensor::from_vec(&[r, len], data)?;
        let ng = self.needs(&[a]);
        Ok(self.push(out, Op::SliceCols { a, start }, ng))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, ShapeError> {
        let (r, c) = self.rc(a);
        if start + len > r {
            return Err(ShapeError::new("slice_rows", self.shape(a), &[start, len]));
        }
        let data = self.value(a).data()[start * c..(start + len) * c].to_vec();
        let out = Tensor::from_vec(&[len, c], data)?;
        let ng = self.needs(&[a]);
        Ok(self.push(out, Op::SliceRows { a, start }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, ShapeError> {
        let r = self.rc(parts[0]).0;
        if let Some(&p) = parts.iter().find(|&&p| self.rc(p).0 != r) {
            return Err(ShapeError::new(
                "concat_cols",
                self.shape(parts[0]),
                self.shape(p),
            ));
        }
        let total: usize = parts.iter().map(|&p| self.rc(p).1).sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::from_vec(&[r, total], data)?;
        let ng = self.needs(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, ShapeError> {
        let c = self.rc(parts[0]).1;
        if let Some(&p) = parts.iter().find(|&&p| self.rc(p).1 != c) {
            return Err(ShapeError::new(
                "concat_rows",
                self.shape(parts[0]),
                self.shape(p),
            ));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::from_vec(&[data.len() / c.max(1), c], data)?;
        let ng = self.needs(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Row lookup: output row `i` is `table[idx[i]]`.
    pub fn gather(&mut self, table: Var, idx: &[usize]) -> Result<Var, ShapeError> {
        let (r, c) = self.rc(table);
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(ShapeError::new("gather", self.shape(table), &[bad]));
        }
        let t = self.value(table).data();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(&t[i * c..(i + 1) * c]);
        }
        let out = Tensor::from_vec(&[idx.len(), c], data)?;
        let ng = self.needs(&[table]);
        Ok(self.push(
            out,
            Op::Gather {
                table,
                idx: idx.to_vec(),
            },
            ng,
        ))
    }

    /// Softmax along the last dimension.
    pub fn softmax(&mut self, a: Var) -> Var {
        let c = self.value(a).cols();
        let mut out = self.value(a).clone();
        if c > 0 {
            out.data_mut().chunks_exact_mut(c).for_each(softmax_row);
        }
        let ng = self.needs(&[a]);
        self.push(out, Op::Softmax(a), ng)
    }

    /// Per-row normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, ShapeError> {
        let (r, c) = self.rc(x);
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(ShapeError::new(
                "layer_norm",
                self.shape(x),
                self.shape(gamma),
            ));
        }
        let xd = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let n = T::c(c as f64);
        let mut xhat = vec![T::zero(); r * c];
        let mut rstd = vec![T::zero(); r];
        let mut out = Tensor::zeros(self.shape(x));
        let o = out.data_mut();
        for i in 0..r {
            let row = &xd[i * c..(i + 1) * c];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + T::c(LN_EPS)).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                o[i * c + j] = h * g[j] + b[j];
            }
        }
        let ng = self.needs(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    /// GELU with the exact erf form.
    pub fn gelu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x = gelu_fwd(*x));
        let ng = self.needs(&[a]);
        self.push(out, Op::Gelu(a), ng)
    }

    /// Inverted dropout; identity when not training or `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64, training: bool, rng: &mut impl Rng) -> Var {
        if !training || p <= 0.0 {
            return a;
        }
        let keep = T::c(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(a).len())
            .map(|_| {
                if rng.gen::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let mut out = self.value(a).clone();
        out.data_mut()
            .iter_mut()
            .zip(&mask)
            .for_each(|(x, &m)| *x *= m);
        let ng = self.needs(&[a]);
        self.push(out, Op::Dropout { a, mask }, ng)
    }

    /// Replaces entries where `mask` is true by `value`.
    pub fn masked_fill(&mut self, a: Var, mask: &[bool], value: f64) -> Result<Var, ShapeError> {
        if mask.len() != self.value(a).len() {
            return Err(ShapeError::new("masked_fill", self.shape(a), &[mask.len()]));
        }
        let v = T::c(value);
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().zip(mask).for_each(|(x, &m)| {
            if m {
                *x = v
            }
        });
        let ng = self.needs(&[a]);
        Ok(self.push(
            out,
            Op::MaskedFill {
                a,
                mask: mask.to_vec(),
            },
            ng,
        ))
    }

    /// `Σ_i w_i · -log softmax(logits_i)[targets_i]`, a scalar. Rows with
    /// zero weight are ignored entirely, so their targets may be anything.
    pub fn cross_entropy_sum(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[f64],
    ) -> Result<Var, ShapeError> {
        let (r, c) = self.rc(logits);
        if targets.len() != r || weights.len() != r {
            return Err(ShapeError::new(
                "cross_entropy",
                self.shape(logits),
                &[targets.len(), weights.len()],
            ));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut total = T::zero();
        for i in 0..r {
            if weights[i] == 0.0 {
                continue;
            }
            if targets[i] >= c {
                return Err(ShapeError::new(
                    "cross_entropy",
                    self.shape(logits),
                    &[targets[i]],
                ));
            }
            let row = &mut probs[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&z| (z - max).exp()).sum::<T>().ln() + max;
            total += T::c(weights[i]) * (lse - row[targets[i]]);
            softmax_row(row);
        }
        let ng = self.needs(&[logits]);
        let weights = weights.iter().map(|&w| T::c(w)).collect();
        Ok(self.push(
            Tensor::scalar(total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights,
                probs,
            },
            ng,
        ))
    }

    /// Mean cross-entropy over all rows.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, ShapeError> {
        let n = targets.len();
        let s = self.cross_entropy_sum(logits, targets, &vec![1.0; n])?;
        Ok(self.scale(s, 1.0 / n.max(1) as f64))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        let ng = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Multi-head scaled dot-product attention over packed segments.
    ///
    /// `q` is `(Nq, d)`, `k` and `v` are `(Nk, d)`; heads split `d` evenly.
    /// With `causal`, every segment must be square and query `i` sees keys
    /// `0..=i` of its segment. Query rows outside all segments output zero.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segs: &[Segment],
        causal: bool,
    ) -> Result<Var, ShapeError> {
        let (nq, d) = self.rc(q);
        let (nk, dk) = self.rc(k);
        if dk != d || self.shape(v) != self.shape(k) || heads == 0 || d % heads != 0 {
            return Err(ShapeError::new("attention", self.shape(q), self.shape(k)));
        }
        for s in segs {
            if s.q_off + s.q_len > nq || s.k_off + s.k_len > nk || (causal && s.q_len != s.k_len) {
                return Err(ShapeError::new(
                    "attention",
                    &[nq, nk],
                    &[s.q_off, s.q_len, s.k_off, s.k_len],
                ));
            }
        }
        let dh = d / heads;
        let scale = T::c(1.0 / (dh as f64).sqrt());
        let total: usize = segs.iter().map(|s| s.q_len * s.k_len * heads).sum();
        let mut probs = vec![T::zero(); total];
        let mut out = Tensor::zeros(&[nq, d]);
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut off = 0;
        for s in segs {
            let (ql, kl) = (s.q_len, s.k_len);
            for h in 0..heads {
                let p = &mut probs[off..off + ql * kl];
                let qv = View {
                    off: s.q_off * d + h * dh,
                    rs: d,
                    cs: 1,
                };
                let kv = View {
                    off: s.k_off * d + h * dh,
                    rs: d,
                    cs: 1,
                };
                gemm(
                    ql,
                    dh,
                    kl,
                    scale,
                    qd,
                    qv,
                    kd,
                    kv.t(),
                    T::zero(),
                    p,
                    View::rm(0, kl),
                );
                for i in 0..ql {
                    let row = &mut p[i * kl..(i + 1) * kl];
                    let visible = if causal { i + 1 } else { kl };
                    softmax_row(&mut row[..visible]);
                    row[visible..].iter_mut().for_each(|x| *x = T::zero());
                }
                gemm(
                    ql,
                    kl,
                    dh,
                    T::one(),
                    p,
                    View::rm(0, kl),
                    vd,
                    kv,
                    T::zero(),
                    out.data_mut(),
                    qv,
                );
                off += ql * kl;
            }
        }
        let ng = self.needs(&[q, k, v]);
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                segs: segs.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one(); self.nodes[loss.0].value.len()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let (lo, hi) = grads.split_at_mut(i);
            let Some(gy) = hi[0].as_deref() else {
                continue;
            };
            self.backward_node(node, gy, lo);
        }
        Grads { g: grads }
    }

    fn backward_node(&self, node: &Node<T>, gy: &[T], lo: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        macro_rules! with {
            ($v:expr, |$g:ident| $body:expr) => {
                if let Some($g) = grad_slot(lo, nodes, $v) {
                    $body;
                }
            };
        }
        let val = |v: Var| nodes[v.0].value.data();
        let rc = |v: Var| (nodes[v.0].value.rows(), nodes[v.0].value.cols());

        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, ta, tb } => {
                let (ar, ac) = rc(a);
                let (br, bc) = rc(b);
                let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
                let n = if tb { br } else { bc };
                let av = if ta {
                    View::rm(0, ac).t()
                } else {
                    View::rm(0, ac)
                };
                let bv = if tb {
                    View::rm(0, bc).t()
                } else {
                    View::rm(0, bc)
                };
                let gv = View::rm(0, n);
                with!(a, |ga| if ta {
                    gemm(
                        k,
                        n,
                        m,
                        T::one(),
                        val(b),
                        bv,
                        gy,
                        gv.t(),
                        T::one(),
                        ga,
                        View::rm(0, ac),
                    )
                } else {
                    gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        gy,
                        gv,
                        val(b),
                        bv.t(),
                        T::one(),
                        ga,
                        View::rm(0, ac),
                    )
                });
                with!(b, |gb| if tb {
                    gemm(
                        n,
                        m,
                        k,
                        T::one(),
                        gy,
                        gv.t(),
                        val(a),
                        av,
                        T::one(),
                        gb,
                        View::rm(0, bc),
                    )
                } else {
                    gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        val(a),
                        av.t(),
                        gy,
                        gv,
                        T::one(),
                        gb,
                        View::rm(0, bc),
                    )
                });
            }
            &Op::Add(a, b) => {
                with!(a, |ga| ga.iter_mut().zip(gy).for_each(|(x, &g)| *x += g));
                with!(b, |gb| gb.iter_mut().zip(gy).for_each(|(x, &g)| *x += g));
            }
            &Op::AddRow(a, bias) => {
                with!(a, |ga| ga.iter_mut().zip(gy).for_each(|(x, &g)| *x += g));
                let c = nodes[bias.0].value.len();
                with!(bias, |gb| for row in gy.chunks_exact(c) {
                    gb.iter_mut().zip(row).for_each(|(x, &g)| *x += g);
                });
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (val(a), val(b));
                with!(a, |ga| for i in 0..ga.len() {
                    ga[i] += gy[i] * bv[i];
                });
                with!(b, |gb| for i in 0..gb.len() {
                    gb[i] += gy[i] * av[i];
                });
            }
            &Op::Scale(a, s) => {
                with!(a, |ga| ga
                    .iter_mut()
                    .zip(gy)
                    .for_each(|(x, &g)| *x += s * g));
            }
            &Op::Transpose(a) => {
                let (r, c) = rc(a);
                with!(a, |ga| for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += gy[j * r + i];
                    }
                });
            }
            &Op::Reshape(a) => {
                with!(a, |ga| ga.iter_mut().zip(gy).for_each(|(x, &g)| *x += g));
            }
            &Op::SliceCols { a, start } => {
                let (r, c) = rc(a);
                let w = node.value.cols();
                with!(a, |ga| for i in 0..r {
                    for j in 0..w {
                        ga[i * c + start + j] += gy[i * w + j];
                    }
                });
            }
            &Op::SliceRows { a, start } => {
                let c = rc(a).1;
                with!(a, |ga| ga[start * c..start * c + gy.len()]
                    .iter_mut()
                    .zip(gy)
                    .for_each(|(x, &g)| *x += g));
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let r = node.value.rows();
                let mut off = 0;
                for &p in parts {
                    let w = rc(p).1;
                    with!(p, |gp| for i in 0..r {
                        for j in 0..w {
                            gp[i * w + j] += gy[i * total + off + j];
                        }
                    });
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = nodes[p.0].value.len();
                    with!(p, |gp| gp
                        .iter_mut()
                        .zip(&gy[off..off + n])
                        .for_each(|(x, &g)| *x += g));
                    off += n;
                }
            }
            Op::Gather { table, idx } => {
                let c = rc(*table).1;
                with!(*table, |gt| for (r, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        gt[i * c + j] += gy[r * c + j];
                    }
                });
            }
            &Op::Softmax(a) => {
                let c = node.value.cols();
                let y = node.value.data();
                with!(a, |ga| for (r, (yr, gr)) in
                    y.chunks_exact(c).zip(gy.chunks_exact(c)).enumerate()
                {
                    let dot: T = yr.iter().zip(gr).map(|(&p, &g)| p * g).sum();
                    for j in 0..c {
                        ga[r * c + j] += yr[j] * (gr[j] - dot);
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (r, c) = rc(*x);
                let g = val(*gamma);
                with!(*gamma, |gg| for i in 0..r {
                    for j in 0..c {
                        gg[j] += gy[i * c + j] * xhat[i * c + j];
                    }
                });
                with!(*beta, |gb| for i in 0..r {
                    for j in 0..c {
                        gb[j] += gy[i * c + j];
                    }
                });
                let n = T::c(c as f64);
                with!(*x, |gx| for i in 0..r {
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for j in 0..c {
                        let dh = gy[i * c + j] * g[j];
                        m1 += dh;
                        m2 += dh * xhat[i * c + j];
                    }
                    m1 /= n;
                    m2 /= n;
                    for j in 0..c {
                        let dh = gy[i * c + j] * g[j];
                        gx[i * c + j] += rstd[i] * (dh - m1 - xhat[i * c + j] * m2);
                    }
                });
            }
            &Op::Gelu(a) => {
                let x = val(a);
                with!(a, |ga| for i in 0..ga.len() {
                    ga[i] += gy[i] * gelu_grad(x[i]);
                });
            }
            Op::Dropout { a, mask } => {
                with!(*a, |ga| for i in 0..ga.len() {
                    ga[i] += gy[i] * mask[i];
                });
            }
            Op::MaskedFill { a, mask } => {
                with!(*a, |ga| for i in 0..ga.len() {
                    if !mask[i] {
                        ga[i] += gy[i];
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
            } => {
                let c = rc(*logits).1;
                let g0 = gy[0];
                with!(*logits, |gl| for (i, &t) in targets.iter().enumerate() {
                    let w = weights[i];
                    if w == T::zero() {
                        continue;
                    }
                    for j in 0..c {
                        let onehot = if j == t { T::one() } else { T::zero() };
                        gl[i * c + j] += g0 * w * (probs[i * c + j] - onehot);
                    }
                });
            }
            &Op::Sum(a) => {
                with!(a, |ga| ga.iter_mut().for_each(|x| *x += gy[0]));
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                segs,
                probs,
            } => {
                let d = rc(*q).1;
                let dh = d / heads;
                let scale = T::c(1.0 / (dh as f64).sqrt());
                let (qd, kd, vd) = (val(*q), val(*k), val(*v));
                let mut off = 0;
                for s in segs {
                    let (ql, kl) = (s.q_len, s.k_len);
                    for h in 0..*heads {
                        let p = &probs[off..off + ql * kl];
                        off += ql * kl;
                        let qv = View {
                            off: s.q_off * d + h * dh,
                            rs: d,
                            cs: 1,
                        };
                        let kv = View {
                            off: s.k_off * d + h * dh,
                            rs: d,
                            cs: 1,
                        };
                        let pv = View::rm(0, kl);
                        with!(*v, |gv| gemm(
                            kl,
                            ql,
                            dh,
                            T::one(),
                            p,
                            pv.t(),
                            gy,
                            qv,
                            T::one(),
                            gv,
                            kv
                        ));
                        let mut ds = vec![T::zero(); ql * kl];
                        gemm(
                            ql,
                            dh,
                            kl,
                            T::one(),
                            gy,
                            qv,
                            vd,
                            kv.t(),
                            T::zero(),
                            &mut ds,
                            pv,
                        );
                        for i in 0..ql {
                            let pr = &p[i * kl..(i + 1) * kl];
                            let dr = &mut ds[i * kl..(i + 1) * kl];
                            let dot: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
                            for j in 0..kl {
                                dr[j] = pr[j] * (dr[j] - dot);
                            }
                        }
                        with!(*q, |gq| gemm(
                            ql,
                            kl,
                            dh,
                            scale,
                            &ds,
                            pv,
                            kd,
                            kv,
                            T::one(),
                            gq,
                            qv
                        ));
                        with!(*k, |gk| gemm(
                            kl,
                            ql,
                            dh,
                            scale,
                            &ds,
                            pv.t(),
                            qd,
                            qv,
                            T::one(),
                            gk,
                            kv
                        ));
                    }
                }
            }
        }
    }
}

/// Gradient buffer of `v`, allocated on first use; `None` when `v` does
/// not need a gradient.
fn grad_slot<'a, T: Real>(
    lo: &'a mut [Option<Vec<T>>],
    nodes: &[Node<T>],
    v: Var,
) -> Option<&'a mut [T]> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    Some(lo[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]))
}

/// Gradients from one backward pass, indexed by [`Var`].
pub struct Grads<T> {
    g: Vec<Option<Vec<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.g.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v` shaped like its value; zeros if `v` got none.
    pub fn tensor(&self, tape: &Tape<T>, v: Var) -> Tensor<T> {
        let shape = tape.shape(v);
        match self.get(v) {
            Some(g) => Tensor::from_vec(shape, g.to_vec()).expect("gradient matches value shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.g.get_mut(v.0).and_then(Option::take)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    #[test]
    fn gelu_at_zero_and_known_point() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::from_f64(&[2], &[0.0, 1.0]).unwrap());
        let y = t.gelu(x);
        assert_eq!(t.value(y).data()[0], 0.0);
        // 0.5·(1 + erf(1/√2)) = Φ(1) ≈ 0.841344746
        assert!((t.value(y).data()[1] - 0.841_344_746_068_543).abs() < 1e-12);
    }

    #[test]
    fn softmax_symmetry_and_normalization() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::from_f64(&[1, 3], &[2.5, 2.5, 2.5]).unwrap());
        let y = t.softmax(x);
        for &p in t.value(y).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = t.constant(Tensor::randn(&[7, 11], 3.0, &mut rng()));
        let y = t.softmax(x);
        for r in 0..7 {
            let s: f64 = t.value(y).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn uniform_cross_entropy_is_log_vocab() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::zeros(&[3, 66]));
        let l = t.cross_entropy(x, &[0, 17, 65]).unwrap();
        assert!((t.value(l).item() as f64 - 66f64.ln()).abs() < 1e-5);
        assert!((66f64.ln() - 4.1897).abs() < 1e-4);
    }

    #[test]
    fn zero_weight_rows_are_ignored() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::randn(&[2, 4], 1.0, &mut rng()));
        let l = t.cross_entropy_sum(x, &[1, 999], &[1.0, 0.0]).unwrap();
        let g = t.backward(l);
        assert!(g.get(x).unwrap()[4..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_statistics() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::randn(&[5, 32], 2.0, &mut rng()));
        let g = t.constant(Tensor::full(&[32], 1.0));
        let b = t.constant(Tensor::zeros(&[32]));
        let y = t.layer_norm(x, g, b).unwrap();
        for r in 0..5 {
            let row = t.value(y).row(r);
            let mean: f64 = row.iter().sum::<f64>() / 32.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut t = Tape::<f32>::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        let e = t.matmul(a, b).unwrap_err();
        assert_eq!((e.left.clone(), e.right.clone()), (vec![2, 3], vec![2, 3]));
        assert!(e.to_string().contains("[2, 3] vs [2, 3]"));
        let c = t.constant(Tensor::zeros(&[3, 2]));
        assert!(t.add(a, c).is_err());
    }

    #[test]
    fn dropout_scaling_and_determinism() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::full(&[1000], 1.0));
        let a = t.dropout(x, 0.2, true, &mut rng());
        let b = t.dropout(x, 0.2, true, &mut rng());
        assert_eq!(t.value(a), t.value(b));
        for &v in t.value(a).data() {
            assert!(v == 0.0 || (v - 1.25).abs() < 1e-12);
        }
        let kept = t.value(a).data().iter().filter(|&&v| v > 0.0).count();
        assert!((700..900).contains(&kept));
        assert_eq!(t.dropout(x, 0.2, false, &mut rng()), x);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let x = Tensor::randn(&[4, 5], 1.0, &mut rng());
        let err = grad_check(
            |t, x| {
                let y = t.mul(x, x)?;
                Ok(t.sum(y))
            },
            &x,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
        let mut t = Tape::new();
        let v = t.param(x.clone());
        let y = t.mul(v, v).unwrap();
        let s = t.sum(y);
        let g = t.backward(s);
        for (gi, xi) in g.get(v).unwrap().iter().zip(x.data()) {
            assert!((gi - 2.0 * xi).abs() < 1e-12);
        }
    }

    #[test]
    fn every_op_passes_grad_check() {
        let mut r = rng();
        let x = Tensor::randn(&[3, 8], 1.0, &mut r);
        let w = Tensor::randn(&[8, 5], 1.0, &mut r);
        let w2 = Tensor::randn(&[5, 8], 1.0, &mut r);
        let bias = Tensor::randn(&[5], 1.0, &mut r);
        let gamma = Tensor::randn(&[8], 1.0, &mut r);
        let weights = Tensor::randn(&[3, 8], 1.0, &mut r);
        let tol = 1e-4;

        type F = fn(&mut Tape<f64>, Var, &[Tensor<f64>]) -> Result<Var, ShapeError>;
        let cases: Vec<(&str, F)> = vec![
            ("matmul", |t, x, c| {
                let w = t.constant(c[0].clone());
                t.matmul(x, w)
            }),
            ("matmul_ta", |t, x, c| {
                let w = t.constant(c[1].clone());
                let xt = t.transpose(x);
                t.matmul_t(xt, w, true, true)
            }),
            ("matmul_tb", |t, x, c| {
                let w = t.constant(c[1].clone());
                t.matmul_t(x, w, false, true)
            }),
            ("self_product", |t, x, _| t.matmul_t(x, x, false, true)),
            ("add_row", |t, x, c| {
                let w = t.constant(c[0].clone());
                let b = t.param(c[2].clone());
                let y = t.matmul(x, w)?;
                t.add_row(y, b)
            }),
            ("softmax", |t, x, _| Ok(t.softmax(x))),
            ("layer_norm", |t, x, c| {
                let g = t.constant(c[3].clone());
                let b = t.constant(c[3].clone());
                t.layer_norm(x, g, b)
            }),
            ("gelu", |t, x, _| Ok(t.gelu(x))),
            ("slices", |t, x, _| {
                let a = t.slice_cols(x, 2, 4)?;
                let b = t.slice_rows(x, 1, 2)?;
                let bt = t.transpose(b);
                let c = t.concat_cols(&[a, a])?;
                let d = t.reshape(c, &[3, 8])?;
                let e = t.concat_rows(&[d, x])?;
                t.matmul(e, bt)
            }),
            ("gather", |t, x, _| t.gather(x, &[2, 0, 2, 1])),
            ("masked_fill", |t, x, _| {
                let m: Vec<bool> = (0..24).map(|i| i % 3 == 0).collect();
                t.masked_fill(x, &m, -5.0)
            }),
            ("cross_entropy", |t, x, _| {
                t.cross_entropy_sum(x, &[1, 7, 0], &[1.0, 0.5, 2.0])
            }),
            ("attention_causal", |t, x, _| {
                let q = t.slice_cols(x, 0, 4)?;
                let k = t.slice_cols(x, 2, 4)?;
                let v = t.slice_cols(x, 4, 4)?;
                t.attention(
                    q,
                    k,
                    v,
                    2,
                    &[Segment::square(0, 2), Segment::square(2, 1)],
                    true,
                )
            }),
            ("attention_cross", |t, x, _| {
                let q = t.slice_rows(x, 0, 1)?;
                t.attention(
                    q,
                    x,
                    x,
                    4,
                    &[Segment {
                        q_off: 0,
                        q_len: 1,
                        k_off: 0,
                        k_len: 3,
                    }],
                    false,
                )
            }),
        ];
        for (name, f) in cases {
            let consts = [w.clone(), w2.clone(), bias.clone(), gamma.clone()];
            let err = grad_check(
                |t, x| {
                    let y = f(t, x, &consts)?;
                    let wv = t.constant(if t.value(y).shape() == weights.shape() {
                        weights.clone()
                    } else {
                        Tensor::randn(t.value(y).shape(), 1.0, &mut ChaCha8Rng::seed_from_u64(9))
                    });
                    let z = t.mul(y, wv)?;
                    Ok(t.sum(z))
                },
                &x,
            )
            .unwrap();
            assert!(err < tol, "{name}: {err}");
        }
    }

    #[test]
    fn attention_is_causal() {
        let mut r = rng();
        let x = Tensor::<f64>::randn(&[5, 8], 1.0, &mut r);
        let run = |x: Tensor<f64>| {
            let mut t = Tape::new();
            let v = t.constant(x);
            let y = t
                .attention(v, v, v, 2, &[Segment::square(0, 5)], true)
                .unwrap();
            t.value(y).clone()
        };
        let base = run(x.clone());
        let mut x2 = x.clone();
        x2.data_mut()[4 * 8 + 3] += 1.0;
        let pert = run(x2);
        assert_eq!(&base.data()[..32], &pert.data()[..32]);
        assert_ne!(&base.data()[32..], &pert.data()[32..]);
    }
}
