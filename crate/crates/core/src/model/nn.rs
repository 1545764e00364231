//! Transformer building blocks over a [`Tape`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ModelError;
use crate::tensor::{ParamId, ParamStore, Real, Segment, Tape, Tensor, Var};

const INIT_STD: f64 = 0.02;

/// Size of every type-channel embedding table. Slot indices use the low
/// entries; [`START_TYPE`] marks the start token.
pub(crate) const TYPE_TABLE: usize = 8;
pub(crate) const START_TYPE: usize = TYPE_TABLE - 1;

/// One forward pass: the tape, the parameters bound onto it, and the
/// dropout stream.
pub struct Ctx<T: Real> {
    pub tape: Tape<T>,
    pub(crate) p: Vec<Var>,
    pub(crate) training: bool,
    pub(crate) dropout: f64,
    pub(crate) rng: ChaCha8Rng,
}

impl<T: Real> Ctx<T> {
    pub fn new(params: &ParamStore<T>, training: bool, dropout: f64, rng: ChaCha8Rng) -> Self {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, training);
        Self {
            tape,
            p,
            training,
            dropout,
            rng,
        }
    }

    /// Same as [`Ctx::new`] but with every parameter a gradient leaf, for
    /// gradient checks with dropout off.
    pub fn for_grad(params: &ParamStore<T>) -> Self {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, true);
        Self {
            tape,
            p,
            training: false,
            dropout: 0.0,
            rng: rand::SeedableRng::seed_from_u64(0),
        }
    }

    pub(crate) fn var(&self, id: ParamId) -> Var {
        self.p[id.index()]
    }

    /// Gradients of every parameter after `backward(loss)`, in store order.
    pub fn param_grads(&self, loss: Var) -> Vec<Option<Vec<T>>> {
        let mut g = self.tape.backward(loss);
        self.p.iter().map(|&v| g.take(v)).collect()
    }
}

fn normal(
    store: &mut ParamStore<f32>,
    name: String,
    shape: &[usize],
    rng: &mut impl Rng,
) -> ParamId {
    store.add(name, Tensor::randn(shape, INIT_STD, rng))
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore<f32>,
        name: &str,
        din: usize,
        dout: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            w: normal(store, format!("{name}.w"), &[din, dout], rng),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[dout])),
        }
    }

    pub fn fwd<T: Real>(&self, ctx: &mut Ctx<T>, x: Var) -> Result<Var, ModelError> {
        let y = ctx.tape.matmul(x, ctx.var(self.w))?;
        Ok(ctx.tape.add_row(y, ctx.var(self.b))?)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Norm {
    g: ParamId,
    b: ParamId,
}

impl Norm {
    pub fn new(store: &mut ParamStore<f32>, name: &str, d: usize) -> Self {
        Self {
            g: store.add(format!("{name}.g"), Tensor::full(&[d], 1.0)),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[d])),
        }
    }

    pub fn fwd<T: Real>(&self, ctx: &mut Ctx<T>, x: Var) -> Result<Var, ModelError> {
        Ok(ctx.tape.layer_norm(x, ctx.var(self.g), ctx.var(self.b))?)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl Attention {
    pub fn new(
        store: &mut ParamStore<f32>,
        name: &str,
        d: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), d, d, rng),
            k: Linear::new(store, &format!("{name}.k"), d, d, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, rng),
            o: Linear::new(store, &format!("{name}.o"), d, d, rng),
            heads,
        }
    }

    pub fn fwd<T: Real>(
        &self,
        ctx: &mut Ctx<T>,
        x: Var,
        mem: Var,
        segs: &[Segment],
        causal: bool,
    ) -> Result<Var, ModelError> {
        let q = self.q.fwd(ctx, x)?;
        let k = self.k.fwd(ctx, mem)?;
        let v = self.v.fwd(ctx, mem)?;
        let a = ctx.tape.attention(q, k, v, self.heads, segs, causal)?;
        self.o.fwd(ctx, a)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Mlp {
    fc: Linear,
    proj: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore<f32>, name: &str, d: usize, rng: &mut impl Rng) -> Self {
        Self {
            fc: Linear::new(store, &format!("{name}.fc"), d, 4 * d, rng),
            proj: Linear::new(store, &format!("{name}.proj"), 4 * d, d, rng),
        }
    }

    pub fn fwd<T: Real>(&self, ctx: &mut Ctx<T>, x: Var) -> Result<Var, ModelError> {
        let h = self.fc.fwd(ctx, x)?;
        let h = ctx.tape.gelu(h);
        self.proj.fwd(ctx, h)
    }
}

/// Attention pattern of one forward call through a block stack.
pub struct Pattern<'a> {
    pub self_segs: &'a [Segment],
    pub causal: bool,
    /// Memory rows and the query-to-memory segments for cross-attention.
    pub cross: Option<(Var, &'a [Segment])>,
}

/// Decoder block:
///
/// ```text
/// n  = LN(h)
/// a  = LN(n + SelfAttn(n))
/// b  = LN(a + CrossAttn(a, memory))   (skipped without memory)
/// h' = b + MLP(b)
/// ```
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    ln_in: Norm,
    self_attn: Attention,
    ln_self: Norm,
    cross: Option<(Attention, Norm)>,
    mlp: Mlp,
}

impl DecoderBlock {
    pub fn new(
        store: &mut ParamStore<f32>,
        name: &str,
        d: usize,
        heads: usize,
        cross: bool,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            ln_in: Norm::new(store, &format!("{name}.ln_in"), d),
            self_attn: Attention::new(store, &format!("{name}.attn"), d, heads, rng),
            ln_self: Norm::new(store, &format!("{name}.ln_attn"), d),
            cross: cross.then(|| {
                (
                    Attention::new(store, &format!("{name}.cross"), d, heads, rng),
                    Norm::new(store, &format!("{name}.ln_cross"), d),
                )
            }),
            mlp: Mlp::new(store, &format!("{name}.mlp"), d, rng),
        }
    }

    pub fn fwd<T: Real>(&self, ctx: &mut Ctx<T>, h: Var, pat: &Pattern) -> Result<Var, ModelError> {
        let n = self.ln_in.fwd(ctx, h)?;
        let sa = self.self_attn.fwd(ctx, n, n, pat.self_segs, pat.causal)?;
        let a = ctx.tape.add(n, sa)?;
        let a = self.ln_self.fwd(ctx, a)?;
        let b = match (&self.cross, pat.cross) {
            (Some((attn, ln)), Some((mem, segs))) => {
                let ca = attn.fwd(ctx, a, mem, segs, false)?;
                let b = ctx.tape.add(a, ca)?;
                ln.fwd(ctx, b)?
            }
            _ => a,
        };
        let m = self.mlp.fwd(ctx, b)?;
        Ok(ctx.tape.add(b, m)?)
    }
}

/// GPT-2 style pre-norm encoder block, unmasked.
#[derive(Clone, Debug)]
pub(crate) struct EncoderBlock {
    ln_attn: Norm,
    attn: Attention,
    ln_mlp: Norm,
    mlp: Mlp,
}

impl EncoderBlock {
    pub fn new(
        store: &mut ParamStore<f32>,
        name: &str,
        d: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            ln_attn: Norm::new(store, &format!("{name}.ln_attn"), d),
            attn: Attention::new(store, &format!("{name}.attn"), d, heads, rng),
            ln_mlp: Norm::new(store, &format!("{name}.ln_mlp"), d),
            mlp: Mlp::new(store, &format!("{name}.mlp"), d, rng),
        }
    }

    pub fn fwd<T: Real>(
        &self,
        ctx: &mut Ctx<T>,
        h: Var,
        segs: &[Segment],
    ) -> Result<Var, ModelError> {
        let n = self.ln_attn.fwd(ctx, h)?;
        let a = self.attn.fwd(ctx, n, n, segs, false)?;
        let h = ctx.tape.add(h, a)?;
        let n = self.ln_mlp.fwd(ctx, h)?;
        let m = self.mlp.fwd(ctx, n)?;
        Ok(ctx.tape.add(h, m)?)
    }
}

/// Value, position and type embedding tables, summed.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Embedding {
    value: ParamId,
    pos: ParamId,
    ty: ParamId,
    max_pos: usize,
}

impl Embedding {
    pub fn new(
        store: &mut ParamStore<f32>,
        name: &str,
        vocab: usize,
        max_len: usize,
        d: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            value: normal(store, format!("{name}.value"), &[vocab, d], rng),
            pos: normal(store, format!("{name}.pos"), &[max_len + 1, d], rng),
            ty: normal(store, format!("{name}.type"), &[TYPE_TABLE, d], rng),
            max_pos: max_len,
        }
    }

    /// Sum of position and type embeddings only, for inputs whose value
    /// embedding comes from elsewhere.
    pub fn pos_type<T: Real>(
        &self,
        ctx: &mut Ctx<T>,
        pos: &[usize],
        types: &[usize],
    ) -> Result<Var, ModelError> {
        if let Some(&p) = pos.iter().find(|&&p| p > self.max_pos) {
            return Err(ModelError::Capacity {
                len: p,
                max: self.max_pos,
            });
        }
        let p = ctx.tape.gather(ctx.var(self.pos), pos)?;
        let t = ctx.tape.gather(ctx.var(self.ty), types)?;
        Ok(ctx.tape.add(p, t)?)
    }

    pub fn fwd<T: Real>(
        &self,
        ctx: &mut Ctx<T>,
        values: &[usize],
        pos: &[usize],
        types: &[usize],
    ) -> Result<Var, ModelError> {
        let v = ctx.tape.gather(ctx.var(self.value), values)?;
        let pt = self.pos_type(ctx, pos, types)?;
        let e = ctx.tape.add(v, pt)?;
        Ok(self.dropout(ctx, e))
    }

    pub fn dropout<T: Real>(&self, ctx: &mut Ctx<T>, x: Var) -> Var {
        let (p, training) = (ctx.dropout, ctx.training);
        ctx.tape.dropout(x, p, training, &mut ctx.rng)
    }
}

/// Packed token input for one stack: values, positions, type channel and
/// the per-sequence segments.
#[derive(Clone, Debug, Default)]
pub(crate) struct Packed {
    pub values: Vec<usize>,
    pub pos: Vec<usize>,
    pub types: Vec<usize>,
    pub segs: Vec<Segment>,
}

impl Packed {
    pub fn push_seq(&mut self, values: impl IntoIterator<Item = (usize, usize, usize)>) {
        let off = self.values.len();
        for (v, p, t) in values {
            self.values.push(v);
            self.pos.push(p);
            self.types.push(t);
        }
        self.segs
            .push(Segment::square(off, self.values.len() - off));
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }
}

/// Condition encoder: embeddings, unmasked encoder blocks, final norm.
#[derive(Clone, Debug)]
pub(crate) struct ConditionEncoder {
    emb: Embedding,
    blocks: Vec<EncoderBlock>,
    ln_out: Norm,
}

impl ConditionEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore<f32>,
        name: &str,
        vocab: usize,
        max_len: usize,
        d: usize,
        heads: usize,
        layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            emb: Embedding::new(store, &format!("{name}.emb"), vocab, max_len, d, rng),
            blocks: (0..layers)
                .map(|i| EncoderBlock::new(store, &format!("{name}.block{i}"), d, heads, rng))
                .collect(),
            ln_out: Norm::new(store, &format!("{name}.ln_out"), d),
        }
    }

    /// Memory rows for the packed condition sequences.
    pub fn fwd<T: Real>(&self, ctx: &mut Ctx<T>, cond: &Packed) -> Result<Var, ModelError> {
        let mut h = self.emb.fwd(ctx, &cond.values, &cond.pos, &cond.types)?;
        for b in &self.blocks {
            h = b.fwd(ctx, h, &cond.segs)?;
        }
        self.ln_out.fwd(ctx, h)
    }
}
