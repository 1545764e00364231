use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::nn::{
    ConditionEncoder, Ctx, DecoderBlock, Embedding, Linear, Packed, Pattern, START_TYPE,
};
use super::{ModelConfig, ModelError, Strategy, TrainConfig, TrainLog};
use crate::codec::{Codec, TokenSequence};
use crate::layout::LayoutMode;
use crate::tensor::{
    load_checkpoint, save_checkpoint, Adam, ParamStore, Real, Segment, Tensor, Var,
};

#[derive(Clone, Debug)]
struct Arch {
    emb: Embedding,
    cond: Option<ConditionEncoder>,
    blocks: Vec<DecoderBlock>,
    head: Linear,
}

/// Autoregressive model over element constraint token sequences.
#[derive(Clone, Debug)]
pub struct ElementModel {
    pub config: ModelConfig,
    pub codec: Codec,
    arch: Arch,
    pub params: ParamStore<f32>,
}

/// One training or scoring example.
#[derive(Clone, Copy, Debug)]
pub struct ElementBatchItem<'a> {
    pub seq: &'a TokenSequence,
    pub cond: Option<&'a TokenSequence>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElementSample {
    pub seq: TokenSequence,
    /// The length limit was hit before STOP.
    pub truncated: bool,
}

/// Packed condition sequences plus the cross-attention segments pairing
/// each query sequence with its condition.
pub(crate) fn pack_conditions(
    conditional: bool,
    conds: &[Option<&TokenSequence>],
    query_segs: &[Segment],
) -> Result<Option<(Packed, Vec<Segment>)>, ModelError> {
    if !conditional {
        return if conds.iter().any(|c| c.is_some_and(|c| !c.is_empty())) {
            Err(ModelError::Condition)
        } else {
            Ok(None)
        };
    }
    let mut packed = Packed::default();
    let mut cross = Vec::with_capacity(conds.len());
    for (c, q) in conds.iter().zip(query_segs) {
        let c = c.ok_or(ModelError::Condition)?;
        let k_off = packed.len();
        packed.push_seq((0..c.len()).map(|i| {
            (
                c.values[i] as usize,
                c.positions[i] as usize,
                c.types[i] as usize,
            )
        }));
        cross.push(Segment {
            q_off: q.q_off,
            q_len: q.q_len,
            k_off,
            k_len: c.len(),
        });
    }
    Ok(Some((packed, cross)))
}

impl ElementModel {
    pub fn new(config: ModelConfig, codec: Codec, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if config.vocab_size != codec.vocab_size() {
            return Err(ModelError::Config(format!(
                "vocab size {} does not match codec vocabulary {}",
                config.vocab_size,
                codec.vocab_size()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (d, h) = (config.d, config.n_heads);
        let emb = Embedding::new(
            &mut params,
            "emb",
            config.vocab_size,
            config.max_seq_len,
            d,
            &mut rng,
        );
        let cond = config.conditional().then(|| {
            ConditionEncoder::new(
                &mut params,
                "cond",
                config.vocab_size,
                config.max_seq_len,
                d,
                h,
                config.n_layers_condition_encoder,
                &mut rng,
            )
        });
        let blocks = (0..config.n_layers_decoder)
            .map(|i| {
                DecoderBlock::new(
                    &mut params,
                    &format!("block{i}"),
                    d,
                    h,
                    config.conditional(),
                    &mut rng,
                )
            })
            .collect();
        let head = Linear::new(&mut params, "head", d, config.vocab_size, &mut rng);
        Ok(Self {
            config,
            codec,
            arch: Arch {
                emb,
                cond,
                blocks,
                head,
            },
            params,
        })
    }

    /// Teacher-forced logits for a batch: row `i` of each sequence scores
    /// token `i` given tokens `< i`. Returns the packed logits and targets.
    pub fn forward<T: Real>(
        &self,
        ctx: &mut Ctx<T>,
        items: &[ElementBatchItem],
    ) -> Result<(Var, Vec<usize>), ModelError> {
        let mut input = Packed::default();
        let mut targets = Vec::new();
        for it in items {
            let s = it.seq;
            if s.len() > self.config.max_seq_len {
                return Err(ModelError::Capacity {
                    len: s.len(),
                    max: self.config.max_seq_len,
                });
            }
            let start = std::iter::once((self.codec.start() as usize, 0, START_TYPE));
            let rest = (0..s.len().saturating_sub(1)).map(|i| {
                (
                    s.values[i] as usize,
                    s.positions[i] as usize,
                    s.types[i] as usize,
                )
            });
            input.push_seq(start.chain(rest).take(s.len()));
            targets.extend(s.values.iter().map(|&v| v as usize));
        }
        let conds: Vec<_> = items.iter().map(|i| i.cond).collect();
        let cond = pack_conditions(self.config.conditional(), &conds, &input.segs)?;

        let a = &self.arch;
        let mem = match (&a.cond, &cond) {
            (Some(enc), Some((packed, _))) => Some(enc.fwd(ctx, packed)?),
            _ => None,
        };
        let mut h = a.emb.fwd(ctx, &input.values, &input.pos, &input.types)?;
        let pat = Pattern {
            self_segs: &input.segs,
            causal: true,
            cross: mem.zip(cond.as_ref().map(|c| c.1.as_slice())),
        };
        for b in &a.blocks {
            h = b.fwd(ctx, h, &pat)?;
        }
        Ok((a.head.fwd(ctx, h)?, targets))
    }

    /// Summed token NLL of a batch and the token count.
    pub fn loss<T: Real>(
        &self,
        ctx: &mut Ctx<T>,
        items: &[ElementBatchItem],
    ) -> Result<(Var, usize), ModelError> {
        let (logits, targets) = self.forward(ctx, items)?;
        let w = vec![1.0; targets.len()];
        let loss = ctx.tape.cross_entropy_sum(logits, &targets, &w)?;
        Ok((loss, targets.len()))
    }

    /// Minibatch training on the per-token mean NLL.
    pub fn train(
        &mut self,
        items: &[ElementBatchItem],
        cfg: &TrainConfig,
        adam: &mut Adam<f32>,
    ) -> Result<TrainLog, ModelError> {
        let mut params = std::mem::take(&mut self.params);
        let dropout = self.config.dropout;
        let this = &*self;
        let log = super::train::run(&mut params, adam, items, cfg, |p, batch, rng| {
            let mut ctx = Ctx::new(p, true, dropout, rng);
            let (sum, n) = this.loss(&mut ctx, batch)?;
            let mean = ctx.tape.scale(sum, 1.0 / n.max(1) as f64);
            let nll = ctx.tape.value(mean).item() as f64;
            Ok((nll, ctx.param_grads(mean)))
        });
        self.params = params;
        log
    }

    fn inference_ctx(&self) -> Ctx<f32> {
        Ctx::new(&self.params, false, 0.0, ChaCha8Rng::seed_from_u64(0))
    }

    /// Teacher-forced logits of one sequence, `(len, vocab)`.
    pub fn logits(
        &self,
        seq: &TokenSequence,
        cond: Option<&TokenSequence>,
    ) -> Result<Tensor<f32>, ModelError> {
        let mut ctx = self.inference_ctx();
        let (l, _) = self.forward(&mut ctx, &[ElementBatchItem { seq, cond }])?;
        Ok(ctx.tape.value(l).clone())
    }

    /// Mean teacher-forced NLL per token over `items`, without dropout.
    pub fn mean_nll(&self, items: &[ElementBatchItem]) -> Result<f64, ModelError> {
        let mut total = 0.0;
        let mut count = 0;
        for chunk in items.chunks(16) {
            let mut ctx = self.inference_ctx();
            let (l, n) = self.loss(&mut ctx, chunk)?;
            total += ctx.tape.value(l).item() as f64;
            count += n;
        }
        Ok(total / count.max(1) as f64)
    }

    /// Samples a full sequence.
    pub fn sample(
        &self,
        cond: Option<&TokenSequence>,
        strategy: Strategy,
        rng: &mut ChaCha8Rng,
    ) -> Result<ElementSample, ModelError> {
        self.sample_from(&[], cond, strategy, rng)
    }

    /// Continues `prefix` until STOP or the length limit, masking tokens
    /// that are invalid for the next tuple slot.
    pub fn sample_from(
        &self,
        prefix: &[u16],
        cond: Option<&TokenSequence>,
        strategy: Strategy,
        rng: &mut ChaCha8Rng,
    ) -> Result<ElementSample, ModelError> {
        let k = self.codec.arity();
        let max = self.config.max_seq_len;
        let mut tokens = prefix.to_vec();
        let stop = self.codec.stop();
        loop {
            if tokens.last() == Some(&stop) {
                return Ok(ElementSample {
                    seq: self.sequence(&tokens),
                    truncated: false,
                });
            }
            if tokens.len() >= max {
                return Ok(ElementSample {
                    seq: self.sequence(&tokens),
                    truncated: true,
                });
            }
            let mut probe = tokens.clone();
            probe.push(self.codec.pad());
            let logits = self.logits(&self.sequence(&probe), cond)?;
            let last = logits.row(logits.rows() - 1);
            let slot = tokens.len() % k;
            let next = strategy
                .pick(last, |t| self.codec.token_allowed(t as u16, slot), rng)
                .expect("every slot admits some token");
            tokens.push(next as u16);
        }
    }

    /// Wraps raw tokens with position and slot channels.
    pub fn sequence(&self, tokens: &[u16]) -> TokenSequence {
        let k = self.codec.arity();
        TokenSequence {
            values: tokens.to_vec(),
            positions: (1..=tokens.len()).map(|p| p as u16).collect(),
            types: (0..tokens.len()).map(|i| (i % k) as u8).collect(),
        }
    }

    pub fn save(
        &self,
        w: &mut impl Write,
        seed: u64,
        adam: Option<&Adam<f32>>,
    ) -> Result<(), ModelError> {
        let meta = json!({
            "model": "element",
            "config": self.config,
            "mode": self.codec.mode,
            "n_types": self.codec.n_types,
            "seed": seed,
            "step": adam.map_or(0, |a| a.steps()),
        });
        save_checkpoint(w, &meta, &self.params, adam)?;
        Ok(())
    }

    pub fn load(r: &mut impl Read) -> Result<(Self, Option<Adam<f32>>), ModelError> {
        let ck = load_checkpoint::<f32>(r)?;
        let bad = |what: &str| ModelError::Config(format!("checkpoint meta: {what}"));
        if ck.meta["model"] != "element" {
            return Err(bad("not an element model"));
        }
        let config: ModelConfig =
            serde_json::from_value(ck.meta["config"].clone()).map_err(|_| bad("config"))?;
        let mode: LayoutMode =
            serde_json::from_value(ck.meta["mode"].clone()).map_err(|_| bad("mode"))?;
        let n_types = ck.meta["n_types"].as_u64().ok_or_else(|| bad("n_types"))? as usize;
        let mut model = Self::new(config, Codec::new(mode, n_types), 0)?;
        super::train::restore(&mut model.params, ck.params)?;
        Ok((model, ck.adam))
    }
}
