//! Plumbing shared by the command line: training data, checkpoint sets,
//! sampling into constraint documents and batch optimization.

mod render;
mod report;

pub use render::render_svg;
pub use report::RunReport;

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{
    canonicalize, decode_edges_filtered, encode_edges, shortened_style, Codec, CodecError,
    EdgeToken, ElementConstraint, TokenSequence,
};
use crate::layout::{
    validate_layout, Edge, EdgeKind, Element, Layout, LayoutMode, RangeError, TypeSchema, Violation,
};
use crate::model::{
    boundary_condition, element_condition, EdgeBatchItem, EdgeModel, ElementBatchItem,
    ElementModel, ModelConfig, ModelError, Preset, Strategy, TrainConfig, TrainLog,
};
use crate::opt::{filter_constraints, optimize, ConstraintSet};
use crate::synth::{layout_rng, LoadError};
use crate::tensor::Adam;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl PipelineError {
    /// 1 for usage errors, 2 for bad input data, 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) => 1,
            PipelineError::Io { .. }
            | PipelineError::Data(_)
            | PipelineError::Load(_)
            | PipelineError::Codec(_) => 2,
            PipelineError::Model(_) => 3,
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
        move |source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<RangeError> for PipelineError {
    fn from(e: RangeError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

/// What the element model is conditioned on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Conditioning {
    None,
    /// Fixed exterior rectangles; the model generates the rooms only.
    Boundary,
    /// A list of room `(type, w, h)` tuples.
    Elements,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Element,
    Edge(EdgeKind),
}

impl ModelKind {
    /// `element` or `edge:<code>` with codes `hadj`, `vadj`, `wall`, `door`.
    pub fn parse(s: &str) -> Option<Self> {
        if s == "element" {
            return Some(ModelKind::Element);
        }
        let code = s.strip_prefix("edge:")?;
        EdgeKind::from_code(code).map(ModelKind::Edge)
    }

    pub fn file_name(self) -> String {
        match self {
            ModelKind::Element => "element.ckpt".into(),
            ModelKind::Edge(k) => format!("edge-{}.ckpt", k.code()),
        }
    }

    pub fn label(self) -> String {
        match self {
            ModelKind::Element => "element".into(),
            ModelKind::Edge(k) => format!("edge:{}", k.code()),
        }
    }
}

/// Sidecar written next to each checkpoint as `<ckpt>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub model: String,
    pub conditioning: Conditioning,
    pub mode: LayoutMode,
    pub types: TypeSchema,
    pub preset: Preset,
    pub epochs: usize,
    pub seed: u64,
    pub steps: u64,
    pub final_nll: Option<f64>,
}

impl ModelMeta {
    pub fn path_for(ckpt: &Path) -> PathBuf {
        let mut s = ckpt.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    pub fn load(ckpt: &Path) -> Result<Self, PipelineError> {
        let p = Self::path_for(ckpt);
        let text = fs::read_to_string(&p).map_err(PipelineError::io(&p))?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::Data(format!("{}: {e}", p.display())))
    }

    pub fn save(&self, ckpt: &Path) -> Result<(), PipelineError> {
        let p = Self::path_for(ckpt);
        let text = serde_json::to_string_pretty(self).expect("metadata serializes");
        fs::write(&p, text + "\n").map_err(PipelineError::io(&p))
    }
}

/// Exterior-typed elements only, without edges.
pub fn exterior_part(l: &Layout) -> Layout {
    let mut out = Layout::new(l.mode, l.types.clone());
    out.elements = (0..l.len())
        .filter(|&i| l.is_exterior(i))
        .map(|i| l.elements[i])
        .collect();
    out
}

/// Non-exterior elements with the edges among them, in canonical order.
pub fn room_part(l: &Layout) -> Layout {
    let keep: Vec<usize> = (0..l.len()).filter(|&i| !l.is_exterior(i)).collect();
    let mut new_of = vec![usize::MAX; l.len()];
    for (k, &i) in keep.iter().enumerate() {
        new_of[i] = k;
    }
    let mut out = Layout::new(l.mode, l.types.clone());
    out.elements = keep.iter().map(|&i| l.elements[i]).collect();
    out.edges = l
        .edges
        .iter()
        .filter(|e| {
            e.src < l.len()
                && e.dst < l.len()
                && new_of[e.src] != usize::MAX
                && new_of[e.dst] != usize::MAX
        })
        .map(|e| Edge::new(new_of[e.src], new_of[e.dst], e.kind))
        .collect();
    canonicalize(&out)
}

/// The layout a model learns to generate under `cond`.
pub fn training_layout(l: &Layout, cond: Conditioning) -> Layout {
    match cond {
        Conditioning::Boundary => room_part(l),
        _ => canonicalize(l),
    }
}

/// Quantized `(type, w, h)` tuples of the non-exterior elements.
pub fn room_constraints(l: &Layout) -> Result<Vec<ElementConstraint>, RangeError> {
    let q = crate::layout::Quantizer::coord();
    let canon = canonicalize(l);
    (0..canon.len())
        .filter(|&i| !canon.is_exterior(i))
        .map(|i| {
            let e = &canon.elements[i];
            Ok(ElementConstraint::floorplan(
                e.elem_type,
                q.quantize(e.w)? as u16,
                q.quantize(e.h)? as u16,
            ))
        })
        .collect()
}

/// Condition sequence a layout provides as training input.
pub fn condition_for(
    codec: &Codec,
    l: &Layout,
    cond: Conditioning,
) -> Result<Option<TokenSequence>, PipelineError> {
    Ok(match cond {
        Conditioning::None => None,
        Conditioning::Boundary => Some(boundary_condition(codec, &exterior_part(l))?),
        Conditioning::Elements => Some(element_condition(codec, &room_constraints(l)?)),
    })
}

fn check_corpus(corpus: &[Layout]) -> Result<(LayoutMode, TypeSchema), PipelineError> {
    let first = corpus
        .first()
        .ok_or_else(|| PipelineError::Data("empty training corpus".into()))?;
    if let Some(i) = corpus
        .iter()
        .position(|l| l.mode != first.mode || l.types != first.types)
    {
        return Err(PipelineError::Data(format!(
            "layout {i} differs in mode or type schema"
        )));
    }
    Ok((first.mode, first.types.clone()))
}

pub struct Trained<M> {
    pub model: M,
    pub adam: Adam<f32>,
    pub log: TrainLog,
    pub meta: ModelMeta,
}

pub fn train_element(
    corpus: &[Layout],
    preset: Preset,
    cond: Conditioning,
    cfg: &TrainConfig,
) -> Result<Trained<ElementModel>, PipelineError> {
    let (mode, types) = check_corpus(corpus)?;
    if cond != Conditioning::None && mode != LayoutMode::FloorPlan {
        return Err(PipelineError::Usage(
            "conditioning applies to floor plans only".into(),
        ));
    }
    let codec = Codec::new(mode, types.len());
    let seqs = corpus
        .iter()
        .map(|l| codec.encode_elements(&training_layout(l, cond)))
        .collect::<Result<Vec<_>, _>>()?;
    let conds = corpus
        .iter()
        .map(|l| condition_for(&codec, l, cond))
        .collect::<Result<Vec<_>, _>>()?;
    let items: Vec<ElementBatchItem> = seqs
        .iter()
        .zip(&conds)
        .map(|(seq, c)| ElementBatchItem {
            seq,
            cond: c.as_ref(),
        })
        .collect();
    let config = ModelConfig::element(preset, codec.vocab_size(), cond != Conditioning::None);
    let mut model = ElementModel::new(config, codec, cfg.seed)?;
    let mut adam = Adam::new(cfg.adam, &model.params);
    let log = model.train(&items, cfg, &mut adam)?;
    let meta = ModelMeta {
        model: ModelKind::Element.label(),
        conditioning: cond,
        mode,
        types,
        preset,
        epochs: cfg.epochs,
        seed: cfg.seed,
        steps: adam.steps(),
        final_nll: log.last_nll(),
    };
    Ok(Trained {
        model,
        adam,
        log,
        meta,
    })
}

/// Edge models see only the elements; under boundary conditioning they
/// are trained on the room part of each layout.
pub fn train_edge(
    corpus: &[Layout],
    preset: Preset,
    kind: EdgeKind,
    cond: Conditioning,
    cfg: &TrainConfig,
) -> Result<Trained<EdgeModel>, PipelineError> {
    let (mode, types) = check_corpus(corpus)?;
    if mode != LayoutMode::FloorPlan {
        return Err(PipelineError::Usage(
            "furniture layouts have no edges".into(),
        ));
    }
    let codec = Codec::new(mode, types.len());
    let shortened = shortened_style(kind);
    let layouts: Vec<Layout> = corpus.iter().map(|l| training_layout(l, cond)).collect();
    let elems = layouts
        .iter()
        .map(|l| codec.encode_elements(l))
        .collect::<Result<Vec<_>, _>>()?;
    let edges: Vec<Vec<EdgeToken>> = layouts
        .iter()
        .map(|l| encode_edges(l, kind, shortened).tokens)
        .collect();
    let items: Vec<EdgeBatchItem> = elems
        .iter()
        .zip(&edges)
        .map(|(e, t)| EdgeBatchItem {
            elements: e,
            edges: t,
            cond: None,
        })
        .collect();
    let config = ModelConfig::edge(preset, codec.vocab_size(), false);
    let mut model = EdgeModel::new(config, codec, kind, shortened, cfg.seed)?;
    let mut adam = Adam::new(cfg.adam, &model.params);
    let log = model.train(&items, cfg, &mut adam)?;
    let meta = ModelMeta {
        model: ModelKind::Edge(kind).label(),
        conditioning: cond,
        mode,
        types,
        preset,
        epochs: cfg.epochs,
        seed: cfg.seed,
        steps: adam.steps(),
        final_nll: log.last_nll(),
    };
    Ok(Trained {
        model,
        adam,
        log,
        meta,
    })
}

pub fn save_element(t: &Trained<ElementModel>, path: &Path) -> Result<(), PipelineError> {
    let mut w = BufWriter::new(File::create(path).map_err(PipelineError::io(path))?);
    t.model.save(&mut w, t.meta.seed, Some(&t.adam))?;
    t.meta.save(path)
}

pub fn save_edge(t: &Trained<EdgeModel>, path: &Path) -> Result<(), PipelineError> {
    let mut w = BufWriter::new(File::create(path).map_err(PipelineError::io(path))?);
    t.model.save(&mut w, t.meta.seed, Some(&t.adam))?;
    t.meta.save(path)
}

/// Element model plus whichever edge models a checkpoint directory holds.
pub struct ModelSet {
    pub element: ElementModel,
    pub meta: ModelMeta,
    pub edges: Vec<EdgeModel>,
}

impl ModelSet {
    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let path = dir.join(ModelKind::Element.file_name());
        let mut r = BufReader::new(File::open(&path).map_err(PipelineError::io(&path))?);
        let (element, _) = ElementModel::load(&mut r)?;
        let meta = ModelMeta::load(&path)?;
        let mut edges = Vec::new();
        for kind in EdgeKind::ALL {
            let p = dir.join(ModelKind::Edge(kind).file_name());
            if !p.exists() {
                continue;
            }
            let mut r = BufReader::new(File::open(&p).map_err(PipelineError::io(&p))?);
            let (m, _) = EdgeModel::load(&mut r)?;
            let em = ModelMeta::load(&p)?;
            if em.conditioning != meta.conditioning || em.mode != meta.mode {
                return Err(PipelineError::Data(format!(
                    "{} was trained for a different setting than the element model",
                    p.display()
                )));
            }
            edges.push(m);
        }
        Ok(Self {
            element,
            meta,
            edges,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TupleDoc {
    pub t: usize,
    /// Quantized values after the type.
    pub v: Vec<u16>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxDoc {
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// One grammatical sample: quantized element tuples, decoded edges and
/// any fixed boundary rectangles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleDoc {
    pub index: usize,
    pub mode: LayoutMode,
    pub types: TypeSchema,
    pub elements: Vec<TupleDoc>,
    /// `(src, dst, kind code)`.
    pub edges: Vec<(usize, usize, String)>,
    #[serde(default)]
    pub boundary: Vec<BoxDoc>,
    /// Pointer tokens that decoded to invalid edges and were dropped.
    #[serde(default)]
    pub decode_dropped: usize,
}

impl SampleDoc {
    pub fn constraints(&self) -> Vec<ElementConstraint> {
        self.elements
            .iter()
            .map(|t| ElementConstraint {
                elem_type: t.t,
                values: t.v.clone(),
            })
            .collect()
    }

    pub fn to_constraint_set(&self) -> Result<ConstraintSet, PipelineError> {
        let edges = self
            .edges
            .iter()
            .map(|(s, d, k)| {
                EdgeKind::from_code(k)
                    .map(|kind| Edge::new(*s, *d, kind))
                    .ok_or_else(|| PipelineError::Data(format!("unknown edge kind {k}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(t) = self.elements.iter().find(|t| t.t >= self.types.len()) {
            return Err(PipelineError::Data(format!(
                "element type {} outside the schema",
                t.t
            )));
        }
        let mut cs = ConstraintSet::from_constraints(
            self.mode,
            self.types.clone(),
            &self.constraints(),
            &edges,
        )?;
        cs.boundary = self
            .boundary
            .iter()
            .map(|b| Element::new(b.t, b.x, b.y, b.w, b.h))
            .collect();
        Ok(cs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SampleOutcome {
    Ok(SampleDoc),
    Ungrammatical { index: usize, reason: String },
}

/// Inputs of one sampling run.
#[derive(Clone, Debug, Default)]
pub struct SampleRequest {
    pub boundary: Option<Layout>,
    pub elements: Option<Vec<ElementConstraint>>,
    pub strategy: Strategy,
}

impl ModelSet {
    fn condition(&self, req: &SampleRequest) -> Result<Option<TokenSequence>, PipelineError> {
        let codec = &self.element.codec;
        match (self.meta.conditioning, &req.boundary, &req.elements) {
            (Conditioning::None, None, None) => Ok(None),
            (Conditioning::Boundary, Some(b), None) => Ok(Some(boundary_condition(codec, b)?)),
            (Conditioning::Elements, None, Some(e)) => Ok(Some(element_condition(codec, e))),
            (c, ..) => Err(PipelineError::Usage(format!(
                "the element model expects conditioning {c:?}; pass exactly the matching input"
            ))),
        }
    }

    /// Draws sample `index` from its own random stream of `seed`.
    pub fn sample_one(
        &self,
        req: &SampleRequest,
        cond: Option<&TokenSequence>,
        index: usize,
        seed: u64,
    ) -> Result<SampleOutcome, PipelineError> {
        let mut rng = layout_rng(seed, index);
        let bad = |reason: &str| {
            Ok(SampleOutcome::Ungrammatical {
                index,
                reason: reason.to_string(),
            })
        };
        let s = self.element.sample(cond, req.strategy, &mut rng)?;
        if s.truncated {
            return bad("element_truncated");
        }
        let codec = &self.element.codec;
        let Ok(mut cons) = codec.decode_elements(&s.seq) else {
            return bad("element_decode");
        };
        let types = &self.meta.types;
        if req.boundary.is_some() {
            cons.retain(|c| Some(c.elem_type) != types.exterior_id());
        }
        if cons.is_empty() {
            return bad("empty");
        }
        let elements = codec.encode_constraints(&cons)?;
        let mut edges = Vec::new();
        let mut decode_dropped = 0;
        for m in &self.edges {
            let e = m.sample(&elements, None, req.strategy, &mut rng)?;
            if e.truncated {
                return bad("edge_truncated");
            }
            let (decoded, dropped) =
                decode_edges_filtered(&e.tokens, m.kind, m.shortened, cons.len());
            decode_dropped += dropped;
            edges.extend(
                decoded
                    .into_iter()
                    .map(|d| (d.src, d.dst, d.kind.code().to_string())),
            );
        }
        let boundary = req
            .boundary
            .iter()
            .flat_map(|b| b.elements.iter())
            .map(|e| BoxDoc {
                t: e.elem_type,
                x: e.x,
                y: e.y,
                w: e.w,
                h: e.h,
            })
            .collect();
        Ok(SampleOutcome::Ok(SampleDoc {
            index,
            mode: self.meta.mode,
            types: types.clone(),
            elements: cons
                .into_iter()
                .map(|c| TupleDoc {
                    t: c.elem_type,
                    v: c.values,
                })
                .collect(),
            edges,
            boundary,
            decode_dropped,
        }))
    }

    /// `n` samples in parallel; sample `i` only depends on `(seed, i)`.
    pub fn sample_batch(
        &self,
        req: &SampleRequest,
        n: usize,
        seed: u64,
    ) -> Result<Vec<SampleOutcome>, PipelineError> {
        if let Some(b) = &req.boundary {
            if (0..b.len()).any(|i| !b.is_exterior(i)) {
                return Err(PipelineError::Data(
                    "boundary layouts may only hold exterior rectangles".into(),
                ));
            }
        }
        let cond = self.condition(req)?;
        (0..n)
            .into_par_iter()
            .map(|i| self.sample_one(req, cond.as_ref(), i, seed))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OptOutcome {
    Accepted {
        index: usize,
        layout: Layout,
        /// Edges removed by filtering or invalid at decode time.
        modified: bool,
        removed_edges: usize,
        dropped_descriptive: usize,
        overlaps: bool,
        holes: bool,
    },
    Rejected {
        index: usize,
        code: String,
        detail: String,
        modified: bool,
        removed_edges: usize,
    },
}

impl OptOutcome {
    pub fn accepted(&self) -> Option<&Layout> {
        match self {
            OptOutcome::Accepted { layout, .. } => Some(layout),
            OptOutcome::Rejected { .. } => None,
        }
    }
}

/// Violations that mean a constraint does not hold. Overlaps between
/// unconstrained elements and holes are quality measures, not failures.
pub fn is_constraint_violation(v: &Violation) -> bool {
    !matches!(v, Violation::Overlap(..) | Violation::Holes { .. })
}

/// Filter, formulate, solve and post-validate one sample.
pub fn optimize_doc(doc: &SampleDoc) -> OptOutcome {
    let index = doc.index;
    let cs = match doc.to_constraint_set() {
        Ok(cs) => cs,
        Err(e) => {
            return OptOutcome::Rejected {
                index,
                code: "bad_sample".into(),
                detail: e.to_string(),
                modified: false,
                removed_edges: 0,
            }
        }
    };
    let (cs, removed) = filter_constraints(&cs);
    let removed_edges = removed.len() + doc.decode_dropped;
    let modified = removed_edges > 0;
    let out = match optimize(&cs) {
        Ok(out) => out,
        Err(r) => {
            return OptOutcome::Rejected {
                index,
                code: r.code().into(),
                detail: r.to_string(),
                modified,
                removed_edges,
            }
        }
    };
    let violations = validate_layout(&out.layout);
    if let Some(v) = violations.iter().find(|v| is_constraint_violation(v)) {
        return OptOutcome::Rejected {
            index,
            code: "post_validation".into(),
            detail: format!("{v:?}"),
            modified,
            removed_edges,
        };
    }
    OptOutcome::Accepted {
        index,
        overlaps: violations
            .iter()
            .any(|v| matches!(v, Violation::Overlap(..))),
        holes: violations
            .iter()
            .any(|v| matches!(v, Violation::Holes { .. })),
        layout: out.layout,
        modified,
        removed_edges,
        dropped_descriptive: out.dropped_descriptive,
    }
}

pub fn optimize_batch(docs: &[SampleDoc]) -> Vec<OptOutcome> {
    docs.par_iter().map(optimize_doc).collect()
}

/// Reads newline-delimited JSON records of type `T`.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let text = fs::read_to_string(path).map_err(PipelineError::io(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            serde_json::from_str(l)
                .map_err(|e| PipelineError::Data(format!("{}:{}: {e}", path.display(), k + 1)))
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), PipelineError> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("records serialize"));
        text.push('\n');
    }
    fs::write(path, text).map_err(PipelineError::io(path))
}
