//! The layout JSON document and its newline-delimited corpus form.

use serde::{Deserialize, Serialize};

use super::{Edge, EdgeKind, Element, Layout, LayoutMode, TypeSchema};

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ElementDoc {
    t: usize,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    a: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct EdgeDoc {
    i: usize,
    j: usize,
    k: String,
}

/// Serialized form of a [`Layout`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayoutDoc {
    mode: LayoutMode,
    types: TypeSchema,
    elements: Vec<ElementDoc>,
    edges: Vec<EdgeDoc>,
}

impl From<&Layout> for LayoutDoc {
    fn from(l: &Layout) -> Self {
        Self {
            mode: l.mode,
            types: l.types.clone(),
            elements: l
                .elements
                .iter()
                .map(|e| ElementDoc {
                    t: e.elem_type,
                    x: e.x,
                    y: e.y,
                    w: e.w,
                    h: e.h,
                    a: e.alpha,
                })
                .collect(),
            edges: l
                .edges
                .iter()
                .map(|e| EdgeDoc {
                    i: e.src,
                    j: e.dst,
                    k: e.kind.code().to_string(),
                })
                .collect(),
        }
    }
}

impl TryFrom<LayoutDoc> for Layout {
    type Error = String;

    fn try_from(doc: LayoutDoc) -> Result<Self, String> {
        let n_types = doc.types.len();
        let elements = doc
            .elements
            .into_iter()
            .map(|e| {
                if e.t >= n_types {
                    return Err(format!(
                        "element type {} not in schema of {} types",
                        e.t, n_types
                    ));
                }
                Ok(Element {
                    elem_type: e.t,
                    x: e.x,
                    y: e.y,
                    w: e.w,
                    h: e.h,
                    alpha: e.a,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let edges = doc
            .edges
            .into_iter()
            .map(|e| {
                EdgeKind::from_code(&e.k)
                    .map(|kind| Edge::new(e.i, e.j, kind))
                    .ok_or_else(|| format!("unknown edge kind {:?}", e.k))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Layout {
            mode: doc.mode,
            types: doc.types,
            elements,
            edges,
        })
    }
}

impl Layout {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&LayoutDoc::from(self)).expect("layout serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, String> {
        let doc: LayoutDoc = serde_json::from_str(s).map_err(|e| e.to_string())?;
        Layout::try_from(doc)
    }
}
