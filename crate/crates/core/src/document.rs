//! Canonical JSON form of a fitted tree.
//!
//! Floats are written in scientific notation with 17 significant digits, so
//! parsing and re-serializing a document reproduces it byte for byte.

use std::io;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::data::{CovariateInfo, CovariateKind, Observation, Split};
use crate::error::{Error, Result};
use crate::partition::{route, Branch, FitConfig, StopReason, Tree};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the training CSV, lowercase hex.
    pub input_sha256: Option<String>,
    pub seed: Option<u64>,
    pub tool_version: String,
}

impl Provenance {
    pub fn new(input_sha256: Option<String>, seed: Option<u64>) -> Self {
        Provenance {
            input_sha256,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// One node; exactly one of `branch` and `stop` is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocNode {
    pub id: usize,
    pub depth: usize,
    /// Total case weight in the node.
    pub n: f64,
    pub events: f64,
    /// Kaplan-Meier median; `null` when the curve stays above 0.5.
    pub median: Option<f64>,
    /// Selected adjusted p-value (internal), smallest one (tested leaf).
    pub p_adjusted: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<Branch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<StopReason>,
}

impl DocNode {
    pub fn is_leaf(&self) -> bool {
        self.branch.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDocument {
    pub format_version: u32,
    pub config: FitConfig,
    pub covariates: Vec<CovariateInfo>,
    pub nodes: Vec<DocNode>,
    pub provenance: Provenance,
}

impl TreeDocument {
    pub fn from_tree(tree: &Tree, provenance: Provenance) -> Self {
        let nodes = tree
            .nodes
            .iter()
            .map(|n| DocNode {
                id: n.id,
                depth: n.depth,
                n: n.n_effective(),
                events: n.events(),
                median: n.km.median,
                p_adjusted: n.p_adjusted(),
                branch: n.branch().cloned(),
                stop: n.stop_reason().cloned(),
            })
            .collect();
        TreeDocument {
            format_version: FORMAT_VERSION,
            config: tree.config,
            covariates: tree.covariates.clone(),
            nodes,
            provenance,
        }
    }

    pub fn node(&self, id: usize) -> Option<&DocNode> {
        id.checked_sub(1).and_then(|i| self.nodes.get(i))
    }

    pub fn leaves(&self) -> impl Iterator<Item = &DocNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn covariate(&self, name: &str) -> Option<&CovariateInfo> {
        self.covariates.iter().find(|c| c.name == name)
    }

    /// Covariates referenced by some split, in declaration order.
    pub fn split_covariates(&self) -> Vec<&CovariateInfo> {
        self.covariates
            .iter()
            .filter(|c| {
                self.nodes
                    .iter()
                    .any(|n| n.branch.as_ref().is_some_and(|b| b.covariate == c.name))
            })
            .collect()
    }

    /// Leaf id reached by `obs`.
    pub fn predict(&self, obs: &Observation) -> Result<usize> {
        route(
            &self.covariates,
            |id| self.node(id).and_then(|n| n.branch.as_ref()),
            obs,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        let mut buf = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut buf, FullPrecision::default());
        self.serialize(&mut ser)?;
        buf.push(b'\n');
        Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TreeDocument = serde_json::from_str(text)?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::MalformedDocument(m));
        if self.format_version != FORMAT_VERSION {
            return bad(format!("unsupported format_version {}", self.format_version));
        }
        self.config
            .validate()
            .map_err(|e| Error::MalformedDocument(e.to_string()))?;
        if self.nodes.is_empty() {
            return bad("no nodes".into());
        }
        let mut parents = vec![0usize; self.nodes.len() + 1];
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id != i + 1 {
                return bad(format!("node at position {} has id {}", i + 1, node.id));
            }
            if !(node.n >= 0.0) || !(node.events >= 0.0) {
                return bad(format!("node {}: negative size", node.id));
            }
            match (&node.branch, &node.stop) {
                (Some(b), None) => {
                    for child in [b.left, b.right] {
                        if child <= node.id || child > self.nodes.len() {
                            return bad(format!("node {}: invalid child id {child}", node.id));
                        }
                        parents[child] += 1;
                        if self.nodes[child - 1].depth != node.depth + 1 {
                            return bad(format!("node {child}: inconsistent depth"));
                        }
                    }
                    if b.left == b.right {
                        return bad(format!("node {}: both children are {}", node.id, b.left));
                    }
                    let Some(info) = self.covariate(&b.covariate) else {
                        return bad(format!("node {}: unknown covariate `{}`", node.id, b.covariate));
                    };
                    let matches = matches!(
                        (&info.kind, &b.split),
                        (CovariateKind::Numeric | CovariateKind::Ordinal { .. }, Split::LessEq { .. })
                            | (CovariateKind::Categorical { .. }, Split::InLevels { .. })
                    );
                    if !matches {
                        return bad(format!("node {}: split does not fit `{}`", node.id, b.covariate));
                    }
                }
                (None, Some(_)) => {}
                _ => return bad(format!("node {}: needs exactly one of branch and stop", node.id)),
            }
        }
        if self.nodes[0].depth != 0 {
            return bad("root must have depth 0".into());
        }
        if let Some(id) = (2..=self.nodes.len()).find(|&id| parents[id] != 1) {
            return bad(format!("node {id} has {} parents", parents[id]));
        }
        Ok(())
    }
}

/// Pretty printer that writes every `f64` with 17 significant digits.
#[derive(Default)]
struct FullPrecision(PrettyFormatter<'static>);

impl Formatter for FullPrecision {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}
