//! Text and Graphviz views of a [`TreeDocument`].

use std::fmt::Write;

use crate::data::{CovariateKind, Split};
use crate::document::{DocNode, TreeDocument};
use crate::partition::{Branch, StopReason};

/// Node-label p-value: three decimals, scientific below 0.001.
pub fn format_p(p: f64) -> String {
    if p >= 0.001 {
        format!("{p:.3}")
    } else {
        format!("{p:.2e}")
    }
}

fn format_count(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{x:.0}")
    } else {
        format!("{x:.2}")
    }
}

fn format_median(m: Option<f64>) -> String {
    m.map_or_else(|| "NA".to_string(), |m| format!("{m}"))
}

/// Edge conditions `(left, right)` for a branch.
pub fn edge_labels(doc: &TreeDocument, b: &Branch) -> (String, String) {
    let kind = doc.covariate(&b.covariate).map(|c| &c.kind);
    match (&b.split, kind) {
        (Split::LessEq { cutoff }, Some(CovariateKind::Ordinal { levels })) => {
            let name = levels
                .get(*cutoff as usize)
                .cloned()
                .unwrap_or_else(|| format!("{cutoff}"));
            (format!("≤ {name}"), format!("> {name}"))
        }
        (Split::LessEq { cutoff }, _) => (format!("≤ {cutoff}"), format!("> {cutoff}")),
        (Split::InLevels { levels: left }, kind) => {
            let all = kind.and_then(|k| k.levels()).unwrap_or(&[]);
            let right: Vec<&str> = all
                .iter()
                .filter(|l| !left.contains(l))
                .map(String::as_str)
                .collect();
            (format!("{{{}}}", left.join(", ")), format!("{{{}}}", right.join(", ")))
        }
    }
}

fn stop_text(reason: &StopReason) -> String {
    match reason {
        StopReason::NotSignificant { min_p_adjusted } => {
            format!("not significant, min p = {}", format_p(*min_p_adjusted))
        }
        StopReason::MinSplit => "below minsplit".into(),
        StopReason::MaxDepth => "max depth".into(),
        StopReason::NoAdmissibleSplit => "no admissible split".into(),
    }
}

/// Indented listing; each internal node reads `variable ≤ cut-off, p = ...`.
pub fn render_text(doc: &TreeDocument) -> String {
    let mut out = String::new();
    render_node(doc, 1, 0, &mut out);
    out
}

fn render_node(doc: &TreeDocument, id: usize, indent: usize, out: &mut String) {
    let Some(node) = doc.node(id) else { return };
    let pad = "    ".repeat(indent);
    let size = format!(
        "n = {}, events = {}, median = {}",
        format_count(node.n),
        format_count(node.events),
        format_median(node.median)
    );
    match (&node.branch, &node.stop) {
        (Some(b), _) => {
            let (left, _) = edge_labels(doc, b);
            let cond = match b.split {
                Split::LessEq { .. } => format!("{} {left}", b.covariate),
                Split::InLevels { .. } => format!("{} in {left}", b.covariate),
            };
            let p = node.p_adjusted.map_or_else(|| "NA".into(), format_p);
            let _ = writeln!(out, "{pad}[{id}] {cond}, p = {p} ({size})");
            render_node(doc, b.left, indent + 1, out);
            render_node(doc, b.right, indent + 1, out);
        }
        (None, reason) => {
            let why = reason.as_ref().map(stop_text).unwrap_or_default();
            let _ = writeln!(out, "{pad}[{id}] leaf: {size} [{why}]");
        }
    }
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn dot_label(node: &DocNode) -> String {
    match &node.branch {
        Some(b) => {
            let p = node.p_adjusted.map_or_else(|| "NA".into(), format_p);
            format!("{}\\np = {p}", dot_escape(&b.covariate))
        }
        None => format!(
                "Node {}\\nn = {}\\nmedian = {}",
                node.id,
                format_count(node.n),
                format_median(node.median)
            ),
    }
}

/// Graphviz digraph: internal nodes are ellipses with variable and p-value,
/// leaves are boxes with size and Kaplan-Meier median, edges carry the split
/// condition. Nodes and edges are emitted in id order.
pub fn render_dot(doc: &TreeDocument) -> String {
    let mut out = String::from("digraph tree {\n    node [fontname=\"Helvetica\"];\n");
    for node in &doc.nodes {
        let shape = if node.is_leaf() { "box" } else { "ellipse" };
        let _ = writeln!(
            out,
            "    n{} [shape={shape}, label=\"{}\"];",
            node.id,
            dot_label(node)
        );
    }
    for node in &doc.nodes {
        if let Some(b) = &node.branch {
            let (left, right) = edge_labels(doc, b);
            let _ = writeln!(out, "    n{} -> n{} [label=\"{}\"];", node.id, b.left, dot_escape(&left));
            let _ = writeln!(out, "    n{} -> n{} [label=\"{}\"];", node.id, b.right, dot_escape(&right));
        }
    }
    out.push_str("}\n");
    out
}
