//! Line-oriented graph definition files and DOT export.
//!
//! ```text
//! # comment
//! [nodes]
//! s:load sampler start
//! s:sampler_2 sampler behavior=sampler
//! a:process action summary owner=stringcat
//! T:tanks tank
//! [control]
//! s:load -> a:process
//! [info]
//! a:process read T:tanks
//! ```
//!
//! The kind word must agree with the tag of the node name. Info lines take
//! `read`, `pull` or `push`.

use std::fmt::Write as _;

use metachem_core::graph::{GraphBuilder, GraphDef, GraphError, InfoKind, NodeId, NodeInfo, NodeKind};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    /// 1-based line number, 0 when the error concerns the whole document.
    pub line: usize,
    pub message: String,
}

fn fail<T>(line: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        line,
        message: message.into(),
    })
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Nodes,
    Control,
    Info,
}

fn node_id(line: usize, word: &str) -> Result<NodeId, ParseError> {
    word.parse().or_else(|e: GraphError| fail(line, e.to_string()))
}

pub fn parse_graph(text: &str) -> Result<GraphDef, ParseError> {
    let mut b = GraphBuilder::new();
    let mut section = Section::None;
    let mut start: Option<(usize, NodeId)> = None;
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = match name.trim() {
                "nodes" => Section::Nodes,
                "control" => Section::Control,
                "info" => Section::Info,
                other => return fail(n, format!("unknown section [{other}]")),
            };
            continue;
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        match section {
            Section::None => return fail(n, "content before the first section"),
            Section::Nodes => {
                let [name, kind, attrs @ ..] = words.as_slice() else {
                    return fail(n, "expected `<id> <kind> [attributes]`");
                };
                let id = node_id(n, name)?;
                let kind = NodeKind::from_word(kind).ok_or_else(|| ParseError {
                    line: n,
                    message: format!("unknown kind `{kind}`"),
                })?;
                if kind != id.kind() {
                    return fail(n, format!("{id} is declared as {}", kind.word()));
                }
                let mut info = NodeInfo::default();
                for attr in attrs {
                    match attr.split_once('=') {
                        None if *attr == "start" => {
                            if let Some((first, prev)) = &start {
                                return fail(n, format!("second start node, {prev} was declared on line {first}"));
                            }
                            start = Some((n, id.clone()));
                        }
                        None if *attr == "summary" => info.summary = true,
                        Some(("behavior", v)) if !v.is_empty() => info.behavior = Some(v.to_string()),
                        Some(("owner", v)) if !v.is_empty() => info.owner = Some(v.to_string()),
                        _ => return fail(n, format!("unknown attribute `{attr}`")),
                    }
                }
                if info.behavior.is_some() && !kind.is_control() {
                    return fail(n, format!("container {id} cannot have a behavior"));
                }
                b.add_node(id, info).or_else(|e| fail(n, e.to_string()))?;
            }
            Section::Control => {
                let [src, "->", dst] = words.as_slice() else {
                    return fail(n, "expected `<src> -> <dst>`");
                };
                let (s, t) = (node_id(n, src)?, node_id(n, dst)?);
                b.add_control(s, t).or_else(|e| fail(n, e.to_string()))?;
            }
            Section::Info => {
                let [ctrl, kind, container] = words.as_slice() else {
                    return fail(n, "expected `<control> read|pull|push <container>`");
                };
                let kind = InfoKind::from_word(kind).ok_or_else(|| ParseError {
                    line: n,
                    message: format!("unknown edge kind `{kind}`"),
                })?;
                let (c, k) = (node_id(n, ctrl)?, node_id(n, container)?);
                b.add_info(c, kind, k).or_else(|e| fail(n, e.to_string()))?;
            }
        }
    }
    match start {
        Some((n, id)) => {
            b.start(&id.to_string());
            b.build().or_else(|e| fail(n, e.to_string()))
        }
        None => fail(0, GraphError::NoStart.to_string()),
    }
}

/// Canonical text form. Controls come before containers, each sorted by name.
pub fn serialize_graph(g: &GraphDef) -> String {
    let mut out = String::from("[nodes]\n");
    let mut nodes: Vec<_> = g.nodes().collect();
    nodes.sort_by_key(|(id, _)| (id.kind().is_container(), (*id).clone()));
    for (id, info) in nodes {
        let _ = write!(out, "{id} {}", id.kind().word());
        if let Some(b) = &info.behavior {
            let _ = write!(out, " behavior={b}");
        }
        if let Some(o) = &info.owner {
            let _ = write!(out, " owner={o}");
        }
        if info.summary {
            out.push_str(" summary");
        }
        if id == g.start() {
            out.push_str(" start");
        }
        out.push('\n');
    }
    out.push_str("\n[control]\n");
    for e in g.control_edges() {
        let _ = writeln!(out, "{} -> {}", e.source, e.target);
    }
    out.push_str("\n[info]\n");
    for e in g.info_edges() {
        let _ = writeln!(out, "{} {} {}", e.control, e.kind.word(), e.container);
    }
    out
}

fn shape(kind: NodeKind) -> &'static str {
    match kind {
        NodeKind::Tank | NodeKind::Sample | NodeKind::Environment => "box",
        NodeKind::Sampler | NodeKind::Observer => "diamond",
        NodeKind::Decision => "triangle",
        NodeKind::Action => "circle",
        NodeKind::Termination => "point",
    }
}

fn owner_color(owner: &str) -> &'static str {
    match owner {
        "ja" => "pink",
        "swarm" => "lightblue",
        _ => "lightgrey",
    }
}

/// Graphviz rendering. Control flow is solid, information flow dashed,
/// with arrows pointing the way data moves.
pub fn to_dot(g: &GraphDef) -> String {
    let mut out = String::from("digraph metachem {\n  node [fontname=\"Helvetica\"];\n");
    for (id, info) in g.nodes() {
        let mut attrs = format!("shape={}", shape(id.kind()));
        if id.kind() == NodeKind::Termination {
            attrs.push_str(", width=0.25, style=filled, fillcolor=black");
        } else if let Some(o) = &info.owner {
            let _ = write!(attrs, ", style=filled, fillcolor={}", owner_color(o));
        }
        if id == g.start() {
            attrs.push_str(", peripheries=2");
        }
        if info.summary {
            attrs.push_str(", penwidth=2");
        }
        let _ = writeln!(out, "  \"{id}\" [{attrs}];");
    }
    for e in g.control_edges() {
        let _ = writeln!(out, "  \"{}\" -> \"{}\";", e.source, e.target);
    }
    for e in g.info_edges() {
        let (from, to, color) = match e.kind {
            InfoKind::Read => (&e.container, &e.control, "grey"),
            InfoKind::Pull => (&e.container, &e.control, "blue"),
            InfoKind::Push => (&e.control, &e.container, "red"),
        };
        let _ = writeln!(out, "  \"{from}\" -> \"{to}\" [style=dashed, color={color}];");
    }
    out.push_str("}\n");
    out
}
