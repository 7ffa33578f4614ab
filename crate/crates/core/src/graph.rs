//! Static control and information graphs.
//!
//! A [`GraphDef`] holds typed nodes, control edges between control nodes and
//! read/pull/push information edges between control nodes and containers.
//! Graphs are immutable once built; [`validate`] reports every structural or
//! access-rule breach as a [`Violation`].

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

/// The eight node kinds. The first three are containers, the rest control nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    Tank,
    Sample,
    Environment,
    Sampler,
    Observer,
    Decision,
    Action,
    Termination,
}

impl NodeKind {
    pub const ALL: [NodeKind; 8] = [
        NodeKind::Tank,
        NodeKind::Sample,
        NodeKind::Environment,
        NodeKind::Sampler,
        NodeKind::Observer,
        NodeKind::Decision,
        NodeKind::Action,
        NodeKind::Termination,
    ];

    pub fn tag(self) -> char {
        match self {
            NodeKind::Tank => 'T',
            NodeKind::Sample => 'S',
            NodeKind::Environment => 'V',
            NodeKind::Sampler => 's',
            NodeKind::Observer => 'o',
            NodeKind::Decision => 'd',
            NodeKind::Action => 'a',
            NodeKind::Termination => 't',
        }
    }

    pub fn from_tag(tag: char) -> Option<NodeKind> {
        NodeKind::ALL.into_iter().find(|k| k.tag() == tag)
    }

    /// Long name used by the text format (`tank`, `sampler`, ...).
    pub fn word(self) -> &'static str {
        match self {
            NodeKind::Tank => "tank",
            NodeKind::Sample => "sample",
            NodeKind::Environment => "environment",
            NodeKind::Sampler => "sampler",
            NodeKind::Observer => "observer",
            NodeKind::Decision => "decision",
            NodeKind::Action => "action",
            NodeKind::Termination => "termination",
        }
    }

    pub fn from_word(word: &str) -> Option<NodeKind> {
        NodeKind::ALL.into_iter().find(|k| k.word() == word)
    }

    pub fn is_container(self) -> bool {
        matches!(self, NodeKind::Tank | NodeKind::Sample | NodeKind::Environment)
    }

    pub fn is_control(self) -> bool {
        !self.is_container()
    }

    pub fn is_particle_container(self) -> bool {
        matches!(self, NodeKind::Tank | NodeKind::Sample)
    }

    /// Whether a control node of this kind may pull from or push to a
    /// container of kind `container`. Reading is always allowed.
    pub fn may_modify(self, container: NodeKind) -> bool {
        matches!(
            (self, container),
            (NodeKind::Sampler, NodeKind::Tank)
                | (NodeKind::Sampler, NodeKind::Sample)
                | (NodeKind::Action, NodeKind::Sample)
                | (NodeKind::Action, NodeKind::Environment)
                | (NodeKind::Observer, NodeKind::Environment)
        )
    }
}

/// Two-part node name, written `X:label`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    kind: NodeKind,
    label: String,
}

/// Reserved environment entry a decision writes its chosen target into.
pub const LOCAL_ROUTE: &str = "_local";

impl NodeId {
    pub fn new(kind: NodeKind, label: &str) -> Result<NodeId, GraphError> {
        if !valid_label(label) {
            return Err(GraphError::BadLabel(label.to_string()));
        }
        Ok(NodeId {
            kind,
            label: label.to_string(),
        })
    }

    /// Panicking constructor for labels known to be valid at compile time.
    pub fn of(kind: NodeKind, label: &str) -> NodeId {
        NodeId::new(kind, label).expect("invalid node label")
    }

    /// Parse a node name known to be valid.
    pub fn of_name(name: &str) -> NodeId {
        name.parse().expect("invalid node name")
    }

    pub fn kind(&self) -> NodeKind {
        self.kind
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// The `V:_local` environment id used for decision routing.
    pub fn local_route() -> NodeId {
        NodeId {
            kind: NodeKind::Environment,
            label: LOCAL_ROUTE.to_string(),
        }
    }
}

fn valid_label(label: &str) -> bool {
    !label.is_empty() && label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.tag(), self.label)
    }
}

impl FromStr for NodeId {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<NodeId, GraphError> {
        let (tag, label) = s
            .split_once(':')
            .ok_or_else(|| GraphError::BadNodeName(s.to_string()))?;
        let mut chars = tag.chars();
        let kind = match (chars.next(), chars.next()) {
            (Some(c), None) => NodeKind::from_tag(c).ok_or_else(|| GraphError::UnknownKindTag(tag.to_string()))?,
            _ => return Err(GraphError::UnknownKindTag(tag.to_string())),
        };
        NodeId::new(kind, label)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InfoKind {
    Read,
    Pull,
    Push,
}

impl InfoKind {
    pub fn word(self) -> &'static str {
        match self {
            InfoKind::Read => "read",
            InfoKind::Pull => "pull",
            InfoKind::Push => "push",
        }
    }

    pub fn from_word(word: &str) -> Option<InfoKind> {
        match word {
            "read" => Some(InfoKind::Read),
            "pull" => Some(InfoKind::Pull),
            "push" => Some(InfoKind::Push),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ControlEdge {
    pub source: NodeId,
    pub target: NodeId,
}

/// Information edge, always stored control-first regardless of its direction.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InfoEdge {
    pub control: NodeId,
    pub container: NodeId,
    pub kind: InfoKind,
}

/// Per-node attributes beyond the name.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NodeInfo {
    /// Behavior a control node is bound to. Defaults to the node label.
    pub behavior: Option<String>,
    /// Owning chemistry, for composed systems.
    pub owner: Option<String>,
    /// The node stands for an expanded subgraph drawn at a coarser level.
    pub summary: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphDef {
    nodes: BTreeMap<NodeId, NodeInfo>,
    control_edges: BTreeSet<ControlEdge>,
    info_edges: BTreeSet<InfoEdge>,
    start: NodeId,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("invalid label `{0}`")]
    BadLabel(String),
    #[error("malformed node name `{0}`, expected X:label")]
    BadNodeName(String),
    #[error("unknown kind tag `{0}`")]
    UnknownKindTag(String),
    #[error("duplicate node {0}")]
    DuplicateNode(NodeId),
    #[error("edge references undeclared node {0}")]
    UndeclaredNode(NodeId),
    #[error("no start node")]
    NoStart,
    #[error("more than one start node ({0} and {1})")]
    MultipleStarts(NodeId, NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("{0} is not a control node")]
    NotControl(NodeId),
}

/// Incremental graph construction used by the chemistry graph constructors
/// and the text parser.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    nodes: BTreeMap<NodeId, NodeInfo>,
    order: Vec<NodeId>,
    control_edges: BTreeSet<ControlEdge>,
    info_edges: BTreeSet<InfoEdge>,
    start: Option<NodeId>,
    error: Option<GraphError>,
}

impl GraphBuilder {
    pub fn new() -> GraphBuilder {
        GraphBuilder::default()
    }

    pub fn add_node(&mut self, id: NodeId, info: NodeInfo) -> Result<&mut Self, GraphError> {
        if self.nodes.contains_key(&id) {
            return Err(GraphError::DuplicateNode(id));
        }
        self.order.push(id.clone());
        self.nodes.insert(id, info);
        Ok(self)
    }

    fn record(&mut self, result: Result<(), GraphError>) {
        if let Err(e) = result {
            self.error.get_or_insert(e);
        }
    }

    /// Declare a node by its `X:label` name. Errors are deferred to [`build`](Self::build).
    pub fn node(&mut self, name: &str) -> &mut Self {
        self.node_with(name, NodeInfo::default())
    }

    pub fn node_with(&mut self, name: &str, info: NodeInfo) -> &mut Self {
        let res = name.parse::<NodeId>().and_then(|id| self.add_node(id, info).map(|_| ()));
        self.record(res);
        self
    }

    /// Control node instance bound to a behavior named differently from its label.
    pub fn instance(&mut self, name: &str, behavior: &str) -> &mut Self {
        self.node_with(
            name,
            NodeInfo {
                behavior: Some(behavior.to_string()),
                ..NodeInfo::default()
            },
        )
    }

    /// Set the owner of every node declared so far without one.
    pub fn own_all(&mut self, owner: &str) -> &mut Self {
        for info in self.nodes.values_mut() {
            if info.owner.is_none() {
                info.owner = Some(owner.to_string());
            }
        }
        self
    }

    pub fn owner(&mut self, name: &str, owner: &str) -> &mut Self {
        let res = self.lookup(name).map(|id| {
            if let Some(info) = self.nodes.get_mut(&id) {
                info.owner = Some(owner.to_string());
            }
        });
        self.record(res);
        self
    }

    pub fn summary(&mut self, name: &str) -> &mut Self {
        let res = self.lookup(name).map(|id| {
            if let Some(info) = self.nodes.get_mut(&id) {
                info.summary = true;
            }
        });
        self.record(res);
        self
    }

    pub fn start(&mut self, name: &str) -> &mut Self {
        let res = self.lookup(name).and_then(|id| match self.start.take() {
            Some(prev) if prev != id => Err(GraphError::MultipleStarts(prev, id)),
            _ => {
                self.start = Some(id);
                Ok(())
            }
        });
        self.record(res);
        self
    }

    fn lookup(&self, name: &str) -> Result<NodeId, GraphError> {
        let id: NodeId = name.parse()?;
        if self.nodes.contains_key(&id) {
            Ok(id)
        } else {
            Err(GraphError::UndeclaredNode(id))
        }
    }

    pub fn add_control(&mut self, source: NodeId, target: NodeId) -> Result<&mut Self, GraphError> {
        for id in [&source, &target] {
            if !self.nodes.contains_key(id) {
                return Err(GraphError::UndeclaredNode(id.clone()));
            }
        }
        self.control_edges.insert(ControlEdge { source, target });
        Ok(self)
    }

    pub fn add_info(&mut self, control: NodeId, kind: InfoKind, container: NodeId) -> Result<&mut Self, GraphError> {
        for id in [&control, &container] {
            if !self.nodes.contains_key(id) {
                return Err(GraphError::UndeclaredNode(id.clone()));
            }
        }
        self.info_edges.insert(InfoEdge { control, container, kind });
        Ok(self)
    }

    /// Control edge `source -> target`.
    pub fn flow(&mut self, source: &str, target: &str) -> &mut Self {
        let res = self
            .lookup(source)
            .and_then(|s| self.lookup(target).map(|t| (s, t)))
            .and_then(|(s, t)| self.add_control(s, t).map(|_| ()));
        self.record(res);
        self
    }

    /// Chain of control edges through every listed node.
    pub fn chain(&mut self, names: &[&str]) -> &mut Self {
        for pair in names.windows(2) {
            self.flow(pair[0], pair[1]);
        }
        self
    }

    fn info(&mut self, control: &str, kinds: &[InfoKind], container: &str) -> &mut Self {
        let res = self.lookup(control).and_then(|c| self.lookup(container).map(|b| (c, b))).and_then(|(c, b)| {
            for kind in kinds {
                self.add_info(c.clone(), *kind, b.clone())?;
            }
            Ok(())
        });
        self.record(res);
        self
    }

    pub fn read(&mut self, control: &str, container: &str) -> &mut Self {
        self.info(control, &[InfoKind::Read], container)
    }

    /// Read plus pull: the control node may remove from the container.
    pub fn take(&mut self, control: &str, container: &str) -> &mut Self {
        self.info(control, &[InfoKind::Read, InfoKind::Pull], container)
    }

    /// Read plus push: the control node may add to the container.
    pub fn give(&mut self, control: &str, container: &str) -> &mut Self {
        self.info(control, &[InfoKind::Read, InfoKind::Push], container)
    }

    /// The double-headed edge: read, pull and push.
    pub fn rw(&mut self, control: &str, container: &str) -> &mut Self {
        self.info(control, &[InfoKind::Read, InfoKind::Pull, InfoKind::Push], container)
    }

    pub fn build(&mut self) -> Result<GraphDef, GraphError> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        let start = self.start.clone().ok_or(GraphError::NoStart)?;
        Ok(GraphDef {
            nodes: core::mem::take(&mut self.nodes),
            control_edges: core::mem::take(&mut self.control_edges),
            info_edges: core::mem::take(&mut self.info_edges),
            start,
        })
    }
}

/// Readable, pullable and pushable containers of one control node.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AccessSets {
    pub readable: BTreeSet<NodeId>,
    pub pullable: BTreeSet<NodeId>,
    pub pushable: BTreeSet<NodeId>,
}

impl GraphDef {
    pub fn start(&self) -> &NodeId {
        &self.start
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&NodeId, &NodeInfo)> {
        self.nodes.iter()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &NodeId> {
        self.nodes.keys()
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn info(&self, id: &NodeId) -> Option<&NodeInfo> {
        self.nodes.get(id)
    }

    pub fn control_edges(&self) -> impl Iterator<Item = &ControlEdge> {
        self.control_edges.iter()
    }

    pub fn info_edges(&self) -> impl Iterator<Item = &InfoEdge> {
        self.info_edges.iter()
    }

    pub fn containers(&self) -> impl Iterator<Item = &NodeId> {
        self.nodes.keys().filter(|id| id.kind().is_container())
    }

    pub fn controls(&self) -> impl Iterator<Item = &NodeId> {
        self.nodes.keys().filter(|id| id.kind().is_control())
    }

    /// Behavior name bound to a control node: the explicit one or the label.
    pub fn behavior_of<'a>(&'a self, id: &'a NodeId) -> &'a str {
        self.nodes
            .get(id)
            .and_then(|info| info.behavior.as_deref())
            .unwrap_or(id.label())
    }

    pub fn owner_of(&self, id: &NodeId) -> Option<&str> {
        self.nodes.get(id).and_then(|info| info.owner.as_deref())
    }

    pub fn is_summary(&self, id: &NodeId) -> bool {
        self.nodes.get(id).is_some_and(|info| info.summary)
    }

    /// Control nodes reachable by one control edge from `c`.
    pub fn targets(&self, c: &NodeId) -> Result<BTreeSet<NodeId>, GraphError> {
        if !self.nodes.contains_key(c) {
            return Err(GraphError::UnknownNode(c.clone()));
        }
        Ok(self
            .control_edges
            .iter()
            .filter(|e| &e.source == c)
            .map(|e| e.target.clone())
            .collect())
    }

    /// Containers `c` can read, pull from and push to. A pull or push edge
    /// also grants reading, so both sets are always subsets of `readable`.
    pub fn access(&self, c: &NodeId) -> Result<AccessSets, GraphError> {
        if !self.nodes.contains_key(c) {
            return Err(GraphError::UnknownNode(c.clone()));
        }
        if !c.kind().is_control() {
            return Err(GraphError::NotControl(c.clone()));
        }
        let mut sets = AccessSets::default();
        for e in self.info_edges.iter().filter(|e| &e.control == c) {
            sets.readable.insert(e.container.clone());
            match e.kind {
                InfoKind::Read => {}
                InfoKind::Pull => {
                    sets.pullable.insert(e.container.clone());
                }
                InfoKind::Push => {
                    sets.pushable.insert(e.container.clone());
                }
            }
        }
        Ok(sets)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Warn,
    Hard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ViolationCode {
    /// Control edge touching a container, or info edge between two nodes of the same class.
    KindPartition,
    StartNotControl,
    PullWithoutRead,
    PushWithoutRead,
    AccessPull,
    AccessPush,
    /// Summary action wired straight to a tank.
    NotationAbuse,
    OutDegree,
    DecisionOutDegree,
    TerminationEdges,
    Unreachable,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::KindPartition => "KIND_PARTITION",
            ViolationCode::StartNotControl => "START_NOT_CONTROL",
            ViolationCode::PullWithoutRead => "PULL_WITHOUT_READ",
            ViolationCode::PushWithoutRead => "PUSH_WITHOUT_READ",
            ViolationCode::AccessPull => "ACCESS_PULL",
            ViolationCode::AccessPush => "ACCESS_PUSH",
            ViolationCode::NotationAbuse => "NOTATION_ABUSE",
            ViolationCode::OutDegree => "OUT_DEGREE",
            ViolationCode::DecisionOutDegree => "DECISION_OUT_DEGREE",
            ViolationCode::TerminationEdges => "TERMINATION_EDGES",
            ViolationCode::Unreachable => "UNREACHABLE",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where a violation sits.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Location {
    Node(NodeId),
    Control(ControlEdge),
    Info(InfoEdge),
    Pair(NodeId, NodeId),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Node(n) => write!(f, "{n}"),
            Location::Control(e) => write!(f, "{} -> {}", e.source, e.target),
            Location::Info(e) => write!(f, "{} {} {}", e.control, e.kind.word(), e.container),
            Location::Pair(a, b) => write!(f, "({a}, {b})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Violation {
    pub code: ViolationCode,
    pub location: Location,
    pub severity: Severity,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Hard => "error",
            Severity::Warn => "warning",
        };
        write!(f, "{sev} {} at {}: {}", self.code, self.location, self.detail)
    }
}

pub fn has_hard(violations: &[Violation]) -> bool {
    violations.iter().any(|v| v.severity == Severity::Hard)
}

/// Check every structural and access rule. Violations are returned sorted.
pub fn validate(g: &GraphDef) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |code, location, severity, detail: String| {
        out.push(Violation {
            code,
            location,
            severity,
            detail,
        })
    };

    if !g.start.kind().is_control() {
        push(
            ViolationCode::StartNotControl,
            Location::Node(g.start.clone()),
            Severity::Hard,
            "start node must be a control node".to_string(),
        );
    }

    for e in &g.control_edges {
        if !e.source.kind().is_control() || !e.target.kind().is_control() {
            push(
                ViolationCode::KindPartition,
                Location::Control(e.clone()),
                Severity::Hard,
                "control edges join control nodes only".to_string(),
            );
        }
    }

    let reads: BTreeSet<(&NodeId, &NodeId)> = g
        .info_edges
        .iter()
        .filter(|e| e.kind == InfoKind::Read)
        .map(|e| (&e.control, &e.container))
        .collect();
    let mut abuse_pairs = BTreeSet::new();
    for e in &g.info_edges {
        if !e.control.kind().is_control() || !e.container.kind().is_container() {
            push(
                ViolationCode::KindPartition,
                Location::Info(e.clone()),
                Severity::Hard,
                "information edges join a control node and a container".to_string(),
            );
            continue;
        }
        let (missing_read, access_code) = match e.kind {
            InfoKind::Read => continue,
            InfoKind::Pull => (ViolationCode::PullWithoutRead, ViolationCode::AccessPull),
            InfoKind::Push => (ViolationCode::PushWithoutRead, ViolationCode::AccessPush),
        };
        if !reads.contains(&(&e.control, &e.container)) {
            push(
                missing_read,
                Location::Info(e.clone()),
                Severity::Hard,
                format!("{} edge has no matching read edge", e.kind.word()),
            );
        }
        let ck = e.control.kind();
        let bk = e.container.kind();
        if !ck.may_modify(bk) {
            if ck == NodeKind::Action && bk == NodeKind::Tank && g.is_summary(&e.control) {
                abuse_pairs.insert((e.control.clone(), e.container.clone()));
            } else {
                push(
                    access_code,
                    Location::Info(e.clone()),
                    Severity::Hard,
                    format!("{} nodes may not {} a {}", ck.word(), e.kind.word(), bk.word()),
                );
            }
        }
    }
    for (c, b) in abuse_pairs {
        push(
            ViolationCode::NotationAbuse,
            Location::Pair(c, b),
            Severity::Warn,
            "summary action modifies a tank directly; legal only once expanded".to_string(),
        );
    }

    let mut out_degree: BTreeMap<&NodeId, usize> = BTreeMap::new();
    for e in &g.control_edges {
        *out_degree.entry(&e.source).or_default() += 1;
    }
    for c in g.controls() {
        let n = out_degree.get(c).copied().unwrap_or(0);
        match c.kind() {
            NodeKind::Decision if n < 2 => push(
                ViolationCode::DecisionOutDegree,
                Location::Node(c.clone()),
                Severity::Hard,
                format!("decision has {n} targets, needs at least 2"),
            ),
            NodeKind::Termination if n > 0 => push(
                ViolationCode::TerminationEdges,
                Location::Node(c.clone()),
                Severity::Warn,
                format!("termination node has {n} outgoing edges that are never taken"),
            ),
            NodeKind::Decision | NodeKind::Termination => {}
            _ if n != 1 => push(
                ViolationCode::OutDegree,
                Location::Node(c.clone()),
                Severity::Hard,
                format!("{} has {n} targets, needs exactly 1", c.kind().word()),
            ),
            _ => {}
        }
    }

    if g.start.kind().is_control() {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::new();
        seen.insert(&g.start);
        queue.push_back(&g.start);
        while let Some(n) = queue.pop_front() {
            for e in g.control_edges.iter().filter(|e| &e.source == n) {
                if seen.insert(&e.target) {
                    queue.push_back(&e.target);
                }
            }
        }
        for c in g.controls() {
            if !seen.contains(c) {
                push(
                    ViolationCode::Unreachable,
                    Location::Node(c.clone()),
                    Severity::Hard,
                    "not reachable from the start node".to_string(),
                );
            }
        }
    }

    out.sort();
    out
}
