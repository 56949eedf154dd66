//! World model: a landmark-annotated route graph, shortest-path planning
//! and landmark-based instructions.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::NodeId;

#[derive(Debug, Error, PartialEq)]
pub enum RouteError {
    #[error("route graph parse error: {0}")]
    Parse(String),
    #[error("duplicate node id `{0}`")]
    DuplicateNode(NodeId),
    #[error("edge #{index} ({from} -> {to}) references missing node `{missing}`")]
    DanglingEndpoint {
        index: usize,
        from: NodeId,
        to: NodeId,
        missing: NodeId,
    },
    #[error("edge #{index} ({from} -> {to}) has non-positive cost {cost}")]
    NonPositiveCost {
        index: usize,
        from: NodeId,
        to: NodeId,
        cost: f64,
    },
    #[error("edge #{index} ({from} -> {to}) heading {heading} outside [0, 360)")]
    BadHeading {
        index: usize,
        from: NodeId,
        to: NodeId,
        heading: f64,
    },
    #[error("node `{0}` has a shape without a color or a color without a shape")]
    HalfMarker(NodeId),
    #[error("route `{route}` references missing node `{missing}`")]
    DanglingRoute { route: String, missing: NodeId },
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("no route from `{from}` to `{to}`")]
    NoRoute { from: NodeId, to: NodeId },
    #[error("leg index {index} out of range for a plan with {legs} legs")]
    LegOutOfRange { index: usize, legs: usize },
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Square,
    #[serde(alias = "circle")]
    Disk,
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Square => "square",
            Self::Disk => "disk",
            Self::Triangle => "triangle",
        })
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Red => "red",
            Self::Green => "green",
            Self::Blue => "blue",
        })
    }
}

/// A colored geometric shape on the wall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Marker {
    pub shape: Shape,
    pub color: Color,
}

impl Marker {
    pub fn describe(&self) -> String {
        format!("{} {}", self.color, self.shape)
    }
}

/// A graph node: a landmark when it carries a marker, otherwise a named
/// place such as the cafe or the information booth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub label: String,
    pub marker: Option<Marker>,
    pub position: (f64, f64),
}

impl Node {
    pub fn is_landmark(&self) -> bool {
        self.marker.is_some()
    }

    /// How instructions refer to this node.
    pub fn describe(&self) -> String {
        match &self.marker {
            Some(m) => m.describe(),
            None => self.label.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub cost_m: f64,
    pub heading_deg: f64,
}

/// A named study route: start point and destination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteDef {
    pub id: String,
    pub start: NodeId,
    pub destination: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteGraph {
    nodes: BTreeMap<NodeId, Node>,
    edges: Vec<Edge>,
    /// Outgoing edge indices per node, in document order.
    adjacency: BTreeMap<NodeId, Vec<usize>>,
    routes: Vec<RouteDef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelativeTurn {
    Left,
    Right,
    Straight,
    Back,
}

impl RelativeTurn {
    /// Quantizes a signed turn angle in degrees (positive = clockwise).
    pub fn from_angle(angle_deg: f64) -> Self {
        let a = normalize_angle(angle_deg);
        if a.abs() <= 45.0 {
            Self::Straight
        } else if a > 45.0 && a <= 135.0 {
            Self::Right
        } else if (-135.0..-45.0).contains(&a) {
            Self::Left
        } else {
            Self::Back
        }
    }
}

/// Maps an angle into (-180, 180].
pub fn normalize_angle(deg: f64) -> f64 {
    let mut a = deg % 360.0;
    if a > 180.0 {
        a -= 360.0;
    } else if a <= -180.0 {
        a += 360.0;
    }
    a
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub leg_index: usize,
    pub text: String,
    pub relative_turn: RelativeTurn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutePlan {
    pub checkpoints: Vec<NodeId>,
    pub legs: Vec<Instruction>,
    pub total_cost_m: f64,
}

impl RoutePlan {
    pub fn start(&self) -> &NodeId {
        &self.checkpoints[0]
    }

    pub fn destination(&self) -> &NodeId {
        self.checkpoints.last().expect("plans have at least one checkpoint")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    StepByStep,
    FullRoute,
}

// ---- file format ---------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDocument {
    nodes: Vec<NodeRecord>,
    #[serde(default)]
    edges: Vec<EdgeRecord>,
    #[serde(default)]
    routes: Vec<RouteDef>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: String,
    label: String,
    shape: Option<Shape>,
    color: Option<Color>,
    x: f64,
    y: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeRecord {
    from: String,
    to: String,
    cost_m: f64,
    heading_deg: f64,
}

/// The shipped three-route study layout.
pub const CAMPUS_DEFAULT: &str = include_str!("../../../routes/campus_default.toml");

impl RouteGraph {
    pub fn campus_default() -> Self {
        Self::load_route_graph(CAMPUS_DEFAULT).expect("shipped route graph is valid")
    }

    pub fn load_file(path: impl AsRef<Path>) -> Result<Self, RouteError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| RouteError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::load_route_graph(&text)
    }

    pub fn load_route_graph(document: &str) -> Result<Self, RouteError> {
        let doc: GraphDocument =
            toml::from_str(document).map_err(|e| RouteError::Parse(e.to_string()))?;
        let nodes = doc
            .nodes
            .into_iter()
            .map(|n| {
                let id = NodeId::new(n.id);
                let marker = match (n.shape, n.color) {
                    (Some(shape), Some(color)) => Some(Marker { shape, color }),
                    (None, None) => None,
                    _ => return Err(RouteError::HalfMarker(id)),
                };
                Ok(Node {
                    id,
                    label: n.label,
                    marker,
                    position: (n.x, n.y),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let edges = doc
            .edges
            .into_iter()
            .map(|e| Edge {
                from: NodeId::new(e.from),
                to: NodeId::new(e.to),
                cost_m: e.cost_m,
                heading_deg: e.heading_deg,
            })
            .collect();
        Self::from_parts(nodes, edges, doc.routes)
    }

    pub fn from_parts(
        nodes: Vec<Node>,
        edges: Vec<Edge>,
        routes: Vec<RouteDef>,
    ) -> Result<Self, RouteError> {
        let mut node_map = BTreeMap::new();
        for n in nodes {
            if node_map.contains_key(&n.id) {
                return Err(RouteError::DuplicateNode(n.id));
            }
            node_map.insert(n.id.clone(), n);
        }
        let mut adjacency: BTreeMap<NodeId, Vec<usize>> =
            node_map.keys().map(|k| (k.clone(), Vec::new())).collect();
        for (index, e) in edges.iter().enumerate() {
            for end in [&e.from, &e.to] {
                if !node_map.contains_key(end) {
                    return Err(RouteError::DanglingEndpoint {
                        index,
                        from: e.from.clone(),
                        to: e.to.clone(),
                        missing: end.clone(),
                    });
                }
            }
            if !(e.cost_m > 0.0 && e.cost_m.is_finite()) {
                return Err(RouteError::NonPositiveCost {
                    index,
                    from: e.from.clone(),
                    to: e.to.clone(),
                    cost: e.cost_m,
                });
            }
            if !(0.0..360.0).contains(&e.heading_deg) {
                return Err(RouteError::BadHeading {
                    index,
                    from: e.from.clone(),
                    to: e.to.clone(),
                    heading: e.heading_deg,
                });
            }
            adjacency.get_mut(&e.from).expect("checked").push(index);
        }
        for r in &routes {
            for end in [&r.start, &r.destination] {
                if !node_map.contains_key(end) {
                    return Err(RouteError::DanglingRoute {
                        route: r.id.clone(),
                        missing: end.clone(),
                    });
                }
            }
        }
        Ok(Self {
            nodes: node_map,
            edges,
            adjacency,
            routes,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn routes(&self) -> &[RouteDef] {
        &self.routes
    }

    pub fn route(&self, id: &str) -> Option<&RouteDef> {
        self.routes.iter().find(|r| r.id == id)
    }

    pub fn out_edges<'a>(&'a self, id: &NodeId) -> impl Iterator<Item = &'a Edge> + 'a {
        self.adjacency
            .get(id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.edges[i])
    }

    /// Cheapest edge `from -> to`; the first in document order on ties.
    pub fn edge_between(&self, from: &NodeId, to: &NodeId) -> Option<&Edge> {
        self.out_edges(from).filter(|e| &e.to == to).fold(None, |best, e| match best {
            Some(b) if b.cost_m <= e.cost_m => Some(b),
            _ => Some(e),
        })
    }

    /// Cost of walking a node sequence, or `None` when some hop has no edge.
    pub fn path_cost(&self, path: &[NodeId]) -> Option<f64> {
        let mut total = 0.0;
        for w in path.windows(2) {
            total += self.edge_between(&w[0], &w[1])?.cost_m;
        }
        Some(total)
    }

    /// Minimum-cost path; ties go to the lexicographically smallest node-id
    /// sequence.
    pub fn plan_route(&self, start: &NodeId, dest: &NodeId) -> Result<RoutePlan, RouteError> {
        for id in [start, dest] {
            if !self.nodes.contains_key(id) {
                return Err(RouteError::UnknownNode(id.clone()));
            }
        }
        let checkpoints = self
            .shortest_path(start, dest)
            .ok_or_else(|| RouteError::NoRoute {
                from: start.clone(),
                to: dest.clone(),
            })?;
        let total_cost_m = self.path_cost(&checkpoints).expect("path follows edges");
        let legs = (0..checkpoints.len() - 1)
            .map(|i| self.describe_leg(&checkpoints, i))
            .collect();
        Ok(RoutePlan {
            checkpoints,
            legs,
            total_cost_m,
        })
    }

    fn shortest_path(&self, start: &NodeId, dest: &NodeId) -> Option<Vec<NodeId>> {
        let mut heap = BinaryHeap::new();
        let mut settled: HashSet<&NodeId> = HashSet::new();
        heap.push(Label {
            cost: 0.0,
            path: vec![start.clone()],
        });
        while let Some(Label { cost, path }) = heap.pop() {
            let here = path.last().expect("labels are non-empty");
            if !settled.insert(self.nodes.get_key_value(here).expect("known node").0) {
                continue;
            }
            if here == dest {
                return Some(path);
            }
            for e in self.out_edges(here) {
                if settled.contains(&e.to) {
                    continue;
                }
                let mut next = path.clone();
                next.push(e.to.clone());
                heap.push(Label {
                    cost: cost + e.cost_m,
                    path: next,
                });
            }
        }
        None
    }

    fn describe_leg(&self, checkpoints: &[NodeId], leg: usize) -> Instruction {
        let from = &checkpoints[leg];
        let to = &checkpoints[leg + 1];
        let edge = self.edge_between(from, to).expect("plan follows edges");
        let relative_turn = if leg == 0 {
            RelativeTurn::Straight
        } else {
            let prev = self
                .edge_between(&checkpoints[leg - 1], from)
                .expect("plan follows edges");
            RelativeTurn::from_angle(edge.heading_deg - prev.heading_deg)
        };
        let target = self.nodes[to].describe();
        let last = leg + 2 == checkpoints.len();
        let text = leg_text(leg, last, relative_turn, &target);
        Instruction {
            leg_index: leg,
            text,
            relative_turn,
        }
    }
}

fn leg_text(leg: usize, last: bool, turn: RelativeTurn, target: &str) -> String {
    use RelativeTurn::*;
    match (leg, last, turn) {
        (0, false, _) => format!("Walk to the {target}."),
        (0, true, _) => format!("Walk ahead, and the {target} is right in front of you!"),
        (_, false, Straight) => format!("Walk straight ahead to the {target}."),
        (_, false, Left) => format!("Turn left and walk to the {target}."),
        (_, false, Right) => format!("Turn right and walk to the {target}."),
        (_, false, Back) => format!("Turn around and walk back to the {target}."),
        (_, true, Straight) => format!("Walk straight ahead, and the {target} is right in front of you!"),
        (_, true, Left) => format!("Keep walking, and the {target} is on your left!"),
        (_, true, Right) => format!("Keep walking, and the {target} is on your right!"),
        (_, true, Back) => format!("Turn around, and the {target} is behind you!"),
    }
}

/// Instructions for one leg, or for every remaining leg from `leg_index`.
pub fn render_instruction(
    plan: &RoutePlan,
    leg_index: usize,
    mode: RenderMode,
) -> Result<Vec<Instruction>, RouteError> {
    if leg_index >= plan.legs.len() {
        return Err(RouteError::LegOutOfRange {
            index: leg_index,
            legs: plan.legs.len(),
        });
    }
    Ok(match mode {
        RenderMode::StepByStep => vec![plan.legs[leg_index].clone()],
        RenderMode::FullRoute => plan.legs[leg_index..].to_vec(),
    })
}

/// Heading in degrees clockwise from north (+y) for the vector `from -> to`.
pub fn heading_between(from: (f64, f64), to: (f64, f64)) -> f64 {
    let h = (to.0 - from.0).atan2(to.1 - from.1).to_degrees();
    let h = if h < 0.0 { h + 360.0 } else { h };
    if h >= 360.0 {
        0.0
    } else {
        h
    }
}

struct Label {
    cost: f64,
    path: Vec<NodeId>,
}

impl PartialEq for Label {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Label {}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Label {
    // Reversed: BinaryHeap is a max-heap and we want the cheapest, then
    // lexicographically smallest, label on top.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.path.cmp(&self.path))
    }
}
