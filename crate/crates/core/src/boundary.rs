//! Boundary tagging and resolution of Dirichlet values and flux loads.

use serde::{Deserialize, Serialize};

use crate::element::gauss_line_2;
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    /// Prescribed temperature `T*`.
    DirichletT,
    /// Prescribed heat flux `q_h` (positive into the domain).
    FluxT,
    /// Prescribed modified pressure `P*`.
    DirichletP,
    /// Prescribed outward normal velocity `q_f`.
    FluxU,
}

impl BoundaryKind {
    pub fn is_dirichlet(self) -> bool {
        matches!(self, BoundaryKind::DirichletT | BoundaryKind::DirichletP)
    }
}

/// Selection of boundary entities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Region {
    /// A whole side.
    Side { side: Side },
    /// Edges of `side` whose midpoint coordinate along the side lies in `[from, to]`.
    Segment { side: Side, from: f64, to: f64 },
    /// The single node nearest to `(x, y)`; must be a boundary node.
    Point { x: f64, y: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySet {
    pub name: String,
    pub kind: BoundaryKind,
    pub value: f64,
    /// `(element, local edge)` pairs; empty for point selections.
    pub edges: Vec<(usize, usize)>,
    /// Sorted, unique nodes touched by the selection.
    pub nodes: Vec<usize>,
}

/// Selects boundary entities in `region` and attaches a condition to them.
pub fn tag_boundary(
    mesh: &Mesh,
    name: &str,
    region: Region,
    kind: BoundaryKind,
    value: f64,
) -> Result<BoundarySet> {
    if !value.is_finite() {
        return Err(Error::Setup(format!("boundary '{name}': non-finite value")));
    }
    let (edges, mut nodes) = match region {
        Region::Side { side } => {
            let edges = mesh.boundary_edges(side);
            let nodes = edge_nodes(mesh, &edges);
            (edges, nodes)
        }
        Region::Segment { side, from, to } => {
            let extent = match side {
                Side::Bottom | Side::Top => mesh.width,
                Side::Left | Side::Right => mesh.height,
            };
            let tol = 1e-9 * extent;
            if from > to || from < -tol || to > extent + tol {
                return Err(Error::Setup(format!(
                    "boundary '{name}': segment [{from}, {to}] outside side extent [0, {extent}]"
                )));
            }
            let edges: Vec<_> = mesh
                .boundary_edges(side)
                .into_iter()
                .filter(|&(e, le)| {
                    let m = mesh.edge_midpoint(e, le);
                    let s = match side {
                        Side::Bottom | Side::Top => m[0],
                        Side::Left | Side::Right => m[1],
                    };
                    s >= from - tol && s <= to + tol
                })
                .collect();
            let nodes = edge_nodes(mesh, &edges);
            (edges, nodes)
        }
        Region::Point { x, y } => {
            let n = mesh.nearest_node([x, y]);
            let p = mesh.node_coords[n];
            let d = ((p[0] - x).powi(2) + (p[1] - y).powi(2)).sqrt();
            if !mesh.is_boundary_node(n) || d > 0.5 * mesh.hx.max(mesh.hy) {
                return Err(Error::Setup(format!(
                    "boundary '{name}': no boundary node near ({x}, {y})"
                )));
            }
            (Vec::new(), vec![n])
        }
    };
    if nodes.is_empty() {
        return Err(Error::Setup(format!("boundary '{name}': empty selection")));
    }
    if edges.is_empty() && !kind.is_dirichlet() {
        return Err(Error::Setup(format!(
            "boundary '{name}': flux conditions need edges, not a point"
        )));
    }
    nodes.sort_unstable();
    nodes.dedup();
    Ok(BoundarySet {
        name: name.to_string(),
        kind,
        value,
        edges,
        nodes,
    })
}

fn edge_nodes(mesh: &Mesh, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut nodes: Vec<usize> = edges
        .iter()
        .flat_map(|&(e, le)| mesh.edge_nodes(e, le))
        .collect();
    nodes.sort_unstable();
    nodes.dedup();
    nodes
}

/// Boundary sets resolved to per-node Dirichlet values and consistent flux loads.
#[derive(Debug, Clone)]
pub struct BoundaryConditions {
    pub sets: Vec<BoundarySet>,
    pub dirichlet_p: Vec<Option<f64>>,
    pub dirichlet_t: Vec<Option<f64>>,
    /// `int N_a q_h dS` over flux-T edges.
    pub heat_load: Vec<f64>,
    /// `int N_a q_f dS` over flux-u edges.
    pub flow_load: Vec<f64>,
    pub has_heat_flux: bool,
}

impl BoundaryConditions {
    pub fn new(mesh: &Mesh, sets: Vec<BoundarySet>) -> Result<Self> {
        let nn = mesh.n_nodes();
        let mut dirichlet_p = vec![None; nn];
        let mut dirichlet_t = vec![None; nn];
        let mut heat_load = vec![0.0; nn];
        let mut flow_load = vec![0.0; nn];
        let mut has_heat_flux = false;
        for set in &sets {
            match set.kind {
                BoundaryKind::DirichletP | BoundaryKind::DirichletT => {
                    let target = if set.kind == BoundaryKind::DirichletP {
                        &mut dirichlet_p
                    } else {
                        &mut dirichlet_t
                    };
                    for &n in &set.nodes {
                        match target[n] {
                            Some(v) if v != set.value => {
                                return Err(Error::Setup(format!(
                                    "conflicting Dirichlet values {v} and {} at node {n} (set '{}')",
                                    set.value, set.name
                                )));
                            }
                            _ => target[n] = Some(set.value),
                        }
                    }
                }
                BoundaryKind::FluxT | BoundaryKind::FluxU => {
                    let load = if set.kind == BoundaryKind::FluxT {
                        has_heat_flux = true;
                        &mut heat_load
                    } else {
                        &mut flow_load
                    };
                    for &(e, le) in &set.edges {
                        let len = mesh.edge_length(le);
                        let [a, b] = mesh.edge_nodes(e, le);
                        for (s, w) in gauss_line_2() {
                            let jw = w * len / 2.0;
                            load[a] += jw * 0.5 * (1.0 - s) * set.value;
                            load[b] += jw * 0.5 * (1.0 + s) * set.value;
                        }
                    }
                }
            }
        }
        Ok(BoundaryConditions {
            sets,
            dirichlet_p,
            dirichlet_t,
            heat_load,
            flow_load,
            has_heat_flux,
        })
    }

    /// Total prescribed heat input through flux boundaries.
    pub fn heat_input(&self) -> f64 {
        self.heat_load.iter().sum()
    }

    /// Edges of all flux-T sets with a nonzero flux.
    pub fn heater_edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.sets
            .iter()
            .filter(|s| s.kind == BoundaryKind::FluxT && s.value != 0.0)
            .flat_map(|s| s.edges.iter().map(move |&(e, le)| (e, le, s.value)))
    }
}
