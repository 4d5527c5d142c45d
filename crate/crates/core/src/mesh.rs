//! Structured rectangular meshes of bilinear quadrilaterals.
//!
//! Nodes are numbered row-major from the bottom-left corner, `node = j * (nx + 1) + i`,
//! and elements likewise, `elem = j * nx + i`. Element connectivity runs
//! counter-clockwise starting at the bottom-left node. The y axis points up.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side of the rectangular domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

impl Side {
    /// Local edge index of an element edge lying on this side.
    pub fn local_edge(self) -> usize {
        match self {
            Side::Bottom => 0,
            Side::Right => 1,
            Side::Top => 2,
            Side::Left => 3,
        }
    }

    /// Outward unit normal.
    pub fn normal(self) -> [f64; 2] {
        match self {
            Side::Bottom => [0.0, -1.0],
            Side::Right => [1.0, 0.0],
            Side::Top => [0.0, 1.0],
            Side::Left => [-1.0, 0.0],
        }
    }
}

/// Axis-aligned box `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Rect { x0, x1, y0, y1 }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x0 && p[0] <= self.x1 && p[1] >= self.y0 && p[1] <= self.y1
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub nx: usize,
    pub ny: usize,
    pub width: f64,
    pub height: f64,
    pub hx: f64,
    pub hy: f64,
    pub node_coords: Vec<[f64; 2]>,
    pub elem_nodes: Vec<[usize; 4]>,
}

impl Mesh {
    /// Builds an `nx` by `ny` grid of uniform rectangles covering `[0, width] x [0, height]`.
    pub fn structured(nx: usize, ny: usize, width: f64, height: f64) -> Result<Mesh> {
        if nx == 0 || ny == 0 {
            return Err(Error::Setup(format!(
                "element counts must be positive, got {nx}x{ny}"
            )));
        }
        if !(width > 0.0 && height > 0.0) || !width.is_finite() || !height.is_finite() {
            return Err(Error::Setup(format!(
                "domain extents must be positive, got {width}x{height}"
            )));
        }
        let hx = width / nx as f64;
        let hy = height / ny as f64;
        let mut node_coords = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                node_coords.push([i as f64 * hx, j as f64 * hy]);
            }
        }
        let mut elem_nodes = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let n0 = j * (nx + 1) + i;
                elem_nodes.push([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1]);
            }
        }
        Ok(Mesh {
            nx,
            ny,
            width,
            height,
            hx,
            hy,
            node_coords,
            elem_nodes,
        })
    }

    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn n_elems(&self) -> usize {
        self.nx * self.ny
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn elem_index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Grid position `(i, j)` of an element.
    pub fn elem_ij(&self, e: usize) -> (usize, usize) {
        (e % self.nx, e / self.nx)
    }

    pub fn centroid(&self, e: usize) -> [f64; 2] {
        let (i, j) = self.elem_ij(e);
        [(i as f64 + 0.5) * self.hx, (j as f64 + 0.5) * self.hy]
    }

    pub fn elem_area(&self) -> f64 {
        self.hx * self.hy
    }

    /// Determinant of the map from the reference square `[-1, 1]^2`.
    pub fn jacobian_det(&self) -> f64 {
        self.hx * self.hy / 4.0
    }

    /// Characteristic element size used by the stabilization; equals `hx` for squares.
    pub fn h(&self) -> f64 {
        (self.hx * self.hy).sqrt()
    }

    /// Global node pair of a local edge (0 bottom, 1 right, 2 top, 3 left), in
    /// counter-clockwise order.
    pub fn edge_nodes(&self, e: usize, local_edge: usize) -> [usize; 2] {
        let n = self.elem_nodes[e];
        [n[local_edge], n[(local_edge + 1) % 4]]
    }

    pub fn edge_length(&self, local_edge: usize) -> f64 {
        if local_edge % 2 == 0 {
            self.hx
        } else {
            self.hy
        }
    }

    /// Element edges on one side of the domain, ordered along the side.
    pub fn boundary_edges(&self, side: Side) -> Vec<(usize, usize)> {
        let le = side.local_edge();
        match side {
            Side::Bottom => (0..self.nx).map(|i| (self.elem_index(i, 0), le)).collect(),
            Side::Top => (0..self.nx)
                .map(|i| (self.elem_index(i, self.ny - 1), le))
                .collect(),
            Side::Left => (0..self.ny).map(|j| (self.elem_index(0, j), le)).collect(),
            Side::Right => (0..self.ny)
                .map(|j| (self.elem_index(self.nx - 1, j), le))
                .collect(),
        }
    }

    pub fn edge_midpoint(&self, e: usize, local_edge: usize) -> [f64; 2] {
        let [a, b] = self.edge_nodes(e, local_edge);
        let (pa, pb) = (self.node_coords[a], self.node_coords[b]);
        [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]
    }

    pub fn is_boundary_node(&self, n: usize) -> bool {
        let (i, j) = (n % (self.nx + 1), n / (self.nx + 1));
        i == 0 || j == 0 || i == self.nx || j == self.ny
    }

    /// Node closest to a point.
    pub fn nearest_node(&self, p: [f64; 2]) -> usize {
        let i = (p[0] / self.hx).round().clamp(0.0, self.nx as f64) as usize;
        let j = (p[1] / self.hy).round().clamp(0.0, self.ny as f64) as usize;
        self.node_index(i, j)
    }

    /// Elements whose centroid lies inside the box.
    pub fn elements_in(&self, rect: &Rect) -> Vec<usize> {
        (0..self.n_elems())
            .filter(|&e| rect.contains(self.centroid(e)))
            .collect()
    }
}
