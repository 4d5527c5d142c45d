//! Bilinear shape functions, Gauss rules and the element matrices shared by every
//! element of a uniform rectangular grid.

use crate::mesh::Mesh;

/// Local node positions on the reference square, counter-clockwise from `(-1, -1)`.
pub const REF_NODES: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];

/// Bilinear basis `N_a = (1 + xi_a xi)(1 + eta_a eta) / 4` and its reference gradients.
pub fn shape_eval(xi: f64, eta: f64) -> ([f64; 4], [[f64; 2]; 4]) {
    let mut n = [0.0; 4];
    let mut dn = [[0.0; 2]; 4];
    for (a, [xa, ya]) in REF_NODES.iter().enumerate() {
        let fx = 1.0 + xa * xi;
        let fy = 1.0 + ya * eta;
        n[a] = 0.25 * fx * fy;
        dn[a] = [0.25 * xa * fy, 0.25 * ya * fx];
    }
    (n, dn)
}

/// Tensor-product Gauss rule on the reference square.
#[derive(Debug, Clone)]
pub struct QuadRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl QuadRule {
    pub fn gauss_2x2() -> Self {
        let g = 1.0 / 3f64.sqrt();
        let points = vec![[-g, -g], [g, -g], [g, g], [-g, g]];
        QuadRule {
            points,
            weights: vec![1.0; 4],
        }
    }
}

/// Two-point Gauss rule on `[-1, 1]`, used on element edges.
pub fn gauss_line_2() -> [(f64, f64); 2] {
    let g = 1.0 / 3f64.sqrt();
    [(-g, 1.0), (g, 1.0)]
}

pub type Mat4 = [[f64; 4]; 4];

/// Shape data at one quadrature point in physical coordinates.
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub n: [f64; 4],
    pub grad: [[f64; 2]; 4],
    /// Weight times Jacobian determinant.
    pub wdet: f64,
}

/// Integrals of shape-function products over one element. All elements of a
/// uniform grid share the same set.
#[derive(Debug, Clone)]
pub struct ElementMatrices {
    pub area: f64,
    pub qp: Vec<QuadPoint>,
    /// `int dNi/da dNj/db` for `(a, b)` in `xx, xy, yx, yy`.
    pub sxx: Mat4,
    pub sxy: Mat4,
    pub syx: Mat4,
    pub syy: Mat4,
    /// Laplacian stiffness `sxx + syy`.
    pub lap: Mat4,
    /// `int Ni dNj/dx` and `int Ni dNj/dy`.
    pub cx: Mat4,
    pub cy: Mat4,
    pub mass: Mat4,
    pub int_n: [f64; 4],
    /// `int grad Ni`.
    pub int_grad: [[f64; 2]; 4],
    /// `grad Ni` at the centroid.
    pub centroid_grad: [[f64; 2]; 4],
}

impl ElementMatrices {
    pub fn new(hx: f64, hy: f64) -> Self {
        let rule = QuadRule::gauss_2x2();
        let det = hx * hy / 4.0;
        let (sx, sy) = (2.0 / hx, 2.0 / hy);
        let qp: Vec<QuadPoint> = rule
            .points
            .iter()
            .zip(&rule.weights)
            .map(|(&[xi, eta], &w)| {
                let (n, dref) = shape_eval(xi, eta);
                let mut grad = [[0.0; 2]; 4];
                for a in 0..4 {
                    grad[a] = [dref[a][0] * sx, dref[a][1] * sy];
                }
                QuadPoint {
                    n,
                    grad,
                    wdet: w * det,
                }
            })
            .collect();

        let mut m = ElementMatrices {
            area: hx * hy,
            qp: qp.clone(),
            sxx: [[0.0; 4]; 4],
            sxy: [[0.0; 4]; 4],
            syx: [[0.0; 4]; 4],
            syy: [[0.0; 4]; 4],
            lap: [[0.0; 4]; 4],
            cx: [[0.0; 4]; 4],
            cy: [[0.0; 4]; 4],
            mass: [[0.0; 4]; 4],
            int_n: [0.0; 4],
            int_grad: [[0.0; 2]; 4],
            centroid_grad: [[0.0; 2]; 4],
        };
        for q in &qp {
            for i in 0..4 {
                m.int_n[i] += q.wdet * q.n[i];
                m.int_grad[i][0] += q.wdet * q.grad[i][0];
                m.int_grad[i][1] += q.wdet * q.grad[i][1];
                for j in 0..4 {
                    let (gi, gj) = (q.grad[i], q.grad[j]);
                    m.sxx[i][j] += q.wdet * gi[0] * gj[0];
                    m.sxy[i][j] += q.wdet * gi[0] * gj[1];
                    m.syx[i][j] += q.wdet * gi[1] * gj[0];
                    m.syy[i][j] += q.wdet * gi[1] * gj[1];
                    m.cx[i][j] += q.wdet * q.n[i] * gj[0];
                    m.cy[i][j] += q.wdet * q.n[i] * gj[1];
                    m.mass[i][j] += q.wdet * q.n[i] * q.n[j];
                }
            }
        }
        for i in 0..4 {
            for j in 0..4 {
                m.lap[i][j] = m.sxx[i][j] + m.syy[i][j];
            }
        }
        let (_, dref) = shape_eval(0.0, 0.0);
        for a in 0..4 {
            m.centroid_grad[a] = [dref[a][0] * sx, dref[a][1] * sy];
        }
        m
    }

    pub fn for_mesh(mesh: &Mesh) -> Self {
        Self::new(mesh.hx, mesh.hy)
    }
}

pub(crate) fn matvec(m: &Mat4, v: &[f64; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2] + m[i][3] * v[3];
    }
    out
}
