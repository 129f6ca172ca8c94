//! Structured triangulations of the unit square conforming to a straight
//! interface, with subdomain/boundary/interface tagging.
//!
//! The construction stretches a uniform `n x n` grid per column so that one
//! grid row lands exactly on the interface; every quad is then split into
//! two triangles along the bottom-left/top-right diagonal. Topology is
//! independent of the interface position: `(n+1)^2` vertices, `2 n^2`
//! triangles.

use crate::{invalid_argument, Result};
use std::io::Write;

/// Straight interface separating the fluid (below) from the solid (above).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InterfaceSpec {
    /// Horizontal line `y = c`.
    Horizontal { c: f64 },
    /// Segment from `(0, y0)` to `(1, y1)`.
    Slanted { y0: f64, y1: f64 },
}

impl InterfaceSpec {
    /// Interface height above `x`.
    pub fn height_at(&self, x: f64) -> f64 {
        match *self {
            InterfaceSpec::Horizontal { c } => c,
            InterfaceSpec::Slanted { y0, y1 } => y0 + (y1 - y0) * x,
        }
    }

    /// Mean height, used to pick the grid row mapped onto the interface.
    fn mean_height(&self) -> f64 {
        match *self {
            InterfaceSpec::Horizontal { c } => c,
            InterfaceSpec::Slanted { y0, y1 } => 0.5 * (y0 + y1),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            InterfaceSpec::Horizontal { c } => c > 0.0 && c < 1.0,
            InterfaceSpec::Slanted { y0, y1 } => y0 > 0.0 && y0 < 1.0 && y1 > 0.0 && y1 < 1.0,
        };
        if ok {
            Ok(())
        } else {
            invalid_argument(format!(
                "interface {self:?} does not separate the top from the bottom of the unit square"
            ))
        }
    }
}

/// Boundary-condition geometry of the outer square.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryLayout {
    /// Dirichlet bottom (fluid) and top (solid); Neumann left/right sides.
    NeumannSides,
    /// Dirichlet on the whole outer boundary of each subdomain.
    DirichletSides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subdomain {
    Fluid,
    Solid,
}

/// Set-valued vertex tags, stored as a bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VertexTags(u8);

impl VertexTags {
    pub const INTERIOR_F: VertexTags = VertexTags(1 << 0);
    pub const INTERIOR_S: VertexTags = VertexTags(1 << 1);
    pub const DIRICHLET_F: VertexTags = VertexTags(1 << 2);
    pub const DIRICHLET_S: VertexTags = VertexTags(1 << 3);
    pub const NEUMANN_F: VertexTags = VertexTags(1 << 4);
    pub const NEUMANN_S: VertexTags = VertexTags(1 << 5);
    pub const INTERFACE: VertexTags = VertexTags(1 << 6);

    pub fn contains(self, other: VertexTags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn insert(&mut self, other: VertexTags) {
        self.0 |= other.0;
    }

    /// Dirichlet tag of the given subdomain.
    pub fn dirichlet(sub: Subdomain) -> VertexTags {
        match sub {
            Subdomain::Fluid => Self::DIRICHLET_F,
            Subdomain::Solid => Self::DIRICHLET_S,
        }
    }
}

/// Interface-conforming triangulation with full entity tagging.
///
/// `interface_vertices` are ordered by strictly increasing `x`;
/// `interface_edges` are the consecutive pairs of that list.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub tri_subdomain: Vec<Subdomain>,
    pub vertex_tags: Vec<VertexTags>,
    pub interface_vertices: Vec<usize>,
    pub interface_edges: Vec<[usize; 2]>,
    /// Nominal mesh size `1/n`.
    pub h: f64,
    pub interface: InterfaceSpec,
    pub layout: BoundaryLayout,
    pub(crate) n: usize,
}

impl Mesh {
    /// Subdivisions per side used to build the mesh.
    pub fn subdivisions(&self) -> usize {
        self.n
    }

    /// Signed doubled area is positive for all triangles by construction;
    /// this returns the (positive) area.
    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let p = self.vertices[a];
        let q = self.vertices[b];
        let r = self.vertices[c];
        0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
    }

    /// Plain-text dump (`vertex x y` / `tri i j k sub` lines) for debugging.
    pub fn dump(&self, mut w: impl Write) -> std::io::Result<()> {
        for v in &self.vertices {
            writeln!(w, "vertex {:.17e} {:.17e}", v[0], v[1])?;
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            let sub = match self.tri_subdomain[t] {
                Subdomain::Fluid => "fluid",
                Subdomain::Solid => "solid",
            };
            writeln!(w, "tri {} {} {} {}", tri[0], tri[1], tri[2], sub)?;
        }
        Ok(())
    }
}

/// Unit tangent/normal frame of the interface and the decomposition
/// `n_f = a*tau + b*s` against the side direction `s = (0, 1)`.
#[derive(Debug, Clone, Copy)]
pub struct TangentFrame {
    /// Unit tangent of the interface, oriented with increasing `x`.
    pub tau: [f64; 2],
    /// Unit normal pointing from the fluid into the solid.
    pub normal_f: [f64; 2],
    pub a: f64,
    pub b: f64,
    /// Tangent of the vertical sides.
    pub side: [f64; 2],
}

/// Tangent/normal decomposition of a straight interface.
///
/// The scalars satisfy `normal_f = a*tau + b*side` exactly; `a = 0`, `b = 1`
/// for a horizontal interface.
pub fn tangent_normal(spec: InterfaceSpec) -> TangentFrame {
    let slope = match spec {
        InterfaceSpec::Horizontal { .. } => 0.0,
        InterfaceSpec::Slanted { y0, y1 } => y1 - y0,
    };
    let len = (1.0 + slope * slope).sqrt();
    let tau = [1.0 / len, slope / len];
    let normal_f = [-tau[1], tau[0]];
    // Solve normal_f = a*tau + b*(0,1): the x component fixes a, the y
    // component fixes b. tau[0] > 0 since the interface is never vertical.
    let a = normal_f[0] / tau[0];
    let b = normal_f[1] - a * tau[1];
    TangentFrame {
        tau,
        normal_f,
        a,
        b,
        side: [0.0, 1.0],
    }
}

/// Build an interface-conforming triangulation of the unit square.
///
/// Grid row `r = ceil(n * mean_height)` (clamped to `[1, n-1]`) is mapped
/// onto the interface column by column; rows below are spaced uniformly in
/// `[0, y_sigma(x)]`, rows above uniformly in `[y_sigma(x), 1]`.
pub fn build_mesh(n: usize, spec: InterfaceSpec, layout: BoundaryLayout) -> Result<Mesh> {
    if n < 2 {
        return invalid_argument(format!("need at least 2 subdivisions per side, got {n}"));
    }
    spec.validate()?;

    let r = ((n as f64 * spec.mean_height()).ceil() as usize).clamp(1, n - 1);
    let stride = n + 1;
    let vid = |i: usize, j: usize| j * stride + i;

    let mut vertices = Vec::with_capacity(stride * stride);
    for j in 0..=n {
        for i in 0..=n {
            let x = i as f64 / n as f64;
            let ys = spec.height_at(x);
            if ys <= 0.0 || ys >= 1.0 {
                return invalid_argument(format!("interface leaves the unit square at x={x}"));
            }
            let y = if j <= r {
                ys * (j as f64 / r as f64)
            } else {
                ys + (1.0 - ys) * ((j - r) as f64 / (n - r) as f64)
            };
            vertices.push([x, y]);
        }
    }

    let mut triangles = Vec::with_capacity(2 * n * n);
    let mut tri_subdomain = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (bl, br) = (vid(i, j), vid(i + 1, j));
            let (tl, tr) = (vid(i, j + 1), vid(i + 1, j + 1));
            triangles.push([bl, br, tr]);
            triangles.push([bl, tr, tl]);
            let sub = if j < r {
                Subdomain::Fluid
            } else {
                Subdomain::Solid
            };
            tri_subdomain.push(sub);
            tri_subdomain.push(sub);
        }
    }

    let mut vertex_tags = vec![VertexTags::default(); vertices.len()];
    for j in 0..=n {
        for i in 0..=n {
            let tags = &mut vertex_tags[vid(i, j)];
            if j == r {
                tags.insert(VertexTags::INTERFACE);
            }
            let on_side = i == 0 || i == n;
            match layout {
                BoundaryLayout::NeumannSides => {
                    if j == 0 {
                        tags.insert(VertexTags::DIRICHLET_F);
                    } else if j == n {
                        tags.insert(VertexTags::DIRICHLET_S);
                    } else if on_side {
                        if j <= r {
                            tags.insert(VertexTags::NEUMANN_F);
                        }
                        if j >= r {
                            tags.insert(VertexTags::NEUMANN_S);
                        }
                    }
                }
                BoundaryLayout::DirichletSides => {
                    if j == 0 || (on_side && j <= r) {
                        tags.insert(VertexTags::DIRICHLET_F);
                    }
                    if j == n || (on_side && j >= r) {
                        tags.insert(VertexTags::DIRICHLET_S);
                    }
                }
            }
            if !on_side && j > 0 && j < r {
                tags.insert(VertexTags::INTERIOR_F);
            }
            if !on_side && j > r && j < n {
                tags.insert(VertexTags::INTERIOR_S);
            }
        }
    }

    let interface_vertices: Vec<usize> = (0..=n).map(|i| vid(i, r)).collect();
    let interface_edges: Vec<[usize; 2]> = interface_vertices
        .windows(2)
        .map(|w| [w[0], w[1]])
        .collect();

    Ok(Mesh {
        vertices,
        triangles,
        tri_subdomain,
        vertex_tags,
        interface_vertices,
        interface_edges,
        h: 1.0 / n as f64,
        interface: spec,
        layout,
        n,
    })
}
