//! P1 finite-element assembly per subdomain and on the interface.
//!
//! Volume forms use exact element integration (P1 mass and stiffness);
//! load vectors use the 3-midpoint triangle rule (exact to degree 2).
//! Dirichlet conditions are imposed by DOF elimination, so every assembled
//! volume operator is restricted to the free DOFs of its subdomain.

use crate::exec::{self, ExecMode};
use crate::mesh::{InterfaceSpec, Mesh, Subdomain, VertexTags};
use crate::sparse::{SparseBuilder, SparseMatrix};
use crate::{invalid_argument, Error, Result};

/// Map between mesh vertices and the solver DOFs of one subdomain
/// (Dirichlet-tagged vertices are excluded).
#[derive(Debug, Clone)]
pub struct DofMap {
    subdomain: Subdomain,
    global_of_vertex: Vec<Option<usize>>,
    vertex_of_global: Vec<usize>,
    /// For each interface node (in interface order): its DOF, if free.
    interface_nodes: Vec<Option<usize>>,
}

impl DofMap {
    pub fn new(mesh: &Mesh, subdomain: Subdomain) -> Self {
        Self::build(mesh, subdomain, true)
    }

    /// All vertices of the subdomain become DOFs (pure-Neumann spaces);
    /// used by assembly sanity checks and conservation tests.
    pub fn unconstrained(mesh: &Mesh, subdomain: Subdomain) -> Self {
        Self::build(mesh, subdomain, false)
    }

    fn build(mesh: &Mesh, subdomain: Subdomain, eliminate_dirichlet: bool) -> Self {
        let mut in_subdomain = vec![false; mesh.vertices.len()];
        for (t, tri) in mesh.triangles.iter().enumerate() {
            if mesh.tri_subdomain[t] == subdomain {
                for &v in tri {
                    in_subdomain[v] = true;
                }
            }
        }
        let dirichlet = VertexTags::dirichlet(subdomain);
        let mut global_of_vertex = vec![None; mesh.vertices.len()];
        let mut vertex_of_global = Vec::new();
        for v in 0..mesh.vertices.len() {
            if in_subdomain[v] && !(eliminate_dirichlet && mesh.vertex_tags[v].contains(dirichlet))
            {
                global_of_vertex[v] = Some(vertex_of_global.len());
                vertex_of_global.push(v);
            }
        }
        let interface_nodes = mesh
            .interface_vertices
            .iter()
            .map(|&v| global_of_vertex[v])
            .collect();
        DofMap {
            subdomain,
            global_of_vertex,
            vertex_of_global,
            interface_nodes,
        }
    }

    pub fn subdomain(&self) -> Subdomain {
        self.subdomain
    }

    pub fn len(&self) -> usize {
        self.vertex_of_global.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertex_of_global.is_empty()
    }

    pub fn dof_of_vertex(&self, v: usize) -> Option<usize> {
        self.global_of_vertex[v]
    }

    pub fn vertex_of_dof(&self, dof: usize) -> usize {
        self.vertex_of_global[dof]
    }

    /// DOF of the k-th interface node (interface order), if free.
    pub fn interface_node_dof(&self, k: usize) -> Option<usize> {
        self.interface_nodes[k]
    }

    /// Ordered DOF indices lying on the interface.
    pub fn interface_dofs(&self) -> Vec<usize> {
        self.interface_nodes.iter().filter_map(|d| *d).collect()
    }

    pub fn interface_node_count(&self) -> usize {
        self.interface_nodes.len()
    }

    /// Nodal interpolant of `f` on this subdomain's DOFs.
    pub fn interpolate(&self, mesh: &Mesh, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        self.vertex_of_global
            .iter()
            .map(|&v| f(mesh.vertices[v]))
            .collect()
    }
}

/// `L^2(Sigma)` mass and tangential-derivative operators over the interface
/// nodes (interface order, endpoints included).
#[derive(Debug, Clone)]
pub struct InterfaceOperator {
    /// `<phi_j, phi_i>` over the interface, exact 1D P1 rule.
    pub mass: SparseMatrix,
    /// `<d phi_j / ds, phi_i>` with the arc-length derivative taken along
    /// increasing x.
    pub tangential: SparseMatrix,
}

fn tri_vertices(mesh: &Mesh, t: usize) -> ([usize; 3], [[f64; 2]; 3]) {
    let tri = mesh.triangles[t];
    (
        tri,
        [
            mesh.vertices[tri[0]],
            mesh.vertices[tri[1]],
            mesh.vertices[tri[2]],
        ],
    )
}

fn tri_geometry(p: &[[f64; 2]; 3]) -> (f64, [f64; 3], [f64; 3]) {
    // Gradient coefficients: grad(phi_i) = (b_i, c_i) / (2A).
    let b = [p[1][1] - p[2][1], p[2][1] - p[0][1], p[0][1] - p[1][1]];
    let c = [p[2][0] - p[1][0], p[0][0] - p[2][0], p[1][0] - p[0][0]];
    let area = 0.5 * (b[0] * c[1] - b[1] * c[0]).abs();
    (area, b, c)
}

fn scatter_elements(
    dofs: &DofMap,
    triangles: &[(usize, [[f64; 3]; 3])],
    mesh: &Mesh,
) -> SparseMatrix {
    let mut builder = SparseBuilder::new(dofs.len());
    for &(t, ref elem) in triangles {
        let tri = mesh.triangles[t];
        for (li, &vi) in tri.iter().enumerate() {
            let Some(gi) = dofs.dof_of_vertex(vi) else {
                continue;
            };
            for (lj, &vj) in tri.iter().enumerate() {
                if let Some(gj) = dofs.dof_of_vertex(vj) {
                    builder.add(gi, gj, elem[li][lj]);
                }
            }
        }
    }
    builder.build()
}

fn subdomain_triangles(mesh: &Mesh, subdomain: Subdomain) -> Vec<usize> {
    (0..mesh.triangles.len())
        .filter(|&t| mesh.tri_subdomain[t] == subdomain)
        .collect()
}

/// P1 mass matrix of one subdomain (SPD).
pub fn assemble_mass(mesh: &Mesh, dofs: &DofMap) -> SparseMatrix {
    assemble_mass_with(ExecMode::auto(), mesh, dofs)
}

pub fn assemble_mass_with(mode: ExecMode, mesh: &Mesh, dofs: &DofMap) -> SparseMatrix {
    let tris = subdomain_triangles(mesh, dofs.subdomain());
    let elems = exec::map_collect(mode, tris.len(), |idx| {
        let t = tris[idx];
        let (_, p) = tri_vertices(mesh, t);
        let (area, _, _) = tri_geometry(&p);
        let s = area / 12.0;
        let mut e = [[s; 3]; 3];
        for d in 0..3 {
            e[d][d] = 2.0 * s;
        }
        (t, e)
    });
    scatter_elements(dofs, &elems, mesh)
}

/// P1 stiffness matrix `nu * (grad u, grad v)` of one subdomain.
pub fn assemble_stiffness(mesh: &Mesh, dofs: &DofMap, nu: f64) -> Result<SparseMatrix> {
    assemble_stiffness_with(ExecMode::auto(), mesh, dofs, nu)
}

pub fn assemble_stiffness_with(
    mode: ExecMode,
    mesh: &Mesh,
    dofs: &DofMap,
    nu: f64,
) -> Result<SparseMatrix> {
    if nu <= 0.0 {
        return invalid_argument(format!("diffusivity must be positive, got {nu}"));
    }
    let tris = subdomain_triangles(mesh, dofs.subdomain());
    let elems = exec::map_collect(mode, tris.len(), |idx| {
        let t = tris[idx];
        let (_, p) = tri_vertices(mesh, t);
        let (area, b, c) = tri_geometry(&p);
        let f = nu / (4.0 * area);
        let mut e = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                e[i][j] = f * (b[i] * b[j] + c[i] * c[j]);
            }
        }
        (t, e)
    });
    Ok(scatter_elements(dofs, &elems, mesh))
}

/// Interface mass and tangential operators on the mesh's interface chain.
pub fn assemble_interface(mesh: &Mesh, spec: InterfaceSpec) -> Result<InterfaceOperator> {
    if mesh.interface != spec {
        return invalid_argument(format!(
            "mesh was built for {:?}, not {spec:?}",
            mesh.interface
        ));
    }
    let m = mesh.interface_vertices.len();
    let mut mass = SparseBuilder::new(m);
    let mut tangential = SparseBuilder::new(m);
    for (k, edge) in mesh.interface_edges.iter().enumerate() {
        let pa = mesh.vertices[edge[0]];
        let pb = mesh.vertices[edge[1]];
        let len = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
        let (a, b) = (k, k + 1);
        mass.add(a, a, len / 3.0);
        mass.add(a, b, len / 6.0);
        mass.add(b, a, len / 6.0);
        mass.add(b, b, len / 3.0);
        // d(phi)/ds is -1/len for the left node and +1/len for the right;
        // integrating against each hat gives len/2.
        tangential.add(a, a, -0.5);
        tangential.add(a, b, 0.5);
        tangential.add(b, a, -0.5);
        tangential.add(b, b, 0.5);
    }
    Ok(InterfaceOperator {
        mass: mass.build(),
        tangential: tangential.build(),
    })
}

/// Load vector `(f(., t), phi_i)` over the subdomain's DOFs, 3-midpoint rule.
pub fn assemble_load(
    mesh: &Mesh,
    dofs: &DofMap,
    f: impl Fn(f64, [f64; 2]) -> f64 + Sync,
    t: f64,
) -> Vec<f64> {
    assemble_load_with(ExecMode::auto(), mesh, dofs, f, t)
}

pub fn assemble_load_with(
    mode: ExecMode,
    mesh: &Mesh,
    dofs: &DofMap,
    f: impl Fn(f64, [f64; 2]) -> f64 + Sync,
    t: f64,
) -> Vec<f64> {
    let tris = subdomain_triangles(mesh, dofs.subdomain());
    let locals = exec::map_collect(mode, tris.len(), |idx| {
        let tid = tris[idx];
        let (_, p) = tri_vertices(mesh, tid);
        let (area, _, _) = tri_geometry(&p);
        let mid = |a: usize, b: usize| [0.5 * (p[a][0] + p[b][0]), 0.5 * (p[a][1] + p[b][1])];
        let f01 = f(t, mid(0, 1));
        let f12 = f(t, mid(1, 2));
        let f20 = f(t, mid(2, 0));
        let w = area / 6.0;
        (tid, [w * (f01 + f20), w * (f01 + f12), w * (f12 + f20)])
    });
    let mut out = vec![0.0; dofs.len()];
    for (t, local) in locals {
        for (li, &v) in mesh.triangles[t].iter().enumerate() {
            if let Some(g) = dofs.dof_of_vertex(v) {
                out[g] += local[li];
            }
        }
    }
    out
}

/// Interface load `<g, phi_k>` over interface nodes, 3-point Gauss per edge.
pub fn assemble_interface_load(mesh: &Mesh, g: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
    let m = mesh.interface_vertices.len();
    let mut out = vec![0.0; m];
    // Gauss-Legendre on [0,1]: exact to degree 5.
    let gp = [
        (0.5 - (0.15f64).sqrt(), 5.0 / 18.0),
        (0.5, 8.0 / 18.0),
        (0.5 + (0.15f64).sqrt(), 5.0 / 18.0),
    ];
    for (k, edge) in mesh.interface_edges.iter().enumerate() {
        let pa = mesh.vertices[edge[0]];
        let pb = mesh.vertices[edge[1]];
        let len = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
        for &(s, w) in &gp {
            let x = [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])];
            let gv = g(x) * w * len;
            out[k] += gv * (1.0 - s);
            out[k + 1] += gv * s;
        }
    }
    out
}

/// Scatter interface-node values into a subdomain vector (zero elsewhere).
pub fn lift_trace(dofs: &DofMap, interface_values: &[f64]) -> Result<Vec<f64>> {
    if interface_values.len() != dofs.interface_node_count() {
        return Err(Error::DimensionMismatch {
            expected: dofs.interface_node_count(),
            got: interface_values.len(),
        });
    }
    let mut out = vec![0.0; dofs.len()];
    for (k, val) in interface_values.iter().enumerate() {
        if let Some(d) = dofs.interface_node_dof(k) {
            out[d] = *val;
        }
    }
    Ok(out)
}

/// Interface-node values of a subdomain vector; constrained interface
/// endpoints read as zero.
pub fn restrict_trace(dofs: &DofMap, subdomain_values: &[f64]) -> Result<Vec<f64>> {
    if subdomain_values.len() != dofs.len() {
        return Err(Error::DimensionMismatch {
            expected: dofs.len(),
            got: subdomain_values.len(),
        });
    }
    Ok((0..dofs.interface_node_count())
        .map(|k| {
            dofs.interface_node_dof(k)
                .map_or(0.0, |d| subdomain_values[d])
        })
        .collect())
}
