//! Time-stepping schemes for the coupled problem: the Robin-Robin
//! prediction step, the defect-correction step sharing the same operators,
//! the tangentially modified variants for the Dirichlet geometry, and a
//! strongly coupled monolithic reference.
//!
//! The step operators are constant in time, so each subdomain matrix is
//! factored exactly once per (mesh, dt, alpha, nu) tuple and reused for all
//! time steps of both the prediction and the correction pass. The
//! eliminated multiplier makes every split solve a plain SPD system; the
//! tangential term of the modified schemes is a low-rank interface update
//! handled by a capacitance block around the same Cholesky factor.

use crate::assembly::{
    assemble_interface, assemble_interface_load, assemble_load, assemble_mass, assemble_stiffness,
    lift_trace, restrict_trace, DofMap, InterfaceOperator,
};
use crate::dense::{DenseLu, DenseMatrix};
use crate::mesh::{tangent_normal, BoundaryLayout, Mesh, Subdomain};
use crate::problems::ProblemSpec;
use crate::sparse::{factorize, solve_pcg, CholeskyFactor, SparseBuilder, SparseMatrix};
use crate::{invalid_argument, Error, Result};

/// Above this DOF count the SPD solves fall back to preconditioned
/// conjugate gradients instead of a direct factorization.
const DIRECT_SOLVE_DOF_LIMIT: usize = 400_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Prediction,
    Correction,
    ModifiedPrediction,
    ModifiedCorrection,
    Monolithic,
}

impl Scheme {
    pub fn parse(label: &str) -> Option<Scheme> {
        match label {
            "prediction" => Some(Scheme::Prediction),
            "correction" => Some(Scheme::Correction),
            "modified-prediction" => Some(Scheme::ModifiedPrediction),
            "modified-correction" => Some(Scheme::ModifiedCorrection),
            "monolithic" => Some(Scheme::Monolithic),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Scheme::Prediction => "prediction",
            Scheme::Correction => "correction",
            Scheme::ModifiedPrediction => "modified-prediction",
            Scheme::ModifiedCorrection => "modified-correction",
            Scheme::Monolithic => "monolithic",
        }
    }

    pub fn is_modified(self) -> bool {
        matches!(
            self,
            Scheme::ModifiedPrediction | Scheme::ModifiedCorrection
        )
    }

    /// Whether the scheme runs a correction pass on top of the prediction.
    pub fn has_correction(self) -> bool {
        matches!(self, Scheme::Correction | Scheme::ModifiedCorrection)
    }
}

/// Discrete fields at one time level.
#[derive(Debug, Clone)]
pub struct CoupledState {
    pub t: f64,
    /// Solid DOF vector.
    pub w: Vec<f64>,
    /// Fluid DOF vector.
    pub u: Vec<f64>,
    /// Multiplier values at the interface nodes.
    pub lambda: Vec<f64>,
}

enum OperatorSolver {
    Direct(CholeskyFactor),
    /// SPD factor plus the tangential interface block, applied through the
    /// capacitance formula `(S + P G P')^{-1} = S^{-1} - S^{-1} P G (I + H G)^{-1} P' S^{-1}`.
    InterfaceUpdated {
        chol: CholeskyFactor,
        iface_dofs: Vec<usize>,
        g: DenseMatrix,
        cap: DenseLu,
    },
    Iterative(SparseMatrix),
}

impl OperatorSolver {
    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        match self {
            OperatorSolver::Direct(chol) => chol.solve(rhs),
            OperatorSolver::Iterative(a) => solve_pcg(a, rhs),
            OperatorSolver::InterfaceUpdated {
                chol,
                iface_dofs,
                g,
                cap,
            } => {
                let y = chol.solve(rhs)?;
                let t0: Vec<f64> = iface_dofs.iter().map(|&d| y[d]).collect();
                let t = cap.solve(&t0)?;
                let gt = g.matvec(&t);
                let mut scattered = vec![0.0; rhs.len()];
                for (k, &d) in iface_dofs.iter().enumerate() {
                    scattered[d] = gt[k];
                }
                let z = chol.solve(&scattered)?;
                Ok(y.iter().zip(&z).map(|(a, b)| a - b).collect())
            }
        }
    }
}

struct SubdomainOps {
    dofs: DofMap,
    mass: SparseMatrix,
    /// Unweighted stiffness (nu = 1), used for norms and the correction RHS.
    stiff1: SparseMatrix,
    solver: OperatorSolver,
}

/// Everything a time step needs: factored operators, interface operators,
/// and the scheme parameters.
pub struct StepOperators {
    pub mesh: Mesh,
    pub problem: ProblemSpec,
    pub scheme: Scheme,
    pub dt: f64,
    solid: SubdomainOps,
    fluid: SubdomainOps,
    iface: InterfaceOperator,
    iface_mass_chol: CholeskyFactor,
    /// Tangential decomposition scalars; `(0, 1)` for the unmodified schemes.
    pub a: f64,
    pub b: f64,
    monolithic: Option<MonolithicOps>,
}

struct MonolithicOps {
    lu: DenseLu,
    ns: usize,
    nf: usize,
}

impl StepOperators {
    pub fn new(mesh: &Mesh, problem: &ProblemSpec, dt: f64, scheme: Scheme) -> Result<Self> {
        Self::with_spaces(mesh, problem, dt, scheme, true)
    }

    /// `constrain = false` keeps every vertex a DOF (pure-Neumann function
    /// spaces); used by conservation checks.
    pub fn with_spaces(
        mesh: &Mesh,
        problem: &ProblemSpec,
        dt: f64,
        scheme: Scheme,
        constrain: bool,
    ) -> Result<Self> {
        if dt <= 0.0 {
            return invalid_argument(format!("time step must be positive, got {dt}"));
        }
        let (a, b) = if scheme.is_modified() {
            if problem.nu_f != problem.nu_s {
                return invalid_argument(
                    "modified schemes require equal diffusivities nu_f = nu_s",
                );
            }
            if mesh.layout != BoundaryLayout::DirichletSides {
                return invalid_argument("modified schemes require the Dirichlet geometry");
            }
            let frame = tangent_normal(mesh.interface);
            (frame.a, frame.b)
        } else {
            (0.0, 1.0)
        };

        let make_dofs = |sub| {
            if constrain {
                DofMap::new(mesh, sub)
            } else {
                DofMap::unconstrained(mesh, sub)
            }
        };
        let solid_dofs = make_dofs(Subdomain::Solid);
        let fluid_dofs = make_dofs(Subdomain::Fluid);
        let iface = assemble_interface(mesh, mesh.interface)?;
        let iface_mass_chol = factorize(&iface.mass)?;

        let alpha = problem.alpha;
        // Robin weight of the solid equation; the fluid operator always
        // carries plain alpha from the multiplier elimination.
        let solid_robin = if scheme.is_modified() {
            b * alpha
        } else {
            alpha
        };

        let build =
            |dofs: &DofMap, nu: f64, robin: f64, tangential_sign: f64| -> Result<SubdomainOps> {
                let mass = assemble_mass(mesh, dofs);
                let stiff1 = assemble_stiffness(mesh, dofs, 1.0)?;
                let solver = if scheme == Scheme::Monolithic {
                    // The monolithic scheme solves one coupled block system; no
                    // per-subdomain factorization is needed.
                    OperatorSolver::Iterative(SparseMatrix::zeros(0))
                } else {
                    let mut builder = SparseBuilder::new(dofs.len());
                    for i in 0..dofs.len() {
                        for (j, v) in mass.row(i) {
                            builder.add(i, j, v / dt);
                        }
                        for (j, v) in stiff1.row(i) {
                            builder.add(i, j, nu * v);
                        }
                    }
                    let m_nodes = dofs.interface_node_count();
                    for ki in 0..m_nodes {
                        let Some(di) = dofs.interface_node_dof(ki) else {
                            continue;
                        };
                        for (kj, v) in iface.mass.row(ki) {
                            if let Some(dj) = dofs.interface_node_dof(kj) {
                                builder.add(di, dj, robin * v);
                            }
                        }
                    }
                    let spd = builder.build();
                    if spd.dim() > DIRECT_SOLVE_DOF_LIMIT && tangential_sign == 0.0 {
                        OperatorSolver::Iterative(spd)
                    } else {
                        let chol = factorize(&spd)?;
                        if tangential_sign == 0.0 {
                            OperatorSolver::Direct(chol)
                        } else {
                            Self::interface_updated(chol, dofs, &iface, tangential_sign * a * nu)?
                        }
                    }
                };
                Ok(SubdomainOps {
                    dofs: dofs.clone(),
                    mass,
                    stiff1,
                    solver,
                })
            };

        let tangential = if a != 0.0 { 1.0 } else { 0.0 };
        let solid = build(&solid_dofs, problem.nu_s, solid_robin, tangential)?;
        let fluid = build(&fluid_dofs, problem.nu_f, alpha, -tangential)?;

        let mut ops = StepOperators {
            mesh: mesh.clone(),
            problem: problem.clone(),
            scheme,
            dt,
            solid,
            fluid,
            iface,
            iface_mass_chol,
            a,
            b,
            monolithic: None,
        };
        if scheme == Scheme::Monolithic {
            ops.monolithic = Some(ops.build_monolithic()?);
        }
        Ok(ops)
    }

    /// Build the capacitance machinery for `S + scale * T` where `T` is the
    /// tangential operator restricted to this subdomain's interface DOFs.
    fn interface_updated(
        chol: CholeskyFactor,
        dofs: &DofMap,
        iface: &InterfaceOperator,
        scale: f64,
    ) -> Result<OperatorSolver> {
        let m_nodes = dofs.interface_node_count();
        let pairs: Vec<(usize, usize)> = (0..m_nodes)
            .filter_map(|k| dofs.interface_node_dof(k).map(|d| (k, d)))
            .collect();
        let m = pairs.len();
        let iface_dofs: Vec<usize> = pairs.iter().map(|&(_, d)| d).collect();
        let node_to_local: Vec<Option<usize>> = {
            let mut map = vec![None; m_nodes];
            for (local, &(k, _)) in pairs.iter().enumerate() {
                map[k] = Some(local);
            }
            map
        };
        let mut g = DenseMatrix::zeros(m, m);
        for (li, &(ki, _)) in pairs.iter().enumerate() {
            for (kj, v) in iface.tangential.row(ki) {
                if let Some(lj) = node_to_local[kj] {
                    g[(li, lj)] = scale * v;
                }
            }
        }
        // H = P' S^{-1} P, one solve per interface DOF.
        let n = chol.dim();
        let columns = crate::exec::map_collect(crate::exec::ExecMode::auto(), m, |j| {
            let mut e = vec![0.0; n];
            e[iface_dofs[j]] = 1.0;
            let x = chol.solve(&e).expect("dimension is consistent");
            iface_dofs.iter().map(|&d| x[d]).collect::<Vec<f64>>()
        });
        let mut cap = DenseMatrix::identity(m);
        for i in 0..m {
            for j in 0..m {
                // (H G)[i][j] = sum_k H[i][k] G[k][j]; columns[j][i] = H[i][j].
                let mut acc = 0.0;
                for k in 0..m {
                    acc += columns[k][i] * g[(k, j)];
                }
                cap[(i, j)] += acc;
            }
        }
        let cap = cap.lu()?;
        Ok(OperatorSolver::InterfaceUpdated {
            chol,
            iface_dofs,
            g,
            cap,
        })
    }

    pub fn solid_dofs(&self) -> &DofMap {
        &self.solid.dofs
    }

    pub fn fluid_dofs(&self) -> &DofMap {
        &self.fluid.dofs
    }

    pub fn interface_ops(&self) -> &InterfaceOperator {
        &self.iface
    }

    pub fn solid_mass(&self) -> &SparseMatrix {
        &self.solid.mass
    }

    pub fn fluid_mass(&self) -> &SparseMatrix {
        &self.fluid.mass
    }

    /// Unweighted (`nu = 1`) stiffness of one subdomain.
    pub fn stiffness(&self, sub: Subdomain) -> &SparseMatrix {
        match sub {
            Subdomain::Solid => &self.solid.stiff1,
            Subdomain::Fluid => &self.fluid.stiff1,
        }
    }

    /// Nodal interpolant of the exact solution pair at time `t`.
    pub fn interpolate_exact(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let w = self
            .solid
            .dofs
            .interpolate(&self.mesh, |p| (self.problem.exact_w)(t, p));
        let u = self
            .fluid
            .dofs
            .interpolate(&self.mesh, |p| (self.problem.exact_u)(t, p));
        (w, u)
    }

    /// Interface-node values of the multiplier reference at time `t`.
    pub fn multiplier_reference_nodes(&self, t: f64) -> Vec<f64> {
        let modified = self.scheme.is_modified();
        self.mesh
            .interface_vertices
            .iter()
            .map(|&v| {
                self.problem
                    .multiplier_reference(modified, t, self.mesh.vertices[v])
            })
            .collect()
    }

    /// Initial state: nodal interpolants for the fields and the L2(Sigma)
    /// projection of the exact multiplier reference at t = 0.
    pub fn initial_state(&self) -> Result<CoupledState> {
        let (w, u) = self.interpolate_exact(0.0);
        let modified = self.scheme.is_modified();
        let q = assemble_interface_load(&self.mesh, |p| {
            self.problem.multiplier_reference(modified, 0.0, p)
        });
        let lambda = self.iface_mass_chol.solve(&q)?;
        Ok(CoupledState {
            t: 0.0,
            w,
            u,
            lambda,
        })
    }

    /// Subdomain load vectors at time `t` (empty forcing assembles zeros).
    pub fn assemble_loads(&self, t: f64) -> LoadPair {
        let s = match self.problem.g2 {
            Some(g2) => assemble_load(&self.mesh, &self.solid.dofs, g2, t),
            None => vec![0.0; self.solid.dofs.len()],
        };
        let f = match self.problem.g1 {
            Some(g1) => assemble_load(&self.mesh, &self.fluid.dofs, g1, t),
            None => vec![0.0; self.fluid.dofs.len()],
        };
        LoadPair { s, f }
    }

    /// `<g, phi_i>` for a P1 interface function with the given nodal values,
    /// lifted to the subdomain's DOF vector.
    fn iface_functional(&self, sub: &SubdomainOps, nodal: &[f64]) -> Result<Vec<f64>> {
        lift_trace(&sub.dofs, &self.iface.mass.spmv(nodal))
    }

    /// Tangential functional `<d g/ds, phi_i>` lifted to the subdomain.
    fn tangential_functional(&self, sub: &SubdomainOps, nodal: &[f64]) -> Result<Vec<f64>> {
        lift_trace(&sub.dofs, &self.iface.tangential.spmv(nodal))
    }

    fn build_monolithic(&self) -> Result<MonolithicOps> {
        let ns = self.solid.dofs.len();
        let nf = self.fluid.dofs.len();
        let m = self.mesh.interface_vertices.len();
        let dim = ns + nf + m;
        let mut a = DenseMatrix::zeros(dim, dim);
        for i in 0..ns {
            for (j, v) in self.solid.mass.row(i) {
                a[(i, j)] += v / self.dt;
            }
            for (j, v) in self.solid.stiff1.row(i) {
                a[(i, j)] += self.problem.nu_s * v;
            }
        }
        for i in 0..nf {
            for (j, v) in self.fluid.mass.row(i) {
                a[(ns + i, ns + j)] += v / self.dt;
            }
            for (j, v) in self.fluid.stiff1.row(i) {
                a[(ns + i, ns + j)] += self.problem.nu_f * v;
            }
        }
        // Multiplier coupling (+ on the solid side, - on the fluid side) and
        // the trace constraint <u - w, mu> = 0.
        for k in 0..m {
            for (kj, v) in self.iface.mass.row(k) {
                if let Some(ds) = self.solid.dofs.interface_node_dof(kj) {
                    a[(ds, ns + nf + k)] += v;
                    a[(ns + nf + k, ds)] -= v;
                }
                if let Some(df) = self.fluid.dofs.interface_node_dof(kj) {
                    a[(ns + df, ns + nf + k)] -= v;
                    a[(ns + nf + k, ns + df)] += v;
                }
            }
        }
        Ok(MonolithicOps {
            lu: a.lu()?,
            ns,
            nf,
        })
    }
}

/// Pre-assembled solid/fluid load vectors for one time level.
#[derive(Debug, Clone)]
pub struct LoadPair {
    pub s: Vec<f64>,
    pub f: Vec<f64>,
}

impl LoadPair {
    pub fn zeros(ops: &StepOperators) -> Self {
        LoadPair {
            s: vec![0.0; ops.solid.dofs.len()],
            f: vec![0.0; ops.fluid.dofs.len()],
        }
    }

    fn averaged(a: &LoadPair, b: &LoadPair) -> LoadPair {
        LoadPair {
            s: a.s.iter().zip(&b.s).map(|(x, y)| 0.5 * (x + y)).collect(),
            f: a.f.iter().zip(&b.f).map(|(x, y)| 0.5 * (x + y)).collect(),
        }
    }
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Correction-pass augmentation terms computed from two consecutive
/// prediction states.
struct CorrectionTerms {
    solid_rhs: Vec<f64>,
    fluid_rhs: Vec<f64>,
    /// `lambda_0^{n+1} - lambda_0^n`, added to the multiplier update.
    dlambda0: Vec<f64>,
}

impl StepOperators {
    fn correction_terms(
        &self,
        pred_n: &CoupledState,
        pred_np1: &CoupledState,
    ) -> Result<CorrectionTerms> {
        let alpha = self.problem.alpha;
        let robin = if self.scheme.is_modified() {
            self.b * alpha
        } else {
            alpha
        };

        let dw: Vec<f64> = pred_np1
            .w
            .iter()
            .zip(&pred_n.w)
            .map(|(a, b)| a - b)
            .collect();
        let du: Vec<f64> = pred_np1
            .u
            .iter()
            .zip(&pred_n.u)
            .map(|(a, b)| a - b)
            .collect();
        let dl: Vec<f64> = pred_np1
            .lambda
            .iter()
            .zip(&pred_n.lambda)
            .map(|(a, b)| a - b)
            .collect();

        // Solid side: 1/2 nu_s (grad dw, grad z) + robin <dw, z> - 1/2 <dl, z>
        // [+ a nu / 2 <d dw/ds, z> for the modified scheme].
        let mut solid_rhs = self.solid.stiff1.spmv(&dw);
        for v in &mut solid_rhs {
            *v *= 0.5 * self.problem.nu_s;
        }
        let tr_dw = restrict_trace(&self.solid.dofs, &dw)?;
        axpy(
            &mut solid_rhs,
            robin,
            &self.iface_functional(&self.solid, &tr_dw)?,
        );
        axpy(
            &mut solid_rhs,
            -0.5,
            &self.iface_functional(&self.solid, &dl)?,
        );
        if self.a != 0.0 {
            let tang = self.tangential_functional(&self.solid, &tr_dw)?;
            axpy(&mut solid_rhs, 0.5 * self.a * self.problem.nu_s, &tang);
        }

        // Fluid side: 1/2 nu_f (grad du, grad v) - 1/2 <dl, v>
        // [- a nu / 2 <d du/ds, v> for the modified scheme].
        let mut fluid_rhs = self.fluid.stiff1.spmv(&du);
        for v in &mut fluid_rhs {
            *v *= 0.5 * self.problem.nu_f;
        }
        axpy(
            &mut fluid_rhs,
            -0.5,
            &self.iface_functional(&self.fluid, &dl)?,
        );
        if self.a != 0.0 {
            let tr_du = restrict_trace(&self.fluid.dofs, &du)?;
            let tang = self.tangential_functional(&self.fluid, &tr_du)?;
            axpy(&mut fluid_rhs, -0.5 * self.a * self.problem.nu_f, &tang);
        }

        Ok(CorrectionTerms {
            solid_rhs,
            fluid_rhs,
            dlambda0: dl,
        })
    }

    /// Shared sequential advance: solid solve, fluid solve with the
    /// eliminated multiplier, explicit multiplier update. The correction
    /// pass differs only by the augmentation terms.
    fn advance(
        &self,
        state: &CoupledState,
        loads: &LoadPair,
        aug: Option<&CorrectionTerms>,
    ) -> Result<CoupledState> {
        let alpha = self.problem.alpha;
        let robin = if self.scheme.is_modified() {
            self.b * alpha
        } else {
            alpha
        };
        let inv_dt = 1.0 / self.dt;

        // Solid solve.
        let mut rhs = self.solid.mass.spmv(&state.w);
        for v in &mut rhs {
            *v *= inv_dt;
        }
        let tr_u_old = restrict_trace(&self.fluid.dofs, &state.u)?;
        axpy(
            &mut rhs,
            robin,
            &self.iface_functional(&self.solid, &tr_u_old)?,
        );
        axpy(
            &mut rhs,
            -1.0,
            &self.iface_functional(&self.solid, &state.lambda)?,
        );
        axpy(&mut rhs, 1.0, &loads.s);
        if let Some(terms) = aug {
            axpy(&mut rhs, 1.0, &terms.solid_rhs);
        }
        let w_new = self.solid.solver.solve(&rhs)?;

        // Fluid solve with lambda^{n+1} eliminated nodewise.
        let tr_w_new = restrict_trace(&self.solid.dofs, &w_new)?;
        let mut carried: Vec<f64> = state
            .lambda
            .iter()
            .zip(&tr_w_new)
            .map(|(l, w)| l + alpha * w)
            .collect();
        if let Some(terms) = aug {
            for (c, d) in carried.iter_mut().zip(&terms.dlambda0) {
                *c += d;
            }
        }
        let mut rhs = self.fluid.mass.spmv(&state.u);
        for v in &mut rhs {
            *v *= inv_dt;
        }
        axpy(
            &mut rhs,
            1.0,
            &self.iface_functional(&self.fluid, &carried)?,
        );
        axpy(&mut rhs, 1.0, &loads.f);
        if let Some(terms) = aug {
            axpy(&mut rhs, 1.0, &terms.fluid_rhs);
        }
        let u_new = self.fluid.solver.solve(&rhs)?;

        // Explicit multiplier update.
        let tr_u_new = restrict_trace(&self.fluid.dofs, &u_new)?;
        let mut lambda_new: Vec<f64> = state
            .lambda
            .iter()
            .zip(tr_u_new.iter().zip(&tr_w_new))
            .map(|(l, (u, w))| l - alpha * (u - w))
            .collect();
        if let Some(terms) = aug {
            for (l, d) in lambda_new.iter_mut().zip(&terms.dlambda0) {
                *l += d;
            }
        }

        Ok(CoupledState {
            t: state.t + self.dt,
            w: w_new,
            u: u_new,
            lambda: lambda_new,
        })
    }
}

/// One Robin-Robin prediction step from `state_n`, with loads at `t_{n+1}`.
pub fn prediction_step(
    ops: &StepOperators,
    state_n: &CoupledState,
    loads_np1: &LoadPair,
) -> Result<CoupledState> {
    ops.advance(state_n, loads_np1, None)
}

/// One defect-correction step. `pred_n`/`pred_np1` are the prediction
/// states at the surrounding time levels; `loads_half` is the discrete
/// time average `(load^{n+1} + load^n) / 2`.
pub fn correction_step(
    ops: &StepOperators,
    pred_n: &CoupledState,
    pred_np1: &CoupledState,
    corr_n: &CoupledState,
    loads_half: &LoadPair,
) -> Result<CoupledState> {
    if (pred_np1.t - pred_n.t - ops.dt).abs() > 1e-12 * ops.dt.max(1.0) {
        return invalid_argument("prediction states must be consecutive time levels");
    }
    let terms = ops.correction_terms(pred_n, pred_np1)?;
    ops.advance(corr_n, loads_half, Some(&terms))
}

/// One strongly coupled implicit-Euler step (reference scheme, dense solve).
pub fn monolithic_step(
    ops: &StepOperators,
    state_n: &CoupledState,
    loads_np1: &LoadPair,
) -> Result<CoupledState> {
    let mono = ops.monolithic.as_ref().ok_or_else(|| {
        Error::InvalidArgument("operators were not built for the monolithic scheme".into())
    })?;
    let inv_dt = 1.0 / ops.dt;
    let m = ops.mesh.interface_vertices.len();
    let mut rhs = vec![0.0; mono.ns + mono.nf + m];
    let ms_w = ops.solid.mass.spmv(&state_n.w);
    for i in 0..mono.ns {
        rhs[i] = ms_w[i] * inv_dt + loads_np1.s[i];
    }
    let mf_u = ops.fluid.mass.spmv(&state_n.u);
    for i in 0..mono.nf {
        rhs[mono.ns + i] = mf_u[i] * inv_dt + loads_np1.f[i];
    }
    let x = mono.lu.solve(&rhs)?;
    Ok(CoupledState {
        t: state_n.t + ops.dt,
        w: x[..mono.ns].to_vec(),
        u: x[mono.ns..mono.ns + mono.nf].to_vec(),
        lambda: x[mono.ns + mono.nf..].to_vec(),
    })
}

/// Full trajectory of a run; correction schemes also carry the lockstep
/// prediction trajectory.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<CoupledState>,
    pub prediction: Option<Vec<CoupledState>>,
}

/// Final two levels of each trajectory, for error evaluation of long runs
/// without storing every state.
#[derive(Debug, Clone)]
pub struct TrajectoryTail {
    pub last: CoupledState,
    pub prev: CoupledState,
    pub pred_last: CoupledState,
    pub pred_prev: CoupledState,
    pub steps: usize,
}

fn step_count(dt: f64, t_final: f64) -> Result<usize> {
    if t_final < 0.0 {
        return invalid_argument("final time must be nonnegative");
    }
    let ratio = t_final / dt;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-9 {
        return invalid_argument(format!(
            "final time {t_final} is not an integer multiple of dt {dt}"
        ));
    }
    Ok(n as usize)
}

fn run_loop(
    ops: &StepOperators,
    dt: f64,
    t_final: f64,
    mut observe: impl FnMut(&CoupledState, Option<&CoupledState>),
) -> Result<()> {
    let n_steps = step_count(dt, t_final)?;
    let initial = ops.initial_state()?;
    let correction = ops.scheme.has_correction();

    match ops.scheme {
        Scheme::Monolithic => {
            observe(&initial, None);
            let mut state = initial;
            for n in 0..n_steps {
                let loads = ops.assemble_loads((n + 1) as f64 * dt);
                state = monolithic_step(ops, &state, &loads)?;
                observe(&state, None);
            }
        }
        _ => {
            let mut pred = initial.clone();
            let mut corr = correction.then(|| initial.clone());
            observe(corr.as_ref().unwrap_or(&pred), Some(&pred));
            let mut loads_prev = ops.assemble_loads(0.0);
            for n in 0..n_steps {
                let loads_next = ops.assemble_loads((n + 1) as f64 * dt);
                let pred_next = prediction_step(ops, &pred, &loads_next)?;
                if let Some(c) = corr.as_mut() {
                    let half = LoadPair::averaged(&loads_next, &loads_prev);
                    *c = correction_step(ops, &pred, &pred_next, c, &half)?;
                }
                pred = pred_next;
                loads_prev = loads_next;
                observe(corr.as_ref().unwrap_or(&pred), Some(&pred));
            }
        }
    }
    Ok(())
}

/// Advance `t_final / dt` steps, storing every state. For correction
/// schemes the prediction runs in lockstep and is returned alongside.
pub fn run_trajectory(ops: &StepOperators, dt: f64, t_final: f64) -> Result<Trajectory> {
    let mut states = Vec::new();
    let mut prediction = ops.scheme.has_correction().then(Vec::new);
    run_loop(ops, dt, t_final, |state, pred| {
        states.push(state.clone());
        if let (Some(traj), Some(p)) = (prediction.as_mut(), pred) {
            traj.push(p.clone());
        }
    })?;
    Ok(Trajectory { states, prediction })
}

/// Advance and keep only the final two levels of each trajectory.
pub fn run_tail(ops: &StepOperators, dt: f64, t_final: f64) -> Result<TrajectoryTail> {
    let mut last: Option<CoupledState> = None;
    let mut prev: Option<CoupledState> = None;
    let mut pred_last: Option<CoupledState> = None;
    let mut pred_prev: Option<CoupledState> = None;
    let mut steps = 0usize;
    run_loop(ops, dt, t_final, |state, pred| {
        prev = last.take();
        last = Some(state.clone());
        let p = pred.unwrap_or(state);
        pred_prev = pred_last.take();
        pred_last = Some(p.clone());
        steps += 1;
    })?;
    let last = last.expect("at least the initial state is observed");
    let pred_last = pred_last.expect("at least the initial state is observed");
    Ok(TrajectoryTail {
        prev: prev.unwrap_or_else(|| last.clone()),
        pred_prev: pred_prev.unwrap_or_else(|| pred_last.clone()),
        last,
        pred_last,
        steps: steps - 1,
    })
}

/// L2 norms (mass-weighted) of the three fields of a state.
pub fn state_norms(ops: &StepOperators, state: &CoupledState) -> (f64, f64, f64) {
    let nw = ops.solid.mass.quadratic_form(&state.w).max(0.0).sqrt();
    let nu = ops.fluid.mass.quadratic_form(&state.u).max(0.0).sqrt();
    let nl = ops.iface.mass.quadratic_form(&state.lambda).max(0.0).sqrt();
    (nw, nu, nl)
}
