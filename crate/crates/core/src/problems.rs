//! Manufactured problems: exact solutions, interface fluxes, forcings and
//! parameter bundles for the convergence experiments.
//!
//! Gradients, time factors and forcings are hand-coded closed forms; the
//! tests validate each against finite differences.

use crate::mesh::{tangent_normal, BoundaryLayout, InterfaceSpec};
use std::f64::consts::PI;

type Scalar = fn(f64, [f64; 2]) -> f64;
type Gradient = fn(f64, [f64; 2]) -> [f64; 2];

/// Geometry, coefficients and exact-solution closures of one experiment.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub label: &'static str,
    pub interface: InterfaceSpec,
    pub layout: BoundaryLayout,
    pub nu_f: f64,
    pub nu_s: f64,
    /// Robin parameter of the splitting.
    pub alpha: f64,
    pub t_final: f64,
    pub exact_u: Scalar,
    pub exact_w: Scalar,
    pub grad_u: Gradient,
    pub grad_w: Gradient,
    /// Fluid forcing `g1 = du/dt - nu_f lap(u)`; `None` when identically zero.
    pub g1: Option<Scalar>,
    /// Solid forcing `g2 = dw/dt - nu_s lap(w)`; `None` when identically zero.
    pub g2: Option<Scalar>,
}

impl ProblemSpec {
    /// Fluid-side interface flux `l = nu_f grad(u) . n_f`, the quantity the
    /// unmodified multiplier approximates.
    pub fn exact_flux(&self, t: f64, x: [f64; 2]) -> f64 {
        let n = tangent_normal(self.interface).normal_f;
        let g = (self.grad_u)(t, x);
        self.nu_f * (g[0] * n[0] + g[1] * n[1])
    }

    /// Reference value for the multiplier: the tangentially modified schemes
    /// approximate `b nu grad(u) . s` instead of the full flux.
    pub fn multiplier_reference(&self, modified: bool, t: f64, x: [f64; 2]) -> f64 {
        if modified {
            let frame = tangent_normal(self.interface);
            let g = (self.grad_u)(t, x);
            frame.b * self.nu_f * (g[0] * frame.side[0] + g[1] * frame.side[1])
        } else {
            self.exact_flux(t, x)
        }
    }

    pub fn by_label(label: &str) -> Option<ProblemSpec> {
        match label {
            "neumann-slanted" => Some(example_neumann()),
            "two-viscosity" => Some(example_viscosity()),
            "dirichlet-slanted" => Some(example_dirichlet()),
            _ => None,
        }
    }

    pub fn labels() -> [&'static str; 3] {
        ["neumann-slanted", "two-viscosity", "dirichlet-slanted"]
    }
}

/// Decaying heat eigenfunction shared by both subdomains, slanted interface
/// from (0, 0.25) to (1, 0.75), Neumann sides, zero forcing.
pub fn example_neumann() -> ProblemSpec {
    fn sol(t: f64, p: [f64; 2]) -> f64 {
        (-2.0 * PI * PI * t).exp() * (PI * p[0]).cos() * (PI * p[1]).sin()
    }
    fn grad(t: f64, p: [f64; 2]) -> [f64; 2] {
        let e = (-2.0 * PI * PI * t).exp();
        [
            -PI * e * (PI * p[0]).sin() * (PI * p[1]).sin(),
            PI * e * (PI * p[0]).cos() * (PI * p[1]).cos(),
        ]
    }
    ProblemSpec {
        label: "neumann-slanted",
        interface: InterfaceSpec::Slanted { y0: 0.25, y1: 0.75 },
        layout: BoundaryLayout::NeumannSides,
        nu_f: 1.0,
        nu_s: 1.0,
        alpha: 4.0,
        t_final: 0.25,
        exact_u: sol,
        exact_w: sol,
        grad_u: grad,
        grad_w: grad,
        g1: None,
        g2: None,
    }
}

/// Two-viscosity problem on the horizontal interface `y = 0.75` with
/// `nu_f = 2`, `nu_s = 1` and nonzero forcing on both sides.
pub fn example_viscosity() -> ProblemSpec {
    // u = e^{-2 pi^2 t} cos(pi x) sin(4 pi (y - 0.75)) below the interface,
    // w uses frequency 4 pi nu_f / nu_s = 8 pi above it; the fields match on
    // the interface (both vanish) and balance fluxes by construction.
    fn u(t: f64, p: [f64; 2]) -> f64 {
        (-2.0 * PI * PI * t).exp() * (PI * p[0]).cos() * (4.0 * PI * (p[1] - 0.75)).sin()
    }
    fn w(t: f64, p: [f64; 2]) -> f64 {
        (-2.0 * PI * PI * t).exp() * (PI * p[0]).cos() * (8.0 * PI * (p[1] - 0.75)).sin()
    }
    fn grad_u(t: f64, p: [f64; 2]) -> [f64; 2] {
        let e = (-2.0 * PI * PI * t).exp();
        [
            -PI * e * (PI * p[0]).sin() * (4.0 * PI * (p[1] - 0.75)).sin(),
            4.0 * PI * e * (PI * p[0]).cos() * (4.0 * PI * (p[1] - 0.75)).cos(),
        ]
    }
    fn grad_w(t: f64, p: [f64; 2]) -> [f64; 2] {
        let e = (-2.0 * PI * PI * t).exp();
        [
            -PI * e * (PI * p[0]).sin() * (8.0 * PI * (p[1] - 0.75)).sin(),
            8.0 * PI * e * (PI * p[0]).cos() * (8.0 * PI * (p[1] - 0.75)).cos(),
        ]
    }
    // du/dt = -2 pi^2 u, lap(u) = -(1 + 16) pi^2 u, nu_f = 2:
    // g1 = (-2 + 34) pi^2 u. Likewise lap(w) = -(1 + 64) pi^2 w, nu_s = 1:
    // g2 = (-2 + 65) pi^2 w.
    fn g1(t: f64, p: [f64; 2]) -> f64 {
        32.0 * PI * PI * u(t, p)
    }
    fn g2(t: f64, p: [f64; 2]) -> f64 {
        63.0 * PI * PI * w(t, p)
    }
    ProblemSpec {
        label: "two-viscosity",
        interface: InterfaceSpec::Horizontal { c: 0.75 },
        layout: BoundaryLayout::NeumannSides,
        nu_f: 2.0,
        nu_s: 1.0,
        alpha: 4.0,
        t_final: 0.25,
        exact_u: u,
        exact_w: w,
        grad_u,
        grad_w,
        g1: Some(g1),
        g2: Some(g2),
    }
}

/// Dirichlet variant of the slanted-interface problem; the solution vanishes
/// on the whole outer boundary.
pub fn example_dirichlet() -> ProblemSpec {
    fn sol(t: f64, p: [f64; 2]) -> f64 {
        (-2.0 * PI * PI * t).exp() * (PI * p[0]).sin() * (PI * p[1]).sin()
    }
    fn grad(t: f64, p: [f64; 2]) -> [f64; 2] {
        let e = (-2.0 * PI * PI * t).exp();
        [
            PI * e * (PI * p[0]).cos() * (PI * p[1]).sin(),
            PI * e * (PI * p[0]).sin() * (PI * p[1]).cos(),
        ]
    }
    ProblemSpec {
        label: "dirichlet-slanted",
        interface: InterfaceSpec::Slanted { y0: 0.25, y1: 0.75 },
        layout: BoundaryLayout::DirichletSides,
        nu_f: 1.0,
        nu_s: 1.0,
        alpha: 4.0,
        t_final: 0.25,
        exact_u: sol,
        exact_w: sol,
        grad_u: grad,
        grad_w: grad,
        g1: None,
        g2: None,
    }
}
