//! Adjoint design gradients of the structural responses.
//!
//! Every response is differentiated with respect to the per-element
//! physical fields — the physical density `rho` (which the stiffness
//! reads), the regularized density `xbar` (which the stress limits and the
//! constitutive interpolation of the stress recovery read) and the
//! projected indicator `sbar` (which the stress relaxation reads). The
//! filter/projection chain then pulls these partials back to the raw design
//! variables (see the field pipeline's reverse mode).
//!
//! Implicit dependence through the displacement field is resolved with one
//! adjoint solve per aggregate, reusing the factorization of the state.

use crate::failure;
use crate::fea::{self, Kernels, StateSolution};
use crate::linalg::Skyline;
use crate::material;
use crate::mesh::DomainMesh;
use crate::Result;

/// Per-element response partials with respect to the three physical
/// fields of one robust realization.
#[derive(Clone, Debug)]
pub struct FieldGrad {
    /// With respect to the physical density (stiffness path).
    pub d_rho: Vec<f64>,
    /// With respect to the regularized density (stress limits and
    /// constitutive interpolation of the stress recovery).
    pub d_xbar: Vec<f64>,
    /// With respect to the projected indicator (stress relaxation).
    pub d_sbar: Vec<f64>,
}

impl FieldGrad {
    fn zeros(n: usize) -> FieldGrad {
        FieldGrad {
            d_rho: vec![0.0; n],
            d_xbar: vec![0.0; n],
            d_sbar: vec![0.0; n],
        }
    }
}

/// Bilinear form `a^T kern b` on one element.
fn elem_bilinear(kern: &[[f64; 8]; 8], a: &[f64; 8], b: &[f64; 8]) -> f64 {
    let mut acc = 0.0;
    for i in 0..8 {
        let mut row = 0.0;
        for j in 0..8 {
            row += kern[i][j] * b[j];
        }
        acc += a[i] * row;
    }
    acc
}

/// `psi^T (dk_e/drho) u` for one element at density `rho_e`.
fn stiffness_derivative_energy(
    kernels: &Kernels,
    rho_e: f64,
    psi_e: &[f64; 8],
    u_e: &[f64; 8],
) -> f64 {
    let (dmu, dkappa) = material::ramp_moduli_drho(rho_e);
    dkappa * elem_bilinear(&kernels.k_kappa, psi_e, u_e)
        + dmu * elem_bilinear(&kernels.k_mu, psi_e, u_e)
}

/// `B^T g` for the element-center strain-displacement operator of a square
/// element of side `h`.
fn bt_vec(h: f64, g: [f64; 3]) -> [f64; 8] {
    let bx = [-1.0, 1.0, 1.0, -1.0];
    let by = [-1.0, -1.0, 1.0, 1.0];
    let c = 1.0 / (2.0 * h);
    let mut out = [0.0; 8];
    for i in 0..4 {
        out[2 * i] = c * (bx[i] * g[0] + by[i] * g[2]);
        out[2 * i + 1] = c * (by[i] * g[1] + bx[i] * g[2]);
    }
    out
}

/// Adds an element nodal vector into the global vector, skipping fixed
/// degrees of freedom.
fn scatter_vec(mesh: &DomainMesh, e: usize, local: &[f64; 8], global: &mut [f64]) {
    for (i, &dof) in mesh.elem_dofs[e].iter().enumerate() {
        if dof != crate::mesh::NO_DOF {
            global[dof] += local[i];
        }
    }
}

/// Compliance and its density gradient: the self-adjoint form needs no
/// extra solve, only the element energy against the stiffness derivative.
pub fn compliance_gradient(
    mesh: &DomainMesh,
    kernels: &Kernels,
    state: &StateSolution,
    rho: &[f64],
) -> (f64, Vec<f64>) {
    let mut d_rho = vec![0.0; mesh.n_elems()];
    for e in 0..mesh.n_elems() {
        let ue = mesh.gather_u(e, &state.u);
        d_rho[e] = -stiffness_derivative_energy(kernels, rho[e], &ue, &ue);
    }
    (state.compliance, d_rho)
}

/// Which equivalent-stress measure an aggregate is built on.
#[derive(Clone, Copy, Debug)]
pub enum StressMeasure {
    /// Von Mises equivalent against the density-interpolated yield limit.
    Yield {
        /// Base yield strength.
        sigma0: f64,
        /// Sharpness of the solid-transition relaxation of the limit.
        beta_yield: f64,
    },
    /// Conical-surface equivalent against the density-interpolated
    /// buckling stress limits.
    Buckling,
}

impl StressMeasure {
    /// Equivalent value at density `x` and stress `sig`, with gradients
    /// with respect to the stress components and the density.
    fn eval(&self, x: f64, sig: [f64; 3]) -> (f64, [f64; 3], f64) {
        match *self {
            StressMeasure::Yield { sigma0, beta_yield } => {
                let lim = material::yield_limit(x, sigma0, beta_yield);
                let (eq, dsig) = failure::vm_equivalent_grad(sig, lim);
                let dlim = material::yield_limit_dx(x, sigma0, beta_yield);
                (eq, dsig, -eq * dlim / lim)
            }
            StressMeasure::Buckling => {
                let [t, c, b] = material::buckling_limits(x);
                let surf = material::WwSurface::new_clamped(t, c, b);
                let (eq, dsig, dlim) = surf.equivalent_grad(sig);
                let dl = material::buckling_limits_dx(x);
                (eq, dsig, dlim[0] * dl[0] + dlim[1] * dl[1] + dlim[2] * dl[2])
            }
        }
    }
}

/// A differentiated stress aggregate of one realization.
#[derive(Clone, Debug)]
pub struct StressResponse {
    /// Per-element relaxed equivalent measures.
    pub relaxed: Vec<f64>,
    /// Their p-norm.
    pub pnorm: f64,
    /// Partials with respect to the physical fields.
    pub grad: FieldGrad,
}

/// p-norm of the relaxed equivalent stresses and its field gradient.
///
/// The explicit parts cover the stress-limit and constitutive
/// interpolations (through `xbar`) and the indicator relaxation (through
/// `sbar`); the implicit part through the displacements costs one adjoint
/// solve against the state's stiffness.
pub fn stress_aggregate_gradient(
    mesh: &DomainMesh,
    kernels: &Kernels,
    state: &StateSolution,
    rho: &[f64],
    xbar: &[f64],
    sbar: &[f64],
    measure: &StressMeasure,
    p: f64,
    eps: f64,
) -> Result<StressResponse> {
    let n = mesh.n_elems();
    let mut relaxed = vec![0.0; n];
    let mut eq = vec![0.0; n];
    let mut dsig = vec![[0.0; 3]; n];
    let mut dx_meas = vec![0.0; n];
    for e in 0..n {
        let (v, ds, dx) = measure.eval(xbar[e], state.stresses[e]);
        eq[e] = v;
        dsig[e] = ds;
        dx_meas[e] = dx;
        relaxed[e] = failure::relax_factor(sbar[e], eps) * v;
    }
    let (pn, w) = failure::pnorm_grad(&relaxed, p)?;

    let mut grad = FieldGrad::zeros(n);
    let mut rhs = vec![0.0; mesh.n_dofs];
    for e in 0..n {
        let fs = failure::relax_factor(sbar[e], eps);
        grad.d_sbar[e] = w[e] * failure::relax_factor_ds(sbar[e], eps) * eq[e];

        let ue = mesh.gather_u(e, &state.u);
        let strain = fea::center_strain(mesh.h, &ue);
        // Constitutive interpolation: d sigma / d xbar = C'(xbar) B u.
        let (dmu, dkappa) = material::ramp_moduli_drho(xbar[e]);
        let dsig_dx = fea::stress_from_strain(dmu, dkappa, strain);
        grad.d_xbar[e] = w[e]
            * fs
            * (dx_meas[e]
                + dsig[e][0] * dsig_dx[0]
                + dsig[e][1] * dsig_dx[1]
                + dsig[e][2] * dsig_dx[2]);

        // Displacement dependence: d(relaxed_e)/du = fs * C(xbar)^T
        // (d eq/d sigma) B, accumulated into the adjoint load.
        let (mu, kappa) = material::ramp_moduli(xbar[e]);
        let cg = fea::stress_from_strain(
            mu,
            kappa,
            [w[e] * fs * dsig[e][0], w[e] * fs * dsig[e][1], w[e] * fs * dsig[e][2]],
        );
        let local = bt_vec(mesh.h, cg);
        scatter_vec(mesh, e, &local, &mut rhs);
    }

    // One adjoint solve closes the implicit path: u depends on rho through
    // the stiffness, so d(pn)/d rho_e = -psi^T (dk_e/d rho) u_e.
    let psi = fea::solve_static(&state.k, &state.kfac, &rhs)?;
    for e in 0..n {
        let ue = mesh.gather_u(e, &state.u);
        let pe = mesh.gather_u(e, &psi);
        grad.d_rho[e] = -stiffness_derivative_energy(kernels, rho[e], &pe, &ue);
    }

    Ok(StressResponse { relaxed, pnorm: pn, grad })
}

/// A differentiated buckling aggregate of one realization.
#[derive(Clone, Debug)]
pub struct BucklingResponse {
    /// Smooth max of the eigenvalue reciprocals.
    pub jks: f64,
    /// Its reciprocal, the aggregated buckling load factor.
    pub blf: f64,
    /// Gradient with respect to the physical density (all three paths:
    /// stiffness, stress stiffness, and the displacement adjoint).
    pub d_rho: Vec<f64>,
    /// Set when two tracked eigenvalues are nearly repeated; the smooth
    /// aggregation absorbs the non-differentiability of the individual
    /// eigenvalues, but per-mode values are then unreliable.
    pub close_pair: bool,
}

/// Smooth max of the buckling eigenvalue reciprocals and its density
/// gradient.
///
/// Per mode, the eigenvalue derivative combines the stiffness and
/// stress-stiffness paths; the dependence of the stress stiffness on the
/// reference displacements is closed with a single adjoint solve for the
/// whole aggregate.
pub fn buckling_aggregate_gradient(
    mesh: &DomainMesh,
    kernels: &Kernels,
    state: &StateSolution,
    rho: &[f64],
    ks_exponent: f64,
) -> Result<BucklingResponse> {
    let n = mesh.n_elems();
    let gammas: Vec<f64> = state.modes.iter().map(|m| m.gamma).collect();
    let (jks, _) = failure::ks_blf(&gammas, ks_exponent)?;

    // Aggregation weights per tracked mode (zero for non-positive ones).
    let mut weights = vec![0.0; gammas.len()];
    for (i, &g) in gammas.iter().enumerate() {
        if g > 0.0 {
            weights[i] = (g / jks).powf(ks_exponent - 1.0);
        }
    }
    let mut close_pair = false;
    for pair in gammas.windows(2) {
        if pair[0] > 0.0 && pair[1] > 0.0 {
            let gap = (pair[0] - pair[1]).abs() / pair[0].max(pair[1]);
            if gap < 1e-8 {
                close_pair = true;
            }
        }
    }

    let mut d_rho = vec![0.0; n];
    // Weighted stress-adjoint load of each element: the derivative of
    // phi^T Ks phi with respect to the element-center stress components.
    let mut vbar = vec![[0.0; 3]; n];
    for (i, mode) in state.modes.iter().enumerate() {
        if weights[i] == 0.0 {
            continue;
        }
        for e in 0..n {
            let phi_e = mesh.gather_u(e, &mode.phi);
            // Stiffness path: d gamma = -gamma phi^T (dK/drho) phi.
            d_rho[e] -= weights[i]
                * mode.gamma
                * stiffness_derivative_energy(kernels, rho[e], &phi_e, &phi_e);
            for c in 0..3 {
                vbar[e][c] +=
                    weights[i] * elem_bilinear(&kernels.s[c], &phi_e, &phi_e);
            }
        }
    }

    // Stress-stiffness path, explicit part: the stresses feeding Ks use
    // the physical-density constitutive interpolation.
    let mut rhs = vec![0.0; mesh.n_dofs];
    for e in 0..n {
        let ue = mesh.gather_u(e, &state.u);
        let strain = fea::center_strain(mesh.h, &ue);
        let (dmu, dkappa) = material::ramp_moduli_drho(rho[e]);
        let dsig_dx = fea::stress_from_strain(dmu, dkappa, strain);
        d_rho[e] -=
            vbar[e][0] * dsig_dx[0] + vbar[e][1] * dsig_dx[1] + vbar[e][2] * dsig_dx[2];

        // Implicit part accumulates the adjoint load B^T C(rho)^T vbar.
        let (mu, kappa) = material::ramp_moduli(rho[e]);
        let cg = fea::stress_from_strain(mu, kappa, vbar[e]);
        let local = bt_vec(mesh.h, cg);
        scatter_vec(mesh, e, &local, &mut rhs);
    }
    let psi = fea::solve_static(&state.k, &state.kfac, &rhs)?;
    for e in 0..n {
        let ue = mesh.gather_u(e, &state.u);
        let pe = mesh.gather_u(e, &psi);
        // d gamma = -phi^T dKs phi; through u this flips sign twice (du =
        // -K^-1 dK u), leaving a positive energy term.
        d_rho[e] += stiffness_derivative_energy(kernels, rho[e], &pe, &ue);
    }

    Ok(BucklingResponse {
        jks,
        blf: 1.0 / jks,
        d_rho,
        close_pair,
    })
}

/// Scales a stiffness-pattern matrix by `alpha` (test helper for
/// proportional-matrix identities).
#[allow(dead_code)]
fn scaled_matrix(k: &Skyline, alpha: f64) -> Skyline {
    let mut out = k.clone();
    for v in out.values_mut() {
        *v *= alpha;
    }
    out
}
