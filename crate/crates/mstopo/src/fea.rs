//! Plane-stress finite elements on the regular grid: bilinear quadrilateral
//! kernels split by modulus, global stiffness and stress-stiffness assembly,
//! static solves, element-center stress recovery, and the buckling
//! eigensolve.
//!
//! For square elements of unit thickness every kernel is independent of the
//! element size, so a single pair of 8x8 reference matrices covers the whole
//! mesh: `k_e = kappa_e * K_KAPPA + mu_e * K_MU`. The stress stiffness is
//! likewise a fixed combination of three kernels weighted by the
//! element-center stress components.

use crate::linalg::{buckling_modes, BucklingMode, Skyline, SkylineFactor};
use crate::material;
use crate::mesh::DomainMesh;
use crate::{Error, Result};

/// Reference 8x8 kernels for a square plane-stress bilinear element of unit
/// thickness (independent of element size).
#[derive(Clone, Debug)]
pub struct Kernels {
    /// Stiffness contribution per unit bulk modulus.
    pub k_kappa: [[f64; 8]; 8],
    /// Stiffness contribution per unit shear modulus.
    pub k_mu: [[f64; 8]; 8],
    /// Stress-stiffness contributions per unit `sigma_11`, `sigma_22`,
    /// `sigma_12` at the element center.
    pub s: [[[f64; 8]; 8]; 3],
}

/// Shape-function derivatives on the reference square at `(xi, eta)`, in
/// units of `2/h` (multiply by `2/h` for physical gradients).
fn dshape(xi: f64, eta: f64) -> ([f64; 4], [f64; 4]) {
    let dx = [
        -(1.0 - eta) / 4.0,
        (1.0 - eta) / 4.0,
        (1.0 + eta) / 4.0,
        -(1.0 + eta) / 4.0,
    ];
    let dy = [
        -(1.0 - xi) / 4.0,
        -(1.0 + xi) / 4.0,
        (1.0 + xi) / 4.0,
        (1.0 - xi) / 4.0,
    ];
    (dx, dy)
}

impl Kernels {
    /// Integrates the kernels with 2x2 Gauss quadrature (exact for the
    /// bilinear integrands).
    pub fn new() -> Kernels {
        Self::with_aspect(1.0)
    }

    /// Kernels for a rectangular element with the given height/width ratio;
    /// entries depend only on the ratio, not the absolute size.
    pub fn with_aspect(aspect: f64) -> Kernels {
        let g = 1.0 / 3.0_f64.sqrt();
        let mut k_kappa = [[0.0; 8]; 8];
        let mut k_mu = [[0.0; 8]; 8];
        let mut s = [[[0.0; 8]; 8]; 3];
        for &xi in &[-g, g] {
            for &eta in &[-g, g] {
                // Physical gradients are (2/a, 2/b) times the reference ones
                // and dA = (a b / 4) dxi deta, so each derivative product
                // keeps only a power of the aspect ratio b/a; the quadrature
                // weight is 1.
                let (dx, dy) = dshape(xi, eta);
                for i in 0..4 {
                    for j in 0..4 {
                        let xx = dx[i] * dx[j] * aspect;
                        let yy = dy[i] * dy[j] / aspect;
                        let xy = dx[i] * dy[j];
                        let yx = dy[i] * dx[j];
                        // Bulk part: strain pair (e_xx + e_yy)^2 coupling.
                        k_kappa[2 * i][2 * j] += xx;
                        k_kappa[2 * i][2 * j + 1] += xy;
                        k_kappa[2 * i + 1][2 * j] += yx;
                        k_kappa[2 * i + 1][2 * j + 1] += yy;
                        // Shear part: (e_xx - e_yy)^2 + gamma_xy^2 coupling.
                        k_mu[2 * i][2 * j] += xx + yy;
                        k_mu[2 * i][2 * j + 1] += yx - xy;
                        k_mu[2 * i + 1][2 * j] += xy - yx;
                        k_mu[2 * i + 1][2 * j + 1] += yy + xx;
                        // Geometric stiffness: same scalar kernel on both
                        // displacement components.
                        for c in 0..2 {
                            s[0][2 * i + c][2 * j + c] += xx;
                            s[1][2 * i + c][2 * j + c] += yy;
                            s[2][2 * i + c][2 * j + c] += xy + yx;
                        }
                    }
                }
            }
        }
        Kernels { k_kappa, k_mu, s }
    }

    /// Element stiffness for the given shear and bulk moduli.
    pub fn stiffness(&self, mu: f64, kappa: f64) -> [[f64; 8]; 8] {
        let mut k = [[0.0; 8]; 8];
        for i in 0..8 {
            for j in 0..8 {
                k[i][j] = kappa * self.k_kappa[i][j] + mu * self.k_mu[i][j];
            }
        }
        k
    }

    /// Element stress stiffness for the element-center stress state.
    pub fn stress_stiffness(&self, sig: [f64; 3]) -> [[f64; 8]; 8] {
        let mut k = [[0.0; 8]; 8];
        for i in 0..8 {
            for j in 0..8 {
                k[i][j] =
                    sig[0] * self.s[0][i][j] + sig[1] * self.s[1][i][j] + sig[2] * self.s[2][i][j];
            }
        }
        k
    }
}

impl Default for Kernels {
    fn default() -> Self {
        Self::new()
    }
}

/// Element-center strain from the local displacement vector of a
/// width-`a`, height-`b` rectangle (engineering shear).
pub fn center_strain_rect(a: f64, b: f64, ue: &[f64; 8]) -> [f64; 3] {
    let bx = [-1.0, 1.0, 1.0, -1.0];
    let by = [-1.0, -1.0, 1.0, 1.0];
    let (ca, cb) = (1.0 / (2.0 * a), 1.0 / (2.0 * b));
    let mut e = [0.0; 3];
    for i in 0..4 {
        e[0] += ca * bx[i] * ue[2 * i];
        e[1] += cb * by[i] * ue[2 * i + 1];
        e[2] += cb * by[i] * ue[2 * i] + ca * bx[i] * ue[2 * i + 1];
    }
    e
}

/// Element-center strain for a square element of side `h`.
pub fn center_strain(h: f64, ue: &[f64; 8]) -> [f64; 3] {
    center_strain_rect(h, h, ue)
}

/// Applies the plane-stress constitutive matrix for `(mu, kappa)` to a
/// strain triplet.
pub fn stress_from_strain(mu: f64, kappa: f64, e: [f64; 3]) -> [f64; 3] {
    [
        (kappa + mu) * e[0] + (kappa - mu) * e[1],
        (kappa - mu) * e[0] + (kappa + mu) * e[1],
        mu * e[2],
    ]
}

/// Skyline sparsity pattern shared by the stiffness and stress-stiffness
/// matrices of a mesh.
pub fn matrix_pattern(mesh: &DomainMesh) -> Skyline {
    Skyline::from_edges(
        mesh.n_dofs,
        mesh.elem_dofs.iter().flat_map(|dofs| {
            let dofs = *dofs;
            (0..8).flat_map(move |i| {
                (0..8).filter_map(move |j| {
                    let (a, b) = (dofs[i], dofs[j]);
                    (a != crate::mesh::NO_DOF && b != crate::mesh::NO_DOF).then_some((a, b))
                })
            })
        }),
    )
}

fn scatter(mesh: &DomainMesh, e: usize, ke: &[[f64; 8]; 8], k: &mut Skyline) {
    let dofs = &mesh.elem_dofs[e];
    for i in 0..8 {
        let gi = dofs[i];
        if gi == crate::mesh::NO_DOF {
            continue;
        }
        for j in 0..8 {
            let gj = dofs[j];
            if gj == crate::mesh::NO_DOF || gj > gi {
                continue;
            }
            k.add(gi, gj, ke[i][j]);
        }
    }
}

/// Assembles the global stiffness from per-element `(mu, kappa)` moduli.
pub fn global_stiffness(mesh: &DomainMesh, kernels: &Kernels, moduli: &[(f64, f64)]) -> Skyline {
    let mut k = matrix_pattern(mesh);
    for e in 0..mesh.n_elems() {
        let ke = kernels.stiffness(moduli[e].0, moduli[e].1);
        scatter(mesh, e, &ke, &mut k);
    }
    k
}

/// Assembles the global stress stiffness from element-center stresses.
pub fn global_stress_stiffness(
    mesh: &DomainMesh,
    kernels: &Kernels,
    stresses: &[[f64; 3]],
) -> Skyline {
    let mut k = matrix_pattern(mesh);
    for e in 0..mesh.n_elems() {
        let ke = kernels.stress_stiffness(stresses[e]);
        scatter(mesh, e, &ke, &mut k);
    }
    k
}

/// Shear/bulk moduli per element from the physical density field.
pub fn graded_moduli(rho: &[f64]) -> Vec<(f64, f64)> {
    rho.iter().map(|&r| material::ramp_moduli(r)).collect()
}

/// Solves `K u = f` through an existing factorization and verifies the
/// residual against the unfactored matrix.
pub fn solve_static(k: &Skyline, kfac: &SkylineFactor, f: &[f64]) -> Result<Vec<f64>> {
    let u = kfac.solve(f);
    let mut r = vec![0.0; f.len()];
    k.matvec(&u, &mut r);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..f.len() {
        num += (r[i] - f[i]) * (r[i] - f[i]);
        den += f[i] * f[i];
    }
    if den > 0.0 && num.sqrt() > 1e-10 * den.sqrt() {
        return Err(Error::Numerical(format!(
            "static solve residual {:.3e} exceeds 1e-10",
            num.sqrt() / den.sqrt()
        )));
    }
    Ok(u)
}

/// External work of the load, `f^T u`.
pub fn compliance(f: &[f64], u: &[f64]) -> f64 {
    crate::linalg::dot(f, u)
}

/// Element-center stresses `C(x_e) B u_e` for a per-element density field.
pub fn element_stresses(mesh: &DomainMesh, u: &[f64], x: &[f64]) -> Vec<[f64; 3]> {
    (0..mesh.n_elems())
        .map(|e| {
            let ue = mesh.gather_u(e, u);
            let eps = center_strain(mesh.h, &ue);
            let (mu, kappa) = material::ramp_moduli(x[e]);
            stress_from_strain(mu, kappa, eps)
        })
        .collect()
}

/// Complete linear analysis of one robust realization: static solve,
/// element-center stresses under both material interpolations, and
/// optionally the buckling eigenpairs.
pub struct StateSolution {
    /// Nodal displacements under the reference load.
    pub u: Vec<f64>,
    /// Global stiffness, kept for residual checks on later adjoint solves.
    pub k: Skyline,
    /// Cholesky factorization reused by adjoint solves.
    pub kfac: SkylineFactor,
    /// External work of the reference load.
    pub compliance: f64,
    /// Stresses at the regularized-density interpolation; the yield and
    /// local-buckling measures read these (void values are unphysical but
    /// the indicator relaxation suppresses them).
    pub stresses: Vec<[f64; 3]>,
    /// Stresses at the physical-density interpolation; the stress
    /// stiffness is assembled from these.
    pub rho_stresses: Vec<[f64; 3]>,
    /// Positive buckling modes, `gamma` descending; empty when no modes
    /// were requested.
    pub modes: Vec<BucklingMode>,
}

/// Solves one realization end to end: stiffness at the physical density
/// `rho`, static solve, stress recovery, and `n_modes` buckling modes
/// (skipped when zero) at eigensolver tolerance `tol`.
pub fn solve_state(
    mesh: &DomainMesh,
    kernels: &Kernels,
    rho: &[f64],
    xbar: &[f64],
    n_modes: usize,
    tol: f64,
    seed: u64,
) -> Result<StateSolution> {
    let k = global_stiffness(mesh, kernels, &graded_moduli(rho));
    let kfac = k.clone().factorize()?;
    let u = solve_static(&k, &kfac, &mesh.load)?;
    let c = compliance(&mesh.load, &u);
    let stresses = element_stresses(mesh, &u, xbar);
    let rho_stresses = element_stresses(mesh, &u, rho);
    let modes = if n_modes > 0 {
        let ks = global_stress_stiffness(mesh, kernels, &rho_stresses);
        solve_buckling(&k, &kfac, &ks, n_modes, tol, seed)?
    } else {
        Vec::new()
    };
    Ok(StateSolution {
        u,
        k,
        kfac,
        compliance: c,
        stresses,
        rho_stresses,
        modes,
    })
}

/// Lowest positive buckling load factors of `(K + lambda K_sigma) phi = 0`.
/// Errors when fewer than `n_modes` modes converge.
pub fn solve_buckling(
    k: &Skyline,
    kfac: &SkylineFactor,
    ks: &Skyline,
    n_modes: usize,
    tol: f64,
    seed: u64,
) -> Result<Vec<BucklingMode>> {
    let modes = buckling_modes(k, kfac, ks, n_modes, tol, seed)?;
    if modes.len() < n_modes {
        return Err(Error::EigenUnconverged {
            converged: modes.len(),
            requested: n_modes,
        });
    }
    Ok(modes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::MeshBuilder;

    /// Textbook closed-form plane-stress bilinear kernel for a square
    /// element (E, nu), derived independently of the quadrature route.
    fn reference_kernel(e_mod: f64, nu: f64) -> [[f64; 8]; 8] {
        let k = [
            0.5 - nu / 6.0,
            0.125 + nu / 8.0,
            -0.25 - nu / 12.0,
            -0.125 + 3.0 * nu / 8.0,
            -0.25 + nu / 12.0,
            -0.125 - nu / 8.0,
            nu / 6.0,
            0.125 - 3.0 * nu / 8.0,
        ];
        let idx: [[usize; 8]; 8] = [
            [0, 1, 2, 3, 4, 5, 6, 7],
            [1, 0, 7, 6, 5, 4, 3, 2],
            [2, 7, 0, 5, 6, 3, 4, 1],
            [3, 6, 5, 0, 7, 2, 1, 4],
            [4, 5, 6, 7, 0, 1, 2, 3],
            [5, 4, 3, 2, 1, 0, 7, 6],
            [6, 3, 4, 1, 2, 7, 0, 5],
            [7, 2, 1, 4, 3, 6, 5, 0],
        ];
        let scale = e_mod / (1.0 - nu * nu);
        let mut ke = [[0.0; 8]; 8];
        for i in 0..8 {
            for j in 0..8 {
                ke[i][j] = scale * k[idx[i][j]];
            }
        }
        ke
    }

    #[test]
    fn solid_element_matches_textbook_kernel() {
        let kernels = Kernels::new();
        let ke = kernels.stiffness(material::MU0, material::KAPPA0);
        let reference = reference_kernel(1.0, 1.0 / 3.0);
        for i in 0..8 {
            for j in 0..8 {
                assert!(
                    (ke[i][j] - reference[i][j]).abs() < 1e-12,
                    "({i},{j}): {} vs {}",
                    ke[i][j],
                    reference[i][j]
                );
            }
        }
    }

    #[test]
    fn rigid_body_motions_carry_no_energy_or_stress() {
        let kernels = Kernels::new();
        let ke = kernels.stiffness(0.3, 0.8);
        // Translations and a linearized rotation about the element center.
        let tx = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let ty = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        // (y - yc, -(x - xc)) at the four counterclockwise corners.
        let rot = [-1.0, 1.0, -1.0, -1.0, 1.0, -1.0, 1.0, 1.0];
        for v in [tx, ty, rot] {
            for i in 0..8 {
                let row: f64 = (0..8).map(|j| ke[i][j] * v[j]).sum();
                assert!(row.abs() < 1e-12, "row {i}: {row}");
            }
            let eps = center_strain(0.25, &v);
            for c in eps {
                assert!(c.abs() < 1e-12);
            }
        }
        // A pure extension is reproduced exactly at the center.
        let h = 0.25;
        let a = 0.01;
        let ext = [0.0, 0.0, a * h, 0.0, a * h, 0.0, 0.0, 0.0];
        let eps = center_strain(h, &ext);
        assert!((eps[0] - a).abs() < 1e-14);
        assert!(eps[1].abs() < 1e-14);
    }

    #[test]
    fn stress_stiffness_matches_separable_closed_form() {
        // Exact integrals of bilinear gradient products factor into 1D
        // pieces: stiffness (1/h)[[1,-1],[-1,1]], mass (h/6)[[2,1],[1,2]],
        // and the mixed first-derivative matrix (1/2)[[-1,-1],[1,1]].
        let kk = [[1.0, -1.0], [-1.0, 1.0]];
        let mm = [[2.0 / 6.0, 1.0 / 6.0], [1.0 / 6.0, 2.0 / 6.0]];
        let gg = [[-0.5, -0.5], [0.5, 0.5]];
        // Local node -> (x-factor, y-factor) index, counterclockwise.
        let ax = [0usize, 1, 1, 0];
        let ay = [0usize, 0, 1, 1];
        let kernels = Kernels::new();
        for i in 0..4 {
            for j in 0..4 {
                let s11 = kk[ax[i]][ax[j]] * mm[ay[i]][ay[j]];
                let s22 = mm[ax[i]][ax[j]] * kk[ay[i]][ay[j]];
                let s12 = gg[ax[i]][ax[j]] * gg[ay[j]][ay[i]]
                    + gg[ax[j]][ax[i]] * gg[ay[i]][ay[j]];
                for c in 0..2 {
                    assert!((kernels.s[0][2 * i + c][2 * j + c] - s11).abs() < 1e-12);
                    assert!((kernels.s[1][2 * i + c][2 * j + c] - s22).abs() < 1e-12);
                    assert!((kernels.s[2][2 * i + c][2 * j + c] - s12).abs() < 1e-12);
                }
                // Off-component blocks vanish.
                assert_eq!(kernels.s[0][2 * i][2 * j + 1], 0.0);
                assert_eq!(kernels.s[2][2 * i + 1][2 * j], 0.0);
            }
        }
    }

    /// Horizontal strip on rollers at the left edge (free lateral
    /// contraction), uniform tension on the right.
    fn tension_strip(nelx: usize, nely: usize, h: f64, traction: f64) -> DomainMesh {
        let mut b = MeshBuilder::new(nelx, nely, h, vec![true; nelx * nely]);
        for iy in 0..=nely {
            b.fix_comp(0, iy, 0);
        }
        b.fix_comp(0, 0, 1);
        for iy in 0..=nely {
            let w = if iy == 0 || iy == nely { 0.5 } else { 1.0 };
            b.add_load(nelx, iy, traction * h * w, 0.0);
        }
        b.build().unwrap()
    }

    #[test]
    fn uniform_tension_patch_is_exact() {
        let t = 0.37;
        let mesh = tension_strip(6, 3, 0.1, t);
        let kernels = Kernels::new();
        let x = vec![1.0; mesh.n_elems()];
        let k = global_stiffness(&mesh, &kernels, &graded_moduli(&x));
        let kfac = k.clone().factorize().unwrap();
        let u = solve_static(&k, &kfac, &mesh.load).unwrap();
        for s in element_stresses(&mesh, &u, &x) {
            assert!((s[0] - t).abs() < 1e-10, "{s:?}");
            assert!(s[1].abs() < 1e-10 && s[2].abs() < 1e-10, "{s:?}");
        }
        // Work identity: external work equals summed element strain energy.
        let c = compliance(&mesh.load, &u);
        let mut internal = 0.0;
        let ke = kernels.stiffness(material::MU0, material::KAPPA0);
        for e in 0..mesh.n_elems() {
            let ue = mesh.gather_u(e, &u);
            for i in 0..8 {
                for j in 0..8 {
                    internal += ue[i] * ke[i][j] * ue[j];
                }
            }
        }
        assert!((c - internal).abs() < 1e-9 * c.abs());
        // At half density every stress follows its own modulus pair.
        let xh = vec![0.5; mesh.n_elems()];
        let sh = element_stresses(&mesh, &u, &xh);
        let (mu, kappa) = material::ramp_moduli(0.5);
        for (e, s) in sh.iter().enumerate() {
            let eps = center_strain(mesh.h, &mesh.gather_u(e, &u));
            let expect = stress_from_strain(mu, kappa, eps);
            for c in 0..3 {
                assert!((s[c] - expect[c]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_load_gives_zero_state() {
        let mesh = tension_strip(4, 2, 0.1, 0.2);
        let kernels = Kernels::new();
        let x = vec![1.0; mesh.n_elems()];
        let k = global_stiffness(&mesh, &kernels, &graded_moduli(&x));
        let kfac = k.clone().factorize().unwrap();
        let u = solve_static(&k, &kfac, &vec![0.0; mesh.n_dofs]).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));
        let ks = global_stress_stiffness(&mesh, &kernels, &element_stresses(&mesh, &u, &x));
        let mut y = vec![0.0; mesh.n_dofs];
        ks.matvec(&vec![1.0; mesh.n_dofs], &mut y);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn void_stiffness_is_floor_scaled_solid_stiffness() {
        let mesh = tension_strip(3, 2, 0.1, 0.1);
        let kernels = Kernels::new();
        let solid = global_stiffness(&mesh, &kernels, &graded_moduli(&vec![1.0; 6]));
        let void = global_stiffness(&mesh, &kernels, &graded_moduli(&vec![0.0; 6]));
        let ones = vec![1.0; mesh.n_dofs];
        let mut ys = vec![0.0; mesh.n_dofs];
        let mut yv = vec![0.0; mesh.n_dofs];
        solid.matvec(&ones, &mut ys);
        void.matvec(&ones, &mut yv);
        for i in 0..mesh.n_dofs {
            assert!((yv[i] - material::STIFF_FLOOR * ys[i]).abs() < 1e-20 + 1e-9 * yv[i].abs());
        }
    }

    #[test]
    fn cantilever_tip_deflection_near_beam_theory() {
        // 1.0 x 0.1 strip, clamped left edge, tip load on the right edge.
        let (nelx, nely, h) = (40, 4, 0.025);
        let p = 1e-3;
        let mut b = MeshBuilder::new(nelx, nely, h, vec![true; nelx * nely]);
        for iy in 0..=nely {
            b.fix_node(0, iy);
        }
        for iy in 0..=nely {
            let w = if iy == 0 || iy == nely { 0.5 } else { 1.0 };
            b.add_load(nelx, iy, 0.0, -p / nely as f64 * w);
        }
        let mesh = b.build().unwrap();
        let kernels = Kernels::new();
        let x = vec![1.0; mesh.n_elems()];
        let k = global_stiffness(&mesh, &kernels, &graded_moduli(&x));
        let kfac = k.clone().factorize().unwrap();
        let u = solve_static(&k, &kfac, &mesh.load).unwrap();
        // Mean vertical displacement of the loaded edge elements' right
        // nodes, read from the last column of elements.
        let mut tip = 0.0;
        let mut count = 0.0;
        for e in 0..mesh.n_elems() {
            let (ex, _) = mesh.elem_xy(e);
            if ex == nelx - 1 {
                let ue = mesh.gather_u(e, &u);
                tip += 0.5 * (ue[3] + ue[5]);
                count += 1.0;
            }
        }
        tip /= count;
        let inertia = 0.1_f64.powi(3) / 12.0;
        let beam = -p * 1.0_f64.powi(3) / (3.0 * inertia);
        let ratio = tip / beam;
        // The fully integrated bilinear quad is a few percent stiff in
        // bending at four elements through the depth (parasitic shear);
        // anchor the observed value and keep a beam-theory sanity band.
        assert!((ratio - 1.0).abs() < 0.04, "deflection ratio {ratio}");
        assert!((ratio - 0.97383).abs() < 1e-3, "deflection ratio {ratio}");
    }

    /// Vertical column clamped at the bottom with a compressive top load.
    fn column(nelx: usize, nely: usize, h: f64, total: f64) -> DomainMesh {
        let mut b = MeshBuilder::new(nelx, nely, h, vec![true; nelx * nely]);
        for ix in 0..=nelx {
            b.fix_node(ix, 0);
        }
        for ix in 0..=nelx {
            let w = if ix == 0 || ix == nelx { 0.5 } else { 1.0 };
            b.add_load(ix, nely, 0.0, -total / nelx as f64 * w);
        }
        b.build().unwrap()
    }

    fn column_modes(mesh: &DomainMesh, n: usize) -> Vec<BucklingMode> {
        let kernels = Kernels::new();
        let x = vec![1.0; mesh.n_elems()];
        let k = global_stiffness(mesh, &kernels, &graded_moduli(&x));
        let kfac = k.clone().factorize().unwrap();
        let u = solve_static(&k, &kfac, &mesh.load).unwrap();
        let ks = global_stress_stiffness(mesh, &kernels, &element_stresses(mesh, &u, &x));
        solve_buckling(&k, &kfac, &ks, n, 1e-9, 7).unwrap()
    }

    #[test]
    fn euler_column_load_factor() {
        // 0.1 x 1.0 column: first sway mode of a clamped-free strut.
        let p = 1e-4;
        let mesh = column(10, 100, 0.01, p);
        let modes = column_modes(&mesh, 3);
        let inertia = 0.1_f64.powi(3) / 12.0;
        let euler = std::f64::consts::PI.powi(2) * inertia / (4.0 * 1.0_f64.powi(2)) / p;
        let lambda1 = modes[0].lambda;
        assert!(
            (lambda1 / euler - 1.0).abs() < 0.05,
            "lambda {lambda1} vs euler {euler}"
        );
        assert!(modes[0].residual < 1e-8);
        assert!(modes[0].gamma >= modes[1].gamma && modes[1].gamma >= modes[2].gamma);
        for m in &modes {
            assert!((m.lambda * m.gamma - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn doubling_the_load_halves_the_load_factor() {
        let mesh1 = column(4, 20, 0.05, 1e-4);
        let mesh2 = column(4, 20, 0.05, 2e-4);
        let m1 = column_modes(&mesh1, 2);
        let m2 = column_modes(&mesh2, 2);
        for (a, b) in m1.iter().zip(&m2) {
            assert!((a.lambda / b.lambda - 2.0).abs() < 1e-7, "{} {}", a.lambda, b.lambda);
        }
    }

    #[test]
    fn adding_a_stiffness_multiple_shifts_the_inverse_factor() {
        let mesh = column(4, 16, 0.05, 1e-4);
        let kernels = Kernels::new();
        let x = vec![1.0; mesh.n_elems()];
        let k = global_stiffness(&mesh, &kernels, &graded_moduli(&x));
        let kfac = k.clone().factorize().unwrap();
        let u = solve_static(&k, &kfac, &mesh.load).unwrap();
        let stresses = element_stresses(&mesh, &u, &x);
        let ks = global_stress_stiffness(&mesh, &kernels, &stresses);
        let gamma1 = solve_buckling(&k, &kfac, &ks, 1, 1e-10, 3).unwrap()[0].gamma;
        // Subtracting alpha*K from K_sigma adds alpha to every gamma.
        let alpha = 0.3;
        let mut shifted = global_stress_stiffness(&mesh, &kernels, &stresses);
        let scaled = global_stiffness(
            &mesh,
            &kernels,
            &x.iter().map(|_| {
                let (mu, kappa) = material::ramp_moduli(1.0);
                (-alpha * mu, -alpha * kappa)
            }).collect::<Vec<_>>(),
        );
        for (dst, src) in shifted.values_mut().iter_mut().zip(scaled.values()) {
            *dst += *src;
        }
        let gamma_shifted = solve_buckling(&k, &kfac, &shifted, 1, 1e-10, 3).unwrap()[0].gamma;
        assert!(
            (gamma_shifted - (gamma1 + alpha)).abs() < 1e-7,
            "{gamma_shifted} vs {}",
            gamma1 + alpha
        );
    }
}
