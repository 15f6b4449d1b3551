//! Density filtering and projection.
//!
//! The smoothing PDE `-r^2 lap(y~) + y~ = y` is collocated on the lattice of
//! element centers (unit spacing, so radii are in element lengths): each
//! element couples to its face neighbors through `r^2`, and boundary faces
//! tagged absorbing add `100 r` to the diagonal, the discrete form of the
//! boundary condition `r^2 grad(y~).n = -100 r y~`. The resulting operator is
//! symmetric positive definite, is factorized once, and acts as its own
//! adjoint. By construction the filter is exact in the obvious limits:
//! `r -> 0` gives the identity, constants are fixed points without absorbing
//! faces, and the total field sum is conserved without absorbing faces.
//!
//! Projection uses the smoothed Heaviside step; the infill regularization
//! pushes only densities above a threshold toward 1 and leaves the rest of
//! the range intact.

use crate::linalg::{Skyline, SkylineFactor};
use crate::mesh::{DesignFields, DomainMesh, NO_ELEM};
use crate::Result;

/// Converts a classical (cone) filter radius to the PDE length scale.
pub fn classical_to_pde_radius(big_r: f64) -> f64 {
    big_r / (2.0 * 3.0_f64.sqrt())
}

pub struct FilterOperator {
    n: usize,
    factor: SkylineFactor,
    radius: f64,
}

impl FilterOperator {
    /// Builds and factorizes the smoothing operator for `mesh` with the PDE
    /// radius given in element lengths.
    pub fn new(mesh: &DomainMesh, radius: f64) -> Result<FilterOperator> {
        let n = mesh.n_elems();
        let r2 = radius * radius;
        let edges = (0..n).flat_map(|e| {
            mesh.neighbors[e]
                .into_iter()
                .filter(move |&nb| nb != NO_ELEM && nb < e)
                .map(move |nb| (nb, e))
        });
        let mut a = Skyline::from_edges(n, edges);
        for e in 0..n {
            let mut diag = 1.0 + 100.0 * radius * mesh.robin_faces[e] as f64;
            for nb in mesh.neighbors[e] {
                if nb == NO_ELEM {
                    continue;
                }
                diag += r2;
                if nb < e {
                    a.add(e, nb, -r2);
                }
            }
            a.add(e, e, diag);
        }
        let factor = a.factorize()?;
        Ok(FilterOperator { n, factor, radius })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn apply(&self, field: &[f64]) -> Vec<f64> {
        assert_eq!(field.len(), self.n);
        self.factor.solve(field)
    }

    /// Gradient pull-back; the operator is symmetric, so this is `apply`.
    pub fn adjoint(&self, upstream: &[f64]) -> Vec<f64> {
        self.apply(upstream)
    }
}

/// Smoothed Heaviside step with threshold `eta` and sharpness `beta`; maps 0
/// to 0 and 1 to 1 exactly.
pub fn heaviside(v: f64, eta: f64, beta: f64) -> f64 {
    let denom = (beta * eta).tanh() + (beta * (1.0 - eta)).tanh();
    ((beta * eta).tanh() + (beta * (v - eta)).tanh()) / denom
}

pub fn heaviside_dv(v: f64, eta: f64, beta: f64) -> f64 {
    let denom = (beta * eta).tanh() + (beta * (1.0 - eta)).tanh();
    let t = (beta * (v - eta)).tanh();
    beta * (1.0 - t * t) / denom
}

/// Pushes densities above `eta_max` toward 1 and leaves lower values nearly
/// untouched; at saturation the value is `(beta-1)/beta + v/beta`.
pub fn infill_regularize(v: f64, eta_max: f64, beta: f64) -> f64 {
    let h = heaviside(v, eta_max, beta);
    v * (1.0 - h) + ((beta - 1.0) / beta + v / beta) * h
}

pub fn infill_regularize_dv(v: f64, eta_max: f64, beta: f64) -> f64 {
    let h = heaviside(v, eta_max, beta);
    let dh = heaviside_dv(v, eta_max, beta);
    (1.0 - h * (1.0 - 1.0 / beta)) + dh * ((beta - 1.0) / beta) * (1.0 - v)
}

/// Threshold above which the regularization starts pushing densities to 1.
pub const ETA_MAX: f64 = 0.9;

/// The full variable-to-physical-field chain: filter both design fields,
/// regularize the density, project the indicator at the three robust
/// thresholds, and compose the physical densities. Passive elements are
/// forced fully solid in every derived field.
pub struct FieldPipeline {
    pub fx: FilterOperator,
    pub fs: FilterOperator,
    pub etas: [f64; 3],
}

/// Gradients flowing into the chain from a response function: with respect
/// to the physical densities, the regularized density (stress-limit and
/// cell-stiffness interpolations read it directly), and the projected
/// indicators (stress relaxation reads them directly). Any part may be left
/// zero.
pub struct Upstream<'a> {
    pub d_rho: [&'a [f64]; 3],
    pub d_xbar: &'a [f64],
    pub d_sbar: [&'a [f64]; 3],
}

impl FieldPipeline {
    pub fn new(mesh: &DomainMesh, r_infill: f64, r_solid: f64, etas: [f64; 3]) -> Result<Self> {
        Ok(FieldPipeline {
            fx: FilterOperator::new(mesh, r_infill)?,
            fs: FilterOperator::new(mesh, r_solid)?,
            etas,
        })
    }

    /// Recomputes every derived field from the raw `x`, `s` at sharpness
    /// `beta`.
    pub fn forward(&self, mesh: &DomainMesh, f: &mut DesignFields, beta: f64) {
        f.xt = self.fx.apply(&f.x);
        f.st = self.fs.apply(&f.s);
        let n = mesh.n_elems();
        for e in 0..n {
            f.xbar[e] = if mesh.passive[e] {
                1.0
            } else {
                infill_regularize(f.xt[e], ETA_MAX, beta)
            };
        }
        for m in 0..3 {
            for e in 0..n {
                f.sbar[m][e] = if mesh.passive[e] {
                    1.0
                } else {
                    heaviside(f.st[e], self.etas[m], beta)
                };
                f.rho[m][e] = f.xbar[e] * f.sbar[m][e];
            }
        }
    }

    /// Pulls upstream gradients back to the raw design variables. Passive
    /// elements contribute nothing (their derived values are constants).
    pub fn backward(
        &self,
        mesh: &DomainMesh,
        f: &DesignFields,
        beta: f64,
        up: &Upstream,
    ) -> (Vec<f64>, Vec<f64>) {
        let n = mesh.n_elems();
        let mut d_xt = vec![0.0; n];
        let mut d_st = vec![0.0; n];
        for e in 0..n {
            if mesh.passive[e] {
                continue;
            }
            let mut gx = up.d_xbar[e];
            let mut gs_total = 0.0;
            for m in 0..3 {
                gx += up.d_rho[m][e] * f.sbar[m][e];
                let gsm = up.d_sbar[m][e] + up.d_rho[m][e] * f.xbar[e];
                gs_total += gsm * heaviside_dv(f.st[e], self.etas[m], beta);
            }
            d_xt[e] = gx * infill_regularize_dv(f.xt[e], ETA_MAX, beta);
            d_st[e] = gs_total;
        }
        (self.fx.adjoint(&d_xt), self.fs.adjoint(&d_st))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_lbeam_domain, init_design_fields, robust_etas, MeshBuilder};

    fn open_rect(nx: usize, ny: usize) -> DomainMesh {
        let mut b = MeshBuilder::new(nx, ny, 1.0 / nx as f64, vec![true; nx * ny]);
        b.fix_node(0, 0);
        b.build().unwrap()
    }

    #[test]
    fn uniform_field_is_a_fixed_point_without_absorbing_faces() {
        let m = open_rect(9, 7);
        let op = FilterOperator::new(&m, 2.0).unwrap();
        let out = op.apply(&vec![0.37; m.n_elems()]);
        for v in out {
            assert!((v - 0.37).abs() < 1e-13, "{v}");
        }
    }

    #[test]
    fn vanishing_radius_gives_the_identity() {
        let m = open_rect(8, 8);
        let op = FilterOperator::new(&m, 1e-9).unwrap();
        let field: Vec<f64> = (0..m.n_elems()).map(|e| (e as f64).sin().abs()).collect();
        let out = op.apply(&field);
        for (a, b) in field.iter().zip(&out) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn impulse_sum_is_conserved_without_absorbing_faces() {
        let m = open_rect(11, 11);
        let op = FilterOperator::new(&m, 1.5).unwrap();
        let mut field = vec![0.0; m.n_elems()];
        field[m.n_elems() / 2] = 1.0;
        let out = op.apply(&field);
        let total: f64 = out.iter().sum();
        assert!((total - 1.0).abs() < 1e-10, "{total}");
        assert!(out.iter().all(|&v| v >= 0.0 && v < 1.0));
    }

    #[test]
    fn filter_is_self_adjoint_even_with_absorbing_faces() {
        use rand::{RngExt, SeedableRng};
        let m = build_lbeam_domain(16, 2.0).unwrap();
        let op = FilterOperator::new(&m, 1.5).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let a: Vec<f64> = (0..m.n_elems()).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..m.n_elems()).map(|_| rng.random::<f64>()).collect();
        let fa = op.apply(&a);
        let fb = op.apply(&b);
        let lhs: f64 = fa.iter().zip(&b).map(|(p, q)| p * q).sum();
        let rhs: f64 = a.iter().zip(&fb).map(|(p, q)| p * q).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn absorbing_faces_pull_boundary_values_down() {
        let nel = 16;
        let m_robin = build_lbeam_domain(nel, 2.0).unwrap();
        let mut active = vec![true; nel * nel];
        for ey in nel / 2..nel {
            for ex in nel / 2..nel {
                active[ey * nel + ex] = false;
            }
        }
        let mut b = MeshBuilder::new(nel, nel, 1.0 / nel as f64, active);
        b.fix_node(0, nel);
        let m_neumann = b.build().unwrap();
        let opr = FilterOperator::new(&m_robin, 1.5).unwrap();
        let opn = FilterOperator::new(&m_neumann, 1.5).unwrap();
        let ones = vec![1.0; m_robin.n_elems()];
        let vr = opr.apply(&ones);
        let vn = opn.apply(&ones);
        let corner = m_robin.grid_to_active[0]; // two absorbing faces
        assert!(vr[corner] < vn[corner] - 1e-3, "{} vs {}", vr[corner], vn[corner]);
        assert!(vr.iter().zip(&vn).all(|(r, n)| r <= n));
    }

    #[test]
    fn heaviside_endpoints_midpoint_and_sharp_value() {
        for &(eta, beta) in &[(0.3, 2.0), (0.5, 16.0), (0.49, 64.0), (0.51, 256.0)] {
            assert!((heaviside(0.0, eta, beta)).abs() < 1e-15);
            assert!((heaviside(1.0, eta, beta) - 1.0).abs() < 1e-15);
        }
        for beta in [1.0, 8.0, 64.0] {
            assert!((heaviside(0.5, 0.5, beta) - 0.5).abs() < 1e-14);
        }
        // Sharp projection of 0.6 across a 0.5 threshold saturates; the exact
        // value stays 2.76e-6 shy of 1.
        let h = heaviside(0.6, 0.5, 64.0);
        assert!((h - 0.999997239235050).abs() < 1e-13, "{h}");
    }

    #[test]
    fn regularization_feeds_through_low_values_and_saturates_high_ones() {
        assert!((infill_regularize(1.0, ETA_MAX, 7.0) - 1.0).abs() < 1e-15);
        assert!((infill_regularize(0.2, ETA_MAX, 64.0) - 0.2).abs() < 1e-6);
        assert!(infill_regularize(0.95, ETA_MAX, 256.0) >= 0.9998);
        let v = infill_regularize(0.95, ETA_MAX, 256.0);
        assert!((v - 0.999804687499620).abs() < 1e-12, "{v}");
    }

    #[test]
    fn projection_maps_are_monotone() {
        for beta in [1.0, 4.0, 32.0, 256.0] {
            for eta in [0.49, 0.5, 0.51, ETA_MAX] {
                let mut prev_h = f64::NEG_INFINITY;
                let mut prev_p = f64::NEG_INFINITY;
                for k in 0..=400 {
                    let v = k as f64 / 400.0;
                    let h = heaviside(v, eta, beta);
                    let p = infill_regularize(v, eta, beta);
                    assert!(h >= prev_h - 1e-15, "H not monotone at {v}, beta={beta}");
                    assert!(p >= prev_p - 1e-15, "P not monotone at {v}, beta={beta}");
                    assert!((0.0..=1.0).contains(&h));
                    prev_h = h;
                    prev_p = p;
                }
            }
        }
    }

    #[test]
    fn pointwise_derivatives_match_finite_differences() {
        let d = 1e-6;
        for &(v, eta, beta) in &[(0.3, 0.5, 8.0), (0.52, 0.51, 32.0), (0.88, ETA_MAX, 64.0)] {
            let fd = (heaviside(v + d, eta, beta) - heaviside(v - d, eta, beta)) / (2.0 * d);
            let an = heaviside_dv(v, eta, beta);
            assert!((fd - an).abs() < 1e-5 * an.abs().max(1.0), "H' at {v}");
            let fdp =
                (infill_regularize(v + d, eta, beta) - infill_regularize(v - d, eta, beta)) / (2.0 * d);
            let anp = infill_regularize_dv(v, eta, beta);
            assert!((fdp - anp).abs() < 1e-5 * anp.abs().max(1.0), "P' at {v}");
        }
    }

    #[test]
    fn pipeline_backward_matches_finite_differences() {
        use rand::{RngExt, SeedableRng};
        let mesh = build_lbeam_domain(8, 1.0).unwrap();
        let pipe = FieldPipeline::new(&mesh, 1.2, 2.0, robust_etas()).unwrap();
        let beta = 6.0;
        let n = mesh.n_elems();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let mut f = init_design_fields(&mesh, 0.5, 0.15).unwrap();
        for e in 0..n {
            if !mesh.passive[e] {
                f.x[e] = 0.2 + 0.7 * rng.random::<f64>();
                f.s[e] = 0.2 + 0.7 * rng.random::<f64>();
            }
        }
        let w_rho: Vec<Vec<f64>> =
            (0..3).map(|_| (0..n).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
        let w_xbar: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let w_sbar: Vec<Vec<f64>> =
            (0..3).map(|_| (0..n).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
        let value = |f: &mut DesignFields| -> f64 {
            pipe.forward(&mesh, f, beta);
            let mut l = 0.0;
            for e in 0..n {
                l += w_xbar[e] * f.xbar[e];
                for m in 0..3 {
                    l += w_rho[m][e] * f.rho[m][e] + w_sbar[m][e] * f.sbar[m][e];
                }
            }
            l
        };
        value(&mut f);
        let up = Upstream {
            d_rho: [&w_rho[0], &w_rho[1], &w_rho[2]],
            d_xbar: &w_xbar,
            d_sbar: [&w_sbar[0], &w_sbar[1], &w_sbar[2]],
        };
        let (gx, gs) = pipe.backward(&mesh, &f, beta, &up);
        let d = 1e-6;
        let mut probe = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..12 {
            let e = (probe.random::<f64>() * n as f64) as usize % n;
            if mesh.passive[e] {
                continue;
            }
            let x0 = f.x[e];
            f.x[e] = x0 + d;
            let lp = value(&mut f);
            f.x[e] = x0 - d;
            let lm = value(&mut f);
            f.x[e] = x0;
            let fd = (lp - lm) / (2.0 * d);
            assert!(
                (fd - gx[e]).abs() < 1e-6 * fd.abs().max(1.0),
                "x grad at {e}: {fd} vs {}",
                gx[e]
            );
            let s0 = f.s[e];
            f.s[e] = s0 + d;
            let lp = value(&mut f);
            f.s[e] = s0 - d;
            let lm = value(&mut f);
            f.s[e] = s0;
            let fd = (lp - lm) / (2.0 * d);
            assert!(
                (fd - gs[e]).abs() < 1e-6 * fd.abs().max(1.0),
                "s grad at {e}: {fd} vs {}",
                gs[e]
            );
        }
        let zeros = vec![0.0; n];
        let up0 = Upstream { d_rho: [&zeros, &zeros, &zeros], d_xbar: &zeros, d_sbar: [&zeros, &zeros, &zeros] };
        let (gx0, gs0) = pipe.backward(&mesh, &f, beta, &up0);
        assert!(gx0.iter().chain(&gs0).all(|&g| g == 0.0));
    }

    #[test]
    fn classical_radius_conversion() {
        let r = classical_to_pde_radius(2.0 * 3.0_f64.sqrt());
        assert!((r - 1.0).abs() < 1e-15);
    }
}
