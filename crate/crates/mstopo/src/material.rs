//! Density-dependent material laws for the homogenized triangular-lattice
//! family: rational stiffness interpolations for bulk and shear moduli, the
//! yield-limit polynomial with its solid-transition relaxation, the local
//! buckling stress limits, and the three-parameter failure surface built on
//! them.
//!
//! Everything is normalized: the base Young's modulus is 1 and Poisson's
//! ratio 1/3 (plane stress), so the solid moduli are `mu0 = 0.375` and
//! `kappa0 = 0.75` and stress limits scale with the configured yield
//! strength.

use crate::{Error, Result};

pub const MU0: f64 = 0.375;
pub const KAPPA0: f64 = 0.75;
/// Stiffness floor as a fraction of the solid modulus.
pub const STIFF_FLOOR: f64 = 1e-9;
/// Rational-interpolation curvature for shear and bulk.
pub const Q_MU: f64 = 2.097;
pub const Q_KAPPA: f64 = 2.0;

/// Yield-limit polynomial coefficients (powers 1..=5 of the density).
pub const YIELD_COEFFS: [f64; 5] = [0.2266, 0.8066, -2.5827, 2.9753, -1.0987];
/// Threshold of the solid-transition jump in the relaxed yield limit.
pub const ETA_YIELD: f64 = 0.999;

/// Buckling-limit coefficients (powers 3, 4, 5 of the density): uniaxial
/// tension needs the quintic term, uniaxial and equi-biaxial compression are
/// quartic.
pub const BUCK_TENSION: [f64; 3] = [-0.06751, 1.741, -0.94];
pub const BUCK_COMPRESSION: [f64; 2] = [0.05, 0.1644];
pub const BUCK_BIAXIAL: [f64; 2] = [0.0133, 0.1539];

/// Version tag for the shipped coefficient tables, recorded in manifests.
pub const COEFFICIENT_TABLE_VERSION: &str = "tables-v1";

fn ramp(rho: f64, q: f64, solid: f64, floor: f64) -> f64 {
    floor + rho / (1.0 + q * (1.0 - rho)) * (solid - floor)
}

fn ramp_d(rho: f64, q: f64, solid: f64, floor: f64) -> f64 {
    let den = 1.0 + q * (1.0 - rho);
    (1.0 + q) / (den * den) * (solid - floor)
}

/// Shear and bulk modulus of the graded microstructure at density `rho`,
/// with the default stiffness floor.
pub fn ramp_moduli(rho: f64) -> (f64, f64) {
    (
        ramp(rho, Q_MU, MU0, STIFF_FLOOR * MU0),
        ramp(rho, Q_KAPPA, KAPPA0, STIFF_FLOOR * KAPPA0),
    )
}

pub fn ramp_moduli_drho(rho: f64) -> (f64, f64) {
    (
        ramp_d(rho, Q_MU, MU0, STIFF_FLOOR * MU0),
        ramp_d(rho, Q_KAPPA, KAPPA0, STIFF_FLOOR * KAPPA0),
    )
}

/// Bulk interpolation with an explicit floor (zero floor makes the curve an
/// exact attainability bound, see [`hs_upper_bulk`]).
pub fn ramp_kappa(rho: f64, floor: f64) -> f64 {
    ramp(rho, Q_KAPPA, KAPPA0, floor)
}

/// Shear interpolation with an explicit floor.
pub fn ramp_mu(rho: f64, floor: f64) -> f64 {
    ramp(rho, Q_MU, MU0, floor)
}

/// Hashin–Shtrikman upper bound on the bulk modulus of a solid/void mixture
/// in plane elasticity: `kappa0 + (1-rho) / (rho/(kappa0+mu0) - 1/kappa0)`.
pub fn hs_upper_bulk(rho: f64) -> f64 {
    if rho >= 1.0 {
        return KAPPA0;
    }
    KAPPA0 + (1.0 - rho) / (rho / (KAPPA0 + MU0) - 1.0 / KAPPA0)
}

/// Plane-stress constitutive matrix from shear and bulk moduli, engineering
/// shear convention.
pub fn plane_stress_c(mu: f64, kappa: f64) -> [[f64; 3]; 3] {
    [
        [kappa + mu, kappa - mu, 0.0],
        [kappa - mu, kappa + mu, 0.0],
        [0.0, 0.0, mu],
    ]
}

/// Von Mises equivalent of a plane-stress state `(s11, s22, s12)`.
pub fn von_mises(s: [f64; 3]) -> f64 {
    (s[0] * s[0] - s[0] * s[1] + s[1] * s[1] + 3.0 * s[2] * s[2]).max(0.0).sqrt()
}

/// Yield limit of the graded microstructure without the solid-transition
/// jump, in units of the base yield strength.
pub fn yield_limit_bar(x: f64) -> f64 {
    let mut acc = 0.0;
    for &c in YIELD_COEFFS.iter().rev() {
        acc = (acc + c) * x;
    }
    acc
}

fn yield_limit_bar_dx(x: f64) -> f64 {
    let mut acc = 0.0;
    for (k, &c) in YIELD_COEFFS.iter().enumerate().rev() {
        acc = acc * x + c * (k + 1) as f64;
    }
    acc
}

/// Relaxed yield limit: the fitted polynomial plus a smoothed jump to the
/// full base strength at fully solid material.
pub fn yield_limit(x: f64, sigma0: f64, beta_yield: f64) -> f64 {
    let bar = yield_limit_bar(x);
    let jump = 1.0 - yield_limit_bar(1.0);
    sigma0 * (bar + jump * crate::filter::heaviside(x, ETA_YIELD, beta_yield))
}

pub fn yield_limit_dx(x: f64, sigma0: f64, beta_yield: f64) -> f64 {
    let jump = 1.0 - yield_limit_bar(1.0);
    sigma0
        * (yield_limit_bar_dx(x) + jump * crate::filter::heaviside_dv(x, ETA_YIELD, beta_yield))
}

/// Buckling stress limits `(tension, compression, biaxial compression)` of
/// the microstructure at density `x`, in units of the base Young's modulus.
pub fn buckling_limits(x: f64) -> [f64; 3] {
    let x3 = x * x * x;
    let x4 = x3 * x;
    let x5 = x4 * x;
    [
        BUCK_TENSION[0] * x3 + BUCK_TENSION[1] * x4 + BUCK_TENSION[2] * x5,
        BUCK_COMPRESSION[0] * x3 + BUCK_COMPRESSION[1] * x4,
        BUCK_BIAXIAL[0] * x3 + BUCK_BIAXIAL[1] * x4,
    ]
}

pub fn buckling_limits_dx(x: f64) -> [f64; 3] {
    let x2 = x * x;
    let x3 = x2 * x;
    let x4 = x3 * x;
    [
        3.0 * BUCK_TENSION[0] * x2 + 4.0 * BUCK_TENSION[1] * x3 + 5.0 * BUCK_TENSION[2] * x4,
        3.0 * BUCK_COMPRESSION[0] * x2 + 4.0 * BUCK_COMPRESSION[1] * x3,
        3.0 * BUCK_BIAXIAL[0] * x2 + 4.0 * BUCK_BIAXIAL[1] * x3,
    ]
}

/// Three-parameter conical failure surface with an elliptic deviatoric
/// section, calibrated so uniaxial tension `t`, uniaxial compression `c` and
/// equi-biaxial compression `b` each sit exactly on the surface.
///
/// Both meridians are straight lines through a shared apex on the
/// hydrostatic axis: the tensile meridian passes through the uniaxial-tension
/// and equi-biaxial-compression states (which share a Lode angle), the
/// compressive meridian through uniaxial compression. The equivalent measure
/// is the ray scaling factor: `q(sigma)` such that `sigma / q` lies on the
/// surface, clamped at zero for states the surface can never reach
/// (hydrostatic-tension side). It is positively homogeneous of degree one,
/// so load factors scale linearly.
#[derive(Clone, Copy, Debug)]
pub struct WwSurface {
    rt: f64,
    rc: f64,
    xi0: f64,
    /// Derivatives of `(rt, rc, xi0)` with respect to the three limits.
    d_rt: [f64; 3],
    d_rc: [f64; 3],
    d_xi0: [f64; 3],
}

/// Lowest admissible ratio of tensile to compressive section radius; below
/// it the elliptic section degenerates (loses convexity).
const ECC_MIN: f64 = 0.501;

impl WwSurface {
    /// Strict constructor: rejects limits the surface cannot be calibrated
    /// to (non-positive, tension not exceeding biaxial compression, or a
    /// degenerate section ratio).
    pub fn new(t: f64, c: f64, b: f64) -> Result<WwSurface> {
        if !(t > 0.0 && c > 0.0 && b > 0.0) {
            return Err(Error::Degenerate(format!(
                "failure surface needs positive limits, got ({t}, {c}, {b})"
            )));
        }
        if t <= b {
            return Err(Error::Degenerate(format!(
                "tension limit {t} must exceed biaxial compression limit {b}"
            )));
        }
        let s = Self::from_limits(t, c, b);
        let e = if s.rt <= s.rc { s.rt / s.rc } else { s.rc / s.rt };
        if e <= ECC_MIN {
            return Err(Error::Degenerate(format!(
                "section ratio {e:.4} below {ECC_MIN}: limits ({t}, {c}, {b}) \
                 (biaxial compression too close to half the uniaxial value)"
            )));
        }
        Ok(s)
    }

    /// Total constructor for interpolated limits at arbitrary densities:
    /// floors the limits away from zero, keeps tension above biaxial
    /// compression, and clamps the section ratio to its admissible range by
    /// raising the tensile radius (uniaxial-compression calibration, the
    /// direction that governs local buckling, is preserved exactly).
    pub fn new_clamped(t: f64, c: f64, b: f64) -> WwSurface {
        const FLOOR: f64 = 1e-12;
        let c = c.max(FLOOR);
        let b = b.max(FLOOR * 0.5);
        let (t, dtb) = if t > b * 1.01 { (t, 0.0) } else { (b * 1.01, 1.01) };
        let mut s = Self::from_limits(t, c, b);
        if dtb != 0.0 {
            // Tension was re-derived from the biaxial limit: reroute its
            // derivative before any further clamping.
            for d in [&mut s.d_rt, &mut s.d_rc, &mut s.d_xi0] {
                d[2] += d[0] * dtb;
                d[0] = 0.0;
            }
        }
        if s.rt <= s.rc && s.rt <= ECC_MIN * s.rc {
            s.rt = ECC_MIN * s.rc;
            for k in 0..3 {
                s.d_rt[k] = ECC_MIN * s.d_rc[k];
            }
        } else if s.rc < s.rt && s.rc <= ECC_MIN * s.rt {
            s.rc = ECC_MIN * s.rt;
            for k in 0..3 {
                s.d_rc[k] = ECC_MIN * s.d_rt[k];
            }
        }
        s
    }

    fn from_limits(t: f64, c: f64, b: f64) -> WwSurface {
        let sq3 = 3.0_f64.sqrt();
        // Tensile meridian through (t/3, t/sq3) and (-2b/3, b/sq3).
        let rt = sq3 * (t - b) / (t + 2.0 * b);
        let d_rt = [
            3.0 * sq3 * b / ((t + 2.0 * b) * (t + 2.0 * b)),
            0.0,
            -3.0 * sq3 * t / ((t + 2.0 * b) * (t + 2.0 * b)),
        ];
        // Apex: tensile meridian's hydrostatic intercept.
        let xi0 = -t * b / (t - b);
        let d_xi0 = [
            b * b / ((t - b) * (t - b)),
            0.0,
            -t * t / ((t - b) * (t - b)),
        ];
        // Compressive meridian through (-c/3, c/sq3) and the apex.
        let den = -c / 3.0 - xi0;
        let rc = (c / sq3) / den;
        let drc_dc = (1.0 / sq3) * (-xi0) / (den * den);
        let drc_dxi0 = (c / sq3) / (den * den);
        let d_rc = [
            drc_dxi0 * d_xi0[0],
            drc_dc,
            drc_dxi0 * d_xi0[2],
        ];
        WwSurface { rt, rc, xi0, d_rt, d_rc, d_xi0 }
    }

    /// Section radius factor `f(e, u)` with `f(e, 1) = e` and
    /// `f(e, 1/2) = 1`, plus partials in `e` and `u`.
    fn section(e: f64, u: f64) -> (f64, f64, f64) {
        let one_e2 = 1.0 - e * e;
        let te1 = 2.0 * e - 1.0;
        let g = 4.0 * one_e2 * u * u + 5.0 * e * e - 4.0 * e;
        let sg = g.max(0.0).sqrt();
        let num = 2.0 * one_e2 * u + te1 * sg;
        let den = 4.0 * one_e2 * u * u + te1 * te1;
        let f = num / den;
        // Partials via quotient rule.
        let dg_de = -8.0 * e * u * u + 10.0 * e - 4.0;
        let dg_du = 8.0 * one_e2 * u;
        let dsg_de = if sg > 1e-14 { 0.5 * dg_de / sg } else { 0.0 };
        let dsg_du = if sg > 1e-14 { 0.5 * dg_du / sg } else { 0.0 };
        let dnum_de = -4.0 * e * u + 2.0 * sg + te1 * dsg_de;
        let dnum_du = 2.0 * one_e2 + te1 * dsg_du;
        let dden_de = -8.0 * e * u * u + 4.0 * te1;
        let dden_du = 8.0 * one_e2 * u;
        let f_e = (dnum_de * den - num * dden_de) / (den * den);
        let f_u = (dnum_du * den - num * dden_du) / (den * den);
        (f, f_e, f_u)
    }

    /// Section radius at deviatoric position `u = cos(theta)` together with
    /// partials with respect to `(rt, rc, u)`.
    fn radius(&self, u: f64) -> (f64, f64, f64, f64) {
        if self.rt <= self.rc {
            let e = self.rt / self.rc;
            let (f, f_e, f_u) = Self::section(e, u);
            let r = self.rc * f;
            (r, f_e, f - e * f_e, self.rc * f_u)
        } else {
            // Mirrored section: swap the roles of the meridians and measure
            // the angle from the other side (u' = cos(pi/3 - theta)).
            let e = self.rc / self.rt;
            let up = Self::mirror_u(u);
            let (f, f_e, f_u) = Self::section(e, up);
            let r = self.rt * f;
            // du'/du = d cos(pi/3 - theta)/d cos(theta)
            //        = -sin(pi/3 - theta)/sin(theta).
            let st = (1.0 - u * u).max(1e-18).sqrt();
            let stp = (1.0 - up * up).max(0.0).sqrt();
            (r, f - e * f_e, f_e, -self.rt * f_u * stp / st)
        }
    }

    fn mirror_u(u: f64) -> f64 {
        // cos(pi/3 - theta) = cos(pi/3) u + sin(pi/3) sin(theta).
        0.5 * u + 0.5 * 3.0_f64.sqrt() * (1.0 - u * u).max(0.0).sqrt()
    }

    /// Equivalent stress measure for the plane-stress state
    /// `(s11, s22, s12)`; 1 on the surface, < 1 strictly inside, 0 for
    /// states whose ray never crosses it.
    pub fn equivalent(&self, s: [f64; 3]) -> f64 {
        self.eval(s).0
    }

    /// Equivalent measure plus gradients with respect to the stress
    /// components and the three calibration limits.
    pub fn equivalent_grad(&self, s: [f64; 3]) -> (f64, [f64; 3], [f64; 3]) {
        self.eval(s)
    }

    fn eval(&self, s: [f64; 3]) -> (f64, [f64; 3], [f64; 3]) {
        let zero = (0.0, [0.0; 3], [0.0; 3]);
        let i1 = s[0] + s[1];
        let sm = i1 / 3.0;
        let d11 = s[0] - sm;
        let d22 = s[1] - sm;
        let d33 = -sm;
        let d12 = s[2];
        let j2 = 0.5 * (d11 * d11 + d22 * d22 + d33 * d33) + d12 * d12;
        if j2 < 1e-300 {
            // Purely hydrostatic: on the tension side the ray never hits the
            // surface; on the compression side scale by the apex distance.
            if sm >= 0.0 {
                return zero;
            }
            let q = sm / self.xi0;
            let dq = [1.0 / (3.0 * self.xi0), 1.0 / (3.0 * self.xi0), 0.0];
            let dlim = {
                let dq_dxi0 = -sm / (self.xi0 * self.xi0);
                [
                    dq_dxi0 * self.d_xi0[0],
                    dq_dxi0 * self.d_xi0[1],
                    dq_dxi0 * self.d_xi0[2],
                ]
            };
            return (q, dq, dlim);
        }
        let sj2 = j2.sqrt();
        let j3 = d33 * (d11 * d22 - d12 * d12);
        let k = 1.5 * 3.0_f64.sqrt();
        let mut c3 = k * j3 / (j2 * sj2);
        c3 = c3.clamp(-1.0 + 1e-12, 1.0 - 1e-12);
        let theta = c3.acos() / 3.0;
        let u = theta.cos();

        let (r, dr_drt, dr_drc, dr_du) = self.radius(u);
        let a = sj2 - r * sm;
        let bden = r * (-self.xi0);
        let q = a / bden;
        if q <= 0.0 {
            return zero;
        }

        // dq pieces: q = A / B, A = sqrt(J2) - r sm, B = -r xi0.
        let dq_dsj2 = 1.0 / bden;
        let dq_dsm = 1.0 / self.xi0;
        let dq_dr = -sj2 / (r * r * (-self.xi0));
        let dq_dxi0 = a / (r * self.xi0 * self.xi0);

        // Stress derivatives of the invariants: J3 = d33 (d11 d22 - d12^2)
        // with the deviator components linear in the stress.
        let dsj2 = [d11 / (2.0 * sj2), d22 / (2.0 * sj2), d12 / sj2];
        let dsm = [1.0 / 3.0, 1.0 / 3.0, 0.0];
        let dj3 = {
            let dd11 = [2.0 / 3.0, -1.0 / 3.0, 0.0];
            let dd22 = [-1.0 / 3.0, 2.0 / 3.0, 0.0];
            let dd33 = [-1.0 / 3.0, -1.0 / 3.0, 0.0];
            let mut g = [0.0; 3];
            for k in 0..3 {
                g[k] = dd33[k] * (d11 * d22 - d12 * d12)
                    + d33 * (dd11[k] * d22 + d11 * dd22[k]);
            }
            g[2] += d33 * (-2.0 * d12);
            g
        };
        // u = cos(acos(c3)/3): du = sin(theta)/(3 sqrt(1-c3^2)) dc3.
        let s1mc = (1.0 - c3 * c3).max(1e-18).sqrt();
        let du_dc3 = theta.sin() / (3.0 * s1mc);
        let mut dstress = [0.0; 3];
        for i in 0..3 {
            let dj2_i = match i {
                0 => d11,
                1 => d22,
                _ => 2.0 * d12,
            };
            let dc3 = k * (dj3[i] / (j2 * sj2) - 1.5 * j3 * dj2_i / (j2 * j2 * sj2));
            let du = du_dc3 * dc3;
            dstress[i] = dq_dsj2 * dsj2[i] + dq_dsm * dsm[i] + dq_dr * dr_du * du;
        }

        let mut dlimits = [0.0; 3];
        for k in 0..3 {
            dlimits[k] = dq_dr * (dr_drt * self.d_rt[k] + dr_drc * self.d_rc[k])
                + dq_dxi0 * self.d_xi0[k];
        }
        (q, dstress, dlimits)
    }
}
