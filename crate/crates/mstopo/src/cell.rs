//! The two-parameter triangular lattice: closed-form geometry fields,
//! rasterization of one periodic tile, periodic homogenization of stiffness,
//! yield-strength sweeps, and the density fits that link the two geometry
//! parameters to a relative density.
//!
//! The lattice consists of three wall families at 60° to each other. A shape
//! field vanishes along the wall center lines and a sharpness field blends
//! rounded or sharpened corners in; the solid region is the sublevel set
//! where the blended field stays at or below `eta_bar`, so the threshold
//! directly controls wall thickness. A tile of `2d/sqrt(3) x 2d` (width x
//! height) is periodic under the lattice translations, so all cell analysis
//! happens on that rectangle with wrap-around boundaries.

use crate::fea::{center_strain_rect, Kernels};
use crate::linalg::Skyline;
use crate::material::{self, KAPPA0, MU0, STIFF_FLOOR};
use crate::{Error, Result};

/// Admissible corner-sharpness range (sweep characterization window).
pub const ALPHA_RANGE: (f64, f64) = (-0.65, 0.22);
/// Admissible threshold range (sweep characterization window).
pub const ETA_RANGE: (f64, f64) = (0.005, 1.25);
/// Lowest density the parameter fits are characterized for.
pub const FIT_DENSITY_MIN: f64 = 0.05;

/// Overall triangular wall pattern: the magnitude of three superposed sine
/// gratings at 60° to each other, normalized to [0, 1].
pub fn lattice_shape(y1: f64, y2: f64, d: f64) -> f64 {
    let s3 = 3.0_f64.sqrt();
    let k = std::f64::consts::PI * s3 / d;
    let w = 2.0 * std::f64::consts::PI / d;
    ((k * (-y1 + y2 / s3)).sin() + (w * y2).sin() + (k * (-y1 - y2 / s3)).sin()).abs() / 3.0
}

/// Corner field: three cosine gratings centered on the wall junctions; adds
/// or removes material at the corners depending on its sign and weight.
pub fn corner_sharpness(y1: f64, y2: f64, d: f64) -> f64 {
    let s3 = 3.0_f64.sqrt();
    let k = std::f64::consts::PI * s3 / d;
    let w = 2.0 * std::f64::consts::PI / d;
    let u1 = -y1 - d * s3 / 6.0;
    let u2 = y2 + d / 2.0;
    ((k * (u1 + u2 / s3)).cos() + (w * u2).cos() + (k * (u1 - u2 / s3)).cos()) / 3.0
}

/// Six-fold rotation center of the combined field (a wall junction).
pub fn rotation_center(d: f64) -> (f64, f64) {
    (-d * 3.0_f64.sqrt() / 6.0, -d / 2.0)
}

/// Corner-sharpness weight, threshold and lattice size describing one
/// microstructure geometry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometryParams {
    pub alpha: f64,
    pub eta_bar: f64,
    /// Lattice parameter: distance between two parallel walls.
    pub d: f64,
}

/// Which single-objective calibration the density fits come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitFamily {
    MaxYield,
    MaxStiffness,
}

/// Coefficients linking relative density to the two geometry parameters:
/// a quintic (no constant term) for the threshold and a rational function
/// (monic cubic denominator) for the sharpness weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParameterFits {
    /// Threshold polynomial, highest power first: `p1 rho^5 + ... + p5 rho`.
    pub p: [f64; 5],
    /// Rational numerator `r1 eta^3 + r2 eta^2 + r3 eta + r4`.
    pub r: [f64; 4],
    /// Rational denominator `eta^3 + q1 eta^2 + q2 eta + q3`.
    pub q: [f64; 3],
}

pub const MAX_YIELD_FITS: ParameterFits = ParameterFits {
    p: [0.3781, 0.8792, -0.8795, 0.3104, 0.4532],
    r: [-7164.0, 2106.0, 1017.0, 0.059],
    q: [8770.0, -354.7, 1153.0],
};

pub const MAX_STIFFNESS_FITS: ParameterFits = ParameterFits {
    p: [-1.267, 4.715, -3.927, 1.227, 0.3806],
    r: [-6180.0, 1350.0, 1292.0, 0.4898],
    q: [8107.0, -1491.0, 1467.0],
};

impl FitFamily {
    pub fn fits(self) -> &'static ParameterFits {
        match self {
            FitFamily::MaxYield => &MAX_YIELD_FITS,
            FitFamily::MaxStiffness => &MAX_STIFFNESS_FITS,
        }
    }
}

impl ParameterFits {
    /// Threshold for a relative density.
    pub fn eta_hat(&self, rho: f64) -> f64 {
        let mut acc = 0.0;
        for &c in &self.p {
            acc = (acc + c) * rho;
        }
        acc
    }

    /// Sharpness weight for a threshold value.
    pub fn alpha_hat(&self, eta: f64) -> f64 {
        let num = ((self.r[0] * eta + self.r[1]) * eta + self.r[2]) * eta + self.r[3];
        let den = ((eta + self.q[0]) * eta + self.q[1]) * eta + self.q[2];
        num / den
    }
}

impl GeometryParams {
    /// Geometry parameters for a relative density under the chosen
    /// calibration; densities below the characterized minimum are clamped.
    pub fn from_density(rho: f64, family: FitFamily) -> GeometryParams {
        let rho = rho.clamp(FIT_DENSITY_MIN, 1.0);
        let fits = family.fits();
        let eta_bar = fits.eta_hat(rho);
        GeometryParams {
            alpha: fits.alpha_hat(eta_bar),
            eta_bar,
            d: 1.0,
        }
    }

    pub fn with_lattice_size(mut self, d: f64) -> GeometryParams {
        self.d = d;
        self
    }

    /// Blended geometry field whose `eta_bar` sublevel set is solid.
    pub fn field(&self, y1: f64, y2: f64) -> f64 {
        lattice_shape(y1, y2, self.d) + self.alpha * corner_sharpness(y1, y2, self.d)
    }
}

/// One rasterized periodic tile: `n x n` pixels over the rectangle
/// `2d/sqrt(3) x 2d`, row-major from the lower-left.
#[derive(Clone, Debug)]
pub struct MicroCell {
    pub n: usize,
    pub solid: Vec<bool>,
}

impl MicroCell {
    /// Thresholds the geometry field at pixel centers.
    pub fn rasterize(params: &GeometryParams, n: usize) -> MicroCell {
        Self::rasterize_rotated(params, n, 0.0)
    }

    /// Rasterizes with the sampling frame rotated by `angle` about the
    /// lattice's six-fold center (the tile stays periodic because the wall
    /// pattern maps onto itself under 60° turns).
    pub fn rasterize_rotated(params: &GeometryParams, n: usize, angle: f64) -> MicroCell {
        let (w, h) = (2.0 * params.d / 3.0_f64.sqrt(), 2.0 * params.d);
        let (cx, cy) = rotation_center(params.d);
        let (sa, ca) = angle.sin_cos();
        let mut solid = vec![false; n * n];
        for iy in 0..n {
            for ix in 0..n {
                let px = (ix as f64 + 0.5) * w / n as f64;
                let py = (iy as f64 + 0.5) * h / n as f64;
                let (u, v) = (px - cx, py - cy);
                let y1 = cx + ca * u - sa * v;
                let y2 = cy + sa * u + ca * v;
                solid[iy * n + ix] = params.field(y1, y2) <= params.eta_bar;
            }
        }
        MicroCell { n, solid }
    }

    /// Solid pixel count over total pixel count.
    pub fn volume_fraction(&self) -> f64 {
        self.solid.iter().filter(|&&s| s).count() as f64 / (self.n * self.n) as f64
    }
}

/// Homogenized response of one tile: the macroscale constitutive matrix, its
/// isotropic projections, and the per-pixel map from macro strain to pixel
/// center strain (used by the yield sweep).
#[derive(Clone, Debug)]
pub struct Homogenized {
    pub c: [[f64; 3]; 3],
    /// Isotropic projection: bulk modulus.
    pub kappa: f64,
    /// Isotropic projection: shear modulus.
    pub mu: f64,
    /// Per pixel, column `k` holds the pixel-center strain under unit macro
    /// strain component `k`.
    pub strain_map: Vec<[[f64; 3]; 3]>,
}

/// Zigzag renumbering of a length-`n` cycle so wrap-around neighbors stay
/// within distance two of each other (keeps the periodic matrix profile
/// narrow).
fn cycle_order(n: usize) -> Vec<usize> {
    (0..n)
        .map(|j| if 2 * j < n { 2 * j } else { 2 * (n - j) - 1 })
        .collect()
}

/// Periodic homogenization of the tile with unit base modulus and Poisson
/// ratio 1/3 on solid pixels and floor stiffness in the void. Reports a
/// degenerate error when a non-empty solid phase fails to transmit stiffness
/// in some direction (disconnected walls).
pub fn homogenize(cell: &MicroCell) -> Result<Homogenized> {
    let n = cell.n;
    let s3 = 3.0_f64.sqrt();
    // Pixel dimensions in lattice units; only the aspect ratio and the areas
    // matter, every other scale cancels.
    let a = (2.0 / s3) / n as f64;
    let b = 2.0 / n as f64;
    let area = (n * n) as f64 * a * b;
    let kernels = Kernels::with_aspect(b / a);
    // Affine element displacements reproducing the three unit macro strains.
    let affine: [[f64; 8]; 3] = [
        [0.0, 0.0, a, 0.0, a, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, b, 0.0, b],
        [0.0, 0.0, 0.0, a / 2.0, b / 2.0, a / 2.0, b / 2.0, 0.0],
    ];

    let order = cycle_order(n);
    let node = |ix: usize, iy: usize| order[iy % n] * n + order[ix % n];
    let elem_dofs = |ex: usize, ey: usize| -> [usize; 8] {
        let nodes = [
            node(ex, ey),
            node(ex + 1, ey),
            node(ex + 1, ey + 1),
            node(ex, ey + 1),
        ];
        let mut dofs = [0usize; 8];
        for (i, nd) in nodes.iter().enumerate() {
            dofs[2 * i] = 2 * nd;
            dofs[2 * i + 1] = 2 * nd + 1;
        }
        dofs
    };
    // Two dofs pinned to remove the rigid-translation null space.
    let pinned = [2 * node(0, 0), 2 * node(0, 0) + 1];
    let is_pinned = |d: usize| d == pinned[0] || d == pinned[1];

    let n_dofs = 2 * n * n;
    let mut k = Skyline::from_edges(
        n_dofs,
        (0..n * n).flat_map(|e| {
            let dofs = elem_dofs(e % n, e / n);
            (0..8).flat_map(move |i| (0..8).map(move |j| (dofs[i], dofs[j])))
        }),
    );
    let moduli = |solid: bool| -> (f64, f64) {
        if solid {
            (MU0, KAPPA0)
        } else {
            (STIFF_FLOOR * MU0, STIFF_FLOOR * KAPPA0)
        }
    };
    let mut rhs = vec![vec![0.0; n_dofs]; 3];
    for ey in 0..n {
        for ex in 0..n {
            let (mu, kappa) = moduli(cell.solid[ey * n + ex]);
            let ke = kernels.stiffness(mu, kappa);
            let dofs = elem_dofs(ex, ey);
            for i in 0..8 {
                if is_pinned(dofs[i]) {
                    continue;
                }
                for j in 0..8 {
                    if !is_pinned(dofs[j]) && dofs[j] <= dofs[i] {
                        k.add(dofs[i], dofs[j], ke[i][j]);
                    }
                    for t in 0..3 {
                        rhs[t][dofs[i]] += ke[i][j] * affine[t][j];
                    }
                }
            }
        }
    }
    for d in pinned {
        k.add(d, d, 1.0);
        for t in 0..3 {
            rhs[t][d] = 0.0;
        }
    }
    let kfac = k.factorize()?;
    let chi: Vec<Vec<f64>> = rhs.iter().map(|f| kfac.solve(f)).collect();

    // Total element displacement per unit macro strain: affine minus
    // fluctuation; energy products give the homogenized matrix.
    let mut c = [[0.0; 3]; 3];
    let mut strain_map = vec![[[0.0; 3]; 3]; n * n];
    for ey in 0..n {
        for ex in 0..n {
            let e = ey * n + ex;
            let (mu, kappa) = moduli(cell.solid[e]);
            let ke = kernels.stiffness(mu, kappa);
            let dofs = elem_dofs(ex, ey);
            let mut u = [[0.0; 8]; 3];
            for t in 0..3 {
                for i in 0..8 {
                    u[t][i] = affine[t][i] - chi[t][dofs[i]];
                }
                let eps = center_strain_rect(a, b, &u[t]);
                for r in 0..3 {
                    strain_map[e][r][t] = eps[r];
                }
            }
            for s in 0..3 {
                for t in s..3 {
                    let mut w = 0.0;
                    for i in 0..8 {
                        for j in 0..8 {
                            w += u[s][i] * ke[i][j] * u[t][j];
                        }
                    }
                    c[s][t] += w;
                }
            }
        }
    }
    for s in 0..3 {
        for t in s..3 {
            c[s][t] /= area;
            c[t][s] = c[s][t];
        }
    }

    let kappa = (c[0][0] + c[1][1] + 2.0 * c[0][1]) / 4.0;
    let mu = (c[0][0] + c[1][1] - 2.0 * c[0][1] + 4.0 * c[2][2]) / 8.0;
    if cell.volume_fraction() > 0.0 {
        let m = nalgebra::Matrix3::from_fn(|i, j| c[i][j]);
        let eig = m.symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        if lo < 1e-6 * hi {
            return Err(Error::Degenerate(format!(
                "solid phase does not transmit stiffness in some direction \
                 (eigenvalue ratio {:.2e}); walls are likely disconnected",
                lo / hi
            )));
        }
    }
    Ok(Homogenized { c, kappa, mu, strain_map })
}

/// Effective Young's modulus of the isotropic projection (base modulus 1).
pub fn effective_modulus(hom: &Homogenized) -> f64 {
    4.0 * hom.kappa * hom.mu / (hom.kappa + hom.mu)
}

/// Principal macro stress states sampled around the square path
/// `(-1,1) -> (-1,-1) -> (1,-1) -> (1,1) -> (-1,1)`.
fn square_path(per_edge: usize) -> Vec<(f64, f64)> {
    let corners = [(-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (1.0, 1.0)];
    let mut states = Vec::with_capacity(4 * per_edge);
    for i in 0..4 {
        let (x0, y0) = corners[i];
        let (x1, y1) = corners[(i + 1) % 4];
        for j in 0..per_edge {
            let t = j as f64 / per_edge as f64;
            states.push((x0 + t * (x1 - x0), y0 + t * (y1 - y0)));
        }
    }
    states
}

/// Worst-case yield factor of the cell: the smallest ratio of macroscale von
/// Mises stress to the peak pixel von Mises stress, over the square path of
/// principal macro states and seven cell orientations in [0°, 30°].
pub fn yield_factor(cell: &MicroCell, hom: &Homogenized) -> Result<f64> {
    if cell.solid.iter().all(|&s| !s) {
        return Err(Error::Degenerate("empty cell has no yield strength".into()));
    }
    let ch = nalgebra::Matrix3::from_fn(|i, j| hom.c[i][j]);
    let inv = ch.try_inverse().ok_or_else(|| {
        Error::Numerical("homogenized stiffness is singular".into())
    })?;
    // Pixel stress per unit macro strain: base-material constitutive matrix
    // applied to the strain map, solid pixels only.
    let c0 = material::plane_stress_c(MU0, KAPPA0);
    let stress_map: Vec<(usize, [[f64; 3]; 3])> = (0..cell.solid.len())
        .filter(|&e| cell.solid[e])
        .map(|e| {
            let mut m = [[0.0; 3]; 3];
            for r in 0..3 {
                for t in 0..3 {
                    for k in 0..3 {
                        m[r][t] += c0[r][k] * hom.strain_map[e][k][t];
                    }
                }
            }
            (e, m)
        })
        .collect();

    let mut worst = f64::INFINITY;
    for (s1, s2) in square_path(16) {
        let vm_macro = material::von_mises([s1, s2, 0.0]);
        if vm_macro < 1e-12 {
            continue;
        }
        for k in 0..7 {
            let theta = (k as f64) * 5.0_f64.to_radians();
            let (sn, cs) = theta.sin_cos();
            let sbar = [
                s1 * cs * cs + s2 * sn * sn,
                s1 * sn * sn + s2 * cs * cs,
                (s1 - s2) * sn * cs,
            ];
            let eps = inv * nalgebra::Vector3::new(sbar[0], sbar[1], sbar[2]);
            let mut vm_max = 0.0_f64;
            for (_, m) in &stress_map {
                let mut s = [0.0; 3];
                for r in 0..3 {
                    s[r] = m[r][0] * eps[0] + m[r][1] * eps[1] + m[r][2] * eps[2];
                }
                vm_max = vm_max.max(material::von_mises(s));
            }
            if vm_max > 0.0 {
                worst = worst.min(vm_macro / vm_max);
            }
        }
    }
    if !worst.is_finite() {
        return Err(Error::Numerical("yield sweep produced no valid states".into()));
    }
    Ok(worst)
}

/// Stiffness, density and yield summary of one parameter combination.
#[derive(Clone, Copy, Debug)]
pub struct SweepPoint {
    pub alpha: f64,
    pub eta_bar: f64,
    pub rho: f64,
    /// Effective Young's modulus over the base modulus.
    pub stiffness: f64,
    /// Homogenized isotropic moduli.
    pub kappa: f64,
    pub mu: f64,
    pub yield_factor: f64,
}

/// Characterizes a single `(alpha, eta_bar)` combination at resolution `n`.
pub fn characterize(params: &GeometryParams, n: usize) -> Result<SweepPoint> {
    let cell = MicroCell::rasterize(params, n);
    let hom = homogenize(&cell)?;
    let sy = yield_factor(&cell, &hom)?;
    Ok(SweepPoint {
        alpha: params.alpha,
        eta_bar: params.eta_bar,
        rho: cell.volume_fraction(),
        stiffness: effective_modulus(&hom),
        kappa: hom.kappa,
        mu: hom.mu,
        yield_factor: sy,
    })
}

/// Characterizes every combination of the given parameter grids, skipping
/// degenerate cells (disconnected or empty rasters).
pub fn parameter_sweep(alphas: &[f64], etas: &[f64], n: usize) -> Vec<SweepPoint> {
    let mut points = Vec::new();
    for &alpha in alphas {
        for &eta_bar in etas {
            let params = GeometryParams { alpha, eta_bar, d: 1.0 };
            if let Ok(p) = characterize(&params, n) {
                points.push(p);
            }
        }
    }
    points
}

/// Result of refitting the density links from sweep data.
#[derive(Clone, Debug)]
pub struct SweepFit {
    pub fits: ParameterFits,
    /// Rational stiffness-interpolation curvature refit from the selected
    /// per-density optima (shear and bulk).
    pub q_mu: f64,
    pub q_kappa: f64,
    /// Per-level selected optima.
    pub selected: Vec<SweepPoint>,
}

/// Selects the best cell near each density level and refits the parameter
/// links. `band` is the half-width of the density window around each level;
/// `prefer_stiffness` switches the per-level objective.
pub fn fit_sweep(
    points: &[SweepPoint],
    levels: &[f64],
    band: f64,
    prefer_stiffness: bool,
) -> Result<SweepFit> {
    let mut selected: Vec<SweepPoint> = Vec::new();
    for &level in levels {
        let best = points
            .iter()
            .filter(|p| (p.rho - level).abs() <= band)
            .max_by(|a, b| {
                let ka = if prefer_stiffness { a.stiffness } else { a.yield_factor };
                let kb = if prefer_stiffness { b.stiffness } else { b.yield_factor };
                ka.partial_cmp(&kb).unwrap()
            });
        if let Some(p) = best {
            selected.push(*p);
        }
    }
    if selected.len() < 8 {
        return Err(Error::Numerical(format!(
            "only {} density levels were populated; refit needs at least 8",
            selected.len()
        )));
    }

    // Threshold polynomial: least squares on powers 1..=5 of the density.
    let m = selected.len();
    let mut a = nalgebra::DMatrix::zeros(m, 5);
    let mut y = nalgebra::DVector::zeros(m);
    for (i, p) in selected.iter().enumerate() {
        for k in 0..5 {
            a[(i, k)] = p.rho.powi(5 - k as i32);
        }
        y[i] = p.eta_bar;
    }
    let ata = a.transpose() * &a;
    let aty = a.transpose() * &y;
    let p_sol = ata
        .lu()
        .solve(&aty)
        .ok_or_else(|| Error::Numerical("threshold refit is singular".into()))?;

    // Sharpness rational: linear least squares after multiplying through by
    // the denominator.
    let mut ar = nalgebra::DMatrix::zeros(m, 7);
    let mut yr = nalgebra::DVector::zeros(m);
    for (i, p) in selected.iter().enumerate() {
        let (eta, alpha) = (p.eta_bar, p.alpha);
        ar[(i, 0)] = eta * eta * eta;
        ar[(i, 1)] = eta * eta;
        ar[(i, 2)] = eta;
        ar[(i, 3)] = 1.0;
        ar[(i, 4)] = -alpha * eta * eta;
        ar[(i, 5)] = -alpha * eta;
        ar[(i, 6)] = -alpha;
        yr[i] = alpha * eta * eta * eta;
    }
    let atar = ar.transpose() * &ar;
    let atyr = ar.transpose() * &yr;
    let r_sol = atar
        .lu()
        .solve(&atyr)
        .ok_or_else(|| Error::Numerical("sharpness refit is singular".into()))?;

    let fits = ParameterFits {
        p: [p_sol[0], p_sol[1], p_sol[2], p_sol[3], p_sol[4]],
        r: [r_sol[0], r_sol[1], r_sol[2], r_sol[3]],
        q: [r_sol[4], r_sol[5], r_sol[6]],
    };

    // Stiffness-interpolation curvature: one-parameter least squares of the
    // rational interpolation through the stored moduli of the selected
    // optima (golden-section on the curvature, which enters nonlinearly).
    let refit_q = |solid_modulus: f64, pick: fn(&SweepPoint) -> f64| -> f64 {
        let sse = |q: f64| -> f64 {
            selected
                .iter()
                .map(|p| {
                    let hat = p.rho / (1.0 + q * (1.0 - p.rho)) * solid_modulus;
                    (hat - pick(p)).powi(2)
                })
                .sum()
        };
        let (mut lo, mut hi) = (0.5, 5.0);
        for _ in 0..80 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if sse(m1) < sse(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        0.5 * (lo + hi)
    };
    Ok(SweepFit {
        fits,
        q_mu: refit_q(MU0, |p| p.mu),
        q_kappa: refit_q(KAPPA0, |p| p.kappa),
        selected,
    })
}
