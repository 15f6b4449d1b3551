//! Method of Moving Asymptotes.
//!
//! Each step builds a separable convex approximation of the objective and
//! constraints around the current iterate, with per-variable asymptotes that
//! widen while the iterate moves monotonically and tighten when it
//! oscillates, and solves the approximation with a primal-dual interior
//! point method. Constraints carry elastic slack variables so the
//! subproblem is always feasible; a bound variable `z` supports min-max
//! objectives (minimize the largest of several measures) by giving those
//! constraints a unit `z` coefficient.

use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Initial asymptote distance as a fraction of the variable range.
const ASYINIT: f64 = 0.5;
/// Asymptote growth factor while the iterate moves monotonically.
const ASYINCR: f64 = 1.2;
/// Asymptote shrink factor when the iterate oscillates.
const ASYDECR: f64 = 0.7;
/// Fraction of the asymptote gap kept away from the bounds.
const ALBEFA: f64 = 0.1;
/// Smallest asymptote distance as a fraction of the variable range. Small
/// enough that persistent oscillation can damp itself out instead of limit
/// cycling at a fixed amplitude.
const ASYMIN: f64 = 1e-7;
/// Baseline curvature added to every approximation term.
const RAA0: f64 = 1e-5;
/// Interior-point termination tolerance.
const EPSIMIN: f64 = 1e-7;

/// Moving-asymptote optimizer state carried between design iterations.
#[derive(Clone, Debug)]
pub struct MmaOptimizer {
    n: usize,
    m: usize,
    /// Lower variable bounds.
    pub xmin: Vec<f64>,
    /// Upper variable bounds.
    pub xmax: Vec<f64>,
    /// Move limit as a fraction of the variable range.
    pub move_limit: f64,
    /// Objective coefficient of the bound variable `z`.
    pub a0: f64,
    /// Per-constraint `z` coefficients (1 marks a min-max constraint).
    pub a: Vec<f64>,
    /// Per-constraint elastic penalty weights.
    pub c: Vec<f64>,
    /// Per-constraint quadratic slack weights.
    pub d: Vec<f64>,
    /// Lower asymptotes.
    pub low: Vec<f64>,
    /// Upper asymptotes.
    pub upp: Vec<f64>,
    /// Iterate one step back.
    pub xold1: Vec<f64>,
    /// Iterate two steps back.
    pub xold2: Vec<f64>,
    /// Number of accepted steps so far.
    pub iter: usize,
    /// Bound-variable value of the last subproblem.
    pub last_z: f64,
    /// Constraint multipliers of the last subproblem.
    pub last_lambda: Vec<f64>,
}

impl MmaOptimizer {
    /// Creates an optimizer for `n` variables and `m` constraints with the
    /// standard elastic-constraint setup.
    pub fn new(n: usize, m: usize, xmin: Vec<f64>, xmax: Vec<f64>) -> MmaOptimizer {
        assert_eq!(xmin.len(), n);
        assert_eq!(xmax.len(), n);
        MmaOptimizer {
            n,
            m,
            xmin,
            xmax,
            move_limit: 0.2,
            a0: 1.0,
            a: vec![0.0; m],
            c: vec![1000.0; m],
            d: vec![1.0; m],
            low: vec![0.0; n],
            upp: vec![0.0; n],
            xold1: Vec::new(),
            xold2: Vec::new(),
            iter: 0,
            last_z: 0.0,
            last_lambda: vec![0.0; m],
        }
    }

    /// Marks the given constraints as min-max terms: they receive a unit
    /// bound-variable coefficient, so minimizing `z` minimizes their
    /// maximum.
    pub fn set_min_max(&mut self, constraints: &[usize]) {
        for &i in constraints {
            self.a[i] = 1.0;
        }
    }

    /// One design update: builds the moving-asymptote approximation at `x`
    /// from the objective gradient and the constraint values/gradients, and
    /// returns the subproblem minimizer.
    ///
    /// If the subproblem solve degenerates numerically the previous iterate
    /// is restored and the move limit halved, so a later step retries with
    /// a more conservative approximation.
    pub fn step(&mut self, x: &[f64], df0: &[f64], g: &[f64], dg: &[Vec<f64>]) -> Result<Vec<f64>> {
        let n = self.n;
        let m = self.m;
        if x.len() != n || df0.len() != n || g.len() != m || dg.len() != m {
            return Err(Error::Config("mma dimensions do not match".into()));
        }
        // Garbage from a degenerate analysis must not be folded into the
        // approximation; retreat to a smaller move limit instead.
        let finite = df0.iter().all(|v| v.is_finite())
            && g.iter().all(|v| v.is_finite())
            && dg.iter().all(|gi| gi.iter().all(|v| v.is_finite()));
        if !finite {
            self.move_limit = (0.5 * self.move_limit).max(1e-3);
            return Ok(x.to_vec());
        }
        if self.xold1.is_empty() {
            self.xold1 = x.to_vec();
            self.xold2 = x.to_vec();
        }

        // Asymptote update: fixed fractions for the first two steps, then
        // adaptation driven by the sign of successive moves.
        let mut low = vec![0.0; n];
        let mut upp = vec![0.0; n];
        for j in 0..n {
            let range = self.xmax[j] - self.xmin[j];
            if self.iter < 2 {
                low[j] = x[j] - ASYINIT * range;
                upp[j] = x[j] + ASYINIT * range;
            } else {
                let zz = (x[j] - self.xold1[j]) * (self.xold1[j] - self.xold2[j]);
                let factor = if zz > 0.0 {
                    ASYINCR
                } else if zz < 0.0 {
                    ASYDECR
                } else {
                    1.0
                };
                low[j] = x[j] - factor * (self.xold1[j] - self.low[j]);
                upp[j] = x[j] + factor * (self.upp[j] - self.xold1[j]);
                low[j] = low[j].max(x[j] - 10.0 * range).min(x[j] - ASYMIN * range);
                upp[j] = upp[j].min(x[j] + 10.0 * range).max(x[j] + ASYMIN * range);
            }
        }

        // Subproblem bounds: inside the asymptotes, the move limit and the
        // box bounds.
        let mut alfa = vec![0.0; n];
        let mut beta = vec![0.0; n];
        for j in 0..n {
            let range = self.xmax[j] - self.xmin[j];
            alfa[j] = self.xmin[j]
                .max(low[j] + ALBEFA * (x[j] - low[j]))
                .max(x[j] - self.move_limit * range);
            beta[j] = self.xmax[j]
                .min(upp[j] - ALBEFA * (upp[j] - x[j]))
                .min(x[j] + self.move_limit * range);
        }

        // Separable approximation coefficients. Positive gradient parts go
        // to the upper-asymptote term, negative parts to the lower one,
        // plus a small convexifying floor on both.
        let mut p0 = vec![0.0; n];
        let mut q0 = vec![0.0; n];
        let mut pc = vec![vec![0.0; n]; m];
        let mut qc = vec![vec![0.0; n]; m];
        let mut b = vec![0.0; m];
        for j in 0..n {
            let ux1 = upp[j] - x[j];
            let xl1 = x[j] - low[j];
            let xmami = (self.xmax[j] - self.xmin[j]).max(1e-5);
            let p = df0[j].max(0.0);
            let q = (-df0[j]).max(0.0);
            let pq = 0.001 * (p + q) + RAA0 / xmami;
            p0[j] = (p + pq) * ux1 * ux1;
            q0[j] = (q + pq) * xl1 * xl1;
            for i in 0..m {
                let p = dg[i][j].max(0.0);
                let q = (-dg[i][j]).max(0.0);
                let pq = 0.001 * (p + q) + RAA0 / xmami;
                pc[i][j] = (p + pq) * ux1 * ux1;
                qc[i][j] = (q + pq) * xl1 * xl1;
            }
        }
        for i in 0..m {
            let mut acc = 0.0;
            for j in 0..n {
                acc += pc[i][j] / (upp[j] - x[j]) + qc[i][j] / (x[j] - low[j]);
            }
            b[i] = acc - g[i];
        }

        let sub = solve_subproblem(
            &low, &upp, &alfa, &beta, &p0, &q0, &pc, &qc, &b, self.a0, &self.a, &self.c, &self.d,
        );

        match sub {
            Some((xnew, z, lam)) if xnew.iter().all(|v| v.is_finite()) => {
                self.xold2 = std::mem::take(&mut self.xold1);
                self.xold1 = x.to_vec();
                self.low = low;
                self.upp = upp;
                self.iter += 1;
                self.last_z = z;
                self.last_lambda = lam;
                Ok(xnew)
            }
            _ => {
                self.move_limit = (0.5 * self.move_limit).max(1e-3);
                Ok(x.to_vec())
            }
        }
    }
}

/// Residual of the relaxed KKT system at barrier parameter `epsi`; returns
/// its Euclidean norm and max-norm.
#[allow(clippy::too_many_arguments)]
fn kkt_residual(
    s: &SubIterate,
    low: &[f64],
    upp: &[f64],
    alfa: &[f64],
    beta: &[f64],
    p0: &[f64],
    q0: &[f64],
    pc: &[Vec<f64>],
    qc: &[Vec<f64>],
    b: &[f64],
    a0: f64,
    a: &[f64],
    c: &[f64],
    d: &[f64],
    epsi: f64,
) -> (f64, f64) {
    let n = s.x.len();
    let m = s.y.len();
    let mut sq = 0.0;
    let mut mx = 0.0_f64;
    let mut push = |r: f64| {
        sq += r * r;
        mx = mx.max(r.abs());
    };

    for j in 0..n {
        let ux1 = upp[j] - s.x[j];
        let xl1 = s.x[j] - low[j];
        let mut plam = p0[j];
        let mut qlam = q0[j];
        for i in 0..m {
            plam += pc[i][j] * s.lam[i];
            qlam += qc[i][j] * s.lam[i];
        }
        push(plam / (ux1 * ux1) - qlam / (xl1 * xl1) - s.xsi[j] + s.eta[j]);
        push(s.xsi[j] * (s.x[j] - alfa[j]) - epsi);
        push(s.eta[j] * (beta[j] - s.x[j]) - epsi);
    }
    let mut alam = 0.0;
    for i in 0..m {
        alam += a[i] * s.lam[i];
        let mut gv = 0.0;
        for j in 0..n {
            gv += pc[i][j] / (upp[j] - s.x[j]) + qc[i][j] / (s.x[j] - low[j]);
        }
        push(c[i] + d[i] * s.y[i] - s.mu[i] - s.lam[i]);
        push(gv - a[i] * s.z - s.y[i] + s.slack[i] - b[i]);
        push(s.mu[i] * s.y[i] - epsi);
        push(s.lam[i] * s.slack[i] - epsi);
    }
    push(a0 - s.zet - alam);
    push(s.zet * s.z - epsi);
    (sq.sqrt(), mx)
}

/// Primal/dual iterate of the subproblem solver.
#[derive(Clone)]
struct SubIterate {
    x: Vec<f64>,
    y: Vec<f64>,
    z: f64,
    lam: Vec<f64>,
    xsi: Vec<f64>,
    eta: Vec<f64>,
    mu: Vec<f64>,
    zet: f64,
    slack: Vec<f64>,
}

/// Interior-point solve of the separable subproblem. Returns the minimizer,
/// the bound variable and the constraint multipliers, or `None` when the
/// Newton system cannot be factored.
#[allow(clippy::too_many_arguments)]
fn solve_subproblem(
    low: &[f64],
    upp: &[f64],
    alfa: &[f64],
    beta: &[f64],
    p0: &[f64],
    q0: &[f64],
    pc: &[Vec<f64>],
    qc: &[Vec<f64>],
    b: &[f64],
    a0: f64,
    a: &[f64],
    c: &[f64],
    d: &[f64],
) -> Option<(Vec<f64>, f64, Vec<f64>)> {
    let n = alfa.len();
    let m = b.len();

    let mut s = SubIterate {
        x: (0..n).map(|j| 0.5 * (alfa[j] + beta[j])).collect(),
        y: vec![1.0; m],
        z: 1.0,
        lam: vec![1.0; m],
        xsi: (0..n)
            .map(|j| (1.0 / (0.5 * (beta[j] - alfa[j]))).max(1.0))
            .collect(),
        eta: (0..n)
            .map(|j| (1.0 / (0.5 * (beta[j] - alfa[j]))).max(1.0))
            .collect(),
        mu: c.iter().map(|&ci| (0.5 * ci).max(1.0)).collect(),
        zet: 1.0,
        slack: vec![1.0; m],
    };

    let mut epsi = 1.0;
    while epsi > EPSIMIN {
        let (mut resinorm, mut resimax) = kkt_residual(
            &s, low, upp, alfa, beta, p0, q0, pc, qc, b, a0, a, c, d, epsi,
        );
        let mut inner = 0;
        while resimax > 0.9 * epsi && inner < 200 {
            inner += 1;

            // Newton system, condensed to the multipliers and the bound
            // variable.
            let mut delx = vec![0.0; n];
            let mut diagx = vec![0.0; n];
            let mut gg = vec![vec![0.0; n]; m];
            for j in 0..n {
                let ux1 = upp[j] - s.x[j];
                let xl1 = s.x[j] - low[j];
                let ux2 = ux1 * ux1;
                let xl2 = xl1 * xl1;
                let mut plam = p0[j];
                let mut qlam = q0[j];
                for i in 0..m {
                    plam += pc[i][j] * s.lam[i];
                    qlam += qc[i][j] * s.lam[i];
                    gg[i][j] = pc[i][j] / ux2 - qc[i][j] / xl2;
                }
                delx[j] = plam / ux2 - qlam / xl2 - epsi / (s.x[j] - alfa[j])
                    + epsi / (beta[j] - s.x[j]);
                diagx[j] = 2.0 * (plam / (ux2 * ux1) + qlam / (xl2 * xl1))
                    + s.xsi[j] / (s.x[j] - alfa[j])
                    + s.eta[j] / (beta[j] - s.x[j]);
            }
            let mut dely = vec![0.0; m];
            let mut dellam = vec![0.0; m];
            let mut diagy = vec![0.0; m];
            for i in 0..m {
                dely[i] = c[i] + d[i] * s.y[i] - s.lam[i] - epsi / s.y[i];
                let mut gv = 0.0;
                for j in 0..n {
                    gv += pc[i][j] / (upp[j] - s.x[j]) + qc[i][j] / (s.x[j] - low[j]);
                }
                dellam[i] = gv - a[i] * s.z - s.y[i] - b[i] + epsi / s.lam[i];
                diagy[i] = d[i] + s.mu[i] / s.y[i];
            }
            let delz = a0 - a.iter().zip(&s.lam).map(|(ai, li)| ai * li).sum::<f64>()
                - epsi / s.z;

            // (m+1) x (m+1) system for (dlam, dz).
            let mut aa = DMatrix::zeros(m + 1, m + 1);
            let mut bb = DVector::zeros(m + 1);
            for i in 0..m {
                for k in 0..m {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += gg[i][j] * gg[k][j] / diagx[j];
                    }
                    aa[(i, k)] = acc;
                }
                aa[(i, i)] += s.slack[i] / s.lam[i] + 1.0 / diagy[i];
                aa[(i, m)] = a[i];
                aa[(m, i)] = a[i];
                let mut acc = dellam[i] + dely[i] / diagy[i];
                for j in 0..n {
                    acc -= gg[i][j] * delx[j] / diagx[j];
                }
                bb[i] = acc;
            }
            aa[(m, m)] = -s.zet / s.z;
            bb[m] = delz;
            let solut = aa.lu().solve(&bb)?;

            let dlam: Vec<f64> = (0..m).map(|i| solut[i]).collect();
            let dz = solut[m];
            let mut dx = vec![0.0; n];
            for j in 0..n {
                let mut acc = -delx[j];
                for i in 0..m {
                    acc -= gg[i][j] * dlam[i];
                }
                dx[j] = acc / diagx[j];
            }
            let dy: Vec<f64> =
                (0..m).map(|i| (dlam[i] - dely[i]) / diagy[i]).collect();
            let dxsi: Vec<f64> = (0..n)
                .map(|j| {
                    -s.xsi[j] + epsi / (s.x[j] - alfa[j])
                        - s.xsi[j] * dx[j] / (s.x[j] - alfa[j])
                })
                .collect();
            let deta: Vec<f64> = (0..n)
                .map(|j| {
                    -s.eta[j] + epsi / (beta[j] - s.x[j])
                        + s.eta[j] * dx[j] / (beta[j] - s.x[j])
                })
                .collect();
            let dmu: Vec<f64> = (0..m)
                .map(|i| -s.mu[i] + epsi / s.y[i] - s.mu[i] * dy[i] / s.y[i])
                .collect();
            let dzet = -s.zet + epsi / s.z - s.zet * dz / s.z;
            let ds: Vec<f64> = (0..m)
                .map(|i| -s.slack[i] + epsi / s.lam[i] - s.slack[i] * dlam[i] / s.lam[i])
                .collect();

            // Step length: keep every positivity-constrained quantity at
            // least 1/1.01 away from its wall.
            let mut t = 1.0_f64;
            let mut cap = |dv: f64, v: f64| {
                if dv < 0.0 {
                    t = t.min(-v / (1.01 * dv));
                }
            };
            for i in 0..m {
                cap(dy[i], s.y[i]);
                cap(dlam[i], s.lam[i]);
                cap(dmu[i], s.mu[i]);
                cap(ds[i], s.slack[i]);
            }
            cap(dz, s.z);
            cap(dzet, s.zet);
            for j in 0..n {
                cap(dxsi[j], s.xsi[j]);
                cap(deta[j], s.eta[j]);
                cap(dx[j], s.x[j] - alfa[j]);
                cap(-dx[j], beta[j] - s.x[j]);
            }
            let mut steg = t;

            // Backtrack on the residual norm.
            let old = s.clone();
            let mut resinew = 2.0 * resinorm;
            let mut halvings = 0;
            while resinew > resinorm && halvings < 50 {
                for j in 0..n {
                    s.x[j] = old.x[j] + steg * dx[j];
                    s.xsi[j] = old.xsi[j] + steg * dxsi[j];
                    s.eta[j] = old.eta[j] + steg * deta[j];
                }
                for i in 0..m {
                    s.y[i] = old.y[i] + steg * dy[i];
                    s.lam[i] = old.lam[i] + steg * dlam[i];
                    s.mu[i] = old.mu[i] + steg * dmu[i];
                    s.slack[i] = old.slack[i] + steg * ds[i];
                }
                s.z = old.z + steg * dz;
                s.zet = old.zet + steg * dzet;
                let (rn, rm) = kkt_residual(
                    &s, low, upp, alfa, beta, p0, q0, pc, qc, b, a0, a, c, d, epsi,
                );
                resinew = rn;
                resimax = rm;
                steg *= 0.5;
                halvings += 1;
            }
            resinorm = resinew;
            if !resinorm.is_finite() {
                return None;
            }
        }
        epsi *= 0.1;
    }
    Some((s.x, s.z, s.lam))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feasible_stationary_point_stays_put() {
        let n = 6;
        let mut opt = MmaOptimizer::new(n, 1, vec![0.0; n], vec![1.0; n]);
        let x = vec![0.4; n];
        let df0 = vec![0.0; n];
        let g = vec![-0.5];
        let dg = vec![vec![0.0; n]];
        let xn = opt.step(&x, &df0, &g, &dg).unwrap();
        for j in 0..n {
            assert!((xn[j] - x[j]).abs() < 1e-5, "moved to {}", xn[j]);
        }
    }

    #[test]
    fn quadratic_converges_to_its_minimum() {
        let mut opt = MmaOptimizer::new(1, 0, vec![0.0], vec![1.0]);
        let mut x = vec![0.9];
        for _ in 0..50 {
            let df0 = vec![2.0 * (x[0] - 0.3)];
            x = opt.step(&x, &df0, &[], &[]).unwrap();
        }
        assert!((x[0] - 0.3).abs() < 1e-6, "x = {}", x[0]);
    }

    #[test]
    fn violated_volume_constraint_forces_reduction() {
        let n = 16;
        let mut opt = MmaOptimizer::new(n, 1, vec![0.0; n], vec![1.0; n]);
        let x = vec![0.8; n];
        // Mean density over a 0.5 target, currently violated; the
        // objective pushes the other way.
        let vol = |v: &[f64]| v.iter().sum::<f64>() / (0.5 * n as f64) - 1.0;
        let g = vec![vol(&x)];
        assert!(g[0] > 0.0);
        let dg = vec![vec![1.0 / (0.5 * n as f64); n]];
        let df0 = vec![-1.0; n];
        let xn = opt.step(&x, &df0, &g, &dg).unwrap();
        assert!(vol(&xn) < vol(&x));
        for v in &xn {
            assert!(*v >= 0.0 && *v <= 1.0);
        }
    }

    #[test]
    fn iterates_respect_box_bounds() {
        let n = 8;
        let xmin = vec![0.15; n];
        let xmax = vec![1.0; n];
        let mut opt = MmaOptimizer::new(n, 1, xmin.clone(), xmax.clone());
        let mut x = vec![0.5; n];
        // Deterministic pseudo-random gradients, strong enough to slam
        // against the bounds.
        let mut state = 7u64;
        let mut rnd = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for _ in 0..20 {
            let df0: Vec<f64> = (0..n).map(|_| 5.0 * rnd()).collect();
            let dg = vec![(0..n).map(|_| rnd()).collect::<Vec<f64>>()];
            let g = vec![rnd()];
            x = opt.step(&x, &df0, &g, &dg).unwrap();
            for j in 0..n {
                assert!(x[j] >= xmin[j] - 1e-12 && x[j] <= xmax[j] + 1e-12);
            }
        }
    }

    #[test]
    fn bound_formulation_solves_a_min_max_problem() {
        // Minimize max((x-0.2)^2, (x-0.8)^2): the optimum balances both
        // parabolas at x = 0.5.
        let mut opt = MmaOptimizer::new(1, 2, vec![0.0], vec![1.0]);
        opt.set_min_max(&[0, 1]);
        let mut x = vec![0.05];
        for _ in 0..100 {
            let f1 = (x[0] - 0.2) * (x[0] - 0.2);
            let f2 = (x[0] - 0.8) * (x[0] - 0.8);
            let df0 = vec![0.0];
            let g = vec![f1, f2];
            let dg = vec![vec![2.0 * (x[0] - 0.2)], vec![2.0 * (x[0] - 0.8)]];
            x = opt.step(&x, &df0, &g, &dg).unwrap();
        }
        assert!((x[0] - 0.5).abs() < 1e-3, "x = {}", x[0]);
        assert!((opt.last_z - 0.09).abs() < 1e-2, "z = {}", opt.last_z);
    }

    #[test]
    fn degenerate_step_restores_and_shrinks_the_move_limit() {
        let mut opt = MmaOptimizer::new(2, 0, vec![0.0; 2], vec![1.0; 2]);
        let x = vec![0.5, 0.5];
        let before = opt.move_limit;
        let xn = opt.step(&x, &[f64::NAN, 0.0], &[], &[]).unwrap();
        assert_eq!(xn, x);
        assert!(opt.move_limit < before);
        // A later, well-posed step still works.
        let xn = opt.step(&x, &[1.0, -1.0], &[], &[]).unwrap();
        assert!(xn[0] < 0.5 && xn[1] > 0.5);
    }
}
