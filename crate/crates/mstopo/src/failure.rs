//! Failure measures and their smooth aggregates.
//!
//! Element stresses feed three load factors: a yield factor from von Mises
//! equivalents measured against the density-dependent yield limit, a local
//! buckling factor from the conical failure surface calibrated on the
//! microstructure's stress limits, and a global buckling factor from the
//! eigenvalue reciprocals of the linearized stability problem. Per-element
//! measures are relaxed by the void indicator (so empty regions cannot
//! dominate), aggregated with a p-norm whose max is factored out for
//! numerical range, and corrected once per design iteration so the smooth
//! aggregate tracks the true maximum.

use crate::material::{self, WwSurface};
use crate::{Error, Result};

/// Parameters of the aggregation pipeline for one design iteration.
///
/// The correction factors are state: they are mixed toward the observed
/// max/p-norm ratio once per iteration and carried to the next.
#[derive(Clone, Copy, Debug)]
pub struct AggregationState {
    /// Stress p-norm exponent (at least 2; continuation raises it).
    pub p: f64,
    /// Correction factor for the yield aggregate.
    pub c_yield: f64,
    /// Correction factor for the local-buckling aggregate.
    pub c_local: f64,
    /// Number of buckling modes tracked.
    pub modes: usize,
    /// Exponent of the smooth max over eigenvalue reciprocals.
    pub ks_exponent: f64,
    /// Void-indicator stress relaxation parameter, in (0, 1].
    pub epsilon: f64,
    /// Target yield load factor (safety factor against yielding).
    pub target_ylf: f64,
}

impl Default for AggregationState {
    fn default() -> AggregationState {
        AggregationState {
            p: 8.0,
            c_yield: 1.0,
            c_local: 1.0,
            modes: 8,
            ks_exponent: 160.0,
            epsilon: 0.1,
            target_ylf: 1.0,
        }
    }
}

impl AggregationState {
    /// Checks the admissible parameter ranges.
    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 2.0) {
            return Err(Error::Config(format!("aggregation exponent {} < 2", self.p)));
        }
        if !(self.c_yield > 0.0) || !(self.c_local > 0.0) {
            return Err(Error::Config("correction factors must be positive".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config(format!(
                "relaxation parameter {} outside (0, 1]",
                self.epsilon
            )));
        }
        if self.modes == 0 || !(self.ks_exponent >= 1.0) {
            return Err(Error::Config("need at least one mode and exponent >= 1".into()));
        }
        if !(self.target_ylf > 0.0) {
            return Err(Error::Config("target yield factor must be positive".into()));
        }
        Ok(())
    }
}

/// Snapshot of the failure measures of one design iterate.
#[derive(Clone, Debug)]
pub struct LoadFactors {
    /// Global buckling load factor.
    pub blf: f64,
    /// Local (microstructural) buckling load factor.
    pub lblf: f64,
    /// Yield load factor.
    pub ylf: f64,
    /// Per-element relaxed yield measures.
    pub relaxed_yield: Vec<f64>,
    /// Per-element relaxed buckling-surface measures.
    pub relaxed_local: Vec<f64>,
}

/// Von Mises equivalent of a plane-stress state, normalized by a stress
/// limit so that 1 marks the onset of yield.
///
/// The out-of-plane deviatoric component is included, which is what folds
/// the plane-stress triplet into the usual quadratic form.
pub fn vm_equivalent(s: [f64; 3], lim: f64) -> f64 {
    debug_assert!(lim > 0.0);
    material::von_mises(s) / lim
}

/// Value and stress-gradient of [`vm_equivalent`]. The gradient is zero at
/// the (non-smooth) zero-stress state.
pub fn vm_equivalent_grad(s: [f64; 3], lim: f64) -> (f64, [f64; 3]) {
    let eq = vm_equivalent(s, lim);
    if eq <= 0.0 {
        return (eq, [0.0; 3]);
    }
    let d = 2.0 * eq * lim * lim;
    (
        eq,
        [
            (2.0 * s[0] - s[1]) / d,
            (2.0 * s[1] - s[0]) / d,
            6.0 * s[2] / d,
        ],
    )
}

/// Void-indicator relaxation ramp: 0 at empty, 1 at fully present, rising
/// steeply near zero so stresses in voids are suppressed without creating
/// the degenerate all-or-nothing sensitivity of a hard cutoff.
pub fn relax_factor(s_ind: f64, eps: f64) -> f64 {
    s_ind / (eps * (1.0 - s_ind) + s_ind)
}

/// Derivative of [`relax_factor`] with respect to the indicator value.
pub fn relax_factor_ds(s_ind: f64, eps: f64) -> f64 {
    let den = eps * (1.0 - s_ind) + s_ind;
    eps / (den * den)
}

/// Relaxed equivalent stress: the measure scaled by the indicator ramp.
pub fn relax_stress(eq: f64, s_ind: f64, eps: f64) -> f64 {
    relax_factor(s_ind, eps) * eq
}

/// p-norm of non-negative values with the maximum factored out, so large
/// exponents stay within floating-point range.
///
/// Satisfies `max <= pnorm <= n^(1/p) * max`.
pub fn pnorm(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Numerical("cannot aggregate an empty value set".into()));
    }
    let max = values.iter().fold(0.0_f64, |a, &v| a.max(v));
    if max <= 0.0 {
        return Ok(0.0);
    }
    let sum: f64 = values.iter().map(|&v| (v / max).powf(p)).sum();
    Ok(max * sum.powf(1.0 / p))
}

/// p-norm and its gradient with respect to each value.
pub fn pnorm_grad(values: &[f64], p: f64) -> Result<(f64, Vec<f64>)> {
    if values.is_empty() {
        return Err(Error::Numerical("cannot aggregate an empty value set".into()));
    }
    let max = values.iter().fold(0.0_f64, |a, &v| a.max(v));
    if max <= 0.0 {
        return Ok((0.0, vec![0.0; values.len()]));
    }
    let sum: f64 = values.iter().map(|&v| (v / max).powf(p)).sum();
    let scale = sum.powf((1.0 - p) / p);
    let grad = values.iter().map(|&v| (v / max).powf(p - 1.0) * scale).collect();
    Ok((max * sum.powf(1.0 / p), grad))
}

/// Moves the correction factor toward the observed max / p-norm ratio.
///
/// The mixing keeps the corrected aggregate from oscillating when the
/// critical element changes between iterations; the clamp bounds the
/// correction when the aggregate is momentarily far from the max.
pub fn update_correction(c_prev: f64, true_max: f64, pn: f64, mixing: f64) -> f64 {
    debug_assert!(pn > 0.0);
    let c = mixing * (true_max / pn) + (1.0 - mixing) * c_prev;
    c.clamp(0.1, 10.0)
}

/// Yield load factor: reciprocal of the corrected stress aggregate. A zero
/// stress state carries no load toward yield, reported as `+inf`.
pub fn ylf(pn: f64, c: f64) -> f64 {
    let denom = c * pn;
    if denom > 0.0 {
        1.0 / denom
    } else {
        f64::INFINITY
    }
}

/// Yield constraint against a fixed target factor, normalized by the
/// logarithm: feasible designs give a non-positive value.
pub fn yield_constraint(pn: f64, c: f64, target: f64) -> f64 {
    (c * pn * target).ln()
}

/// Yield constraint coupled to the global buckling aggregate: the corrected
/// stress measure must stay below the buckling load, so the structure
/// reaches its stability limit before it yields.
pub fn yield_constraint_coupled(pn: f64, c: f64, jks: f64) -> f64 {
    (c * pn / jks).ln()
}

/// Smooth upper bound of the largest positive eigenvalue reciprocal.
///
/// Non-positive reciprocals (load-reversal modes) are ignored; with none
/// positive the structure has no critical mode to aggregate and the call
/// fails. The bound tightens to the true maximum as the exponent grows.
pub fn ks_aggregate(gammas: &[f64], exponent: f64) -> Result<f64> {
    let pos: Vec<f64> = gammas.iter().copied().filter(|&g| g > 0.0).collect();
    if pos.is_empty() {
        return Err(Error::Numerical(
            "no positive eigenvalue reciprocals to aggregate".into(),
        ));
    }
    pnorm(&pos, exponent)
}

/// Global buckling load factor: the aggregate of eigenvalue reciprocals and
/// its reciprocal, a smooth lower bound of the fundamental factor.
pub fn ks_blf(gammas: &[f64], exponent: f64) -> Result<(f64, f64)> {
    let j = ks_aggregate(gammas, exponent)?;
    Ok((j, 1.0 / j))
}

/// Per-element relaxed yield measures: the von Mises equivalent against the
/// density-interpolated yield limit, scaled by the indicator ramp.
///
/// The density floor of the optimizer keeps the interpolated limit positive
/// wherever stresses are meaningful; empty regions are suppressed by the
/// indicator relaxation rather than by the limit.
pub fn yield_stresses(
    stresses: &[[f64; 3]],
    x: &[f64],
    s_ind: &[f64],
    eps: f64,
    sigma0: f64,
    beta_yield: f64,
) -> Vec<f64> {
    debug_assert_eq!(stresses.len(), x.len());
    debug_assert_eq!(stresses.len(), s_ind.len());
    stresses
        .iter()
        .zip(x.iter().zip(s_ind))
        .map(|(&sig, (&xe, &se))| {
            let lim = material::yield_limit(xe, sigma0, beta_yield);
            relax_stress(vm_equivalent(sig, lim), se, eps)
        })
        .collect()
}

/// Per-element relaxed local-buckling measures: each element stress against
/// the conical failure surface calibrated on that element's density, scaled
/// by the indicator ramp.
pub fn local_buckling_stresses(
    stresses: &[[f64; 3]],
    x: &[f64],
    s_ind: &[f64],
    eps: f64,
) -> Vec<f64> {
    debug_assert_eq!(stresses.len(), x.len());
    debug_assert_eq!(stresses.len(), s_ind.len());
    stresses
        .iter()
        .zip(x.iter().zip(s_ind))
        .map(|(&sig, (&xe, &se))| {
            let [t, c, b] = material::buckling_limits(xe);
            let surf = WwSurface::new_clamped(t, c, b);
            relax_stress(surf.equivalent(sig), se, eps)
        })
        .collect()
}

/// Aggregated stress measure of one iterate: the per-element relaxed values
/// together with their max and p-norm.
#[derive(Clone, Debug)]
pub struct StressAggregate {
    /// Per-element relaxed equivalent measures.
    pub relaxed: Vec<f64>,
    /// Largest relaxed value.
    pub max: f64,
    /// p-norm of the relaxed values.
    pub pnorm: f64,
}

impl StressAggregate {
    /// Aggregates relaxed per-element values with exponent `p`.
    pub fn new(relaxed: Vec<f64>, p: f64) -> Result<StressAggregate> {
        let pn = pnorm(&relaxed, p)?;
        let max = relaxed.iter().fold(0.0_f64, |a, &v| a.max(v));
        Ok(StressAggregate { relaxed, max, pnorm: pn })
    }

    /// Corrected smooth maximum.
    pub fn corrected(&self, c: f64) -> f64 {
        c * self.pnorm
    }

    /// Load factor: reciprocal of the corrected aggregate (`+inf` when
    /// unloaded).
    pub fn load_factor(&self, c: f64) -> f64 {
        ylf(self.pnorm, c)
    }
}

/// Local buckling load factor and constraint.
///
/// Builds the per-element buckling-surface measures, aggregates them with
/// the state's exponent and local correction factor, and forms the
/// constraint against the global buckling aggregate: local failure must not
/// occur below the global stability limit. An unloaded state gives an
/// infinite factor and a strictly negative (feasible) constraint.
pub fn local_buckling_factor(
    stresses: &[[f64; 3]],
    x: &[f64],
    s_ind: &[f64],
    state: &AggregationState,
    jks: f64,
) -> Result<(f64, f64, StressAggregate)> {
    let relaxed = local_buckling_stresses(stresses, x, s_ind, state.epsilon);
    let agg = StressAggregate::new(relaxed, state.p)?;
    let lblf = agg.load_factor(state.c_local);
    let g = yield_constraint_coupled(agg.pnorm, state.c_local, jks);
    Ok((lblf, g, agg))
}
