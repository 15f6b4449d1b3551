//! End-to-end single-design walkthrough: build the L-domain, push a design
//! through the filter/projection chain, analyze one realization, aggregate
//! the failure load factors, differentiate them, and take one optimizer
//! step on the raw variables.
//!
//! Run with `cargo run --example load_factors`.

use mstopo::failure::{self, AggregationState};
use mstopo::fea::{self, Kernels};
use mstopo::filter::{classical_to_pde_radius, FieldPipeline, Upstream};
use mstopo::mesh::{build_lbeam_domain, init_design_fields, robust_etas};
use mstopo::mma::MmaOptimizer;
use mstopo::sensitivity::{self, StressMeasure};

fn main() -> mstopo::Result<()> {
    let nel = 40;
    let beta = 2.0;
    let sigma0 = 0.1;
    // Filter radii are measured in element lengths.
    let mesh = build_lbeam_domain(nel, 5.0)?;
    let pipe = FieldPipeline::new(
        &mesh,
        classical_to_pde_radius(1.5),
        classical_to_pde_radius(5.0),
        robust_etas(),
    )?;
    let mut fields = init_design_fields(&mesh, 0.5, 0.15)?;
    pipe.forward(&mesh, &mut fields, beta);
    let n = mesh.n_elems();
    println!("domain: {} active elements, {} dofs", n, mesh.n_dofs);

    let kernels = Kernels::new();
    let agg = AggregationState::default();
    agg.validate()?;

    // Intermediate realization, with buckling modes.
    let state = fea::solve_state(&mesh, &kernels, &fields.rho[1], &fields.xbar, agg.modes, 1e-9, 7)?;
    println!("compliance: {:.6e}", state.compliance);

    let gammas: Vec<f64> = state.modes.iter().map(|m| m.gamma).collect();
    let (jks, blf) = failure::ks_blf(&gammas, agg.ks_exponent)?;
    println!("buckling factors: lowest {:.6e}, aggregated {:.6e}", state.modes[0].lambda, blf);

    let relaxed = failure::yield_stresses(
        &state.stresses,
        &fields.xbar,
        &fields.sbar[1],
        agg.epsilon,
        sigma0,
        beta,
    );
    let pn = failure::pnorm(&relaxed, agg.p)?;
    let ylf = failure::ylf(pn, agg.c_yield);
    println!("yield load factor: {:.6e}", ylf);

    let (lblf, g_local, _) =
        failure::local_buckling_factor(&state.stresses, &fields.xbar, &fields.sbar[1], &agg, jks)?;
    println!("local buckling factor: {:.6e} (coupled constraint {:.6e})", lblf, g_local);

    // Gradients of compliance and of the yield aggregate, pulled back to
    // the raw design variables.
    let (_, d_rho) = sensitivity::compliance_gradient(&mesh, &kernels, &state, &fields.rho[1]);
    let yield_resp = sensitivity::stress_aggregate_gradient(
        &mesh,
        &kernels,
        &state,
        &fields.rho[1],
        &fields.xbar,
        &fields.sbar[1],
        &StressMeasure::Yield { sigma0, beta_yield: beta },
        agg.p,
        agg.epsilon,
    )?;
    let zero = vec![0.0; n];
    let (gx_c, _) = pipe.backward(
        &mesh,
        &fields,
        beta,
        &Upstream { d_rho: [&zero, &d_rho, &zero], d_xbar: &zero, d_sbar: [&zero, &zero, &zero] },
    );
    let (gx_y, _) = pipe.backward(
        &mesh,
        &fields,
        beta,
        &Upstream {
            d_rho: [&zero, &yield_resp.grad.d_rho, &zero],
            d_xbar: &yield_resp.grad.d_xbar,
            d_sbar: [&zero, &yield_resp.grad.d_sbar, &zero],
        },
    );
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    println!("gradient norms: compliance {:.6e}, yield aggregate {:.6e}", norm(&gx_c), norm(&gx_y));

    // One optimizer step: minimize compliance subject to a volume cap.
    let mut mma = MmaOptimizer::new(n, 1, vec![0.15; n], vec![1.0; n]);
    let vol: f64 = fields.xbar.iter().sum::<f64>() / n as f64;
    let gcon = vec![vol / 0.5 - 1.0];
    let dgcon: Vec<f64> = vec![1.0 / (0.5 * n as f64); n];
    let x1 = mma.step(&fields.x, &gx_c, &gcon, &[dgcon])?;
    let moved = x1
        .iter()
        .zip(&fields.x)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0_f64, f64::max);
    println!("optimizer step: max variable move {:.6e}", moved);
    Ok(())
}
