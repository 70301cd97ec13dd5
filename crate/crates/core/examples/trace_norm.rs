//! The trace norm through its variational form, and the Γ refresh that
//! couples two classifier heads.
//!
//! cargo run --example trace_norm

use cdl::coupling::{CoupledHeads, HeadParams};
use cdl::linalg::{self, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = Matrix::from_fn(4, 7, |_, _| rng.random_range(-1.0..1.0));

    // ‖M‖_* = ½ tr(Mᵀ Γ⁻¹ M) + ½ tr(Γ) at Γ = (M Mᵀ)^{1/2}
    let nuclear = linalg::trace_norm(&m)?;
    let (gamma, gamma_inv) = linalg::psd_sqrt_and_inv_sqrt(&m.matmul_t(&m)?, 1e-12)?;
    let variational = 0.5 * m.t_matmul(&gamma_inv.matmul(&m)?)?.trace() + 0.5 * gamma.trace();
    println!("singular values   {:?}", linalg::svd(&m)?.s);
    println!("trace norm        {nuclear:.12}");
    println!("variational form  {variational:.12}");

    // any other PSD Γ gives a larger value
    let loose = gamma.scale(1.5);
    let loose_inv = gamma_inv.scale(1.0 / 1.5);
    let upper = 0.5 * m.t_matmul(&loose_inv.matmul(&m)?)?.trace() + 0.5 * loose.trace();
    println!("at 1.5·Γ          {upper:.12}");

    let params = HeadParams::default();
    let mut heads = CoupledHeads::init(6, 10, params, 5)?;
    heads.w_v = heads.w_n.map(|v| v * 0.5);
    heads.update_gamma()?;
    let g = heads.gamma();
    let residual = g.matmul(g)?.sub(&heads.gram())?;
    println!(
        "Γ² − (W_N W_Nᵀ + W_V W_Vᵀ + μI): ‖·‖_F = {:.2e}",
        residual
            .sub(&Matrix::identity(6).scale(params.mu))?
            .frobenius_norm()
    );
    println!(
        "R1/λ = {:.6}, ‖[W_N W_V]‖_* = {:.6}",
        heads.r1_value() / params.lambda,
        linalg::trace_norm(&heads.stacked())?
    );
    Ok(())
}
