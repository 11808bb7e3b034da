//! Operator renewal sequences: the scalar oracles and the Farey blocks.

use farey_skew::renewal::{farey_sequence, geometric_sequence, lattice_sequence, limit_check, limit_data, perturbed_limit_check, PerturbedFamily};
use farey_skew::transfer::TransferConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fit = limit_check(&geometric_sequence(0.3, 400)?, 30)?;
    println!("geometric p = 0.3: largest |T_n - p| = {:e}", fit.errors.iter().skip(1).fold(0.0f64, |a, &b| a.max(b)));

    let lattice = lattice_sequence(0.0)?;
    let data = limit_data(&lattice)?;
    let fit = limit_check(&lattice, 40)?;
    println!("lattice: mu = {:.6}, rate {:.4}, R^2 {:.4}", data.mu, fit.theta, fit.r_squared);

    let family = PerturbedFamily::new(lattice_sequence)?;
    println!("lattice family: mu = {:.6}, alpha = {:.6}", family.mu(), family.alpha());
    for t in [0.05, 0.2, 1.0] {
        let p = perturbed_limit_check(&family, t, 80)?;
        println!("  t = {t}: deviation at n = 80 {:.3e}, enveloped: {}", p.deviations[80], p.dominated);
    }

    let cfg = TransferConfig::new(24, 40);
    let seq = farey_sequence(0, &cfg)?;
    let data = limit_data(&seq)?;
    let fit = limit_check(&seq, 60)?;
    println!("Farey blocks: Kac coefficient {:.8}, |T_60 - P/mu| = {:.3e}, rate {:.4}", data.mu, fit.errors[60], fit.theta);
    Ok(())
}
