//! The leading eigenvalue of the perturbed operator near t = 0 and its curvature.

use farey_skew::observable::Observable;
use farey_skew::transfer::{lambda_curvature, lambda_path, TransferConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = TransferConfig::new(24, 25);
    let psi = Observable::fiber_cosine(2.0);
    let ts: Vec<f64> = (0..=6).map(|i| 0.025 * i as f64).collect();
    for (t, l) in lambda_path(&psi, &ts, 6, &cfg)? {
        println!("t = {t:.3}: lambda = {:.12} {:+.2e}i", l.re, l.im);
    }
    let c = lambda_curvature(&psi, 0.02, 6, &cfg)?;
    println!("fiber cosine: alpha = {:.6} (quotients {:.6}, {:.6}), conjugate error {:.1e}", c.alpha, c.quotients.0, c.quotients.1, c.conjugate_error);
    let cob = lambda_curvature(&Observable::coboundary(2.0), 0.02, 6, &cfg)?;
    println!("coboundary:   alpha = {:.3e}", cob.alpha);
    Ok(())
}
