//! Spectra of the twisted transfer operators and the decay proxy.

use farey_skew::transfer::{build_matrix, dolgopyat_decay_probe, spectral_radius, TransferConfig};
use num_complex::Complex64;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let one = Complex64::new(1.0, 0.0);
    for grid in [16, 32] {
        let cfg = TransferConfig::new(grid, 40);
        let radii: Vec<String> = (0..=5)
            .map(|k| spectral_radius(&build_matrix(k, one, &cfg)?).map(|s| format!("{:.6}", s.radius)))
            .collect::<Result<_, _>>()?;
        println!("G = {grid:>2}: rho(L_k), k = 0..5: {}", radii.join(" "));
    }
    let probe = dolgopyat_decay_probe(&[1, 2, 4, 8, 16], 12, &TransferConfig::new(24, 30))?;
    for row in &probe.rows {
        println!("k = {:>2}: per-step factor {:.5}", row.k, row.factor);
    }
    println!("sup factor {:.5} ({})", probe.sup_factor, probe.label);
    Ok(())
}
