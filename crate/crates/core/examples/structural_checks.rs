//! Cohomology witness, periodic-orbit obstructions, the Federer cover sweep and
//! the tower audit.

use farey_skew::checks::{cohomology_witness, dyadic_scales, federer_probe, orbit_obstruction, tower_audit};
use farey_skew::dynamics::BranchIndex;
use farey_skew::rational::Rational;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let w = cohomology_witness()?;
    println!("cohomology witness: {:.15} (|T_Y^2 y - y| = {:e})", w.value, w.period_error);

    let words: [&[(u32, u32)]; 3] = [&[(1, 0)], &[(1, 0), (2, 0)], &[(1, 1), (3, 0), (2, 2)]];
    for word in words {
        let word: Vec<BranchIndex> = word.iter().map(|&(i, j)| BranchIndex::new(i, j)).collect::<Result<_, _>>()?;
        let o = orbit_obstruction(&word)?;
        println!("word {:?}: point {:.12}, Birkhoff sum {:+.3e}", word.iter().map(|b| (b.i, b.j)).collect::<Vec<_>>(), o.point, o.birkhoff_value);
    }

    let report = federer_probe(&Rational::new(2, 1)?, &dyadic_scales(9..=20))?;
    println!("\n{:>10} {:>4} {:>5} {:>10} {:>8} {:>8}", "eta", "N", "p+1", "mass", "contain", "D");
    for s in &report.scales {
        println!("{:>10.3e} {:>4} {:>5} {:>10.4} {:>8.3} {:>8.4}", s.eta, s.kept_branches, s.pieces, s.mass_ratio, s.containment, s.d_achieved);
    }
    println!("max/median D = {:.4}; worst cover defect {:e}", report.max_over_median(), report.max_cover_defect());
    println!("({})", report.note);

    let audit = tower_audit()?;
    println!("\ntower audit over r <= {}:", audit.rmax);
    println!("  expansion min {:.6} (fixed point of (1,0): {:.6})", audit.kappa, audit.kappa_fixed_point);
    println!("  log-jacobian variation {}", audit.log_jacobian_variation);
    println!("  sup |(T^k o h)'| = {:.6}", audit.composition_sup);
    println!("  return-time moment at sigma={:.6}: {:.15} (closed form {:.15?})", audit.moment.sigma, audit.moment.partial_sums.last().unwrap().1, audit.moment.closed_form);
    println!("  past the radius: partial sums {:?}", audit.divergent_probe.partial_sums.iter().map(|p| format!("{:.3e}", p.1)).collect::<Vec<_>>());
    println!("  pass: {}", audit.passes());
    Ok(())
}
