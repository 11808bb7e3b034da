//! Orbits of the skew product, the first-return data on Y and the branch
//! convention check.

use farey_skew::dynamics::{ensure_branch_convention, return_data, skew_step, BranchIndex, SkewPoint};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    ensure_branch_convention()?;
    let mut p = SkewPoint::new(std::f64::consts::PI / 10.0, 0.0, 2.0)?;
    println!("{:>3} {:>18} {:>18}", "n", "x", "omega");
    for n in 0..12 {
        println!("{n:>3} {:>18.15} {:>18.15}", p.x, p.omega);
        p = skew_step(p);
    }

    // rationals end at the fixed point 0 and never return
    for x in [0.34 + 1e-3 * std::f64::consts::E, 0.4 + 1e-3 * std::f64::consts::SQRT_2, 0.45 + 1e-4 * std::f64::consts::PI] {
        let r = return_data(x)?;
        println!("x = {x:.6}: branch ({}, {}), return time {}, image {:.12}, phi sum {:+.12}", r.branch.i, r.branch.j, r.return_time, r.image, r.phi_sum);
    }
    let b = BranchIndex::new(2, 1)?;
    let (lo, hi) = b.interval_exact();
    println!("branch (2, 1) covers ({lo}, {hi}) with return time {}", b.return_time());
    Ok(())
}
