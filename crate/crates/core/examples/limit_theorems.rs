//! Green-Kubo variance, CLT, LLT and characteristic-function checks at
//! small sample sizes.

use farey_skew::limits::{char_function_scan, clt_test, llt_test, sigma_squared, RunConfig};
use farey_skew::observable::Observable;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let psi = Observable::fiber_cosine(2.0);
    let cfg = RunConfig { trials: 20_000, n_steps: 500, ..Default::default() };

    let s = sigma_squared(&psi, 60, &cfg)?;
    println!("sigma^2 = {:.5} +- {:.5}", s.sigma2, s.stderr);

    let clt = clt_test(&psi, 500, &cfg)?;
    println!("CLT n = 500: KS {:.4?}, pass {}", clt.ks, clt.pass);
    let cob = clt_test(&Observable::coboundary(2.0), 500, &RunConfig { trials: 5_000, ..cfg })?;
    println!("coboundary: Var(S_n)/n = {:.2e}, degenerate {}", cob.variance_ratio, cob.degenerate);

    let llt = llt_test(&psi, (0.0, 1.0), 0.0, 500, &RunConfig { trials: 100_000, ..cfg })?;
    println!("LLT n = 500: {:.4} +- {:.4} vs {:.4}, pass {}", llt.estimate, llt.stderr, llt.prediction, llt.pass);

    let one = Observable::constant(1.0, 2.0);
    let cf = char_function_scan(&psi, 0.1, &[100, 200, 400], &one, &one, &cfg)?;
    for row in &cf.rows {
        println!("charfn n = {:>3}: deviation {:.2e} (stderr {:.1e})", row.n, row.deviation, row.stderr);
    }
    Ok(())
}
