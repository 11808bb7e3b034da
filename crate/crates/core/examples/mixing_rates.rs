//! Exact mixing errors along Farey levels for a few observables.

use farey_skew::limits::exact_mixing_error;
use farey_skew::observable::Observable;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for name in ["cos", "step"] {
        let f = Observable::by_name(name, 2.0)?;
        let rep = exact_mixing_error(&f, 18)?;
        println!("{name}: reference {:.12}", rep.reference);
        for (n, e) in rep.errors.iter().step_by(3) {
            println!("  n = {n:>2}: {e:+.6e}");
        }
        println!("  fit over {:?}: theta {:.4}, R^2 {:.4}; envelope R^2 {:.4}", rep.window, rep.theta, rep.fit.r_squared, rep.envelope_fit.r_squared);
    }
    Ok(())
}
