//! The question-mark function on rationals, masses of intervals, and
//! quadrature against the Minkowski measure on Y.

use farey_skew::minkowski::{farey_dyadic_correspondence_check, integrate_mu_y, mu_mass, question_mark, question_mark_inverse, mu_y_nodes};
use farey_skew::rational::Rational;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for s in ["1/3", "2/5", "3/7", "5/8", "13/21"] {
        let x: Rational = s.parse()?;
        let q = question_mark(&x)?;
        println!("?({s:>5}) = {q:<10} = {:.12}", q.to_f64());
    }
    farey_dyadic_correspondence_check(12)?;
    println!("levels up to 12 map onto the dyadics exactly");

    let y_mass = mu_mass(&Rational::new(1, 3)?, &Rational::new(1, 2)?)?;
    println!("mu(Y) = {y_mass}");
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    println!("?^-1(?(golden)) - golden = {:e}", question_mark_inverse(farey_skew::minkowski::question_mark_f64(golden), 1e-15)? - golden);

    let nodes = mu_y_nodes(8)?;
    println!("8 equal-mass nodes on Y: {:?}", nodes.nodes.iter().map(|x| format!("{x:.5}")).collect::<Vec<_>>());
    for count in [64, 256, 1024] {
        println!("mean of x under mu_Y with {count:>4} nodes: {:.12}", integrate_mu_y(count, |x| x)?);
    }
    Ok(())
}
