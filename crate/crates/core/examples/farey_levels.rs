//! Farey levels: sizes, exact adjacency, the word orbit and the lift to the fiber.

use farey_skew::rational::{farey_level, lift_level, walk_lift_discrepancy, word_orbit};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for n in [0, 1, 2, 5, 10, 16] {
        let level = farey_level(n)?;
        let adjacent = level.validate().is_ok();
        println!("level {n:>2}: {:>6} fractions, adjacent: {adjacent}", level.len());
    }
    let level = farey_level(3)?;
    let shown: Vec<String> = level.fractions().iter().map(|f| f.to_string()).collect();
    println!("level 3: {}", shown.join(" "));

    let orbit = word_orbit(8)?;
    let starred = farey_level(8)?.starred().len();
    println!("words of length 8 reach {} points; level 8 has {starred} new ones", orbit.len());

    let lifted = lift_level(4, 2.0)?;
    for (x, w) in lifted.points.iter().take(4) {
        println!("  {x:>5} -> omega = {w:.12}");
    }
    println!("walk vs direct lift, level 12: {:e}", walk_lift_discrepancy(12, 2.0)?);
    Ok(())
}
