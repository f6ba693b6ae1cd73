//! Entanglement statistics and composition weights.
//!
//! Prints the fill rate for spaces with the cardinalities of three common
//! benchmarks, then the per-pair weights of a small hand-checkable space.

use drpt::space::{CompositionSpace, Pair};
use drpt::{composition_weight, compute_entanglement, WeightConfig, WeightDirection, WeightMode};

fn main() -> drpt::Result<()> {
    println!("{:<12} {:>5} {:>5} {:>6} {:>8}", "shape", "|A|", "|O|", "|C^s|", "ent_avg");
    for (name, a, o, seen) in [("ut-zappos", 16, 12, 83), ("ao-clevr", 8, 3, 16), ("c-gqa", 413, 674, 5592)] {
        let stats = compute_entanglement(&CompositionSpace::diagonal_fill(a, o, seen));
        println!("{name:<12} {a:>5} {o:>5} {seen:>6} {:>8.2}", stats.ent_avg);
    }

    // s0 pairs with o0 and o1, s1 with o0, s2 with o2.
    let space = CompositionSpace::anonymous(
        3,
        3,
        vec![Pair::new(0, 0), Pair::new(0, 1), Pair::new(1, 0), Pair::new(2, 2)],
    );
    let stats = compute_entanglement(&space);
    println!();
    println!("ent_a {:?}  ent_o {:?}", stats.ent_a, stats.ent_o);
    for mode in [WeightMode::Equation, WeightMode::Pseudocode] {
        for (direction, alpha) in [(WeightDirection::Suppress, 2.0), (WeightDirection::Enhance, 0.5)] {
            let cfg = WeightConfig { alpha, direction, mode };
            let weights = stats
                .seen_pairs
                .iter()
                .map(|&p| composition_weight(&stats, p, &cfg).map(|w| format!("{}={w:.3}", space.pair_name(p))))
                .collect::<drpt::Result<Vec<_>>>()?;
            println!("{mode:?} {direction:?} alpha {alpha}: {}", weights.join("  "));
        }
    }
    Ok(())
}
