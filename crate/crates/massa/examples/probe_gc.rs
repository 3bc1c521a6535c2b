fn main() {
    let mut worst = (0u64, 0.0f64, String::new());
    for seed in 0..20u64 {
        let checks = massa::verify::run_gradcheck(seed, false).unwrap();
        for c in &checks {
            let e = c.report.max_rel_err();
            if e > worst.1 {
                worst = (seed, e, c.name.to_string());
            }
            assert!(c.passes(), "seed {seed} group {} err {e}", c.name);
        }
    }
    println!("worst across 20 seeds: {} at seed {} ({:.3e})", worst.2, worst.0, worst.1);
}
