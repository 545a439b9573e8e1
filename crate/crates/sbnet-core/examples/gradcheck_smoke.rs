use sbnet_core::runner::run_gradcheck;

fn main() {
    for seed in [0u64, 999] {
        let t0 = std::time::Instant::now();
        let checks = run_gradcheck(seed, false).unwrap();
        for c in &checks {
            println!(
                "seed={seed} {}: max_rel_err={:.3e} coords={} skipped={} {}",
                c.name,
                c.report.max_rel_err,
                c.report.coords_checked,
                c.report.coords_skipped,
                if c.pass { "PASS" } else { "FAIL" }
            );
        }
        println!("seed={seed} elapsed: {:.1}s", t0.elapsed().as_secs_f64());
    }
    let t1 = std::time::Instant::now();
    let bad = run_gradcheck(42, true).unwrap();
    let fails = bad.iter().filter(|c| !c.pass).count();
    println!("corrupted: {fails}/5 fail, elapsed {:.1}s", t1.elapsed().as_secs_f64());
}
