use fcfp_core::scenario::ScenarioConfig;
use fcfp_core::sensing::SensingMetricCache;
use fcfp_core::solvers::*;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use std::time::Instant;

fn main() {
    for seed in [0u64, 1, 2] {
        let cfg = ScenarioConfig::with_seed(seed);
        let scen = cfg.build().unwrap();
        let prior = scen.prior_grid();
        let cache = SensingMetricCache::build(&scen, &prior).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(77);
        let scfg = SolverConfig::default();
        let x0 = feasible_init(&scen, &cache, &mut rng, &scfg).unwrap();
        let mut line = format!("seed {seed}:");
        for name in ["cmlt", "pnqt", "ipga", "ao"] {
            let t = Instant::now();
            let r = match name {
                "cmlt" => solve_cmlt(&scen, &cache, &scfg, &x0).unwrap(),
                "pnqt" => solve_pnqt(&scen, &cache, &scfg, &x0).unwrap(),
                "ipga" => solve_ipga(&scen, &cache, &scfg, &x0).unwrap(),
                _ => solve_ao(&scen, &cache, &scfg, &x0).unwrap(),
            };
            line += &format!(
                " {name}={:.4}({:?},{}it,{:.0}s)",
                r.bcrlb_final,
                r.status,
                r.inner_iterations,
                t.elapsed().as_secs_f64()
            );
        }
        println!("{line}");
    }
}
