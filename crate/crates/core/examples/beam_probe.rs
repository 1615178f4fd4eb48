use fcfp_core::comm::{beampattern_power, combiner_set, default_phi_grid};
use fcfp_core::scenario::ScenarioConfig;
use fcfp_core::sensing::SensingMetricCache;
use fcfp_core::solvers::{feasible_init, solve_cmlt, SolverConfig};
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use std::time::Instant;

fn main() {
    let grid = default_phi_grid();
    for seed in [5u64, 7, 11] {
        let t0 = Instant::now();
        let cfg = ScenarioConfig::with_seed(seed);
        let scen = cfg.build().unwrap();
        let prior = scen.prior_grid();
        let cache = SensingMetricCache::build(&scen, &prior).unwrap();
        println!("seed {seed}: cache R = {} terms, built in {:.1} s", cache.rank(), t0.elapsed().as_secs_f64());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1000);
        let scfg = SolverConfig::default();
        let t1 = Instant::now();
        let x0 = feasible_init(&scen, &cache, &mut rng, &scfg).unwrap();
        println!("  init in {:.1} s", t1.elapsed().as_secs_f64());
        let t2 = Instant::now();
        let report = solve_cmlt(&scen, &cache, &scfg, &x0).unwrap();
        println!("  cmlt {} iters in {:.1} s status {:?}", report.inner_iterations, t2.elapsed().as_secs_f64(), report.status);
        let combiners = combiner_set(&report.x_final, &cache, &scen).unwrap();
        for (k, w) in combiners.comm.iter().enumerate() {
            let q = beampattern_power(w, &report.x_final, &grid, &scen);
            let best = q.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
            println!("  user {k}: peak {:.2} target {:.0}", grid[best].to_degrees(), scen.comm_users[k].phi.to_degrees());
        }
    }
}
