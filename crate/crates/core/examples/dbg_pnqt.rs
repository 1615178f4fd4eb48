use fcfp_core::scenario::{PriorGrid, RisPattern, ScenarioConfig};
use fcfp_core::sensing::{metric_a, SensingMetricCache};
use fcfp_core::solvers::inner_convex_solve;
use fcfp_core::solvers::BarrierOptions;
use fcfp_core::transforms::build_p2_surrogates;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

fn main() {
    let mut cfg = ScenarioConfig::with_seed(92);
    cfg.apply_desk_profile();
    cfg.comm_users = Some(vec![]);
    let scen = cfg.build().unwrap();
    let prior = PriorGrid::weighted(vec![1.1], vec![1.0]);
    let cache = SensingMetricCache::build(&scen, &prior).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(92);
    let x0 = RisPattern::random_unit(scen.n_elements(), &mut rng);
    let a0 = metric_a(&x0, &cache, &scen).unwrap();
    println!("A(x0) = {a0:.6e}, eigen terms {}", cache.eigen_terms.len());
    let sur = build_p2_surrogates(&x0, &cache, &scen).unwrap();
    println!("obj M norm {:.3e} lin norm {:.3e} const {:.3e}", sur.objective.m_mat.norm(), sur.objective.lin.norm(), sur.objective.constant);
    let z = x0.project_unit();
    let mu = 1e-3 * a0.abs();
    let sol = inner_convex_solve(&sur.objective, &[], mu, z.coeffs(), x0.coeffs(), a0.abs(), &BarrierOptions::default());
    match sol {
        Ok(s) => println!("ok obj {:.6e} gap {:.2e} steps {}", s.objective, s.gap, s.newton_steps),
        Err(e) => println!("ERR {e}"),
    }
}
