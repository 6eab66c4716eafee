use sisopt::model::{generate_scale_free, ScaleFreeConfig};
use sisopt::local_search::{rgm, scp, RgmConfig, ScpBackend, ScpConfig};
use sisopt::relax::{check_exactness, solve_pr1, solve_pr2, Pr1Options};
use std::time::Instant;

fn main() {
    for nu in [1.0, 0.5, 0.0] {
        let cfg = ScaleFreeConfig { n: 100, power: 1.5, dmin: 2, dmax: ScaleFreeConfig::auto_dmax(100), nu, seed: 11 };
        let inst = generate_scale_free(&cfg).unwrap();
        println!("== nu = {nu}, N = {}, E = {}, exactness predicate: {}", inst.n(), inst.edges().len(), check_exactness(&inst));
        let t0 = Instant::now();
        let r2 = solve_pr2(&inst, 1e-6).unwrap();
        println!("pr2: lower {:.6} upper {:.6} exact {} stages {} newton {} in {:?}", r2.lower_bound, r2.upper_bound, r2.exact, r2.iters_outer, r2.iters_inner, t0.elapsed());
        let t0 = Instant::now();
        let rg = rgm(&inst, &RgmConfig::default(), &vec![0.0; 100]).unwrap();
        println!("rgm: obj {:.6} iters {} fp_max {} in {:?}", rg.objective, rg.iters_outer, rg.iters_inner_max, t0.elapsed());
        println!("  opt_gap(rgm vs pr2 lower) = {:.3e}", (rg.objective - r2.lower_bound) / r2.lower_bound);
        let t0 = Instant::now();
        match scp(&inst, ScpBackend::ExpCone, &ScpConfig::default()) {
            Ok(se) => println!("scp-exp: obj {:.6} outer {} in {:?}  gap vs rgm {:.3e}", se.objective, se.iters_outer, t0.elapsed(), (se.objective - rg.objective).abs() / rg.objective),
            Err(e) => println!("scp-exp FAILED: {e}"),
        }
        let t0 = Instant::now();
        match scp(&inst, ScpBackend::MMatrix, &ScpConfig::default()) {
            Ok(sm) => println!("scp-m: obj {:.6} outer {} in {:?}  gap vs rgm {:.3e}", sm.objective, sm.iters_outer, t0.elapsed(), (sm.objective - rg.objective).abs() / rg.objective),
            Err(e) => println!("scp-m FAILED: {e}"),
        }
        if nu > 0.4 {
            let t0 = Instant::now();
            match solve_pr1(&inst, Pr1Options::default()) {
                Ok(r1) => println!("pr1: lower {:.6} upper {:.6} outer {} in {:?}  |r1-r2|/r2 = {:.3e}", r1.lower_bound, r1.upper_bound, r1.iters_outer, t0.elapsed(), (r1.lower_bound - r2.lower_bound).abs() / r2.lower_bound),
                Err(e) => println!("pr1 FAILED: {e}"),
            }
        }
    }
}
