use wheelquad_core::metrics::metrics_from_csv;
use wheelquad_core::sim::{run_closed_loop, Scenario};

fn run(name: &str) {
    let path = format!("{}/../../scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"));
    let scenario = Scenario::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let t0 = std::time::Instant::now();
    let outcome = run_closed_loop(&scenario).unwrap();
    let wall = t0.elapsed().as_secs_f64();
    println!("== {name}: completed={} err={:?} wall={wall:.1}s", outcome.completed, outcome.error);
    let c = &outcome.checks;
    println!("   base_h: nom {:.3} range [{:.3}, {:.3}] fell={} pen={:.4}", c.nominal_base_height, c.min_base_height, c.max_base_height, c.fell, c.max_penetration);
    println!("   rolling {:.2e} eom {:.2e} junction {:.2e} margins hard {:.4} all {:.4} fricviol {} degraded {}",
        c.max_rolling_residual, c.max_eom_residual, c.max_junction_residual,
        c.min_plan_hard_margin, c.min_plan_sample_margin, c.friction_cone_violations, c.plans_degraded);
    println!("   com_height_dev {:.4}", c.max_com_height_deviation);
    if outcome.completed {
        let m = metrics_from_csv(&outcome.log.to_csv()).unwrap();
        println!("   speed mean {:.3} max {:.3} cot {:?} rmse {:.4} wbc_ms {:.3} planner_ms {:.3}",
            m.mean_speed, m.max_speed, m.cost_of_transport, m.com_tracking_rmse,
            m.wbc_solve_ms_median, m.planner_solve_ms_median);
    }
}

#[test]
fn run_flat_drive() { run("flat_drive"); }

#[test]
fn run_speed() { run("speed"); }

#[test]
fn run_trot() { run("trot"); }

#[test]
fn run_double_incline() { run("double_incline"); }
