use wheelquad_core::sim::{run_closed_loop, Scenario};

#[test]
fn debug_trot() {
    let path = format!("{}/../../scenarios/trot.json", env!("CARGO_MANIFEST_DIR"));
    let mut scenario = Scenario::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    scenario.duration = 12.0;
    let outcome = run_closed_loop(&scenario).unwrap();
    println!("completed={} err={:?}", outcome.completed, outcome.error);
    let csv = outcome.log.to_csv();
    let parsed = wheelquad_core::metrics::ParsedLog::from_csv(&csv).unwrap();
    let t = parsed.column("t").unwrap();
    let vx = parsed.column("base_vx").unwrap();
    let z = parsed.column("base_z").unwrap();
    let qy = parsed.column("base_qy").unwrap();
    let clf = parsed.column("contact_lf").unwrap();
    let q_kfe = parsed.column("q_lf_kfe").unwrap();
    let q_hfe = parsed.column("q_lf_hfe").unwrap();
    let lam_lf = parsed.column("lam_lf_z").unwrap();
    let margin = parsed.column("zmp_margin").unwrap();
    let comz = parsed.column("com_z").unwrap();
    let comrefz = parsed.column("com_ref_z").unwrap();
    for i in (0..t.len()).step_by(40) {
        println!(
            "t={:.2} vx={:+.2} z={:.3} pitch2={:+.3} lf_c={} q_hfe={:+.2} q_kfe={:+.2} lamz={:+.1} margin={:+.3} comz={:.3}/{:.3}",
            t[i], vx[i], z[i], qy[i], clf[i], q_hfe[i], q_kfe[i], lam_lf[i], margin[i], comz[i], comrefz[i]
        );
    }
}
