use fusestrata_nn::gradsuite::{model_check, run_suite, BLOCKS, OPERATORS};

#[test]
fn every_operator_and_block_matches_central_differences() {
    let entries = run_suite(3, 11).unwrap();
    assert_eq!(entries.len(), OPERATORS.len() + BLOCKS.len());
    for e in &entries {
        println!("{:<24} coords={:<6} max_rel_err={:.3e}", e.name, e.coords, e.max_rel_err);
        assert!(e.coords > 0, "{} checked nothing", e.name);
        assert!(e.max_rel_err < 1e-4, "{}: {:.3e}", e.name, e.max_rel_err);
    }
}

#[test]
fn whole_model_gradient_matches_central_differences() {
    let r = model_check(5, 3).unwrap();
    println!("model: coords={} max_rel_err={:.3e}", r.coords_checked, r.max_rel_err);
    assert!(r.max_rel_err < 1e-3, "{:.3e}", r.max_rel_err);
}
