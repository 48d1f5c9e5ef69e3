use nalgebra::DMatrix;
use rnnstab::analysis::*;
use rnnstab::model::*;
use rnnstab::synthesis::*;
use rnnstab::verify::*;
use std::time::Instant;

fn pipeline_model() -> (rnnstab::model::EsnModel, f64, Scaling, Dataset) {
    let preset = SurrogatePreset::default();
    let data = generate_surrogate_data(&preset, &MprsSpec::default(), 30_000, 25.0, 1);
    let base = Scaling::fit(&data);
    let scaling = Scaling { y_scale: base.y_scale * 6.0, u_scale: base.u_scale * 4.0, ..base };
    let normalized = scaling.normalize(&data);
    let cfg = EsnTrainConfig { spectral_radius_target: 0.3, input_scale: 2.4, feedback_scale: 3.0, ..Default::default() };
    let (esn, fit, _) = train_esn_restarts(&normalized, &cfg, 8).unwrap();
    (esn, fit, scaling, data)
}

#[test]
fn scratch_ladder() {
    let t0 = Instant::now();
    let (esn, fit, scaling, _) = pipeline_model();
    println!("fit={fit:.1}%");
    let model = augment_integrator(&esn);
    let w8 = benchmark_weights(&esn.wy, DEFAULT_QY, DEFAULT_QI, DEFAULT_RU);
    let theta = rnnstab::sigmoid::compute_theta(&model.kind, 1e-6).unwrap();

    let k0 = DMatrix::zeros(1, model.n());
    let pre = necessary_precheck(&model, &k0).unwrap();
    assert!(!pre.schur_a0_bu_k);

    let mut prev_aux = -f64::INFINITY;
    let mut prev_nar = -f64::INFINITY;
    for db in [5.0, 10.0, 20.0] {
        let t = Instant::now();
        let aux = synthesize_aux(&model, &vec![theta; model.nu()], &w8, SynthesisMode::FixedDelta(db), FLmi::LambdaMin).unwrap();
        verify_synthesis(&model, &w8, &aux).unwrap();
        let cl = build_closed_loop(&model, &aux.k).unwrap();
        let rep = validate_certificate(&aux.certificate, &cl, 2000).unwrap();
        assert!(rep.passed, "aux at {db}: {rep:?}");
        // Global infeasible for the synthesized loop too.
        assert!(matches!(check_global(&cl), Err(AnalysisError::Infeasible { .. })));
        println!("aux db={db}: gamma={:.5} ({:?})", aux.gamma, t.elapsed());
        assert!(aux.gamma >= prev_aux - 1e-7, "aux gamma must be nondecreasing");
        prev_aux = aux.gamma;

        let t = Instant::now();
        let nar = synthesize_narrow(&model, &w8, SynthesisMode::FixedDelta(db), None, 3, FLmi::LambdaMin).unwrap();
        verify_synthesis(&model, &w8, &nar.result).unwrap();
        let cln = build_closed_loop(&model, &nar.result.k).unwrap();
        let repn = validate_certificate(&nar.result.certificate, &cln, 2000).unwrap();
        assert!(repn.passed, "narrow at {db}: {repn:?}");
        println!("narrow db={db}: gamma={:.5} hbar={:.3} ({:?})", nar.result.gamma, nar.h_bar, t.elapsed());
        assert!(nar.result.gamma >= prev_nar - 1e-7);
        prev_nar = nar.result.gamma;
    }

    // Tracking: step reference in normalized units, via raw 7.4 -> norm.
    let aux = synthesize_aux(&model, &vec![theta; model.nu()], &w8, SynthesisMode::FixedDelta(20.0), FLmi::LambdaMin).unwrap();
    let cl = build_closed_loop(&model, &aux.k).unwrap();
    let yref = scaling.normalize_y(7.4);
    println!("normalized reference {yref:.4}");
    let reference = Reference::constant(reference_vector(model.n()), yref, 3000);
    let x0 = nalgebra::DVector::zeros(model.n());
    let traj = simulate(&cl, &x0, 3000, Some(&reference)).unwrap();
    assert!(!traj.diverged);
    // Plant output y_s = W_y x_s tracks the reference.
    let xs = traj.final_state();
    let ys = (0..esn.ns()).map(|i| esn.wy[(0, i)] * xs[i]).sum::<f64>();
    println!("tracked y_s={ys:.5} vs ref {yref:.5} (raw {:.3} vs 7.4)", scaling.denormalize_y(ys));
    assert!((ys - yref).abs() < 1e-6, "integral action should kill the error");
    println!("TOTAL {:?}", t0.elapsed());
}
