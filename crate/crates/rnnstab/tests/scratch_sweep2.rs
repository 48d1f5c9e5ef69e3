use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rnnstab::analysis::*;
use rnnstab::model::ClosedLoop;
use rnnstab::sigmoid::{compute_ybar, SigmoidKind};

#[test]
fn criterion8_probe() {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let debug_trials = [36usize];
    let mut fails = vec![];
    for trial in 0..50 {
        let n = rng.gen_range(2..=4);
        let nu = rng.gen_range(1..=2);
        let target: f64 = if trial % 2 == 0 { rng.gen_range(0.2..0.95) } else { rng.gen_range(1.05..1.6) };
        let mut a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let eig: f64 = a.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max);
        a *= target / eig.max(1e-9);
        let b = DMatrix::from_fn(n, nu, |_, _| rng.gen_range(-1.0..1.0));
        let c = DMatrix::from_fn(nu, n, |_, _| rng.gen_range(-1.0..1.0));
        let cl = ClosedLoop::from_matrices(a, b, c, SigmoidKind::Tanh).unwrap();
        let schur = target < 1.0;

        if debug_trials.contains(&trial) {
            let m = min_h_feasible(&cl);
            if let Ok(mm) = &m {
                let h = mm.h_bar.max(1e-6) * 1.05 + 1e-6;
                let yb = compute_ybar(&SigmoidKind::Tanh, h, 1e-9).unwrap();
                if let Err(e) = analyze_regional_narrow(&cl, &vec![h; nu], &vec![yb; nu], FLmi::LambdaMin) {
                    println!("TRIAL36 narrow error: {e}");
                }
            }
        }
        let aux = analyze_regional_aux(&cl, &vec![1e-4; nu], FLmi::LambdaMin);
        let aux_ok = aux.is_ok();
        if aux_ok != schur {
            fails.push(format!("trial {trial} aux: schur={schur} but {:?}", aux.err().map(|e| e.to_string())));
        }
        let minh = min_h_feasible(&cl);
        match (&minh, schur) {
            (Ok(m), true) => {
                let h = m.h_bar.max(1e-6) * 1.05 + 1e-6;
                let yb = compute_ybar(&SigmoidKind::Tanh, h, 1e-9).unwrap();
                match analyze_regional_narrow(&cl, &vec![h; nu], &vec![yb; nu], FLmi::LambdaMin) {
                    Ok(_) => {}
                    Err(e) => fails.push(format!("trial {trial} narrow at 1.05*hbar={h}: {e}")),
                }
            }
            (Ok(_), false) => fails.push(format!("trial {trial}: minh feasible on non-Schur")),
            (Err(_), true) => fails.push(format!("trial {trial}: minh infeasible on Schur: {}", minh.err().map(|e| e.to_string()).unwrap())),
            (Err(_), false) => {}
        }
    }
    for f in &fails { println!("FAIL {f}"); }
    println!("total failures: {}", fails.len());
    panic!("done");
}
