use baldur::engine::{fit, FitConfig};
use baldur::synth::{synth_generate, SynthConfig};

fn run_suite(k_init: usize, tau: f64, psi: f64, max_iters: usize) {
    let mut f1s = Vec::new();
    for seed in 0..10u64 {
        let synth = SynthConfig {
            n: 2000, view_dims: vec![20, 20], relevant: vec![5, 5], k_true: 1, c: 1,
            tau_true: tau, psi_true: psi, seed: seed * 31 + 1,
        };
        let (ds, truth) = synth_generate(&synth).unwrap();
        let cfg = FitConfig { k_init, max_iters, seed, ..Default::default() };
        let (model, _) = fit(&ds, &cfg).unwrap();
        let mut tp = 0; let mut fp = 0; let mut fne = 0;
        for (v, t) in model.views.iter().zip(&truth.relevant_masks) {
            for (s, r) in v.descriptor.active_features.iter().zip(t) {
                match (s, r) { (true, true) => tp += 1, (true, false) => fp += 1, (false, true) => fne += 1, _ => {} }
            }
        }
        f1s.push(2.0 * tp as f64 / (2.0 * tp as f64 + fp as f64 + fne as f64));
    }
    f1s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = f1s[f1s.len()/2];
    let min = f1s[0];
    let mut removed = 0;
    for seed in 0..10u64 {
        let synth = SynthConfig {
            n: 2000, view_dims: vec![20, 20, 20], relevant: vec![5, 5, 0], k_true: 1, c: 1,
            tau_true: tau, psi_true: psi, seed: seed * 17 + 3,
        };
        let (ds, _) = synth_generate(&synth).unwrap();
        let cfg = FitConfig { k_init, max_iters, seed, ..Default::default() };
        let (model, _) = fit(&ds, &cfg).unwrap();
        if model.views[2].n_active() == 0 { removed += 1; }
    }
    println!("k_init={k_init} tau={tau} psi={psi} iters={max_iters}: median F1 {median:.3} (min {min:.3}) noise removed {removed}/10");
}

fn main() {
    run_suite(8, 50.0, 50.0, 3000);
    run_suite(12, 50.0, 50.0, 1500);
    run_suite(10, 20.0, 20.0, 2000);
}
