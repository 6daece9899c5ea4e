use causent::causality::IndicatorMatrix;
use causent::dynamics::{simulate, SimOptions};
use causent::learning::{learn, LearnConfig};

#[test]
fn dbg_t150_long() {
    let truth = causent::dynamics::lorenz84_truth().unwrap();
    let opts = SimOptions {
        horizon: 150.0,
        dt: 1e-3,
        record_every: 1,
        burn_in: 10.0,
        seed: 29,
        initial: vec![1.0, 0.5, -0.5],
    };
    let data = simulate(&truth, &opts).unwrap();
    let observed = data.select(&["y", "z"]).unwrap();
    let guess = causent::dynamics::lorenz84_guess().unwrap();
    let reference = IndicatorMatrix::from_model(&truth).with_forced_constants(truth.library());
    let config = LearnConfig {
        max_iterations: 120,
        seed: 5,
        reference: Some(reference),
        ..LearnConfig::default()
    };
    let lib = truth.library().clone();
    let (model, trace) = learn(&observed, &lib, &guess, &config).unwrap();
    let first_zero = trace
        .records
        .iter()
        .position(|r| r.frobenius == Some(0.0));
    eprintln!("first frob=0 at {:?}, stop {:?}", first_zero.map(|i| i + 1), trace.stop);
    for (it, rec) in trace.records.iter().enumerate().filter(|(i, _)| i % 20 == 19 || *i < 3) {
        eprintln!("it {:3} frob {:?} ", it + 1, rec.frobenius);
    }
    for r in 0..3 {
        for &(m, t) in truth.entries(r) {
            let e = model.coef(r, m);
            eprintln!(
                "row {r} {:>6}: truth {:8.4}  est {:8.4}",
                lib.term(r, m).label(),
                t,
                e.unwrap_or(f64::NAN)
            );
        }
    }
    eprintln!("sigma: {:?}", model.noise());
}
