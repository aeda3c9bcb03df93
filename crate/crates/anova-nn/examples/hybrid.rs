// Scratch probe: Adam warm start (cached on disk) then L-BFGS with
// configurable history on Piston, sigmoid 3x32.
use anova_nn::data::{generate, Split, TestFunctionKind, TestFunctionSpec};
use anova_nn::multidual::ActivationKind;
use anova_nn::network::{MlpParams, NetworkSpec};
use anova_nn::training::{
    fit, lbfgs_step, loss_and_grad, rmse_on_split, LbfgsState, LossKind, TrainConfig,
};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let e1: usize = args[1].parse().unwrap(); // adam epochs (cache key only on first run)
    let iters: usize = args[2].parse().unwrap();
    let mem: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(100);
    let cache = format!("/tmp/run/hybrid_p1_{e1}.json");

    let ds = generate(&TestFunctionSpec::new(TestFunctionKind::Piston, 10_000), 0).unwrap();
    let spec = NetworkSpec::new(ds.k, vec![32, 32, 32], ActivationKind::Sigmoid);

    let p1: MlpParams = if let Ok(s) = std::fs::read_to_string(&cache) {
        serde_json::from_str(&s).unwrap()
    } else {
        let cfg1 = TrainConfig {
            learning_rate: 1e-2,
            lr_decay: 0.995,
            max_epochs: e1,
            patience: e1,
            seed: 0,
            ..TrainConfig::default()
        };
        let t0 = std::time::Instant::now();
        let (p, r) = fit(&ds, &spec, &cfg1).unwrap();
        println!(
            "phase1 adam: best {} test {:.4e} ({:.0}s)",
            r.best_epoch,
            r.test_rmse,
            t0.elapsed().as_secs_f64()
        );
        std::fs::write(&cache, serde_json::to_string(&p).unwrap()).unwrap();
        p
    };
    println!(
        "warm start: val {:.4e} test {:.4e}",
        rmse_on_split(&p1, &spec, &ds, Split::Val).unwrap(),
        rmse_on_split(&p1, &spec, &ds, Split::Test).unwrap()
    );
    if iters == 0 {
        return;
    }

    let idx = ds.indices(Split::Train);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for &i in &idx {
        x.extend_from_slice(ds.row(i));
        y.push(ds.y[i]);
    }
    let mut theta = p1.flatten();
    let mut state = LbfgsState::new(mem);
    let mut objective = |flat: &[f64]| {
        let p = MlpParams::from_flat(&spec, flat).unwrap();
        loss_and_grad(&p, &spec, &x, &y, LossKind::Squared)
    };
    let t0 = std::time::Instant::now();
    for it in 1..=iters {
        let step = lbfgs_step(&mut state, &mut theta, &mut objective).unwrap();
        if it % 10 == 0 || it == iters {
            let p = MlpParams::from_flat(&spec, &theta).unwrap();
            let val = rmse_on_split(&p, &spec, &ds, Split::Val).unwrap();
            let test = rmse_on_split(&p, &spec, &ds, Split::Test).unwrap();
            println!(
                "iter {it}: loss {:.4e} val {val:.4e} test {test:.4e} fallbacks {} ({:.0}s)",
                step.loss,
                state.fallbacks,
                t0.elapsed().as_secs_f64()
            );
            std::fs::write(
                format!("/tmp/run/hybrid_p2_m{mem}.json"),
                serde_json::to_string(&MlpParams::from_flat(&spec, &theta).unwrap()).unwrap(),
            )
            .unwrap();
        }
    }
}
