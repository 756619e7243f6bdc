// Temporary tuning probe; not part of the deliverable.
use sdcn_core::eval::{accuracy_table, Method, Prediction};
use sdcn_core::model::predict_label;
use sdcn_core::presets;
use sdcn_core::synth::{build_test_set, build_training_set, Dataset, Pol};
use sdcn_core::train::{train, TrainMode};
use sdcn_core::{ClassLabel, NetworkConfig};

fn eval_acc(params: &sdcn_core::NetworkParams, test: &Dataset) -> Vec<f64> {
    let preds: Vec<Prediction> = test
        .samples
        .iter()
        .map(|s| Prediction {
            truth: s.label,
            predicted: ClassLabel::from_index(predict_label(params, &s.noisy).unwrap()).unwrap(),
            lambda: s.lambda,
        })
        .collect();
    accuracy_table(Method::CnnOnly, "x", &preds)
        .iter()
        .map(|r| r.value)
        .collect()
}

fn main() {
    let combo = [Pol::HH, Pol::VV];
    let mut gen = presets::desk_gen(42);
    let train_ds = build_training_set(&gen)
        .unwrap()
        .select_channels(&combo)
        .unwrap();
    gen.test_angles = 30;
    let test = build_test_set(&gen)
        .unwrap()
        .select_channels(&combo)
        .unwrap();

    for (filters, fc1, fc2, lr, epochs, mode) in [
        (24usize, 96usize, 48usize, 1e-3, 40usize, TrainMode::CnnOnly),
        (24, 96, 48, 1e-3, 40, TrainMode::Sdcn),
    ] {
        let net = NetworkConfig {
            d1: 4,
            d2: 2,
            channels: 2,
            chip_h: 16,
            chip_w: 16,
            filters,
            fc1,
            fc2,
            classes: 2,
            gamma: 1.0,
        };
        let mut tc = presets::desk_train(1);
        tc.epochs = epochs;
        tc.learning_rate = lr;
        let t0 = std::time::Instant::now();
        let (params, hist) = train(&train_ds.train_items(), &net, &tc, mode).unwrap();
        let accs = eval_acc(&params, &test);
        println!(
            "f{} {:?} lr {:.0e} ep{}: train {:.3} | test {} | {:?}",
            filters,
            mode,
            lr,
            epochs,
            hist.last().unwrap().train_acc,
            accs.iter().map(|a| format!("{:.3}", a)).collect::<Vec<_>>().join(" "),
            t0.elapsed()
        );
    }
}
