use tidygrad::data::{synth_dataset, BatchIterator};
use tidygrad::nn::{evaluate_accuracy, train_step};
use tidygrad::{build_model, tidy, Backend, Layer, ModelConfig, MomentumSgd};

#[test]
fn mlp_fits_synthetic_data_within_five_epochs() {
    let ds = synth_dataset(1000, 10, [1, 8, 8], 21).unwrap();
    let model = build_model(&ModelConfig::mlp([1, 8, 8], 32, 10, 3)).unwrap();
    let opt = MomentumSgd::new(model.parameters(), 0.05, 0.9).unwrap();
    let images = tidygrad::data::normalize(ds.images()).unwrap();
    let backend = Backend::current();

    let mut it = BatchIterator::new(&ds, 32, 4).unwrap();
    let mut accuracy = 0.0;
    let mut baseline = None;
    for epoch in 0..5 {
        while let Some((x, y)) = it.next_batch().unwrap() {
            tidy(|| train_step(&model, &opt, &x, &y)).unwrap();
        }
        accuracy = tidy(|| evaluate_accuracy(&model, &images, ds.labels())).unwrap();
        let live = backend.live_buffers();
        assert_eq!(*baseline.get_or_insert(live), live, "epoch {epoch} leaked buffers");
        if accuracy >= 0.95 {
            break;
        }
    }
    assert!(accuracy >= 0.95, "train accuracy {accuracy}");
}

#[test]
fn training_is_bit_reproducible() {
    let run = || {
        let ds = synth_dataset(60, 3, [1, 4, 4], 2).unwrap();
        let model = build_model(&ModelConfig::small_cnn([1, 4, 4], [2, 3], 3, 8)).unwrap();
        let opt = MomentumSgd::new(model.parameters(), 0.1, 0.9).unwrap();
        let mut it = BatchIterator::new(&ds, 10, 1).unwrap();
        let mut losses = Vec::new();
        while let Some((x, y)) = it.next_batch().unwrap() {
            losses.push(train_step(&model, &opt, &x, &y).unwrap().to_bits());
        }
        let params: Vec<Vec<u32>> = model
            .parameters()
            .iter()
            .map(|(_, p)| p.data().to_vec::<f32>().unwrap().into_iter().map(f32::to_bits).collect())
            .collect();
        (losses, params)
    };
    assert_eq!(run(), run());
}
