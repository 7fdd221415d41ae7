use aridprob_core::basis::{encode_rasters, BandwidthRule, BasisConfig};
use aridprob_core::evaluation::{argmax_classify, evaluate};
use aridprob_core::grid::{synth_generate, GridSpec, SynthConfig};
use aridprob_core::ktc::label_grid;
use aridprob_core::nn::{accuracy, init, train, AdamHyper, AdamState, NetworkConfig, TrainConfig};
use aridprob_core::pipeline::{class_rasters, predict_cube};

#[test]
fn predictions_are_consistent_with_training_time_scores() {
    let spec = GridSpec::new((0.0, 12.0), (0.0, 12.0), 1.0, (1960, 1965)).unwrap();
    let grid = synth_generate(&SynthConfig {
        spec: spec.clone(),
        seed: 3,
        precip_gradient: 1.5,
        precip_base: 16.0,
        noise_sd: 1.0,
        temp_base: 30.0,
        temp_lapse: 0.25,
        seasonal_amp: 0.0,
    })
    .unwrap();
    let labels = label_grid(&grid, 1960..=1965).unwrap();
    let basis = BasisConfig::build(&spec, 5, BandwidthRule::MaxDistance, 5, None).unwrap();
    let (data, _) = encode_rasters(&labels[..4], &basis).unwrap();
    let mut net = init(&NetworkConfig::two_hidden(basis.n_features(), 9)).unwrap();
    let mut state = AdamState::new(&net, AdamHyper::default());
    let tcfg = TrainConfig { epochs: 15, batch_size: 32, early_stop_patience: None, ..Default::default() };
    let report = train(&mut net, &mut state, &data, &tcfg, 0).unwrap();
    assert!(report.history[9].train_loss < report.history[0].train_loss);

    let cube = predict_cube(&net, &basis, &labels[..4]).unwrap();
    let classes = class_rasters(&cube);
    for (plane_year, raster) in spec.years().zip(&classes) {
        let plane = cube.year_plane(plane_year).unwrap();
        for (p, c) in plane.iter().zip(&raster.cells) {
            let p = p.unwrap();
            assert!((p.sum() - 1.0).abs() <= 1e-12);
            assert_eq!(argmax_classify(&p), c.unwrap().class);
        }
    }
    let eval = evaluate(&labels[..4], &classes, None).unwrap();
    let train_acc = accuracy(&net, &data).unwrap();
    assert!((eval.overall_accuracy.unwrap() - train_acc).abs() < 1e-12);
}
