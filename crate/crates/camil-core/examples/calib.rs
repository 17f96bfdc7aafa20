use camil_core::grid::{bag_similarity, Distance};
use camil_core::model::{ModelConfig, NystromConfig, Variant};
use camil_core::synth::{synth_dataset, SynthConfig};
use camil_core::train::{cross_validate, TrainConfig};

fn main() {
    let slides = 150;
    let folds = 2;
    for (shift, sigma) in [
        (0.9, 0.45),
        (0.9, 0.35),
        (0.9, 0.30),
        (1.1, 0.35),
        (1.1, 0.30),
    ] {
        let synth = SynthConfig {
            feature_shift: shift,
            noise_sigma: sigma,
            ..SynthConfig::default()
        };
        let bags = synth_dataset(&synth, slides, 0.5).unwrap();
        let masks: Vec<_> = bags.iter().map(|b| bag_similarity(b, Distance::L2).unwrap()).collect();
        let model = ModelConfig {
            d: synth.d,
            hdim: 64,
            classes: 2,
            nystrom: NystromConfig { landmarks: 16, ..NystromConfig::default() },
        };
        let tcfg = TrainConfig { folds, ..TrainConfig::default() };
        let camil = cross_validate(&bags, &masks, model, &tcfg).unwrap();
        let mp = cross_validate(&bags, &masks, model, &TrainConfig { variant: Variant::MeanPool, folds, ..TrainConfig::default() }).unwrap();
        println!(
            "shift {shift} sigma {sigma}: camil auc {:.3} acc {:.3} dice {:.3} spec {:.3} | meanpool auc {:.3}",
            camil.mean.auc, camil.mean.acc, camil.mean.dice, camil.mean.specificity, mp.mean.auc
        );
    }
}
