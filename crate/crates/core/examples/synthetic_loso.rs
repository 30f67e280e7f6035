//! Runs the whole pipeline on a generated corpus and prints the LOSO summary.
//!
//! Usage: synthetic_loso [model] [task] [epochs] [seed]

use std::time::Instant;

use breath_stress::augment::Normalization;
use breath_stress::eval::{run_loso, TrainConfig};
use breath_stress::labeling::{LabelsFile, Task};
use breath_stress::models::ModelVariant;
use breath_stress::pipeline::{augment_dir, load_dataset, spectrogram_dir, vas_records};
use breath_stress::spectrogram::SpectrogramConfig;
use breath_stress::synth::{generate_dataset, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let model: ModelVariant = args.first().map(|s| s.parse()).transpose()?.unwrap_or(ModelVariant::Cnn);
    let task = match args.get(1).map(String::as_str) {
        Some("three") => Task::ThreeClass,
        _ => Task::Binary,
    };
    let epochs: usize = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(300);
    let seed: u64 = args.get(3).map(|s| s.parse()).transpose()?.unwrap_or(0);

    let dir = std::env::temp_dir().join(format!("synthetic_loso_{}", std::process::id()));
    let (data, rvs, patches) = (dir.join("data"), dir.join("rvs"), dir.join("patches"));
    let t = Instant::now();
    generate_dataset(&SynthConfig { seed, ..SynthConfig::default() }, &data)?;
    spectrogram_dir(&data, &rvs, &SpectrogramConfig::default(), false)?;
    augment_dir(&rvs, &patches, Normalization::Session)?;
    let labels = LabelsFile::from_records(&vas_records(&data)?)?;
    let dataset = load_dataset(&patches, &labels, task, model.input_side())?;
    println!("{} patches prepared in {:.1?}", dataset.examples.len(), t.elapsed());

    let t = Instant::now();
    let config = TrainConfig { epochs, seed, ..TrainConfig::default() };
    let out = run_loso(&dataset, model, &config, false)?;
    for f in &out.report.folds {
        println!("fold {} {}: acc {:.4} f1 {:.4}", f.fold_id, f.test_participant, f.metrics.accuracy, f.metrics.macro_f1);
    }
    println!(
        "{model} {task:?}: mean acc {:.4} (sd {:.4}), macro-F1 {:.4} in {:.1?}",
        out.report.mean_accuracy,
        out.report.sd_accuracy,
        out.report.mean_macro_f1,
        t.elapsed()
    );
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
