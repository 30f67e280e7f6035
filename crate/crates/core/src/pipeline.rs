//! Directory-level pipeline stages shared by the command-line front end and
//! the end-to-end tests: corpus -> spectrograms -> patches -> labels -> dataset.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_session, resize_bicubic, Normalization};
use crate::error::{Error, Result};
use crate::eval::{argmax, Dataset, LabeledExample};
use crate::grid::Grid;
use crate::labeling::{LabelsFile, StressLabel, Task, VasRecord};
use crate::models::NetworkModel;
use crate::signal::{bandpass, load_signal, SessionManifest};
use crate::spectrogram::{compute_rvs, export_pgm, normalize_session, read_rvs, write_rvs, RvsMatrix, SpectrogramConfig};

pub const INDEX_FILE: &str = "index.json";

fn sorted_files(dir: &Path, extension: &str) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == extension) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// A signal CSV with its manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionFiles {
    pub csv: PathBuf,
    pub manifest: SessionManifest,
}

/// Every `<stem>.json` manifest that has a sibling `<stem>.csv`, by file name.
pub fn discover_sessions(corpus_dir: &Path) -> Result<Vec<SessionFiles>> {
    let mut sessions = Vec::new();
    for json in sorted_files(corpus_dir, "json")? {
        let csv = json.with_extension("csv");
        if !csv.is_file() {
            continue;
        }
        sessions.push(SessionFiles { csv, manifest: SessionManifest::read(&json)? });
    }
    if sessions.is_empty() {
        return Err(Error::Config(format!(
            "no session manifests with matching CSV files in {}",
            corpus_dir.display()
        )));
    }
    Ok(sessions)
}

fn session_stem(rvs: &RvsMatrix) -> String {
    format!("{}_{}", rvs.participant_id, rvs.session_id)
}

/// Loads, band-passes and transforms one session.
pub fn session_rvs(files: &SessionFiles, config: &SpectrogramConfig) -> Result<RvsMatrix> {
    let signal = load_signal(&files.csv, &files.manifest)?;
    compute_rvs(&bandpass(&signal, &config.band)?, config)
}

/// Writes `<participant>_<session>.rvs` (and a normalized `.pgm` when asked)
/// for every session in the corpus.
pub fn spectrogram_dir(corpus_dir: &Path, out_dir: &Path, config: &SpectrogramConfig, pgm: bool) -> Result<Vec<PathBuf>> {
    let sessions = discover_sessions(corpus_dir)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for files in &sessions {
        let rvs = session_rvs(files, config)?;
        let path = out_dir.join(format!("{}.rvs", session_stem(&rvs)));
        write_rvs(&rvs, &path)?;
        if pgm {
            export_pgm(&normalize_session(&rvs)?, &path.with_extension("pgm"))?;
        }
        log::info!("{}: {} columns", path.display(), rvs.cols());
        written.push(path);
    }
    Ok(written)
}

/// One patch: columns `origin_col .. origin_col + m` of a stored session file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchEntry {
    pub participant_id: String,
    pub session_id: String,
    pub file: String,
    pub origin_col: usize,
    pub label: Option<StressLabel>,
}

/// Patch dataset description. Each session is stored once as an `.rvs` file;
/// patches reference it by column offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchIndex {
    pub m: usize,
    pub normalization: Normalization,
    pub patches: Vec<PatchEntry>,
}

impl PatchIndex {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(INDEX_FILE);
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Attaches each session's label to its patches.
    pub fn annotate(&mut self, labels: &LabelsFile) -> Result<()> {
        let map = labels.label_map();
        for p in &mut self.patches {
            let key = (p.participant_id.clone(), p.session_id.clone());
            let label = map.get(&key).ok_or_else(|| {
                Error::Labeling(format!("no label for session {}/{}", p.participant_id, p.session_id))
            })?;
            p.label = Some(*label);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSummary {
    pub index: PatchIndex,
    /// Stems of sessions too short to crop.
    pub skipped: Vec<String>,
}

/// Crops every `.rvs` session in `rvs_dir`. Session-normalized spectrograms
/// are stored normalized; with per-patch normalization the raw values are
/// kept and scaled when patches are loaded. Short sessions are skipped with a
/// warning.
pub fn augment_dir(rvs_dir: &Path, out_dir: &Path, normalization: Normalization) -> Result<AugmentSummary> {
    let files = sorted_files(rvs_dir, "rvs")?;
    if files.is_empty() {
        return Err(Error::Config(format!("no .rvs files in {}", rvs_dir.display())));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut m = None;
    let mut patches = Vec::new();
    let mut skipped = Vec::new();
    for path in &files {
        let rvs = read_rvs(path)?;
        let stem = session_stem(&rvs);
        if *m.get_or_insert(rvs.bins()) != rvs.bins() {
            return Err(Error::format(path, "bin count differs from other sessions"));
        }
        if rvs.cols() < rvs.bins() {
            log::warn!(
                "skipping {stem}: {} columns, at least {} needed",
                rvs.cols(),
                rvs.bins()
            );
            skipped.push(stem);
            continue;
        }
        let stored = match normalization {
            Normalization::Session => normalize_session(&rvs)?,
            Normalization::Patch => rvs,
        };
        let file = format!("{stem}.rvs");
        write_rvs(&stored, &out_dir.join(&file))?;
        for origin_col in 0..=stored.cols() - stored.bins() {
            patches.push(PatchEntry {
                participant_id: stored.participant_id.clone(),
                session_id: stored.session_id.clone(),
                file: file.clone(),
                origin_col,
                label: None,
            });
        }
    }
    let index = PatchIndex {
        m: m.expect("at least one file"),
        normalization,
        patches,
    };
    index.write(out_dir)?;
    Ok(AugmentSummary { index, skipped })
}

/// One VAS record per session manifest in the corpus.
pub fn vas_records(corpus_dir: &Path) -> Result<Vec<VasRecord>> {
    discover_sessions(corpus_dir)?
        .into_iter()
        .map(|s| VasRecord::new(s.manifest.participant_id, s.manifest.session_id, s.manifest.vas_score_cm))
        .collect()
}

/// Scales a patch to `[0, 1]` by its own maximum.
fn normalize_patch(values: Grid) -> Result<Grid> {
    let max = values.max();
    if !(max > 0.0) {
        return Err(Error::DegenerateSession);
    }
    Ok(values.map(|v| (v / max).clamp(0.0, 1.0)))
}

/// Network input for a patch: bicubic resize to `side` unless already that
/// size, flattened row-major.
pub fn patch_input(values: &Grid, side: usize) -> Vec<f64> {
    if values.rows() == side && values.cols() == side {
        values.as_slice().to_vec()
    } else {
        resize_bicubic(values, side).into_vec()
    }
}

/// Cuts, scales and resizes every indexed patch, labelled from `labels`, into
/// network inputs of `side x side`.
pub fn load_dataset(patch_dir: &Path, labels: &LabelsFile, task: Task, side: usize) -> Result<Dataset> {
    let index = PatchIndex::read(patch_dir)?;
    let label_map = labels.label_map();

    let mut sessions: BTreeMap<&str, RvsMatrix> = BTreeMap::new();
    for p in &index.patches {
        if !sessions.contains_key(p.file.as_str()) {
            let rvs = read_rvs(&patch_dir.join(&p.file))?;
            if rvs.bins() != index.m {
                return Err(Error::format(patch_dir.join(&p.file), "bin count differs from index"));
            }
            sessions.insert(&p.file, rvs);
        }
    }

    let examples = index
        .patches
        .par_iter()
        .map(|p| {
            let key = (p.participant_id.clone(), p.session_id.clone());
            let label = label_map.get(&key).ok_or_else(|| {
                Error::Labeling(format!("no label for session {}/{}", p.participant_id, p.session_id))
            })?;
            let rvs = &sessions[p.file.as_str()];
            if p.origin_col + index.m > rvs.cols() {
                return Err(Error::Shape(format!("patch at column {} exceeds {}", p.origin_col, p.file)));
            }
            let mut values = rvs.values.column_slice(p.origin_col, index.m);
            if index.normalization == Normalization::Patch {
                values = normalize_patch(values)?;
            }
            Ok(LabeledExample {
                participant_id: p.participant_id.clone(),
                session_id: p.session_id.clone(),
                origin_col: p.origin_col,
                class: label.class_index(task),
                input: patch_input(&values, side),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { task, input_side: side, examples })
}

/// Output of the classifier for one patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchPrediction {
    pub origin_col: usize,
    pub class: usize,
    pub scores: Vec<f64>,
}

/// Per-patch predictions for a spectrogram and the session-level vote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPrediction {
    pub task: Task,
    pub class: usize,
    /// Patch count per class.
    pub votes: Vec<usize>,
    pub patches: Vec<PatchPrediction>,
}

/// Most frequent class. Ties go to the higher index, i.e. the higher stress
/// level, so an ambiguous session raises rather than suppresses an alarm.
pub fn majority_vote(classes: &[usize], n_classes: usize) -> Option<(usize, Vec<usize>)> {
    if classes.is_empty() {
        return None;
    }
    let mut votes = vec![0; n_classes];
    for &c in classes {
        votes[c] += 1;
    }
    let best = *votes.iter().max()?;
    let winner = votes.iter().rposition(|&v| v == best)?;
    Some((winner, votes))
}

/// Classifies every `m`-column crop of `rvs` (a single patch when it is
/// exactly `m` columns wide) and takes the majority vote.
pub fn predict_rvs(model: &NetworkModel, rvs: &RvsMatrix, normalization: Normalization) -> Result<SessionPrediction> {
    let side = model.arch.input_side;
    let task = model.task();
    let patches = augment_session(rvs, normalization)?;
    let predictions = patches
        .par_iter()
        .map(|p| {
            let scores = model.network.forward(&patch_input(&p.values, side))?;
            Ok(PatchPrediction { origin_col: p.origin_col, class: argmax(&scores), scores })
        })
        .collect::<Result<Vec<_>>>()?;
    let classes: Vec<usize> = predictions.iter().map(|p| p.class).collect();
    let (class, votes) = majority_vote(&classes, task.n_classes()).expect("sliding crop yields at least one patch");
    Ok(SessionPrediction { task, class, votes, patches: predictions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::ThreeClass;
    use crate::synth::{generate_dataset, SynthConfig};

    fn corpus(dir: &Path) -> SynthConfig {
        let cfg = SynthConfig {
            n_participants: 2,
            sessions_per_participant: 3,
            duration_s: 141.0,
            seed: 3,
            ..SynthConfig::default()
        };
        generate_dataset(&cfg, dir).unwrap();
        cfg
    }

    #[test]
    fn stages_chain_and_count_patches() {
        let tmp = tempfile::tempdir().unwrap();
        let (data, rvs_dir, patch_dir) = (tmp.path().join("data"), tmp.path().join("rvs"), tmp.path().join("patches"));
        corpus(&data);

        let written = spectrogram_dir(&data, &rvs_dir, &SpectrogramConfig::default(), true).unwrap();
        assert_eq!(written.len(), 6);
        assert!(rvs_dir.join("P01_S1.pgm").exists());
        assert_eq!(read_rvs(&written[0]).unwrap().cols(), 122);

        let summary = augment_dir(&rvs_dir, &patch_dir, Normalization::Session).unwrap();
        assert!(summary.skipped.is_empty());
        assert_eq!(summary.index.patches.len(), 6 * 3);
        assert_eq!(PatchIndex::read(&patch_dir).unwrap(), summary.index);

        let labels = LabelsFile::from_records(&vas_records(&data).unwrap()).unwrap();
        let classes: Vec<ThreeClass> = labels.sessions.iter().map(|s| s.three_class).collect();
        assert_eq!(classes, [ThreeClass::None, ThreeClass::Low, ThreeClass::High].repeat(2));

        let ds = load_dataset(&patch_dir, &labels, Task::Binary, 28).unwrap();
        assert_eq!(ds.examples.len(), 18);
        assert_eq!(ds.class_counts(), vec![6, 12]);
        assert!(ds.examples.iter().all(|e| e.input.len() == 784));

        let full = load_dataset(&patch_dir, &labels, Task::ThreeClass, 120).unwrap();
        let rvs = read_rvs(&rvs_dir.join("P02_S3.rvs")).unwrap();
        let direct = augment_session(&rvs, Normalization::Session).unwrap();
        let from_index: Vec<&LabeledExample> =
            full.examples.iter().filter(|e| e.participant_id == "P02" && e.session_id == "S3").collect();
        assert_eq!(from_index.len(), direct.len());
        for (e, p) in from_index.iter().zip(&direct) {
            assert_eq!(e.origin_col, p.origin_col);
            assert_eq!(e.input, p.values.as_slice());
            assert_eq!(e.class, 2);
        }
    }

    #[test]
    fn short_sessions_are_skipped() {
        let tmp = tempfile::tempdir().unwrap();
        let (data, rvs_dir) = (tmp.path().join("data"), tmp.path().join("rvs"));
        corpus(&data);
        spectrogram_dir(&data, &rvs_dir, &SpectrogramConfig::default(), false).unwrap();
        let mut rvs = read_rvs(&rvs_dir.join("P01_S1.rvs")).unwrap();
        rvs.values = rvs.values.column_slice(0, 119);
        write_rvs(&rvs, &rvs_dir.join("P01_S1.rvs")).unwrap();

        let summary = augment_dir(&rvs_dir, &tmp.path().join("patches"), Normalization::Patch).unwrap();
        assert_eq!(summary.skipped, vec!["P01_S1".to_string()]);
        assert_eq!(summary.index.patches.len(), 5 * 3);
    }

    #[test]
    fn missing_label_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        let (data, rvs_dir, patch_dir) = (tmp.path().join("data"), tmp.path().join("rvs"), tmp.path().join("patches"));
        corpus(&data);
        spectrogram_dir(&data, &rvs_dir, &SpectrogramConfig::default(), false).unwrap();
        let mut index = augment_dir(&rvs_dir, &patch_dir, Normalization::Session).unwrap().index;
        let mut labels = LabelsFile::from_records(&vas_records(&data).unwrap()).unwrap();
        index.annotate(&labels).unwrap();
        assert!(index.patches.iter().all(|p| p.label.is_some()));
        labels.sessions.pop();
        assert!(index.annotate(&labels).is_err());
        assert!(load_dataset(&patch_dir, &labels, Task::Binary, 28).is_err());
    }
    #[test]
    fn vote_ties_go_to_higher_class() {
        assert_eq!(majority_vote(&[0, 0, 1], 2), Some((0, vec![2, 1])));
        assert_eq!(majority_vote(&[0, 1], 2), Some((1, vec![1, 1])));
        assert_eq!(majority_vote(&[2, 0, 1, 0, 2], 3), Some((2, vec![2, 1, 2])));
        assert_eq!(majority_vote(&[], 3), None);
    }

    #[test]
    fn predicts_patch_and_session() {
        use crate::grid::Grid;
        use crate::models::{ModelVariant, NetworkModel};
        use crate::spectrogram::SpectrogramConfig;

        let model = NetworkModel::build(ModelVariant::Nn1.arch(Task::ThreeClass), 4).unwrap();
        let rvs = |cols: usize| RvsMatrix {
            values: Grid::from_fn(120, cols, |r, c| ((r * 7 + c * 3) % 11) as f64 + 1.0),
            config: SpectrogramConfig::default(),
            fs_hz: 8.0,
            t_end_first_s: 20,
            participant_id: "P01".into(),
            session_id: "S1".into(),
        };

        let single = predict_rvs(&model, &rvs(120), Normalization::Session).unwrap();
        assert_eq!(single.patches.len(), 1);
        assert_eq!(single.class, single.patches[0].class);
        assert_eq!(single.patches[0].scores.len(), 3);

        let session = predict_rvs(&model, &rvs(125), Normalization::Patch).unwrap();
        assert_eq!(session.patches.len(), 6);
        assert_eq!(session.votes.iter().sum::<usize>(), 6);
        let classes: Vec<usize> = session.patches.iter().map(|p| p.class).collect();
        assert_eq!(Some((session.class, session.votes.clone())), majority_vote(&classes, 3));

        assert!(matches!(
            predict_rvs(&model, &rvs(100), Normalization::Session),
            Err(Error::SessionTooShort { .. })
        ));
    }
}
