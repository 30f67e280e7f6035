//! Ground-truth labels from self-reported stress scores: per-participant
//! min-max scaling, exact 1-D k-means over the pooled scores, and mapping of
//! clusters to stress classes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VasRecord {
    pub participant_id: String,
    pub session_id: String,
    pub raw_score_cm: f64,
    pub normalized: Option<f64>,
    /// Set when all of the participant's scores are equal.
    pub degenerate: bool,
}

impl VasRecord {
    pub fn new(participant_id: impl Into<String>, session_id: impl Into<String>, raw_score_cm: f64) -> Result<Self> {
        if !(0.0..=10.0).contains(&raw_score_cm) {
            return Err(Error::OutOfRange(format!("VAS score {raw_score_cm} outside [0, 10]")));
        }
        Ok(Self {
            participant_id: participant_id.into(),
            session_id: session_id.into(),
            raw_score_cm,
            normalized: None,
            degenerate: false,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThreeClass {
    None,
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binary {
    NoStress,
    Stress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StressLabel {
    pub three_class: ThreeClass,
    pub binary: Binary,
}

impl StressLabel {
    pub fn from_three_class(three_class: ThreeClass) -> Self {
        let binary = match three_class {
            ThreeClass::None => Binary::NoStress,
            ThreeClass::Low | ThreeClass::High => Binary::Stress,
        };
        Self { three_class, binary }
    }

    /// Zero-based class index for the given task.
    pub fn class_index(&self, task: Task) -> usize {
        match task {
            Task::Binary => self.binary as usize,
            Task::ThreeClass => self.three_class as usize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Binary,
    ThreeClass,
}

impl Task {
    pub fn n_classes(self) -> usize {
        match self {
            Task::Binary => 2,
            Task::ThreeClass => 3,
        }
    }

    pub fn from_n_classes(n: usize) -> Result<Self> {
        match n {
            2 => Ok(Task::Binary),
            3 => Ok(Task::ThreeClass),
            _ => Err(Error::Config(format!("unsupported class count {n}"))),
        }
    }

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Task::Binary => &["no_stress", "stress"],
            Task::ThreeClass => &["none", "low", "high"],
        }
    }
}

/// Min-max scales one participant's scores. Equal scores map to 0.5 and are
/// flagged degenerate.
pub fn normalize_scores(records: &[VasRecord]) -> Result<Vec<VasRecord>> {
    if records.len() < 2 {
        return Err(Error::Labeling(format!(
            "need at least 2 scores per participant, got {}",
            records.len()
        )));
    }
    let pid = &records[0].participant_id;
    if records.iter().any(|r| &r.participant_id != pid) {
        return Err(Error::Labeling("records span several participants".into()));
    }
    let min = records.iter().map(|r| r.raw_score_cm).fold(f64::INFINITY, f64::min);
    let max = records.iter().map(|r| r.raw_score_cm).fold(f64::NEG_INFINITY, f64::max);
    let degenerate = max == min;
    Ok(records
        .iter()
        .map(|r| VasRecord {
            normalized: Some(if degenerate { 0.5 } else { (r.raw_score_cm - min) / (max - min) }),
            degenerate,
            ..r.clone()
        })
        .collect())
}

/// Normalizes every participant separately, keeping input order.
pub fn normalize_all(records: &[VasRecord]) -> Result<Vec<VasRecord>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(&r.participant_id).or_default().push(i);
    }
    let mut out = records.to_vec();
    for (pid, idx) in groups {
        let subset: Vec<VasRecord> = idx.iter().map(|&i| records[i].clone()).collect();
        let normalized = normalize_scores(&subset)?;
        if normalized[0].degenerate {
            log::warn!("participant {pid}: all scores equal, normalized to 0.5");
        }
        for (i, r) in idx.into_iter().zip(normalized) {
            out[i] = r;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Cluster id per input point (input order); ids ascend with center.
    pub assignment: Vec<usize>,
    pub centers: Vec<f64>,
    /// Within-cluster sum of squares of the optimum.
    pub wcss: f64,
}

/// Globally optimal 1-D k-means by dynamic programming over the sorted
/// points. Optimal clusters are contiguous in sorted order; among equal-cost
/// partitions the one with the smaller left cluster wins.
pub fn kmeans_1d(points: &[f64], k: usize) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::Labeling("k must be positive".into()));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::Labeling("non-finite point".into()));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].total_cmp(&points[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| points[i]).collect();
    let distinct = 1 + sorted.windows(2).filter(|w| w[0] != w[1]).count();
    if sorted.is_empty() || distinct < k {
        return Err(Error::Labeling(format!(
            "need at least {k} distinct scores, got {}",
            if sorted.is_empty() { 0 } else { distinct }
        )));
    }
    let n = sorted.len();

    // cost[i][j]: sum of squared deviations of sorted[i..=j], built by
    // Welford updates.
    let mut cost = vec![vec![0.0; n]; n];
    for i in 0..n {
        let (mut mean, mut m2) = (0.0, 0.0);
        for j in i..n {
            let count = (j - i + 1) as f64;
            let delta = sorted[j] - mean;
            mean += delta / count;
            m2 += delta * (sorted[j] - mean);
            cost[i][j] = m2;
        }
    }

    // best[c][j]: optimal cost of sorted[0..=j] in c + 1 clusters;
    // start[c][j]: first index of the last cluster in that optimum.
    let mut best = vec![vec![f64::INFINITY; n]; k];
    let mut start = vec![vec![0usize; n]; k];
    best[0] = cost[0].clone();
    for c in 1..k {
        for j in c..n {
            for i in c..=j {
                let candidate = best[c - 1][i - 1] + cost[i][j];
                if candidate < best[c][j] {
                    best[c][j] = candidate;
                    start[c][j] = i;
                }
            }
        }
    }

    let mut bounds = vec![(0usize, 0usize); k];
    let mut end = n - 1;
    for c in (0..k).rev() {
        let s = if c == 0 { 0 } else { start[c][end] };
        bounds[c] = (s, end);
        if c > 0 {
            end = s - 1;
        }
    }

    let mut assignment = vec![0usize; n];
    let mut centers = Vec::with_capacity(k);
    for (cluster, &(s, e)) in bounds.iter().enumerate() {
        let members = &sorted[s..=e];
        centers.push(members.iter().sum::<f64>() / members.len() as f64);
        for &orig in &order[s..=e] {
            assignment[orig] = cluster;
        }
    }
    Ok(KMeansResult {
        assignment,
        centers,
        wcss: best[k - 1][n - 1],
    })
}

/// Maps the three clusters (ascending center) to None/Low/High per session.
pub fn assign_labels(
    records: &[VasRecord],
    clusters: &KMeansResult,
) -> Result<BTreeMap<(String, String), StressLabel>> {
    if clusters.centers.len() != 3 {
        return Err(Error::Labeling(format!(
            "expected 3 clusters, got {}",
            clusters.centers.len()
        )));
    }
    if records.len() != clusters.assignment.len() {
        return Err(Error::Labeling(format!(
            "{} records but {} cluster assignments",
            records.len(),
            clusters.assignment.len()
        )));
    }
    let classes = [ThreeClass::None, ThreeClass::Low, ThreeClass::High];
    let mut labels = BTreeMap::new();
    for (r, &cluster) in records.iter().zip(&clusters.assignment) {
        let key = (r.participant_id.clone(), r.session_id.clone());
        if labels
            .insert(key, StressLabel::from_three_class(classes[cluster]))
            .is_some()
        {
            return Err(Error::Labeling(format!(
                "duplicate record for {}/{}",
                r.participant_id, r.session_id
            )));
        }
    }
    Ok(labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLabel {
    pub participant_id: String,
    pub session_id: String,
    pub normalized: f64,
    pub three_class: ThreeClass,
    pub binary: Binary,
}

/// On-disk label set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelsFile {
    pub centers: Vec<f64>,
    pub sessions: Vec<SessionLabel>,
}

impl LabelsFile {
    /// Full labeling procedure over all sessions of all participants.
    pub fn from_records(records: &[VasRecord]) -> Result<Self> {
        let normalized = normalize_all(records)?;
        let points: Vec<f64> = normalized
            .iter()
            .map(|r| r.normalized.expect("normalized above"))
            .collect();
        let clusters = kmeans_1d(&points, 3)?;
        let labels = assign_labels(&normalized, &clusters)?;
        let sessions = normalized
            .iter()
            .map(|r| {
                let label = labels[&(r.participant_id.clone(), r.session_id.clone())];
                SessionLabel {
                    participant_id: r.participant_id.clone(),
                    session_id: r.session_id.clone(),
                    normalized: r.normalized.expect("normalized above"),
                    three_class: label.three_class,
                    binary: label.binary,
                }
            })
            .collect();
        Ok(Self {
            centers: clusters.centers,
            sessions,
        })
    }

    pub fn label_map(&self) -> BTreeMap<(String, String), StressLabel> {
        self.sessions
            .iter()
            .map(|s| {
                (
                    (s.participant_id.clone(), s.session_id.clone()),
                    StressLabel::from_three_class(s.three_class),
                )
            })
            .collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: Self =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        for s in &file.sessions {
            if StressLabel::from_three_class(s.three_class).binary != s.binary {
                return Err(Error::format(
                    path,
                    format!("{}/{}: binary label contradicts three-class label", s.participant_id, s.session_id),
                ));
            }
        }
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Xoshiro256StarStar;

    fn recs(pid: &str, scores: &[f64]) -> Vec<VasRecord> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &s)| VasRecord::new(pid, format!("S{}", i + 1), s).unwrap())
            .collect()
    }

    fn normalized(records: &[VasRecord]) -> Vec<f64> {
        records.iter().map(|r| r.normalized.unwrap()).collect()
    }

    #[test]
    fn min_max_examples() {
        let out = normalize_scores(&recs("P1", &[2.0, 5.0, 8.0])).unwrap();
        assert_eq!(normalized(&out), vec![0.0, 0.5, 1.0]);
        assert!(!out[0].degenerate);

        let out = normalize_scores(&recs("P1", &[3.0; 4])).unwrap();
        assert_eq!(normalized(&out), vec![0.5; 4]);
        assert!(out.iter().all(|r| r.degenerate));

        let out = normalize_scores(&recs("P1", &[0.0, 10.0])).unwrap();
        assert_eq!(normalized(&out), vec![0.0, 1.0]);

        assert!(normalize_scores(&recs("P1", &[4.0])).is_err());
        assert!(VasRecord::new("P1", "S1", 10.5).is_err());
    }

    #[test]
    fn normalize_all_groups_by_participant() {
        let mut all = recs("P2", &[1.0, 3.0]);
        all.extend(recs("P1", &[4.0, 6.0, 8.0]));
        let out = normalize_all(&all).unwrap();
        assert_eq!(normalized(&out), vec![0.0, 1.0, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn kmeans_examples() {
        let pts = [0.0, 0.05, 0.5, 0.55, 0.95, 1.0];
        let r = kmeans_1d(&pts, 3).unwrap();
        assert_eq!(r.assignment, vec![0, 0, 1, 1, 2, 2]);
        assert!((r.centers[1] - 0.525).abs() < 1e-15);

        let pts = [0.9, 0.1, 0.5, 0.1, 0.9, 0.5, 0.5];
        let r = kmeans_1d(&pts, 3).unwrap();
        assert_eq!(r.assignment, vec![2, 0, 1, 0, 2, 1, 1]);
        assert_eq!(r.wcss, 0.0);

        assert!(kmeans_1d(&[0.2, 0.7, 0.2], 3).is_err());
    }

    /// Exhaustive search over all contiguous 3-partitions of sorted points.
    fn brute_force_wcss(sorted: &[f64]) -> f64 {
        let sse = |s: &[f64]| {
            let mean = s.iter().sum::<f64>() / s.len() as f64;
            s.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
        };
        let n = sorted.len();
        let mut best = f64::INFINITY;
        for a in 1..n - 1 {
            for b in a + 1..n {
                best = best.min(sse(&sorted[..a]) + sse(&sorted[a..b]) + sse(&sorted[b..]));
            }
        }
        best
    }

    #[test]
    fn dp_matches_brute_force_cost() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(77);
        for _ in 0..200 {
            let n = 3 + rng.below(10) as usize;
            let pts: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
            let r = kmeans_1d(&pts, 3).unwrap();
            let mut sorted = pts.clone();
            sorted.sort_by(f64::total_cmp);
            assert!((r.wcss - brute_force_wcss(&sorted)).abs() < 1e-12);
        }
    }

    #[test]
    fn assignments_monotone_and_affine_invariant() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(78);
        for _ in 0..100 {
            let pts: Vec<f64> = (0..20).map(|_| rng.next_f64()).collect();
            let r = kmeans_1d(&pts, 3).unwrap();
            let mut idx: Vec<usize> = (0..20).collect();
            idx.sort_by(|&a, &b| pts[a].total_cmp(&pts[b]));
            assert!(idx.windows(2).all(|w| r.assignment[w[0]] <= r.assignment[w[1]]));

            let scaled: Vec<f64> = pts.iter().map(|x| 3.5 * x - 1.25).collect();
            assert_eq!(kmeans_1d(&scaled, 3).unwrap().assignment, r.assignment);
        }
    }

    #[test]
    fn labels_follow_clusters() {
        let mut records = recs("P1", &[1.0, 5.0, 9.0]);
        records.extend(recs("P2", &[0.0, 4.0, 8.0]));
        let norm = normalize_all(&records).unwrap();
        let points: Vec<f64> = normalized(&norm);
        let clusters = kmeans_1d(&points, 3).unwrap();
        let labels = assign_labels(&norm, &clusters).unwrap();
        let get = |p: &str, s: &str| labels[&(p.to_string(), s.to_string())];
        assert_eq!(get("P1", "S1"), StressLabel { three_class: ThreeClass::None, binary: Binary::NoStress });
        assert_eq!(get("P1", "S2"), StressLabel { three_class: ThreeClass::Low, binary: Binary::Stress });
        assert_eq!(get("P2", "S3"), StressLabel { three_class: ThreeClass::High, binary: Binary::Stress });

        let short = KMeansResult { assignment: vec![0], ..clusters };
        assert!(assign_labels(&norm, &short).is_err());
    }

    #[test]
    fn labels_file_round_trip() {
        let mut records = recs("P1", &[1.0, 5.0, 9.0, 2.0]);
        records.extend(recs("P2", &[0.0, 4.0, 8.0, 8.0]));
        let file = LabelsFile::from_records(&records).unwrap();
        assert_eq!(file.centers.len(), 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.json");
        file.write(&path).unwrap();
        assert_eq!(LabelsFile::read(&path).unwrap(), file);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains(r#""three_class": "high""#));
        assert!(text.contains(r#""binary": "no_stress""#));
    }

    #[test]
    fn class_indices() {
        let high = StressLabel::from_three_class(ThreeClass::High);
        assert_eq!(high.class_index(Task::ThreeClass), 2);
        assert_eq!(high.class_index(Task::Binary), 1);
        let none = StressLabel::from_three_class(ThreeClass::None);
        assert_eq!(none.class_index(Task::Binary), 0);
    }
}
