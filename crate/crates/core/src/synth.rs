//! Seeded synthetic breathing corpus. Stress is encoded as breathing-rate
//! irregularity: the instantaneous rate follows a mean-reverting random walk
//! whose step size grows with the stress level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::ThreeClass;
use crate::rng::{derive_seed, Xoshiro256StarStar};
use crate::signal::{BandConfig, BreathingSignal, SessionManifest};

/// Rate-walk parameters of one irregularity level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Irregularity {
    /// Diffusion of the rate walk, Hz per sqrt(s).
    pub sigma: f64,
    /// Mean-reversion strength towards the base rate, 1/s.
    pub theta: f64,
    /// Expected rate jumps per second.
    pub jump_rate_hz: f64,
    /// Standard deviation of a jump, Hz.
    pub jump_sd_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_participants: usize,
    pub sessions_per_participant: usize,
    pub duration_s: f64,
    pub fs_hz: f64,
    pub base_rate_min_hz: f64,
    pub base_rate_max_hz: f64,
    /// Half-width of the uniform per-session offset around the participant's
    /// base rate; the result is clamped to the base-rate range.
    pub session_rate_jitter_hz: f64,
    pub noise_sd: f64,
    pub band: BandConfig,
    pub none: Irregularity,
    pub low: Irregularity,
    pub high: Irregularity,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// 8 participants with 4 sessions of 261 s: 242 spectrogram columns and
    /// 123 patches per session, 492 per participant.
    fn default() -> Self {
        Self {
            n_participants: 8,
            sessions_per_participant: 4,
            duration_s: 261.0,
            fs_hz: 8.0,
            base_rate_min_hz: 0.2,
            base_rate_max_hz: 0.4,
            session_rate_jitter_hz: 0.03,
            noise_sd: 0.1,
            band: BandConfig::default(),
            none: Irregularity { sigma: 0.0, theta: 0.1, jump_rate_hz: 0.0, jump_sd_hz: 0.0 },
            low: Irregularity { sigma: 0.038, theta: 0.2, jump_rate_hz: 0.0, jump_sd_hz: 0.0 },
            high: Irregularity { sigma: 0.076, theta: 0.2, jump_rate_hz: 1.0 / 30.0, jump_sd_hz: 0.1 },
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_participants == 0 || self.sessions_per_participant == 0 {
            return Err(Error::Config("need at least one participant and one session".into()));
        }
        if self.n_participants > 99 || self.sessions_per_participant > 99 {
            return Err(Error::Config("at most 99 participants and 99 sessions".into()));
        }
        if !(self.duration_s >= 140.0 && self.duration_s.is_finite()) {
            return Err(Error::Config(format!("duration {} s is below 140 s", self.duration_s)));
        }
        self.band.validate_for(self.fs_hz)?;
        if !(self.band.f1_hz <= self.base_rate_min_hz
            && self.base_rate_min_hz <= self.base_rate_max_hz
            && self.base_rate_max_hz <= self.band.f2_hz)
        {
            return Err(Error::Config("base-rate range must lie inside the band".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config("noise_sd must be non-negative".into()));
        }
        if !(self.session_rate_jitter_hz >= 0.0 && self.session_rate_jitter_hz.is_finite()) {
            return Err(Error::Config("session_rate_jitter_hz must be non-negative".into()));
        }
        for lvl in [self.none, self.low, self.high] {
            let ok = [lvl.sigma, lvl.theta, lvl.jump_rate_hz, lvl.jump_sd_hz]
                .iter()
                .all(|v| v.is_finite() && *v >= 0.0);
            if !ok {
                return Err(Error::Config("irregularity parameters must be non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn irregularity(&self, level: ThreeClass) -> Irregularity {
        match level {
            ThreeClass::None => self.none,
            ThreeClass::Low => self.low,
            ThreeClass::High => self.high,
        }
    }

    /// Sessions 1-3 cover none, low and high; later sessions rotate through
    /// the levels with an offset that depends on the participant.
    pub fn session_level(&self, participant: usize, session: usize) -> ThreeClass {
        const LEVELS: [ThreeClass; 3] = [ThreeClass::None, ThreeClass::Low, ThreeClass::High];
        if session < 3 {
            LEVELS[session]
        } else {
            LEVELS[(participant + session) % 3]
        }
    }

    /// Stratified draw: the rate range is split into one stratum per
    /// participant, strata are assigned in a seeded random order and each rate
    /// is uniform within its stratum. Neighbouring participants then never sit
    /// more than two strata apart, so a held-out participant's rate is always
    /// bracketed closely by training participants.
    pub fn base_rate_hz(&self, participant: usize) -> f64 {
        let n = self.n_participants.max(participant + 1);
        let mut strata: Vec<usize> = (0..n).collect();
        Xoshiro256StarStar::seed_from_u64(derive_seed(self.seed, 2000)).shuffle(&mut strata);
        let mut rng = Xoshiro256StarStar::seed_from_u64(derive_seed(self.seed, participant as u64));
        let width = (self.base_rate_max_hz - self.base_rate_min_hz) / n as f64;
        let lo = self.base_rate_min_hz + strata[participant] as f64 * width;
        rng.uniform(lo, lo + width)
    }

    /// Resting rate of one session: the participant's base rate plus a small
    /// seeded offset, kept inside the base-rate range.
    pub fn session_rate_hz(&self, participant: usize, session: usize) -> f64 {
        let mut rng = Xoshiro256StarStar::seed_from_u64(derive_seed(self.session_seed(participant, session), 8));
        let j = self.session_rate_jitter_hz;
        (self.base_rate_hz(participant) + rng.uniform(-j, j)).clamp(self.base_rate_min_hz, self.base_rate_max_hz)
    }

    fn vas_offset(&self, participant: usize) -> f64 {
        let mut rng = Xoshiro256StarStar::seed_from_u64(derive_seed(self.seed, participant as u64));
        rng.next_f64();
        rng.uniform(-0.5, 0.5)
    }

    fn session_seed(&self, participant: usize, session: usize) -> u64 {
        derive_seed(derive_seed(self.seed, 1000 + participant as u64), session as u64)
    }
}

pub fn participant_id(participant: usize) -> String {
    format!("P{:02}", participant + 1)
}

pub fn session_id(session: usize) -> String {
    format!("S{}", session + 1)
}

/// Class-dependent VAS ranges in cm, before the participant offset.
fn vas_range(level: ThreeClass) -> (f64, f64) {
    match level {
        ThreeClass::None => (0.5, 2.0),
        ThreeClass::Low => (4.0, 5.5),
        ThreeClass::High => (7.5, 9.5),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSession {
    pub signal: BreathingSignal,
    pub manifest: SessionManifest,
    pub level: ThreeClass,
    /// Resting rate of this session, the centre of its rate walk.
    pub base_rate_hz: f64,
    /// Instantaneous rate per sample, Hz.
    pub rate_hz: Vec<f64>,
}

/// Breathing signal `sin(2 pi phi(t))` plus white noise, where `phi` integrates
/// a clamped Ornstein-Uhlenbeck rate walk with occasional jumps.
pub fn synthesize(
    config: &SynthConfig,
    level: ThreeClass,
    base_rate_hz: f64,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let params = config.irregularity(level);
    let n = (config.duration_s * config.fs_hz).round() as usize;
    let dt = 1.0 / config.fs_hz;
    let step_sd = params.sigma * dt.sqrt();
    let jump_p = params.jump_rate_hz * dt;
    let (lo, hi) = (config.band.f1_hz, config.band.f2_hz);

    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let mut phase = rng.next_f64();
    let mut rate = base_rate_hz;
    let mut rates = Vec::with_capacity(n);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        rates.push(rate);
        let noise = config.noise_sd * rng.normal();
        samples.push((std::f64::consts::TAU * phase).sin() + noise);
        phase = (phase + rate * dt).fract();

        let mut next = rate + params.theta * (base_rate_hz - rate) * dt + step_sd * rng.normal();
        if rng.next_f64() < jump_p {
            next += params.jump_sd_hz * rng.normal();
        }
        rate = next.clamp(lo, hi);
    }
    (samples, rates)
}

pub fn generate_session(config: &SynthConfig, participant: usize, session: usize) -> Result<SynthSession> {
    config.validate()?;
    let level = config.session_level(participant, session);
    let base = config.session_rate_hz(participant, session);
    let seed = config.session_seed(participant, session);
    let (samples, rate_hz) = synthesize(config, level, base, seed);

    let mut vas_rng = Xoshiro256StarStar::seed_from_u64(derive_seed(seed, 7));
    let (lo, hi) = vas_range(level);
    let vas = (vas_rng.uniform(lo, hi) + config.vas_offset(participant)).clamp(0.0, 10.0);

    let pid = participant_id(participant);
    let sid = session_id(session);
    let signal = BreathingSignal::new(samples, config.fs_hz, pid.clone(), sid.clone())?;
    Ok(SynthSession {
        signal,
        manifest: SessionManifest {
            participant_id: pid,
            session_id: sid,
            fs_hz: config.fs_hz,
            vas_score_cm: vas,
        },
        level,
        base_rate_hz: base,
        rate_hz,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub participant_id: String,
    pub session_id: String,
    pub level: ThreeClass,
    pub base_rate_hz: f64,
    pub vas_score_cm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub config: SynthConfig,
    pub sessions: Vec<TruthEntry>,
}

pub const TRUTH_FILE: &str = "synth_truth.json";

pub fn signal_csv(signal: &BreathingSignal) -> String {
    let mut out = String::with_capacity(signal.len() * 24 + 16);
    out.push_str("time_s,value\n");
    for (i, v) in signal.samples.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i as f64 / signal.fs_hz, v));
    }
    out
}

/// Paths of the CSV and manifest for one session inside a corpus directory.
pub fn session_paths(dir: &Path, participant_id: &str, session_id: &str) -> (PathBuf, PathBuf) {
    let stem = format!("{participant_id}_{session_id}");
    (dir.join(format!("{stem}.csv")), dir.join(format!("{stem}.json")))
}

/// Writes `<P>_<S>.csv` and `<P>_<S>.json` for every session plus the
/// generator's ground truth in `synth_truth.json`.
pub fn generate_dataset(config: &SynthConfig, out_dir: &Path) -> Result<SynthTruth> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut sessions = Vec::new();
    for p in 0..config.n_participants {
        for s in 0..config.sessions_per_participant {
            let session = generate_session(config, p, s)?;
            let m = &session.manifest;
            let (csv_path, json_path) = session_paths(out_dir, &m.participant_id, &m.session_id);
            std::fs::write(&csv_path, signal_csv(&session.signal)).map_err(|e| Error::io(&csv_path, e))?;
            m.write(&json_path)?;
            sessions.push(TruthEntry {
                participant_id: m.participant_id.clone(),
                session_id: m.session_id.clone(),
                level: session.level,
                base_rate_hz: session.base_rate_hz,
                vas_score_cm: m.vas_score_cm,
            });
        }
    }
    let truth = SynthTruth { config: config.clone(), sessions };
    let path = out_dir.join(TRUTH_FILE);
    let text = serde_json::to_string_pretty(&truth)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(truth)
}
