//! Flat `key = value` run configuration.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use poi_xaudit_core::audit::AuditConfig;
use poi_xaudit_core::compressor::CompressorConfig;
use poi_xaudit_core::ingest::BoundingBox;
use poi_xaudit_core::recommender::ModelConfig;
use poi_xaudit_core::synth::SynthConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Everything that shapes results. Paths and the seed are kept out of this
/// so the hash identifies the experimental setup alone.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Params {
    pub bbox: BoundingBox,
    pub min_len: usize,
    pub d_emb: usize,
    pub t_max: usize,
    pub epochs: usize,
    pub lr: f32,
    pub compressor_epochs: usize,
    pub compressor_lr: f32,
    pub trials: usize,
    pub random_trials: usize,
    pub n_random: usize,
    pub threshold: f64,
    pub k_steps: usize,
    pub k_users: usize,
    pub synth_users: usize,
    pub synth_groups: usize,
    pub synth_regional: usize,
    pub synth_shared: usize,
    pub synth_min_len: usize,
    pub synth_max_len: usize,
    pub synth_routine_len: usize,
    pub synth_personal: usize,
    pub synth_follow: f64,
}

impl Default for Params {
    fn default() -> Self {
        let m = ModelConfig::default();
        let c = CompressorConfig::default();
        let a = AuditConfig::default();
        let s = SynthConfig::default();
        Self {
            bbox: BoundingBox::NEW_YORK,
            min_len: 10,
            d_emb: m.d_emb,
            t_max: m.t_max,
            epochs: m.epochs,
            lr: m.lr,
            compressor_epochs: c.epochs,
            compressor_lr: c.lr,
            trials: a.trials,
            random_trials: a.random_trials,
            n_random: a.n_random,
            threshold: a.threshold,
            k_steps: 2,
            k_users: 2,
            synth_users: s.n_users,
            synth_groups: s.n_groups,
            synth_regional: s.regional_per_group,
            synth_shared: s.shared,
            synth_min_len: s.min_len,
            synth_max_len: s.max_len,
            synth_routine_len: s.routine_len,
            synth_personal: s.personal,
            synth_follow: s.follow_prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub params: Params,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { seed: 0, data: None, out: PathBuf::from("out"), params: Params::default() }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.parse().map_err(|_| CliError::Config(format!("bad value {value:?} for {key}")))
}

impl RunConfig {
    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let p = &mut self.params;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "data" => self.data = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "bbox" => {
                let v: Vec<f64> = value.split(',').map(|x| parse(key, x.trim())).collect::<Result<_, _>>()?;
                let [min_lat, max_lat, min_lon, max_lon] = v[..] else {
                    return Err(CliError::Config("bbox needs min_lat,max_lat,min_lon,max_lon".into()));
                };
                p.bbox = BoundingBox { min_lat, max_lat, min_lon, max_lon };
            }
            "min_len" => p.min_len = parse(key, value)?,
            "d_emb" => p.d_emb = parse(key, value)?,
            "t_max" => p.t_max = parse(key, value)?,
            "epochs" => p.epochs = parse(key, value)?,
            "lr" => p.lr = parse(key, value)?,
            "compressor_epochs" => p.compressor_epochs = parse(key, value)?,
            "compressor_lr" => p.compressor_lr = parse(key, value)?,
            "trials" => p.trials = parse(key, value)?,
            "random_trials" => p.random_trials = parse(key, value)?,
            "n_random" => p.n_random = parse(key, value)?,
            "threshold" => p.threshold = parse(key, value)?,
            "k_steps" => p.k_steps = parse(key, value)?,
            "k_users" => p.k_users = parse(key, value)?,
            "synth_users" => p.synth_users = parse(key, value)?,
            "synth_groups" => p.synth_groups = parse(key, value)?,
            "synth_regional" => p.synth_regional = parse(key, value)?,
            "synth_shared" => p.synth_shared = parse(key, value)?,
            "synth_min_len" => p.synth_min_len = parse(key, value)?,
            "synth_max_len" => p.synth_max_len = parse(key, value)?,
            "synth_routine_len" => p.synth_routine_len = parse(key, value)?,
            "synth_personal" => p.synth_personal = parse(key, value)?,
            "synth_follow" => p.synth_follow = parse(key, value)?,
            _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parse the flat text format: one `key = value` per line, `#` starts a
    /// comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut c = Self::default();
        c.apply_text(&text)?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let p = &self.params;
        if !(p.threshold > 0.0 && p.threshold < 1.0) {
            return Err(CliError::Config(format!("threshold must be in (0,1), got {}", p.threshold)));
        }
        if p.trials == 0 || p.random_trials == 0 || p.n_random < 2 {
            return Err(CliError::Config("trials and random_trials must be at least 1, n_random at least 2".into()));
        }
        if p.min_len < 3 || p.k_steps == 0 || p.k_users == 0 {
            return Err(CliError::Config("min_len must be at least 3; k_steps and k_users at least 1".into()));
        }
        self.model().validate().map_err(|e| CliError::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical JSON form of the parameters.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.params).expect("params serialize");
        hex(&Sha256::digest(bytes))
    }

    pub fn model(&self) -> ModelConfig {
        let p = &self.params;
        ModelConfig { d_emb: p.d_emb, t_max: p.t_max, epochs: p.epochs, lr: p.lr, seed: self.seed }
    }

    pub fn compressor(&self) -> CompressorConfig {
        CompressorConfig { epochs: self.params.compressor_epochs, lr: self.params.compressor_lr, seed: self.seed }
    }

    pub fn audit(&self) -> AuditConfig {
        let p = &self.params;
        AuditConfig {
            trials: p.trials,
            random_trials: p.random_trials,
            n_random: p.n_random,
            threshold: p.threshold,
            seed: self.seed,
        }
    }

    pub fn synth(&self) -> SynthConfig {
        let p = &self.params;
        SynthConfig {
            n_users: p.synth_users,
            n_groups: p.synth_groups,
            regional_per_group: p.synth_regional,
            shared: p.synth_shared,
            min_len: p.synth_min_len,
            max_len: p.synth_max_len,
            routine_len: p.synth_routine_len,
            personal: p.synth_personal,
            follow_prob: p.synth_follow,
            seed: self.seed,
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex(&Sha256::digest(bytes)))
}
