//! One function per subcommand. Each reads its inputs from the output
//! directory, runs the matching core routine and writes JSON (plus markdown
//! for reports) back to it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use poi_xaudit_core::audit::exp4::MIN_USERS;
use poi_xaudit_core::audit::{audit_inputs, build_clone_dataset, run_exp1, run_exp2, run_exp3, run_exp4, CloneRecord};
use poi_xaudit_core::checkpoint::sidecar_path;
use poi_xaudit_core::compressor::{Compressor, SimilarityIndex};
use poi_xaudit_core::explain::{explain, Explanation};
use poi_xaudit_core::ingest::{build_trajectories, read_checkins_file, Dataset};
use poi_xaudit_core::recommender::Recommender;
use poi_xaudit_core::synth::{generate, write_checkins};
use poi_xaudit_core::UserId;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{sha256_file, RunConfig};
use crate::error::CliError;

pub const DATASET: &str = "dataset.pxd";
pub const RECOMMENDER: &str = "recommender.pxck";
pub const COMPRESSOR: &str = "compressor.pxck";
pub const CLONES: &str = "clones.pxd";
pub const CLONE_MANIFEST: &str = "clone_manifest.json";
pub const REPORT: &str = "report.md";

/// Provenance block stored in every JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub tool: String,
    pub config_hash: String,
    pub seed: u64,
    /// SHA-256 of each input artifact, keyed by file name.
    pub inputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Output<T> {
    pub meta: Meta,
    pub result: T,
}

struct Ctx<'a> {
    config: &'a RunConfig,
    inputs: BTreeMap<String, String>,
}

impl<'a> Ctx<'a> {
    fn new(config: &'a RunConfig) -> Result<Self, CliError> {
        config.validate()?;
        std::fs::create_dir_all(&config.out).map_err(|e| CliError::io(&config.out, e))?;
        Ok(Self { config, inputs: BTreeMap::new() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.config.out.join(name)
    }

    fn record(&mut self, name: &str) -> Result<(), CliError> {
        let hash = sha256_file(&self.path(name))?;
        self.inputs.insert(name.to_string(), hash);
        Ok(())
    }

    fn meta(&self) -> Meta {
        Meta {
            tool: concat!("poi-xaudit ", env!("CARGO_PKG_VERSION")).into(),
            config_hash: self.config.hash(),
            seed: self.config.seed,
            inputs: self.inputs.clone(),
        }
    }

    /// Fields stored in checkpoint sidecars.
    fn extra(&self) -> serde_json::Value {
        json!({ "config_hash": self.config.hash(), "seed": self.config.seed, "inputs": self.inputs })
    }

    fn header(&self, title: &str) -> String {
        let mut s = format!("# {title}\n\n");
        let _ = writeln!(s, "- config hash: `{}`", self.config.hash());
        let _ = writeln!(s, "- master seed: {}", self.config.seed);
        for (name, hash) in &self.inputs {
            let _ = writeln!(s, "- {name}: `{hash}`");
        }
        s.push('\n');
        s
    }

    fn write_json<T: Serialize>(&self, name: &str, result: &T) -> Result<PathBuf, CliError> {
        let out = Output { meta: self.meta(), result };
        let mut text = serde_json::to_string_pretty(&out).map_err(poi_xaudit_core::Error::from)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    fn write_text(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    fn dataset(&mut self) -> Result<Dataset, CliError> {
        let path = self.path(DATASET);
        if !path.exists() {
            return Err(CliError::MissingDataset(path));
        }
        self.record(DATASET)?;
        Ok(Dataset::read(&path)?)
    }

    fn recommender(&mut self) -> Result<Recommender, CliError> {
        let path = self.path(RECOMMENDER);
        require_checkpoint(&path)?;
        self.record(RECOMMENDER)?;
        Ok(Recommender::load(&path)?.0)
    }

    fn compressor(&mut self) -> Result<Compressor, CliError> {
        let path = self.path(COMPRESSOR);
        require_checkpoint(&path)?;
        self.record(COMPRESSOR)?;
        Ok(Compressor::load(&path)?.0)
    }
}

fn require_checkpoint(path: &Path) -> Result<(), CliError> {
    for p in [path.to_path_buf(), sidecar_path(path)] {
        if !p.exists() {
            return Err(CliError::MissingCheckpoint(p));
        }
    }
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_str(&text).map_err(poi_xaudit_core::Error::from)?)
}

/// Write a synthetic check-in file to `config.data`, or to `checkins.tsv`
/// in the output directory.
pub fn synth_data(config: &RunConfig) -> Result<PathBuf, CliError> {
    let ctx = Ctx::new(config)?;
    let path = config.data.clone().unwrap_or_else(|| ctx.path("checkins.tsv"));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let checkins = generate(&config.synth())?;
    let file = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    write_checkins(std::io::BufWriter::new(file), &checkins)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub checkins: usize,
    pub malformed: usize,
    pub users: usize,
    pub pois: usize,
    pub visits: usize,
    pub min_len: usize,
    pub max_len: usize,
}

pub fn ingest(config: &RunConfig) -> Result<IngestSummary, CliError> {
    let mut ctx = Ctx::new(config)?;
    let data = config.data.clone().ok_or_else(|| CliError::Config("no data file given (--data)".into()))?;
    if !data.exists() {
        return Err(CliError::MissingDataset(data));
    }
    let parsed = read_checkins_file(&data)?;
    let (trajs, registry) = build_trajectories(&parsed.checkins, &config.params.bbox, config.params.min_len)?;
    let ds = Dataset::new(trajs, registry)?;
    ds.write(&ctx.path(DATASET))?;
    let lens = ds.trajectories().iter().map(|t| t.len());
    let summary = IngestSummary {
        checkins: parsed.checkins.len(),
        malformed: parsed.malformed,
        users: ds.n_users(),
        pois: ds.n_pois(),
        visits: lens.clone().sum(),
        min_len: lens.clone().min().unwrap_or(0),
        max_len: lens.max().unwrap_or(0),
    };
    ctx.record(DATASET)?;
    ctx.write_json("ingest.json", &summary)?;
    Ok(summary)
}

pub fn train(config: &RunConfig) -> Result<poi_xaudit_core::recommender::TrainReport, CliError> {
    let mut ctx = Ctx::new(config)?;
    let ds = ctx.dataset()?;
    let (rec, report) = Recommender::train(config.model(), &ds)?;
    rec.save(&ctx.path(RECOMMENDER), ctx.extra())?;
    ctx.write_json("train.json", &report)?;
    Ok(report)
}

pub fn compress(config: &RunConfig) -> Result<poi_xaudit_core::compressor::CompressorReport, CliError> {
    let mut ctx = Ctx::new(config)?;
    let ds = ctx.dataset()?;
    let rec = ctx.recommender()?;
    let (comp, report) = Compressor::train(config.compressor(), &rec, &ds)?;
    comp.save(&ctx.path(COMPRESSOR), ctx.extra())?;
    ctx.write_json("compress.json", &report)?;
    Ok(report)
}

pub fn explain_user(config: &RunConfig, user: u32, k_steps: usize, k_users: usize) -> Result<Explanation, CliError> {
    let mut ctx = Ctx::new(config)?;
    let ds = ctx.dataset()?;
    let rec = ctx.recommender()?;
    let comp = ctx.compressor()?;
    let index = SimilarityIndex::build(comp, &rec, &ds)?;
    let e = explain(&rec, &index, &ds, UserId(user), k_steps, k_users)?;
    ctx.write_json(&format!("explain-{user}.json"), &e)?;
    Ok(e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloneManifest {
    pub source_dataset: String,
    pub clones: Vec<CloneRecord>,
}

pub fn synth_clone(config: &RunConfig) -> Result<CloneManifest, CliError> {
    let mut ctx = Ctx::new(config)?;
    let ds = ctx.dataset()?;
    let (clones, records) = build_clone_dataset(&ds, config.seed)?;
    clones.write(&ctx.path(CLONES))?;
    let manifest = CloneManifest { source_dataset: ctx.inputs[DATASET].clone(), clones: records };
    ctx.write_json(CLONE_MANIFEST, &manifest)?;
    Ok(manifest)
}

/// Run one experiment and write `exp{n}.json` and `exp{n}.md`. Returns the
/// JSON path.
pub fn audit(config: &RunConfig, exp: u8) -> Result<PathBuf, CliError> {
    let mut ctx = Ctx::new(config)?;
    let audit = config.audit();
    let t_max = config.params.t_max;
    let name = format!("exp{exp}.json");
    let md = match exp {
        1 => {
            let ds = ctx.dataset()?;
            let rec = ctx.recommender()?;
            let r = run_exp1(&rec, &audit_inputs(&ds, t_max)?, &audit)?;
            ctx.write_json(&name, &r)?;
            r.to_markdown()
        }
        2 => {
            let ds = ctx.dataset()?;
            let rec = ctx.recommender()?;
            let comp = ctx.compressor()?;
            let index = SimilarityIndex::build(comp, &rec, &ds)?;
            let r = run_exp2(&rec, &index, &audit_inputs(&ds, t_max)?, &audit)?;
            ctx.write_json(&name, &r)?;
            r.to_markdown()
        }
        3 => {
            let ds = ctx.dataset()?;
            let rec = ctx.recommender()?;
            let comp = ctx.compressor()?;
            let index = SimilarityIndex::build(comp, &rec, &ds)?;
            let r = run_exp3(&index, &ds, &audit)?;
            ctx.write_json(&name, &r)?;
            r.to_markdown()
        }
        4 => {
            let (clones_path, manifest_path) = (ctx.path(CLONES), ctx.path(CLONE_MANIFEST));
            for p in [&clones_path, &manifest_path] {
                if !p.exists() {
                    return Err(CliError::MissingDataset(p.clone()));
                }
            }
            ctx.record(CLONES)?;
            ctx.record(CLONE_MANIFEST)?;
            let clones = Dataset::read(&clones_path)?;
            let manifest: Output<CloneManifest> = read_json(&manifest_path)?;
            let r = run_exp4(&clones, manifest.result.clones, &config.model(), &config.compressor(), &audit)?;
            ctx.write_json(&name, &r)?;
            r.to_markdown()
        }
        _ => return Err(CliError::Config(format!("no experiment {exp}; expected 1, 2, 3 or 4"))),
    };
    ctx.write_text(&format!("exp{exp}.md"), &(ctx.header(&format!("Experiment {exp}")) + &md))?;
    Ok(ctx.path(&name))
}

/// Collect the experiment markdown files present in the output directory
/// into `report.md`.
pub fn report(config: &RunConfig) -> Result<PathBuf, CliError> {
    let ctx = Ctx::new(config)?;
    let mut body = String::new();
    let mut found = 0;
    for n in 1..=4 {
        let path = ctx.path(&format!("exp{n}.md"));
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            // Demote headings by one level under the report title.
            for line in text.lines() {
                if line.starts_with('#') {
                    body.push('#');
                }
                body.push_str(line);
                body.push('\n');
            }
            body.push('\n');
            found += 1;
        }
    }
    if found == 0 {
        return Err(CliError::MissingArtifact(format!("no experiment reports in {}", config.out.display())));
    }
    let mut s = format!("# Audit report\n\n- config hash: `{}`\n- master seed: {}\n\n", config.hash(), config.seed);
    s.push_str(body.trim_end());
    s.push('\n');
    ctx.write_text(REPORT, &s)
}

/// Ingest, train, compress, run every experiment and write the report. The
/// clone experiment is skipped for datasets too small to clone.
pub fn pipeline(config: &RunConfig) -> Result<Vec<String>, CliError> {
    let mut log = Vec::new();
    let s = ingest(config)?;
    log.push(format!("ingest: {} users, {} POIs, {} visits", s.users, s.pois, s.visits));
    let t = train(config)?;
    log.push(format!("train: held-out top-1 {:.4} (chance {:.4})", t.held_out_top1, t.chance));
    let c = compress(config)?;
    log.push(format!("compress: accuracy {:.4} (chance {:.4})", c.accuracy, c.chance));
    for exp in 1..=3 {
        audit(config, exp)?;
        log.push(format!("audit {exp}: done"));
    }
    if s.users >= MIN_USERS {
        synth_clone(config)?;
        audit(config, 4)?;
        log.push("audit 4: done".into());
    } else {
        log.push(format!("audit 4: skipped, needs at least {MIN_USERS} users"));
    }
    report(config)?;
    Ok(log)
}
