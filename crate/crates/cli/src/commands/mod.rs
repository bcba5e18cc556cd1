pub mod compare;
pub mod eval;
pub mod gradcheck;
pub mod lm;
pub mod synth;
pub mod tm;
pub mod train;

use std::fs;
use std::path::{Path, PathBuf};

use protembed::checkpoint::Checkpoint;
use protembed::data::{load_dataset, DatasetPaths, ProteinRecord};
use protembed::similarity::Scorer;
use protembed::training::Model;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{io_context, CliError, CliResult};

/// Options shared by every subcommand.
pub struct Ctx {
    pub seed: Option<u64>,
    pub config: Option<PathBuf>,
}

/// What a subcommand reports back for the run manifest.
pub struct Outcome {
    pub config: Value,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Default manifest location; `None` prints it to stderr.
    pub manifest: Option<PathBuf>,
    /// Set when outputs were written but the run still counts as failed.
    pub failure: Option<CliError>,
}

impl Outcome {
    pub fn new(config: &impl Serialize, seed: u64) -> Self {
        Outcome {
            config: serde_json::to_value(config).expect("configs serialize"),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            manifest: None,
            failure: None,
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    pub fn input_opt(&mut self, p: Option<&PathBuf>) {
        if let Some(p) = p {
            self.input(p);
        }
    }

    /// Writes one output file and records it.
    pub fn write(&mut self, path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            io_context(fs::create_dir_all(dir), dir)?;
        }
        io_context(fs::write(path, contents), path)?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    pub fn manifest_in_dir(mut self, dir: &Path) -> Self {
        self.manifest = Some(dir.join("manifest.json"));
        self
    }

    pub fn manifest_beside(mut self, file: &Path) -> Self {
        self.manifest = Some(sibling(file, ".manifest.json"));
        self
    }
}

impl Ctx {
    /// The configuration file's contents over `T`'s defaults. Keys that do
    /// not name a field are rejected.
    pub fn load_config<T: DeserializeOwned + Serialize + Default>(&self) -> CliResult<T> {
        let Some(path) = &self.config else {
            return Ok(T::default());
        };
        let bad = |e: String| CliError::usage(format!("{}: {e}", path.display()));
        let text = io_context(fs::read_to_string(path), path)?;
        let raw: toml::Table = toml::from_str(&text).map_err(|e| bad(e.to_string()))?;
        let parsed: T = toml::from_str(&text).map_err(|e| bad(e.to_string()))?;
        let resolved = toml::Table::try_from(&parsed).map_err(|e| bad(e.to_string()))?;
        let mut unknown = Vec::new();
        unknown_keys(&raw, &resolved, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(bad(format!("unknown keys: {}", unknown.join(", "))));
        }
        Ok(parsed)
    }

    /// `--seed` if given, else the configuration's seed.
    pub fn seed_or(&self, configured: u64) -> u64 {
        self.seed.unwrap_or(configured)
    }
}

fn unknown_keys(raw: &toml::Table, resolved: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in raw {
        let name = format!("{prefix}{k}");
        match (v, resolved.get(k)) {
            (_, None) => out.push(name),
            (toml::Value::Table(a), Some(toml::Value::Table(b))) => unknown_keys(a, b, &format!("{name}."), out),
            _ => {}
        }
    }
}

/// `path` with `suffix` appended to its file name.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

pub fn load_records(paths: &DatasetPaths<'_>) -> CliResult<Vec<ProteinRecord>> {
    let what = paths.fasta.map(|p| p.display().to_string()).unwrap_or_default();
    load_dataset(paths).map_err(|e| match CliError::from(e) {
        CliError::Data(m) => CliError::data(format!("{what}: {m}")),
        other => other,
    })
}

pub fn load_model(path: &Path) -> CliResult<Model> {
    let ck = Checkpoint::load(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Model::from_checkpoint(&ck).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn parse_scorer(s: &str) -> Result<Scorer, String> {
    serde_json::from_value(Value::String(s.to_ascii_lowercase())).map_err(|_| format!("unknown scorer {s:?} (ssa, ua, me)"))
}

/// Formats reals with `.` as the decimal point and no precision loss.
pub fn num(v: f64) -> String {
    v.to_string()
}
