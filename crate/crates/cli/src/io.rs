use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use vgfne_core::game_model::DynamicGameSpec;
use vgfne_core::simulator::SimTrace;
use vgfne_core::sls_core::SystemResponse;

use crate::error::CliError;

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn read_spec(path: &Path) -> Result<DynamicGameSpec, CliError> {
    DynamicGameSpec::from_json(&read_text(path)?)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

/// Reads a response written by `seek`; the embedded config is ignored.
pub fn read_response(spec: &DynamicGameSpec, path: &Path) -> Result<SystemResponse, CliError> {
    SystemResponse::from_json(spec, &read_text(path)?)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

/// Response JSON with the resolved config as an extra top-level field.
pub fn response_json(r: &SystemResponse, config: &Value) -> String {
    let mut doc: Value = serde_json::from_str(&r.to_json()).expect("response JSON parses");
    doc["config"] = config.clone();
    serde_json::to_string_pretty(&doc).expect("response serializes")
}

fn canonical(path: &Path) -> PathBuf {
    fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf())
}

/// An output directory that refuses to overwrite any of the inputs.
pub struct Outputs {
    dir: PathBuf,
    inputs: Vec<PathBuf>,
}

impl Outputs {
    pub fn create(dir: &Path, inputs: &[&Path]) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            inputs: inputs.iter().map(|p| canonical(p)).collect(),
        })
    }

    pub fn path(&self, name: &str) -> Result<PathBuf, CliError> {
        let p = self.dir.join(name);
        if self.inputs.contains(&canonical(&p)) {
            return Err(CliError::Invalid(format!(
                "output {} would overwrite an input",
                p.display()
            )));
        }
        Ok(p)
    }

    pub fn subdir(&self, name: &str) -> Result<Outputs, CliError> {
        Outputs::create(&self.dir.join(name), &[]).map(|mut o| {
            o.inputs = self.inputs.clone();
            o
        })
    }

    pub fn text(&self, name: &str, text: &str) -> Result<(), CliError> {
        let p = self.path(name)?;
        fs::write(&p, text).map_err(|e| CliError::io(&p, e))
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).expect("artifact serializes");
        self.text(name, &(text + "\n"))
    }

    pub fn trace(&self, name: &str, trace: &SimTrace) -> Result<(), CliError> {
        let p = self.path(name)?;
        let file = fs::File::create(&p).map_err(|e| CliError::io(&p, e))?;
        trace
            .write_csv(std::io::BufWriter::new(file))
            .map_err(|e| CliError::io(&p, std::io::Error::other(e.to_string())))
    }

    pub fn csv(&self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
        let p = self.path(name)?;
        let wrap = |e: csv::Error| CliError::io(&p, std::io::Error::other(e.to_string()));
        let mut w = csv::Writer::from_path(&p).map_err(wrap)?;
        w.write_record(header).map_err(wrap)?;
        for r in rows {
            w.write_record(r).map_err(wrap)?;
        }
        w.flush().map_err(|e| CliError::io(&p, e))
    }
}
