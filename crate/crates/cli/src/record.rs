use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

/// JSON summary written after every invocation, successful or not.
#[derive(Debug, Default, Serialize)]
pub struct RunRecord {
    pub command: String,
    pub argv: Vec<String>,
    pub settings: Value,
    pub workers: usize,
    /// Encoder fingerprints (hex) keyed by role, e.g. `encoder`, `index`.
    pub fingerprints: BTreeMap<String, String>,
    pub versions: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub results: BTreeMap<String, Value>,
    pub wall_time_secs: f64,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunRecord {
    pub fn new(argv: Vec<String>) -> Self {
        let versions = [
            ("llsh", env!("CARGO_PKG_VERSION")),
            ("encoder_format", "LLSHENC1"),
            ("index_format", "LLSHIDX1"),
            ("feature_format", "LLSHFVS1"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        Self {
            argv,
            versions,
            ..Self::default()
        }
    }

    pub fn fingerprint(&mut self, role: &str, fp: u64) {
        self.fingerprints.insert(role.to_string(), format!("{fp:016x}"));
    }

    pub fn output(&mut self, role: &str, path: &Path) {
        self.outputs.insert(role.to_string(), path.display().to_string());
    }

    pub fn result(&mut self, key: &str, value: impl Serialize) {
        self.results
            .insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("run record serializes");
        text.push('\n');
        std::fs::write(path, text)
    }
}
