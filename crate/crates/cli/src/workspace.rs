//! On-disk artifacts of a run, one file per stage output.
//!
//! ```text
//! examples.json       example set after the holdout split
//! clusters.json       clustering
//! features.json       feature matrices by cluster
//! dimensions.json     dimension artifacts by cluster
//! attributes.json     attribute artifacts by cluster
//! overall.json        overall-attribute artifacts by cluster
//! clusters/<id>/schema.r<n>.json, schema.json (latest)
//! generations.jsonl   generation records
//! reports.jsonl       contrast reports
//! report.md           human-readable summary (run only)
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use schemind_core::refinement::ContrastReport;
use schemind_core::{ClusterId, Clustering, ExampleSet, GenerationRecord, Schema};
use schemind_service::state::{AttributesArtifact, DimensionsArtifact, FeatureArtifact, OverallArtifact};
use schemind_service::store::write_atomic;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::CliError;

pub const EXAMPLES: &str = "examples.json";
pub const CLUSTERS: &str = "clusters.json";
pub const FEATURES: &str = "features.json";
pub const DIMENSIONS: &str = "dimensions.json";
pub const ATTRIBUTES: &str = "attributes.json";
pub const OVERALL: &str = "overall.json";
pub const GENERATIONS: &str = "generations.jsonl";
pub const REPORTS: &str = "reports.jsonl";
pub const REPORT: &str = "report.md";
pub const BASELINE: &str = "baseline.md";

pub type ByCluster<T> = BTreeMap<ClusterId, T>;

pub struct Workspace {
    dir: PathBuf,
}

impl Workspace {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Workspace { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).exists()
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        write_atomic(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("artifacts serialize");
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_jsonl<T: Serialize>(&self, name: &str, items: &[T]) -> Result<(), CliError> {
        let mut text = String::new();
        for item in items {
            text.push_str(&serde_json::to_string(item).expect("artifacts serialize"));
            text.push('\n');
        }
        self.write_bytes(name, text.as_bytes())
    }

    fn read(&self, name: &str) -> Result<(PathBuf, String), CliError> {
        let path = self.path(name);
        match std::fs::read_to_string(&path) {
            Ok(text) => Ok((path, text)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(CliError::MissingArtifact(path)),
            Err(e) => Err(CliError::Io(format!("{}: {e}", path.display()))),
        }
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T, CliError> {
        let (path, text) = self.read(name)?;
        serde_json::from_str(&text).map_err(|e| CliError::BadArtifact {
            path,
            reason: e.to_string(),
        })
    }

    pub fn read_jsonl<T: DeserializeOwned>(&self, name: &str) -> Result<Vec<T>, CliError> {
        let (path, text) = self.read(name)?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| CliError::BadArtifact {
                    path: path.clone(),
                    reason: format!("line {}: {e}", i + 1),
                })
            })
            .collect()
    }

    /// Like [`Self::read_jsonl`] but an absent file is empty.
    pub fn read_jsonl_or_empty<T: DeserializeOwned>(&self, name: &str) -> Result<Vec<T>, CliError> {
        match self.read_jsonl(name) {
            Err(CliError::MissingArtifact(_)) => Ok(Vec::new()),
            other => other,
        }
    }

    pub fn examples(&self) -> Result<ExampleSet, CliError> {
        self.read_json(EXAMPLES)
    }

    pub fn clustering(&self) -> Result<Clustering, CliError> {
        self.read_json(CLUSTERS)
    }

    pub fn features(&self) -> Result<ByCluster<FeatureArtifact>, CliError> {
        self.read_json(FEATURES)
    }

    pub fn dimensions(&self) -> Result<ByCluster<DimensionsArtifact>, CliError> {
        self.read_json(DIMENSIONS)
    }

    pub fn attributes(&self) -> Result<ByCluster<AttributesArtifact>, CliError> {
        self.read_json(ATTRIBUTES)
    }

    pub fn overall(&self) -> Result<ByCluster<OverallArtifact>, CliError> {
        self.read_json(OVERALL)
    }

    pub fn schema_file(cluster: &ClusterId, revision: Option<u32>) -> String {
        match revision {
            Some(r) => format!("clusters/{cluster}/schema.r{r}.json"),
            None => format!("clusters/{cluster}/schema.json"),
        }
    }

    /// Writes one revision and points `schema.json` at it.
    pub fn write_schema(&self, schema: &Schema) -> Result<(), CliError> {
        self.write_json(&Self::schema_file(&schema.cluster_id, Some(schema.revision)), schema)?;
        self.write_json(&Self::schema_file(&schema.cluster_id, None), schema)
    }

    /// Revision chain of one cluster, oldest first.
    pub fn revisions(&self, cluster: &ClusterId) -> Result<Vec<Schema>, CliError> {
        let mut out = Vec::new();
        for r in 0.. {
            let name = Self::schema_file(cluster, Some(r));
            if !self.exists(&name) {
                break;
            }
            out.push(self.read_json(&name)?);
        }
        if out.is_empty() {
            return Err(CliError::MissingArtifact(
                self.path(&Self::schema_file(cluster, Some(0))),
            ));
        }
        Ok(out)
    }

    pub fn latest_schema(&self, cluster: &ClusterId) -> Result<Schema, CliError> {
        self.read_json(&Self::schema_file(cluster, None))
    }

    pub fn generations(&self) -> Result<Vec<GenerationRecord>, CliError> {
        self.read_jsonl_or_empty(GENERATIONS)
    }

    pub fn reports(&self) -> Result<Vec<ContrastReport>, CliError> {
        self.read_jsonl_or_empty(REPORTS)
    }
}
