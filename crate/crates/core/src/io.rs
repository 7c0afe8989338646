//! JSON files read and written by the command line tool.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dyadic::{GridMatrixField, GridVector};
use crate::error::Result;
use crate::sparse::StoppingConfig;
use crate::weights::{MatrixWeight, WeightKind};

/// Provenance of a generated weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightMetadata {
    pub kind: WeightKind,
    pub parameter: f64,
    pub seed: u64,
    pub eps_pd: f64,
}

/// A weight grid, optionally tagged with how it was generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightFile {
    #[serde(flatten)]
    pub field: GridMatrixField,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<WeightMetadata>,
}

impl WeightFile {
    pub fn to_weight(&self) -> Result<MatrixWeight> {
        MatrixWeight::new(self.field.clone())
    }
}

/// Everything the `sparse` subcommand needs in one document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub weight: WeightFile,
    pub function: GridVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<StoppingConfig>,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_file_round_trip() {
        let text = r#"{"depth":1,"dim":1,"values":[[1.0],[9.0]],"metadata":{"kind":"scalar_power","parameter":0.5,"seed":3,"eps_pd":1e-10}}"#;
        let wf: WeightFile = serde_json::from_str(text).unwrap();
        assert_eq!(wf.field.values(), &[1.0, 9.0]);
        assert_eq!(wf.metadata.as_ref().unwrap().kind, WeightKind::ScalarPower);
        let back: WeightFile = serde_json::from_str(&serde_json::to_string(&wf).unwrap()).unwrap();
        assert_eq!(back, wf);
    }

    #[test]
    fn bare_grid_is_a_weight_file() {
        let wf: WeightFile = serde_json::from_str(r#"{"depth":0,"dim":2,"values":[[2,0,0,3]]}"#).unwrap();
        assert!(wf.metadata.is_none());
        assert_eq!(wf.to_weight().unwrap().dim(), 2);
    }

    #[test]
    fn asymmetric_grid_rejected() {
        let r: std::result::Result<WeightFile, _> = serde_json::from_str(r#"{"depth":0,"dim":2,"values":[[2,1,0,3]]}"#);
        assert!(r.is_err());
    }
}
