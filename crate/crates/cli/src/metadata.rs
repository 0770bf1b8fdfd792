//! Sidecar record written next to every measurement.

use std::path::{Path, PathBuf};

use lavino::operators::{LinearOp, NoiseSpec, OpKind};
use lavino::tensor::Shape;
use lavino::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub problem: String,
    pub operator: String,
    pub input_shape: [usize; 4],
    pub output_shape: [usize; 4],
    pub sigma_n: f64,
    pub seed: u64,
}

fn shape(a: [usize; 4]) -> Shape {
    Shape::new(a[0], a[1], a[2], a[3])
}

impl Metadata {
    pub fn describe(problem: &str, op: &LinearOp, noise: NoiseSpec) -> Self {
        Metadata {
            problem: problem.to_string(),
            operator: op.kind().to_string(),
            input_shape: op.input_shape().as_array(),
            output_shape: op.output_shape().as_array(),
            sigma_n: noise.sigma_n,
            seed: noise.seed,
        }
    }

    /// `measurement.vten` → `measurement.meta.toml`
    pub fn sidecar_path(measurement: &Path) -> PathBuf {
        measurement.with_extension("meta.toml")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("metadata serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("metadata: {}", e.message())))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }

    pub fn input(&self) -> Shape {
        shape(self.input_shape)
    }

    pub fn output(&self) -> Shape {
        shape(self.output_shape)
    }

    pub fn kind(&self) -> Result<OpKind> {
        self.operator.parse()
    }

    /// Rebuilds the operator and checks it still produces the recorded shape.
    pub fn operator(&self) -> Result<LinearOp> {
        let op = LinearOp::new(self.kind()?, self.input())?;
        if op.output_shape() != self.output() {
            return Err(Error::ShapeMismatch {
                expected: self.output(),
                actual: op.output_shape(),
            });
        }
        Ok(op)
    }
}
