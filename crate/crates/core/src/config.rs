//! TOML configuration: tree parameters and oracle selection.
//!
//! ```toml
//! [tree]
//! max_roots = 5
//! branching = 4
//! levels = 3
//! delta = 0.3
//! gamma = 0.5
//!
//! [oracle]
//! backend = "token-reference"
//! stopwords = "my-stopwords.txt"   # optional; relative to the config file
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{Normalizer, TokenOracle};
use crate::tree::TreeConfig;

pub const TOKEN_REFERENCE_BACKEND: &str = "token-reference";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "default_backend")]
    pub backend: String,
    /// Stopword list replacing the built-in one.
    #[serde(default)]
    pub stopwords: Option<PathBuf>,
}

fn default_backend() -> String {
    TOKEN_REFERENCE_BACKEND.to_owned()
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            backend: default_backend(),
            stopwords: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShimiConfig {
    #[serde(default)]
    pub tree: TreeConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
}

impl ShimiConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.tree.validate()?;
        if cfg.oracle.backend != TOKEN_REFERENCE_BACKEND {
            return Err(Error::invalid(format!(
                "unknown oracle backend {:?}",
                cfg.oracle.backend
            )));
        }
        Ok(cfg)
    }

    /// Loads a config file; a relative stopword path is resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::parse(&fs::read_to_string(path)?)?;
        if let Some(sw) = &cfg.oracle.stopwords {
            if sw.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.oracle.stopwords = Some(base.join(sw));
            }
        }
        Ok(cfg)
    }

    pub fn build_oracle(&self) -> Result<TokenOracle> {
        Ok(match &self.oracle.stopwords {
            Some(p) => TokenOracle::with_normalizer(Normalizer::from_file(p)?),
            None => TokenOracle::new(),
        })
    }
}
