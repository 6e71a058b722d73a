//! Versioned JSON envelope shared by every command's output.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const TOOL_NAME: &str = "hcfmem";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub command: String,
    /// The only field allowed to differ between identical reruns.
    pub generated_at: String,
    /// sha256 of every input file and of the effective configuration.
    pub digests: BTreeMap<String, String>,
    pub result: T,
}

impl<T> Report<T> {
    pub fn new(command: impl Into<String>, generated_at: impl Into<String>, result: T) -> Self {
        Report {
            schema_version: REPORT_SCHEMA_VERSION,
            tool: TOOL_NAME.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            generated_at: generated_at.into(),
            digests: BTreeMap::new(),
            result,
        }
    }

    pub fn with_digest(mut self, name: impl Into<String>, bytes: &[u8]) -> Self {
        self.digests.insert(name.into(), sha256_hex(bytes));
        self
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
