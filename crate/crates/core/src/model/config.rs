use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network widths.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Field-of-view width (odd).
    pub fov: usize,
    /// Output channels of each encoder convolution.
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    /// Message / hidden-state width.
    pub hidden: usize,
    /// Width of the neighbour-position embedding.
    pub pos_embed: usize,
    pub heads: usize,
    pub key_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            fov: 9,
            conv_channels: vec![32, 32, 64, 64],
            kernel: 3,
            hidden: 128,
            pos_embed: 16,
            heads: 4,
            key_dim: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Config(format!("model.{key}: {why}")));
        if self.fov < 3 || self.fov.is_multiple_of(2) {
            return bad("fov", "must be odd and at least 3");
        }
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return bad("conv_channels", "needs at least one positive entry");
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return bad("kernel", "must be odd");
        }
        for (key, v) in [
            ("hidden", self.hidden),
            ("pos_embed", self.pos_embed),
            ("heads", self.heads),
            ("key_dim", self.key_dim),
        ] {
            if v == 0 {
                return bad(key, "must be positive");
            }
        }
        Ok(())
    }

    /// Key/value pairs stored in checkpoint metadata.
    pub fn to_meta(&self) -> Vec<(String, String)> {
        let channels: Vec<String> = self.conv_channels.iter().map(ToString::to_string).collect();
        vec![
            ("model.fov".into(), self.fov.to_string()),
            ("model.conv_channels".into(), channels.join(",")),
            ("model.kernel".into(), self.kernel.to_string()),
            ("model.hidden".into(), self.hidden.to_string()),
            ("model.pos_embed".into(), self.pos_embed.to_string()),
            ("model.heads".into(), self.heads.to_string()),
            ("model.key_dim".into(), self.key_dim.to_string()),
        ]
    }

    pub fn from_meta(meta: &[(String, String)]) -> Result<Self> {
        let get = |key: &str| {
            meta.iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::ModelMismatch(format!("checkpoint lacks `{key}`")))
        };
        let num = |key: &str| -> Result<usize> {
            let v = get(key)?;
            v.parse()
                .map_err(|_| Error::ModelMismatch(format!("`{key}` = `{v}` is not an integer")))
        };
        let conv_channels = get("model.conv_channels")?
            .split(',')
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::ModelMismatch(format!("bad conv channel `{s}`")))
            })
            .collect::<Result<_>>()?;
        let cfg = Self {
            fov: num("model.fov")?,
            conv_channels,
            kernel: num("model.kernel")?,
            hidden: num("model.hidden")?,
            pos_embed: num("model.pos_embed")?,
            heads: num("model.heads")?,
            key_dim: num("model.key_dim")?,
        };
        cfg.validate()
            .map_err(|e| Error::ModelMismatch(e.to_string()))?;
        Ok(cfg)
    }
}

/// How agents choose whom to ask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScopeMode {
    /// Ask a neighbour only if hiding it changes the agent's greedy action.
    #[serde(rename = "dcc")]
    Dcc,
    /// Always ask the two nearest neighbours.
    #[serde(rename = "rr-n2")]
    RrN2,
}

impl fmt::Display for ScopeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScopeMode::Dcc => "dcc",
            ScopeMode::RrN2 => "rr-n2",
        })
    }
}

impl FromStr for ScopeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dcc" => Ok(ScopeMode::Dcc),
            "rr-n2" => Ok(ScopeMode::RrN2),
            other => Err(Error::Config(format!(
                "unknown mode `{other}` (expected `dcc` or `rr-n2`)"
            ))),
        }
    }
}
