//! TOML run configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use misspec_core::{preset, ScenarioF64, SignalSpecF64};
use serde::{Deserialize, Serialize};

/// Contents of a `--config` file.
///
/// Either `preset` names a built-in scenario or a `[scenario]` table spells one out.
/// The remaining keys override the resolved scenario.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ladder: Option<Vec<f64>>,
    /// Base grid size; change-point rungs may refine it further.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default)]
    pub emit_paths: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioF64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Config holding a preset spelled out in full.
    pub fn inline_preset(name: &str) -> Result<Self> {
        Ok(Self {
            scenario: Some(preset(name)?),
            ..Self::default()
        })
    }

    /// Base scenario before overrides.
    pub fn base_scenario(&self) -> Result<ScenarioF64> {
        match (&self.preset, &self.scenario) {
            (Some(_), Some(_)) => bail!(misspec_core::Error::InvalidInput(
                "config sets both `preset` and `[scenario]`".into()
            )),
            (Some(name), None) => Ok(preset(name)?),
            (None, Some(s)) => Ok(s.clone()),
            (None, None) => bail!(misspec_core::Error::InvalidInput(
                "config needs `preset` or a `[scenario]` table".into()
            )),
        }
    }

    /// Resolved scenario with the override keys applied.
    pub fn scenario(&self) -> Result<ScenarioF64> {
        let mut s = self.base_scenario()?;
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(n) = self.replications {
            s.replications = n;
        }
        if let Some(ladder) = &self.ladder {
            s.ladder = ladder.clone();
        }
        if let Some(steps) = self.steps {
            s.grid = s.grid.with_steps(steps);
        }
        s.validate()?;
        Ok(s)
    }
}

/// Parses an inline TOML table such as `{ family = "sine", amplitude = -1, omega = 2 }`.
pub fn parse_signal(text: &str) -> Result<SignalSpecF64> {
    #[derive(Deserialize)]
    struct Wrap {
        v: SignalSpecF64,
    }
    let w: Wrap = toml::from_str(&format!("v = {text}")).with_context(|| format!("signal spec `{text}`"))?;
    w.v.validate()?;
    Ok(w.v)
}
