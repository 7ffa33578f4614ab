//! TOML run configuration. Every field is optional and overrides the
//! chemistry default; command-line flags override the file in turn.
//!
//! ```toml
//! [run]
//! seed = 7
//! steps = 50
//!
//! [ja]
//! tanks = 16
//! transfer_mode = "grid"
//! grid_shape = [4, 4]
//!
//! [mapping]
//! count_scale = 24.0
//! ```

use metachem_core::ja::{JaConfig, TransferMode};
use metachem_core::nested::{NestedConfig, Variant};
use metachem_core::stringcat::StringCatConfig;
use metachem_core::swarm::SwarmConfig;
use serde::Deserialize;

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub max_transitions: Option<u64>,
    pub steps: Option<u64>,
    pub variant: Option<String>,
    pub recipe: Option<String>,
    pub frames_every: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StringCatSection {
    pub alphabet: Option<String>,
    pub copies: Option<usize>,
    pub tanks: Option<u32>,
    pub reactions_per_step: Option<u32>,
    pub max_transfers: Option<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JaSection {
    pub tanks: Option<u32>,
    pub atoms_per_tank: Option<u32>,
    pub link_attempts_per_step: Option<u32>,
    pub decomp_attempts_per_step: Option<u32>,
    pub transfer_mode: Option<String>,
    pub grid_shape: Option<(u32, u32)>,
    pub max_transfers: Option<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwarmSection {
    pub whim: Option<f64>,
    pub collision_radius: Option<f64>,
    pub exchange: Option<bool>,
    pub dt: Option<f64>,
    pub box_size: Option<f64>,
    pub keep_history: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingSection {
    pub count_scale: Option<f64>,
    pub atoms_scale: Option<f64>,
    pub link_scale: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub stringcat: StringCatSection,
    #[serde(default)]
    pub ja: JaSection,
    #[serde(default)]
    pub swarm: SwarmSection,
    #[serde(default)]
    pub mapping: MappingSection,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error("unknown transfer mode `{0}`")]
    TransferMode(String),
}

fn set<T>(slot: &mut T, v: &Option<T>)
where
    T: Clone,
{
    if let Some(v) = v {
        *slot = v.clone();
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<ConfigFile, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn stringcat(&self) -> StringCatConfig {
        let s = &self.stringcat;
        let mut c = StringCatConfig::default();
        set(&mut c.alphabet, &s.alphabet);
        set(&mut c.copies, &s.copies);
        set(&mut c.tanks, &s.tanks);
        set(&mut c.reactions_per_step, &s.reactions_per_step);
        set(&mut c.max_transfers, &s.max_transfers);
        c
    }

    pub fn ja(&self) -> Result<JaConfig, ConfigError> {
        let mut c = JaConfig::default();
        self.apply_ja(&mut c)?;
        Ok(c)
    }

    fn apply_ja(&self, c: &mut JaConfig) -> Result<(), ConfigError> {
        let s = &self.ja;
        set(&mut c.tanks, &s.tanks);
        set(&mut c.atoms_per_tank, &s.atoms_per_tank);
        set(&mut c.link_attempts_per_step, &s.link_attempts_per_step);
        set(&mut c.decomp_attempts_per_step, &s.decomp_attempts_per_step);
        set(&mut c.max_transfers, &s.max_transfers);
        if s.grid_shape.is_some() {
            c.grid_shape = s.grid_shape;
        }
        if let Some(m) = &s.transfer_mode {
            c.transfer_mode = TransferMode::from_word(m).ok_or_else(|| ConfigError::TransferMode(m.clone()))?;
        }
        Ok(())
    }

    pub fn swarm(&self) -> SwarmConfig {
        let mut c = SwarmConfig::default();
        self.apply_swarm(&mut c);
        c
    }

    fn apply_swarm(&self, c: &mut SwarmConfig) {
        let s = &self.swarm;
        set(&mut c.whim, &s.whim);
        set(&mut c.collision_radius, &s.collision_radius);
        set(&mut c.exchange, &s.exchange);
        set(&mut c.dt, &s.dt);
        set(&mut c.box_size, &s.box_size);
        set(&mut c.keep_history, &s.keep_history);
    }

    /// Nested settings: the `[ja]` tank and attempt counts, the `[swarm]`
    /// block and the `[mapping]` overrides on top of the variant defaults.
    /// The JA transfer mode is fixed by the variant and ignored here.
    pub fn nested(&self, variant: Variant) -> NestedConfig {
        let mut c = NestedConfig::new(variant);
        let s = &self.ja;
        set(&mut c.tanks, &s.tanks);
        set(&mut c.atoms_per_tank, &s.atoms_per_tank);
        set(&mut c.link_attempts_per_step, &s.link_attempts_per_step);
        set(&mut c.decomp_attempts_per_step, &s.decomp_attempts_per_step);
        set(&mut c.max_transfers, &s.max_transfers);
        if s.grid_shape.is_some() {
            c.grid_shape = s.grid_shape;
        }
        self.apply_swarm(&mut c.swarm);
        let m = &self.mapping;
        set(&mut c.map.count_scale, &m.count_scale);
        set(&mut c.map.atoms_scale, &m.atoms_scale);
        set(&mut c.map.link_scale, &m.link_scale);
        c
    }
}
