//! Operator hyperparameters and config-file overrides.

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of the adaptive split operator and the density controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdpSplitConfig {
    /// Normalized L1 threshold for marking high-error pixels.
    pub tau_l1: f64,
    /// Side of the square erosion footprint, in pixels.
    pub r_erode: usize,
    /// Minimum error-region area, in pixels.
    pub m_min: usize,
    /// Number of error-level bands.
    pub l_bands: usize,
    /// Child cap per split parent.
    pub n_max: usize,
    /// Number of training views sampled per densification step.
    pub v_views: usize,
    /// Merge distance threshold (sum of the two Mahalanobis distances).
    pub gamma_d: f64,
    /// Merge colour threshold (max RGB channel difference).
    pub gamma_c: f64,
    /// Densification gradient threshold on the averaged view-space gradient norm.
    pub tau_g: f64,
    /// Split scale threshold as a fraction of the scene extent.
    pub tau_s: f64,
    /// Scale shrink factor of the vanilla split.
    pub eta: f64,
    /// Densification interval in iterations.
    pub t_interval: usize,
    /// Stabilizer added to the depth denominator of the child placement.
    pub eps: f64,
}

impl Default for AdpSplitConfig {
    fn default() -> Self {
        AdpSplitConfig {
            tau_l1: 0.1,
            r_erode: 2,
            m_min: 5,
            l_bands: 3,
            n_max: 19,
            v_views: 20,
            gamma_d: 2.0,
            gamma_c: 0.15,
            tau_g: 0.0002,
            tau_s: 0.01,
            eta: 1.6,
            t_interval: 100,
            eps: 1e-9,
        }
    }
}

impl AdpSplitConfig {
    /// Reduced child cap and view count used for large outdoor scenes.
    pub fn outdoor() -> Self {
        AdpSplitConfig {
            n_max: 9,
            v_views: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.tau_l1 > 0.0 && self.tau_l1 < 1.0) {
            return fail("tau_l1 must lie in (0, 1)");
        }
        if self.l_bands < 1 {
            return fail("l_bands must be >= 1");
        }
        if self.n_max < 1 {
            return fail("n_max must be >= 1");
        }
        if self.v_views < 1 {
            return fail("v_views must be >= 1");
        }
        if !(self.gamma_d >= 0.0 && self.gamma_c >= 0.0) {
            return fail("gamma_d and gamma_c must be >= 0");
        }
        if !(self.eta > 0.0) {
            return fail("eta must be > 0");
        }
        if !(self.eps > 0.0) {
            return fail("eps must be > 0");
        }
        if self.t_interval < 1 {
            return fail("t_interval must be >= 1");
        }
        if !(self.tau_g >= 0.0 && self.tau_s >= 0.0) {
            return fail("tau_g and tau_s must be >= 0");
        }
        Ok(())
    }
}

/// Overwrite fields of `base` with the same-named keys of `table`.
///
/// Unknown keys are an error so that typos in config files do not pass
/// silently.
pub fn apply_overrides<T>(base: &T, table: &toml::Table) -> Result<T>
where
    T: Serialize + DeserializeOwned,
{
    let mut merged = toml::Table::try_from(base)
        .map_err(|e| Error::InvalidConfig(format!("cannot serialize config: {e}")))?;
    for (k, v) in table {
        if !merged.contains_key(k) {
            return Err(Error::InvalidConfig(format!("unknown config key `{k}`")));
        }
        merged.insert(k.clone(), v.clone());
    }
    merged
        .try_into()
        .map_err(|e| Error::InvalidConfig(format!("{e}")))
}

pub fn read_toml(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.parse::<toml::Table>()
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}
