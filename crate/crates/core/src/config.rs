use serde::{Deserialize, Serialize};

use crate::error::{BairError, Result};

/// Which text tokens receive positional penalties.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatpScope {
    #[default]
    FullText,
    ContextOnly,
}

impl std::str::FromStr for PatpScope {
    type Err = BairError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full-text" => Ok(PatpScope::FullText),
            "context-only" => Ok(PatpScope::ContextOnly),
            other => Err(BairError::param(
                "patp_scope",
                format!("expected `full-text` or `context-only`, got `{other}`"),
            )),
        }
    }
}

/// Intervention hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BairConfig {
    /// Mass interpolation factor. 1 restores the reference mass exactly,
    /// values above 1 push past it.
    pub alpha_v: f64,
    /// Upper end of the temperature search bracket.
    pub t_max: f64,
    /// Sharpness tolerance of the temperature search.
    pub eps: f64,
    /// Fraction of text tokens forming each boundary window.
    pub boundary_fraction: f64,
    pub enable_vsmr: bool,
    pub enable_patp: bool,
    pub patp_scope: PatpScope,
}

impl Default for BairConfig {
    fn default() -> Self {
        Self {
            alpha_v: 0.5,
            t_max: 100.0,
            eps: 1e-4,
            boundary_fraction: 0.2,
            enable_vsmr: true,
            enable_patp: true,
            patp_scope: PatpScope::FullText,
        }
    }
}

impl BairConfig {
    pub fn vsmr_only() -> Self {
        Self {
            enable_patp: false,
            ..Self::default()
        }
    }

    pub fn patp_only() -> Self {
        Self {
            enable_vsmr: false,
            ..Self::default()
        }
    }

    pub fn with_alpha_v(mut self, alpha_v: f64) -> Self {
        self.alpha_v = alpha_v;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.enable_vsmr && !self.enable_patp {
            return Err(BairError::param(
                "enable_vsmr/enable_patp",
                "at least one component must be enabled",
            ));
        }
        if !(self.alpha_v.is_finite() && self.alpha_v > 0.0) {
            return Err(BairError::param("alpha_v", format!("must be > 0, got {}", self.alpha_v)));
        }
        if !(self.t_max.is_finite() && self.t_max > 0.0) {
            return Err(BairError::param("t_max", format!("must be > 0, got {}", self.t_max)));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(BairError::param("eps", format!("must be > 0, got {}", self.eps)));
        }
        check_fraction(self.boundary_fraction)
    }
}

pub(crate) fn check_fraction(fraction: f64) -> Result<()> {
    if fraction.is_finite() && fraction > 0.0 && fraction <= 0.5 {
        Ok(())
    } else {
        Err(BairError::param(
            "fraction",
            format!("must lie in (0, 0.5], got {fraction}"),
        ))
    }
}
