use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("solver config: {field} must be {requirement} (got {value})")]
    Invalid {
        field: &'static str,
        requirement: &'static str,
        value: f64,
    },
}

/// Numerical settings shared by every simulation. Values are kept in `f64`
/// and converted to the working scalar at the point of use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Event localization tolerance in time.
    pub tol_event: f64,
    /// Membership band: `x ∈ S` iff `m_S(x) <= tol_set`.
    pub tol_set: f64,
    /// Horizon of the numeric C* probe.
    pub h_viab: f64,
    /// Allowed margin growth per unit probe time (κ).
    pub viab_slope: f64,
    pub max_step: f64,
    pub min_step: f64,
    pub max_branches: usize,
    #[serde(rename = "horizon_T")]
    pub horizon_t: f64,
    #[serde(rename = "horizon_J")]
    pub horizon_j: usize,
    /// Spacing of branch points along grazing segments (EnumerateAll).
    pub branch_grid: f64,
    /// Events this close before a mandatory stop are deferred to the stop.
    pub stop_snap: f64,
    /// Residual tolerance used by `is_solution`.
    pub res_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            tol_event: 1e-9,
            tol_set: 1e-9,
            h_viab: 1e-3,
            viab_slope: 0.0,
            max_step: 1e-2,
            min_step: 1e-14,
            max_branches: 256,
            horizon_t: 3.0,
            horizon_j: 5,
            branch_grid: 0.05,
            stop_snap: 1e-8,
            res_tol: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn with_horizon(mut self, t: f64, j: usize) -> Self {
        self.horizon_t = t;
        self.horizon_j = j;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("tol_event", self.tol_event),
            ("tol_set", self.tol_set),
            ("h_viab", self.h_viab),
            ("max_step", self.max_step),
            ("min_step", self.min_step),
            ("branch_grid", self.branch_grid),
            ("res_tol", self.res_tol),
        ];
        for (field, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ConfigError::Invalid {
                    field,
                    requirement: "positive and finite",
                    value,
                });
            }
        }
        let non_negative = [
            ("viab_slope", self.viab_slope),
            ("stop_snap", self.stop_snap),
            ("horizon_T", self.horizon_t),
        ];
        for (field, value) in non_negative {
            if !(value >= 0.0) || value.is_nan() {
                return Err(ConfigError::Invalid {
                    field,
                    requirement: "non-negative",
                    value,
                });
            }
        }
        if self.max_branches == 0 {
            return Err(ConfigError::Invalid {
                field: "max_branches",
                requirement: ">= 1",
                value: 0.0,
            });
        }
        if self.min_step >= self.max_step {
            return Err(ConfigError::Invalid {
                field: "min_step",
                requirement: "below max_step",
                value: self.min_step,
            });
        }
        Ok(())
    }
}
