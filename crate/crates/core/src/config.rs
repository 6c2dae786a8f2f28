//! Numerical thresholds used across the pipeline.
//!
//! Every constant is overridable by key so sensitivity studies can vary them
//! without recompiling (`--set eps_sing=1e-7` on the command line).

use crate::error::{Error, Result};
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds {
    /// Bus-voltage floor for constant-power current evaluation (pu).
    pub eps_v: f64,
    /// |lambda1| below this counts as on the singular surface.
    pub eps_sing: f64,
    /// Minimum eigenvalue separation of D_y g.
    pub eps_gap: f64,
    /// Algebraic residual accepted as g = 0 for pseudo-equilibria.
    pub eps_g: f64,
    /// Pseudo-equilibrium residual |u1 v1^T (D_x g) f|.
    pub eps_psi: f64,
    /// Semi-singular scalar threshold.
    pub eps_xi: f64,
    /// |lambda1| below this is "near" the singular surface.
    pub eps_near: f64,
    /// Newton tolerance on |g|_inf during simulation.
    pub eps_alg: f64,
    /// Relative imaginary-part tolerance for the real-spectrum check.
    pub eps_complex_rel: f64,
    /// Absolute imaginary-part tolerance for the real-spectrum check.
    pub eps_complex_abs: f64,
    /// Non-negligible eigenvalue threshold of the transformed Jacobian,
    /// relative to its norm.
    pub eps_eig_rel: f64,
    /// Newton iteration cap for the algebraic solve.
    pub newton_max_iter: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            eps_v: 1e-3,
            eps_sing: 1e-6,
            eps_gap: 1e-8,
            eps_g: 1e-8,
            eps_psi: 1e-6,
            eps_xi: 1e-4,
            eps_near: 1e-2,
            eps_alg: 1e-10,
            eps_complex_rel: 1e-6,
            eps_complex_abs: 1e-9,
            eps_eig_rel: 1e-5,
            newton_max_iter: 50,
        }
    }
}

impl Thresholds {
    pub const KEYS: [&'static str; 12] = [
        "eps_v",
        "eps_sing",
        "eps_gap",
        "eps_g",
        "eps_psi",
        "eps_xi",
        "eps_near",
        "eps_alg",
        "eps_complex_rel",
        "eps_complex_abs",
        "eps_eig_rel",
        "newton_max_iter",
    ];

    /// Applies a single `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let parse = |v: &str| -> Result<f64> {
            v.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("{key}={v}: {e}")))
        };
        match key {
            "eps_v" => self.eps_v = parse(value)?,
            "eps_sing" => self.eps_sing = parse(value)?,
            "eps_gap" => self.eps_gap = parse(value)?,
            "eps_g" => self.eps_g = parse(value)?,
            "eps_psi" => self.eps_psi = parse(value)?,
            "eps_xi" => self.eps_xi = parse(value)?,
            "eps_near" => self.eps_near = parse(value)?,
            "eps_alg" => self.eps_alg = parse(value)?,
            "eps_complex_rel" => self.eps_complex_rel = parse(value)?,
            "eps_complex_abs" => self.eps_complex_abs = parse(value)?,
            "eps_eig_rel" => self.eps_eig_rel = parse(value)?,
            "newton_max_iter" => {
                self.newton_max_iter = value
                    .trim()
                    .parse()
                    .map_err(|e| Error::Parse(format!("{key}={value}: {e}")))?
            }
            _ => return Err(Error::Parse(format!("unknown threshold key `{key}`"))),
        }
        Ok(())
    }
}

impl fmt::Display for Thresholds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "eps_v={:e} eps_sing={:e} eps_gap={:e} eps_g={:e} eps_psi={:e} eps_xi={:e} \
             eps_near={:e} eps_alg={:e} eps_complex_rel={:e} eps_complex_abs={:e} \
             eps_eig_rel={:e} newton_max_iter={}",
            self.eps_v,
            self.eps_sing,
            self.eps_gap,
            self.eps_g,
            self.eps_psi,
            self.eps_xi,
            self.eps_near,
            self.eps_alg,
            self.eps_complex_rel,
            self.eps_complex_abs,
            self.eps_eig_rel,
            self.newton_max_iter
        )
    }
}
