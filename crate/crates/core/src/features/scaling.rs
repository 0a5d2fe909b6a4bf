//! Compound scaling of depth, width and input resolution.

use super::backbone::BackboneConfig;
use super::FeatureError;

/// Tolerance on `alpha * beta^2 * gamma^2 - 2` accepted by [`compound_scale`].
pub const DEFAULT_CONSTRAINT_TOLERANCE: f64 = 0.2;

/// Global coefficient `phi` and the per-dimension bases.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompoundScale {
    pub phi: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma_res: f64,
}

/// Multipliers produced by a [`CompoundScale`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleFactors {
    pub depth: f64,
    pub width: f64,
    pub resolution: f64,
    /// `alpha * beta^2 * gamma^2 - 2`.
    pub residual: f64,
}

impl CompoundScale {
    /// Grid-searched EfficientNet bases (depth 1.2, width 1.1, resolution 1.15).
    pub fn efficientnet(phi: f64) -> Self {
        Self {
            phi,
            alpha: 1.2,
            beta: 1.1,
            gamma_res: 1.15,
        }
    }

    pub fn new(phi: f64, alpha: f64, beta: f64, gamma_res: f64) -> Result<Self, FeatureError> {
        let s = Self {
            phi,
            alpha,
            beta,
            gamma_res,
        };
        if !phi.is_finite() || [alpha, beta, gamma_res].iter().any(|&b| !(b.is_finite() && b >= 1.0)) {
            return Err(FeatureError::InvalidScale(format!(
                "phi={phi} alpha={alpha} beta={beta} gamma={gamma_res}; bases must be >= 1"
            )));
        }
        Ok(s)
    }

    /// FLOP growth per unit of `phi`: `alpha * beta^2 * gamma^2`.
    pub fn constraint_product(&self) -> f64 {
        self.alpha * self.beta * self.beta * self.gamma_res * self.gamma_res
    }

    pub fn factors(&self) -> ScaleFactors {
        ScaleFactors {
            depth: self.alpha.powf(self.phi),
            width: self.beta.powf(self.phi),
            resolution: self.gamma_res.powf(self.phi),
            residual: self.constraint_product() - 2.0,
        }
    }

    /// Fails with `ConstraintViolation` when the product strays more than
    /// `tolerance` from 2.
    pub fn check(&self, tolerance: f64) -> Result<(), FeatureError> {
        let residual = self.constraint_product() - 2.0;
        if residual.abs() > tolerance {
            return Err(FeatureError::ConstraintViolation { residual, tolerance });
        }
        Ok(())
    }
}

/// `(alpha^phi, beta^phi, gamma^phi)` after validating the bases and the
/// constraint at [`DEFAULT_CONSTRAINT_TOLERANCE`].
pub fn compound_scale(phi: f64, alpha: f64, beta: f64, gamma_res: f64) -> Result<ScaleFactors, FeatureError> {
    let s = CompoundScale::new(phi, alpha, beta, gamma_res)?;
    s.check(DEFAULT_CONSTRAINT_TOLERANCE)?;
    Ok(s.factors())
}

/// Channel count rounded to the nearest multiple of 8, never below 8.
pub fn round_channels(channels: f64) -> usize {
    (((channels / 8.0).round() as usize) * 8).max(8)
}

/// Applies depth, width and resolution multipliers to a base configuration.
/// The head width stays fixed since it defines the feature dimension.
pub fn scaled_config(base: &BackboneConfig, s: &CompoundScale) -> BackboneConfig {
    let f = s.factors();
    let mut out = base.clone();
    if f.width != 1.0 {
        out.stem_channels = round_channels(base.stem_channels as f64 * f.width);
    }
    for stage in &mut out.stages {
        if f.depth != 1.0 {
            stage.blocks = (stage.blocks as f64 * f.depth).ceil() as usize;
        }
        if f.width != 1.0 {
            stage.channels = round_channels(stage.channels as f64 * f.width);
        }
    }
    if f.resolution != 1.0 {
        out.input_size = (base.input_size as f64 * f.resolution).round() as usize;
    }
    out
}
