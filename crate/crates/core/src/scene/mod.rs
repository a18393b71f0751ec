//! Gaussians, cameras and scenes.

mod camera;
mod gaussian;
pub mod io;
pub mod sh;

pub use camera::Camera;
pub use gaussian::{covariance, quat_to_rotmat, rotmat_to_quat, Gaussian3D};
pub use sh::{rgb_to_dc, sh_to_rgb, SH_C0};

use crate::error::{Error, Result};

/// An ordered set of Gaussians plus the radius of the scene bounding sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub gaussians: Vec<Gaussian3D>,
    pub extent: f64,
}

impl Scene {
    pub fn new(gaussians: Vec<Gaussian3D>, extent: f64) -> Self {
        Scene { gaussians, extent }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "scene extent must be positive, got {}",
                self.extent
            )));
        }
        for (i, g) in self.gaussians.iter().enumerate() {
            g.validate().map_err(|msg| Error::InvalidGaussian { index: i, msg })?;
        }
        Ok(())
    }
}
