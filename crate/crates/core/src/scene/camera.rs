use nalgebra::{Matrix3, Vector3};

/// Pinhole view. The columns of `r_c2w` are the camera right, down and
/// forward axes in world coordinates; pixel `(x, y)` sits at integer
/// coordinates with `(p_x, p_y)` on the optical axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub r_c2w: Matrix3<f64>,
    pub center: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub px: f64,
    pub py: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Camera at `center` looking at `target`, with `up` used to fix the roll.
    pub fn look_at(
        center: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let forward = (target - center).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        Camera {
            r_c2w: Matrix3::from_columns(&[right, down, forward]),
            center,
            fx: focal,
            fy: focal,
            px: (width as f64 - 1.0) / 2.0,
            py: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    pub fn right(&self) -> Vector3<f64> {
        self.r_c2w.column(0).into_owned()
    }

    pub fn down(&self) -> Vector3<f64> {
        self.r_c2w.column(1).into_owned()
    }

    pub fn forward(&self) -> Vector3<f64> {
        self.r_c2w.column(2).into_owned()
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.r_c2w.transpose() * (p - self.center)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn validate(&self) -> Result<(), String> {
        let ortho = (self.r_c2w.transpose() * self.r_c2w - Matrix3::identity()).abs().max();
        if !(ortho < 1e-8) {
            return Err(format!("r_c2w is not orthonormal (deviation {ortho:e})"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(format!("focal lengths must be positive: {} {}", self.fx, self.fy));
        }
        if self.width == 0 || self.height == 0 {
            return Err("image size must be non-zero".into());
        }
        if !(self.px >= 0.0 && self.px < self.width as f64) {
            return Err(format!("p_x {} outside [0, {})", self.px, self.width));
        }
        if !(self.py >= 0.0 && self.py < self.height as f64) {
            return Err(format!("p_y {} outside [0, {})", self.py, self.height));
        }
        if !self.center.iter().all(|v| v.is_finite()) {
            return Err("non-finite camera center".into());
        }
        Ok(())
    }
}
