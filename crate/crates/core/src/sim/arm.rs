//! Planar serial arm: kinematics, silhouette rendering and inverse
//! displacement.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmSpec {
    pub link_lengths: Vec<f64>,
    pub link_thickness: f64,
    pub base_position: [f64; 2],
    pub pixels_per_cm: f64,
    pub height: usize,
    pub width: usize,
}

impl Default for ArmSpec {
    fn default() -> Self {
        Self {
            link_lengths: vec![6.0, 5.0, 4.0, 3.0, 2.0, 1.5],
            link_thickness: 1.5,
            base_position: [24.0, 24.0],
            pixels_per_cm: 2.0,
            height: 96,
            width: 96,
        }
    }
}

/// Binary silhouette, row-major `H x W`, row 0 at the top of the image.
pub type Mask = Vec<u8>;

impl ArmSpec {
    pub fn joints(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    /// Frame extent in cm, `(x, y)`.
    pub fn extent(&self) -> (f64, f64) {
        (self.width as f64 / self.pixels_per_cm, self.height as f64 / self.pixels_per_cm)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.link_lengths.is_empty() || self.link_lengths.iter().any(|&l| !(l.is_finite() && l >= 0.0)) {
            return Err(Error::Config(format!("invalid link lengths {:?}", self.link_lengths)));
        }
        if !positive(self.link_thickness) || !positive(self.pixels_per_cm) || self.height == 0 || self.width == 0 {
            return Err(Error::Config("arm thickness, scale and image size must be positive".into()));
        }
        let (ex, ey) = self.extent();
        let r = self.reach() + self.link_thickness;
        let [bx, by] = self.base_position;
        if bx - r < 0.0 || bx + r > ex || by - r < 0.0 || by + r > ey {
            return Err(Error::Config(format!(
                "reach {} cm plus margin {} cm does not fit a {ex} x {ey} cm frame around base ({bx}, {by})",
                self.reach(),
                self.link_thickness
            )));
        }
        Ok(())
    }
}

/// Joint positions in cm, base first and end-effector last; `angles` in degrees.
pub fn forward_kinematics(angles: &[f64], arm: &ArmSpec) -> Vec<[f64; 2]> {
    let mut p = arm.base_position;
    let mut phi = 0.0;
    let mut out = Vec::with_capacity(angles.len() + 1);
    out.push(p);
    for (a, l) in angles.iter().zip(&arm.link_lengths) {
        phi += a.to_radians();
        p = [p[0] + l * phi.cos(), p[1] + l * phi.sin()];
        out.push(p);
    }
    out
}

/// End-effector Jacobian in cm per radian, `2 x J`.
pub fn jacobian(angles: &[f64], arm: &ArmSpec) -> DMatrix<f64> {
    let pts = forward_kinematics(angles, arm);
    let end = pts[pts.len() - 1];
    DMatrix::from_fn(2, angles.len(), |r, k| {
        let p = pts[k];
        if r == 0 {
            -(end[1] - p[1])
        } else {
            end[0] - p[0]
        }
    })
}

fn segment_distance2(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let (px, py) = (p[0] - a[0], p[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let s = if len2 > 0.0 { ((px * dx + py * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (ex, ey) = (px - s * dx, py - s * dy);
    ex * ex + ey * ey
}

/// Rasterizes the union of link capsules. Pixel `(row, col)` samples the
/// point `((col + 0.5) / ppcm, (H - row - 0.5) / ppcm)`.
pub fn render_mask(angles: &[f64], arm: &ArmSpec) -> Result<Mask> {
    if angles.len() != arm.joints() {
        return Err(shape_err(format!("{} angles for a {}-joint arm", angles.len(), arm.joints())));
    }
    let pts = forward_kinematics(angles, arm);
    let (ex, ey) = arm.extent();
    let r = 0.5 * arm.link_thickness;
    if pts.iter().any(|p| p[0] - r < 0.0 || p[0] + r > ex || p[1] - r < 0.0 || p[1] + r > ey) {
        return Err(Error::ArmOutOfFrame { frame: 0 });
    }
    let (h, w, s) = (arm.height, arm.width, arm.pixels_per_cm);
    let mut mask = vec![0u8; h * w];
    for seg in pts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let col_range = |lo: f64, hi: f64| {
            let c0 = ((lo - r) * s - 0.5).floor().max(0.0) as usize;
            let c1 = (((hi + r) * s - 0.5).ceil().max(0.0) as usize).min(w - 1);
            c0..=c1
        };
        let row_range = |lo: f64, hi: f64| {
            let r0 = ((h as f64 - (hi + r) * s - 0.5).floor().max(0.0)) as usize;
            let r1 = ((h as f64 - (lo - r) * s - 0.5).ceil().max(0.0) as usize).min(h - 1);
            r0..=r1
        };
        for row in row_range(a[1].min(b[1]), a[1].max(b[1])) {
            let y = (h as f64 - row as f64 - 0.5) / s;
            for col in col_range(a[0].min(b[0]), a[0].max(b[0])) {
                let x = (col as f64 + 0.5) / s;
                if segment_distance2([x, y], a, b) <= r * r {
                    mask[row * w + col] = 1;
                }
            }
        }
    }
    Ok(mask)
}

/// Minimum-norm joint increment (degrees) moving the end-effector by
/// `d_cm` along the unit vector `direction`.
///
/// A damped least-squares step on the Jacobian is refined by up to five
/// Newton corrections on the exact kinematics until the achieved
/// displacement is within 2% of `d_cm`. Moves longer than half a
/// centimetre are split into equal legs along the straight path.
pub fn perturb_for_displacement(angles: &[f64], arm: &ArmSpec, d_cm: f64, direction: [f64; 2]) -> Result<DVector<f64>> {
    const DAMPING: f64 = 1e-6;
    const TOLERANCE: f64 = 0.02;
    const MAX_LEG: f64 = 0.5;
    let j = angles.len();
    if j != arm.joints() {
        return Err(shape_err(format!("{j} angles for a {}-joint arm", arm.joints())));
    }
    if !(d_cm >= 0.0 && d_cm <= 0.5 * arm.reach()) {
        return Err(Error::InvalidArgument(format!(
            "displacement {d_cm} cm outside [0, {}] cm",
            0.5 * arm.reach()
        )));
    }
    let n = Vector2::from(direction);
    if (n.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument("displacement direction must be a unit vector".into()));
    }
    if d_cm == 0.0 {
        return Ok(DVector::zeros(j));
    }
    let end = |a: &[f64]| Vector2::from(*forward_kinematics(a, arm).last().expect("non-empty chain"));
    let start = end(angles);
    let target = n * d_cm;
    // `J^T (J J^T + lambda^2 I)^-1 e`, in degrees
    let dls = |a: &[f64], e: Vector2<f64>| -> Result<DVector<f64>> {
        let jac = jacobian(a, arm);
        let jjt = Matrix2::from_iterator((&jac * jac.transpose()).iter().copied());
        let sv = jjt.symmetric_eigenvalues();
        if sv.min() <= 1e-12 * arm.reach().powi(2) {
            return Err(Error::SingularJacobian { frame: 0 });
        }
        let y = (jjt + Matrix2::identity() * DAMPING * DAMPING)
            .try_inverse()
            .ok_or(Error::SingularJacobian { frame: 0 })?
            * e;
        Ok((jac.transpose() * DVector::from_column_slice(y.as_slice())).map(f64::to_degrees))
    };
    // Large moves follow the straight task-space path in short legs so the
    // linearization stays valid; a short move is a single step.
    let legs = (d_cm / MAX_LEG).ceil().max(1.0) as usize;
    let mut delta = DVector::zeros(j);
    let mut moved: Vec<f64> = angles.to_vec();
    for leg in 1..=legs {
        let goal = target * (leg as f64 / legs as f64);
        delta += dls(&moved, goal - (end(&moved) - start))?;
        moved.iter_mut().zip(angles).zip(delta.iter()).for_each(|((m, a), d)| *m = a + d);
    }
    for _ in 0..5 {
        let err = target - (end(&moved) - start);
        if err.norm() <= 1e-3 * TOLERANCE * d_cm {
            return Ok(delta);
        }
        delta += dls(&moved, err)?;
        moved.iter_mut().zip(angles).zip(delta.iter()).for_each(|((m, a), d)| *m = a + d);
    }
    let achieved = (end(&moved) - start - target).norm();
    if achieved <= TOLERANCE * d_cm {
        Ok(delta)
    } else {
        Err(Error::NonConvergence(format!(
            "displacement error {achieved:.3e} cm exceeds 2% of {d_cm} cm"
        )))
    }
}
