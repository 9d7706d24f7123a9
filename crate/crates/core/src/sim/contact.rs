//! Branch geometry and point contact against the branch cylinder.

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::math::Vec3;

/// Infinite horizontal cylinder acting as the perching target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchGeometry {
    pub center: Vec3,
    pub axis: Vec3,
    pub radius: f64,
}

impl Default for BranchGeometry {
    fn default() -> Self {
        Self {
            center: Vec3::new(0.0, 0.0, 2.0),
            axis: Vec3::Y,
            radius: 0.02,
        }
    }
}

impl BranchGeometry {
    pub fn new(center: Vec3, axis: Vec3, radius: f64) -> Result<Self, SimError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(SimError::InvalidGeometry(format!("branch radius must be > 0, got {radius}")));
        }
        if !center.is_finite() {
            return Err(SimError::InvalidGeometry("branch center is not finite".into()));
        }
        let axis = axis
            .try_normalize()
            .ok_or_else(|| SimError::InvalidGeometry("branch axis has zero length".into()))?;
        Ok(Self { center, axis, radius })
    }

    /// Component of `p - center` perpendicular to the axis.
    #[inline]
    pub fn radial_offset(&self, p: Vec3) -> Vec3 {
        let rel = p - self.center;
        rel - self.axis * rel.dot(self.axis)
    }

    #[inline]
    pub fn radial_distance(&self, p: Vec3) -> f64 {
        self.radial_offset(p).norm()
    }

    /// Orthonormal basis `(e1, e2)` of the plane normal to the axis.
    ///
    /// For the default Y axis this is `(+X, +Z)`, so angles measured with it
    /// are counterclockwise in the X-Z plane starting at +X.
    pub fn plane_basis(&self) -> (Vec3, Vec3) {
        let candidate = Vec3::X - self.axis * self.axis.x;
        let e1 = candidate
            .try_normalize()
            .unwrap_or_else(|| (Vec3::Z - self.axis * self.axis.z).try_normalize().unwrap_or(Vec3::Y));
        let e2 = e1.cross(self.axis);
        (e1, e2)
    }

    /// Angle of `p` about the branch axis in `(-π, π]`, or `None` on the axis.
    pub fn angle_of(&self, p: Vec3) -> Option<f64> {
        let r = self.radial_offset(p);
        if r.norm_squared() < 1e-24 {
            return None;
        }
        let (e1, e2) = self.plane_basis();
        Some(r.dot(e2).atan2(r.dot(e1)))
    }

    fn fallback_normal(&self) -> Vec3 {
        (Vec3::Z - self.axis * self.axis.z)
            .try_normalize()
            .unwrap_or_else(|| self.plane_basis().0)
    }
}

/// What `collide_cylinder` did to a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContactOutcome {
    Free,
    Projected,
    /// The point sat on the axis and was pushed along the fallback normal.
    Degenerate,
}

/// Pushes a penetrating point to the cylinder surface.
///
/// The normal velocity component is removed and the tangential part is
/// multiplied by `friction` (velocity retention in `[0, 1]`). Points on or
/// outside the surface are returned unchanged.
pub fn collide_cylinder(
    point: Vec3,
    velocity: Vec3,
    branch: &BranchGeometry,
    friction: f64,
) -> (Vec3, Vec3, ContactOutcome) {
    let radial = branch.radial_offset(point);
    let d = radial.norm();
    if d >= branch.radius {
        return (point, velocity, ContactOutcome::Free);
    }
    let (normal, outcome) = match radial.try_normalize() {
        Some(n) => (n, ContactOutcome::Projected),
        None => {
            log::debug!("tether point on branch axis, using fallback normal");
            (branch.fallback_normal(), ContactOutcome::Degenerate)
        }
    };
    let projected = point - radial + normal * branch.radius;
    (projected, filter_contact_velocity(velocity, normal, friction), outcome)
}

#[inline]
pub(crate) fn filter_contact_velocity(velocity: Vec3, normal: Vec3, friction: f64) -> Vec3 {
    let tangential = velocity - normal * velocity.dot(normal);
    tangential * friction
}

/// Position-only push-out of a point, used inside the projection loop.
/// Returns the applied correction length.
#[inline]
pub(crate) fn push_out_point(p: &mut Vec3, branch: &BranchGeometry) -> f64 {
    let radial = branch.radial_offset(*p);
    let d = radial.norm();
    if d >= branch.radius {
        return 0.0;
    }
    let normal = radial.try_normalize().unwrap_or_else(|| branch.fallback_normal());
    *p = *p - radial + normal * branch.radius;
    branch.radius - d
}
