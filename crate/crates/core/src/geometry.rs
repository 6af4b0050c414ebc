//! Trajectory types, agent-centric normalization and point-sequence distances.
//!
//! All geometry is carried in `f64`. A trajectory is an ordered sequence of
//! planar points sampled at a uniform (implicit) timestep.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Displacements shorter than this are treated as zero.
pub const ZERO_DISPLACEMENT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Point { x, y }
    }
}

/// A raw trajectory as recorded (or generated) in some world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub label: Option<String>,
    pub points: Vec<Point>,
}

impl Trajectory {
    /// Builds a trajectory and checks `T >= 2` and finiteness.
    pub fn new(id: impl Into<String>, label: Option<String>, points: Vec<Point>) -> Result<Self> {
        let traj = Trajectory {
            id: id.into(),
            label,
            points,
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn from_xy(id: impl Into<String>, xy: &[(f64, f64)]) -> Result<Self> {
        Self::new(id, None, xy.iter().copied().map(Point::from).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::DegenerateTrajectory {
                id: self.id.clone(),
                reason: format!("needs at least 2 points, has {}", self.points.len()),
            });
        }
        if let Some(i) = self.points.iter().position(|p| !p.is_finite()) {
            return Err(Error::DegenerateTrajectory {
                id: self.id.clone(),
                reason: format!("point {i} is not finite"),
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Rigid transform taking world coordinates into the canonical frame:
/// `canonical = R(rotation) * (world + translation)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Transform {
    pub translation: Point,
    pub rotation: f64,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        translation: Point::ORIGIN,
        rotation: 0.0,
    };

    pub fn apply(&self, p: Point) -> Point {
        let (s, c) = self.rotation.sin_cos();
        let x = p.x + self.translation.x;
        let y = p.y + self.translation.y;
        Point::new(c * x - s * y, s * x + c * y)
    }

    pub fn invert(&self, p: Point) -> Point {
        let (s, c) = self.rotation.sin_cos();
        let x = c * p.x + s * p.y;
        let y = -s * p.x + c * p.y;
        Point::new(x - self.translation.x, y - self.translation.y)
    }
}

/// Origin-anchored trajectory whose overall displacement points along +x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedTrajectory {
    pub source_id: String,
    pub label: Option<String>,
    pub points: Vec<Point>,
    pub transform: Transform,
}

impl NormalizedTrajectory {
    /// Wraps points that are already in the canonical frame (e.g. reloaded from a bank).
    pub fn from_canonical(source_id: impl Into<String>, label: Option<String>, points: Vec<Point>) -> Self {
        Self {
            source_id: source_id.into(),
            label,
            points,
            transform: Transform::IDENTITY,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn endpoint(&self) -> Point {
        *self.points.last().expect("normalized trajectories are never empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplacementVector {
    pub dx: f64,
    pub dy: f64,
}

impl DisplacementVector {
    pub fn norm(&self) -> f64 {
        self.dx.hypot(self.dy)
    }

    pub fn is_zero(&self) -> bool {
        self.norm() < ZERO_DISPLACEMENT_EPS
    }

    pub fn cosine(&self, other: &DisplacementVector) -> Option<f64> {
        let na = self.norm();
        let nb = other.norm();
        if na < ZERO_DISPLACEMENT_EPS || nb < ZERO_DISPLACEMENT_EPS {
            return None;
        }
        let c = (self.dx * other.dx + self.dy * other.dy) / (na * nb);
        Some(c.clamp(-1.0, 1.0))
    }
}

/// Translates the first point to the origin and rotates the overall
/// displacement onto +x.
///
/// For (near) zero overall displacement the first segment longer than
/// [`ZERO_DISPLACEMENT_EPS`] sets the heading instead; if every segment is
/// that short the rotation is the identity.
pub fn normalize(traj: &Trajectory) -> Result<NormalizedTrajectory> {
    traj.validate()?;
    let first = traj.points[0];
    let last = traj.points[traj.points.len() - 1];
    let heading_vec = if last.dist(first) >= ZERO_DISPLACEMENT_EPS {
        Some(Point::new(last.x - first.x, last.y - first.y))
    } else {
        traj.points
            .windows(2)
            .find(|w| w[1].dist(w[0]) >= ZERO_DISPLACEMENT_EPS)
            .map(|w| Point::new(w[1].x - w[0].x, w[1].y - w[0].y))
    };
    let rotation = heading_vec.map_or(0.0, |v| -v.y.atan2(v.x));
    let transform = Transform {
        translation: Point::new(-first.x, -first.y),
        rotation,
    };
    let mut points: Vec<Point> = traj.points.iter().map(|&p| transform.apply(p)).collect();
    // first + (-first) is exactly zero before rotation, so this is already (0, 0);
    // pin it anyway so `-0.0` never leaks out.
    points[0] = Point::ORIGIN;
    Ok(NormalizedTrajectory {
        source_id: traj.id.clone(),
        label: traj.label.clone(),
        points,
        transform,
    })
}

pub fn denormalize(nt: &NormalizedTrajectory) -> Trajectory {
    Trajectory {
        id: nt.source_id.clone(),
        label: nt.label.clone(),
        points: nt.points.iter().map(|&p| nt.transform.invert(p)).collect(),
    }
}

pub fn displacement(points: &[Point]) -> DisplacementVector {
    match (points.first(), points.last()) {
        (Some(a), Some(b)) => DisplacementVector {
            dx: b.x - a.x,
            dy: b.y - a.y,
        },
        _ => DisplacementVector { dx: 0.0, dy: 0.0 },
    }
}

/// Average displacement error: mean pointwise Euclidean distance.
pub fn ade(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptySequence);
    }
    let sum: f64 = a.iter().zip(b).map(|(p, q)| p.dist(*q)).sum();
    Ok(sum / a.len() as f64)
}

/// Final displacement error: distance between the last points.
pub fn fde(a: &[Point], b: &[Point]) -> Result<f64> {
    match (a.last(), b.last()) {
        (Some(p), Some(q)) => Ok(p.dist(*q)),
        _ => Err(Error::EmptySequence),
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use proptest::prelude::*;

    use super::*;

    fn pts(xy: &[(f64, f64)]) -> Vec<Point> {
        xy.iter().copied().map(Point::from).collect()
    }

    #[test]
    fn normalize_shifts_east_facing_segment() {
        let t = Trajectory::from_xy("a", &[(1.0, 1.0), (2.0, 1.0)]).unwrap();
        let n = normalize(&t).unwrap();
        assert_eq!(n.points, pts(&[(0.0, 0.0), (1.0, 0.0)]));
        assert_eq!(n.transform.translation, Point::new(-1.0, -1.0));
        assert_eq!(n.transform.rotation, 0.0);
    }

    #[test]
    fn normalize_rotates_north_segment_onto_x() {
        let t = Trajectory::from_xy("a", &[(0.0, 0.0), (0.0, 2.0)]).unwrap();
        let n = normalize(&t).unwrap();
        assert!((n.transform.rotation + FRAC_PI_2).abs() < 1e-15);
        // R(-pi/2) (0, 2) = (2, 0)
        assert!((n.points[1].x - 2.0).abs() < 1e-12);
        assert!(n.points[1].y.abs() < 1e-12);
    }

    #[test]
    fn normalize_static_trajectory_uses_identity() {
        let t = Trajectory::from_xy("a", &[(5.0, 5.0), (5.0, 5.0), (5.0, 5.0)]).unwrap();
        let n = normalize(&t).unwrap();
        assert_eq!(n.transform.rotation, 0.0);
        assert!(n.points.iter().all(|p| *p == Point::ORIGIN));
    }

    #[test]
    fn normalize_closed_loop_falls_back_to_first_segment() {
        let t = Trajectory::from_xy("a", &[(0.0, 0.0), (0.0, 1.0), (0.0, 0.0)]).unwrap();
        let n = normalize(&t).unwrap();
        assert!((n.transform.rotation + FRAC_PI_2).abs() < 1e-15);
        assert!((n.points[1].x - 1.0).abs() < 1e-12);
    }

    #[test]
    fn short_trajectory_is_rejected() {
        let t = Trajectory {
            id: "x".into(),
            label: None,
            points: pts(&[(0.0, 0.0)]),
        };
        assert!(matches!(normalize(&t), Err(Error::DegenerateTrajectory { .. })));
        assert!(Trajectory::from_xy("y", &[(f64::NAN, 0.0), (1.0, 1.0)]).is_err());
    }

    #[test]
    fn denormalize_inverts_known_transform() {
        let nt = NormalizedTrajectory {
            source_id: "s".into(),
            label: None,
            points: pts(&[(0.0, 0.0), (1.0, 0.0)]),
            transform: Transform {
                translation: Point::new(-1.0, -1.0),
                rotation: 0.0,
            },
        };
        assert_eq!(denormalize(&nt).points, pts(&[(1.0, 1.0), (2.0, 1.0)]));
        let ident = NormalizedTrajectory::from_canonical("s", None, pts(&[(0.0, 0.0), (3.0, 4.0)]));
        assert_eq!(denormalize(&ident).points, ident.points);
    }

    #[test]
    fn ade_fixtures() {
        let a = pts(&[(0.0, 0.0), (1.0, 0.0)]);
        let b = pts(&[(0.0, 0.0), (0.0, 1.0)]);
        assert_eq!(ade(&a, &a).unwrap(), 0.0);
        assert!((ade(&a, &b).unwrap() - std::f64::consts::SQRT_2 / 2.0).abs() < 1e-15);
        let shifted: Vec<Point> = a.iter().map(|p| Point::new(p.x, p.y + 1.0)).collect();
        assert_eq!(ade(&a, &shifted).unwrap(), 1.0);
        assert!(matches!(ade(&a, &a[..1]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn fde_fixtures() {
        assert_eq!(fde(&pts(&[(1.0, 0.0)]), &pts(&[(0.0, 0.0)])).unwrap(), 1.0);
        assert_eq!(
            fde(&pts(&[(0.0, 0.0), (3.0, 4.0)]), &pts(&[(9.0, 9.0), (0.0, 0.0)])).unwrap(),
            5.0
        );
        assert!(matches!(fde(&[], &pts(&[(0.0, 0.0)])), Err(Error::EmptySequence)));
    }

    #[test]
    fn displacement_fixtures() {
        let d = displacement(&pts(&[(0.0, 0.0), (2.0, 0.0)]));
        assert_eq!((d.dx, d.dy), (2.0, 0.0));
        let d = displacement(&pts(&[(0.0, 0.0), (1.0, 1.0), (0.0, 0.0)]));
        assert!(d.is_zero());
        let d = displacement(&pts(&[(0.0, 0.0), (3.0, 0.0), (3.0, 4.0)]));
        assert_eq!((d.dx, d.dy), (3.0, 4.0));
    }

    fn arb_traj() -> impl Strategy<Value = Trajectory> {
        prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 2..40)
            .prop_map(|xy| Trajectory::from_xy("p", &xy).unwrap())
    }

    proptest! {
        #[test]
        fn normalize_invariants(t in arb_traj()) {
            let n = normalize(&t).unwrap();
            prop_assert_eq!(n.points[0], Point::ORIGIN);
            let d = displacement(&n.points);
            if d.norm() >= ZERO_DISPLACEMENT_EPS {
                prop_assert!(d.dy.abs() <= 1e-9 * d.norm());
            }
            let back = denormalize(&n);
            for (p, q) in back.points.iter().zip(&t.points) {
                prop_assert!((p.x - q.x).abs() < 1e-9 && (p.y - q.y).abs() < 1e-9);
            }
            // rigid: pairwise distances preserved
            for i in 0..t.len() {
                for j in (i + 1)..t.len() {
                    let before = t.points[i].dist(t.points[j]);
                    let after = n.points[i].dist(n.points[j]);
                    prop_assert!((before - after).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn normalize_is_idempotent(t in arb_traj()) {
            let n = normalize(&t).unwrap();
            let again = Trajectory { id: "n".into(), label: None, points: n.points.clone() };
            let n2 = normalize(&again).unwrap();
            prop_assert!(n2.transform.rotation.abs() < 1e-9);
            prop_assert!(n2.transform.translation.norm() < 1e-9);
        }

        #[test]
        fn ade_fde_are_pseudometrics(
            pts3 in prop::collection::vec(((-50.0f64..50.0, -50.0f64..50.0), (-50.0f64..50.0, -50.0f64..50.0), (-50.0f64..50.0, -50.0f64..50.0)), 1..20)
        ) {
            let a: Vec<Point> = pts3.iter().map(|t| t.0.into()).collect();
            let b: Vec<Point> = pts3.iter().map(|t| t.1.into()).collect();
            let c: Vec<Point> = pts3.iter().map(|t| t.2.into()).collect();
            for f in [ade, fde] {
                let ab = f(&a, &b).unwrap();
                prop_assert!(ab >= 0.0);
                prop_assert_eq!(ab, f(&b, &a).unwrap());
                prop_assert_eq!(f(&a, &a).unwrap(), 0.0);
                prop_assert!(ab <= f(&a, &c).unwrap() + f(&c, &b).unwrap() + 1e-12);
            }
        }
    }
}
