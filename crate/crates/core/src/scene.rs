//! Static street environment and exact specular multipath geometry.
//!
//! Paths are found with the image method: the BS is mirrored across each
//! vertical building facade (twice for second-order reflections) and the
//! straight line from the image to the UE gives the reflection points. A path
//! exists only if every reflection point lies on its facade and every leg is
//! free of building interiors.
//!
//! Angles of arrival are expressed in the BS frame, which coincides with the
//! scene axes: azimuth is measured in the horizontal plane from +x toward +y,
//! elevation from the horizontal plane toward +z. The planar array faces +x,
//! so scenes place the street in front of the BS.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{PemError, Result};
use crate::geom::{Vec3, SPEED_OF_LIGHT};

/// Tolerance used for on-facade and blockage tests, in meters / segment fraction.
const GEOM_EPS: f64 = 1e-9;

fn default_loss_db() -> f64 {
    6.0
}

fn default_bounces() -> usize {
    1
}

/// Axis-aligned rectangular prism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub min: Vec3,
    pub max: Vec3,
}

impl Building {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Building { min: min.into(), max: max.into() }
    }

    /// Strict interior test (boundary points are outside).
    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|i| p.axis(i) > self.min.axis(i) && p.axis(i) < self.max.axis(i))
    }

    fn overlaps(&self, o: &Building) -> bool {
        (0..3).all(|i| {
            self.min.axis(i) < o.max.axis(i) - GEOM_EPS && o.min.axis(i) < self.max.axis(i) - GEOM_EPS
        })
    }

    /// True if the open segment a-b passes through the open interior of the box.
    pub fn blocks(&self, a: Vec3, b: Vec3) -> bool {
        let d = b - a;
        let mut t_enter = 0.0f64;
        let mut t_exit = 1.0f64;
        for i in 0..3 {
            let (lo, hi) = (self.min.axis(i), self.max.axis(i));
            let (o, di) = (a.axis(i), d.axis(i));
            if di.abs() < 1e-15 {
                if o <= lo + GEOM_EPS || o >= hi - GEOM_EPS {
                    return false;
                }
            } else {
                let t1 = (lo - o) / di;
                let t2 = (hi - o) / di;
                let (near, far) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
                t_enter = t_enter.max(near);
                t_exit = t_exit.min(far);
            }
        }
        // Overlap of positive length strictly inside (0, 1); touching an endpoint
        // on a face (reflection points) does not count.
        let len = d.norm().max(1e-12);
        t_exit - t_enter > GEOM_EPS / len && t_exit > GEOM_EPS && t_enter < 1.0 - GEOM_EPS
    }
}

/// One vertical face of a building.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Facade {
    pub id: usize,
    pub building: usize,
    /// 0 for a face of constant x, 1 for constant y.
    pub axis: usize,
    pub coord: f64,
    /// +1 if the face looks toward increasing `axis`, -1 otherwise.
    pub outward: f64,
    /// Extent along the other horizontal axis.
    pub span: (f64, f64),
    pub z_span: (f64, f64),
}

impl Facade {
    fn other_axis(&self) -> usize {
        1 - self.axis
    }

    fn mirror(&self, p: Vec3) -> Vec3 {
        p.with_axis(self.axis, 2.0 * self.coord - p.axis(self.axis))
    }

    fn in_front(&self, p: Vec3) -> bool {
        (p.axis(self.axis) - self.coord) * self.outward > GEOM_EPS
    }

    /// Intersection of segment from->to with the facade plane, if the crossing
    /// is strictly between the endpoints and inside the facade rectangle.
    fn hit(&self, from: Vec3, to: Vec3) -> Option<Vec3> {
        let a = from.axis(self.axis);
        let b = to.axis(self.axis);
        if (b - a).abs() < 1e-15 {
            return None;
        }
        let t = (self.coord - a) / (b - a);
        if t <= 0.0 || t >= 1.0 {
            return None;
        }
        let p = from + (to - from) * t;
        let o = p.axis(self.other_axis());
        let inside = o >= self.span.0 - GEOM_EPS
            && o <= self.span.1 + GEOM_EPS
            && p.z >= self.z_span.0 - GEOM_EPS
            && p.z <= self.z_span.1 + GEOM_EPS;
        // Snap exactly onto the plane.
        inside.then(|| p.with_axis(self.axis, self.coord))
    }
}

/// Ground-truth street environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(rename = "bs")]
    pub bs_position: Vec3,
    pub carrier_hz: f64,
    #[serde(default = "default_loss_db")]
    pub reflection_loss_db: f64,
    #[serde(default = "default_bounces")]
    pub max_bounces: usize,
    #[serde(default)]
    pub buildings: Vec<Building>,
}

/// Kind of a geometric path.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PathKind {
    LoS,
    /// Facade ids in propagation order from the BS side.
    Reflection(Vec<usize>),
}

impl PathKind {
    pub fn bounces(&self) -> usize {
        match self {
            PathKind::LoS => 0,
            PathKind::Reflection(f) => f.len(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            PathKind::LoS => "los".to_string(),
            PathKind::Reflection(f) => {
                let ids: Vec<String> = f.iter().map(|i| format!("f{i}")).collect();
                format!("refl-{}", ids.join("-"))
            }
        }
    }
}

/// Exact propagation path between BS and UE at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoPath {
    pub kind: PathKind,
    pub length_m: f64,
    pub delay_s: f64,
    pub azimuth_rad: f64,
    pub elevation_rad: f64,
    pub gain: Complex64,
    pub doppler_hz: f64,
    /// Reflection points, BS side first.
    pub points: Vec<Vec3>,
}

impl Scene {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let scene: Scene = serde_json::from_str(s)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_hz > 0.0 && self.carrier_hz.is_finite()) {
            return Err(PemError::InvalidScene(format!("carrier_hz must be > 0, got {}", self.carrier_hz)));
        }
        if !(self.reflection_loss_db >= 0.0) {
            return Err(PemError::InvalidScene("reflection_loss_db must be >= 0".into()));
        }
        if self.max_bounces > 2 {
            return Err(PemError::InvalidScene(format!("max_bounces must be 0, 1 or 2, got {}", self.max_bounces)));
        }
        if !self.bs_position.is_finite() {
            return Err(PemError::InvalidScene("BS position is not finite".into()));
        }
        for (i, b) in self.buildings.iter().enumerate() {
            if (0..3).any(|k| b.min.axis(k) >= b.max.axis(k)) {
                return Err(PemError::InvalidScene(format!("building {i} has empty extent")));
            }
            if b.contains(self.bs_position) {
                return Err(PemError::InvalidScene(format!("BS lies inside building {i}")));
            }
            for (j, o) in self.buildings.iter().enumerate().skip(i + 1) {
                if b.overlaps(o) {
                    return Err(PemError::InvalidScene(format!("buildings {i} and {j} overlap")));
                }
            }
        }
        Ok(())
    }

    /// All vertical faces, id = 4 * building + face.
    pub fn facades(&self) -> Vec<Facade> {
        let mut out = Vec::with_capacity(self.buildings.len() * 4);
        for (bi, b) in self.buildings.iter().enumerate() {
            let z_span = (b.min.z, b.max.z);
            let faces = [
                (0, b.min.x, -1.0, (b.min.y, b.max.y)),
                (0, b.max.x, 1.0, (b.min.y, b.max.y)),
                (1, b.min.y, -1.0, (b.min.x, b.max.x)),
                (1, b.max.y, 1.0, (b.min.x, b.max.x)),
            ];
            for (fi, (axis, coord, outward, span)) in faces.into_iter().enumerate() {
                out.push(Facade { id: 4 * bi + fi, building: bi, axis, coord, outward, span, z_span });
            }
        }
        out
    }

    /// True if the segment a-b passes through any building.
    pub fn segment_blocked(&self, a: Vec3, b: Vec3) -> bool {
        self.buildings.iter().any(|bl| bl.blocks(a, b))
    }

    fn check_outside(&self, p: Vec3) -> Result<()> {
        if !p.is_finite() {
            return Err(PemError::InvalidParameter("UE position is not finite".into()));
        }
        match self.buildings.iter().position(|b| b.contains(p)) {
            Some(i) => Err(PemError::UeInsideBuilding(p.to_array(), i)),
            None => Ok(()),
        }
    }

    /// Complex path gain for a path of the given length and bounce count.
    pub fn path_gain(&self, length_m: f64, bounces: usize) -> Complex64 {
        let lambda = self.wavelength();
        let amplitude = lambda / (4.0 * PI * length_m);
        let per_bounce = -(10f64.powf(-self.reflection_loss_db / 20.0));
        let phase = -2.0 * PI * length_m / lambda;
        Complex64::from_polar(amplitude * per_bounce.powi(bounces as i32), phase)
    }

    fn make_path(&self, kind: PathKind, first_leg_end: Vec3, source_image: Vec3, ue: Vec3, ue_vel: Vec3, points: Vec<Vec3>) -> GeoPath {
        let to_ue = ue - source_image;
        let length_m = to_ue.norm();
        let rate = to_ue.normalized().dot(ue_vel);
        let doppler_hz = -(self.carrier_hz / SPEED_OF_LIGHT) * rate;
        let (azimuth_rad, elevation_rad) = arrival_angles(first_leg_end - self.bs_position);
        let gain = self.path_gain(length_m, kind.bounces());
        GeoPath {
            kind,
            length_m,
            delay_s: length_m / SPEED_OF_LIGHT,
            azimuth_rad,
            elevation_rad,
            gain,
            doppler_hz,
            points,
        }
    }

    /// Solves LoS and specular reflection paths up to `max_bounces`.
    pub fn solve_paths(&self, ue: Vec3, ue_vel: Vec3) -> Result<Vec<GeoPath>> {
        self.check_outside(ue)?;
        let bs = self.bs_position;
        let mut paths = Vec::new();

        if !self.segment_blocked(bs, ue) {
            paths.push(self.make_path(PathKind::LoS, ue, bs, ue, ue_vel, Vec::new()));
        }
        if self.max_bounces == 0 {
            return Ok(paths);
        }

        let facades = self.facades();
        for f in &facades {
            if !f.in_front(bs) || !f.in_front(ue) {
                continue;
            }
            let image = f.mirror(bs);
            let Some(p) = f.hit(image, ue) else { continue };
            if self.segment_blocked(bs, p) || self.segment_blocked(p, ue) {
                continue;
            }
            paths.push(self.make_path(PathKind::Reflection(vec![f.id]), p, image, ue, ue_vel, vec![p]));
        }

        if self.max_bounces >= 2 {
            for f1 in &facades {
                if !f1.in_front(bs) {
                    continue;
                }
                let img1 = f1.mirror(bs);
                for f2 in &facades {
                    if f2.id == f1.id || !f2.in_front(ue) {
                        continue;
                    }
                    let img2 = f2.mirror(img1);
                    let Some(p2) = f2.hit(img2, ue) else { continue };
                    let Some(p1) = f1.hit(img1, p2) else { continue };
                    if !f1.in_front(p2) || !f2.in_front(p1) {
                        continue;
                    }
                    if self.segment_blocked(bs, p1) || self.segment_blocked(p1, p2) || self.segment_blocked(p2, ue) {
                        continue;
                    }
                    paths.push(self.make_path(
                        PathKind::Reflection(vec![f1.id, f2.id]),
                        p1,
                        img2,
                        ue,
                        ue_vel,
                        vec![p1, p2],
                    ));
                }
            }
        }
        Ok(paths)
    }
}

/// Azimuth in (-pi, pi] and elevation in [-pi/2, pi/2] of a direction vector.
pub fn arrival_angles(d: Vec3) -> (f64, f64) {
    let mut az = d.y.atan2(d.x);
    if az <= -PI {
        az = PI;
    }
    let el = d.z.atan2(d.horizontal_norm());
    (az, el)
}

/// Unit direction for the given azimuth and elevation.
pub fn direction(azimuth: f64, elevation: f64) -> Vec3 {
    Vec3::new(elevation.cos() * azimuth.cos(), elevation.cos() * azimuth.sin(), elevation.sin())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn open_scene() -> Scene {
        Scene {
            name: None,
            bs_position: Vec3::new(0.0, 0.0, 10.0),
            carrier_hz: 6e9,
            reflection_loss_db: 6.0,
            max_bounces: 1,
            buildings: vec![],
        }
    }

    fn wall_scene() -> Scene {
        // Facade x = 50 facing the BS; the building is deep and tall.
        let mut s = open_scene();
        s.buildings.push(Building::new([50.0, -200.0, 0.0], [70.0, 200.0, 60.0]));
        s
    }

    #[test]
    fn los_only_in_open_space() {
        let paths = open_scene().solve_paths(Vec3::new(30.0, 40.0, 1.5), Vec3::ZERO).unwrap();
        assert_eq!(paths.len(), 1);
        let p = &paths[0];
        assert_eq!(p.kind, PathKind::LoS);
        // Independent hand calculation: 30^2 + 40^2 + 8.5^2 = 2572.25.
        assert!((p.length_m - 2572.25f64.sqrt()).abs() < 1e-12);
        assert!((p.length_m - 50.717).abs() < 1e-3);
        assert!((p.delay_s * 1e9 - 169.17).abs() < 0.01);
        assert_eq!(p.delay_s, p.length_m / 299_792_458.0);
    }

    #[test]
    fn reflection_length_matches_image_and_brute_force() {
        let scene = wall_scene();
        let ue = Vec3::new(20.0, 30.0, 1.5);
        let paths = scene.solve_paths(ue, Vec3::ZERO).unwrap();
        let refl: Vec<_> = paths.iter().filter(|p| p.kind.bounces() == 1).collect();
        assert_eq!(refl.len(), 1);
        assert!((refl[0].length_m - 7372.25f64.sqrt()).abs() < 1e-9);
        assert!((refl[0].length_m - 85.86).abs() < 0.01);

        // Brute force over facade points on a 1 cm grid around the optimum.
        let bs = scene.bs_position;
        let mut best = f64::INFINITY;
        let mut y = 0.0;
        while y <= 40.0 {
            let mut z = 0.0;
            while z <= 15.0 {
                let p = Vec3::new(50.0, y, z);
                best = best.min((p - bs).norm() + (ue - p).norm());
                z += 0.01;
            }
            y += 0.01;
        }
        assert!((best - refl[0].length_m).abs() < 1e-3, "{best} vs {}", refl[0].length_m);
    }

    #[test]
    fn stationary_ue_has_no_doppler() {
        let scene = wall_scene();
        for p in scene.solve_paths(Vec3::new(20.0, 30.0, 1.5), Vec3::ZERO).unwrap() {
            assert_eq!(p.doppler_hz, 0.0);
        }
    }

    #[test]
    fn radial_recession_at_speed_limit_gives_max_doppler() {
        let scene = open_scene();
        let ue = Vec3::new(30.0, 40.0, 1.5);
        let radial = (ue - scene.bs_position).normalized() * 20.0;
        let paths = scene.solve_paths(ue, radial).unwrap();
        // fc * v / c = 400.28 Hz at exactly 6 GHz.
        assert!((paths[0].doppler_hz + 400.0).abs() < 0.5, "{}", paths[0].doppler_hz);
    }

    #[test]
    fn ue_inside_building_is_rejected() {
        let err = wall_scene().solve_paths(Vec3::new(60.0, 0.0, 1.5), Vec3::ZERO).unwrap_err();
        assert!(matches!(err, PemError::UeInsideBuilding(_, 0)));
    }

    #[test]
    fn blocked_los_is_dropped() {
        let mut scene = open_scene();
        scene.buildings.push(Building::new([10.0, 10.0, 0.0], [20.0, 25.0, 30.0]));
        let paths = scene.solve_paths(Vec3::new(30.0, 40.0, 1.5), Vec3::ZERO).unwrap();
        assert!(paths.iter().all(|p| p.kind != PathKind::LoS));
    }

    #[test]
    fn gain_follows_free_space_and_bounce_loss() {
        let scene = wall_scene();
        let paths = scene.solve_paths(Vec3::new(20.0, 30.0, 1.5), Vec3::ZERO).unwrap();
        let lambda = scene.wavelength();
        for p in &paths {
            let expected = lambda / (4.0 * PI * p.length_m) * 10f64.powf(-6.0 * p.kind.bounces() as f64 / 20.0);
            assert!((p.gain.norm() - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn second_order_reflection_in_a_canyon() {
        let mut scene = open_scene();
        scene.max_bounces = 2;
        scene.buildings.push(Building::new([-50.0, 20.0, 0.0], [150.0, 40.0, 50.0]));
        scene.buildings.push(Building::new([-50.0, -40.0, 0.0], [150.0, -20.0, 50.0]));
        let ue = Vec3::new(80.0, 5.0, 1.5);
        let paths = scene.solve_paths(ue, Vec3::ZERO).unwrap();
        let two: Vec<_> = paths.iter().filter(|p| p.kind.bounces() == 2).collect();
        assert_eq!(two.len(), 2);
        for p in two {
            let (p1, p2) = (p.points[0], p.points[1]);
            let unfolded = (p1 - scene.bs_position).norm() + (p2 - p1).norm() + (ue - p2).norm();
            assert!((unfolded - p.length_m).abs() < 1e-9);
        }
    }

    #[test]
    fn scene_json_round_trip_and_validation() {
        let json = r#"{"bs":[0,0,10],"carrier_hz":6e9,"reflection_loss_db":6,"max_bounces":1,
            "buildings":[{"min":[50,-10,0],"max":[60,10,20]}]}"#;
        let scene = Scene::from_json_str(json).unwrap();
        assert_eq!(scene.buildings.len(), 1);
        let again = Scene::from_json_str(&scene.to_json_string().unwrap()).unwrap();
        assert_eq!(scene, again);

        let overlapping = r#"{"bs":[0,0,10],"carrier_hz":6e9,
            "buildings":[{"min":[50,-10,0],"max":[60,10,20]},{"min":[55,0,0],"max":[65,20,20]}]}"#;
        assert!(Scene::from_json_str(overlapping).is_err());
        let bs_inside = r#"{"bs":[55,0,10],"carrier_hz":6e9,"buildings":[{"min":[50,-10,0],"max":[60,10,20]}]}"#;
        assert!(Scene::from_json_str(bs_inside).is_err());
        let bad_carrier = r#"{"bs":[0,0,10],"carrier_hz":0}"#;
        assert!(Scene::from_json_str(bad_carrier).is_err());
    }

    fn street() -> Scene {
        let mut s = open_scene();
        s.buildings = vec![
            Building::new([75.0, -60.0, 0.0], [95.0, -10.0, 25.0]),
            Building::new([80.0, 5.0, 0.0], [95.0, 50.0, 30.0]),
            Building::new([20.0, 30.0, 0.0], [35.0, 45.0, 15.0]),
        ];
        s
    }

    proptest! {
        #[test]
        fn blockage_is_symmetric(ax in -20.0..120.0f64, ay in -80.0..80.0f64, bx in -20.0..120.0f64, by in -80.0..80.0f64) {
            let s = street();
            let a = Vec3::new(ax, ay, 1.5);
            let b = Vec3::new(bx, by, 10.0);
            prop_assert_eq!(s.segment_blocked(a, b), s.segment_blocked(b, a));
        }

        #[test]
        fn swapping_bs_and_ue_preserves_paths(x in 40.0..70.0f64, y in -70.0..70.0f64) {
            let s = street();
            let ue = Vec3::new(x, y, 1.5);
            prop_assume!(s.buildings.iter().all(|b| !b.contains(ue)));
            let mut swapped = s.clone();
            swapped.bs_position = ue;
            let fwd = s.solve_paths(ue, Vec3::ZERO).unwrap();
            let back = swapped.solve_paths(s.bs_position, Vec3::ZERO).unwrap();
            let mut l1: Vec<(PathKind, f64)> = fwd.iter().map(|p| (p.kind.clone(), p.length_m)).collect();
            let mut l2: Vec<(PathKind, f64)> = back.iter().map(|p| (p.kind.clone(), p.length_m)).collect();
            l1.sort_by(|a, b| a.0.cmp(&b.0));
            l2.sort_by(|a, b| a.0.cmp(&b.0));
            prop_assert_eq!(l1.len(), l2.len());
            for (a, b) in l1.iter().zip(&l2) {
                prop_assert_eq!(&a.0, &b.0);
                prop_assert!((a.1 - b.1).abs() < 1e-9);
            }
        }

        #[test]
        fn doppler_matches_numerical_derivative(x in 40.0..70.0f64, y in -70.0..70.0f64, vx in -20.0..20.0f64, vy in -20.0..20.0f64) {
            let s = street();
            let ue = Vec3::new(x, y, 1.5);
            prop_assume!(s.buildings.iter().all(|b| !b.contains(ue)));
            let vel = Vec3::new(vx, vy, 0.0);
            let dt = 10e-6;
            let now = s.solve_paths(ue, vel).unwrap();
            let later = s.solve_paths(ue + vel * dt, vel).unwrap();
            for p in &now {
                if let Some(q) = later.iter().find(|q| q.kind == p.kind) {
                    let numeric = -(s.carrier_hz / SPEED_OF_LIGHT) * (q.length_m - p.length_m) / dt;
                    prop_assert!((numeric - p.doppler_hz).abs() < 0.1, "{} vs {}", numeric, p.doppler_hz);
                }
            }
        }

        #[test]
        fn angles_in_range_and_gain_monotone(x in 40.0..70.0f64, y in -70.0..70.0f64) {
            let s = street();
            let ue = Vec3::new(x, y, 1.5);
            prop_assume!(s.buildings.iter().all(|b| !b.contains(ue)));
            for p in s.solve_paths(ue, Vec3::ZERO).unwrap() {
                prop_assert!(p.azimuth_rad > -PI && p.azimuth_rad <= PI);
                prop_assert!(p.elevation_rad.abs() <= PI / 2.0);
                let longer = s.path_gain(p.length_m * 1.1, p.kind.bounces());
                prop_assert!(longer.norm() <= p.gain.norm());
            }
        }
    }

    #[test]
    fn image_reflection_point_equals_grid_minimizer() {
        let s = street();
        let ue = Vec3::new(60.0, -30.0, 1.5);
        let paths = s.solve_paths(ue, Vec3::ZERO).unwrap();
        let refl = paths.iter().find(|p| p.kind == PathKind::Reflection(vec![0])).expect("facade 0 reflection");
        let bs = s.bs_position;
        let p0 = refl.points[0];
        let mut best = (f64::INFINITY, Vec3::ZERO);
        for iy in -100..=100 {
            for iz in -100..=100 {
                let p = Vec3::new(75.0, p0.y + iy as f64 * 0.01, p0.z + iz as f64 * 0.01);
                let l = (p - bs).norm() + (ue - p).norm();
                if l < best.0 {
                    best = (l, p);
                }
            }
        }
        assert!((best.0 - refl.length_m).abs() < 1e-3);
        assert!((best.1 - p0).norm() < 0.02);
    }
}
