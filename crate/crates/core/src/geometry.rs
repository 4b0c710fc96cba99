//! Planes, wall polygons and polyhedral rooms in device-centered coordinates.
//!
//! Every wall plane is stored in normalized homogeneous form `a = [n, d]` with
//! `|n| = 1`, `d > 0` and `n` pointing from the wall toward the device at the
//! origin, so `n . x + d` is the signed distance of `x` from the wall and
//! `d` is the shortest device-to-wall distance.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point3 = Vector3<f64>;

/// Geometric tolerance in meters.
pub const GEOM_EPS: f64 = 1e-9;

/// Maximum number of wall slots (rows of the wall matrix).
pub const MAX_WALLS: usize = 8;

/// Bounding-box edge ranges (x, y, z) in meters.
pub const BBOX_RANGES: [(f64, f64); 3] = [(4.0, 10.0), (4.0, 10.0), (3.0, 5.0)];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallPlane {
    pub normal: Point3,
    pub offset: f64,
}

impl WallPlane {
    pub fn coefficients(&self) -> [f64; 4] {
        [self.normal.x, self.normal.y, self.normal.z, self.offset]
    }

    #[inline]
    pub fn signed_distance(&self, q: &Point3) -> f64 {
        self.normal.dot(q) + self.offset
    }

    /// Mirror image of `s` across the plane.
    #[inline]
    pub fn reflect_point(&self, s: &Point3) -> Point3 {
        s - self.normal * (2.0 * self.signed_distance(s))
    }
}

pub fn signed_distance(plane: &WallPlane, q: &Point3) -> f64 {
    plane.signed_distance(q)
}

pub fn reflect_point(plane: &WallPlane, s: &Point3) -> Point3 {
    plane.reflect_point(s)
}

/// Fits the oriented plane through an ordered coplanar vertex loop.
///
/// The normal comes from Newell's method, which is exact for planar loops and
/// handles non-convex outlines.
pub fn plane_from_polygon(vertices: &[Point3]) -> Result<WallPlane, GeometryError> {
    if vertices.len() < 3 {
        return Err(GeometryError::DegeneratePolygon(
            "fewer than three vertices",
        ));
    }
    let mut normal = Point3::zeros();
    let mut centroid = Point3::zeros();
    for (i, cur) in vertices.iter().enumerate() {
        let next = &vertices[(i + 1) % vertices.len()];
        normal.x += (cur.y - next.y) * (cur.z + next.z);
        normal.y += (cur.z - next.z) * (cur.x + next.x);
        normal.z += (cur.x - next.x) * (cur.y + next.y);
        centroid += cur;
    }
    centroid /= vertices.len() as f64;
    let scale = vertices
        .iter()
        .map(|v| (v - centroid).norm())
        .fold(0.0_f64, f64::max);
    let norm = normal.norm();
    if scale == 0.0 || norm <= GEOM_EPS * scale * scale {
        return Err(GeometryError::DegeneratePolygon("vertices are collinear"));
    }
    let mut normal = normal / norm;
    let mut offset = -normal.dot(&centroid);
    if offset.abs() < GEOM_EPS {
        return Err(GeometryError::DegeneratePolygon(
            "plane passes through the origin",
        ));
    }
    if offset < 0.0 {
        normal = -normal;
        offset = -offset;
    }
    let plane = WallPlane { normal, offset };
    if vertices
        .iter()
        .any(|v| plane.signed_distance(v).abs() > GEOM_EPS)
    {
        return Err(GeometryError::DegeneratePolygon(
            "vertices are not coplanar",
        ));
    }
    Ok(plane)
}

/// A finite planar wall. The outline is a simple polygon; floor and ceiling of
/// an L-shaped room are non-convex.
#[derive(Debug, Clone, PartialEq)]
pub struct WallPolygon {
    pub vertices: Vec<Point3>,
    pub plane: WallPlane,
    // in-plane projection used for containment tests
    drop_axis: usize,
    projected: Vec<[f64; 2]>,
}

impl WallPolygon {
    pub fn new(vertices: Vec<Point3>) -> Result<Self, GeometryError> {
        let plane = plane_from_polygon(&vertices)?;
        let n = plane.normal.abs();
        let drop_axis = if n.x >= n.y && n.x >= n.z {
            0
        } else if n.y >= n.z {
            1
        } else {
            2
        };
        let projected = vertices.iter().map(|v| project(v, drop_axis)).collect();
        Ok(Self {
            vertices,
            plane,
            drop_axis,
            projected,
        })
    }

    /// Whether a point already on the plane lies inside the outline or on its
    /// boundary (within `GEOM_EPS`).
    pub fn contains_in_plane(&self, p: &Point3) -> bool {
        let q = project(p, self.drop_axis);
        let n = self.projected.len();
        let mut inside = false;
        for i in 0..n {
            let a = self.projected[i];
            let b = self.projected[(i + 1) % n];
            if point_segment_distance(q, a, b) <= GEOM_EPS {
                return true;
            }
            if (a[1] > q[1]) != (b[1] > q[1]) {
                let x = a[0] + (q[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if q[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

#[inline]
fn project(v: &Point3, drop_axis: usize) -> [f64; 2] {
    match drop_axis {
        0 => [v.y, v.z],
        1 => [v.z, v.x],
        _ => [v.x, v.y],
    }
}

fn point_segment_distance(q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let aq = [q[0] - a[0], q[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((aq[0] * ab[0] + aq[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let dx = aq[0] - t * ab[0];
    let dy = aq[1] - t * ab[1];
    (dx * dx + dy * dy).sqrt()
}

/// Intersection of the open segment `origin -> target` with a wall polygon.
///
/// Returns the hit point and its parameter `t`, restricted to
/// `GEOM_EPS < t < 1 - GEOM_EPS`. Segments parallel to the plane never hit.
pub fn ray_polygon_intersect(
    origin: &Point3,
    target: &Point3,
    poly: &WallPolygon,
) -> Option<(Point3, f64)> {
    let d0 = poly.plane.signed_distance(origin);
    let d1 = poly.plane.signed_distance(target);
    let denom = d0 - d1;
    if denom.abs() < 1e-15 {
        return None;
    }
    let t = d0 / denom;
    if !(t > GEOM_EPS && t < 1.0 - GEOM_EPS) {
        return None;
    }
    let point = origin + (target - origin) * t;
    if poly.contains_in_plane(&point) {
        Some((point, t))
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    Shoebox,
    Pentagonal,
    Hexagonal,
    LShaped,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 4] = [
        ShapeFamily::Shoebox,
        ShapeFamily::Pentagonal,
        ShapeFamily::Hexagonal,
        ShapeFamily::LShaped,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn wall_count(self) -> usize {
        match self {
            ShapeFamily::Shoebox => 6,
            ShapeFamily::Pentagonal => 7,
            ShapeFamily::Hexagonal | ShapeFamily::LShaped => 8,
        }
    }

    pub fn is_convex(self) -> bool {
        self != ShapeFamily::LShaped
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeFamily::Shoebox => "shoebox",
            ShapeFamily::Pentagonal => "pentagonal",
            ShapeFamily::Hexagonal => "hexagonal",
            ShapeFamily::LShaped => "l_shaped",
        }
    }

    /// Column title used in reports.
    pub fn title(self) -> &'static str {
        match self {
            ShapeFamily::Shoebox => "Shoebox",
            ShapeFamily::Pentagonal => "Pentagonal",
            ShapeFamily::Hexagonal => "Hexagonal",
            ShapeFamily::LShaped => "L-shaped",
        }
    }
}

impl fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ShapeFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown shape family `{s}`"))
    }
}

/// A closed prism-shaped room: floor, ceiling, then one side wall per
/// footprint edge.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomModel {
    pub walls: Vec<WallPolygon>,
    pub shape_family: ShapeFamily,
    pub bbox: [f64; 3],
    pub seed: u64,
    /// Counter-clockwise footprint in the xy-plane.
    pub footprint: Vec<[f64; 2]>,
    pub z_range: (f64, f64),
}

impl RoomModel {
    /// Extrudes a counter-clockwise footprint between two heights.
    pub fn from_footprint(
        footprint: Vec<[f64; 2]>,
        z_range: (f64, f64),
        shape_family: ShapeFamily,
        seed: u64,
    ) -> Result<Self, GeometryError> {
        let (z_lo, z_hi) = z_range;
        let at = |p: [f64; 2], z: f64| Point3::new(p[0], p[1], z);
        let mut walls = Vec::with_capacity(footprint.len() + 2);
        walls.push(WallPolygon::new(
            footprint.iter().map(|&p| at(p, z_lo)).collect(),
        )?);
        walls.push(WallPolygon::new(
            footprint.iter().rev().map(|&p| at(p, z_hi)).collect(),
        )?);
        for i in 0..footprint.len() {
            let a = footprint[i];
            let b = footprint[(i + 1) % footprint.len()];
            walls.push(WallPolygon::new(vec![
                at(a, z_lo),
                at(b, z_lo),
                at(b, z_hi),
                at(a, z_hi),
            ])?);
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &footprint {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        Ok(Self {
            walls,
            shape_family,
            bbox: [hi[0] - lo[0], hi[1] - lo[1], z_hi - z_lo],
            seed,
            footprint,
            z_range,
        })
    }

    /// Axis-aligned box of the given edge lengths centered on the origin.
    pub fn shoebox(lx: f64, ly: f64, lz: f64) -> Self {
        let (x, y) = (lx / 2.0, ly / 2.0);
        Self::from_footprint(
            vec![[-x, -y], [x, -y], [x, y], [-x, y]],
            (-lz / 2.0, lz / 2.0),
            ShapeFamily::Shoebox,
            0,
        )
        .expect("a centered box is never degenerate")
    }

    pub fn num_walls(&self) -> usize {
        self.walls.len()
    }

    /// Strict interior test for the extruded footprint.
    pub fn contains(&self, q: &Point3) -> bool {
        let (z_lo, z_hi) = self.z_range;
        if !(q.z > z_lo + GEOM_EPS && q.z < z_hi - GEOM_EPS) {
            return false;
        }
        let p = [q.x, q.y];
        let n = self.footprint.len();
        let mut inside = false;
        for i in 0..n {
            let a = self.footprint[i];
            let b = self.footprint[(i + 1) % n];
            if point_segment_distance(p, a, b) <= GEOM_EPS {
                return false;
            }
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Every room vertex lies on the non-negative side of every wall plane.
    pub fn is_convex(&self) -> bool {
        self.walls.iter().all(|wall| {
            self.walls.iter().all(|other| {
                other
                    .vertices
                    .iter()
                    .all(|v| wall.plane.signed_distance(v) >= -GEOM_EPS)
            })
        })
    }

    /// Whether the single-bounce path off `wall` exists for a source and
    /// receiver both at the origin, i.e. the perpendicular foot lies on the wall.
    pub fn first_order_visible_from_origin(&self, wall: usize) -> bool {
        let plane = &self.walls[wall].plane;
        let foot = -plane.normal * plane.offset;
        self.walls[wall].contains_in_plane(&foot)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WallMatrix {
    /// Wall coefficient rows, zero-padded to `MAX_WALLS`.
    pub rows: [[f64; 4]; MAX_WALLS],
    pub presence: [f64; MAX_WALLS],
    pub num_walls: usize,
}

impl WallMatrix {
    pub fn from_rows(planes: &[[f64; 4]]) -> Self {
        assert!(
            planes.len() <= MAX_WALLS,
            "too many walls for the wall matrix"
        );
        let mut rows = [[0.0; 4]; MAX_WALLS];
        let mut presence = [0.0; MAX_WALLS];
        for (w, plane) in planes.iter().enumerate() {
            rows[w] = *plane;
            presence[w] = 1.0;
        }
        Self {
            rows,
            presence,
            num_walls: planes.len(),
        }
    }
}

pub fn room_to_wall_matrix(room: &RoomModel) -> WallMatrix {
    let planes: Vec<[f64; 4]> = room.walls.iter().map(|w| w.plane.coefficients()).collect();
    WallMatrix::from_rows(&planes)
}

/// Golden-spiral layout of `count` points on a sphere of `radius`.
pub fn mic_positions(count: usize, radius: f64) -> Vec<Point3> {
    assert!(count >= 2, "need at least two microphones");
    let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let phi = 2.0 * PI * i as f64 * (1.0 - 1.0 / golden);
            let r = (1.0 - z * z).sqrt();
            Point3::new(r * phi.cos(), r * phi.sin(), z) * radius
        })
        .collect()
}

const MAX_CUT_ATTEMPTS: usize = 1000;
const FALLBACK_CUT: f64 = 0.45;

/// Draws a room of the requested family. Fully determined by `seed`.
pub fn sample_room(family: ShapeFamily, seed: u64) -> RoomModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [lx, ly, lz] = BBOX_RANGES.map(|(lo, hi)| rng.random_range(lo..=hi));
    let (x, y) = (lx / 2.0, ly / 2.0);
    let corners = [[-x, -y], [x, -y], [x, y], [-x, y]];
    let z_range = (-lz / 2.0, lz / 2.0);
    let build = |footprint: Vec<[f64; 2]>| {
        RoomModel::from_footprint(footprint, z_range, family, seed)
            .expect("sampled footprints are never degenerate")
    };

    match family {
        ShapeFamily::Shoebox => build(corners.to_vec()),
        ShapeFamily::Pentagonal => {
            let corner = rng.random_range(0..4usize);
            let (u, v) = draw_visible_cut(&mut rng, &corners, corner);
            build(cut_corners(&corners, &[(corner, u, v)]))
        }
        ShapeFamily::Hexagonal => {
            let first = rng.random_range(0..2usize);
            let (u1, v1) = draw_visible_cut(&mut rng, &corners, first);
            let (u2, v2) = draw_visible_cut(&mut rng, &corners, first + 2);
            build(cut_corners(
                &corners,
                &[(first, u1, v1), (first + 2, u2, v2)],
            ))
        }
        ShapeFamily::LShaped => {
            let corner = rng.random_range(0..4usize);
            let u = rng.random_range(0.3..=0.5);
            let v = rng.random_range(0.3..=0.5);
            build(notch_corner(&corners, corner, u, v))
        }
    }
}

/// Chord cut fractions in [0.3, 0.7], redrawn until every side wall keeps the
/// device's perpendicular foot, so all first-order reflections stay visible.
fn draw_visible_cut(rng: &mut ChaCha8Rng, corners: &[[f64; 2]; 4], corner: usize) -> (f64, f64) {
    for _ in 0..MAX_CUT_ATTEMPTS {
        let u = rng.random_range(0.3..=0.7);
        let v = rng.random_range(0.3..=0.7);
        if cut_keeps_feet(corners, corner, u, v) {
            return (u, v);
        }
    }
    (FALLBACK_CUT, FALLBACK_CUT)
}

fn corner_points(corners: &[[f64; 2]; 4], k: usize, u: f64, v: f64) -> ([f64; 2], [f64; 2]) {
    let c = corners[k];
    let prev = corners[(k + 3) % 4];
    let next = corners[(k + 1) % 4];
    let lerp = |to: [f64; 2], f: f64| [c[0] + f * (to[0] - c[0]), c[1] + f * (to[1] - c[1])];
    (lerp(prev, u), lerp(next, v))
}

fn foot_on_segment(a: [f64; 2], b: [f64; 2]) -> bool {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let t = -(a[0] * ab[0] + a[1] * ab[1]) / (ab[0] * ab[0] + ab[1] * ab[1]);
    // keep the foot a millimeter clear of the wall edges
    let margin = 1e-3 / (ab[0] * ab[0] + ab[1] * ab[1]).sqrt();
    t > margin && t < 1.0 - margin
}

fn cut_keeps_feet(corners: &[[f64; 2]; 4], k: usize, u: f64, v: f64) -> bool {
    let (p_in, p_out) = corner_points(corners, k, u, v);
    let prev = corners[(k + 3) % 4];
    let next = corners[(k + 1) % 4];
    foot_on_segment(prev, p_in) && foot_on_segment(p_in, p_out) && foot_on_segment(p_out, next)
}

fn cut_corners(corners: &[[f64; 2]; 4], cuts: &[(usize, f64, f64)]) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(4 + cuts.len());
    for (k, c) in corners.iter().enumerate() {
        match cuts.iter().find(|cut| cut.0 == k) {
            Some(&(_, u, v)) => {
                let (p_in, p_out) = corner_points(corners, k, u, v);
                out.push(p_in);
                out.push(p_out);
            }
            None => out.push(*c),
        }
    }
    out
}

fn notch_corner(corners: &[[f64; 2]; 4], k: usize, u: f64, v: f64) -> Vec<[f64; 2]> {
    let (p_in, p_out) = corner_points(corners, k, u, v);
    let c = corners[k];
    let inner = [p_in[0] + p_out[0] - c[0], p_in[1] + p_out[1] - c[1]];
    let mut out = Vec::with_capacity(6);
    for (i, corner) in corners.iter().enumerate() {
        if i == k {
            out.extend([p_in, inner, p_out]);
        } else {
            out.push(*corner);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn box_walls() -> RoomModel {
        RoomModel::shoebox(6.0, 4.0, 3.0)
    }

    fn wall_with_coeffs(room: &RoomModel, coeffs: [f64; 4]) -> &WallPolygon {
        room.walls
            .iter()
            .find(|w| {
                w.plane
                    .coefficients()
                    .iter()
                    .zip(coeffs)
                    .all(|(a, b)| (a - b).abs() < 1e-12)
            })
            .expect("wall not found")
    }

    #[test]
    fn floor_and_side_planes() {
        let floor = [
            Point3::new(-3.0, -2.0, -1.5),
            Point3::new(3.0, -2.0, -1.5),
            Point3::new(3.0, 2.0, -1.5),
            Point3::new(-3.0, 2.0, -1.5),
        ];
        let plane = plane_from_polygon(&floor).unwrap();
        assert_abs_diff_eq!(plane.normal, Point3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(plane.offset, 1.5, epsilon = 1e-12);

        let side = [
            Point3::new(3.0, -2.0, -1.5),
            Point3::new(3.0, 2.0, -1.5),
            Point3::new(3.0, 2.0, 1.5),
            Point3::new(3.0, -2.0, 1.5),
        ];
        let plane = plane_from_polygon(&side).unwrap();
        assert_abs_diff_eq!(plane.normal, Point3::new(-1.0, 0.0, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(plane.offset, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_polygons() {
        let line = [
            Point3::new(0.0, 0.0, 1.0),
            Point3::new(1.0, 1.0, 1.0),
            Point3::new(2.0, 2.0, 1.0),
        ];
        assert!(plane_from_polygon(&line).is_err());
        let through_origin = [
            Point3::new(-1.0, -1.0, 0.0),
            Point3::new(1.0, -1.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        assert!(plane_from_polygon(&through_origin).is_err());
    }

    #[test]
    fn reflect_and_distance() {
        let floor = WallPlane {
            normal: Point3::new(0.0, 0.0, 1.0),
            offset: 1.5,
        };
        let side = WallPlane {
            normal: Point3::new(-1.0, 0.0, 0.0),
            offset: 3.0,
        };
        assert_eq!(
            reflect_point(&floor, &Point3::zeros()),
            Point3::new(0.0, 0.0, -3.0)
        );
        assert_eq!(
            reflect_point(&side, &Point3::new(1.0, 1.0, 0.0)),
            Point3::new(5.0, 1.0, 0.0)
        );
        assert_eq!(signed_distance(&floor, &Point3::zeros()), 1.5);
        assert_eq!(signed_distance(&floor, &Point3::new(0.0, 0.0, -3.0)), -1.5);
        assert_abs_diff_eq!(signed_distance(&floor, &Point3::new(2.0, 7.0, -1.5)), 0.0);
    }

    #[test]
    fn segment_hits_floor() {
        let room = box_walls();
        let floor = &room.walls[0];
        let (p, t) =
            ray_polygon_intersect(&Point3::zeros(), &Point3::new(0.0, 0.0, -3.0), floor).unwrap();
        assert_abs_diff_eq!(p, Point3::new(0.0, 0.0, -1.5), epsilon = 1e-12);
        assert_abs_diff_eq!(t, 0.5, epsilon = 1e-12);

        // parallel to the floor
        assert!(ray_polygon_intersect(
            &Point3::new(0.0, 0.0, -1.0),
            &Point3::new(1.0, 0.0, -1.0),
            floor
        )
        .is_none());
        // crosses the plane outside the rectangle
        assert!(ray_polygon_intersect(
            &Point3::new(10.0, 0.0, 0.0),
            &Point3::new(10.0, 0.0, -3.0),
            floor
        )
        .is_none());
        // stops short of the plane
        assert!(
            ray_polygon_intersect(&Point3::zeros(), &Point3::new(0.0, 0.0, -1.0), floor).is_none()
        );
    }

    #[test]
    fn edges_count_as_inside() {
        let room = box_walls();
        let floor = &room.walls[0];
        let hit = ray_polygon_intersect(
            &Point3::new(3.0, 0.0, 0.0),
            &Point3::new(3.0, 0.0, -3.0),
            floor,
        );
        assert!(hit.is_some());
    }

    #[test]
    fn shoebox_wall_matrix() {
        let room = box_walls();
        let wm = room_to_wall_matrix(&room);
        assert_eq!(wm.num_walls, 6);
        assert_eq!(wm.presence, [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(wm.rows[6], [0.0; 4]);
        assert_eq!(wm.rows[7], [0.0; 4]);
        wall_with_coeffs(&room, [0.0, 0.0, 1.0, 1.5]);
        wall_with_coeffs(&room, [-1.0, 0.0, 0.0, 3.0]);
    }

    #[test]
    fn family_wall_counts() {
        for seed in 0..20 {
            let hex = room_to_wall_matrix(&sample_room(ShapeFamily::Hexagonal, seed));
            assert_eq!(hex.num_walls, 8);
            assert!(hex.presence.iter().all(|&p| p == 1.0));
            let pent = room_to_wall_matrix(&sample_room(ShapeFamily::Pentagonal, seed));
            assert_eq!(pent.num_walls, 7);
            assert_eq!(pent.rows[7], [0.0; 4]);
            let l = sample_room(ShapeFamily::LShaped, seed);
            assert_eq!(l.num_walls(), 8);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        for family in ShapeFamily::ALL {
            assert_eq!(sample_room(family, 42), sample_room(family, 42));
            assert_ne!(sample_room(family, 42).bbox, sample_room(family, 43).bbox);
        }
    }

    #[test]
    fn mic_layout_on_sphere() {
        let mics = mic_positions(32, 0.042);
        assert_eq!(mics.len(), 32);
        for m in &mics {
            assert_abs_diff_eq!(m.norm(), 0.042, epsilon = 1e-12);
        }
    }

    #[test]
    fn convexity_by_family() {
        for seed in 0..50 {
            for family in ShapeFamily::ALL {
                let room = sample_room(family, seed);
                assert_eq!(room.is_convex(), family.is_convex(), "{family} seed {seed}");
            }
        }
    }

    #[test]
    fn l_shape_hides_two_walls() {
        for seed in 0..50 {
            let room = sample_room(ShapeFamily::LShaped, seed);
            let hidden = (0..room.num_walls())
                .filter(|&w| !room.first_order_visible_from_origin(w))
                .count();
            assert_eq!(hidden, 2, "seed {seed}");
        }
    }

    #[test]
    fn family_names_round_trip() {
        for family in ShapeFamily::ALL {
            assert_eq!(family.name().parse::<ShapeFamily>().unwrap(), family);
            assert_eq!(ShapeFamily::from_id(family.id()), Some(family));
        }
        assert_eq!(ShapeFamily::from_id(4), None);
    }
}
