//! Image-source simulation of multichannel room impulse responses.
//!
//! Image sources are enumerated once per room (all wall sequences without
//! immediate repetition) and validated per receiver by backtracking the
//! reflection path through the finite wall polygons, which is what removes
//! invisible reflections in non-convex rooms.

use std::collections::HashSet;
use std::f64::consts::PI;

use thiserror::Error;

use crate::geometry::{
    mic_positions, ray_polygon_intersect, room_to_wall_matrix, Point3, RoomModel, ShapeFamily,
    WallMatrix,
};

pub const SAMPLE_RATE_HZ: u32 = 8000;
pub const RIR_TAPS: usize = 1024;
pub const NUM_MICS: usize = 32;
pub const ARRAY_RADIUS_M: f64 = 0.042;
pub const SPEED_OF_SOUND: f64 = 343.0;
pub const MAX_ORDER: usize = 6;
pub const KERNEL_HALFWIDTH: usize = 40;
/// Per-wall reflection coefficients are drawn from this range.
pub const REFLECTION_COEFF_RANGE: (f64, f64) = (0.7, 0.95);

/// Coincident images closer than this are rendered once.
const DEDUP_RESOLUTION_M: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IsmError {
    #[error("microphone {0} is not strictly inside the room")]
    MicOutsideRoom(usize),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSource {
    pub position: Point3,
    pub order: usize,
    /// Walls in reflection order; the last entry is the last bounce.
    pub wall_sequence: Vec<u8>,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub fs: f64,
    pub taps: usize,
    pub speed_of_sound: f64,
    pub max_order: usize,
    pub reflection_coeffs: Vec<f64>,
    pub kernel_halfwidth: usize,
}

impl SimConfig {
    /// Default simulation settings with the given per-wall coefficients.
    pub fn with_coeffs(reflection_coeffs: Vec<f64>) -> Self {
        Self {
            fs: SAMPLE_RATE_HZ as f64,
            taps: RIR_TAPS,
            speed_of_sound: SPEED_OF_SOUND,
            max_order: MAX_ORDER,
            reflection_coeffs,
            kernel_halfwidth: KERNEL_HALFWIDTH,
        }
    }

    pub fn validate(&self, num_walls: usize) -> Result<(), IsmError> {
        let bad = |msg: &str| Err(IsmError::InvalidConfig(msg.to_owned()));
        if self.fs.is_nan() || self.fs <= 0.0 {
            return bad("sample rate must be positive");
        }
        if self.taps == 0 {
            return bad("tap count must be positive");
        }
        if self.speed_of_sound.is_nan() || self.speed_of_sound <= 0.0 {
            return bad("speed of sound must be positive");
        }
        if self.reflection_coeffs.len() != num_walls {
            return bad("one reflection coefficient per wall is required");
        }
        if self
            .reflection_coeffs
            .iter()
            .any(|&c| !(c > 0.0 && c <= 1.0))
        {
            return bad("reflection coefficients must lie in (0, 1]");
        }
        Ok(())
    }
}

/// All image sources up to `max_order`, breadth-first by order. Order 0 is the
/// source itself at the origin.
pub fn enumerate_image_sources(
    room: &RoomModel,
    max_order: usize,
    reflection_coeffs: &[f64],
) -> Vec<ImageSource> {
    assert_eq!(reflection_coeffs.len(), room.num_walls());
    let mut images = vec![ImageSource {
        position: Point3::zeros(),
        order: 0,
        wall_sequence: Vec::new(),
        gain: 1.0,
    }];
    let mut frontier = 0..1;
    for order in 1..=max_order {
        let start = images.len();
        for parent in frontier.clone() {
            let last = images[parent].wall_sequence.last().copied();
            for (w, wall) in room.walls.iter().enumerate() {
                if last == Some(w as u8) {
                    continue;
                }
                let parent = &images[parent];
                let mut wall_sequence = Vec::with_capacity(order);
                wall_sequence.extend_from_slice(&parent.wall_sequence);
                wall_sequence.push(w as u8);
                let image = ImageSource {
                    position: wall.plane.reflect_point(&parent.position),
                    order,
                    wall_sequence,
                    gain: parent.gain * reflection_coeffs[w],
                };
                images.push(image);
            }
        }
        frontier = start..images.len();
    }
    images
}

/// Backtracks the reflection path from `receiver` to the source at the origin.
///
/// Each leg must cross the expected wall polygon, and no leg may pass through
/// any other wall.
pub fn validate_path(room: &RoomModel, img: &ImageSource, receiver: &Point3) -> bool {
    let mut listener = *receiver;
    let mut listener_wall: Option<usize> = None;
    let mut image = img.position;
    for &w in img.wall_sequence.iter().rev() {
        let w = w as usize;
        let wall = &room.walls[w];
        let Some((hit, _)) = ray_polygon_intersect(&listener, &image, wall) else {
            return false;
        };
        if occluded(room, &listener, &hit, listener_wall, Some(w)) {
            return false;
        }
        listener = hit;
        listener_wall = Some(w);
        image = wall.plane.reflect_point(&image);
    }
    let source = Point3::zeros();
    img.order == 0 || !occluded(room, &listener, &source, listener_wall, None)
}

fn occluded(
    room: &RoomModel,
    from: &Point3,
    to: &Point3,
    skip_a: Option<usize>,
    skip_b: Option<usize>,
) -> bool {
    room.walls.iter().enumerate().any(|(j, wall)| {
        Some(j) != skip_a && Some(j) != skip_b && ray_polygon_intersect(from, to, wall).is_some()
    })
}

/// Sub-sample delay filter: a Hann-windowed sinc evaluated on the integer
/// taps `start..start + taps.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayKernel {
    pub start: i64,
    pub taps: Vec<f64>,
}

pub fn fractional_delay_kernel(delay: f64, halfwidth: usize) -> DelayKernel {
    assert!(delay >= 0.0, "delay must be non-negative");
    let hw = halfwidth as f64;
    let center = delay.round() as i64;
    let start = center - halfwidth as i64;
    let taps = (0..2 * halfwidth + 1)
        .map(|i| {
            let x = (start + i as i64) as f64 - delay;
            if x.abs() > hw {
                return 0.0;
            }
            let window = 0.5 * (1.0 + (PI * x / hw).cos());
            let sinc = if x == 0.0 {
                1.0
            } else {
                (PI * x).sin() / (PI * x)
            };
            window * sinc
        })
        .collect();
    DelayKernel { start, taps }
}

/// Channel-major multichannel impulse response.
#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub channels: usize,
    pub taps: usize,
    pub data: Vec<f32>,
}

impl Rir {
    pub fn channel(&self, m: usize) -> &[f32] {
        &self.data[m * self.taps..(m + 1) * self.taps]
    }
}

/// Adds one delayed impulse to an accumulator channel, dropping taps outside it.
pub fn add_impulse(channel: &mut [f64], amplitude: f64, delay: f64, halfwidth: usize) {
    let kernel = fractional_delay_kernel(delay, halfwidth);
    for (i, k) in kernel.taps.iter().enumerate() {
        let n = kernel.start + i as i64;
        if n >= 0 && (n as usize) < channel.len() {
            channel[n as usize] += amplitude * k;
        }
    }
}

/// The images that contribute to the channel at `mic`, one per distinct
/// position, in enumeration order.
pub fn audible_images<'a>(
    room: &RoomModel,
    images: &'a [ImageSource],
    mic: &Point3,
    cfg: &SimConfig,
) -> Vec<&'a ImageSource> {
    // an image farther than this only touches taps past the end
    let reach = (cfg.taps + cfg.kernel_halfwidth) as f64 * cfg.speed_of_sound / cfg.fs;
    let mut seen = HashSet::new();
    images
        .iter()
        .filter(|img| (img.position - mic).norm() < reach)
        .filter(|img| validate_path(room, img, mic))
        .filter(|img| {
            let key = img
                .position
                .map(|c| (c / DEDUP_RESOLUTION_M).round() as i64);
            seen.insert((key.x, key.y, key.z))
        })
        .collect()
}

pub fn render_rir(
    room: &RoomModel,
    images: &[ImageSource],
    mics: &[Point3],
    cfg: &SimConfig,
) -> Result<Rir, IsmError> {
    cfg.validate(room.num_walls())?;
    if let Some(m) = mics.iter().position(|m| !room.contains(m)) {
        return Err(IsmError::MicOutsideRoom(m));
    }
    let mut data = Vec::with_capacity(mics.len() * cfg.taps);
    let mut channel = vec![0.0_f64; cfg.taps];
    for mic in mics {
        channel.iter_mut().for_each(|v| *v = 0.0);
        for img in audible_images(room, images, mic, cfg) {
            let r = (img.position - mic).norm();
            add_impulse(
                &mut channel,
                img.gain / r,
                r * cfg.fs / cfg.speed_of_sound,
                cfg.kernel_halfwidth,
            );
        }
        data.extend(channel.iter().map(|&v| v as f32));
    }
    Ok(Rir {
        channels: mics.len(),
        taps: cfg.taps,
        data,
    })
}

/// One simulated room: its multichannel response and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct RirSample {
    pub shape_family: ShapeFamily,
    pub seed: u64,
    pub walls: WallMatrix,
    pub rir: Rir,
}

pub fn simulate_sample(
    room: &RoomModel,
    cfg: &SimConfig,
    mics: &[Point3],
) -> Result<RirSample, IsmError> {
    let images = enumerate_image_sources(room, cfg.max_order, &cfg.reflection_coeffs);
    let rir = render_rir(room, &images, mics, cfg)?;
    Ok(RirSample {
        shape_family: room.shape_family,
        seed: room.seed,
        walls: room_to_wall_matrix(room),
        rir,
    })
}

/// The standard 32-microphone array.
pub fn default_array() -> Vec<Point3> {
    mic_positions(NUM_MICS, ARRAY_RADIUS_M)
}
