//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every exported function takes a shape family name and a room seed, rebuilds
//! the room deterministically and returns plain data (JSON text or samples).

use rgi_core::dataset::reflection_coeffs;
use rgi_core::geometry::{room_to_wall_matrix, sample_room, Point3, RoomModel, ShapeFamily};
use rgi_core::ism::{
    default_array, enumerate_image_sources, render_rir, validate_path, SimConfig, MAX_ORDER,
    NUM_MICS,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct WallView {
    pub plane: [f64; 4],
    pub vertices: Vec<[f64; 3]>,
    /// Whether the single-bounce path off this wall reaches the array center.
    pub first_order_visible: bool,
}

#[derive(Debug, Serialize)]
pub struct RoomView {
    pub family: String,
    pub seed: u64,
    pub bbox: [f64; 3],
    pub footprint: Vec<[f64; 2]>,
    pub z_range: (f64, f64),
    pub walls: Vec<WallView>,
    pub mics: Vec<[f64; 3]>,
}

#[derive(Debug, Serialize)]
pub struct ImageView {
    pub order: usize,
    pub walls: Vec<u8>,
    pub position: [f64; 3],
    pub gain: f64,
}

fn room(family: &str, seed: u64) -> Result<RoomModel, String> {
    let family: ShapeFamily = family.parse()?;
    Ok(sample_room(family, seed))
}

fn check_order(max_order: usize) -> Result<(), String> {
    if max_order > MAX_ORDER {
        return Err(format!("order above {MAX_ORDER}"));
    }
    Ok(())
}

pub fn room_view(family: &str, seed: u64) -> Result<RoomView, String> {
    let room = room(family, seed)?;
    let coeffs = reflection_coeffs(seed, room.num_walls());
    let center = Point3::zeros();
    let first = enumerate_image_sources(&room, 1, &coeffs);
    let planes = room_to_wall_matrix(&room).rows;
    let walls = room
        .walls
        .iter()
        .enumerate()
        .map(|(w, poly)| WallView {
            plane: planes[w],
            vertices: poly.vertices.iter().map(|v| [v.x, v.y, v.z]).collect(),
            first_order_visible: first
                .iter()
                .any(|img| img.wall_sequence == [w as u8] && validate_path(&room, img, &center)),
        })
        .collect();
    Ok(RoomView {
        family: room.shape_family.name().to_owned(),
        seed,
        bbox: room.bbox,
        footprint: room.footprint.clone(),
        z_range: room.z_range,
        walls,
        mics: default_array().iter().map(|m| [m.x, m.y, m.z]).collect(),
    })
}

/// Image sources up to `max_order` whose reflection path to the array center is valid.
pub fn valid_images(family: &str, seed: u64, max_order: usize) -> Result<Vec<ImageView>, String> {
    check_order(max_order)?;
    let room = room(family, seed)?;
    let coeffs = reflection_coeffs(seed, room.num_walls());
    let center = Point3::zeros();
    Ok(enumerate_image_sources(&room, max_order, &coeffs)
        .into_iter()
        .filter(|img| validate_path(&room, img, &center))
        .map(|img| ImageView {
            order: img.order,
            walls: img.wall_sequence,
            position: [img.position.x, img.position.y, img.position.z],
            gain: img.gain,
        })
        .collect())
}

/// One microphone's impulse response, 1024 samples at 8 kHz.
pub fn channel_response(
    family: &str,
    seed: u64,
    mic: usize,
    max_order: usize,
) -> Result<Vec<f32>, String> {
    check_order(max_order)?;
    if mic >= NUM_MICS {
        return Err(format!("microphone index must be below {NUM_MICS}"));
    }
    let room = room(family, seed)?;
    let mut cfg = SimConfig::with_coeffs(reflection_coeffs(seed, room.num_walls()));
    cfg.max_order = max_order;
    let images = enumerate_image_sources(&room, max_order, &cfg.reflection_coeffs);
    let rir =
        render_rir(&room, &images, &default_array()[mic..=mic], &cfg).map_err(|e| e.to_string())?;
    Ok(rir.data)
}

fn js_err(e: String) -> JsValue {
    JsValue::from_str(&e)
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data serializes")
}

/// Room outline, wall planes and first-order visibility as JSON.
#[wasm_bindgen(js_name = roomPlan)]
pub fn room_plan(family: &str, seed: u64) -> Result<String, JsValue> {
    room_view(family, seed).map(|v| to_json(&v)).map_err(js_err)
}

/// Valid image sources as a JSON array.
#[wasm_bindgen(js_name = imageSources)]
pub fn image_sources(family: &str, seed: u64, max_order: usize) -> Result<String, JsValue> {
    valid_images(family, seed, max_order)
        .map(|v| to_json(&v))
        .map_err(js_err)
}

#[wasm_bindgen(js_name = renderChannel)]
pub fn render_channel(
    family: &str,
    seed: u64,
    mic: usize,
    max_order: usize,
) -> Result<Vec<f32>, JsValue> {
    channel_response(family, seed, mic, max_order).map_err(js_err)
}
