//! Wall-count accuracy, distance error and normal-angle error.

use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{ShapeFamily, MAX_WALLS};
use crate::model::{forward, ModelError, NetworkParams};
use crate::training::{TrainingSample, WallRows};

pub const PRESENCE_THRESHOLD: f64 = 0.5;
const NORMAL_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot score an empty dataset")]
    EmptyDataset,
    #[error("{preds} predictions for {gts} ground-truth rooms")]
    LengthMismatch { preds: usize, gts: usize },
    #[error("no walls predicted present")]
    NoPredictedWalls,
    #[error("estimated wall has a zero normal")]
    ZeroNormalEstimate,
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub fn binarize(p_hat: &[f64; MAX_WALLS], threshold: f64) -> [bool; MAX_WALLS] {
    p_hat.map(|p| p >= threshold)
}

/// Percentage of rooms whose predicted-present count equals the true wall count.
pub fn acc_w(preds: &[[bool; MAX_WALLS]], gt_counts: &[usize]) -> Result<f64, MetricsError> {
    if preds.len() != gt_counts.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            gts: gt_counts.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let hits = preds
        .iter()
        .zip(gt_counts)
        .filter(|(mask, &w)| mask.iter().filter(|&&m| m).count() == w)
        .count();
    Ok(100.0 * hits as f64 / preds.len() as f64)
}

fn row_cost(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    1.0 - dot.abs() / (na * nb + 1e-12)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WallMatching {
    /// (predicted slot, ground-truth row) pairs.
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
}

/// Minimum angular-cost matching between predicted-present slots and the
/// nonzero ground-truth rows, found by exhaustive search.
pub fn match_walls(
    a_hat: &WallRows,
    mask: &[bool; MAX_WALLS],
    a_gt: &WallRows,
) -> Result<WallMatching, MetricsError> {
    let pred: Vec<usize> = (0..MAX_WALLS).filter(|&i| mask[i]).collect();
    let gt: Vec<usize> = (0..MAX_WALLS)
        .filter(|&j| a_gt[j].iter().any(|&v| v != 0.0))
        .collect();
    if pred.is_empty() {
        return Err(MetricsError::NoPredictedWalls);
    }
    // assign every element of the smaller side to a distinct element of the larger
    let swap = pred.len() > gt.len();
    let (small, large) = if swap { (&gt, &pred) } else { (&pred, &gt) };
    let cost = |s: usize, l: usize| {
        let (p, g) = if swap { (l, s) } else { (s, l) };
        row_cost(&a_hat[p], &a_gt[g])
    };

    let mut best = (f64::INFINITY, Vec::new());
    let mut current = Vec::with_capacity(small.len());
    #[allow(clippy::too_many_arguments)]
    fn search(
        depth: usize,
        used: u32,
        acc: f64,
        small: &[usize],
        large: &[usize],
        cost: &dyn Fn(usize, usize) -> f64,
        current: &mut Vec<usize>,
        best: &mut (f64, Vec<usize>),
    ) {
        if acc >= best.0 {
            return;
        }
        if depth == small.len() {
            *best = (acc, current.clone());
            return;
        }
        for (k, &l) in large.iter().enumerate() {
            if used & (1 << k) == 0 {
                current.push(l);
                let c = cost(small[depth], l);
                search(
                    depth + 1,
                    used | (1 << k),
                    acc + c,
                    small,
                    large,
                    cost,
                    current,
                    best,
                );
                current.pop();
            }
        }
    }
    search(0, 0, 0.0, small, large, &cost, &mut current, &mut best);

    let mut pairs: Vec<(usize, usize)> = small
        .iter()
        .zip(&best.1)
        .map(|(&s, &l)| if swap { (l, s) } else { (s, l) })
        .collect();
    pairs.sort_unstable();
    let unmatched_pred = pred
        .iter()
        .copied()
        .filter(|p| !pairs.iter().any(|pair| pair.0 == *p))
        .collect();
    let unmatched_gt = gt
        .iter()
        .copied()
        .filter(|g| !pairs.iter().any(|pair| pair.1 == *g))
        .collect();
    Ok(WallMatching {
        pairs,
        cost: best.0,
        unmatched_pred,
        unmatched_gt,
    })
}

/// Unit normal and non-negative offset of a homogeneous plane row.
pub fn canonical_plane(a: &[f64; 4]) -> Result<([f64; 3], f64), MetricsError> {
    let norm = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    if norm < NORMAL_EPS {
        return Err(MetricsError::ZeroNormalEstimate);
    }
    let sign = if a[3] < 0.0 { -1.0 } else { 1.0 };
    let s = sign / norm;
    Ok(([a[0] * s, a[1] * s, a[2] * s], a[3] * s))
}

pub fn wall_distance_error(est: &[f64; 4], gt: &[f64; 4]) -> Result<f64, MetricsError> {
    let (_, d_est) = canonical_plane(est)?;
    let (_, d_gt) = canonical_plane(gt)?;
    Ok((d_est - d_gt).abs())
}

/// Acute angle between the two normals, in degrees.
pub fn wall_angle_error(est: &[f64; 4], gt: &[f64; 4]) -> Result<f64, MetricsError> {
    let (n, _) = canonical_plane(est)?;
    let (m, _) = canonical_plane(gt)?;
    let dot = (n[0] * m[0] + n[1] * m[1] + n[2] * m[2]).abs();
    let cross = [
        n[1] * m[2] - n[2] * m[1],
        n[2] * m[0] - n[0] * m[2],
        n[0] * m[1] - n[1] * m[0],
    ];
    let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    // same angle as acos(|n.m|), but exact at zero
    Ok(sin.atan2(dot).to_degrees())
}

fn mean_over(
    pairs: &[([f64; 4], [f64; 4])],
    f: fn(&[f64; 4], &[f64; 4]) -> Result<f64, MetricsError>,
) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::NoPredictedWalls);
    }
    let mut sum = 0.0;
    for (est, gt) in pairs {
        sum += f(est, gt)?;
    }
    Ok(sum / pairs.len() as f64)
}

/// Mean absolute device-to-wall distance error over (estimate, truth) pairs.
pub fn delta_d(pairs: &[([f64; 4], [f64; 4])]) -> Result<f64, MetricsError> {
    mean_over(pairs, wall_distance_error)
}

/// Mean acute normal angle in degrees over (estimate, truth) pairs.
pub fn delta_theta(pairs: &[([f64; 4], [f64; 4])]) -> Result<f64, MetricsError> {
    mean_over(pairs, wall_angle_error)
}

/// Network output for one room, as consumed by the metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub a_hat: WallRows,
    pub p_hat: [f64; MAX_WALLS],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallError {
    pub pred_slot: usize,
    pub gt_row: usize,
    pub delta_d: f64,
    pub delta_theta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoomEval {
    pub seed: u64,
    pub shape_family: ShapeFamily,
    pub num_walls: usize,
    pub predicted_count: usize,
    /// Matched walls with a usable estimate; zero-normal estimates are left out.
    pub walls: Vec<WallError>,
}

impl RoomEval {
    pub fn count_correct(&self) -> bool {
        self.predicted_count == self.num_walls
    }
}

pub fn evaluate_room(pred: &Prediction, sample: &TrainingSample) -> RoomEval {
    let mask = binarize(&pred.p_hat, PRESENCE_THRESHOLD);
    let predicted_count = mask.iter().filter(|&&m| m).count();
    let walls = match match_walls(&pred.a_hat, &mask, &sample.walls) {
        Ok(m) => m
            .pairs
            .iter()
            .filter_map(|&(p, g)| {
                let est = &pred.a_hat[p];
                let gt = &sample.walls[g];
                Some(WallError {
                    pred_slot: p,
                    gt_row: g,
                    delta_d: wall_distance_error(est, gt).ok()?,
                    delta_theta: wall_angle_error(est, gt).ok()?,
                })
            })
            .collect(),
        Err(_) => Vec::new(),
    };
    RoomEval {
        seed: sample.seed,
        shape_family: sample.shape_family,
        num_walls: sample.num_walls,
        predicted_count,
        walls,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnStats {
    pub rooms: usize,
    pub acc_w: f64,
    /// Mean over rooms of the per-room mean over matched walls; NaN when no
    /// room has a matched wall.
    pub delta_d: f64,
    pub delta_theta: f64,
}

impl ColumnStats {
    fn of<'a>(rooms: impl Iterator<Item = &'a RoomEval>) -> Option<Self> {
        let mut n = 0;
        let mut hits = 0;
        let (mut dd, mut dt, mut scored) = (0.0, 0.0, 0);
        for room in rooms {
            n += 1;
            hits += room.count_correct() as usize;
            if !room.walls.is_empty() {
                let k = room.walls.len() as f64;
                dd += room.walls.iter().map(|w| w.delta_d).sum::<f64>() / k;
                dt += room.walls.iter().map(|w| w.delta_theta).sum::<f64>() / k;
                scored += 1;
            }
        }
        (n > 0).then(|| Self {
            rooms: n,
            acc_w: 100.0 * hits as f64 / n as f64,
            delta_d: if scored > 0 {
                dd / scored as f64
            } else {
                f64::NAN
            },
            delta_theta: if scored > 0 {
                dt / scored as f64
            } else {
                f64::NAN
            },
        })
    }
}

/// Table of metrics: the whole dataset plus one column per shape family.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub total: ColumnStats,
    pub families: [Option<ColumnStats>; 4],
}

impl EvalReport {
    pub fn from_rooms(rooms: &[RoomEval]) -> Result<Self, MetricsError> {
        let total = ColumnStats::of(rooms.iter()).ok_or(MetricsError::EmptyDataset)?;
        let families =
            ShapeFamily::ALL.map(|f| ColumnStats::of(rooms.iter().filter(|r| r.shape_family == f)));
        Ok(Self { total, families })
    }

    pub fn write_csv(&self, w: &mut impl Write) -> io::Result<()> {
        write!(w, "metric,Total")?;
        for f in ShapeFamily::ALL {
            write!(w, ",{}", f.title())?;
        }
        writeln!(w)?;
        let columns: Vec<Option<&ColumnStats>> = std::iter::once(Some(&self.total))
            .chain(self.families.iter().map(Option::as_ref))
            .collect();
        type Getter = fn(&ColumnStats) -> f64;
        let rows: [(&str, Getter); 4] = [
            ("rooms", |c| c.rooms as f64),
            ("acc_w_percent", |c| c.acc_w),
            ("delta_d_m", |c| c.delta_d),
            ("delta_theta_deg", |c| c.delta_theta),
        ];
        for (label, get) in rows {
            write!(w, "{label}")?;
            for col in &columns {
                match col {
                    Some(c) => write!(w, ",{}", get(c))?,
                    None => write!(w, ",")?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub fn write_room_details(w: &mut impl Write, rooms: &[RoomEval]) -> io::Result<()> {
    writeln!(
        w,
        "seed,family,num_walls,predicted_count,pred_slot,gt_row,delta_d_m,delta_theta_deg"
    )?;
    for r in rooms {
        let prefix = format!(
            "{},{},{},{}",
            r.seed, r.shape_family, r.num_walls, r.predicted_count
        );
        if r.walls.is_empty() {
            writeln!(w, "{prefix},,,,")?;
        }
        for e in &r.walls {
            writeln!(
                w,
                "{prefix},{},{},{},{}",
                e.pred_slot, e.gt_row, e.delta_d, e.delta_theta
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub rooms: Vec<RoomEval>,
}

pub fn evaluate_predictions(
    preds: &[Prediction],
    samples: &[TrainingSample],
) -> Result<Evaluation, MetricsError> {
    if preds.len() != samples.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            gts: samples.len(),
        });
    }
    let rooms: Vec<RoomEval> = preds
        .par_iter()
        .zip(samples)
        .map(|(p, s)| evaluate_room(p, s))
        .collect();
    Ok(Evaluation {
        report: EvalReport::from_rooms(&rooms)?,
        rooms,
    })
}

pub fn predict(
    params: &NetworkParams,
    samples: &[TrainingSample],
) -> Result<Vec<Prediction>, MetricsError> {
    samples
        .par_iter()
        .map(|s| {
            let (out, _) = forward(params, &s.input)?;
            Ok(Prediction {
                a_hat: out.a_hat,
                p_hat: out.p_hat,
            })
        })
        .collect()
}

pub fn evaluate(
    params: &NetworkParams,
    samples: &[TrainingSample],
) -> Result<Evaluation, MetricsError> {
    evaluate_predictions(&predict(params, samples)?, samples)
}
