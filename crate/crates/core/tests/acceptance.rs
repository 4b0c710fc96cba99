//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so that the report is always
//! printed. Set `RGI_ACCEPTANCE=1,4,8` to run a subset.

use std::collections::HashSet;
use std::f64::consts::LN_2;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rgi_core::dataset::{
    generate_dataset, manifest_path, read_dataset, reflection_coeffs, write_dataset,
    GenerateConfig, Manifest, SplitPlan,
};
use rgi_core::geometry::{
    room_to_wall_matrix, sample_room, Point3, RoomModel, ShapeFamily, MAX_WALLS,
};
use rgi_core::ism::{
    add_impulse, audible_images, default_array, enumerate_image_sources, render_rir, validate_path,
    SimConfig, ARRAY_RADIUS_M, SAMPLE_RATE_HZ, SPEED_OF_SOUND,
};
use rgi_core::metrics::{evaluate, evaluate_predictions, EvalReport, Prediction};
use rgi_core::model::{
    forward, forward_gated, init_params, load_checkpoint, save_checkpoint, GatePattern,
    NetworkParams,
};
use rgi_core::training::{
    angular_loss, decision_loss, evaluate_loss, for_each_permutation, permute_rows, pit_total_loss,
    prepare_samples, sample_gradient, train, train_with, write_history, Permutation, TrainConfig,
    TrainingSample, WallRows, BCE_CLAMP,
};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 1

/// Per-axis mirror images of a source at `s` between walls `lo` and `hi`,
/// paired with their reflection counts.
fn axis_images(lo: f64, hi: f64, s: f64, max_order: i64) -> Vec<(f64, i64)> {
    let l = hi - lo;
    let mut out = Vec::new();
    for n in -max_order..=max_order {
        let even = 2 * n;
        let odd = 2 * n + 1;
        if even.abs() <= max_order {
            out.push((2.0 * n as f64 * l + s, even.abs()));
        }
        if odd.abs() <= max_order {
            out.push((2.0 * n as f64 * l + 2.0 * hi - s, odd.abs()));
        }
    }
    out
}

fn lattice(room: &RoomModel, max_order: i64) -> Vec<Point3> {
    let half = room.bbox.map(|l| l / 2.0);
    let axes: Vec<_> = (0..3)
        .map(|k| axis_images(-half[k], half[k], 0.0, max_order))
        .collect();
    let mut out = Vec::new();
    for &(x, ox) in &axes[0] {
        for &(y, oy) in &axes[1] {
            for &(z, oz) in &axes[2] {
                if ox + oy + oz <= max_order {
                    out.push(Point3::new(x, y, z));
                }
            }
        }
    }
    out
}

fn dedup(points: impl Iterator<Item = Point3>) -> Vec<Point3> {
    let mut out: Vec<Point3> = Vec::new();
    for p in points {
        if !out.iter().any(|q| (q - p).norm() < 1e-6) {
            out.push(p);
        }
    }
    out
}

fn ism_oracle() -> Outcome {
    let mics = default_array();
    let mut worst = 0.0f64;
    let mut total = 0;
    for seed in 0..50u64 {
        let room = sample_room(ShapeFamily::Shoebox, 1000 + seed);
        let receiver = mics[seed as usize % mics.len()];
        let images = enumerate_image_sources(&room, 6, &[1.0; 6]);
        let valid = dedup(
            images
                .iter()
                .filter(|i| validate_path(&room, i, &receiver))
                .map(|i| i.position),
        );
        let oracle = lattice(&room, 6);
        if valid.len() != oracle.len() {
            return Err(format!(
                "seed {seed}: {} validated vs {} oracle positions",
                valid.len(),
                oracle.len()
            ));
        }
        let mut used = HashSet::new();
        for p in &valid {
            let (k, d) = oracle
                .iter()
                .enumerate()
                .map(|(k, q)| (k, (p - q).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            if !used.insert(k) {
                return Err(format!("seed {seed}: two images map to one lattice point"));
            }
            worst = worst.max(d);
        }
        total += valid.len();
    }
    ensure(
        worst < 1e-9,
        format!("50 shoeboxes, {total} positions, worst deviation {worst:.1e} m"),
    )
}

// ---------------------------------------------------------------- 2

fn hidden_first_order_walls(room: &RoomModel) -> usize {
    let coeffs = vec![0.9; room.num_walls()];
    enumerate_image_sources(room, 1, &coeffs)
        .iter()
        .filter(|img| img.order == 1 && !validate_path(room, img, &Point3::zeros()))
        .count()
}

fn non_convex_visibility() -> Outcome {
    let l_hidden = (0..200)
        .filter(|&seed| hidden_first_order_walls(&sample_room(ShapeFamily::LShaped, seed)) > 0)
        .count();
    let convex = [
        ShapeFamily::Shoebox,
        ShapeFamily::Pentagonal,
        ShapeFamily::Hexagonal,
    ];
    let convex_hidden = (0..200u64)
        .filter(|&i| hidden_first_order_walls(&sample_room(convex[i as usize % 3], i)) > 0)
        .count();
    let share = 100.0 * l_hidden as f64 / 200.0;
    ensure(
        share >= 95.0 && convex_hidden == 0,
        format!("L-shaped rooms with a hidden wall {share:.1} %, convex rooms {convex_hidden}/200"),
    )
}

// ---------------------------------------------------------------- 3

fn toa_consistency() -> Outcome {
    let mics = default_array();
    let fs = SAMPLE_RATE_HZ as f64;
    let mut reflections = 0;
    let mut worst = 0.0f64;
    for family in ShapeFamily::ALL {
        for seed in 0..3 {
            let room = sample_room(family, 500 + seed);
            let cfg = SimConfig::with_coeffs(reflection_coeffs(500 + seed, room.num_walls()));
            let images = enumerate_image_sources(&room, cfg.max_order, &cfg.reflection_coeffs);
            let rir = render_rir(&room, &images, &mics, &cfg).unwrap();
            for (m, mic) in mics.iter().enumerate() {
                let ch = rir.channel(m);
                let peak = (0..ch.len())
                    .max_by(|&a, &b| ch[a].abs().total_cmp(&ch[b].abs()))
                    .unwrap();
                if peak > 2 {
                    return Err(format!(
                        "{family} seed {seed} mic {m}: direct peak at tap {peak}"
                    ));
                }
                for img in audible_images(&room, &images, mic, &cfg) {
                    let r = (img.position - mic).norm();
                    let delay = r * fs / SPEED_OF_SOUND;
                    if delay >= cfg.taps as f64 {
                        continue;
                    }
                    let mut alone = vec![0.0; cfg.taps];
                    add_impulse(&mut alone, img.gain / r, delay, cfg.kernel_halfwidth);
                    let p = (0..alone.len())
                        .max_by(|&a, &b| alone[a].abs().total_cmp(&alone[b].abs()))
                        .unwrap();
                    let off = (p as f64 - delay).abs();
                    if off > 1.0 {
                        return Err(format!(
                            "{family} seed {seed} mic {m}: peak {p} for delay {delay:.3}"
                        ));
                    }
                    worst = worst.max(off);
                    reflections += 1;
                }
            }
        }
    }
    let direct = ARRAY_RADIUS_M * fs / SPEED_OF_SOUND;
    ensure(
        true,
        format!(
            "12 rooms x 32 mics: direct peaks in taps 0..=2 (delay {direct:.3}), \
             {reflections} image contributions, worst peak offset {worst:.3} taps"
        ),
    )
}

// ---------------------------------------------------------------- 4

fn random_rows(rng: &mut ChaCha8Rng) -> WallRows {
    std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-3.0..3.0)))
}

fn loss_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_zero = 0.0f64;
    let mut worst_naive = 0.0f64;
    for case in 0..100u64 {
        let family = ShapeFamily::ALL[case as usize % 4];
        let wm = room_to_wall_matrix(&sample_room(family, case));
        let neg = wm.rows.map(|r| r.map(|v| -v));
        worst_zero = worst_zero
            .max(angular_loss(&wm.rows, &wm.rows).unwrap())
            .max(angular_loss(&neg, &wm.rows).unwrap());

        let mut perm: Permutation = std::array::from_fn(|i| i);
        perm.shuffle(&mut rng);
        let a_hat = permute_rows(&wm.rows, &perm);
        let p_hat = permute_rows(&wm.presence, &perm);
        let pit = pit_total_loss(&a_hat, &p_hat, &wm.rows, &wm.presence).unwrap();
        if permute_rows(&wm.rows, &pit.permutation) != a_hat || pit.total > 1e-6 {
            return Err(format!(
                "case {case}: permutation not recovered (L = {:.2e})",
                pit.total
            ));
        }
        if pit.total != pit.gamma + 0.1 * pit.beta {
            return Err(format!("case {case}: L differs from gamma + 0.1 beta"));
        }

        let a_hat = random_rows(&mut rng);
        let p_hat: [f64; MAX_WALLS] = std::array::from_fn(|_| rng.random_range(0.01..0.99));
        let fast = pit_total_loss(&a_hat, &p_hat, &wm.rows, &wm.presence).unwrap();
        let mut naive = f64::INFINITY;
        for_each_permutation(|p| {
            let g = angular_loss(&a_hat, &permute_rows(&wm.rows, p)).unwrap();
            let b = decision_loss(&p_hat, &permute_rows(&wm.presence, p));
            naive = naive.min(g + 0.1 * b);
        });
        worst_naive = worst_naive.max((fast.total - naive).abs());
    }
    let ln2 =
        (decision_loss(&[0.5; MAX_WALLS], &[1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0]) - LN_2).abs();
    ensure(
        worst_zero < 1e-9 && ln2 < 1e-12 && worst_naive < 1e-12,
        format!(
            "gamma(+-GT, GT) <= {worst_zero:.1e}, |beta(0.5) - ln 2| = {ln2:.1e}, \
             100/100 permutations recovered, factorized vs naive {worst_naive:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 5

fn frozen_loss(
    params: &NetworkParams,
    s: &TrainingSample,
    perm: &Permutation,
    gates: Option<&GatePattern>,
) -> (f64, GatePattern) {
    let (out, cache) = forward_gated(params, &s.input, gates).unwrap();
    let gamma = angular_loss(&out.a_hat, &permute_rows(&s.walls, perm)).unwrap();
    let beta = decision_loss(&out.p_hat, &permute_rows(&s.presence, perm));
    (gamma + 0.1 * beta, cache.gate_pattern())
}

fn rel(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn gradient_check() -> Outcome {
    let config = GenerateConfig::per_family(1, 55);
    let record = rgi_core::dataset::DatasetRecord::from(&config.simulate(3).unwrap());
    let sample = TrainingSample::from_record(&record).unwrap();
    let params = init_params(55);
    let (loss, grads) = sample_gradient(&params, &sample, BCE_CLAMP).unwrap();
    let gates = forward(&params, &sample.input).unwrap().1.gate_pattern();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-3;
    let (mut worst_frozen, mut literal_fail, mut unexplained, mut crossings) = (0.0f64, 0, 0, 0);
    for _ in 0..25 {
        let i = rng.random_range(0..params.param_count());
        let mut plus = params.clone();
        *plus.scalar_mut(i) += h;
        let mut minus = params.clone();
        *minus.scalar_mut(i) -= h;
        let an = grads.scalar(i);
        let p = &loss.permutation;
        let fd = (frozen_loss(&plus, &sample, p, Some(&gates)).0
            - frozen_loss(&minus, &sample, p, Some(&gates)).0)
            / (2.0 * h);
        worst_frozen = worst_frozen.max(rel(fd, an));
        let (lp, gp) = frozen_loss(&plus, &sample, p, None);
        let (lm, gm) = frozen_loss(&minus, &sample, p, None);
        let crossed = gp.differing_units(&gates) + gm.differing_units(&gates);
        crossings += (crossed > 0) as usize;
        if rel((lp - lm) / (2.0 * h), an) >= 1e-4 {
            literal_fail += 1;
            unexplained += (crossed == 0) as usize;
        }
    }
    ensure(
        worst_frozen < 1e-4 && unexplained == 0,
        format!(
            "frozen ReLU gates: worst rel err {worst_frozen:.1e} over 25 parameters; \
             free gates: {literal_fail}/25 exceed 1e-4, {crossings}/25 probes cross a ReLU kink, \
             {unexplained} failures without a crossing"
        ),
    )
}

// ---------------------------------------------------------------- 6

fn overfit() -> Outcome {
    let config = GenerateConfig {
        counts: [13, 12, 13, 12],
        global_seed: 66,
        max_order: 6,
    };
    let records: Vec<_> = (0..config.total())
        .map(|i| rgi_core::dataset::DatasetRecord::from(&config.simulate(i).unwrap()))
        .collect();
    let samples = prepare_samples(&records).unwrap();
    let cfg = TrainConfig {
        batch_size: 10,
        learning_rate: 1e-3,
        max_epochs: OVERFIT_EPOCHS,
        patience: OVERFIT_EPOCHS,
        seed: 6,
        stop_below: Some(0.02),
        ..TrainConfig::default()
    };
    let out = train(&samples, &samples, &cfg).unwrap();
    let final_loss = evaluate_loss(&out.best_params, &samples, BCE_CLAMP).unwrap();
    ensure(
        final_loss.total < 0.02,
        format!(
            "50 samples: train L {:.4} (gamma {:.4}, beta {:.4}) after {} epochs",
            final_loss.total, final_loss.gamma, final_loss.beta, out.best_epoch
        ),
    )
}

const OVERFIT_EPOCHS: usize = 400;

// ---------------------------------------------------------------- 7

fn cached_split(dir: &Path, name: &str, config: &GenerateConfig) -> PathBuf {
    let path = dir.join(format!("{name}.rgi"));
    let fresh = std::fs::read_to_string(manifest_path(&path))
        .ok()
        .and_then(|t| serde_json::from_str::<Manifest>(&t).ok())
        .is_some_and(|m| &m.config == config);
    if !fresh {
        generate_dataset(config, &path).unwrap();
    }
    path
}

fn desk_scale() -> Outcome {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("desk-scale");
    std::fs::create_dir_all(&dir).unwrap();
    let plan = SplitPlan::desk(DESK_SEED);
    let load = |name, cfg| {
        prepare_samples(&read_dataset(&cached_split(&dir, name, cfg)).unwrap()).unwrap()
    };
    let train_set = load("train", &plan.train);
    let val_set = load("val", &plan.val);
    let test_set = load("test", &plan.test);

    let cfg = desk_config();
    let init = init_params(cfg.seed);
    let baseline = evaluate(&init, &test_set).unwrap().report;
    let start = Instant::now();
    let out = train_with(&train_set, &val_set, &cfg, init, |r| {
        eprintln!(
            "    epoch {:>3}: train L {:.4}, val L {:.4} [{:.0} s]",
            r.epoch,
            r.train.total,
            r.val.total,
            start.elapsed().as_secs_f64()
        )
    })
    .unwrap();
    let ckpt = dir.join("desk.rgiw");
    save_checkpoint(&ckpt, &out.best_params).unwrap();
    let trained_params = load_checkpoint(&ckpt).unwrap();
    let trained = evaluate(&trained_params, &test_set).unwrap().report;
    let mut csv = Vec::new();
    trained.write_csv(&mut csv).unwrap();
    std::fs::write(dir.join("table.csv"), &csv).unwrap();
    let mut hist = Vec::new();
    write_history(&mut hist, &out.history).unwrap();
    std::fs::write(dir.join("history.csv"), hist).unwrap();

    let (b, t) = (&baseline.total, &trained.total);
    let beats = t.acc_w >= b.acc_w + 30.0
        && t.delta_theta <= 0.5 * b.delta_theta
        && t.delta_d <= 0.5 * b.delta_d;
    let soft = t.acc_w >= 70.0 && t.delta_theta <= 10.0;
    let summary = format!(
        "test ACC_w {:.1} % / dd {:.3} m / dtheta {:.2} deg vs untrained {:.1} % / {:.3} m / {:.2} deg \
         (best epoch {}, {:.0} min training); soft targets {}",
        t.acc_w,
        t.delta_d,
        t.delta_theta,
        b.acc_w,
        b.delta_d,
        b.delta_theta,
        out.best_epoch,
        start.elapsed().as_secs_f64() / 60.0,
        if soft { "met" } else { "MISSED" }
    );
    print_families(&trained);
    // the soft targets are reported, not enforced
    ensure(beats, summary)
}

const DESK_SEED: u64 = 0;

fn desk_config() -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        learning_rate: 3e-4,
        max_epochs: 300,
        patience: 20,
        seed: 7,
        ..TrainConfig::default()
    }
}

fn print_families(report: &EvalReport) {
    for (family, col) in ShapeFamily::ALL.iter().zip(&report.families) {
        if let Some(c) = col {
            eprintln!(
                "    {:<11} ACC_w {:>5.1} %  dd {:.3} m  dtheta {:.2} deg",
                family.title(),
                c.acc_w,
                c.delta_d,
                c.delta_theta
            );
        }
    }
}

// ---------------------------------------------------------------- 8

fn determinism_and_formats() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = GenerateConfig {
        counts: [3, 2, 3, 2],
        global_seed: 88,
        max_order: 4,
    };
    let run = |threads: usize, name: &str| {
        let path = dir.path().join(name);
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| generate_dataset(&config, &path))
            .unwrap();
        std::fs::read(path).unwrap()
    };
    let one = run(1, "a.rgi");
    let again = run(1, "b.rgi");
    let four = run(4, "c.rgi");
    if one != again || one != four {
        return Err("dataset bytes differ between runs or thread counts".into());
    }

    let records = read_dataset(&dir.path().join("a.rgi")).unwrap();
    let copy = dir.path().join("copy.rgi");
    write_dataset(&copy, &records).unwrap();
    if std::fs::read(&copy).unwrap() != one {
        return Err("dataset read/write is not the identity".into());
    }

    let samples = prepare_samples(&records).unwrap();
    let train_cfg = TrainConfig {
        max_epochs: 2,
        patience: 2,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let history = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let out = pool
            .install(|| train(&samples, &samples, &train_cfg))
            .unwrap();
        let mut buf = Vec::new();
        write_history(&mut buf, &out.history).unwrap();
        (buf, out.best_params)
    };
    let (h1, trained) = history(1);
    if h1 != history(3).0 {
        return Err("training history depends on the thread count".into());
    }
    let ckpt = dir.path().join("m.rgiw");
    save_checkpoint(&ckpt, &trained).unwrap();
    let loaded = load_checkpoint(&ckpt).unwrap();
    let ckpt2 = dir.path().join("m2.rgiw");
    save_checkpoint(&ckpt2, &loaded).unwrap();
    let exact = trained
        .values()
        .zip(loaded.values())
        .all(|(a, b)| (*a as f32) as f64 == *b);
    if !exact || std::fs::read(&ckpt).unwrap() != std::fs::read(&ckpt2).unwrap() {
        return Err("checkpoint round trip is not the identity".into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let preds: Vec<Prediction> = samples
        .iter()
        .map(|s| {
            let mut perm: Permutation = std::array::from_fn(|i| i);
            perm.shuffle(&mut rng);
            let flipped = s
                .walls
                .map(|r| if rng.random() { r.map(|v| -v) } else { r });
            Prediction {
                a_hat: permute_rows(&flipped, &perm),
                p_hat: permute_rows(&s.presence, &perm),
            }
        })
        .collect();
    let report = evaluate_predictions(&preds, &samples).unwrap().report;
    let columns = std::iter::once(&report.total).chain(report.families.iter().flatten());
    let mut exact_metrics = true;
    for c in columns {
        exact_metrics &= c.acc_w == 100.0 && c.delta_d == 0.0 && c.delta_theta == 0.0;
    }
    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    let header = String::from_utf8(csv)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_owned();
    ensure(
        exact_metrics && header == "metric,Total,Shoebox,Pentagonal,Hexagonal,L-shaped",
        "dataset bytes equal across runs and 1/4 threads, training history equal across 1/3 \
         threads, dataset and checkpoint round trips exact, GT injection gives (100, 0, 0) \
         in all 5 columns"
            .to_owned(),
    )
}

// ----------------------------------------------------------------

fn main() {
    type Criterion = (u32, &'static str, fn() -> Outcome);
    let criteria: [Criterion; 8] = [
        (1, "ISM oracle equivalence", ism_oracle),
        (2, "non-convex visibility", non_convex_visibility),
        (3, "TOA consistency", toa_consistency),
        (4, "loss identities", loss_identities),
        (5, "gradient check", gradient_check),
        (6, "overfit sanity", overfit),
        (7, "desk-scale end-to-end", desk_scale),
        (8, "determinism and formats", determinism_and_formats),
    ];
    let only: Option<Vec<u32>> = std::env::var("RGI_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (n, name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| Err(format!("panicked: {:?}", e.downcast_ref::<String>())));
        let secs = start.elapsed().as_secs_f64();
        let (status, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {n} ({name}): {status} [{secs:.1} s] {detail}");
        if outcome.is_err() {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
