use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rgi_core::dataset::{
    generate_dataset, read_dataset, read_record, reflection_coeffs, DatasetError, GenerateConfig,
    SplitPlan,
};
use rgi_core::geometry::{room_to_wall_matrix, sample_room, Point3};
use rgi_core::ism::{enumerate_image_sources, validate_path};
use rgi_core::metrics::{evaluate as score, write_room_details};
use rgi_core::model::{init_params, load_checkpoint, save_checkpoint, ModelError};
use rgi_core::training::{prepare_samples, save_history, train_with, TrainConfig, TrainingSample};

use crate::error::CliError;
use crate::{EvaluateArgs, GenerateArgs, InspectArgs, Plan, TrainArgs, What};

const ORDER_LIMIT: usize = 10;

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => {
            Box::new(BufWriter::new(File::create(p).map_err(|e| {
                CliError::io(format!("creating {}", p.display()), e)
            })?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_err(path: Option<&Path>) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| {
        let name = path.map_or("stdout".into(), |p| p.display().to_string());
        CliError::io(format!("writing {name}"), e)
    }
}

fn dataset_err(path: &Path) -> impl Fn(DatasetError) -> CliError + '_ {
    move |e| match e {
        DatasetError::Io(io) => CliError::io(path.display().to_string(), io),
        other => other.into(),
    }
}

fn model_err(path: &Path) -> impl Fn(ModelError) -> CliError + '_ {
    move |e| match e {
        ModelError::Io(io) => CliError::io(path.display().to_string(), io),
        other => other.into(),
    }
}

fn generate_one(config: &GenerateConfig, out: &Path) -> Result<(), CliError> {
    let start = Instant::now();
    let manifest = generate_dataset(config, out).map_err(dataset_err(out))?;
    println!(
        "wrote {} samples to {}",
        manifest.sample_count,
        out.display()
    );
    for (family, n) in &manifest.family_counts {
        println!("  {:<12}{n}", family.title());
    }
    println!("elapsed {:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}

pub fn generate(a: &GenerateArgs) -> Result<(), CliError> {
    if a.max_order > ORDER_LIMIT {
        return Err(CliError::Config(format!("--max-order above {ORDER_LIMIT}")));
    }
    if let (Some(plan), Some(dir)) = (a.plan, &a.out_dir) {
        let mut plan = match plan {
            Plan::Desk => SplitPlan::desk(a.seed),
            Plan::Full => SplitPlan::full_scale(a.seed),
        };
        for split in [&mut plan.train, &mut plan.val, &mut plan.test] {
            split.max_order = a.max_order;
        }
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
        for (name, config) in plan.splits() {
            generate_one(config, &dir.join(format!("{name}.rgi")))?;
        }
        return Ok(());
    }
    let out = a.out.as_ref().expect("clap requires --out without --plan");
    let counts = match &a.counts {
        Some(c) => [c[0], c[1], c[2], c[3]],
        None => [a.per_family; 4],
    };
    let config = GenerateConfig {
        counts,
        global_seed: a.seed,
        max_order: a.max_order,
    };
    generate_one(&config, out)
}

fn load_samples(path: &Path) -> Result<Vec<TrainingSample>, CliError> {
    let records = read_dataset(path).map_err(dataset_err(path))?;
    log::info!("loaded {} samples from {}", records.len(), path.display());
    Ok(prepare_samples(&records)?)
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let config = TrainConfig {
        batch_size: a.batch_size,
        learning_rate: a.lr,
        max_epochs: a.epochs,
        patience: a.patience.unwrap_or(a.epochs.clamp(1, 10)),
        seed: a.seed,
        ..TrainConfig::default()
    };
    config.validate()?;
    let train_set = load_samples(&a.train)?;
    let val_set = load_samples(&a.val)?;
    let init = match &a.init {
        Some(p) => load_checkpoint(p).map_err(model_err(p))?,
        None => init_params(a.seed),
    };
    let start = Instant::now();
    let outcome = train_with(&train_set, &val_set, &config, init, |r| {
        log::info!(
            "epoch {:>3}  train L {:.5}  val L {:.5} (gamma {:.5}, beta {:.5})  {:.0} s",
            r.epoch,
            r.train.total,
            r.val.total,
            r.val.gamma,
            r.val.beta,
            start.elapsed().as_secs_f64()
        );
    })?;
    save_checkpoint(&a.out, &outcome.best_params).map_err(model_err(&a.out))?;
    let history: PathBuf = a
        .history
        .clone()
        .unwrap_or_else(|| a.out.with_extension("csv"));
    save_history(&history, &outcome.history)
        .map_err(|e| CliError::io(format!("writing {}", history.display()), e))?;
    println!(
        "best validation L {:.6} at epoch {} of {}",
        outcome.best_val_total,
        outcome.best_epoch,
        outcome.history.len()
    );
    println!(
        "checkpoint {}, history {}",
        a.out.display(),
        history.display()
    );
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let params = load_checkpoint(&a.ckpt).map_err(model_err(&a.ckpt))?;
    let samples = load_samples(&a.data)?;
    let eval = score(&params, &samples)?;
    let t = &eval.report.total;
    log::info!(
        "ACC_w {:.1} %, delta d {:.4} m, delta theta {:.3} deg over {} rooms",
        t.acc_w,
        t.delta_d,
        t.delta_theta,
        t.rooms
    );
    let mut w = output(a.out.as_deref())?;
    eval.report
        .write_csv(&mut w)
        .and_then(|_| w.flush())
        .map_err(write_err(a.out.as_deref()))?;
    if let Some(p) = &a.detail {
        let mut w = output(Some(p))?;
        write_room_details(&mut w, &eval.rooms)
            .and_then(|_| w.flush())
            .map_err(write_err(Some(p)))?;
    }
    Ok(())
}

pub fn inspect(a: &InspectArgs) -> Result<(), CliError> {
    let record = read_record(&a.data, a.index).map_err(dataset_err(&a.data))?;
    let mut w = output(a.out.as_deref())?;
    let result = match a.what {
        What::Rir => write_rir(&mut w, &record.rir),
        What::Images => {
            if a.max_order > ORDER_LIMIT {
                return Err(CliError::Config(format!("--max-order above {ORDER_LIMIT}")));
            }
            let room = sample_room(record.shape_family, record.seed);
            let rebuilt = room_to_wall_matrix(&room).rows.map(|r| r.map(|v| v as f32));
            if rebuilt != record.walls {
                return Err(CliError::Config(format!(
                    "sample {} cannot be rebuilt from its seed",
                    a.index
                )));
            }
            let coeffs = reflection_coeffs(record.seed, room.num_walls());
            let images = enumerate_image_sources(&room, a.max_order, &coeffs);
            let center = Point3::zeros();
            writeln!(w, "order,wall_sequence,x,y,z,gain,valid_at_center").and_then(|_| {
                for img in &images {
                    let valid = validate_path(&room, img, &center);
                    if a.valid_only && !valid {
                        continue;
                    }
                    let seq: Vec<String> = img.wall_sequence.iter().map(u8::to_string).collect();
                    let p = img.position;
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{}",
                        img.order,
                        seq.join("-"),
                        p.x,
                        p.y,
                        p.z,
                        img.gain,
                        valid
                    )?;
                }
                Ok(())
            })
        }
    };
    result
        .and_then(|_| w.flush())
        .map_err(write_err(a.out.as_deref()))
}

fn write_rir(w: &mut impl Write, rir: &[f32]) -> io::Result<()> {
    for channel in rir.chunks(rgi_core::ism::RIR_TAPS) {
        let row: Vec<String> = channel.iter().map(f32::to_string).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
