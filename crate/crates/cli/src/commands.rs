use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use smgarn::autograd::{DType, Element};
use smgarn::checkpoint::{stored_dtype, Checkpoint};
use smgarn::config::RunConfig;
use smgarn::dataset::{format_id, read_rgb, write_dataset, write_gray, write_rgb, Dataset, MASK_DIR};
use smgarn::evaluation::{ablation_sweep, evaluate, resolve_grid, EvalReport, Identity, Restorer};
use smgarn::synthesis::{procedural_scene, synth_sample, SynthParams};
use smgarn::training::{num_workers_from_env, Trainer};
use smgarn::{Error, GuidanceCase, Smgarn};

use crate::{AblateArgs, EvalArgs, Failure, InferArgs, SynthArgs, TrainArgs};

type Outcome = Result<(), Failure>;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn synth(a: &SynthArgs) -> Outcome {
    let (h, w) = (a.size[0], a.size[1]);
    let params = match &a.params {
        Some(p) => SynthParams::load(p)?,
        None => SynthParams::default(),
    };
    let count = a.count as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut samples = Vec::with_capacity(count);
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let (scene_seed, snow_seed): (u64, u64) = (rng.random(), rng.random());
        let id = format_id(i + 1, count + 1);
        let clean = procedural_scene(h, w, scene_seed);
        samples.push(synth_sample(id.clone(), &clean, &params.with_seed(snow_seed))?);
        entries.push(json!({ "id": id, "scene_seed": scene_seed, "snow_seed": snow_seed }));
    }
    write_dataset(&samples, &a.out)?;
    let params_map: serde_json::Map<String, serde_json::Value> = params
        .to_pairs()
        .into_iter()
        .filter(|(k, _)| k != "seed")
        .map(|(k, v)| (k, v.into()))
        .collect();
    let manifest = json!({
        "count": count,
        "height": h,
        "width": w,
        "seed": a.seed,
        "params": params_map,
        "samples": entries,
    });
    let path = a.out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    println!("wrote {count} samples of {h}x{w} to {}", a.out.display());
    Ok(())
}

pub fn train(a: &TrainArgs) -> Outcome {
    let cfg = RunConfig::load(&a.config)?;
    let dtype = match &a.resume {
        Some(p) => stored_dtype(p)?,
        None => DType::F32,
    };
    match dtype {
        DType::F32 => train_as::<f32>(a, cfg),
        DType::F64 => train_as::<f64>(a, cfg),
    }
}

fn train_as<T: Element>(a: &TrainArgs, cfg: RunConfig) -> Outcome {
    let trainer = match &a.resume {
        Some(p) => {
            let state = Checkpoint::<T>::load(p)?;
            if state.model.config != cfg.model {
                return Err(Failure::data(format!(
                    "checkpoint {} was trained with a different model configuration than {}",
                    p.display(),
                    a.config.display()
                )));
            }
            info!("resuming from {} at epoch {}", p.display(), state.epoch);
            Trainer::resume(state, cfg.train.clone())
        }
        None => Trainer::<T>::new(cfg.model.clone(), cfg.train.clone())?,
    };

    let ds = Dataset::open(&a.data)?;
    if !ds.has_gt() {
        return Err(Failure::data(format!("{} has no gt/ directory", a.data.display())));
    }
    if trainer.needs_mask() && !ds.has_mask() {
        return Err(Failure::data(format!(
            "{} is missing, required by {} with lambda = {}",
            a.data.join(MASK_DIR).display(),
            cfg.model.guidance_case,
            cfg.train.lambda
        )));
    }
    let samples = ds.load_all()?;
    trainer.check_dataset(&samples)?;

    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let cfg_path = a.out.join("config.txt");
    fs::write(&cfg_path, cfg.to_text()).map_err(|e| Error::io(&cfg_path, e))?;
    let mut trainer = trainer.with_output(&a.out)?.with_workers(num_workers_from_env());

    let first = trainer.state.epoch;
    info!(
        "training {} parameters on {} samples, epochs {first}..{}",
        trainer.model().num_params(),
        samples.len(),
        trainer.train.epochs
    );
    while trainer.state.epoch < trainer.train.epochs {
        trainer.run_epoch(&samples)?;
        let epoch = trainer.state.epoch - 1;
        let rows: Vec<_> = trainer
            .metrics
            .iter()
            .filter(|m| m.epoch == epoch && m.psnr.is_none())
            .collect();
        let mean = rows.iter().map(|m| m.loss_total).sum::<f64>() / rows.len().max(1) as f64;
        let eval = trainer
            .metrics
            .last()
            .and_then(|m| m.psnr.zip(m.ssim))
            .map(|(p, s)| format!(", train {p:.2}/{s:.2}"))
            .unwrap_or_default();
        info!(
            "epoch {epoch}: loss {mean:.5}, lr {:.3e}{eval}",
            rows.last().map_or(0.0, |m| m.lr)
        );
    }
    println!(
        "trained epochs {first}..{} ({} steps total); checkpoints in {}",
        trainer.state.epoch,
        trainer.state.global_step,
        a.out.display()
    );
    Ok(())
}

enum Loaded {
    F32(Smgarn<f32>),
    F64(Smgarn<f64>),
}

impl Loaded {
    fn open(path: &Path) -> Result<Self, Failure> {
        Ok(match stored_dtype(path)? {
            DType::F32 => Self::F32(Checkpoint::<f32>::load(path)?.model),
            DType::F64 => Self::F64(Checkpoint::<f64>::load(path)?.model),
        })
    }

    fn restorer(&self) -> &dyn Restorer {
        match self {
            Self::F32(m) => m,
            Self::F64(m) => m,
        }
    }

    fn case(&self) -> GuidanceCase {
        match self {
            Self::F32(m) => m.config.guidance_case,
            Self::F64(m) => m.config.guidance_case,
        }
    }

    fn infer(&self, img: &smgarn::ImageTensor) -> smgarn::Result<smgarn::model::Prediction> {
        match self {
            Self::F32(m) => m.infer(img, None),
            Self::F64(m) => m.infer(img, None),
        }
    }
}

fn print_report(r: &EvalReport, out: Option<&PathBuf>) -> Outcome {
    for s in &r.per_image {
        println!("{:<16} {:>8.2} dB  {:.4}", s.id, s.psnr_db, s.ssim);
    }
    if let Some(dir) = out {
        r.write(dir, "report")?;
    }
    println!("{}", r.summary());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Outcome {
    let report = match &a.ckpt {
        Some(p) => evaluate(Loaded::open(p)?.restorer(), &a.data)?,
        None => evaluate(&Identity, &a.data)?,
    };
    print_report(&report, a.out.as_ref())
}

pub fn infer(a: &InferArgs) -> Outcome {
    let model = Loaded::open(&a.ckpt)?;
    let case = model.case();
    if case.needs_gt_mask_input() {
        return Err(Failure::data(format!(
            "checkpoint {} uses {case}, which needs a ground-truth mask at inference",
            a.ckpt.display()
        )));
    }
    let inputs: Vec<PathBuf> = if a.input.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(&a.input)
            .map_err(|e| Error::io(&a.input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        v.sort();
        v
    } else {
        vec![a.input.clone()]
    };
    let save_mask = a.save_mask && case.has_masknet();
    if a.save_mask && !save_mask {
        warn!("checkpoint uses {case}, which predicts no mask; --save-mask ignored");
    }
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;

    let (mut written, mut skipped) = (0usize, 0usize);
    for path in &inputs {
        let img = match read_rgb(path) {
            Ok(img) => img,
            Err(e) => {
                eprintln!("unreadable: {} ({e})", path.display());
                skipped += 1;
                continue;
            }
        };
        let pred = model.infer(&img)?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into());
        write_rgb(&a.out.join(format!("{stem}.png")), &pred.image)?;
        if save_mask {
            if let Some(m) = &pred.mask {
                write_gray(&a.out.join(format!("{stem}_mask.png")), m)?;
            }
        }
        written += 1;
    }
    if written == 0 {
        return Err(Failure::data(format!("no readable image in {}", a.input.display())));
    }
    println!(
        "wrote {written} image(s) to {}, {} unreadable",
        a.out.display(),
        skipped
    );
    Ok(())
}

pub fn ablate(a: &AblateArgs) -> Outcome {
    resolve_grid(&a.grid)?;
    let cfg = RunConfig::load(&a.config)?;
    let train = Dataset::open(&a.data)?.load_all()?;
    let eval = match &a.eval_data {
        Some(d) => Dataset::open(d)?.load_all()?,
        None => train.clone(),
    };
    let table = ablation_sweep(&a.grid, &cfg.model, &cfg.train, &train, &eval, |v| {
        info!("training {v}")
    })?;

    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let csv_path = a.out.join("ablation.csv");
    fs::write(&csv_path, table.to_csv()?).map_err(|e| Error::io(&csv_path, e))?;
    for row in &table.rows {
        row.report.write(&a.out, &row.variant)?;
    }
    let rendered = table.render();
    let txt_path = a.out.join("ablation.txt");
    fs::write(&txt_path, &rendered).map_err(|e| Error::io(&txt_path, e))?;
    print!("{rendered}");
    for t in table.trends() {
        let tag = if t.holds { "holds" } else { "VIOLATED" };
        println!("trend {tag}: {} ({})", t.description, t.detail);
        if !t.holds {
            warn!("soft trend violated: {}", t.description);
        }
    }
    Ok(())
}
