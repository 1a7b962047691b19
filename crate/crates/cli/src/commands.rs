use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use iter_core::eval::{dispersion_sanity, evaluate_one, evaluate_set, summarize, EvalImages, EvalRecord, Restored};
use iter_core::imaging::write_pnm;
use iter_core::sampler::Strategy;
use iter_core::trainer::{self, checkpoint_name, read_checkpoint, FINAL_CHECKPOINT, LOG_FILE};
use iter_core::{Image, Mask, Nets, RunConfig, Trainer, World, WorldStream};
use rayon::prelude::*;

use crate::dataset::{item_file, Dataset, SUFFIXES};
use crate::manifest::{absolute, Manifest, MANIFEST_FILE};

pub const METRICS_FILE: &str = "metrics.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const DISPERSION_CHECK_FILE: &str = "dispersion_check.csv";
pub const SWEEP_FILE: &str = "sweep_alpha.csv";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn write_image(path: &Path, img: &Image) -> Result<()> {
    let mut buf = Vec::new();
    write_pnm(img, &mut buf)?;
    write_file(path, &buf)
}

fn mask_image(mask: &Mask) -> Result<Image> {
    Ok(Image::new(mask.width(), mask.height(), 1, mask.as_f64())?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

pub fn parse_items(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse().with_context(|| format!("bad item index `{p}`")))
        .collect()
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut manifest = Manifest::new("synth", cfg);
    for i in 0..cfg.count {
        manifest.outputs.extend(SUFFIXES.iter().map(|s| item_file(i, s)));
    }
    manifest.write(out)?;

    let world = World::new(cfg.world, cfg.world_seed())?;
    let stream = WorldStream::new(world, cfg.heldout_seed());
    let samples = (0..cfg.count as u64)
        .into_par_iter()
        .map(|i| stream.sample(i))
        .collect::<iter_core::Result<Vec<_>>>()?;
    for (i, s) in samples.iter().enumerate() {
        write_file(&out.join(item_file(i, SUFFIXES[0])), s.hq.to_csv().as_bytes())?;
        write_image(&out.join(item_file(i, SUFFIXES[1])), &s.hq_image)?;
        write_image(&out.join(item_file(i, SUFFIXES[2])), &s.lq_image)?;
        write_file(&out.join(item_file(i, SUFFIXES[3])), s.lq.to_csv().as_bytes())?;
    }
    eprintln!("synth: wrote {} items to {}", cfg.count, out.display());
    Ok(())
}

pub fn train(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<()> {
    let tcfg = cfg.train_config();
    let mut manifest = Manifest::new("train", cfg);
    let mut trainer = match resume {
        Some(p) => {
            let p = absolute(p)?;
            manifest.arg("resume", p.display().to_string()).input(&p)?;
            let t = Trainer::from_checkpoint(tcfg, &read_checkpoint(&p)?)
                .with_context(|| format!("cannot resume from {}", p.display()))?;
            ensure!(
                t.nets().vocab() == cfg.world.vocab,
                "checkpoint vocabulary {} != world.vocab {}",
                t.nets().vocab(),
                cfg.world.vocab
            );
            ensure!(
                t.nets().restoration.mode() == cfg.input_mode(),
                "checkpoint restoration input does not match net.input"
            );
            t
        }
        None => Trainer::new(tcfg, cfg.world.vocab, cfg.input_mode())?,
    };
    let every = tcfg.checkpoint_every;
    manifest.outputs.push(LOG_FILE.to_string());
    if every > 0 {
        let first = trainer.step() / every + 1;
        let last = tcfg.iterations / every;
        manifest
            .outputs
            .extend((first..=last).map(|k| checkpoint_name(k * every)));
    }
    manifest.outputs.push(FINAL_CHECKPOINT.to_string());
    manifest.write(out)?;

    let world = World::new(cfg.world, cfg.world_seed())?;
    let stream = WorldStream::new(world, cfg.train_data_seed());
    let report_every = (tcfg.iterations / 20).max(1);
    let outputs = trainer::train(&mut trainer, &stream, out, |r| {
        if r.step % report_every == 0 {
            eprintln!(
                "step {:>7}  L_dist {:.4}  L_r {:.4}  L_e {:.4}  acc {:.3}",
                r.step, r.restoration, r.refiner, r.evaluator, r.token_acc
            );
        }
    })?;
    eprintln!(
        "train: {} steps, final checkpoint {}",
        outputs.reports.len(),
        outputs.final_checkpoint.display()
    );
    Ok(())
}

/// Checkpoint, dataset and the items to process, hashed into `manifest`.
struct EvalInputs {
    nets: Nets,
    dataset: Dataset,
    items: Vec<usize>,
}

fn eval_inputs(
    cfg: &mut RunConfig,
    manifest: &mut Manifest,
    checkpoint: &Path,
    dataset: &Path,
    items: Option<&[usize]>,
) -> Result<EvalInputs> {
    let checkpoint = absolute(checkpoint)?;
    let dataset_dir = absolute(dataset)?;
    let dataset = Dataset::open(&dataset_dir)?;
    cfg.world = dataset.config.world;
    manifest.config = cfg.as_map();
    let items = match items {
        Some(list) => list.to_vec(),
        None => (0..dataset.count).collect(),
    };
    if let Some(bad) = items.iter().find(|&&i| i >= dataset.count) {
        bail!("item {bad} out of range: dataset has {} items", dataset.count);
    }
    manifest
        .arg("checkpoint", checkpoint.display().to_string())
        .arg("dataset", dataset_dir.display().to_string())
        .arg("items", join(&items));
    manifest.input(&checkpoint)?.input(&dataset_dir.join(MANIFEST_FILE))?;
    for &i in &items {
        for f in dataset.files(i) {
            manifest.input(&f)?;
        }
    }
    let nets = Nets::from_tensor_file(&read_checkpoint(&checkpoint)?)
        .with_context(|| format!("cannot load {}", checkpoint.display()))?;
    ensure!(
        nets.vocab() == dataset.config.world.vocab,
        "checkpoint vocabulary {} != dataset vocabulary {}",
        nets.vocab(),
        dataset.config.world.vocab
    );
    Ok(EvalInputs { nets, dataset, items })
}

const RECORD_HEADER: &str = "start_step,cells,token_acc_before,token_acc_after,masked_cells,masked_acc_before,masked_acc_after,psnr_before,psnr_after,psnr_after_cc,ssim_before,ssim_after,dispersion";

fn record_fields(r: &EvalRecord) -> String {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.start_step,
        r.cells,
        ratio(r.hits_l, r.cells),
        ratio(r.hits_0, r.cells),
        r.masked,
        ratio(r.masked_hits_l, r.masked),
        ratio(r.masked_hits_0, r.masked),
        r.psnr_l,
        r.psnr_0,
        r.psnr_0_cc,
        r.ssim_l,
        r.ssim_0,
        opt(r.dispersion)
    )
}

fn trajectory_text(rec: &EvalRecord, r: &Restored) -> String {
    let t = &r.trajectory;
    let mut s = String::new();
    let _ = writeln!(s, "index = {}", rec.index);
    let _ = writeln!(s, "strategy = {}", t.strategy);
    let _ = writeln!(s, "selection = {}", t.selection);
    let _ = writeln!(s, "start_step = {}", t.start_step);
    let _ = writeln!(
        s,
        "trusted = {}",
        t.trusted.as_ref().map(|m| m.count().to_string()).unwrap_or_default()
    );
    let _ = writeln!(s, "initial_kept = {}", t.initial.mask().count());
    let steps: Vec<String> = t.steps.iter().map(|st| format!("{}:{}", st.t, st.k)).collect();
    let _ = writeln!(s, "steps = {}", steps.join(","));
    let _ = writeln!(s, "dispersion = {}", opt(t.dispersion()));
    s
}

pub fn step_files(t: usize) -> [String; 2] {
    [format!("step_{t:02}_mask.pgm"), format!("step_{t:02}_tokens.csv")]
}

fn write_item(dir: &Path, rec: &EvalRecord, r: &Restored, img: &EvalImages) -> Result<()> {
    write_image(&dir.join("before.pgm"), &img.before)?;
    write_image(&dir.join("after.pgm"), &img.after)?;
    write_image(&dir.join("after_cc.pgm"), &img.corrected)?;
    write_file(&dir.join("before.csv"), r.s_l.to_csv().as_bytes())?;
    write_file(&dir.join("after.csv"), r.s_0.to_csv().as_bytes())?;
    write_file(&dir.join("trajectory.txt"), trajectory_text(rec, r).as_bytes())?;
    for st in &r.trajectory.steps {
        let [mask, tokens] = step_files(st.t);
        write_image(&dir.join("steps").join(mask), &mask_image(&st.selected)?)?;
        write_file(
            &dir.join("steps").join(tokens),
            st.state.tokens().to_csv().as_bytes(),
        )?;
    }
    Ok(())
}

pub fn item_dir(index: usize) -> String {
    format!("item_{index:04}")
}

pub fn sample(
    cfg: &RunConfig,
    out: &Path,
    checkpoint: &Path,
    dataset: &Path,
    items: Option<&[usize]>,
) -> Result<()> {
    let mut cfg = cfg.clone();
    let mut manifest = Manifest::new("sample", &cfg);
    let inputs = eval_inputs(&mut cfg, &mut manifest, checkpoint, dataset, items)?;
    manifest.outputs.push(METRICS_FILE.to_string());
    manifest.outputs.extend(inputs.items.iter().map(|&i| item_dir(i) + "/"));
    manifest.write(out)?;

    let scfg = cfg.sample_config();
    let results = inputs
        .items
        .par_iter()
        .map(|&i| {
            let s = inputs.dataset.load(i)?;
            Ok(evaluate_one(&inputs.nets, &inputs.dataset.world, &s, i as u64, &scfg)?)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut csv = format!("index,{RECORD_HEADER}\n");
    for (rec, restored, images) in &results {
        write_item(&out.join(item_dir(rec.index as usize)), rec, restored, images)?;
        let _ = writeln!(csv, "{},{}", rec.index, record_fields(rec));
    }
    write_file(&out.join(METRICS_FILE), csv.as_bytes())?;
    let records: Vec<EvalRecord> = results.into_iter().map(|r| r.0).collect();
    let s = summarize(&records);
    eprintln!(
        "sample: {} inputs  masked acc {:.4} -> {:.4}  psnr {:.3} -> {:.3} (colour corrected {:.3})",
        s.inputs, s.masked_acc_l, s.masked_acc_0, s.psnr_l, s.psnr_0, s.psnr_0_cc
    );
    Ok(())
}

pub fn ablate(
    cfg: &RunConfig,
    out: &Path,
    checkpoint: &Path,
    dataset: &Path,
    items: Option<&[usize]>,
) -> Result<()> {
    let mut cfg = cfg.clone();
    let mut manifest = Manifest::new("ablate", &cfg);
    let inputs = eval_inputs(&mut cfg, &mut manifest, checkpoint, dataset, items)?;
    manifest.outputs.push(ABLATION_FILE.to_string());
    manifest.outputs.push(DISPERSION_CHECK_FILE.to_string());
    manifest.write(out)?;

    let (w, h) = (cfg.world.width, cfg.world.height);
    let (clustered, uniform) = dispersion_sanity(w, h, (w * h / 4).max(2), cfg.sample_config().seed)
        .context("grid too small for the dispersion check")?;
    let holds = clustered < uniform;
    write_file(
        &out.join(DISPERSION_CHECK_FILE),
        format!("clustered,uniform,holds\n{clustered},{uniform},{holds}\n").as_bytes(),
    )?;
    ensure!(holds, "dispersion check failed: clustered {clustered} >= uniform {uniform}");

    let jobs: Vec<(Strategy, usize)> = cfg
        .strategies
        .iter()
        .flat_map(|&s| inputs.items.iter().map(move |&i| (s, i)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(strategy, i)| {
            let s = inputs.dataset.load(i)?;
            let scfg = iter_core::SampleConfig {
                strategy,
                ..cfg.sample_config()
            };
            Ok(evaluate_one(&inputs.nets, &inputs.dataset.world, &s, i as u64, &scfg)?.0)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut csv = format!("strategy,index,{RECORD_HEADER}\n");
    for ((strategy, _), rec) in jobs.iter().zip(&records) {
        let _ = writeln!(csv, "{strategy},{},{}", rec.index, record_fields(rec));
    }
    write_file(&out.join(ABLATION_FILE), csv.as_bytes())?;
    for strategy in &cfg.strategies {
        let mine: Vec<EvalRecord> = jobs
            .iter()
            .zip(&records)
            .filter(|((s, _), _)| s == strategy)
            .map(|(_, r)| r.clone())
            .collect();
        let s = summarize(&mine);
        eprintln!(
            "ablate: {strategy:<9} acc {:.4}  psnr {:.3}  dispersion {}",
            s.acc_0,
            s.psnr_0,
            opt(s.dispersion)
        );
    }
    Ok(())
}

pub fn sweep_alpha(
    cfg: &RunConfig,
    out: &Path,
    checkpoint: &Path,
    dataset: &Path,
    items: Option<&[usize]>,
) -> Result<()> {
    let mut cfg = cfg.clone();
    let mut manifest = Manifest::new("sweep-alpha", &cfg);
    let inputs = eval_inputs(&mut cfg, &mut manifest, checkpoint, dataset, items)?;
    manifest.outputs.push(SWEEP_FILE.to_string());
    manifest.write(out)?;

    let samples = inputs
        .items
        .iter()
        .map(|&i| inputs.dataset.load(i))
        .collect::<Result<Vec<_>>>()?;
    let mut alphas = cfg.alphas.clone();
    alphas.sort_by(f64::total_cmp);
    let mut csv = String::from(
        "alpha,inputs,mean_start_step,token_acc_before,token_acc_after,masked_acc_before,masked_acc_after,psnr_before,psnr_after,psnr_after_cc\n",
    );
    for alpha in alphas {
        let scfg = iter_core::SampleConfig {
            alpha,
            ..cfg.sample_config()
        };
        let mut records = evaluate_set(&inputs.nets, &inputs.dataset.world, &samples, &scfg)?;
        for (r, &i) in records.iter_mut().zip(&inputs.items) {
            r.index = i as u64;
        }
        let s = summarize(&records);
        let _ = writeln!(
            csv,
            "{alpha},{},{},{},{},{},{},{},{},{}",
            s.inputs,
            s.mean_start_step,
            s.acc_l,
            s.acc_0,
            s.masked_acc_l,
            s.masked_acc_0,
            s.psnr_l,
            s.psnr_0,
            s.psnr_0_cc
        );
    }
    write_file(&out.join(SWEEP_FILE), csv.as_bytes())?;
    eprint!("{csv}");
    Ok(())
}

/// Re-runs the command recorded in `manifest` into `out`.
pub fn replay(manifest_path: &Path, out: Option<&Path>) -> Result<()> {
    let m = Manifest::read(manifest_path)?;
    m.verify_inputs()?;
    let cfg = m.run_config()?;
    let out: PathBuf = match out {
        Some(o) => o.to_path_buf(),
        None => manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    let arg = |k: &str| {
        m.args
            .get(k)
            .map(PathBuf::from)
            .with_context(|| format!("manifest lacks arg.{k}"))
    };
    let items = m.args.get("items").map(|s| parse_items(s)).transpose()?;
    match m.command.as_str() {
        "synth" => synth(&cfg, &out),
        "train" => {
            let resume = m.args.get("resume").map(PathBuf::from);
            train(&cfg, &out, resume.as_deref())
        }
        "sample" => sample(&cfg, &out, &arg("checkpoint")?, &arg("dataset")?, items.as_deref()),
        "ablate" => ablate(&cfg, &out, &arg("checkpoint")?, &arg("dataset")?, items.as_deref()),
        "sweep-alpha" => sweep_alpha(&cfg, &out, &arg("checkpoint")?, &arg("dataset")?, items.as_deref()),
        other => bail!("cannot replay unknown command `{other}`"),
    }
}
