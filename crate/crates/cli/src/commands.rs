//! Subcommand implementations. Each resolves its inputs from the shared
//! config, does the work through the core library, writes artifacts under
//! the output directory, and records `run.json`.

use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};

use nanotrack_core::dataset::{Dataset, DatasetWriter, FrameRecord};
use nanotrack_core::deploy::{self, estimate_rate_power, plan_memory, MemoryBudget, OperatingPoint};
use nanotrack_core::error::{Error, Result};
use nanotrack_core::eval::{evaluate, PredictionSource};
use nanotrack_core::layer::LayerDesc;
use nanotrack_core::model::{image_to_input, ModelGraph};
use nanotrack_core::modelio::{load_model, save_model, StoredModel};
use nanotrack_core::plot::{svg_histogram, svg_lines, Series};
use nanotrack_core::quant::calibrate;
use nanotrack_core::sim::episode::{run_episode, Perception};
use nanotrack_core::sim::render::{random_annotation, render_annotation};
use nanotrack_core::sim::trajectory::make_trajectory;
use nanotrack_core::sim::splitmix64;
use nanotrack_core::train::train;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{write_provenance, PerceptionKind, RunConfig};

/// Stdout handle for report lines; write errors (a closed pipe included)
/// surface as `Error::Io` instead of a panic.
fn stdout() -> io::StdoutLock<'static> {
    io::stdout().lock()
}

fn out_file(config: &RunConfig, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(&config.paths.output)?;
    Ok(config.paths.output.join(name))
}

fn ensure_parent_dir(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

/// Load wrappers that put the offending path into the error, so a typo'd
/// `--model` names itself instead of a bare "No such file or directory".
fn load_model_at(path: &Path) -> Result<StoredModel> {
    load_model(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read model {}: {e}", path.display())))
}

fn load_dataset_at(path: &Path) -> Result<Dataset> {
    Dataset::load(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read dataset {}: {e}", path.display())))
}

pub fn render_dataset(config: &RunConfig, out: Option<PathBuf>, frames: Option<usize>) -> Result<()> {
    let root = out.unwrap_or_else(|| config.paths.dataset.clone());
    let n = frames.unwrap_or(config.render.frames);
    let cam = config.camera;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut writer = DatasetWriter::create(&root)?;
    for i in 0..n {
        let ann = random_annotation(&mut rng);
        let noise_seed = splitmix64(config.seed.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        let image = render_annotation(&cam, &ann, noise_seed)?;
        let pose = cam.back_project(ann.u, ann.v, ann.d);
        writer.add_frame(
            FrameRecord {
                frame: format!("frame_{i:05}.pgm"),
                u: ann.u,
                v: ann.v,
                d: ann.d,
                led: ann.led,
                pose: Some(pose),
            },
            &image,
        )?;
    }
    let written = writer.finish()?;
    if written == 0 {
        eprintln!("warning: rendered an empty dataset");
    }
    write_provenance(config, &format!("render-dataset --out {} --frames {n}", root.display()))?;
    writeln!(stdout(), "rendered {written} frames into {}", root.display())?;
    Ok(())
}

pub fn train_cmd(config: &RunConfig) -> Result<()> {
    let dataset = load_dataset_at(&config.paths.dataset)?;
    if dataset.is_empty() {
        eprintln!("warning: dataset {} is empty", config.paths.dataset.display());
    }
    let samples = dataset.training_samples()?;
    let mut model = ModelGraph::build_reference_fcnn(config.seed);
    model.check_mac_budget()?;
    let mut hp = config.train.clone();
    hp.seed = config.seed;
    let report = train(&mut model, &samples, &hp)?;

    ensure_parent_dir(&config.paths.model)?;
    save_model(&config.paths.model, &StoredModel::Float(model))?;
    let mut csv = String::from("epoch,loss\n");
    for (i, loss) in report.loss_curve.iter().enumerate() {
        csv.push_str(&format!("{},{loss:.8}\n", i + 1));
    }
    fs::write(out_file(config, "train.csv")?, csv)?;
    let series = vec![Series {
        name: "training loss".into(),
        points: report.loss_curve.iter().enumerate().map(|(i, &l)| ((i + 1) as f64, l)).collect(),
    }];
    fs::write(out_file(config, "loss.svg")?, svg_lines("Training loss", "epoch", "loss", &series))?;
    write_provenance(config, &format!("train --dataset {}", config.paths.dataset.display()))?;
    writeln!(
        stdout(),
        "trained {} epochs on {} samples, final loss {:.6}, model -> {}",
        report.loss_curve.len(),
        samples.len(),
        report.final_loss,
        config.paths.model.display()
    )?;
    Ok(())
}

pub fn quantize_cmd(config: &RunConfig, out: Option<PathBuf>) -> Result<()> {
    let StoredModel::Float(model) = load_model_at(&config.paths.model)? else {
        return Err(Error::InvalidArgument(format!(
            "{} is already quantized",
            config.paths.model.display()
        )));
    };
    let dataset = load_dataset_at(&config.paths.dataset)?;
    let take = config.quantize.calibration_images.min(dataset.len());
    let mut images = Vec::with_capacity(take);
    for record in dataset.records().iter().take(take) {
        images.push(image_to_input(&dataset.load_image(record)?.pixels)?);
    }
    let qm = calibrate(&model, &images)?;
    let out_path = out.unwrap_or_else(|| config.paths.output.join("model_int8.ntrk"));
    ensure_parent_dir(&out_path)?;
    let param_bytes = qm.param_bytes();
    save_model(&out_path, &StoredModel::Quantized(qm))?;
    write_provenance(config, &format!("quantize --out {}", out_path.display()))?;
    writeln!(
        stdout(),
        "calibrated on {take} images, {param_bytes} parameter bytes, model -> {}",
        out_path.display()
    )?;
    Ok(())
}

/// Descriptor chain + input shape for planning, from either format.
fn planning_view(model: &StoredModel) -> (Vec<LayerDesc>, (usize, usize, usize)) {
    match model {
        StoredModel::Float(m) => (m.layers.clone(), m.input_shape),
        StoredModel::Quantized(m) => (m.conv_descs(), m.input_shape),
    }
}

pub fn plan_cmd(config: &RunConfig, model_ref: &str) -> Result<()> {
    let stored = if model_ref == "ref" {
        StoredModel::Float(ModelGraph::build_reference_fcnn(config.seed))
    } else {
        load_model_at(Path::new(model_ref))?
    };
    let (layers, input_shape) = planning_view(&stored);
    let budget = MemoryBudget::default();
    let plan = plan_memory(&layers, input_shape, &budget)?;

    let mut table = String::new();
    table.push_str("layer,label,macs,cycles,tile_rows,l1_bytes\n");
    for lp in &plan.layers {
        table.push_str(&format!(
            "{},{},{},{},{},{}\n",
            lp.layer_index, lp.label, lp.macs, lp.cycles, lp.tile_rows, lp.l1_bytes
        ));
    }
    fs::write(out_file(config, "plan.csv")?, &table)?;

    writeln!(stdout(), "model: {} ({} conv layers)", model_ref, plan.layers.len())?;
    writeln!(stdout(), "total MACs: {}", plan.total_macs)?;
    writeln!(stdout(), "total cycles: {}", plan.total_cycles)?;
    let l2 = &plan.l2;
    writeln!(
        stdout(),
        "L2 residency: {} bytes (params {} + images {} + activations {} + code {}) of {}",
        l2.total(),
        l2.param_bytes,
        l2.image_bytes,
        l2.activation_bytes,
        l2.code_bytes,
        budget.l2_bytes
    )?;
    for point in [OperatingPoint::max_performance(), OperatingPoint::min_power()] {
        let rp = estimate_rate_power(plan.total_cycles, &point);
        writeln!(
            stdout(),
            "{}: {:.1} fps, soc {:.1} mW, system {:.1} mW, {:.2} mJ/frame",
            rp.point.name, rp.fps, rp.soc_power_mw, rp.system_power_mw, rp.energy_per_frame_mj
        )?;
    }
    writeln!(
        stdout(),
        "implied platform power: {:.0} mW",
        deploy::implied_platform_power_mw(OperatingPoint::max_performance().system_power_mw())
    )?;
    write_provenance(config, &format!("plan --model {model_ref}"))?;
    Ok(())
}

pub fn eval_cmd(config: &RunConfig, model: Option<PathBuf>, predictions: Option<PathBuf>) -> Result<()> {
    let dataset = load_dataset_at(&config.paths.dataset)?;
    if dataset.is_empty() {
        eprintln!("warning: dataset {} is empty", config.paths.dataset.display());
    }
    let stored;
    let source = match (&model, &predictions) {
        (Some(_), Some(_)) => {
            return Err(Error::InvalidArgument("pass either --model or --predictions, not both".into()))
        }
        (None, Some(p)) => PredictionSource::File(p),
        (maybe_model, None) => {
            let path = maybe_model.clone().unwrap_or_else(|| config.paths.model.clone());
            stored = load_model_at(&path)?;
            match &stored {
                StoredModel::Float(m) => PredictionSource::Float(m),
                StoredModel::Quantized(m) => PredictionSource::Quantized(m),
            }
        }
    };
    let report = evaluate(&dataset, source)?;

    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    fs::write(out_file(config, "eval.csv")?, &csv)?;
    fs::write(
        out_file(config, "pixel_error.svg")?,
        svg_histogram("Image-space error distribution", "error [px]", &report.pixel_error.histogram, 1.0),
    )?;
    write_provenance(config, &format!("eval --dataset {}", config.paths.dataset.display()))?;
    writeln!(
        stdout(),
        "{} samples ({} detected): R2 u/v/d = {:.4}/{:.4}/{:.4}, median pixel error {:.2}, LED AUC {:.4}",
        report.samples, report.detected, report.u.r2, report.v.r2, report.d.r2, report.pixel_error.median, report.led_auc
    )?;
    Ok(())
}

pub fn simulate_cmd(
    config: &RunConfig,
    speed: Option<f64>,
    duration: Option<f64>,
    perception_flag: Option<PerceptionKind>,
) -> Result<()> {
    let mut spec = config.simulate.trajectory.clone();
    if let Some(v) = speed {
        spec.speed = v;
    }
    if let Some(d) = duration {
        spec.duration = d;
    }
    let targets = make_trajectory(&spec, config.episode.dt)?;

    let perception_kind = perception_flag.unwrap_or(config.simulate.perception);
    let stored;
    let perception = match perception_kind {
        PerceptionKind::Oracle => Perception::Oracle,
        PerceptionKind::Model => {
            stored = load_model_at(&config.paths.model)?;
            match &stored {
                StoredModel::Float(m) => Perception::Fcnn(m),
                StoredModel::Quantized(m) => Perception::Quantized(m),
            }
        }
    };
    let mut params = config.episode.clone();
    params.camera = config.camera;
    let report = run_episode(&targets, perception, config.seed, &params)?;

    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    fs::write(out_file(config, "trace.csv")?, &csv)?;
    let series = vec![
        Series { name: "target".into(), points: report.trace.iter().map(|r| (r.target[0], r.target[1])).collect() },
        Series { name: "observer".into(), points: report.trace.iter().map(|r| (r.observer[0], r.observer[1])).collect() },
    ];
    fs::write(out_file(config, "trajectory.svg")?, svg_lines("Tracking episode (plan view)", "x [m]", "y [m]", &series))?;
    write_provenance(
        config,
        &format!("simulate --speed {} --duration {} ({:?})", spec.speed, spec.duration, perception_kind),
    )?;
    writeln!(
        stdout(),
        "{} steps, completed: {}, avg |err| x/y/z = {:.3}/{:.3}/{:.3} m, avg |p-pd| = {:.3} m (sigma {:.3})",
        report.steps,
        report.completed,
        report.avg_abs_error[0],
        report.avg_abs_error[1],
        report.avg_abs_error[2],
        report.avg_error_norm,
        report.std_error_norm
    )?;
    if !report.completed {
        eprintln!("warning: episode aborted on divergence");
    }
    Ok(())
}
