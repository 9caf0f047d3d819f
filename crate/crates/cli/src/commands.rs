use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use resnesat::data::{
    generate_phantoms, holdout_split, load_manifest, make_folds, prepare, read_pgm, FoldSplit, ImageSet, PhantomClass,
    PhantomConfig, PreprocessConfig, SplitMode, Task,
};
use resnesat::net::{shape_trace, Checkpoint, Network, NetworkConfig, Preset};
use resnesat::train::{
    cross_validate, epoch_log_csv, evaluate as evaluate_net, fit_and_evaluate, fold_seed, format_metric, metrics_csv,
    predict_label, stats_from_metadata, text_table, CvOptions, Metric, MetricsReport, Precision, TrainingConfig,
};
use resnesat::Exec;

use crate::config::RunConfig;
use crate::{
    CrossvalArgs, DataArgs, EvaluateArgs, GenerateArgs, InspectArgs, ModelArgs, PredictArgs, SplitArgs, TrainArgs,
    UsageError,
};

fn echo(cfg: &RunConfig, command: &str) {
    eprint!("# {command} resolved config\n{}", cfg.echo());
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn model_name(net: &NetworkConfig) -> &'static str {
    if net.sa_enabled {
        "ResNeSAt"
    } else {
        "ResNeSt"
    }
}

struct DataSel {
    manifest: PathBuf,
    task: Task,
}

fn resolve_data(cfg: &mut RunConfig, a: &DataArgs) -> Result<DataSel> {
    cfg.flag("data_dir", a.data_dir.as_ref().map(|p| p.display()))
        .flag("manifest", a.manifest.as_ref().map(|p| p.display()))
        .flag("task", a.task.as_ref());
    let dir = cfg.data_dir()?;
    Ok(DataSel {
        manifest: cfg.path("manifest", dir.join("manifest.csv"))?,
        task: cfg.get("task", Task::Presence)?,
    })
}

fn resolve_model(cfg: &mut RunConfig, a: &ModelArgs, task: Task) -> Result<(NetworkConfig, TrainingConfig)> {
    cfg.flag("preset", a.preset.as_ref())
        .flag("sa", a.sa)
        .flag("epochs", a.epochs)
        .flag("lr", a.lr)
        .flag("batch_size", a.batch_size)
        .flag("momentum", a.momentum)
        .flag("weight_decay", a.weight_decay)
        .flag("seed", a.seed)
        .flag("precision", a.precision.as_ref());
    let preset: Preset = cfg.get("preset", Preset::Tiny)?;
    let sa = cfg.get("sa", true)?;
    let net = NetworkConfig::from_preset(preset)?.with_sa(sa);
    let base = TrainingConfig::for_task(task);
    let train = TrainingConfig {
        lr: cfg.get("lr", base.lr)?,
        epochs: cfg.get("epochs", base.epochs)?,
        batch_size: cfg.get("batch_size", base.batch_size)?,
        momentum: cfg.get("momentum", base.momentum)?,
        weight_decay: cfg.get("weight_decay", base.weight_decay)?,
        seed: cfg.get("seed", base.seed)?,
        precision: cfg.get("precision", Precision::F32)?,
    };
    Ok((net, train))
}

fn load_data(sel: &DataSel, net: &NetworkConfig) -> Result<(ImageSet, Vec<usize>, Vec<String>)> {
    let manifest = load_manifest(&sel.manifest, sel.task)?;
    let labels = manifest.labels();
    let patients = manifest.patients();
    let data = ImageSet::load(
        &manifest,
        PreprocessConfig {
            size: net.input_size,
            channels: net.in_channels,
        },
    )?;
    Ok((data, labels, patients))
}

/// The checkpoint's task tag must match the requested task.
fn check_task(ckpt: &Checkpoint, task: Task, path: &Path) -> Result<()> {
    match ckpt.metadata.get("task") {
        Some(t) if t != &task.to_string() => {
            Err(resnesat::Error::Format(format!("{} was trained for task '{t}', not '{task}'", path.display())).into())
        }
        _ => Ok(()),
    }
}

pub fn generate(mut cfg: RunConfig, a: GenerateArgs) -> Result<()> {
    cfg.flag("none", a.none)
        .flag("primary", a.primary)
        .flag("secondary", a.secondary)
        .flag("size", a.size)
        .flag("seed", a.seed)
        .flag("images_per_patient", a.images_per_patient)
        .flag("out", a.out.as_ref().map(|p| p.display()));
    let d = PhantomConfig::default();
    let pc = PhantomConfig {
        none: cfg.get("none", d.none)?,
        primary: cfg.get("primary", d.primary)?,
        secondary: cfg.get("secondary", d.secondary)?,
        size: cfg.get("size", d.size)?,
        seed: cfg.get("seed", d.seed)?,
        images_per_patient: cfg.get("images_per_patient", d.images_per_patient)?,
    };
    let dir = cfg.data_dir()?;
    let out = cfg.path("out", dir)?;
    echo(&cfg, "generate-data");
    let records = generate_phantoms(&pc, &out)?;
    println!("wrote {} images to {}", records.len(), out.display());
    for class in PhantomClass::ALL {
        println!("  {class}: {}", pc.count(class));
    }
    println!("manifest: {}", out.join("manifest.csv").display());
    Ok(())
}

pub fn split(mut cfg: RunConfig, a: SplitArgs) -> Result<()> {
    let sel = resolve_data(&mut cfg, &a.data)?;
    cfg.flag("k", a.k)
        .flag("mode", a.mode.as_ref())
        .flag("seed", a.seed)
        .flag("out", a.out.as_ref().map(|p| p.display()));
    let k = cfg.get("k", 10usize)?;
    let mode: SplitMode = cfg.get("mode", SplitMode::ImageStratified)?;
    let seed = cfg.get("seed", 0u64)?;
    let dir = cfg.data_dir()?;
    let out = cfg.path("out", dir.join(format!("folds-{}.txt", sel.task)))?;
    echo(&cfg, "split");
    let manifest = load_manifest(&sel.manifest, sel.task)?;
    let split = make_folds(&manifest.labels(), &manifest.patients(), k, mode, seed)?;
    ensure_parent(&out)?;
    split.save(&out)?;
    let sizes: Vec<String> = split.folds.iter().map(|f| f.len().to_string()).collect();
    println!(
        "{k} folds ({mode}) over {} images: sizes {}",
        manifest.len(),
        sizes.join(" ")
    );
    println!("fold file: {}", out.display());
    Ok(())
}

pub fn train(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    let sel = resolve_data(&mut cfg, &a.data)?;
    let (net_cfg, mut train_cfg) = resolve_model(&mut cfg, &a.model, sel.task)?;
    cfg.flag("folds", a.folds.as_ref().map(|p| p.display()))
        .flag("fold", a.fold)
        .flag("holdout", a.holdout)
        .flag("out", a.out.as_ref().map(|p| p.display()))
        .flag("log", a.log.as_ref().map(|p| p.display()));
    let folds: Option<PathBuf> = cfg.get_opt::<String>("folds")?.map(PathBuf::from);
    let fold = cfg.get("fold", 0usize)?;
    let holdout: Option<f64> = cfg.get_opt("holdout")?;
    let out = cfg.path("out", PathBuf::from(format!("{}.ckpt", sel.task)))?;
    let log_path = cfg.path("log", out.with_extension("csv"))?;
    echo(&cfg, "train");
    train_cfg.validate()?;

    let (data, labels, _) = load_data(&sel, &net_cfg)?;
    let (train, test) = match (&folds, holdout) {
        (Some(path), _) => {
            let split = FoldSplit::load(path)?;
            split.validate(data.len())?;
            if fold >= split.k {
                return Err(usage(format!("--fold {fold} out of range for {} folds", split.k)));
            }
            // same seed as the matching cross-validation fold
            train_cfg.seed = fold_seed(train_cfg.seed, fold);
            (split.train_indices(fold), split.test_indices(fold).to_vec())
        }
        (None, Some(frac)) => holdout_split(&labels, frac, train_cfg.seed)?,
        (None, None) => ((0..data.len()).collect(), Vec::new()),
    };
    let outcome = fit_and_evaluate(&net_cfg, &data, &train, &test, fold, &train_cfg, Exec::default())?;
    let mut ckpt = outcome.checkpoint;
    ckpt.metadata.insert("task".into(), sel.task.to_string());
    ensure_parent(&out)?;
    ckpt.save(&out)?;
    write_file(&log_path, &epoch_log_csv(&outcome.log))?;
    println!(
        "trained {} for {} epochs on {} images; checkpoint {} ; epoch log {}",
        model_name(&net_cfg),
        train_cfg.epochs,
        train.len(),
        out.display(),
        log_path.display()
    );
    if !test.is_empty() {
        println!("held-out {} images:", test.len());
        print!("{}", text_table(&[(model_name(&net_cfg).to_string(), outcome.metrics)]));
    }
    Ok(())
}

fn indices_for(on: &str, split: Option<&(FoldSplit, usize)>, n: usize) -> Result<Vec<usize>> {
    match (on, split) {
        ("all", _) => Ok((0..n).collect()),
        ("test", Some((s, f))) => Ok(s.test_indices(*f).to_vec()),
        ("train", Some((s, f))) => Ok(s.train_indices(*f)),
        ("test" | "train", None) => Err(usage(format!("--on {on} needs --folds"))),
        _ => Err(usage(format!("--on must be test, train or all, got '{on}'"))),
    }
}

pub fn evaluate(mut cfg: RunConfig, a: EvaluateArgs) -> Result<()> {
    let sel = resolve_data(&mut cfg, &a.data)?;
    cfg.flag("checkpoint", a.checkpoint.as_ref().map(|p| p.display()))
        .flag("folds", a.folds.as_ref().map(|p| p.display()))
        .flag("fold", a.fold)
        .flag("on", a.on.as_ref())
        .flag("batch_size", a.batch_size)
        .flag("out", a.out.as_ref().map(|p| p.display()));
    let ckpt_path = cfg
        .get_opt::<String>("checkpoint")?
        .map(PathBuf::from)
        .ok_or_else(|| usage("evaluate needs --checkpoint"))?;
    let folds: Option<PathBuf> = cfg.get_opt::<String>("folds")?.map(PathBuf::from);
    let fold = cfg.get("fold", 0usize)?;
    let on: String = cfg.get("on", if folds.is_some() { "test" } else { "all" }.to_string())?;
    let batch = cfg.get("batch_size", 16usize)?;
    let out: Option<String> = cfg.get_opt("out")?;
    echo(&cfg, "evaluate");

    let ckpt = Checkpoint::load(&ckpt_path)?;
    check_task(&ckpt, sel.task, &ckpt_path)?;
    let mut net: Network<f32> = ckpt.to_network()?;
    let stats = stats_from_metadata(&ckpt.metadata)?;
    let (data, _, _) = load_data(&sel, &ckpt.config)?;
    let split = match folds {
        Some(p) => {
            let s = FoldSplit::load(&p)?;
            s.validate(data.len())?;
            if fold >= s.k {
                return Err(usage(format!("--fold {fold} out of range for {} folds", s.k)));
            }
            Some((s, fold))
        }
        None => None,
    };
    let indices = indices_for(&on, split.as_ref(), data.len())?;
    if on == "test" {
        stats.check_disjoint(&indices)?;
    }
    let eval = evaluate_net(&mut net, &data, &indices, &stats, batch)?;
    let report = MetricsReport::from_confusion(&eval.confusion);
    let c = eval.confusion;
    println!(
        "{} images ({on}): TP {} FP {} FN {} TN {}",
        indices.len(),
        c.tp,
        c.fp,
        c.fn_,
        c.tn
    );
    let name = ckpt_path
        .file_stem()
        .map_or("model".into(), |s| s.to_string_lossy().into_owned());
    print!("{}", text_table(&[(name, report)]));
    if let Some(path) = out {
        let mut csv = String::from("metric,value\n");
        for m in Metric::ALL {
            let _ = writeln!(csv, "{},{}", m.name(), format_metric(report.get(m)));
        }
        write_file(Path::new(&path), &csv)?;
    }
    Ok(())
}

pub fn crossval(mut cfg: RunConfig, a: CrossvalArgs) -> Result<()> {
    let sel = resolve_data(&mut cfg, &a.data)?;
    let (net_cfg, train_cfg) = resolve_model(&mut cfg, &a.model, sel.task)?;
    cfg.flag("k", a.k)
        .flag("mode", a.mode.as_ref())
        .flag("folds", a.folds.as_ref().map(|p| p.display()))
        .flag("parallel_folds", a.parallel_folds)
        .flag("save_checkpoints", a.save_checkpoints)
        .flag("out", a.out.as_ref().map(|p| p.display()));
    let k = cfg.get("k", 10usize)?;
    let mode: SplitMode = cfg.get("mode", SplitMode::ImageStratified)?;
    let folds: Option<PathBuf> = cfg.get_opt::<String>("folds")?.map(PathBuf::from);
    let parallel_folds = cfg.get("parallel_folds", 1usize)?;
    let save_checkpoints = cfg.get("save_checkpoints", false)?;
    let out = cfg.path("out", PathBuf::from(format!("cv-{}", sel.task)))?;
    echo(&cfg, "crossval");
    train_cfg.validate()?;
    if k < 2 {
        return Err(resnesat::Error::Config(format!("k must be at least 2, got {k}")).into());
    }

    let (data, labels, patients) = load_data(&sel, &net_cfg)?;
    let split = match folds {
        Some(p) => FoldSplit::load(p)?,
        None => make_folds(&labels, &patients, k, mode, train_cfg.seed)?,
    };
    let opts = CvOptions {
        parallel_folds,
        exec: if parallel_folds > 1 {
            Exec::Sequential
        } else {
            Exec::default()
        },
    };
    let report = cross_validate(&net_cfg, &data, &split, &train_cfg, opts)?;

    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_file(&out.join("config.txt"), &cfg.echo())?;
    write_file(&out.join("metrics.csv"), &metrics_csv(&report.summary))?;
    for f in &report.folds {
        write_file(&out.join(format!("fold{}_log.csv", f.fold)), &epoch_log_csv(&f.log))?;
        if save_checkpoints {
            let mut ckpt = f.checkpoint.clone();
            ckpt.metadata.insert("task".into(), sel.task.to_string());
            ckpt.save(out.join(format!("fold{}.ckpt", f.fold)))?;
        }
    }
    let table = text_table(&[(model_name(&net_cfg).to_string(), report.summary.mean)]);
    let mut text = format!(
        "{}-fold cross-validation, task {}, {} images\n\n{table}\n",
        split.k,
        sel.task,
        data.len()
    );
    for m in Metric::ALL {
        let _ = writeln!(
            text,
            "{:<12} mean {} std {} micro {}",
            m.title(),
            format_metric(report.summary.mean.get(m)),
            format_metric(report.summary.std.get(m)),
            format_metric(report.summary.micro.get(m))
        );
    }
    write_file(&out.join("report.txt"), &text)?;
    print!("{text}");
    println!("report written to {}", out.display());
    Ok(())
}

struct Stage {
    label: usize,
    positive_prob: f64,
}

fn classify(ckpt_path: &Path, task: Task, image: &Path) -> Result<Stage> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    check_task(&ckpt, task, ckpt_path)?;
    let stats = stats_from_metadata(&ckpt.metadata)?;
    let mut net: Network<f32> = ckpt.to_network()?;
    let pixels = read_pgm(image)?.to_tensor();
    let x = stats.normalize(&prepare(
        &pixels,
        PreprocessConfig {
            size: ckpt.config.input_size,
            channels: ckpt.config.in_channels,
        },
    )?)?;
    let probs = net.predict_proba(&x)?;
    Ok(Stage {
        label: predict_label(probs.data()),
        positive_prob: probs.data()[1] as f64,
    })
}

pub fn predict(mut cfg: RunConfig, a: PredictArgs) -> Result<()> {
    cfg.flag("checkpoint", a.presence.as_ref().map(|p| p.display()))
        .flag("source_checkpoint", a.source.as_ref().map(|p| p.display()))
        .flag("image", a.image.as_ref().map(|p| p.display()));
    let presence_path = cfg
        .get_opt::<String>("checkpoint")?
        .map(PathBuf::from)
        .ok_or_else(|| usage("predict needs --presence <checkpoint>"))?;
    let source_path: Option<PathBuf> = cfg.get_opt::<String>("source_checkpoint")?.map(PathBuf::from);
    let image = cfg
        .get_opt::<String>("image")?
        .map(PathBuf::from)
        .ok_or_else(|| usage("predict needs an image path"))?;
    echo(&cfg, "predict");

    let presence = classify(&presence_path, Task::Presence, &image)?;
    let mut record = format!(
        "{{\"image\": \"{}\", \"presence\": {}, \"presence_prob\": {:.6}",
        image.display(),
        presence.label,
        presence.positive_prob
    );
    if presence.label == 1 {
        match &source_path {
            Some(p) => {
                let source = classify(p, Task::Source, &image)?;
                let _ = write!(
                    record,
                    ", \"source\": \"{}\", \"source_prob\": {:.6}",
                    Task::Source.class_names()[source.label],
                    source.positive_prob
                );
            }
            None => record.push_str(", \"source\": \"not evaluated\""),
        }
    }
    record.push('}');
    println!("{record}");
    Ok(())
}

pub fn inspect(mut cfg: RunConfig, a: InspectArgs) -> Result<()> {
    cfg.flag("checkpoint", a.checkpoint.as_ref().map(|p| p.display()))
        .flag("preset", a.preset.as_ref())
        .flag("sa", a.sa);
    let ckpt_path: Option<PathBuf> = cfg.get_opt::<String>("checkpoint")?.map(PathBuf::from);
    let net_cfg = match &ckpt_path {
        Some(p) => {
            echo(&cfg, "inspect");
            let ckpt = Checkpoint::load(p)?;
            println!("checkpoint {} (epoch {})", p.display(), ckpt.epoch);
            for (k, v) in &ckpt.metadata {
                if !k.starts_with("norm.provenance") {
                    println!("  {k} = {v}");
                }
            }
            ckpt.config
        }
        None => {
            let preset: Preset = cfg.get("preset", Preset::Tiny)?;
            let sa = cfg.get("sa", true)?;
            echo(&cfg, "inspect");
            NetworkConfig::from_preset(preset)?.with_sa(sa)
        }
    };
    let rows = shape_trace(&net_cfg)?;
    let name_w = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let detail_w = rows.iter().map(|r| r.details.len()).max().unwrap_or(0);
    println!("{} ({} preset)", model_name(&net_cfg), net_cfg.preset);
    for r in &rows {
        let dims: Vec<String> = r.output.iter().map(usize::to_string).collect();
        println!(
            "{:<name_w$}  {:<detail_w$}  {:>14}  {:>10}",
            r.name,
            r.details,
            dims.join("x"),
            r.params
        );
    }
    let n = rows.len();
    if n >= 2 {
        println!("head: {} → {}", rows[n - 2].details, rows[n - 1].details);
    }
    let count = Network::<f32>::new(net_cfg.clone(), 0)?.param_count();
    println!(
        "parameters: {} trainable + {} batch-norm statistics = {} values",
        count.trainable,
        count.buffers,
        count.total()
    );
    println!(
        "size at 32-bit: {} bytes = {:.2} MiB ({:.2} MB)",
        count.bytes_f32(),
        count.mebibytes(),
        count.bytes_f32() as f64 / 1e6
    );
    if a.diff_sa {
        let total = |sa: bool| -> Result<usize> {
            Ok(shape_trace(&net_cfg.clone().with_sa(sa))?
                .iter()
                .map(|r| r.params)
                .sum())
        };
        let overhead = total(true)? - total(false)?;
        println!(
            "SA overhead: {overhead} params over {} bottlenecks = {} bytes = {:.4} MiB",
            net_cfg.num_bottlenecks(),
            4 * overhead,
            4.0 * overhead as f64 / 1048576.0
        );
    }
    Ok(())
}
