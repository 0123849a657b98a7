use std::path::Path;

use fspc_core::backbone::{BackboneConfig, BackboneKind};
use fspc_core::dataset::{
    load_examples, shape_catalog, synthetic_split, validate_split, write_examples, LabeledExample,
    Side, SplitManifest,
};
use fspc_core::episode::sample_episode;
use fspc_core::train::{
    cross_validate, evaluate, grad_check, load_model, run_single, EpisodeBatch, Model, RunDir,
    TrainConfig,
};

use crate::report::setting_label;
use crate::{output_dir, require_path, resolve_config, CliError, GlobalArgs};
use crate::{EvalArgs, GradcheckArgs, PrepareArgs, TrainArgs};

pub const MANIFEST_FILE: &str = "manifest.json";

fn parse_synthetic(spec: &str) -> Result<(usize, usize), CliError> {
    let bad = || {
        CliError::Usage(format!(
            "--synthetic expects <classes>x<per-class>, got {spec:?}"
        ))
    };
    let (c, m) = spec.split_once('x').ok_or_else(bad)?;
    let c: usize = c.parse().map_err(|_| bad())?;
    let m: usize = m.parse().map_err(|_| bad())?;
    if c < 2 || m == 0 {
        return Err(bad());
    }
    Ok((c, m))
}

pub fn prepare_data(g: &GlobalArgs, a: &PrepareArgs) -> Result<(), CliError> {
    let (examples, manifest, name) = match (&a.synthetic, &a.input) {
        (Some(spec), None) => {
            let (classes, per_class) = parse_synthetic(spec)?;
            if a.points < 8 {
                return Err(CliError::Usage(format!(
                    "--points must be at least 8, got {}",
                    a.points
                )));
            }
            let (pool, mut manifest) =
                synthetic_split(classes, a.novel, per_class, a.points, g.seed.unwrap_or(0))?;
            let labels: Vec<String> = shape_catalog()[..classes]
                .iter()
                .map(|s| s.label())
                .collect();
            manifest.name = Some(format!("synthetic-{classes}x{per_class}"));
            manifest.note = Some(format!("classes in id order: {}", labels.join(", ")));
            (
                pool,
                manifest,
                format!("data-synthetic-{classes}x{per_class}"),
            )
        }
        (None, Some(input)) => {
            require_path(input, "input directory")?;
            let mpath = a.manifest.as_ref().expect("clap requires --manifest");
            require_path(mpath, "manifest")?;
            let manifest = SplitManifest::load(mpath)?;
            validate_split(&manifest)?;
            let mut all = load_examples(input, &manifest, Side::Base)?;
            all.extend(load_examples(input, &manifest, Side::Novel)?);
            let imported = SplitManifest::from_examples(&all, &manifest.novel_classes);
            if imported.class_counts != manifest.class_counts {
                return Err(CliError::Data(format!(
                    "records in {} do not match the manifest's class counts",
                    input.display()
                )));
            }
            let name = format!(
                "data-{}",
                input
                    .file_name()
                    .map_or("import".into(), |n| n.to_string_lossy())
            );
            (all, manifest, name)
        }
        _ => {
            return Err(CliError::Usage(
                "prepare-data needs either --synthetic or --input".into(),
            ))
        }
    };
    let report = validate_split(&manifest)?;
    let out = output_dir(g, &name);
    write_examples(&out, &examples)?;
    manifest.save(&out.join(MANIFEST_FILE))?;
    println!(
        "wrote {} examples to {}: {} base classes ({} examples), {} novel classes ({} examples)",
        examples.len(),
        out.display(),
        report.base_classes,
        report.base_examples,
        report.novel_classes,
        report.novel_examples
    );
    Ok(())
}

/// `(base, novel)` examples from a prepared directory or the built-in pool.
fn load_pools(
    cfg: &TrainConfig,
    data: Option<&Path>,
) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>), CliError> {
    match data {
        Some(dir) => {
            require_path(dir, "dataset path")?;
            let mpath = dir.join(MANIFEST_FILE);
            require_path(&mpath, "dataset manifest")?;
            let manifest = SplitManifest::load(&mpath)?;
            validate_split(&manifest)?;
            Ok((
                load_examples(dir, &manifest, Side::Base)?,
                load_examples(dir, &manifest, Side::Novel)?,
            ))
        }
        None => Ok(cfg.synthetic_pool()?),
    }
}

pub fn run_name(cfg: &TrainConfig) -> String {
    let kind = match cfg.backbone.kind {
        BackboneKind::Pointnet => "pointnet",
        BackboneKind::Dgcnn => "dgcnn",
    };
    let setting = match setting_label(cfg) {
        "base" if !cfg.with_cia => "protonet".to_string(),
        s => s.trim_start_matches('+').to_lowercase(),
    };
    format!(
        "{kind}-{}w{}s{}q-{setting}-seed{}",
        cfg.way, cfg.shot, cfg.query, cfg.seed
    )
}

pub fn train(g: &GlobalArgs, a: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = resolve_config(g)?;
    if a.no_cia {
        cfg.with_cia = false;
    }
    let (base, novel) = load_pools(&cfg, a.data.as_deref())?;
    let out = output_dir(g, &run_name(&cfg));
    let run = RunDir::create(&out)?;
    run.write_config(&cfg)?;
    let report = if a.cv {
        let fold_dirs: Vec<RunDir> = (0..cfg.folds)
            .map(|f| RunDir::create(&out.join(format!("fold_{f}"))))
            .collect::<Result<_, _>>()?;
        let cv = cross_validate(&cfg, &base, &novel, &mut |f, rec, model| {
            eprintln!("fold {f} {}", epoch_line(rec));
            fold_dirs[f].write_checkpoint(rec.epoch, &cfg, model)
        })?;
        for (dir, fold) in fold_dirs.iter().zip(&cv.folds) {
            dir.write_config(&cfg)?;
            dir.write_history(&fold.fit.history)?;
            dir.write_report(&fold.test)?;
        }
        cv.aggregate
    } else {
        let outcome = run_single(&cfg, &base, &novel, &mut |rec, model| {
            eprintln!("{}", epoch_line(rec));
            run.write_checkpoint(rec.epoch, &cfg, model)
        })?;
        run.write_history(&outcome.fit.history)?;
        outcome.test
    };
    run.write_report(&report)?;
    println!(
        "{}: accuracy {:.2}% ± {:.2}% over {} episodes -> {}",
        run_name(&cfg),
        100.0 * report.mean_accuracy,
        100.0 * report.ci95_halfwidth,
        report.per_episode_accuracies.len(),
        out.display()
    );
    Ok(())
}

fn epoch_line(r: &fspc_core::train::EpochRecord) -> String {
    format!(
        "epoch {:>3}  lr {:.6}  loss {:.4}  train acc {:.4}  val acc {}",
        r.epoch,
        r.lr,
        r.train_loss,
        r.train_acc,
        r.val_acc.map_or("-".into(), |v| format!("{v:.4}"))
    )
}

pub fn eval(g: &GlobalArgs, a: &EvalArgs) -> Result<(), CliError> {
    require_path(&a.checkpoint, "checkpoint")?;
    let (mut cfg, model) = load_model(&a.checkpoint)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    for (flag, slot) in [
        (g.way, &mut cfg.way),
        (g.shot, &mut cfg.shot),
        (g.query, &mut cfg.query),
    ] {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    cfg.validate()?;
    let (_, novel) = load_pools(&cfg, a.data.as_deref())?;
    let episodes = a.episodes.unwrap_or(cfg.test_episodes);
    let report = evaluate(
        &cfg,
        &model,
        &novel,
        cfg.episode_spec()?,
        episodes,
        fspc_core::rng::derive_tagged(cfg.seed, "test", 0),
    )?;
    let stem = a
        .checkpoint
        .file_stem()
        .map_or("checkpoint".into(), |s| s.to_string_lossy().into_owned());
    let out = output_dir(g, &format!("eval-{stem}"));
    let dir = RunDir::create(&out)?;
    dir.write_report(&report)?;
    println!(
        "accuracy {:.2}% ± {:.2}% over {episodes} episodes -> {}",
        100.0 * report.mean_accuracy,
        100.0 * report.ci95_halfwidth,
        out.display()
    );
    Ok(())
}

/// The tiny architecture gradient checks run on.
pub fn gradcheck_config(base: &TrainConfig, kind: BackboneKind) -> TrainConfig {
    TrainConfig {
        way: 2,
        shot: 1,
        query: 2,
        n_points: 8,
        backbone: BackboneConfig {
            kind,
            layer_widths: vec![8, 8],
            k_neighbors: 4,
            embed_dim: 8,
            normalization: false,
        },
        cia: fspc_core::cia::CiaConfig {
            hidden: 8,
            ..base.cia.clone()
        },
        ..base.clone()
    }
}

pub fn gradcheck(g: &GlobalArgs, a: &GradcheckArgs) -> Result<(), CliError> {
    let base = resolve_config(g)?;
    let kinds = match g.backbone {
        Some(_) => vec![base.backbone.kind],
        None => vec![BackboneKind::Pointnet, BackboneKind::Dgcnn],
    };
    let mut worst: f64 = 0.0;
    for kind in kinds {
        let cfg = gradcheck_config(&base, kind);
        let (pool, _) = synthetic_split(3, 1, 4, cfg.n_points, cfg.seed)?;
        let episode = sample_episode(&pool, cfg.episode_spec()?, cfg.seed)?;
        let batch = EpisodeBatch::prepare(&episode, cfg.n_points, None, cfg.seed)?;
        let model = Model::init(&cfg)?;
        let r = grad_check(&cfg, &model, &batch, a.step)?;
        let verdict = if r.max_rel_err < a.tolerance {
            "ok"
        } else {
            "FAIL"
        };
        println!(
            "{kind:?}: {} parameters, max relative error {:.3e} at {} [{verdict}]",
            r.n_params, r.max_rel_err, r.worst
        );
        worst = worst.max(r.max_rel_err);
    }
    if worst < a.tolerance {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed: {worst:.3e} exceeds {:.1e}",
            a.tolerance
        )))
    }
}
