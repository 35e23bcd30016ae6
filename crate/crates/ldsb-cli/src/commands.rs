//! Subcommand implementations. Every output file is written atomically
//! (temp + rename) and recorded for the manifest.

use std::path::{Path, PathBuf};

use ldsb::analysis::{
    auto_rank, boundary_grid, linear_probe_nonlinearity, mixing_metrics, optimize_projector,
    singular_decay, top_subspace, Projector,
};
use ldsb::datasets::{gen_collage, gen_ifm, load_dataset, save_dataset, DatasetSplits, LabeledDataset};
use ldsb::linalg::{Matrix, RngState, RNG_ALGORITHM};
use ldsb::model::{init_lazy, init_rich, load_checkpoint, save_checkpoint, Mlp, Regime};
use ldsb::orthop::{
    diversity_report, orthop_train, robustness_sweep, EvalModel, ModelTriple, RankSpec,
};
use ldsb::training::{evaluate, train as train_net, TrainLog};

use crate::config::ExperimentConfig;
use crate::{CliError, ConfigArgs};

type Result<T> = std::result::Result<T, CliError>;

fn stage<T>(name: &str, r: std::result::Result<T, impl Into<CliError>>) -> Result<T> {
    r.map_err(|e| match e.into() {
        CliError::Validation(m) => CliError::Validation(format!("stage {name}: {m}")),
        CliError::Runtime(m) => CliError::Runtime(format!("stage {name}: {m}")),
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("encode {}: {e}", path.display())))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Resolves the effective config: file < preset < flags, then reseeds.
fn resolve_config(common: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut config = if let Some(path) = &common.config {
        ExperimentConfig::from_file(path)?
    } else if let Some(name) = &common.preset {
        ExperimentConfig::preset(name, common.seed.unwrap_or(0))?
    } else {
        ExperimentConfig::preset("ifm-basic", common.seed.unwrap_or(0))?
    };
    if let Some(seed) = common.seed {
        config.master_seed = seed;
    }
    if let Some(regime) = &common.regime {
        config.regime = regime
            .parse()
            .map_err(|e: ldsb::Error| CliError::Validation(e.to_string()))?;
        // Regime switches also move the learning rate to that regime's
        // grid default unless a config file pinned one explicitly.
        if common.config.is_none() {
            config.train.peak_lr = ldsb::training::presets::desk(config.regime, 0).peak_lr;
        }
    }
    if let Some(steps) = common.steps {
        config.train.steps = steps;
    }
    if let Some(hidden) = common.hidden {
        config.hidden = hidden;
    }
    Ok(config.seeded())
}

fn ensure_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn generate(config: &ExperimentConfig) -> Result<DatasetSplits> {
    let spec = config.dataset.spec(config.master_seed);
    let splits = match config.dataset.kind.pattern() {
        None => gen_ifm(&spec)?,
        Some(pattern) => gen_collage(&spec, pattern)?,
    };
    Ok(splits)
}

fn save_splits(splits: &DatasetSplits, dir: &Path, outputs: &mut Vec<PathBuf>) -> Result<()> {
    for (name, ds) in
        [("train.csv", &splits.train), ("val.csv", &splits.val), ("test.csv", &splits.test)]
    {
        let path = dir.join(name);
        save_dataset(ds, &path)?;
        outputs.push(path);
    }
    Ok(())
}

pub fn gen(common: &ConfigArgs) -> Result<String> {
    let config = resolve_config(common)?;
    ensure_out(&common.out)?;
    let splits = stage("gen", generate(&config))?;
    let mut outputs = Vec::new();
    stage("write", save_splits(&splits, &common.out, &mut outputs))?;
    let meta = serde_json::json!({
        "kind": config.dataset.kind,
        "config": serde_json::to_value(&config.dataset).expect("dataset config"),
        "master_seed": config.master_seed,
        "config_hash": config.hash(),
    });
    write_json(&common.out.join("dataset.json"), &meta)?;
    Ok(format!(
        "gen: {} train / {} val / {} test rows (d={}) -> {}",
        splits.train.n(),
        splits.val.n(),
        splits.test.n(),
        splits.train.d(),
        common.out.display()
    ))
}

fn init_net(config: &ExperimentConfig, d: usize, c: usize, seed: u64) -> Result<Mlp> {
    let mut rng = RngState::new(seed).stream("init");
    Ok(match config.regime {
        Regime::Rich => init_rich(config.hidden, d, c, &mut rng)?,
        Regime::Lazy => init_lazy(config.hidden, d, c, &mut rng)?,
    })
}

fn sibling_val(data: &Path) -> Option<PathBuf> {
    let candidate = data.parent()?.join("val.csv");
    (candidate.exists() && candidate != data).then_some(candidate)
}

fn load_train_val(
    data: &Path,
    val: Option<&Path>,
) -> Result<(LabeledDataset, Option<LabeledDataset>)> {
    let train = load_dataset(data)?;
    let val = match val {
        Some(path) => Some(load_dataset(path)?),
        None => match sibling_val(data) {
            Some(path) => Some(load_dataset(&path)?),
            None => None,
        },
    };
    Ok((train, val))
}

fn write_trainlog(path: &Path, log: &TrainLog, outputs: &mut Vec<PathBuf>) -> Result<()> {
    write_atomic(path, log.to_csv().as_bytes())?;
    outputs.push(path.to_owned());
    Ok(())
}

pub fn train(common: &ConfigArgs, data: &Path, val: Option<&Path>) -> Result<String> {
    let config = resolve_config(common)?;
    ensure_out(&common.out)?;
    let (train_ds, val_ds) = stage("load", load_train_val(data, val))?;
    let net = init_net(&config, train_ds.d(), train_ds.num_classes, config.train.seed)?;
    let (net, log) = stage("train", train_net(net, &train_ds, val_ds.as_ref(), &config.train))?;
    let mut outputs = Vec::new();
    let ckpt = common.out.join("checkpoint.json");
    stage("write", save_checkpoint(&net, &ckpt).map_err(CliError::from))?;
    outputs.push(ckpt);
    write_trainlog(&common.out.join("trainlog.csv"), &log, &mut outputs)?;
    let train_acc = evaluate(&net, &train_ds)?;
    let val_acc = match &val_ds {
        Some(v) => evaluate(&net, v)?,
        None => train_acc,
    };
    Ok(format!(
        "train: {} regime, {} steps, train acc {:.4}, val acc {:.4} -> {}",
        config.regime,
        config.train.steps,
        train_acc,
        val_acc,
        common.out.display()
    ))
}

/// Regime-appropriate projector: SVD of the first layer when the weights
/// collapse (rich), direct optimization when they do not (lazy).
fn find_projector(
    config: &ExperimentConfig,
    net: &Mlp,
    data: &LabeledDataset,
    rank: RankSpec,
    lambda: f64,
) -> Result<Projector> {
    let k = match rank {
        RankSpec::Fixed(k) => k,
        RankSpec::Auto => auto_rank(net, 0.99)?,
    };
    Ok(match config.regime {
        Regime::Rich => top_subspace(net, k)?,
        Regime::Lazy => {
            let fit = optimize_projector(net, data, k, lambda, &config.analyze.opt)?;
            if fit.warned {
                eprintln!("warning: projector objective never improved; using best iterate");
            }
            fit.projector
        }
    })
}

fn projector_json(p: &Projector) -> serde_json::Value {
    serde_json::json!({
        "format": "ldsb-projector",
        "version": 1,
        "d": p.d(),
        "k": p.k(),
        "q": p.q.iter().copied().collect::<Vec<f64>>(),
    })
}

fn load_projector(path: &Path) -> Result<Projector> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("projector {}: {e}", path.display())))?;
    if value["format"] != "ldsb-projector" || value["version"] != 1 {
        return Err(CliError::Validation(format!(
            "{} is not a v1 projector file",
            path.display()
        )));
    }
    let d = value["d"].as_u64().ok_or_else(|| CliError::Validation("projector d".into()))? as usize;
    let k = value["k"].as_u64().ok_or_else(|| CliError::Validation("projector k".into()))? as usize;
    let q: Vec<f64> = value["q"]
        .as_array()
        .ok_or_else(|| CliError::Validation("projector q".into()))?
        .iter()
        .map(|v| v.as_f64().unwrap_or(f64::NAN))
        .collect();
    if q.len() != d * k || q.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Validation("projector q has wrong length or bad values".into()));
    }
    let q = Matrix::from_shape_vec((d, k), q).expect("length checked");
    Ok(Projector::new(q)?)
}

#[allow(clippy::too_many_arguments)]
fn analyze_inner(
    config: &ExperimentConfig,
    out: &Path,
    data: &LabeledDataset,
    net: &Mlp,
    rank: RankSpec,
    lambda: f64,
    outputs: &mut Vec<PathBuf>,
) -> Result<(usize, f64, f64)> {
    let projector = stage("projector", find_projector(config, net, data, rank, lambda))?;

    let pairs = config.analyze.pairs_factor * data.n();
    let mut rng = RngState::new(config.master_seed).stream("cli.mixing");
    let report = stage("mixing", mixing_metrics(net, data, &projector, pairs, &mut rng))?;
    let sb_path = out.join("sbreport.json");
    write_json(&sb_path, &report.to_json())?;
    outputs.push(sb_path);

    let decay = singular_decay(net)?;
    let mut decay_csv = String::from("index,share\n");
    for (i, share) in decay.iter().enumerate() {
        decay_csv.push_str(&format!("{i},{share:.17e}\n"));
    }
    let decay_path = out.join("decay.csv");
    write_atomic(&decay_path, decay_csv.as_bytes())?;
    outputs.push(decay_path.clone());

    // Rank-2 slice through the top singular directions: decision-boundary
    // grid plus the linearity probe of the boundary.
    if net.d() >= 2 {
        let p2 = top_subspace(net, 2)?;
        let base = data.x.mean_axis(ndarray::Axis(0)).expect("nonempty");
        let grid = boundary_grid(net, &p2, 3.0, 41, &base)?;
        let grid_path = out.join("boundary.csv");
        write_atomic(&grid_path, grid.to_csv().as_bytes())?;
        outputs.push(grid_path);
        match linear_probe_nonlinearity(net, data, &p2) {
            Ok(agreement) => {
                let probe_path = out.join("probe.json");
                write_json(&probe_path, &serde_json::json!({ "linear_probe_agreement": agreement }))?;
                outputs.push(probe_path);
            }
            Err(ldsb::Error::DegenerateLabels) => {
                eprintln!("warning: boundary probe skipped (single-class slice)");
            }
            Err(e) => return Err(e.into()),
        }
    }

    let proj_path = out.join("projector.json");
    write_json(&proj_path, &projector_json(&projector))?;
    outputs.push(proj_path);
    Ok((projector.k(), report.acc, report.pperp_ra))
}

pub fn analyze(
    common: &ConfigArgs,
    data: &Path,
    model: &Path,
    rank: Option<&str>,
    lambda: Option<f64>,
) -> Result<String> {
    let mut config = resolve_config(common)?;
    if let Some(rank) = rank {
        config.analyze.rank = rank.to_string();
    }
    if let Some(lambda) = lambda {
        config.analyze.lambda = lambda;
    }
    ensure_out(&common.out)?;
    let ds = stage("load", load_dataset(data).map_err(CliError::from))?;
    let net = stage("load", load_checkpoint(model).map_err(CliError::from))?;
    // The checkpoint knows its regime; honor it unless overridden.
    if common.regime.is_none() {
        config.regime = net.regime;
    }
    let rank_spec = config.analyze.rank_spec()?;
    if matches!(rank_spec, RankSpec::Fixed(0)) {
        return Err(CliError::Validation("rank 0 is not a usable projector".into()));
    }
    let mut outputs = Vec::new();
    let (k, acc, pperp_ra) = analyze_inner(
        &config,
        &common.out,
        &ds,
        &net,
        rank_spec,
        config.analyze.lambda,
        &mut outputs,
    )?;
    Ok(format!(
        "analyze: rank {k} projector, acc {:.4}, complement-randomized acc {:.4} -> {}",
        acc,
        pperp_ra,
        common.out.display()
    ))
}

pub fn orthop(
    common: &ConfigArgs,
    data: &Path,
    val: Option<&Path>,
    model: &Path,
    rank: Option<&str>,
) -> Result<String> {
    let mut config = resolve_config(common)?;
    if let Some(rank) = rank {
        config.analyze.rank = rank.to_string();
    }
    ensure_out(&common.out)?;
    let (train_ds, val_ds) = stage("load", load_train_val(data, val))?;
    let net = stage("load", load_checkpoint(model).map_err(CliError::from))?;
    let rank_spec = config.analyze.rank_spec()?;
    let mut train_config = config.train.clone();
    // Fresh stream relative to the first model's run.
    train_config.seed = config.master_seed.wrapping_add(2);
    let outcome = stage(
        "orthop",
        orthop_train(&net, &train_ds, val_ds.as_ref(), rank_spec, &train_config),
    )?;
    let mut outputs = Vec::new();
    let ckpt = common.out.join("fproj.json");
    stage("write", save_checkpoint(&outcome.f_proj, &ckpt).map_err(CliError::from))?;
    outputs.push(ckpt);
    let proj_path = common.out.join("projector.json");
    write_json(&proj_path, &projector_json(&outcome.projector))?;
    write_trainlog(&common.out.join("fproj_trainlog.csv"), &outcome.log, &mut outputs)?;
    let eval_ds = val_ds.as_ref().unwrap_or(&train_ds);
    let acc = EvalModel::perp_projected(&outcome.f_proj, &outcome.projector).accuracy(eval_ds)?;
    Ok(format!(
        "orthop: rank {} removed, f_proj accuracy {:.4} -> {}",
        outcome.projector.k(),
        acc,
        common.out.display()
    ))
}

fn parse_sigmas(text: &str) -> Result<Vec<f64>> {
    let sigmas: std::result::Result<Vec<f64>, _> =
        text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    sigmas.map_err(|e| CliError::Validation(format!("bad --sigmas: {e}")))
}

#[allow(clippy::too_many_arguments)]
pub fn robustness(
    common: &ConfigArgs,
    data: &Path,
    model: &Path,
    model_ind: &Path,
    model_proj: &Path,
    projector: &Path,
    sigmas: Option<&str>,
    trials: Option<usize>,
) -> Result<String> {
    let mut config = resolve_config(common)?;
    if let Some(text) = sigmas {
        config.robustness.sigmas = parse_sigmas(text)?;
    }
    if let Some(trials) = trials {
        config.robustness.trials = trials;
    }
    ensure_out(&common.out)?;
    let ds = stage("load", load_dataset(data).map_err(CliError::from))?;
    let f = stage("load", load_checkpoint(model).map_err(CliError::from))?;
    let f_ind = stage("load", load_checkpoint(model_ind).map_err(CliError::from))?;
    let f_proj = stage("load", load_checkpoint(model_proj).map_err(CliError::from))?;
    let p = stage("load", load_projector(projector))?;
    let triple = ModelTriple { f: &f, f_ind: &f_ind, f_proj: &f_proj, projector: &p };
    let mut rng = RngState::new(config.master_seed).stream("cli.noise");
    let curve = stage(
        "sweep",
        robustness_sweep(&triple, &ds, &config.robustness.sigmas, config.robustness.trials, &mut rng),
    )?;
    let path = common.out.join("robustness.csv");
    write_atomic(&path, curve.to_csv().as_bytes())?;
    Ok(format!(
        "robustness: {} sigmas x {} trials -> {}",
        config.robustness.sigmas.len(),
        config.robustness.trials,
        path.display()
    ))
}

pub fn ntk(out: &Path, d: usize, gamma: f64) -> Result<String> {
    ensure_out(out)?;
    let report = ldsb::ntk::report(d, gamma)?;
    let path = out.join("ntk.json");
    write_json(&path, &report)?;
    Ok(format!(
        "ntk: d={d} gamma={gamma} xi={:.6} support-vector residual {:.2e} -> {}",
        report["xi"].as_f64().unwrap_or(f64::NAN),
        report["support_vector_residual_max"].as_f64().unwrap_or(f64::NAN),
        path.display()
    ))
}

pub fn pipeline(common: &ConfigArgs) -> Result<String> {
    let config = resolve_config(common)?;
    ensure_out(&common.out)?;
    let out = &common.out;
    let mut outputs = Vec::new();

    let splits = stage("gen", generate(&config))?;
    stage("gen", save_splits(&splits, out, &mut outputs))?;

    // First model.
    let net0 = init_net(&config, splits.train.d(), splits.train.num_classes, config.master_seed)?;
    let (f, log_f) =
        stage("train-f", train_net(net0, &splits.train, Some(&splits.val), &config.train))?;
    let f_path = out.join("f.json");
    stage("train-f", save_checkpoint(&f, &f_path).map_err(CliError::from))?;
    outputs.push(f_path);
    write_trainlog(&out.join("f_trainlog.csv"), &log_f, &mut outputs)?;

    // Subspace analysis of the first model.
    let rank_spec = config.analyze.rank_spec()?;
    analyze_inner(
        &config,
        out,
        &splits.test,
        &f,
        rank_spec,
        config.analyze.lambda,
        &mut outputs,
    )?;

    // Sequentially trained second model.
    let mut proj_config = config.train.clone();
    proj_config.seed = config.master_seed.wrapping_add(2);
    let outcome = stage(
        "orthop",
        orthop_train(&f, &splits.train, Some(&splits.val), rank_spec, &proj_config),
    )?;
    let fproj_path = out.join("fproj.json");
    stage("orthop", save_checkpoint(&outcome.f_proj, &fproj_path).map_err(CliError::from))?;
    outputs.push(fproj_path);
    write_trainlog(&out.join("fproj_trainlog.csv"), &outcome.log, &mut outputs)?;

    // Independent retrain baseline.
    let mut ind_config = config.train.clone();
    ind_config.seed = config.master_seed.wrapping_add(1);
    let net0 = init_net(&config, splits.train.d(), splits.train.num_classes, ind_config.seed)?;
    let (f_ind, log_ind) =
        stage("train-ind", train_net(net0, &splits.train, Some(&splits.val), &ind_config))?;
    let find_path = out.join("find.json");
    stage("train-ind", save_checkpoint(&f_ind, &find_path).map_err(CliError::from))?;
    outputs.push(find_path);
    write_trainlog(&out.join("find_trainlog.csv"), &log_ind, &mut outputs)?;

    // Diversity of the two pairings.
    let ef = EvalModel::plain(&f);
    let ei = EvalModel::plain(&f_ind);
    let ep = EvalModel::perp_projected(&outcome.f_proj, &outcome.projector);
    let div_proj = stage("diversity", diversity_report(&ef, &ep, &splits.test))?;
    let div_ind = stage("diversity", diversity_report(&ef, &ei, &splits.test))?;
    let div_path = out.join("diversity.json");
    write_json(
        &div_path,
        &serde_json::json!({
            "f_vs_fproj": div_proj.to_json(),
            "f_vs_find": div_ind.to_json(),
        }),
    )?;
    outputs.push(div_path);

    // Robustness sweep.
    let triple =
        ModelTriple { f: &f, f_ind: &f_ind, f_proj: &outcome.f_proj, projector: &outcome.projector };
    let mut rng = RngState::new(config.master_seed).stream("cli.noise");
    let curve = stage(
        "robustness",
        robustness_sweep(
            &triple,
            &splits.test,
            &config.robustness.sigmas,
            config.robustness.trials,
            &mut rng,
        ),
    )?;
    let rob_path = out.join("robustness.csv");
    write_atomic(&rob_path, curve.to_csv().as_bytes())?;
    outputs.push(rob_path);

    // Manifest last: config, hash, versions, file list.
    let manifest = serde_json::json!({
        "command": "pipeline",
        "crate_version": env!("CARGO_PKG_VERSION"),
        "rng_algorithm": RNG_ALGORITHM,
        "master_seed": config.master_seed,
        "config_hash": config.hash(),
        "config": serde_json::to_value(&config).expect("config"),
        "outputs": outputs
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect::<Vec<_>>(),
    });
    write_json(&out.join("manifest.json"), &manifest)?;

    let acc_f = evaluate(&f, &splits.test)?;
    let acc_proj = ep.accuracy(&splits.test)?;
    Ok(format!(
        "pipeline: f test acc {:.4}, f_proj test acc {:.4}, {} artifacts -> {}",
        acc_f,
        acc_proj,
        outputs.len() + 1,
        out.display()
    ))
}
