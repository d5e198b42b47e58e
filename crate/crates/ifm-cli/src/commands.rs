use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ifm::data::{
    build_splits, build_texture_bank, load_mnist, read_bundle, read_split, write_bundle,
    DatasetBundle, MnistPart, ShiftedExample, TextureSource,
};
use ifm::eval::{evaluate, parse_csv, render_csv, render_table, EvalResult};
use ifm::mi::{estimate_mi_gaussian, gaussian_reference_jsd};
use ifm::nn::{load_checkpoint, Checkpoint};
use ifm::train::{metrics_line, save_run, train_with};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::{BuildDataArgs, EvalArgs, MiSanityArgs, ReportArgs, TrainArgs};

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Logs the effective configuration and, when `out` is given, writes it
/// there as `name` before any work starts.
fn echo(cfg: &RunConfig, out: Option<&Path>, name: &str) -> Result<(), CliError> {
    let text = cfg.to_toml()?;
    log::info!("effective configuration:\n{text}");
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(&dir.join(name), &text)?;
    }
    Ok(())
}

pub fn build_data(
    mut cfg: RunConfig,
    seed: Option<u64>,
    out: Option<&Path>,
    args: &BuildDataArgs,
) -> Result<(), CliError> {
    if let Some(m) = &args.mnist {
        cfg.data.mnist_dir = m.clone();
    }
    if let Some(t) = &args.textures {
        cfg.data.textures = t.clone();
    }
    if let Some(s) = seed {
        cfg.data.seed = s;
    }
    if let Some(o) = out {
        cfg.data.bundle_dir = o.to_path_buf();
    }
    let dir = cfg.data.bundle_dir.clone();
    echo(&cfg, Some(&dir), "build_config.toml")?;
    let source = match cfg.data.textures.as_str() {
        "procedural" => TextureSource::Procedural,
        path => {
            let p = PathBuf::from(path);
            if !p.is_dir() {
                return Err(CliError::Input(format!("texture directory {path} does not exist")));
            }
            TextureSource::ExternalDirectory(p)
        }
    };
    let mnist = &cfg.data.mnist_dir;
    if !mnist.is_dir() {
        return Err(CliError::Input(format!("MNIST directory {} does not exist", mnist.display())));
    }
    let train = load_mnist(mnist, MnistPart::Train)?;
    let test = load_mnist(mnist, MnistPart::Test)?;
    let bank = build_texture_bank(&source, cfg.data.seed)?;
    let bundle = build_splits(&train, &test, &bank, cfg.data.seed)?;
    write_bundle(&bundle, &dir)?;
    println!(
        "wrote {} (train {}, val {}, test {})",
        dir.display(),
        bundle.train.len(),
        bundle.val.len(),
        bundle.test.len()
    );
    Ok(())
}

pub fn train(
    mut cfg: RunConfig,
    seed: Option<u64>,
    out: Option<&Path>,
    args: &TrainArgs,
) -> Result<(), CliError> {
    let t = &mut cfg.train;
    if let Some(s) = seed {
        *t = t.clone().with_seed(s);
    }
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = args.$field.clone() {
                t.$field = v;
            }
        )*};
    }
    set!(lambda_ifm, epochs, batch_size, learning_rate, momentum, pairs_per_image);
    set!(objective_form, bn_grouping, update_mode, ifm_reporting);
    if args.train_limit.is_some() {
        t.train_limit = args.train_limit;
    }
    if args.val_limit.is_some() {
        t.val_limit = args.val_limit;
    }
    t.validate().map_err(CliError::Input)?;
    if let Some(d) = &args.data {
        cfg.data.bundle_dir = d.clone();
    }
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| {
        PathBuf::from(if cfg.train.lambda_ifm == 0.0 { "runs/baseline" } else { "runs/ifm" })
    });
    echo(&cfg, Some(&out), "run_config.toml")?;
    let bundle = read_bundle(&cfg.data.bundle_dir)?;
    let metrics_path = out.join("metrics.jsonl");
    let mut live = fs::File::create(&metrics_path).map_err(|e| CliError::io(&metrics_path, e))?;
    let mut write_err = None;
    let result = train_with(cfg.train.clone(), &bundle, |rec| {
        if let Err(e) = writeln!(live, "{}", metrics_line(rec)) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(CliError::io(&metrics_path, e));
    }
    save_run(&result, &out)?;
    println!(
        "best digit epoch {} ({:.4}), best texture epoch {} ({:.4}); artifacts in {}",
        result.best_digit_epoch,
        result.history[result.best_digit_epoch].val_digit_acc,
        result.best_texture_epoch,
        result.history[result.best_texture_epoch].val_texture_acc,
        out.display()
    );
    Ok(())
}

fn split_of(dir: &Path, name: &str) -> Result<Vec<ShiftedExample>, CliError> {
    match name {
        "train" | "val" | "test" => Ok(read_split(&dir.join(format!("{name}.smn")))?),
        other => Err(CliError::Input(format!("unknown split `{other}` (train|val|test)"))),
    }
}

/// `Baseline_Digit`, `ours_Texture` and so on, from the checkpoint's own
/// record of how it was trained.
fn row_name(ckpt: &Checkpoint) -> String {
    let lambda = ckpt.meta.train_config.get("lambda_ifm").and_then(|v| v.as_f64());
    let family = match lambda {
        Some(l) if l == 0.0 => "Baseline",
        Some(_) => "ours",
        None => "model",
    };
    let cue = match ckpt.meta.label.as_str() {
        "best_digit" => "Digit",
        "best_texture" => "Texture",
        other => other,
    };
    format!("{family}_{cue}")
}

pub fn eval(cfg: RunConfig, out: Option<&Path>, args: &EvalArgs) -> Result<(), CliError> {
    let data = args.data.clone().unwrap_or(cfg.data.bundle_dir);
    let ckpt = load_checkpoint(&args.ckpt)?;
    let split = split_of(&data, &args.split)?;
    let model = args.model.clone().unwrap_or_else(|| row_name(&ckpt));
    let result = evaluate(&ckpt, &model, &args.split, &split)?;
    let csv = render_csv(&[result]);
    print!("{csv}");
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(&dir.join(format!("eval_{model}_{}.csv", args.split)), &csv)?;
    }
    Ok(())
}

pub fn report(cfg: RunConfig, out: Option<&Path>, args: &ReportArgs) -> Result<(), CliError> {
    if args.runs.is_empty() && args.results.is_empty() {
        return Err(CliError::Input("give --runs and/or --results".into()));
    }
    let mut results: Vec<EvalResult> = Vec::new();
    for path in &args.results {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        results.extend(parse_csv(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?);
    }
    if !args.runs.is_empty() {
        let data = args.data.clone().unwrap_or(cfg.data.bundle_dir);
        let bundle: DatasetBundle = read_bundle(&data)?;
        let split = match args.split.as_str() {
            "train" => &bundle.train,
            "val" => &bundle.val,
            "test" => &bundle.test,
            other => return Err(CliError::Input(format!("unknown split `{other}` (train|val|test)"))),
        };
        for run in &args.runs {
            for file in ["best_digit.ckpt", "best_texture.ckpt"] {
                let ckpt = load_checkpoint(run.join(file))?;
                let mut name = row_name(&ckpt);
                if args.runs.len() > 1 {
                    let tag = run.file_name().map(|s| s.to_string_lossy()).unwrap_or_default();
                    name = format!("{name}[{tag}]");
                }
                log::info!("scoring {}", run.join(file).display());
                results.push(evaluate(&ckpt, &name, &args.split, split)?);
            }
        }
    }
    let table = render_table(&results, args.with_paper_refs, args.with_literature);
    print!("{table}");
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(&dir.join("report.csv"), &render_csv(&results))?;
        write_file(&dir.join("report.txt"), &table)?;
    }
    Ok(())
}

pub fn mi_sanity(seed: u64, args: &MiSanityArgs) -> Result<(), CliError> {
    log::info!(
        "mi-sanity: rho {:?}, {} samples, {} steps, seed {seed}",
        args.rho,
        args.samples,
        args.steps
    );
    println!("rho,estimate,reference_2jsd,gaussian_mi");
    for &rho in &args.rho {
        let reference = gaussian_reference_jsd(rho)?;
        let est = estimate_mi_gaussian(rho, args.samples, args.steps, seed)?;
        println!(
            "{rho},{:.6},{:.6},{:.6}",
            est.value, reference.two_jsd, reference.mutual_information
        );
    }
    Ok(())
}
