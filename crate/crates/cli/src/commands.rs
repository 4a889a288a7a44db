use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use ptree_core::manifest::{file_hash, RunManifest};
use ptree_core::numerics::Checkpoint;
use ptree_core::training::train_with_split;
use ptree_core::{baseline_tree, evaluate_model, Dataset, DenoisingTask, GaussianMixture, PosteriorTree, TrainConfig, TreeLayout};

use crate::{invalid, plot, warn, BaselineArgs, EvalArgs, Failure, GenDataArgs, PlotArgs, TaskArgs, TrainArgs};

type CmdResult = Result<(), Failure>;

/// Attaches the path to I/O errors, which otherwise do not name the file.
fn at<T>(path: &Path, r: ptree_core::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| match e {
        ptree_core::Error::Io(io) => invalid(format!("{}: {io}", path.display())),
        other => other.into(),
    })
}

fn check_output(path: &Path) -> CmdResult {
    if path.is_dir() {
        return Err(invalid(format!("{}: is a directory", path.display())));
    }
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            Err(invalid(format!("{}: directory {} does not exist", path.display(), dir.display())))
        }
        _ => Ok(()),
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write(path: &Path, contents: &str) -> CmdResult {
    std::fs::write(path, contents).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn finish(mut m: RunManifest, outputs: &[&Path], start: Instant) -> CmdResult {
    m.outputs = outputs.iter().map(|p| p.display().to_string()).collect();
    m.elapsed_ms = start.elapsed().as_millis();
    let path = sidecar(outputs[0]);
    at(&path, m.write(&path))
}

/// The task plus the `(role, hash)` of the prior file, if one was read.
fn load_task(args: &TaskArgs, sigma: f64, seed: u64) -> Result<(DenoisingTask, Vec<(String, String)>), Failure> {
    if args.task == "rhombus" {
        return Ok((DenoisingTask::rhombus(sigma, seed)?, Vec::new()));
    }
    let path = Path::new(&args.task);
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let prior: GaussianMixture =
        serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let hash = at(path, file_hash(path))?;
    Ok((DenoisingTask::new(prior, sigma, seed)?, vec![("prior".into(), hash)]))
}

pub fn gen_data(a: GenDataArgs) -> CmdResult {
    let start = Instant::now();
    if a.n == 0 {
        return Err(invalid("empty dataset"));
    }
    let sigma = a.task.sigma.unwrap_or(DenoisingTask::DEFAULT_NOISE_STD);
    let (task, inputs) = load_task(&a.task, sigma, a.seed)?;
    check_output(&a.out)?;
    let mut data = Dataset::new(task.dim(), sigma, task.sample_pairs(a.n)?)?;
    let m = RunManifest::new("gen-data", json!({ "task": a.task.task, "sigma": sigma, "n": a.n }), vec![a.seed], inputs);
    data.manifest = Some(m.hash.clone());
    at(&a.out, data.save(&a.out))?;
    finish(m, &[&a.out], start)?;
    println!("wrote {} pairs (dimension {}, sigma {sigma}) to {}", a.n, task.dim(), a.out.display());
    Ok(())
}

pub fn train(a: TrainArgs) -> CmdResult {
    let start = Instant::now();
    let mut config = at(&a.config, TrainConfig::load(&a.config))?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let warnings = config.validate()?;
    let data = at(&a.data, Dataset::load(&a.data))?;
    check_output(&a.out_model)?;
    check_output(&a.out_history)?;
    for w in &warnings {
        warn(w);
    }
    if data.noise_std != config.task.noise_std {
        warn(&format!(
            "dataset noise level {} differs from task.noise_std = {} in the config",
            data.noise_std, config.task.noise_std
        ));
    }
    let inputs = vec![
        ("config".to_string(), at(&a.config, file_hash(&a.config))?),
        ("data".to_string(), at(&a.data, file_hash(&a.data))?),
    ];
    let settings = serde_json::to_value(&config).expect("config serialises");
    let m = RunManifest::new("train", settings, vec![config.seed], inputs);

    let outcome = train_with_split(&config, &data)?;
    let mut checkpoint = Checkpoint::new(config, outcome.model);
    checkpoint.manifest = Some(m.hash.clone());
    write(&a.out_model, &checkpoint.to_json())?;
    let mut history = format!("# manifest {}\n", m.hash).into_bytes();
    at(&a.out_history, outcome.history.write_csv(&mut history))?;
    write(&a.out_history, &String::from_utf8(history).expect("csv is utf-8"))?;
    finish(m, &[&a.out_model, &a.out_history], start)?;
    if let Some(last) = outcome.history.records.last() {
        println!(
            "trained {} epochs: train loss {:.5}, validation loss {:.5}, lr {:.1e}/{:.1e}",
            last.epoch, last.train_loss, last.val_loss, last.lr_leaf, last.lr_prob
        );
    }
    Ok(())
}

pub fn baseline(a: BaselineArgs) -> CmdResult {
    let start = Instant::now();
    let layout = TreeLayout::new(a.k, a.d)?;
    if a.restarts == 0 {
        return Err(invalid("--restarts must be at least 1"));
    }
    let sigma = a.task.sigma.unwrap_or(DenoisingTask::DEFAULT_NOISE_STD);
    let (samples, inputs, source) = match (&a.data, &a.y) {
        (Some(path), _) => {
            let data = at(path, Dataset::load(path))?;
            (data.xs(), vec![("data".to_string(), at(path, file_hash(path))?)], json!({ "data": path }))
        }
        (None, Some(y)) => {
            if a.n_samples == 0 {
                return Err(invalid("empty sample set"));
            }
            let (task, inputs) = load_task(&a.task, sigma, a.seed)?;
            if y.len() != task.dim() {
                return Err(invalid(format!("--y has {} entries, the task is {}-dimensional", y.len(), task.dim())));
            }
            let samples = task.posterior_sample(y, a.n_samples, a.seed)?;
            (samples, inputs, json!({ "task": a.task.task, "sigma": sigma, "y": y, "n_samples": a.n_samples }))
        }
        (None, None) => return Err(invalid("either --y or --data is required")),
    };
    check_output(&a.out_tree)?;
    if samples.len() < layout.leaf_count() {
        warn(&format!(
            "{} samples for {} leaves; branches with fewer than K points are padded",
            samples.len(),
            layout.leaf_count()
        ));
    }
    let settings = json!({ "source": source, "K": a.k, "d": a.d, "restarts": a.restarts });
    let m = RunManifest::new("baseline", settings, vec![a.seed], inputs);
    let tree = baseline_tree(&samples, a.k, a.d, a.seed, a.restarts)?;
    write(&a.out_tree, &tree.to_text(Some(&m.hash)))?;
    finish(m, &[&a.out_tree], start)?;
    println!(
        "baseline tree K={} d={} from {} points, root {:?}",
        a.k,
        a.d,
        samples.len(),
        tree.root()
    );
    Ok(())
}

fn read_ys(path: &Path, dim: usize) -> Result<Vec<Vec<f64>>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    if text.starts_with("# ptree-dataset") {
        let data = at(path, Dataset::load(path))?;
        if data.dim != dim {
            return Err(invalid(format!("{}: dimension {} but the task is {dim}-dimensional", path.display(), data.dim)));
        }
        return Ok(data.ys());
    }
    let mut ys = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| invalid(format!("{}: line {}: {e}", path.display(), i + 1)))?;
        if row.len() != dim || row.iter().any(|v| !v.is_finite()) {
            return Err(invalid(format!("{}: line {}: expected {dim} finite values", path.display(), i + 1)));
        }
        ys.push(row);
    }
    if ys.is_empty() {
        return Err(invalid(format!("{}: no test measurements", path.display())));
    }
    Ok(ys)
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let start = Instant::now();
    let checkpoint = at(&a.model, Checkpoint::load(&a.model))?;
    let model = &checkpoint.model;
    let (k, d) = (model.layout.degree(), model.layout.depth());
    if a.k.is_some_and(|v| v != k) || a.d.is_some_and(|v| v != d) {
        return Err(invalid(format!(
            "layout mismatch: model has K={k} d={d}, requested K={} d={}",
            a.k.unwrap_or(k),
            a.d.unwrap_or(d)
        )));
    }
    if a.oracle_samples == 0 || a.restarts == 0 {
        return Err(invalid("--oracle-samples and --restarts must be positive"));
    }
    let sigma = a.task.sigma.unwrap_or(checkpoint.config.task.noise_std);
    let (task, mut inputs) = load_task(&a.task, sigma, a.seed)?;
    if task.dim() != model.dim() {
        return Err(invalid(format!("model is {}-dimensional, task is {}-dimensional", model.dim(), task.dim())));
    }
    let ys = match &a.test_ys {
        Some(path) => {
            inputs.push(("test_ys".into(), at(path, file_hash(path))?));
            read_ys(path, task.dim())?
        }
        None if a.n_test == 0 => return Err(invalid("--n-test must be positive")),
        None => task.sample_pairs(a.n_test)?.into_iter().map(|p| p.y).collect(),
    };
    check_output(&a.out_report)?;
    inputs.push(("model".into(), at(&a.model, file_hash(&a.model))?));
    let settings = json!({
        "task": a.task.task, "sigma": sigma, "n_test": ys.len(),
        "oracle_samples": a.oracle_samples, "restarts": a.restarts,
    });
    let m = RunManifest::new("eval", settings, vec![a.seed], inputs);
    let report = evaluate_model(model, &task, &ys, a.oracle_samples, a.seed, a.restarts)?;
    let mut out = format!("# manifest {}\n", m.hash).into_bytes();
    at(&a.out_report, report.write_csv(&mut out))?;
    write(&a.out_report, &String::from_utf8(out).expect("csv is utf-8"))?;
    finish(m, &[&a.out_report], start)?;
    println!(
        "{} inputs: root error {:.4}, matched leaf distance {:.4}, leaf |d alpha| {:.4}",
        ys.len(),
        report.mean_root_error(),
        report.mean_leaf_dist(),
        report.mean_leaf_prob_gap()
    );
    Ok(())
}

pub fn plot(a: PlotArgs) -> CmdResult {
    let start = Instant::now();
    let sigma = a.task.sigma.unwrap_or(DenoisingTask::DEFAULT_NOISE_STD);
    let (task, mut inputs) = load_task(&a.task, sigma, a.seed)?;
    let tree = at(&a.tree, PosteriorTree::load(&a.tree))?;
    if task.dim() != 2 || tree.dim() != 2 || a.y.len() != 2 {
        return Err(invalid("plotting supports 2-D tasks only"));
    }
    if a.samples == 0 {
        return Err(invalid("--samples must be positive"));
    }
    check_output(&a.out_svg)?;
    inputs.push(("tree".into(), at(&a.tree, file_hash(&a.tree))?));
    let settings = json!({ "task": a.task.task, "sigma": sigma, "y": a.y, "samples": a.samples });
    let m = RunManifest::new("plot", settings, vec![a.seed], inputs);
    let samples = task.posterior_sample(&a.y, a.samples, a.seed)?;
    let mean = task.posterior_mean(&a.y)?;
    let svg = plot::render(&tree, &samples, &a.y, &mean, &m.hash);
    write(&a.out_svg, &svg)?;
    finish(m, &[&a.out_svg], start)?;
    println!("wrote {}", a.out_svg.display());
    Ok(())
}
