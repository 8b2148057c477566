//! One function per subcommand. Each returns the artifacts it wrote plus a
//! JSON summary for the run manifest.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use sidesense_core::data::{generate_synthetic_dataset, LoadedDataset, MultiAngleSample};
use sidesense_core::model::GestureModel;
use sidesense_core::preprocess::preprocess_dataset;
use sidesense_core::sim::{corrupt_dataset, random_scenario, simulate, Scenario};
use sidesense_core::train::{
    angle_importance, eval_angle_subset, evaluate, run_angle_dropout, run_angle_permutation,
    run_federated, train, write_protocol_csv, RepresentationCache,
};
use sidesense_core::{Error, HeadKind};

use crate::config::RunConfig;
use crate::{CliError, Command, EvalIo};

type Outcome = Result<(Vec<PathBuf>, Value), CliError>;

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    seed: u64,
    config_sha256: String,
    cli_version: &'a str,
    core_version: &'a str,
    outputs: Vec<String>,
    summary: Value,
    config: &'a RunConfig,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_text(path, &text)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Hash over every file under `root`: relative path and contents, in
/// sorted path order.
pub fn tree_hash(root: &Path) -> Result<String, CliError> {
    let mut hasher = Sha256::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::Core(Error::Data(format!("walking {}: {e}", root.display()))))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(root).expect("under root");
        let rel: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
        hasher.update(rel.join("/").as_bytes());
        hasher.update([0]);
        let mut bytes = Vec::new();
        fs::File::open(entry.path())
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| io_err(entry.path(), e))?;
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

pub fn execute(command: &Command, cfg: &RunConfig) -> Result<(), CliError> {
    let out = &cfg.output;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let mut resolved = serde_json::to_string_pretty(cfg).expect("config serializes");
    resolved.push('\n');
    write_text(&out.join("config.resolved.json"), &resolved)?;

    let (outputs, summary) = match command {
        Command::Generate => generate(cfg),
        Command::Preprocess { input } => preprocess(cfg, input.as_deref()),
        Command::Train { data } => train_cmd(cfg, data.as_deref()),
        Command::Evaluate { io, angles } => evaluate_cmd(cfg, io, angles.as_deref()),
        Command::Dropout { io } => dropout(cfg, io),
        Command::Pairs { io } => pairs(cfg, io),
        Command::Permute { io } => permute(cfg, io),
        Command::Importance { io } => importance(cfg, io),
        Command::Federate { data } => federate(cfg, data.as_deref()),
        Command::Simulate { scenario, corrupt } => simulate_cmd(cfg, scenario.as_deref(), corrupt.as_deref()),
    }?;
    let manifest = RunManifest {
        command: command.name(),
        seed: cfg.seed,
        config_sha256: sha256_hex(resolved.as_bytes()),
        cli_version: env!("CARGO_PKG_VERSION"),
        core_version: sidesense_core::VERSION,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        summary,
        config: cfg,
    };
    write_json(&out.join(format!("run.{}.json", command.name())), &manifest)?;
    Ok(())
}

fn generate(cfg: &RunConfig) -> Outcome {
    let dir = cfg.output.join("dataset");
    let manifest = generate_synthetic_dataset(&cfg.dataset, &dir)?;
    let hash = tree_hash(&dir)?;
    println!("wrote {} samples to {} (sha256 {hash})", manifest.samples.len(), dir.display());
    Ok((vec![dir], json!({ "samples": manifest.samples.len(), "dataset_sha256": hash })))
}

fn preprocess(cfg: &RunConfig, input: Option<&Path>) -> Outcome {
    let input = input.map_or_else(|| cfg.output.join("dataset"), Path::to_path_buf);
    let dir = cfg.output.join("preprocessed");
    let manifest = preprocess_dataset(&input, &dir, &cfg.preprocess, cfg.seed)?;
    let hash = tree_hash(&dir)?;
    println!("preprocessed {} samples into {}", manifest.samples.len(), dir.display());
    Ok((
        vec![dir],
        json!({ "input": input, "samples": manifest.samples.len(), "dataset_sha256": hash }),
    ))
}

fn data_dir(cfg: &RunConfig, data: Option<&Path>) -> PathBuf {
    data.map_or_else(|| cfg.output.join("preprocessed"), Path::to_path_buf)
}

fn history_csv(epochs: &[sidesense_core::train::EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,train_loss,val_loss,val_balanced_accuracy\n");
    for e in epochs {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            e.epoch, e.lr, e.train_loss, e.val_loss, e.val_balanced_accuracy
        );
    }
    out
}

fn train_cmd(cfg: &RunConfig, data: Option<&Path>) -> Outcome {
    let dir = data_dir(cfg, data);
    let ds = LoadedDataset::load(&dir)?;
    let mut model = GestureModel::new(&cfg.model(), ds.manifest.num_classes(), cfg.seed)?;
    let history = train(&mut model, &ds.train, &ds.val, &cfg.train, &cfg.preprocess.augment, |r| {
        eprintln!(
            "epoch {:>4}  lr {:.2e}  train {:.4}  val {:.4}  val bacc {:.3}",
            r.epoch, r.lr, r.train_loss, r.val_loss, r.val_balanced_accuracy
        );
    })?;
    let model_path = cfg.output.join("model.json");
    model.save(&model_path)?;
    let hist_path = cfg.output.join("history.csv");
    write_text(&hist_path, &history_csv(&history.epochs))?;
    let test = if ds.test.is_empty() {
        None
    } else {
        let cache = RepresentationCache::build(&model, &ds.test)?;
        Some(evaluate(&model, &cache)?)
    };
    println!(
        "best epoch {} (val loss {:.4}){}",
        history.best_epoch,
        history.best_val_loss,
        test.as_ref()
            .map(|r| format!(", test balanced accuracy {:.3}", r.balanced_accuracy))
            .unwrap_or_default()
    );
    Ok((
        vec![model_path, hist_path],
        json!({
            "data": dir,
            "best_epoch": history.best_epoch,
            "best_val_loss": history.best_val_loss,
            "epochs_run": history.epochs.len(),
            "stopped_early": history.stopped_early,
            "test": test,
        }),
    ))
}

struct Loaded {
    model: GestureModel,
    cache: RepresentationCache,
    class_names: Vec<String>,
}

fn load_for_eval(cfg: &RunConfig, io: &EvalIo) -> Result<Loaded, CliError> {
    let model_path = io.model.clone().unwrap_or_else(|| cfg.output.join("model.json"));
    let model = GestureModel::load(&model_path)?;
    let ds = LoadedDataset::load(&data_dir(cfg, io.data.as_deref()))?;
    if ds.test.is_empty() {
        return Err(Error::Data("the dataset's test split is empty".into()).into());
    }
    if ds.manifest.num_classes() != model.classes {
        return Err(Error::Data(format!(
            "model has {} classes but the dataset has {}",
            model.classes,
            ds.manifest.num_classes()
        ))
        .into());
    }
    let cache = RepresentationCache::build(&model, &ds.test)?;
    Ok(Loaded {
        model,
        cache,
        class_names: ds.manifest.class_names,
    })
}

fn evaluate_cmd(cfg: &RunConfig, io: &EvalIo, angles: Option<&[u16]>) -> Outcome {
    let l = load_for_eval(cfg, io)?;
    let subset = angles.map(<[u16]>::to_vec).or_else(|| cfg.eval.angles.clone());
    let report = match &subset {
        Some(s) => eval_angle_subset(&l.model, &l.cache, s)?,
        None => evaluate(&l.model, &l.cache)?,
    };
    let path = cfg.output.join("evaluation.json");
    let body = json!({ "angles": subset, "report": report });
    write_json(&path, &body)?;
    println!(
        "balanced accuracy {:.4}, macro AUC {} on {} samples",
        report.balanced_accuracy,
        report.auc_macro.map_or("n/a".to_string(), |a| format!("{a:.4}")),
        report.samples
    );
    Ok((vec![path], body))
}

fn print_protocol(s: &sidesense_core::train::ProtocolSummary) {
    println!(
        "{} {}: mean {:.4} std {:.4}",
        s.protocol, s.setting, s.mean_balanced_accuracy, s.std_balanced_accuracy
    );
}

fn dropout(cfg: &RunConfig, io: &EvalIo) -> Outcome {
    let l = load_for_eval(cfg, io)?;
    let n = l.cache.common_angles().len();
    let summaries = (0..n)
        .map(|k| run_angle_dropout(&l.model, &l.cache, k, cfg.eval.trials, cfg.eval.batch_size, cfg.seed))
        .collect::<Result<Vec<_>, _>>()?;
    summaries.iter().for_each(print_protocol);
    let csv = cfg.output.join("dropout.csv");
    write_protocol_csv(&csv, &summaries)?;
    let js = cfg.output.join("dropout.json");
    write_json(&js, &summaries)?;
    Ok((vec![csv, js], json!({ "settings": summaries.len() })))
}

fn pairs(cfg: &RunConfig, io: &EvalIo) -> Outcome {
    let l = load_for_eval(cfg, io)?;
    let mut csv = String::from("pair,balanced_accuracy,auc\n");
    let mut rows = Vec::new();
    for pair in &cfg.eval.pairs {
        let report = eval_angle_subset(&l.model, &l.cache, pair)?;
        let name = format!("{}+{}", pair[0], pair[1]);
        let auc = report.auc_macro.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(csv, "{name},{},{auc}", report.balanced_accuracy);
        println!("pair {name}: balanced accuracy {:.4}", report.balanced_accuracy);
        rows.push(json!({ "pair": pair, "report": report }));
    }
    let csv_path = cfg.output.join("pairs.csv");
    write_text(&csv_path, &csv)?;
    let js = cfg.output.join("pairs.json");
    write_json(&js, &rows)?;
    Ok((vec![csv_path, js], json!({ "pairs": cfg.eval.pairs.len() })))
}

fn require_tracking(model: &GestureModel, what: &str) -> Result<(), CliError> {
    if model.kind() != HeadKind::Tracking {
        return Err(CliError::Config(format!(
            "{what} needs a model with fusion.head = tracking, found {}",
            model.kind().name()
        )));
    }
    Ok(())
}

fn permute(cfg: &RunConfig, io: &EvalIo) -> Outcome {
    let l = load_for_eval(cfg, io)?;
    require_tracking(&l.model, "the permutation protocol")?;
    let n = l.cache.common_angles().len();
    let ks = std::iter::once(0).chain(2..=n);
    let summaries = ks
        .map(|k| run_angle_permutation(&l.model, &l.cache, k, cfg.eval.trials, cfg.eval.batch_size, cfg.seed))
        .collect::<Result<Vec<_>, _>>()?;
    summaries.iter().for_each(print_protocol);
    let csv = cfg.output.join("permute.csv");
    write_protocol_csv(&csv, &summaries)?;
    let js = cfg.output.join("permute.json");
    write_json(&js, &summaries)?;
    Ok((vec![csv, js], json!({ "settings": summaries.len() })))
}

fn importance(cfg: &RunConfig, io: &EvalIo) -> Outcome {
    let l = load_for_eval(cfg, io)?;
    require_tracking(&l.model, "angle importance")?;
    let table = angle_importance(&l.model, &l.cache)?;
    let path = cfg.output.join("importance.csv");
    write_text(&path, &table.to_csv(&l.class_names))?;
    for (g, row) in table.scores.iter().enumerate() {
        let best = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| table.angles[i]);
        if let (Some(name), Some(a)) = (l.class_names.get(g), best) {
            println!("{name}: most informative angle {a}");
        }
    }
    Ok((vec![path], json!({ "angles": table.angles })))
}

/// Train samples split among participants by subject, round-robin over
/// the sorted subject ids.
fn partition_by_subject(samples: &[MultiAngleSample], participants: usize) -> Result<Vec<Vec<MultiAngleSample>>, CliError> {
    let subjects: Vec<u32> = samples.iter().map(|s| s.subject_id).collect::<BTreeSet<_>>().into_iter().collect();
    if participants > subjects.len() {
        return Err(CliError::Config(format!(
            "{participants} participants but only {} training subjects",
            subjects.len()
        )));
    }
    let mut parts = vec![Vec::new(); participants];
    for s in samples {
        let idx = subjects.binary_search(&s.subject_id).expect("subject listed");
        parts[idx % participants].push(s.clone());
    }
    Ok(parts)
}

fn federate(cfg: &RunConfig, data: Option<&Path>) -> Outcome {
    let dir = data_dir(cfg, data);
    let ds = LoadedDataset::load(&dir)?;
    let parts = partition_by_subject(&ds.train, cfg.federated.participants)?;
    let eval_set = if ds.val.is_empty() { &ds.test } else { &ds.val };
    if eval_set.is_empty() {
        return Err(Error::Data("federated evaluation needs a val or test split".into()).into());
    }
    let mut model = GestureModel::new(&cfg.model(), ds.manifest.num_classes(), cfg.seed)?;
    let outcome = run_federated(
        &mut model,
        &parts,
        eval_set,
        &cfg.federated,
        &cfg.train,
        &cfg.preprocess.augment,
        |r| {
            eprintln!(
                "round {:>3}  global loss {:.4}  global bacc {:.3}",
                r.round, r.global_loss, r.global_balanced_accuracy
            )
        },
    )?;
    let mut csv = String::from("round,participant,local_loss,global_loss,global_balanced_accuracy\n");
    for r in &outcome.rounds {
        for (i, l) in r.local_losses.iter().enumerate() {
            let _ = writeln!(csv, "{},{i},{l},{},{}", r.round, r.global_loss, r.global_balanced_accuracy);
        }
    }
    let csv_path = cfg.output.join("federated.csv");
    write_text(&csv_path, &csv)?;
    let model_path = cfg.output.join("model.federated.json");
    model.save(&model_path)?;
    let last = outcome.rounds.last().expect("at least one round");
    println!(
        "{} rounds, final global balanced accuracy {:.3}",
        outcome.rounds.len(),
        last.global_balanced_accuracy
    );
    Ok((
        vec![csv_path, model_path],
        json!({
            "data": dir,
            "participant_samples": parts.iter().map(Vec::len).collect::<Vec<_>>(),
            "final_global_loss": last.global_loss,
            "final_global_balanced_accuracy": last.global_balanced_accuracy,
        }),
    ))
}

fn simulate_cmd(cfg: &RunConfig, scenario: Option<&Path>, corrupt: Option<&Path>) -> Outcome {
    let scenario = match scenario.or(cfg.sim.scenario.as_deref()) {
        Some(p) => Scenario::load(p)?,
        None => random_scenario(cfg.seed, &cfg.sim.random),
    };
    let report = simulate(&scenario)?;
    let trace = cfg.output.join("trace.csv");
    report.write_trace(&trace)?;
    let summary = json!({
        "sessions": report.sessions.len(),
        "events_processed": report.events_processed,
        "conservation_violations": report.conservation_violations,
        "illegal_transitions": report.illegal_transitions,
        "interference_events": report.interference.len(),
        "final_free_blocks": report.final_free_blocks,
    });
    let sim_path = cfg.output.join("simulation.json");
    write_json(
        &sim_path,
        &json!({
            "summary": summary,
            "interference": report.interference,
            "features_aggregated": report.features_aggregated,
        }),
    )?;
    println!(
        "{} events over {} sessions, {} interference events, {} conservation violations, {} illegal transitions",
        report.events_processed,
        report.sessions.len(),
        report.interference.len(),
        report.conservation_violations,
        report.illegal_transitions
    );
    let mut outputs = vec![trace, sim_path];
    let mut summary = summary;
    if let Some(input) = corrupt {
        let dir = cfg.output.join("corrupted");
        let (_, c) = corrupt_dataset(input, &dir, &scenario, &report, cfg.seed)?;
        println!(
            "corrupted dataset: {} samples written, {} clouds touched, {} blanked",
            c.samples_written, c.clouds_touched, c.clouds_blanked
        );
        summary["corruption"] = serde_json::to_value(&c).expect("summary serializes");
        outputs.push(dir);
    }
    Ok((outputs, summary))
}
