use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::warn;

use kgrec::checkpoint::{self, Header};
use kgrec::embedding::AttributeLayout;
use kgrec::eval::evaluate as rank_all;
use kgrec::explain::{load_relation_names, ExplainRecord};
use kgrec::kg::{load_interactions, load_kg, InteractionSet, KnowledgeGraph, UserId};
use kgrec::model::{model_layout, Model};
use kgrec::synth::{generate, SyntheticSpec};
use kgrec::train::{epochs_tsv, EpochRecord, Trainer};

use crate::config::{DataPaths, Overrides, RunConfig};
use crate::{EvaluateArgs, ExplainArgs, RunArgs, SynthArgs, TrainArgs};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

pub const MANIFEST: &str = "manifest.toml";
pub const EPOCHS: &str = "epochs.tsv";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const LAST: &str = "last.bin";
pub const METRICS: &str = "metrics.tsv";
pub const EXPLAIN: &str = "explain.jsonl";
pub const ITEMS: &str = "items.bin";
const LOCK: &str = ".lock";

/// Marks errors caused by the invocation rather than the data.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<kgrec::Error>() {
            return match e {
                kgrec::Error::Numeric(_) => EXIT_NUMERIC,
                kgrec::Error::Config(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            };
        }
        if cause.is::<Usage>() || cause.is::<toml::de::Error>() {
            return EXIT_USAGE;
        }
    }
    EXIT_DATA
}

/// Exclusive claim on an output directory, released on drop.
struct Lock(PathBuf);

impl Lock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Lock(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(anyhow::anyhow!(
                "{} is in use by another run (remove {} if that run is gone)",
                dir.display(),
                path.display()
            )),
            Err(e) => Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn overrides(run: &RunArgs) -> Overrides {
    let data = match (&run.data, &run.kg, &run.train, &run.test) {
        (Some(dir), ..) => Some(DataPaths::from_dir(dir)),
        (None, Some(kg), Some(train), Some(test)) => Some(DataPaths {
            kg: kg.clone(),
            train: train.clone(),
            test: test.clone(),
            item_count: None,
        }),
        _ => None,
    };
    let data = data.map(|mut d| {
        d.item_count = run.item_count;
        d
    });
    Overrides {
        preset: run.preset,
        out: run.out.clone(),
        data,
        train: toml::Table::new(),
    }
}

fn resolve(run: &RunArgs, train: toml::Table) -> Result<RunConfig> {
    let mut o = overrides(run);
    o.train = train;
    RunConfig::resolve(run.config.as_deref(), o).map_err(|e| match e.downcast::<kgrec::Error>() {
        Ok(k) => anyhow::Error::new(k),
        Err(e) => anyhow::Error::new(Usage(format!("{e:#}"))),
    })
}

struct Dataset {
    graph: KnowledgeGraph,
    interactions: InteractionSet,
}

fn load(data: &DataPaths) -> Result<Dataset> {
    let graph = load_kg(&data.kg, None, None)?;
    let interactions = load_interactions(&data.train, &data.test, data.item_count)?;
    if interactions.item_count() > graph.entity_count() {
        return Err(kgrec::Error::Data(format!(
            "{} items but the graph has only {} entities",
            interactions.item_count(),
            graph.entity_count()
        ))
        .into());
    }
    Ok(Dataset { graph, interactions })
}

fn expected_header(cfg: &RunConfig, layout: &AttributeLayout, ds: &Dataset) -> Header {
    let combine = cfg.train.variant.combine();
    Header {
        version: checkpoint::VERSION,
        combine,
        entity_count: ds.graph.entity_count(),
        user_count: ds.interactions.user_count(),
        dims: layout.dims().to_vec(),
        user_width: combine.rep_width(layout),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn train(a: TrainArgs) -> Result<u8> {
    let mut t = toml::Table::new();
    let mut schedule = toml::Table::new();
    macro_rules! set {
        ($table:ident, $key:literal, $v:expr) => {
            if let Some(v) = $v {
                $table.insert(
                    $key.into(),
                    toml::Value::try_from(v).expect("flag value serializes"),
                );
            }
        };
    }
    set!(t, "variant", a.ablation);
    set!(t, "learning_rate", a.lr);
    set!(t, "l2", a.l2);
    set!(t, "l2_scope", a.l2_scope);
    set!(t, "temperature", a.tau);
    set!(t, "layers", a.layers);
    set!(t, "batch_size", a.batch_size);
    set!(t, "node_dropout", a.dropout);
    set!(t, "patience", a.patience);
    set!(t, "max_epochs", a.epochs);
    set!(t, "seed", a.seed);
    set!(t, "k", a.k);
    set!(t, "validation_fraction", a.validation_fraction);
    set!(schedule, "d_min", a.d_min);
    set!(schedule, "d_max", a.d_max);
    set!(schedule, "c", a.c);
    if !schedule.is_empty() {
        t.insert("schedule".into(), toml::Value::Table(schedule));
    }
    let cfg = resolve(&a.run, t)?;

    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let _lock = Lock::acquire(&cfg.out)?;
    let ds = load(&cfg.data)?;
    let combine = cfg.train.variant.combine();
    let layout = model_layout(&ds.graph, &cfg.train.schedule, combine)?;
    let trainer = Trainer::new(&cfg.train, &ds.graph, &layout, &ds.interactions)?;
    write(&cfg.out.join(MANIFEST), &cfg.to_toml())?;

    let header = expected_header(&cfg, &layout, &ds);
    let last = cfg.out.join(LAST);
    let mut state = if a.resume && last.exists() {
        let s = checkpoint::load_state(&last, &header)?;
        eprintln!("resuming at epoch {}", s.next_epoch);
        s
    } else {
        if a.resume {
            warn!("{} not found; starting fresh", last.display());
        }
        trainer.init_state()
    };
    eprintln!("block widths {:?}", layout.dims());

    let k = cfg.train.k;
    let epochs_path = cfg.out.join(EPOCHS);
    write(&epochs_path, &epochs_tsv(&state.log, k))?;
    let mut epochs_file = OpenOptions::new()
        .append(true)
        .open(&epochs_path)
        .with_context(|| format!("opening {}", epochs_path.display()))?;
    let ckpt = cfg.out.join(CHECKPOINT);
    trainer.run(&mut state, |rec: &EpochRecord, st| {
        println!("{}", rec.text(k));
        writeln!(epochs_file, "{}", rec.tsv())
            .map_err(|e| kgrec::Error::Data(format!("{}: {e}", epochs_path.display())))?;
        if let Some(best) = st.best.as_ref().filter(|b| b.epoch == rec.epoch) {
            checkpoint::save_params(&ckpt, &best.params, combine)?;
        }
        checkpoint::save_state(&last, st, combine)
    })?;

    let best = state
        .best
        .as_ref()
        .context("training ran no epochs (max_epochs = 0 or already finished)")?;
    let result = trainer.evaluate(&best.params, best.epoch as u64);
    write(&cfg.out.join(METRICS), &result.to_tsv())?;
    if a.dump_items {
        let items = trainer.model().item_reps(&best.params, ds.interactions.item_count());
        checkpoint::save_item_reps(&cfg.out.join(ITEMS), &items)?;
    }
    println!(
        "best epoch {}  recall@{k} {:.4}  ndcg@{k} {:.4}",
        best.epoch, result.recall, result.ndcg
    );
    Ok(EXIT_OK)
}

fn load_trained(
    run: &RunArgs,
    checkpoint_path: Option<&Path>,
) -> Result<(RunConfig, Dataset, AttributeLayout, kgrec::embedding::ParameterStore)> {
    let cfg = resolve(run, toml::Table::new())?;
    let ds = load(&cfg.data)?;
    let layout = model_layout(&ds.graph, &cfg.train.schedule, cfg.train.variant.combine())?;
    let path = checkpoint_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out.join(CHECKPOINT));
    let (_, params) = checkpoint::load_params(&path, Some(&expected_header(&cfg, &layout, &ds)))
        .with_context(|| format!("loading {}", path.display()))?;
    Ok((cfg, ds, layout, params))
}

pub fn evaluate(a: EvaluateArgs) -> Result<u8> {
    let (cfg, ds, layout, params) = load_trained(&a.run, a.checkpoint.as_deref())?;
    let k = a.k.unwrap_or(cfg.train.k);
    if k == 0 {
        return Err(Usage("--k must be positive".into()).into());
    }
    let model = Model::new(&ds.graph, &layout, cfg.train.model_spec())?;
    let snapshot = model.snapshot(&params, ds.interactions.item_count(), 0);
    let result = rank_all(&model, &snapshot, &params, &ds.interactions, k);
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    write(&cfg.out.join(METRICS), &result.to_tsv())?;
    if a.per_user {
        write(&cfg.out.join("per_user.tsv"), &result.per_user_tsv())?;
    }
    println!(
        "recall@{k} {}  ndcg@{k} {}  users {}",
        result.recall,
        result.ndcg,
        result.users.len()
    );
    Ok(EXIT_OK)
}

pub fn explain(a: ExplainArgs) -> Result<u8> {
    let (cfg, ds, layout, params) = load_trained(&a.run, a.checkpoint.as_deref())?;
    let names = match &a.names {
        Some(p) => load_relation_names(p)?,
        None => Default::default(),
    };
    let model = Model::new(&ds.graph, &layout, cfg.train.model_spec())?;
    if !cfg.train.variant.attention() {
        warn!("variant {} does not use interest scores", cfg.train.variant);
    }
    let snapshot = model.snapshot(&params, ds.interactions.item_count(), 0);
    let users: Vec<u64> = if a.all_users {
        (0..ds.interactions.user_count() as u64).collect()
    } else {
        a.users.clone()
    };

    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let path = cfg.out.join(EXPLAIN);
    let mut out = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut failed = 0;
    for u in users {
        if u >= ds.interactions.user_count() as u64 {
            eprintln!(
                "error: unknown user {u} (dataset has {} users)",
                ds.interactions.user_count()
            );
            failed += 1;
            continue;
        }
        let profile = snapshot.profile(&model, &params, &ds.interactions, u as UserId);
        let rec = ExplainRecord::new(&profile, &names);
        writeln!(out, "{}", rec.json()).with_context(|| format!("writing {}", path.display()))?;
        print!("{}", rec.text());
    }
    Ok(if failed > 0 { EXIT_DATA } else { EXIT_OK })
}

pub fn synth(a: SynthArgs) -> Result<u8> {
    let spec = SyntheticSpec {
        users: a.users,
        items: a.items,
        relations: a.relations,
        entities_per_relation: a.pool,
        sparsity: a.sparsity,
        interactions_per_user: a.interactions,
        test_fraction: a.test_fraction,
        second_hop: a.second_hop,
        seed: a.seed,
    };
    let world = generate(&spec)?;
    world.write(&a.out)?;
    println!(
        "wrote {} users, {} items, {} entities, {} triples to {}",
        spec.users,
        spec.items,
        spec.entity_count(),
        world.triples.len(),
        a.out.display()
    );
    Ok(EXIT_OK)
}
