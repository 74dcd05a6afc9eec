//! Trains on a planted-preference world and reports ranking quality and how
//! often the top interest score lands on the planted relation.
//!
//! ```text
//! cargo run --release -p kgrec --example planted -- [key=value ...]
//! ```
//! Keys: lr, l2, batch, tau, layers, d_min, d_max, c, epochs, seed, variant,
//! dropout, pool.

use std::collections::HashMap;

use kgrec::model::{model_layout, Variant};
use kgrec::synth::{generate, planted_relation, SyntheticSpec};
use kgrec::train::{Preset, TrainConfig, Trainer};

fn main() -> kgrec::Result<()> {
    env_logger::init();
    let args: HashMap<String, String> = std::env::args()
        .skip(1)
        .filter_map(|a| a.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect();
    let get = |k: &str, d: f64| args.get(k).map(|v| v.parse().unwrap()).unwrap_or(d);

    let spec = SyntheticSpec {
        seed: get("seed", 2022.0) as u64,
        entities_per_relation: get("pool", 10.0) as usize,
        ..SyntheticSpec::default()
    };
    let world = generate(&spec)?;
    let graph = world.graph()?;
    let data = world.interactions()?;

    let mut cfg = TrainConfig::preset(Preset::AlibabaIfashion);
    cfg.learning_rate = get("lr", 1e-2);
    cfg.l2 = get("l2", 1e-5);
    cfg.batch_size = get("batch", 256.0) as usize;
    cfg.temperature = get("tau", 0.1);
    cfg.layers = get("layers", 2.0) as usize;
    cfg.schedule.d_min = get("d_min", 4.0) as usize;
    cfg.schedule.d_max = get("d_max", 16.0) as usize;
    cfg.schedule.c = get("c", 600.0) as usize;
    cfg.max_epochs = get("epochs", 30.0) as usize;
    cfg.patience = cfg.max_epochs;
    cfg.node_dropout = get("dropout", 0.0);
    cfg.seed = spec.seed;
    cfg.variant = args
        .get("variant")
        .map(|v| v.parse::<Variant>().unwrap())
        .unwrap_or_default();

    let layout = model_layout(&graph, &cfg.schedule, cfg.variant.combine())?;
    println!("dims {:?}", layout.dims());
    let trainer = Trainer::new(&cfg, &graph, &layout, &data)?;
    let mut state = trainer.init_state();
    let start = std::time::Instant::now();
    trainer.run(&mut state, |r, _| {
        println!("{}", r.text(cfg.k));
        Ok(())
    })?;

    if cfg.variant.attention() {
        let model = trainer.model();
        let snap = model.snapshot(&state.params, data.item_count(), 0);
        let (mut folded, mut canonical) = (0, 0);
        for u in 0..spec.users {
            let profile = snap.profile(model, &state.params, &data, u as u32);
            let truth = world.preferences[u][0].relation;
            let best = |filter: &dyn Fn(u32) -> bool| {
                profile
                    .ranked()
                    .into_iter()
                    .find(|&(r, _)| filter(r) && planted_relation(&spec, r).is_some())
                    .map(|(r, _)| planted_relation(&spec, r).unwrap())
            };
            folded += usize::from(best(&|_| true) == Some(truth));
            canonical += usize::from(best(&|r| (r as usize) < spec.canonical_relations()) == Some(truth));
        }
        println!(
            "recovery folded {:.3} canonical-only {:.3}",
            folded as f64 / spec.users as f64,
            canonical as f64 / spec.users as f64
        );
        if args.contains_key("diag") {
            let layout = model.layout;
            let mut shown = 0;
            for u in 0..spec.users {
                let truth = world.preferences[u][0].relation;
                let profile = snap.profile(model, &state.params, &data, u as u32);
                let top = planted_relation(&spec, profile.ranked()[0].0).unwrap();
                if top == truth || shown >= 6 {
                    continue;
                }
                shown += 1;
                let hist = kgrec::attention::history_mean(&snap.items, data.train_items(u as u32)).unwrap();
                println!("user {u} truth {truth}");
                for m in 0..layout.relation_count() as u32 {
                    let t = kgrec::attention::interest_terms(
                        layout.slice(state.params.user(u as u32), m),
                        layout.slice(&hist, m),
                        snap.means.block(layout, m),
                        cfg.temperature,
                    );
                    println!(
                        "  r{m:<3} num {:>10.4} den {:>10.4} f {:.4}",
                        t.numerator, t.denominator, t.score
                    );
                }
            }
        }
        let u0 = snap.profile(model, &state.params, &data, 0);
        println!(
            "user 0 truth {} scores {:?}",
            world.preferences[0][0].relation,
            u0.ranked()
        );
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
