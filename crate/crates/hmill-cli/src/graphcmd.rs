use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use hmill::data::DataNode;
use hmill::graph::{
    build_vertex_sample, edge_features, load_blacklist, load_relation, ptp,
    vertex_sample_extractor, Blacklist, RelationBundle,
};
use hmill::metrics::{auprc, auroc, kfold_blacklist_eval};
use hmill::model::{reflect_model, ModelBundle, Prescription};
use hmill::train::{predict_positive, train, ClassBalancing, LossKind, TrainConfig};
use hmill::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::manifest::ManifestBuilder;
use crate::util::{parse_agg, parse_relation_specs, substream, write_atomic};
use crate::{GraphFeaturesArgs, GraphInferArgs, GraphIoArgs, GraphPtpArgs, GraphSampleArgs};

fn load_bundles(spec: &str) -> Result<Vec<RelationBundle>> {
    let mut bundles = Vec::new();
    for (name, path) in parse_relation_specs(spec)? {
        bundles.push(RelationBundle::new(load_relation(&name, &path)?));
    }
    // Relation order is frozen by name, matching product key order.
    bundles.sort_by(|a, b| a.relation.name.cmp(&b.relation.name));
    Ok(bundles)
}

/// Sorted union of left-vertex ids across relations.
fn vertex_universe(bundles: &[RelationBundle]) -> Vec<String> {
    let mut ids: BTreeSet<String> = BTreeSet::new();
    for bundle in bundles {
        ids.extend(bundle.relation.left_ids().iter().cloned());
    }
    ids.into_iter().collect()
}

pub fn cmd_transform(args: &GraphIoArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new(
        "graph transform",
        json!({
            "relations": args.relations,
            "out_dir": args.out_dir.display().to_string(),
        }),
        0,
    );
    for (_, path) in parse_relation_specs(&args.relations)? {
        manifest = manifest.input(&path);
    }
    let bundles = load_bundles(&args.relations)?;
    std::fs::create_dir_all(&args.out_dir)?;
    for bundle in &bundles {
        let rel = &bundle.relation;
        let mut rows: Vec<(String, String, u64)> = bundle
            .graph
            .edges()
            .map(|(u, v, w)| {
                let (a, b) = (rel.left_id(u), rel.left_id(v));
                if a <= b {
                    (a.to_string(), b.to_string(), w.count)
                } else {
                    (b.to_string(), a.to_string(), w.count)
                }
            })
            .collect();
        rows.sort();
        let mut text = String::new();
        for (a, b, count) in rows {
            text.push_str(&format!("{a}\t{b}\t{count}\n"));
        }
        write_atomic(
            &args.out_dir.join(format!("{}.transformed.tsv", rel.name)),
            &text,
        )?;
    }
    manifest.write(&args.out_dir, true)
}

fn blacklist_or_empty(path: Option<&Path>) -> Result<Blacklist> {
    match path {
        Some(p) => load_blacklist(p),
        None => Ok(Blacklist::default()),
    }
}

pub fn cmd_features(args: &GraphFeaturesArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new(
        "graph features",
        json!({
            "relations": args.relations,
            "blacklist": args.blacklist.as_ref().map(|p| p.display().to_string()),
            "out_dir": args.out_dir.display().to_string(),
        }),
        0,
    );
    for (_, path) in parse_relation_specs(&args.relations)? {
        manifest = manifest.input(&path);
    }
    if let Some(bl) = &args.blacklist {
        manifest = manifest.input(bl);
    }
    let bundles = load_bundles(&args.relations)?;
    let blacklist = blacklist_or_empty(args.blacklist.as_deref())?;
    std::fs::create_dir_all(&args.out_dir)?;
    for bundle in &bundles {
        let rel = &bundle.relation;
        let seeds: BTreeSet<usize> = blacklist
            .ids()
            .iter()
            .filter_map(|id| rel.left_index_of(id))
            .collect();
        let mut rows = Vec::new();
        for v in 0..rel.left_count() {
            for &u in bundle.graph.neighbors(v) {
                let f = edge_features(&bundle.graph, rel, v, u as usize, &seeds)?;
                let values: Vec<String> = f.iter().map(f64::to_string).collect();
                rows.push(format!(
                    "{}\t{}\t{}",
                    rel.left_id(v),
                    rel.left_id(u as usize),
                    values.join("\t")
                ));
            }
        }
        rows.sort();
        let mut text = rows.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        write_atomic(
            &args.out_dir.join(format!("{}.features.tsv", rel.name)),
            &text,
        )?;
    }
    manifest.write(&args.out_dir, true)
}

pub fn cmd_sample(args: &GraphSampleArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new(
        "graph sample",
        json!({
            "relations": args.relations,
            "blacklist": args.blacklist.as_ref().map(|p| p.display().to_string()),
            "K": args.cap,
            "k_steps": args.k_steps,
            "out": args.out.display().to_string(),
        }),
        args.seed,
    );
    for (_, path) in parse_relation_specs(&args.relations)? {
        manifest = manifest.input(&path);
    }
    if let Some(bl) = &args.blacklist {
        manifest = manifest.input(bl);
    }
    if args.k_steps != 1 {
        return Err(Error::Invalid(
            "edge-feature samples are one-step; --k-steps must be 1 (deeper              unrolling is available through the library API)"
                .into(),
        ));
    }
    let bundles = load_bundles(&args.relations)?;
    let blacklist = blacklist_or_empty(args.blacklist.as_deref())?;
    let seeds = blacklist.ids();
    let cap = (args.cap > 0).then_some(args.cap);
    let mut lines = String::new();
    for id in vertex_universe(&bundles) {
        let sample = build_vertex_sample(&id, &bundles, &seeds, cap, args.seed)?;
        let DataNode::Product(product) = &sample else {
            unreachable!("vertex samples are products")
        };
        let mut relations = serde_json::Map::new();
        for (i, (name, child)) in product.children().iter().enumerate() {
            if product.missing()[i][0] {
                relations.insert(name.clone(), serde_json::Value::Null);
                continue;
            }
            let DataNode::Bag(bag) = child else { unreachable!() };
            let DataNode::Array(features) = bag.child() else { unreachable!() };
            let cols: Vec<Vec<f64>> = (0..features.values().cols())
                .map(|j| features.values().col_slice(j))
                .collect();
            relations.insert(
                name.clone(),
                json!({
                    "features": cols,
                    "weights": bag.weights().unwrap_or(&[]),
                }),
            );
        }
        let mut doc = serde_json::Map::new();
        doc.insert("id".into(), json!(id));
        if !blacklist.is_empty() {
            doc.insert("label".into(), json!(u8::from(seeds.contains(&id))));
        }
        doc.insert("relations".into(), serde_json::Value::Object(relations));
        lines.push_str(&serde_json::Value::Object(doc).to_string());
        lines.push('\n');
    }
    write_atomic(&args.out, &lines)?;
    manifest.write(&args.out, false)
}

pub fn cmd_ptp(args: &GraphPtpArgs) -> Result<()> {
    let manifest = ManifestBuilder::new(
        "graph ptp",
        json!({
            "relations": args.relations,
            "blacklist": args.blacklist.display().to_string(),
            "iters": args.iters,
            "out": args.out.display().to_string(),
        }),
        0,
    )
    .input(&args.blacklist);
    let specs = parse_relation_specs(&args.relations)?;
    if specs.len() != 1 {
        return Err(Error::Invalid(format!(
            "ptp runs on exactly one relation, {} given",
            specs.len()
        )));
    }
    let manifest = manifest.input(&specs[0].1);
    let bundle = RelationBundle::new(load_relation(&specs[0].0, &specs[0].1)?);
    let blacklist = load_blacklist(&args.blacklist)?;
    let seeds: BTreeSet<usize> = blacklist
        .ids()
        .iter()
        .filter_map(|id| bundle.relation.left_index_of(id))
        .collect();
    let scores = ptp(&bundle.graph.adjacency(), &seeds, args.iters)?;
    let mut rows: Vec<(String, f64)> = scores
        .iter()
        .enumerate()
        .map(|(v, &s)| (bundle.relation.left_id(v).to_string(), s))
        .collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    let mut text = String::new();
    for (id, score) in rows {
        text.push_str(&format!("{id}\t{score}\n"));
    }
    write_atomic(&args.out, &text)?;
    manifest.write(&args.out, false)
}

pub fn cmd_infer(args: &GraphInferArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new(
        "graph infer",
        json!({
            "relations": args.relations,
            "blacklist": args.blacklist.display().to_string(),
            "K": args.cap,
            "k_steps": args.k_steps,
            "folds": args.folds,
            "hidden": args.hidden,
            "agg": args.agg,
            "epochs": args.epochs,
            "batch": args.batch,
            "lr": args.lr,
            "w0": args.w0,
            "w1": args.w1,
            "out_dir": args.out_dir.display().to_string(),
        }),
        args.seed,
    )
    .input(&args.blacklist);
    for (_, path) in parse_relation_specs(&args.relations)? {
        manifest = manifest.input(&path);
    }
    if args.k_steps != 1 {
        return Err(Error::Invalid(
            "edge-feature inference is one-step; --k-steps must be 1".into(),
        ));
    }
    let bundles = load_bundles(&args.relations)?;
    let blacklist = load_blacklist(&args.blacklist)?;
    let universe = vertex_universe(&bundles);
    let cap = (args.cap > 0).then_some(args.cap);

    let index_of: BTreeMap<&str, usize> = universe
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let clusters: Vec<Vec<usize>> = blacklist
        .clusters
        .values()
        .map(|members| {
            members
                .iter()
                .filter_map(|id| index_of.get(id.as_str()).copied())
                .collect::<Vec<usize>>()
        })
        .filter(|c| !c.is_empty())
        .collect();
    let observed_blacklist: BTreeSet<String> = blacklist
        .ids()
        .into_iter()
        .filter(|id| index_of.contains_key(id.as_str()))
        .collect();
    if observed_blacklist.is_empty() {
        return Err(Error::Invalid(
            "no blacklisted vertex appears in the relations".into(),
        ));
    }

    let batch_samples = |seeds: &BTreeSet<String>, stream: &str| -> Result<DataNode> {
        let singles: Vec<DataNode> = universe
            .iter()
            .map(|id| build_vertex_sample(id, &bundles, seeds, cap, substream(args.seed, stream)))
            .collect::<Result<_>>()?;
        let refs: Vec<&DataNode> = singles.iter().collect();
        DataNode::merge(&refs)
    };

    // Train once on the full blacklist as supervision.
    let train_data = batch_samples(&observed_blacklist, "samples")?;
    let labels: Vec<usize> = universe
        .iter()
        .map(|id| usize::from(observed_blacklist.contains(id)))
        .collect();
    let names: Vec<String> = bundles.iter().map(|b| b.relation.name.clone()).collect();
    let prescription = Prescription {
        hidden: args.hidden,
        output_dim: 2,
        agg: parse_agg(&args.agg)?,
        seed: substream(args.seed, "reflect"),
    };
    let extractor = vertex_sample_extractor(&names);
    let mut model = reflect_model(&extractor, &prescription);
    let cfg = TrainConfig {
        epochs: args.epochs,
        batch: args.batch,
        alpha: args.lr,
        loss: LossKind::WeightedBinary {
            w0: args.w0,
            w1: args.w1,
        },
        seed: substream(args.seed, "train"),
        balancing: ClassBalancing::BalancedMinibatch,
        ..TrainConfig::default()
    };
    let history = train(&mut model, &train_data, &labels, &cfg)?;
    for (epoch, loss) in history.iter().enumerate() {
        println!("{}\t{loss}", epoch + 1);
    }

    // Fold protocol: every blacklisted vertex is scored by the one run that
    // held it out; everything else keeps its maximum over runs.
    let mut fold_rng = ChaCha8Rng::seed_from_u64(substream(args.seed, "folds"));
    let finals = kfold_blacklist_eval(
        universe.len(),
        &clusters,
        args.folds,
        &mut fold_rng,
        |seed_indices| {
            let seed_ids: BTreeSet<String> = seed_indices
                .iter()
                .map(|&i| universe[i].clone())
                .collect();
            let data = batch_samples(&seed_ids, "samples")?;
            predict_positive(&model, &data)
        },
    )?;

    std::fs::create_dir_all(&args.out_dir)?;
    let mut scores_text = String::new();
    for (id, score) in universe.iter().zip(&finals) {
        scores_text.push_str(&format!("{id}\t{score}\n"));
    }
    write_atomic(&args.out_dir.join("scores.tsv"), &scores_text)?;

    let truth: Vec<bool> = universe
        .iter()
        .map(|id| observed_blacklist.contains(id))
        .collect();
    let report = json!({
        "vertices": universe.len(),
        "blacklisted": observed_blacklist.len(),
        "auroc": auroc(&finals, &truth)?,
        "auprc": auprc(&finals, &truth)?,
    });
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    write_atomic(&args.out_dir.join("metrics.json"), &text)?;

    let bundle_out = ModelBundle {
        extractor,
        model,
        label_path: None,
        label_vocab: None,
    };
    write_atomic(&args.out_dir.join("model.json"), &bundle_out.to_json())?;
    manifest.write(&args.out_dir, true)
}
