use std::path::Path;

use hmill::encode::{
    build_extractor, extract_batch, extract_label, ExtractOptions, ExtractorPolicy, LabelVocab,
};
use hmill::metrics::{curve, metrics, CurveKind, CurveSpec, XScale};
use hmill::model::{load, ModelBundle, Prescription};
use hmill::schema::{from_json, infer_schema, to_json};
use hmill::train::{predict_proba, train, TrainConfig};
use hmill::{Error, Result};
use serde_json::{json, Value};

use crate::manifest::ManifestBuilder;
use crate::util::{parse_agg, read_jsonl, write_atomic};
use crate::{EvalArgs, PredictArgs, SchemaArgs, TrainArgs};

pub fn cmd_schema(args: &SchemaArgs) -> Result<()> {
    let manifest = ManifestBuilder::new(
        "schema",
        json!({
            "input": args.input.display().to_string(),
            "out": args.out.display().to_string(),
            "max_unique": args.max_unique,
        }),
        0,
    )
    .input(&args.input);
    let docs = read_jsonl(&args.input)?;
    let schema = infer_schema(&docs, args.max_unique)?;
    write_atomic(&args.out, &to_json(&schema))?;
    manifest.write(&args.out, false)
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let manifest = ManifestBuilder::new(
        "train",
        json!({
            "data": args.data.display().to_string(),
            "schema": args.schema.display().to_string(),
            "label": args.label,
            "hidden": args.hidden,
            "agg": args.agg,
            "epochs": args.epochs,
            "batch": args.batch,
            "lr": args.lr,
            "ignore_extra_keys": args.ignore_extra_keys,
            "freeze_psi": args.freeze_psi,
            "out": args.out.display().to_string(),
        }),
        args.seed,
    )
    .input(&args.data)
    .input(&args.schema);

    let schema = from_json(&std::fs::read_to_string(&args.schema)?)?;
    let docs = read_jsonl(&args.data)?;
    let labels_text: Vec<String> = docs
        .iter()
        .map(|d| extract_label(d, &args.label))
        .collect::<Result<_>>()?;
    let vocab = LabelVocab::build(&labels_text);
    if vocab.len() < 2 {
        return Err(Error::Invalid(
            "training needs at least two distinct label values".into(),
        ));
    }
    let labels: Vec<usize> = labels_text
        .iter()
        .map(|l| vocab.index_of(l))
        .collect::<Result<_>>()?;

    let policy = ExtractorPolicy {
        exclude_paths: vec![args.label.clone()],
        ..ExtractorPolicy::default()
    };
    let extractor = build_extractor(&schema, &policy)?;
    let opts = ExtractOptions {
        ignore_extra_keys: args.ignore_extra_keys,
    };
    let data = extract_batch(&extractor, &docs, opts)?;

    let prescription = Prescription {
        hidden: args.hidden,
        output_dim: vocab.len(),
        agg: parse_agg(&args.agg)?,
        seed: args.seed,
    };
    let mut model = hmill::model::reflect_model(&extractor, &prescription);
    let cfg = TrainConfig {
        epochs: args.epochs,
        batch: args.batch,
        alpha: args.lr,
        seed: args.seed,
        freeze_psi: args.freeze_psi,
        ..TrainConfig::default()
    };
    let history = train(&mut model, &data, &labels, &cfg)?;
    for (epoch, loss) in history.iter().enumerate() {
        println!("{}\t{loss}", epoch + 1);
    }

    let bundle = ModelBundle {
        extractor,
        model,
        label_path: Some(args.label.clone()),
        label_vocab: Some(vocab),
    };
    write_atomic(&args.out, &bundle.to_json())?;
    manifest.write(&args.out, false)
}

fn predictions_tsv(probs: &hmill::linalg::Matrix) -> String {
    let mut out = String::new();
    for j in 0..probs.cols() {
        out.push_str(&j.to_string());
        for r in 0..probs.rows() {
            out.push('\t');
            out.push_str(&probs.get(r, j).to_string());
        }
        out.push('\n');
    }
    out
}

fn scored_documents(
    bundle: &ModelBundle,
    data_path: &Path,
    ignore_extra_keys: bool,
) -> Result<(Vec<Value>, hmill::linalg::Matrix)> {
    let docs = read_jsonl(data_path)?;
    let opts = ExtractOptions { ignore_extra_keys };
    let data = extract_batch(&bundle.extractor, &docs, opts)?;
    let probs = predict_proba(&bundle.model, &data)?;
    Ok((docs, probs))
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let manifest = ManifestBuilder::new(
        "predict",
        json!({
            "model": args.model.display().to_string(),
            "data": args.data.display().to_string(),
            "ignore_extra_keys": args.ignore_extra_keys,
            "out_dir": args.out_dir.display().to_string(),
        }),
        0,
    )
    .input(&args.model)
    .input(&args.data);
    let bundle = load(&args.model)?;
    let (_, probs) = scored_documents(&bundle, &args.data, args.ignore_extra_keys)?;
    std::fs::create_dir_all(&args.out_dir)?;
    write_atomic(&args.out_dir.join("predictions.tsv"), &predictions_tsv(&probs))?;
    manifest.write(&args.out_dir, true)
}

fn curves_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("x,y\n");
    for (x, y) in points {
        out.push_str(&format!("{x},{y}\n"));
    }
    out
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let manifest = ManifestBuilder::new(
        "eval",
        json!({
            "model": args.model.display().to_string(),
            "data": args.data.display().to_string(),
            "labels": args.labels,
            "curves": args.curves,
            "points": args.points,
            "ignore_extra_keys": args.ignore_extra_keys,
            "out_dir": args.out_dir.display().to_string(),
        }),
        0,
    )
    .input(&args.model)
    .input(&args.data);
    let bundle = load(&args.model)?;
    let label_path = args
        .labels
        .clone()
        .or_else(|| bundle.label_path.clone())
        .ok_or_else(|| {
            Error::Invalid("no label path: pass --labels or use a supervised model".into())
        })?;
    let vocab = bundle
        .label_vocab
        .clone()
        .ok_or_else(|| Error::Invalid("model carries no label vocabulary".into()))?;

    let (docs, probs) = scored_documents(&bundle, &args.data, args.ignore_extra_keys)?;
    let labels: Vec<usize> = docs
        .iter()
        .map(|d| extract_label(d, &label_path).and_then(|l| vocab.index_of(&l)))
        .collect::<Result<_>>()?;

    std::fs::create_dir_all(&args.out_dir)?;
    write_atomic(&args.out_dir.join("predictions.tsv"), &predictions_tsv(&probs))?;

    let report = metrics(&probs, &labels)?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    write_atomic(&args.out_dir.join("metrics.json"), &text)?;

    let wanted: Vec<&str> = args
        .curves
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if !wanted.is_empty() {
        if probs.rows() != 2 {
            return Err(Error::Invalid(format!(
                "curves need a two-class model, found {} classes",
                probs.rows()
            )));
        }
        let scores: Vec<f64> = (0..probs.cols()).map(|j| probs.get(1, j)).collect();
        let binary: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        for name in wanted {
            let (kind, x_scale) = match name {
                "pr" => (CurveKind::Pr, XScale::Linear),
                "roc" => (CurveKind::Roc, XScale::Linear),
                "logroc" => (CurveKind::Roc, XScale::Logarithmic),
                other => {
                    return Err(Error::Invalid(format!(
                        "unknown curve {other:?} (expected pr, roc or logroc)"
                    )))
                }
            };
            let spec = CurveSpec {
                points: args.points,
                x_scale,
            };
            let pts = curve(&scores, &binary, &spec, kind)?;
            write_atomic(&args.out_dir.join(format!("{name}.csv")), &curves_csv(&pts))?;
        }
    }
    manifest.write(&args.out_dir, true)
}
