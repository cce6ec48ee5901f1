use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde_json::{json, Value};

use dualxda::attribution::{attribute_batch, load_attributions, sparsity_curve, AttributionMatrix};
use dualxda::baselines::{
    grad_cos_matrix, grad_dot_matrix, influence_last_layer, representer_matrix, resolve_targets, tracin,
    trak_with_projection, retrain_head, HeadModel, HessianMode, Projection, RetrainOptions,
};
use dualxda::eval::{
    coreset_curve, faithfulness, identical_class, identical_subclass, lds_with_retraining, mislabel_auc, pruning_curve,
    self_influence, shortcut_auprc, Curve, LdsOptions, MetricReport, RetrainConfig,
};
use dualxda::netlrp::{
    export_heatmap, load_network, lrp_backward, save_network, surrogate_heatmap, write_tensor, xda_pair, Composite, Layer,
    Network, Rule,
};
use dualxda::store::{load_gradients, save_cache};
use dualxda::svm::{load_model, save_model};
use dualxda::synth::{class_images, conv_net, BlobGenerator, BlobSpec};
use dualxda::{load_cache, solve, FeatureCache, SolverOptions, SurrogateModel};

use crate::args::*;
use crate::inputs::{head_weights, with_path, mask_from_indices, parse_target, read_indices, read_input, write_matrix};
use crate::{CliError, CliResult};

pub fn dispatch(command: &Command) -> CliResult<Value> {
    match command {
        Command::Solve(a) => solve_cmd(a),
        Command::Attribute(a) => attribute_cmd(a),
        Command::Baselines(b) => baseline_cmd(b),
        Command::Xda(a) => xda_cmd(a),
        Command::Eval(e) => eval_cmd(e),
        Command::Sparsity(a) => sparsity_cmd(a),
        Command::Faithfulness(a) => faithfulness_cmd(a),
        Command::ExportHeatmap(a) => heatmap_cmd(a),
        Command::Synth(a) => synth_cmd(a),
    }
}

fn solve_cmd(a: &SolveArgs) -> CliResult<Value> {
    let cache = with_path(&a.features, load_cache(&a.features))?;
    let opts = SolverOptions {
        c: a.c,
        tol: a.tol,
        max_epochs: a.max_epochs,
        seed: a.seed,
        canonicalize: !a.no_canonicalize,
        check_feasibility: false,
    };
    let sol = solve(&cache, &opts)?;
    let model = SurrogateModel::from_solution(&sol, &cache)?;
    save_model(&model, &a.out)?;
    Ok(json!({
        "n_sv": sol.n_support(),
        "n_samples": sol.n_samples(),
        "support_per_class": sol.support_per_class(),
        "duality_gap": sol.duality_gap(),
        "kkt_violation": sol.kkt_violation,
        "epochs": sol.epochs,
        "status": sol.status,
        "degenerate_rows": sol.degenerate_rows,
        "model": a.out,
    }))
}

fn load_model_for(path: &Path, train: &FeatureCache) -> CliResult<SurrogateModel> {
    let model = with_path(path, load_model(path))?;
    if model.feature_dim() != train.feature_dim() || model.n_classes() != train.n_classes() {
        return Err(CliError {
            kind: "dimension",
            message: format!(
                "model has d={} K={}, training cache d={} K={}",
                model.feature_dim(),
                model.n_classes(),
                train.feature_dim(),
                train.n_classes()
            ),
        });
    }
    Ok(model)
}

fn matrix_summary(attr: &AttributionMatrix, out: &MatrixOutput) -> Value {
    json!({
        "method": attr.method,
        "n_test": attr.n_test(),
        "n_train": attr.n_train(),
        "nonzero_columns": (0..attr.n_train()).filter(|&i| attr.scores.column(i).iter().any(|&v| v != 0.0)).count(),
        "out": out.out,
        "csv": out.csv,
    })
}

fn attribute_cmd(a: &AttributeArgs) -> CliResult<Value> {
    let train = with_path(&a.train, load_cache(&a.train))?;
    let test = with_path(&a.test, load_cache(&a.test))?;
    let model = load_model_for(&a.model, &train)?;
    let targets = parse_target(&a.target, &test)?;
    let attr = attribute_batch(&model, train.n_samples(), &test, &targets)?;
    write_matrix(&attr, &a.output)?;
    Ok(matrix_summary(&attr, &a.output))
}

fn baseline_cmd(b: &BaselineCommand) -> CliResult<Value> {
    let common = match b {
        BaselineCommand::GradDot(c) | BaselineCommand::GradCos(c) | BaselineCommand::Representer(c) => c,
        BaselineCommand::Influence { common, .. } | BaselineCommand::Trak { common, .. } | BaselineCommand::Tracin { common, .. } => {
            common
        }
    };
    let train = with_path(&common.train, load_cache(&common.train))?;
    let test = with_path(&common.test, load_cache(&common.test))?;
    let w = head_weights(&common.head, &train)?;
    let targets = parse_target(&common.target, &test)?;
    let classes = resolve_targets(&targets, &w, &test)?;
    let ids: Vec<u64> = (0..test.n_samples() as u64).collect();
    let mut extra = serde_json::Map::new();
    let attr = match b {
        BaselineCommand::GradDot(_) => grad_dot_matrix(&w, &train, &test, &targets)?,
        BaselineCommand::GradCos(_) => grad_cos_matrix(&w, &train, &test, &targets)?,
        BaselineCommand::Representer(_) => representer_matrix(&HeadModel::from_weights(w)?, &train, &test, &targets)?,
        BaselineCommand::Influence { damping, identity_hessian, .. } => {
            let mode = if *identity_hessian { HessianMode::Identity } else { HessianMode::Exact };
            let scores = influence_last_layer(&train, &test, &classes, &w, *damping, mode)?;
            AttributionMatrix::new(ids, classes, scores, "influence")?
        }
        BaselineCommand::Trak { proj_dim, seed, .. } => {
            let projection = if *proj_dim == 0 { Projection::Identity } else { Projection::Gaussian { dim: *proj_dim, seed: *seed } };
            let out = trak_with_projection(&train, &test, &classes, &w, projection)?;
            extra.insert("clamped_probabilities".into(), json!(out.clamped));
            AttributionMatrix::new(ids, classes, out.scores, "trak")?
        }
        BaselineCommand::Tracin { train_grads, test_grads, .. } => {
            let load = |paths: &[PathBuf]| paths.iter().map(|p| with_path(p, load_gradients(p))).collect::<CliResult<Vec<_>>>();
            let scores = tracin(&load(train_grads)?, &load(test_grads)?)?;
            if scores.dim() != (test.n_samples(), train.n_samples()) {
                return Err(CliError {
                    kind: "dimension",
                    message: format!("gradient caches give {:?} scores, feature caches {:?}", scores.dim(), (test.n_samples(), train.n_samples())),
                });
            }
            AttributionMatrix::new(ids, classes, scores, "tracin")?
        }
    };
    write_matrix(&attr, &common.output)?;
    let mut summary = matrix_summary(&attr, &common.output);
    summary.as_object_mut().expect("object").extend(extra);
    Ok(summary)
}

fn composite(rule: &RuleArgs) -> Composite {
    match rule.composite {
        CompositeArg::EpsilonPlusFlat => Composite::EpsilonPlusFlat { epsilon: rule.epsilon },
        CompositeArg::Epsilon => Composite::Uniform { rule: Rule::Epsilon { epsilon: rule.epsilon } },
        CompositeArg::ZPlus => Composite::Uniform { rule: Rule::ZPlus },
        CompositeArg::Flat => Composite::Uniform { rule: Rule::Flat },
    }
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn xda_cmd(a: &XdaArgs) -> CliResult<Value> {
    let net = with_path(&a.network, load_network(&a.network))?;
    let model = with_path(&a.model, load_model(&a.model))?;
    let x_test = read_input(&a.test_input, net.input_shape())?;
    let x_train = read_input(&a.train_input, net.input_shape())?;
    let class = match a.class {
        Some(c) => c,
        None => model.predict(net.forward(&x_test)?.features().view()),
    };
    let pair = xda_pair(&net, &model, &x_test, &x_train, a.train_index, class, composite(&a.rule))?;
    let test_files = export_heatmap(&pair.test, with_suffix(&a.out, ".test"))?;
    let train_files = export_heatmap(&pair.train, with_suffix(&a.out, ".train"))?;
    Ok(json!({
        "class": class,
        "train_index": a.train_index,
        "support_vector": model.position(a.train_index).is_some(),
        "attribution": pair.r_l,
        "test_relevance": pair.test.total_relevance,
        "train_relevance": pair.train.total_relevance,
        "flat_fallbacks": pair.test.flat_fallbacks + pair.train.flat_fallbacks,
        "files": test_files.into_iter().chain(train_files).collect::<Vec<_>>(),
    }))
}

fn heatmap_cmd(a: &ExportHeatmapArgs) -> CliResult<Value> {
    let net = with_path(&a.network, load_network(&a.network))?;
    let x = read_input(&a.input, net.input_shape())?;
    let comp = composite(&a.rule);
    let (heatmap, class, explained) = match &a.model {
        Some(path) => {
            let model = with_path(path, load_model(path))?;
            let f = net.forward(&x)?.features();
            let class = a.class.unwrap_or_else(|| model.predict(f.view()));
            let logit = model.weights().row(class).dot(&f);
            (surrogate_heatmap(&net, &model, &x, class, comp)?, class, logit)
        }
        None => {
            let trace = net.forward(&x)?;
            let out: Vec<f64> = trace.output().iter().copied().collect();
            let class = match a.class {
                Some(c) if c >= out.len() => return Err(dualxda::Error::OutOfRange { index: c, len: out.len() }.into()),
                Some(c) => c,
                None => (0..out.len()).fold(0, |best, c| if out[c] > out[best] { c } else { best }),
            };
            let mut init = ndarray::Array1::zeros(out.len());
            init[class] = out[class];
            (lrp_backward(&net, &trace, &init, comp)?, class, out[class])
        }
    };
    let files = export_heatmap(&heatmap, &a.out)?;
    Ok(json!({
        "class": class,
        "explained_output": explained,
        "total_relevance": heatmap.total_relevance,
        "flat_fallbacks": heatmap.flat_fallbacks,
        "dropped_units": heatmap.dropped_units,
        "files": files,
    }))
}

fn retrain_config(r: &RetrainArgs) -> RetrainConfig {
    match r.retrain {
        RetrainArg::Head => RetrainConfig::Head(RetrainOptions { weight_decay: r.weight_decay, ..RetrainOptions::default() }),
        RetrainArg::Surrogate => RetrainConfig::Surrogate(SolverOptions { check_feasibility: false, ..SolverOptions::with_c(r.c) }),
    }
}

fn check_matrix(attr: &AttributionMatrix, train: &FeatureCache) -> CliResult<()> {
    if attr.n_train() != train.n_samples() {
        return Err(CliError {
            kind: "dimension",
            message: format!("attribution matrix has {} columns, training cache {} samples", attr.n_train(), train.n_samples()),
        });
    }
    Ok(())
}

fn eval_cmd(e: &EvalCommand) -> CliResult<Value> {
    let report = match e {
        EvalCommand::IdenticalClass { attr, train } => {
            let attr = with_path(attr, load_attributions(attr))?;
            let train = with_path(train, load_cache(train))?;
            check_matrix(&attr, &train)?;
            let score = identical_class(&attr, train.labels(), &attr.target_classes)?;
            MetricReport::new("identical-class", score, e)?
        }
        EvalCommand::IdenticalSubclass { attr, train_groups, test_groups } => {
            let attr = with_path(attr, load_attributions(attr))?;
            let score = identical_subclass(&attr, &read_indices(train_groups)?, &read_indices(test_groups)?)?;
            MetricReport::new("identical-subclass", score, e)?
        }
        EvalCommand::Mislabel { model, train, poisoned } => {
            let train = with_path(train, load_cache(train))?;
            let model = load_model_for(model, &train)?;
            let mask = mask_from_indices(&read_indices(poisoned)?, train.n_samples())?;
            let si = self_influence(&model, &train)?;
            MetricReport::new("mislabel", mislabel_auc(si.view(), &mask)?, e)?
        }
        EvalCommand::Shortcut { attr, perturbed } => {
            let attr = with_path(attr, load_attributions(attr))?;
            let mask = mask_from_indices(&read_indices(perturbed)?, attr.n_train())?;
            MetricReport::new("shortcut", shortcut_auprc(&attr, &mask)?, e)?
        }
        EvalCommand::Lds { attr, train, test, subsets, fraction, seed, retrain } => {
            let attr = with_path(attr, load_attributions(attr))?;
            let train = with_path(train, load_cache(train))?;
            let test = with_path(test, load_cache(test))?;
            check_matrix(&attr, &train)?;
            let opts = LdsOptions { subsets: *subsets, fraction: *fraction, seed: *seed, retrain: retrain_config(retrain) };
            let r = lds_with_retraining(&attr, &train, &test, &opts)?;
            MetricReport::new("lds", r.score, e)?.with_extra("skipped_rows", r.skipped as f64)
        }
        EvalCommand::Coreset(c) | EvalCommand::Pruning(c) => {
            let name = if matches!(e, EvalCommand::Coreset(_)) { "coreset" } else { "pruning" };
            let attr = with_path(&c.attr, load_attributions(&c.attr))?;
            let train = with_path(&c.train, load_cache(&c.train))?;
            let test = with_path(&c.test, load_cache(&c.test))?;
            check_matrix(&attr, &train)?;
            let config = retrain_config(&c.retrain);
            let curve = if name == "coreset" {
                coreset_curve(&attr, &train, &test, &c.fractions, &config)?
            } else {
                pruning_curve(&attr, &train, &test, &c.fractions, &config)?
            };
            let report = MetricReport::new(name, curve.weighted_average, e)?.with_curve(Curve {
                grid_name: "fraction".into(),
                value_name: "test_loss".into(),
                grid: curve.fractions,
                values: curve.losses,
            });
            if let Some(path) = &c.curve_csv {
                report.write_curve_csv(path)?;
            }
            report
        }
    };
    Ok(serde_json::from_str(&report.to_json()).expect("report JSON"))
}

fn sparsity_cmd(a: &SparsityArgs) -> CliResult<Value> {
    let attr = with_path(&a.attr, load_attributions(&a.attr))?;
    let curve = sparsity_curve(&attr, &a.grid)?;
    let report = MetricReport::new("sparsity", *curve.values.first().unwrap_or(&1.0), a)?
        .with_extra("zero_rows", curve.zero_rows as f64)
        .with_curve(Curve { grid_name: "fraction".into(), value_name: "abs_share".into(), grid: curve.grid, values: curve.values });
    if let Some(path) = &a.curve_csv {
        report.write_curve_csv(path)?;
    }
    Ok(serde_json::from_str(&report.to_json()).expect("report JSON"))
}

fn faithfulness_cmd(a: &FaithfulnessArgs) -> CliResult<Value> {
    let train = with_path(&a.train, load_cache(&a.train))?;
    let test = with_path(&a.test, load_cache(&a.test))?;
    let model = load_model_for(&a.model, &train)?;
    let w = head_weights(&a.head, &train)?;
    let ft = test.features_f64();
    let original = match test.logits() {
        Some(l) => l.mapv(f64::from),
        None => ft.dot(&w.t()),
    };
    let surrogate: Array2<f64> = ft.dot(&model.weights().t());
    let f = faithfulness(&w, model.weights(), &original, &surrogate)?;
    Ok(json!({
        "weight_cosine": f.weight_cosine,
        "mean_logit_cosine": f.mean_logit_cosine,
        "mcc": f.mcc,
        "original_logits": if test.logits().is_some() { "cache" } else { "head" },
    }))
}

fn synth_cmd(a: &SynthArgs) -> CliResult<Value> {
    if a.classes < 2 || a.n_train == 0 || a.n_test == 0 {
        return Err(CliError::validation("synth needs at least 2 classes and nonempty splits"));
    }
    let dir = &a.out_dir;
    std::fs::create_dir_all(dir).map_err(dualxda::Error::from)?;
    let io = |e: std::io::Error| CliError::from(dualxda::Error::from(e));
    if a.images {
        let base = conv_net(1, 8, 16, a.classes, a.seed);
        let inputs = dir.join("inputs");
        std::fs::create_dir_all(&inputs).map_err(io)?;
        let mut splits = Vec::new();
        for (split, n, seed) in [("train", a.n_train, a.seed + 1), ("test", a.n_test, a.seed + 2)] {
            let (images, labels) = class_images(n, 1, 8, a.classes, seed);
            let mut feats = Array2::<f32>::zeros((n, base.feature_dim()));
            for (i, x) in images.iter().enumerate() {
                feats.row_mut(i).assign(&base.forward(x)?.features().mapv(|v| v as f32));
                write_tensor(&inputs.join(format!("{split}_{i}.f32")), x.iter())?;
            }
            splits.push((split, feats, labels));
        }
        // The random extractor is kept; the output layer is fitted on its features.
        let train = FeatureCache::new(splits[0].1.clone(), splits[0].2.clone(), a.classes, None)?;
        let head = retrain_head(&train, &RetrainOptions::default())?.weights;
        let mut layers = base.layers().to_vec();
        let last = layers.len() - 1;
        layers[last] = Layer::Dense { weight: head.clone(), bias: ndarray::Array1::zeros(a.classes) };
        let net = Network::new(base.input_shape().to_vec(), layers, base.feature_cut())?;
        let manifest = save_network(&net, dir.join("network"))?;
        write_tensor(&dir.join("head.f32"), head.iter())?;
        for (split, feats, labels) in splits {
            let logits = feats.mapv(f64::from).dot(&head.t()).mapv(|v| v as f32);
            save_cache(&FeatureCache::new(feats, labels, a.classes, Some(logits))?, dir.join(format!("{split}.dxfc")))?;
        }
        return Ok(json!({ "out_dir": dir, "network": manifest, "head": dir.join("head.f32"), "inputs": inputs }));
    }
    let spec = BlobSpec { n: a.n_train, dim: a.dim, classes: a.classes, separation: a.separation, noise: 1.0, subclasses: 2 };
    let gen = BlobGenerator::new(spec, a.seed);
    for (split, n, seed) in [("train", a.n_train, a.seed + 1), ("test", a.n_test, a.seed + 2)] {
        let (cache, groups) = gen.sample(n, seed);
        save_cache(&cache, dir.join(format!("{split}.dxfc")))?;
        let text: Vec<String> = groups.iter().map(|g| g.to_string()).collect();
        std::fs::write(dir.join(format!("{split}_groups.txt")), text.join("\n") + "\n").map_err(io)?;
    }
    Ok(json!({ "out_dir": dir, "train": dir.join("train.dxfc"), "test": dir.join("test.dxfc") }))
}
