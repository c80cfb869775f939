use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use coregen::eval::{
    self, augmentation_experiment, fmt_sig, hardness_csv, hardness_ratio, hardness_vectors, mmd, parse_portfolio,
    preset_hardness_ratio, rank_histogram, AugmentConfig, Augmenter, HardnessBand, IdentityAugmenter,
};
use coregen::gnn::{evaluate, GnnConfig, GnnModel};
use coregen::hardgen::{
    generate, harvest_seed, read_pairs, sample_unsat_ksat, task_seed, write_pair, GenerateConfig, GeneratorAugmenter,
    Iterations, KsatParams, Predictor,
};
use coregen::oracle::{extract_mus, verify_mus, CoreLabelFile, OracleError};
use coregen::sat::{self, SolverConfig, Status};
use log::{error, info};
use rayon::prelude::*;
use serde_json::json;

use crate::io::{read_cnf, read_dir_cnfs, write_cnf, write_json, write_text};
use crate::{Cli, Command, GeneratorArg, Global, RefineArgs};

/// Runs the selected command; returns the number of failed tasks.
pub fn run(cli: &Cli) -> Result<usize> {
    let g = &cli.global;
    let start = Instant::now();
    let (name, inputs, failures, extra) = match &cli.command {
        Command::Solve { input, preset } => ("solve", vec![input.clone()], solve(g, input, preset)?, json!({})),
        Command::ExtractCore { input, output } => ("extract-core", vec![input.clone()], extract_core(g, input, output)?, json!({})),
        Command::SampleKsat { count, mu_m, sigma_m, mu_c, sigma_c, k } => {
            let params = KsatParams { mu_m: *mu_m, sigma_m: *sigma_m, mu_c: *mu_c, sigma_c: *sigma_c, k: *k, ..KsatParams::default() };
            ("sample-ksat", vec![], sample(g, *count, params)?, json!({ "params": params }))
        }
        Command::Harvest { seeds_dir, iters, refine } => {
            ("harvest", vec![seeds_dir.clone()], harvest(g, seeds_dir, *iters, refine)?, json!({ "iterations": iters }))
        }
        Command::Train { pairs_dir, model, layers, hidden, learning_rate, epochs, threshold } => {
            let config = GnnConfig {
                num_layers: *layers,
                hidden_dim: *hidden,
                threshold: *threshold,
                learning_rate: *learning_rate,
                epochs: *epochs,
                rng_seed: g.seed,
            };
            let extra = train(g, pairs_dir, model, config)?;
            ("train", vec![pairs_dir.clone()], 0, extra)
        }
        Command::Generate { seeds_dir, model, count, refine } => {
            let mut inputs = vec![seeds_dir.clone()];
            inputs.extend(model.clone());
            let (failures, extra) = generate_all(g, seeds_dir, model.as_deref(), *count, refine)?;
            ("generate", inputs, failures, extra)
        }
        Command::Evaluate { orig_dir, gen_dir, portfolio } => {
            let extra = evaluate_dirs(g, orig_dir, gen_dir, portfolio)?;
            ("evaluate", vec![orig_dir.clone(), gen_dir.clone()], 0, extra)
        }
        Command::AugmentBench { pool_dir, model, generator, sizes, trials, per_original, portfolio, refine } => {
            let mut inputs = vec![pool_dir.clone()];
            inputs.extend(model.clone());
            let config = AugmentConfig {
                trials: *trials,
                sizes: sizes.clone(),
                per_original: *per_original,
                rng_seed: g.seed,
                ..AugmentConfig::default()
            };
            let extra = augment_bench(g, pool_dir, model.as_deref(), *generator, portfolio, config, refine)?;
            ("augment-bench", inputs, 0, extra)
        }
    };
    let manifest = json!({
        "command": name,
        "version": env!("CARGO_PKG_VERSION"),
        "root_seed": g.seed,
        "jobs": rayon::current_num_threads(),
        "conflict_limit": g.conflict_limit,
        "inputs": inputs,
        "failures": failures,
        "wall_seconds": start.elapsed().as_secs_f64(),
        "details": extra,
    });
    write_json(&g.out_dir.join(format!("{name}.manifest.json")), &manifest)?;
    Ok(failures)
}

fn solver(g: &Global) -> SolverConfig {
    SolverConfig::default().with_conflict_limit(g.conflict_limit)
}

fn load_model(path: &Path) -> Result<GnnModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    GnnModel::from_json(&text).with_context(|| format!("loading model {}", path.display()))
}

fn generate_config<'a>(g: &Global, predictor: Predictor<'a>, refine: &RefineArgs) -> GenerateConfig<'a> {
    let mut config = GenerateConfig::new(predictor, g.seed);
    config.refine.protect_seed_core = refine.protect_core;
    config.refine.policy = refine.decore_policy.into();
    config.refine.max_iterations = refine.iterations;
    config.refine.solver = solver(g);
    config
}

fn solve(g: &Global, input: &Path, preset: &str) -> Result<usize> {
    let cnf = read_cnf(input)?;
    let config = eval::preset(preset)?.config.with_conflict_limit(g.conflict_limit);
    let res = sat::solve(&cnf, &[], &config);
    match &res.status {
        Status::Sat(m) => {
            println!("s SATISFIABLE");
            let lits: Vec<String> = m.values().iter().enumerate().map(|(i, &v)| format!("{}", if v { 1 } else { -1 } * (i as i64 + 1))).collect();
            println!("v {} 0", lits.join(" "));
        }
        Status::Unsat { .. } => println!("s UNSATISFIABLE"),
        Status::Unknown => println!("s UNKNOWN"),
    }
    println!("c conflicts {} decisions {} propagations {}", res.stats.conflicts, res.stats.decisions, res.stats.propagations);
    Ok(usize::from(matches!(res.status, Status::Unknown)))
}

fn extract_core(g: &Global, input: &Path, output: &Option<PathBuf>) -> Result<usize> {
    let cnf = read_cnf(input)?;
    let config = solver(g);
    let core = match extract_mus(&cnf, &config) {
        Ok(c) => c,
        Err(OracleError::Satisfiable) => bail!("input is satisfiable"),
        Err(e) => return Err(e.into()),
    };
    if !verify_mus(&cnf, &core, &config)? {
        bail!("extracted core failed verification");
    }
    let stem = input.file_stem().unwrap_or_default().to_string_lossy();
    let path = output.clone().unwrap_or_else(|| g.out_dir.join("cores").join(format!("{stem}.core.json")));
    write_text(&path, &(serde_json::to_string(&CoreLabelFile::new(input.to_string_lossy(), &core))? + "\n"))?;
    info!("core of {} clauses written to {}", core.len(), path.display());
    Ok(0)
}

fn sample(g: &Global, count: usize, params: KsatParams) -> Result<usize> {
    let dir = g.out_dir.join("seeds");
    let config = solver(g);
    let results: Vec<Result<()>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let p = KsatParams { rng_seed: task_seed(g.seed, i as u64), ..params };
            let (cnf, _) = sample_unsat_ksat(&p, 1000, &config)?;
            write_cnf(&dir.join(format!("seed_{i:04}.cnf")), &cnf)
        })
        .collect();
    Ok(count_failures("sample", results))
}

fn count_failures(what: &str, results: Vec<Result<()>>) -> usize {
    let mut failures = 0;
    for (i, r) in results.into_iter().enumerate() {
        if let Err(e) = r {
            error!("{what} task {i}: {e:#}");
            failures += 1;
        }
    }
    failures
}

fn harvest(g: &Global, seeds_dir: &Path, iters: usize, refine: &RefineArgs) -> Result<usize> {
    let seeds = read_dir_cnfs(seeds_dir)?;
    let dir = g.out_dir.join("pairs");
    let config = generate_config(g, Predictor::Oracle, refine);
    let results: Vec<Result<()>> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let pairs = harvest_seed(&s.cnf, iters, &config, i as u64)?;
            for (j, pair) in pairs.iter().enumerate() {
                write_pair(&dir, &format!("{}_{j:04}", s.stem), pair)?;
            }
            info!("{}: {} pairs", s.stem, pairs.len());
            Ok(())
        })
        .collect();
    Ok(count_failures("harvest", results))
}

fn train(g: &Global, pairs_dir: &Path, model_path: &Option<PathBuf>, config: GnnConfig) -> Result<serde_json::Value> {
    let pairs = read_pairs(pairs_dir).with_context(|| format!("reading pairs from {}", pairs_dir.display()))?;
    info!("training on {} pairs", pairs.len());
    let mut model = GnnModel::new(config)?;
    let trace = model.train(&pairs)?;
    let path = model_path.clone().unwrap_or_else(|| g.out_dir.join("model.json"));
    write_text(&path, &model.to_json())?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in trace.iter().enumerate() {
        csv.push_str(&format!("{i},{}\n", fmt_sig(*l)));
    }
    write_text(&g.out_dir.join("train_loss.csv"), &csv)?;
    let c = evaluate(&model, &pairs)?;
    info!("training recall {:.3} accuracy {:.3}", c.recall(), c.accuracy());
    Ok(json!({
        "model": path,
        "pairs": pairs.len(),
        "config": config,
        "train_recall": c.recall(),
        "train_accuracy": c.accuracy(),
    }))
}

fn generate_all(
    g: &Global,
    seeds_dir: &Path,
    model_path: Option<&Path>,
    count: usize,
    refine: &RefineArgs,
) -> Result<(usize, serde_json::Value)> {
    let seeds = read_dir_cnfs(seeds_dir)?;
    let model = model_path.map(load_model).transpose()?;
    let predictor = model.as_ref().map_or(Predictor::Oracle, Predictor::Gnn);
    let config = generate_config(g, predictor, refine);
    let dir = g.out_dir.join("generated");
    let tasks: Vec<(usize, usize)> = (0..seeds.len()).flat_map(|i| (0..count).map(move |j| (i, j))).collect();
    let results: Vec<Result<(String, f64)>> = tasks
        .par_iter()
        .map(|&(i, j)| {
            let s = &seeds[i];
            let t = Instant::now();
            let cfg = GenerateConfig { rng_seed: task_seed(task_seed(g.seed, i as u64), j as u64), ..config };
            let out = generate(&s.cnf, &cfg).with_context(|| format!("{} copy {j}", s.stem))?;
            let seconds = t.elapsed().as_secs_f64();
            let name = format!("{}_g{j}", s.stem);
            write_cnf(&dir.join(format!("{name}.cnf")), &out.cnf)?;
            write_json(&dir.join(format!("{name}.manifest.json")), &out.manifest(s.path.to_string_lossy()))?;
            info!("{name}: {} iterations in {seconds:.2}s", out.iterations_run);
            Ok((name, seconds))
        })
        .collect();
    let mut failures = 0;
    let mut times = Vec::new();
    for r in results {
        match r {
            Ok(t) => times.push(t),
            Err(e) => {
                error!("{e:#}");
                failures += 1;
            }
        }
    }
    let mean = if times.is_empty() { 0.0 } else { times.iter().map(|t| t.1).sum::<f64>() / times.len() as f64 };
    info!("generated {} instance(s), {mean:.2}s per instance", times.len());
    let per_instance: Vec<_> = times.iter().map(|(n, s)| json!({ "name": n, "seconds": s })).collect();
    let max_iterations = match refine.iterations {
        Iterations::Auto => json!("auto"),
        Iterations::Fixed(n) => json!(n),
    };
    Ok((
        failures,
        json!({
            "count_per_seed": count,
            "predictor": if model.is_some() { "gnn" } else { "oracle" },
            "protect_core": refine.protect_core,
            "decore_policy": format!("{:?}", refine.decore_policy).to_lowercase(),
            "iterations": max_iterations,
            "time_per_instance_seconds": mean,
            "instances": per_instance,
        }),
    ))
}

fn evaluate_dirs(g: &Global, orig_dir: &Path, gen_dir: &Path, portfolio: &str) -> Result<serde_json::Value> {
    let portfolio = parse_portfolio(portfolio)?;
    let orig = read_dir_cnfs(orig_dir)?;
    let generated = read_dir_cnfs(gen_dir)?;
    let cnfs = |v: &[crate::io::Instance]| v.iter().map(|i| i.cnf.clone()).collect::<Vec<_>>();
    let names = |v: &[crate::io::Instance]| v.iter().map(|i| i.stem.clone()).collect::<Vec<_>>();
    let ho = hardness_vectors(&cnfs(&orig), &portfolio, g.conflict_limit);
    let hg = hardness_vectors(&cnfs(&generated), &portfolio, g.conflict_limit);
    let report = g.out_dir.join("report");
    write_text(&report.join("hardness_original.csv"), &hardness_csv(&names(&orig), &ho, &portfolio))?;
    write_text(&report.join("hardness_generated.csv"), &hardness_csv(&names(&generated), &hg, &portfolio))?;
    let ratio = hardness_ratio(&hg, &ho)?;
    let per_preset: Vec<_> = portfolio
        .iter()
        .enumerate()
        .map(|(p, preset)| Ok(json!({ "preset": preset.name, "hardness_ratio": preset_hardness_ratio(&hg, &ho, p)? })))
        .collect::<Result<_, eval::EvalError>>()?;
    let complete = |v: &[eval::HardnessVector]| v.iter().filter(|h| h.is_complete()).map(|h| h.values()).collect::<Vec<_>>();
    let distance = mmd(&complete(&ho), &complete(&hg))?;
    let mut csv = String::from("metric,value\n");
    csv.push_str(&format!("hardness_ratio,{}\nmmd,{}\n", fmt_sig(ratio), fmt_sig(distance.value)));
    write_text(&report.join("summary.csv"), &csv)?;
    let summary = json!({
        "hardness_ratio": ratio,
        "hardness_band": HardnessBand::of(ratio),
        "preset_hardness_ratio": per_preset,
        "mmd": distance.value,
        "mmd_bandwidth": distance.bandwidth,
        "mmd_degenerate": distance.degenerate,
        "rank_histogram_original": rank_histogram(&ho)?,
        "rank_histogram_generated": rank_histogram(&hg)?,
        "mae_table": null,
        "wilcoxon_p": null,
    });
    write_json(&report.join("summary.json"), &summary)?;
    info!("hardness ratio {ratio:.1}%, mmd {}", fmt_sig(distance.value));
    Ok(json!({ "original": orig.len(), "generated": generated.len(), "hardness_ratio": ratio, "mmd": distance.value }))
}

fn augment_bench(
    g: &Global,
    pool_dir: &Path,
    model_path: Option<&Path>,
    generator: GeneratorArg,
    portfolio: &str,
    config: AugmentConfig,
    refine: &RefineArgs,
) -> Result<serde_json::Value> {
    let portfolio = parse_portfolio(portfolio)?;
    let pool: Vec<_> = read_dir_cnfs(pool_dir)?.into_iter().map(|i| i.cnf).collect();
    let model = match (generator, model_path) {
        (GeneratorArg::Gnn, None) => bail!("--generator gnn needs --model"),
        (GeneratorArg::Gnn, Some(p)) => Some(load_model(p)?),
        _ => None,
    };
    let predictor = model.as_ref().map_or(Predictor::Oracle, Predictor::Gnn);
    let generating = GeneratorAugmenter { config: generate_config(g, predictor, refine) };
    let augmenter: &dyn Augmenter = match generator {
        GeneratorArg::Identity => &IdentityAugmenter,
        _ => &generating,
    };
    let report = augmentation_experiment(&pool, augmenter, &portfolio, g.conflict_limit, &config)?;
    let dir = g.out_dir.join("augment");
    write_text(&dir.join("trials.csv"), &report.trials_csv())?;
    write_text(&dir.join("table.csv"), &report.table_csv())?;
    let p_values: Vec<_> = report.summary.iter().map(|s| s.wilcoxon.map(|w| w.p_value)).collect();
    write_json(
        &dir.join("summary.json"),
        &json!({
            "generator": report.augmenter,
            "hardness_ratio": null,
            "mmd": null,
            "mae_table": report.summary,
            "wilcoxon_p": p_values,
        }),
    )?;
    for s in &report.summary {
        info!(
            "size {}: median MAE {} original vs {} augmented, p = {}",
            s.size,
            fmt_sig(s.median_original),
            fmt_sig(s.median_augmented),
            s.wilcoxon.map(|w| fmt_sig(w.p_value)).unwrap_or_else(|| "n/a".into())
        );
    }
    Ok(json!({ "pool": pool.len(), "config": config }))
}
