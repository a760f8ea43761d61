//! The five subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fawmf::checkpoint;
use fawmf::evalrank;
use fawmf::fbgd::{self, StopRule};
use fawmf::ingest::{self, IdMaps, LogFormat, SparseBinaryMatrix};
use fawmf::model::{self, HyperParams, ModelParams};
use fawmf::oracle;
use fawmf::rng;
use fawmf::sgd;
use fawmf::synth;

use crate::config::{FileConfig, UsageError};
use crate::{init_threads, CliError, CommonOpts, DataOpts, HyperOpts};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Optimizer {
    Fbgd,
    BgdNaive,
    SgdUniform,
    SgdItempop,
}

impl FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fbgd" => Ok(Optimizer::Fbgd),
            "bgd-naive" => Ok(Optimizer::BgdNaive),
            "sgd-uniform" => Ok(Optimizer::SgdUniform),
            "sgd-itempop" => Ok(Optimizer::SgdItempop),
            other => Err(format!(
                "unknown optimizer '{other}' (expected fbgd, bgd-naive, sgd-uniform, sgd-itempop)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scorer {
    Model,
    Itempop,
}

impl FromStr for Scorer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "model" => Ok(Scorer::Model),
            "itempop" => Ok(Scorer::Itempop),
            other => Err(format!("unknown scorer '{other}' (expected model, itempop)")),
        }
    }
}

struct Resolved {
    file: FileConfig,
    output: PathBuf,
    seed: u64,
}

fn resolve_common(common: &CommonOpts) -> Result<Resolved, CliError> {
    let file = FileConfig::load(common.config.as_deref())?;
    let threads = file.resolve(common.threads, "threads", 0usize)?;
    init_threads(threads)?;
    let output = file.resolve(common.output.clone(), "output", PathBuf::from("fawmf-out"))?;
    let seed = file.resolve(common.seed, "seed", 42u64)?;
    Ok(Resolved { file, output, seed })
}

fn resolve_hyper(file: &FileConfig, opts: &HyperOpts, seed: u64) -> Result<(HyperParams, f64), CliError> {
    let defaults = HyperParams::default();
    let hyper = HyperParams {
        latent_dim: file.resolve(opts.k, "k", defaults.latent_dim)?,
        communities: file.resolve(opts.d, "d", defaults.communities)?,
        epsilon: file.resolve(opts.epsilon, "epsilon", defaults.epsilon)?,
        learning_rate: file.resolve(opts.lr, "lr", defaults.learning_rate)?,
        max_epochs: file.resolve(opts.max_epochs, "max-epochs", defaults.max_epochs)?,
        sigma_clamp: file.resolve(opts.sigma_clamp, "sigma-clamp", defaults.sigma_clamp)?,
        seed: rng::fork(seed, "init"),
    };
    hyper
        .validate()
        .map_err(|e| CliError::Usage(UsageError(e.to_string())))?;
    let rel_tol = file.resolve(opts.rel_tol, "rel-tol", fbgd::DEFAULT_REL_TOL)?;
    if rel_tol < 0.0 {
        return Err(CliError::Usage(UsageError("rel-tol must be >= 0".into())));
    }
    Ok((hyper, rel_tol))
}

struct Dataset {
    matrix: SparseBinaryMatrix,
    id_maps: IdMaps,
}

struct SplitChoice {
    train: SparseBinaryMatrix,
    test: Option<SparseBinaryMatrix>,
}

fn resolve_dataset(file: &FileConfig, opts: &DataOpts) -> Result<Dataset, CliError> {
    let data: PathBuf = file.resolve_required(opts.data.clone(), "data")?;
    let format: String = file.resolve(opts.format.clone(), "format", "tsv".to_string())?;
    let format = LogFormat::from_str(&format).map_err(UsageError)?;
    let min_items = file.resolve(opts.min_item_interactions, "min-item-interactions", 3usize)?;
    if min_items < 1 {
        return Err(CliError::Usage(UsageError(
            "min-item-interactions must be >= 1".into(),
        )));
    }

    let log = ingest::load_interactions(&data, format)?;
    let (matrix, mut id_maps) = ingest::binarize_and_index(&log)?;
    let (matrix, kept) = ingest::filter_min_item_interactions(&matrix, min_items)?;
    id_maps.retain_items(&kept);
    eprintln!(
        "loaded {}: {} users x {} items, {} positives after min-{min_items} item filter",
        data.display(),
        matrix.n_users(),
        matrix.n_items(),
        matrix.nnz()
    );
    Ok(Dataset { matrix, id_maps })
}

fn resolve_split(
    file: &FileConfig,
    opts: &DataOpts,
    matrix: &SparseBinaryMatrix,
    seed: u64,
) -> Result<SplitChoice, CliError> {
    let folds = file.resolve(opts.folds, "folds", 5usize)?;
    let fold = file.resolve(opts.fold, "fold", 0usize)?;
    if folds == 1 {
        return Ok(SplitChoice {
            train: matrix.clone(),
            test: None,
        });
    }
    if fold >= folds {
        return Err(CliError::Usage(UsageError(format!(
            "fold {fold} out of range for {folds} folds"
        ))));
    }
    let mut splits = ingest::kfold_split(matrix, folds, rng::fork(seed, "split"))?;
    let chosen = splits.swap_remove(fold);
    eprintln!(
        "fold {fold}/{folds}: train={} test={}",
        chosen.train.nnz(),
        chosen.test.nnz()
    );
    Ok(SplitChoice {
        train: chosen.train,
        test: Some(chosen.test),
    })
}

fn create_output(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| {
        CliError::Lib(fawmf::Error::Io {
            path: dir.to_path_buf(),
            source,
        })
    })
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let io_err = |source: std::io::Error| {
        CliError::Lib(fawmf::Error::Io {
            path: path.to_path_buf(),
            source,
        })
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    body(&mut out).map_err(io_err)?;
    out.flush().map_err(io_err)
}

pub fn train(
    common: CommonOpts,
    hyper_opts: HyperOpts,
    data_opts: DataOpts,
    optimizer: Option<String>,
    neg_ratio: Option<u32>,
    export_id_maps: bool,
) -> Result<(), CliError> {
    let ctx = resolve_common(&common)?;
    let (hyper, rel_tol) = resolve_hyper(&ctx.file, &hyper_opts, ctx.seed)?;
    let optimizer: Optimizer = {
        let raw: String = ctx
            .file
            .resolve(optimizer, "optimizer", "fbgd".to_string())?;
        raw.parse().map_err(UsageError)?
    };
    let neg_ratio = ctx.file.resolve(neg_ratio, "neg-ratio", 1u32)?;
    if neg_ratio < 1 {
        return Err(CliError::Usage(UsageError("neg-ratio must be >= 1".into())));
    }

    let dataset = resolve_dataset(&ctx.file, &data_opts)?;
    let split = resolve_split(&ctx.file, &data_opts, &dataset.matrix, ctx.seed)?;
    create_output(&ctx.output)?;

    let params = ModelParams::init(&hyper, split.train.n_users(), split.train.n_items());
    let stop = StopRule::new(hyper.max_epochs, rel_tol);
    eprintln!(
        "training {optimizer:?} (K={} D={} lr={} max {} epochs)",
        hyper.latent_dim, hyper.communities, hyper.learning_rate, hyper.max_epochs
    );

    let (trained, history) = match optimizer {
        Optimizer::Fbgd => fbgd::train(params, &hyper, &split.train, stop)?,
        Optimizer::BgdNaive => fbgd::train_naive(params, &hyper, &split.train, stop)?,
        Optimizer::SgdUniform | Optimizer::SgdItempop => {
            let cfg = sgd::SamplerConfig {
                kind: if optimizer == Optimizer::SgdUniform {
                    sgd::SamplerKind::Uniform
                } else {
                    sgd::SamplerKind::Itempop
                },
                ratio: neg_ratio,
                seed: rng::fork(ctx.seed, "sampler"),
            };
            sgd::train(params, &hyper, &split.train, &cfg, stop)?
        }
    };

    let ckpt_path = ctx.output.join("model.ckpt");
    checkpoint::save(&trained, &ckpt_path)?;
    write_file(&ctx.output.join("history.csv"), |out| history.write_csv(out))?;
    if export_id_maps
        || ctx
            .file
            .resolve(None::<bool>, "export-id-maps", false)?
    {
        write_file(&ctx.output.join("users.tsv"), |out| {
            dataset.id_maps.write_user_map(out)
        })?;
        write_file(&ctx.output.join("items.tsv"), |out| {
            dataset.id_maps.write_item_map(out)
        })?;
    }

    match history.records.last() {
        Some(last) => eprintln!(
            "done: {} epochs (converged={}), J {:.6e} -> {:.6e}",
            history.records.len(),
            history.converged,
            history.records[0].objective,
            last.objective
        ),
        None => eprintln!("done: 0 epochs, checkpoint equals initialization"),
    }
    println!("{}", ckpt_path.display());
    Ok(())
}

pub fn eval(
    common: CommonOpts,
    data_opts: DataOpts,
    ckpt: Option<PathBuf>,
    cutoff: Option<usize>,
    scorer: Option<String>,
    per_user: bool,
) -> Result<(), CliError> {
    let ctx = resolve_common(&common)?;
    let cutoff = ctx.file.resolve(cutoff, "cutoff", 5usize)?;
    if cutoff < 1 {
        return Err(CliError::Usage(UsageError("cutoff must be >= 1".into())));
    }
    let scorer: Scorer = {
        let raw: String = ctx.file.resolve(scorer, "scorer", "model".to_string())?;
        raw.parse().map_err(UsageError)?
    };

    let dataset = resolve_dataset(&ctx.file, &data_opts)?;
    let split = resolve_split(&ctx.file, &data_opts, &dataset.matrix, ctx.seed)?;
    let Some(test) = split.test else {
        return Err(CliError::Usage(UsageError(
            "eval needs folds >= 2 so a test split exists".into(),
        )));
    };
    create_output(&ctx.output)?;

    let report = match scorer {
        Scorer::Model => {
            let ckpt_path: PathBuf = ctx.file.resolve_required(ckpt, "checkpoint")?;
            let params = checkpoint::load(&ckpt_path)?;
            if params.n_users() != split.train.n_users()
                || params.n_items() != split.train.n_items()
            {
                return Err(CliError::Lib(fawmf::Error::Format(format!(
                    "checkpoint is {}x{} but the dataset fold is {}x{}",
                    params.n_users(),
                    params.n_items(),
                    split.train.n_users(),
                    split.train.n_items()
                ))));
            }
            evalrank::evaluate(&params, &split.train, &test, cutoff)?
        }
        Scorer::Itempop => {
            let popularity = ingest::item_popularity(&split.train);
            evalrank::evaluate_itempop(&popularity, &split.train, &test, cutoff)?
        }
    };

    write_file(&ctx.output.join("metrics.csv"), |out| report.write_csv(out))?;
    write_file(&ctx.output.join("metrics.kv"), |out| {
        out.write_all(report.to_kv().as_bytes())
    })?;
    if per_user || ctx.file.resolve(None::<bool>, "per-user", false)? {
        write_file(&ctx.output.join("per_user.csv"), |out| {
            report.write_per_user_csv(out)
        })?;
    }

    println!("Pre@{cutoff} {:.4}", report.precision);
    println!("Rec@{cutoff} {:.4}", report.recall);
    println!("NDCG@{cutoff} {:.4}", report.ndcg);
    println!("MRR {:.4}", report.mrr);
    println!("users {}", report.users_evaluated);
    Ok(())
}

pub fn gradcheck(
    common: CommonOpts,
    hyper_opts: HyperOpts,
    users: Option<usize>,
    items: Option<usize>,
    density: Option<f64>,
) -> Result<(), CliError> {
    let ctx = resolve_common(&common)?;
    let (hyper, _) = resolve_hyper(&ctx.file, &hyper_opts, ctx.seed)?;
    let users = ctx.file.resolve(users, "users", 20usize)?;
    let items = ctx.file.resolve(items, "items", 24usize)?;
    let density = ctx.file.resolve(density, "density", 0.2f64)?;
    create_output(&ctx.output)?;

    let x = synth::random_matrix(users, items, density, rng::fork(ctx.seed, "gradcheck-data"));
    let params = synth::random_params(
        users,
        items,
        hyper.latent_dim,
        hyper.communities,
        rng::fork(ctx.seed, "gradcheck-params"),
    );
    let report = oracle::grad_check(
        &params,
        &hyper,
        &x,
        oracle::Tolerances::default(),
        rng::fork(ctx.seed, "gradcheck-fd"),
    )?;

    write_file(&ctx.output.join("gradcheck.txt"), |out| {
        out.write_all(report.to_text().as_bytes())
    })?;
    write_file(&ctx.output.join("gradcheck.kv"), |out| {
        out.write_all(report.to_kv().as_bytes())
    })?;
    print!("{}", report.to_text());
    if report.pass {
        Ok(())
    } else {
        Err(CliError::Lib(fawmf::Error::Numeric(
            "gradient check failed; see gradcheck.txt".into(),
        )))
    }
}

pub fn bench(
    common: CommonOpts,
    hyper_opts: HyperOpts,
    sizes: Option<String>,
    density: Option<f64>,
    epochs: Option<usize>,
) -> Result<(), CliError> {
    let ctx = resolve_common(&common)?;
    let hyper_defaults = HyperOpts {
        k: hyper_opts.k.or(Some(8)),
        d: hyper_opts.d.or(Some(8)),
        ..hyper_opts
    };
    let (hyper, _) = resolve_hyper(&ctx.file, &hyper_defaults, ctx.seed)?;
    let sizes: String = ctx
        .file
        .resolve(sizes, "sizes", "200,500,1000".to_string())?;
    let density = ctx.file.resolve(density, "density", 0.01f64)?;
    let epochs = ctx.file.resolve(epochs, "epochs", 3usize)?.max(1);
    create_output(&ctx.output)?;

    let sizes: Vec<usize> = sizes
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Usage(UsageError(format!("bad --sizes: {e}"))))?;

    let mut rows = Vec::new();
    for &size in &sizes {
        let nnz = ((size * size) as f64 * density).round().max(1.0) as usize;
        let x = synth::random_matrix_exact(size, size, nnz, rng::fork_indexed(ctx.seed, "bench", size as u64));
        let hy = HyperParams {
            seed: rng::fork_indexed(ctx.seed, "bench-init", size as u64),
            ..hyper.clone()
        };
        let init = ModelParams::init(&hy, size, size);

        // cached path: warmup epoch, then best-of-n
        let mut params = init.clone();
        fbgd::epoch_step(&mut params, &hy, &x, hy.learning_rate)?;
        let mut params = init.clone();
        let mut fast_best = f64::INFINITY;
        let mut fast_first_j = f64::NAN;
        for e in 0..epochs {
            let t = std::time::Instant::now();
            let outcome = fbgd::epoch_step(&mut params, &hy, &x, hy.learning_rate)?;
            fast_best = fast_best.min(t.elapsed().as_secs_f64());
            if e == 0 {
                fast_first_j = outcome.objective;
            }
        }

        let within_guard = size * size <= oracle::NAIVE_PAIR_GUARD;
        let (naive_best, j_rel_diff) = if within_guard {
            let mut params = init.clone();
            fbgd::epoch_step_naive(&mut params, &hy, &x, hy.learning_rate)?;
            let mut params = init.clone();
            let mut best = f64::INFINITY;
            let mut first_j = f64::NAN;
            for e in 0..epochs {
                let t = std::time::Instant::now();
                let outcome = fbgd::epoch_step_naive(&mut params, &hy, &x, hy.learning_rate)?;
                best = best.min(t.elapsed().as_secs_f64());
                if e == 0 {
                    first_j = outcome.objective;
                }
            }
            let rel = (first_j - fast_first_j).abs() / fast_first_j.abs().max(1e-12);
            (Some(best), Some(rel))
        } else {
            (None, None)
        };

        let speedup = naive_best.map(|n| n / fast_best);
        eprintln!(
            "n=m={size} nnz={nnz}: fbgd {fast_best:.4}s{}",
            match (naive_best, speedup) {
                (Some(n), Some(s)) => format!(", bgd-naive {n:.4}s, speedup {s:.1}x"),
                _ => ", bgd-naive skipped (guard)".to_string(),
            }
        );
        rows.push((size, nnz, fast_best, naive_best, speedup, j_rel_diff));
    }

    write_file(&ctx.output.join("bench.csv"), |out| {
        writeln!(out, "n,m,nnz,k,d,fbgd_seconds,naive_seconds,speedup,j_rel_diff")?;
        for (size, nnz, fast, naive, speedup, j_rel) in &rows {
            writeln!(
                out,
                "{size},{size},{nnz},{},{},{:.6},{},{},{}",
                hyper.latent_dim,
                hyper.communities,
                fast,
                naive.map_or(String::new(), |v| format!("{v:.6}")),
                speedup.map_or(String::new(), |v| format!("{v:.3}")),
                j_rel.map_or(String::new(), |v| format!("{v:.3e}")),
            )?;
        }
        Ok(())
    })?;
    Ok(())
}

fn top_indices(values: &[f64], count: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..values.len()).collect();
    ids.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    ids.truncate(count);
    ids
}

pub fn communities(
    common: CommonOpts,
    hyper_opts: HyperOpts,
    data_opts: DataOpts,
    ckpt: Option<PathBuf>,
    top: Option<usize>,
) -> Result<(), CliError> {
    let ctx = resolve_common(&common)?;
    let (hyper, _) = resolve_hyper(&ctx.file, &hyper_opts, ctx.seed)?;
    let top = ctx.file.resolve(top, "top", 5usize)?.max(1);

    let dataset = resolve_dataset(&ctx.file, &data_opts)?;
    let split = resolve_split(&ctx.file, &data_opts, &dataset.matrix, ctx.seed)?;
    let ckpt_path: PathBuf = ctx.file.resolve_required(ckpt, "checkpoint")?;
    let params = checkpoint::load(&ckpt_path)?;
    if params.n_users() != split.train.n_users() || params.n_items() != split.train.n_items() {
        return Err(CliError::Lib(fawmf::Error::Format(format!(
            "checkpoint is {}x{} but the dataset fold is {}x{}",
            params.n_users(),
            params.n_items(),
            split.train.n_users(),
            split.train.n_items()
        ))));
    }
    create_output(&ctx.output)?;

    let n = params.n_users();
    let m = params.n_items();
    let d = params.communities();
    let theta = params.membership();
    let mut activations = Vec::with_capacity(m);
    for j in 0..m {
        activations.push(model::community_activation(&params, &hyper, &split.train, j));
    }

    let mut text = String::new();
    for dd in 0..d {
        let mass: f64 = (0..n).map(|i| theta.get(i, dd)).sum();
        text.push_str(&format!("community {dd}  mass={mass:.4}\n"));
        let item_scores: Vec<f64> = (0..m).map(|j| activations[j][dd]).collect();
        for j in top_indices(&item_scores, top) {
            text.push_str(&format!(
                "  item {j} (raw {})  activation={:.6}\n",
                dataset.id_maps.items[j], item_scores[j]
            ));
        }
        let user_scores: Vec<f64> = (0..n).map(|i| theta.get(i, dd)).collect();
        for i in top_indices(&user_scores, top) {
            text.push_str(&format!(
                "  user {i} (raw {})  membership={:.6}\n",
                dataset.id_maps.users[i], user_scores[i]
            ));
        }
    }

    write_file(&ctx.output.join("communities.txt"), |out| {
        out.write_all(text.as_bytes())
    })?;
    print!("{text}");
    Ok(())
}
