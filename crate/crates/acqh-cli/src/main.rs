//! Command line for asymmetric correlation quantization hashing: generate
//! synthetic datasets, train models, run cross-modal queries, and compute
//! retrieval metrics.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use acqh::eval::{average_precision, precision_recall_curve, relevance, topn_precision_curve};
use acqh::io::{
    self, code_entry_bytes, load_dataset, read_model, write_model, DatasetFormat, DatasetPaths,
};
use acqh::model::{FeatureMatrix, Hyperparams, Modality};
use acqh::query::search;
use acqh::synth::synth_dataset;
use acqh::trainer::train;

#[derive(Parser)]
#[command(name = "acqh", version, about = "Cross-modal retrieval with compositional quantization codes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic clustered dataset with a query split
    Synth(SynthArgs),
    /// Train a model and write it with its objective trace
    Train(TrainArgs),
    /// Rank database items for raw query vectors
    Query(QueryArgs),
    /// Compute MAP, topN-precision, and precision-recall over a query split
    Eval(EvalArgs),
    /// Print model dimensions and storage statistics
    Info(InfoArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Auto,
    Binary,
    Csv,
}

impl FormatArg {
    fn resolve(self, path: &Path) -> DatasetFormat {
        match self {
            FormatArg::Auto => DatasetFormat::detect(path),
            FormatArg::Binary => DatasetFormat::Binary,
            FormatArg::Csv => DatasetFormat::Csv,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModalityArg {
    Image,
    Text,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Modality {
        match m {
            ModalityArg::Image => Modality::Image,
            ModalityArg::Text => Modality::Text,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for x/y/labels and the query split
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    /// Image feature dimension
    #[arg(long, default_value_t = 20)]
    dx: usize,
    /// Text feature dimension
    #[arg(long, default_value_t = 15)]
    dy: usize,
    /// Within-class Gaussian noise level
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Image feature matrix (d_x rows, one column per item)
    #[arg(long)]
    x: PathBuf,
    /// Text feature matrix (d_y rows, one column per item)
    #[arg(long)]
    y: PathBuf,
    /// Binary label matrix (classes x items)
    #[arg(long)]
    labels: PathBuf,
    /// Where to write the trained model
    #[arg(long)]
    model: PathBuf,
    /// Objective-trace CSV (defaults to `<model>.trace.csv`)
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Code length K (latent dimension)
    #[arg(long, default_value_t = 32)]
    bits: usize,
    /// Number of codebook stages m
    #[arg(long, default_value_t = 4)]
    codebooks: usize,
    /// Atoms per stage n
    #[arg(long, default_value_t = 256)]
    atoms: usize,
    /// Label-regression weight
    #[arg(long, default_value_t = 1e-4)]
    lambda: f64,
    /// Regressor penalty weight
    #[arg(long, default_value_t = 0.01)]
    mu: f64,
    /// Outer-iteration cap
    #[arg(long, default_value_t = 50)]
    iters: usize,
    /// Relative objective-change stopping threshold
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    /// Epsilon for the ridge inside matrix inverses
    #[arg(long, default_value_t = 1e-8)]
    ridge_eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Mean-center features before training and write the means next to
    /// the model (queries must then be centered with those means)
    #[arg(long)]
    center: bool,
    #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
    format: FormatArg,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    model: PathBuf,
    /// Query feature matrix (d rows, one column per query)
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, value_enum)]
    modality: ModalityArg,
    /// Results per query
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Ranked-results CSV (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Centering means written by `train --center`
    #[arg(long)]
    centers: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
    format: FormatArg,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    query_x: PathBuf,
    #[arg(long)]
    query_y: PathBuf,
    #[arg(long)]
    query_labels: PathBuf,
    /// Labels of the database the model was trained on
    #[arg(long)]
    db_labels: PathBuf,
    /// Directory for map.csv and the curve CSVs
    #[arg(long)]
    out: PathBuf,
    /// Grid size of the topN-precision curves
    #[arg(long, default_value_t = 20)]
    topn_points: usize,
    /// Centering means written by `train --center`
    #[arg(long)]
    centers: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
    format: FormatArg,
}

#[derive(Args)]
struct InfoArgs {
    #[arg(long)]
    model: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth(args) => run_synth(args),
        Command::Train(args) => run_train(args),
        Command::Query(args) => run_query(args),
        Command::Eval(args) => run_eval(args),
        Command::Info(args) => run_info(args),
    }
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let bundle = synth_dataset(
        args.classes,
        args.per_class,
        args.dx,
        args.dy,
        args.noise,
        args.seed,
    )?;
    bundle.save_binary(&args.out)?;
    let q = bundle.query.as_ref().expect("synth always emits a query split");
    println!(
        "wrote {} database items ({} classes) and {} queries to {}",
        bundle.x.n_items(),
        args.classes,
        q.x.n_items(),
        args.out.display()
    );
    Ok(())
}

/// Sidecar file with per-modality feature means, one line per modality.
fn write_centers(path: &Path, means_x: &DVector<f64>, means_y: &DVector<f64>) -> Result<()> {
    let mut text = String::from("image");
    for v in means_x.iter() {
        text.push_str(&format!(",{}", v));
    }
    text.push_str("\ntext");
    for v in means_y.iter() {
        text.push_str(&format!(",{}", v));
    }
    text.push('\n');
    io::write_text(path, &text)?;
    Ok(())
}

fn read_centers(path: &Path) -> Result<(DVector<f64>, DVector<f64>)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading centers file {}", path.display()))?;
    let mut means_x = None;
    let mut means_y = None;
    for line in text.lines() {
        let mut cells = line.split(',');
        let tag = cells.next().unwrap_or_default();
        let values: Vec<f64> = cells
            .map(|c| c.trim().parse::<f64>().context("bad number in centers file"))
            .collect::<Result<_>>()?;
        match tag {
            "image" => means_x = Some(DVector::from_vec(values)),
            "text" => means_y = Some(DVector::from_vec(values)),
            other => bail!("unknown centers row '{}'", other),
        }
    }
    match (means_x, means_y) {
        (Some(x), Some(y)) => Ok((x, y)),
        _ => bail!("centers file must hold one 'image' and one 'text' row"),
    }
}

fn centers_path(model: &Path) -> PathBuf {
    let mut name = model.as_os_str().to_owned();
    name.push(".centers.csv");
    PathBuf::from(name)
}

fn run_train(args: TrainArgs) -> Result<()> {
    let paths = DatasetPaths {
        x: args.x.clone(),
        y: args.y.clone(),
        labels: args.labels.clone(),
        ..Default::default()
    };
    let mut bundle = load_dataset(&paths, args.format.resolve(&args.x))?;
    if args.center {
        let means_x = bundle.x.column_means();
        let means_y = bundle.y.column_means();
        bundle.x.center(&means_x)?;
        bundle.y.center(&means_y)?;
        let path = centers_path(&args.model);
        write_centers(&path, &means_x, &means_y)?;
        println!("centered features; means written to {}", path.display());
    }
    let hyper = Hyperparams {
        k: args.bits,
        m: args.codebooks,
        n: args.atoms,
        lambda: args.lambda,
        mu: args.mu,
        max_iters: args.iters,
        tol: args.tol,
        ridge_eps: args.ridge_eps,
        seed: args.seed,
    };
    let outcome = train(&bundle.x, &bundle.y, &bundle.labels, &hyper)?;
    write_model(&args.model, &outcome.model)?;
    let trace_path = args.trace.clone().unwrap_or_else(|| {
        let mut name = args.model.as_os_str().to_owned();
        name.push(".trace.csv");
        PathBuf::from(name)
    });
    let mut csv = String::from("iteration,objective,image_fit,text_fit,label_fit,regularization\n");
    for r in &outcome.trace {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.iteration,
            r.objective,
            r.terms.image_fit,
            r.terms.text_fit,
            r.terms.label_fit,
            r.terms.regularization
        ));
    }
    io::write_text(&trace_path, &csv)?;
    let last = outcome.trace.last().expect("trace is never empty");
    println!(
        "trained {} iterations (converged: {}), objective {:.6e}, model written to {}",
        last.iteration,
        outcome.converged,
        last.objective,
        args.model.display()
    );
    Ok(())
}

fn run_query(args: QueryArgs) -> Result<()> {
    let model = read_model(&args.model)?;
    let modality: Modality = args.modality.into();
    let mut queries = io::read_features(&args.queries, args.format.resolve(&args.queries), modality)?;
    if let Some(centers) = &args.centers {
        let (means_x, means_y) = read_centers(centers)?;
        match modality {
            Modality::Image => queries.center(&means_x)?,
            Modality::Text => queries.center(&means_y)?,
        }
    }
    let mut csv = String::from("query_id,rank,item_id,score\n");
    for q in 0..queries.n_items() {
        let column = queries.data().column(q).clone_owned();
        let ranked = search(&model, column.as_slice(), modality, args.k)?;
        for (rank, (item, score)) in ranked.iter().enumerate() {
            csv.push_str(&format!("{},{},{},{}\n", q, rank + 1, item, score));
        }
    }
    match &args.out {
        Some(path) => {
            io::write_text(path, &csv)?;
            println!(
                "ranked top-{} of {} items for {} queries into {}",
                args.k,
                model.dims.n_items,
                queries.n_items(),
                path.display()
            );
        }
        None => print!("{}", csv),
    }
    Ok(())
}

/// Per-direction retrieval report: MAP plus averaged curves.
struct DirectionReport {
    map: f64,
    topn: Vec<(usize, f64)>,
    pr: Vec<(f64, f64)>,
}

/// Recall grid for the averaged precision-recall curve; per query the
/// interpolated precision max{p : recall >= r} is averaged.
const PR_GRID: usize = 20;

fn eval_direction(
    model: &acqh::AcqhModel,
    queries: &FeatureMatrix,
    query_labels: &acqh::LabelMatrix,
    db_labels: &acqh::LabelMatrix,
    topn_points: usize,
) -> Result<DirectionReport> {
    let n_items = model.dims.n_items;
    let n_queries = queries.n_items();
    let mut ap_sum = 0.0;
    let mut topn_sum: Vec<(usize, f64)> = Vec::new();
    let mut pr_sum = [0.0; PR_GRID + 1];
    let mut pr_count = 0usize;
    for q in 0..n_queries {
        let column = queries.data().column(q).clone_owned();
        let ranked = search(model, column.as_slice(), queries.modality(), n_items)?;
        let ranking: Vec<usize> = ranked.iter().map(|&(id, _)| id).collect();
        let rel = relevance(query_labels.column_slice(q), db_labels)?;
        ap_sum += average_precision(&ranking, &rel)?;

        let topn = topn_precision_curve(&ranking, &rel, topn_points)?;
        if topn_sum.is_empty() {
            topn_sum = topn;
        } else {
            for (acc, point) in topn_sum.iter_mut().zip(topn.iter()) {
                acc.1 += point.1;
            }
        }

        let pr = precision_recall_curve(&ranking, &rel)?;
        if !pr.is_empty() {
            pr_count += 1;
            for g in 0..=PR_GRID {
                let r = g as f64 / PR_GRID as f64;
                let best = pr
                    .iter()
                    .filter(|&&(recall, _)| recall >= r - 1e-12)
                    .map(|&(_, precision)| precision)
                    .fold(0.0, f64::max);
                pr_sum[g] += best;
            }
        }
    }
    let topn = topn_sum
        .into_iter()
        .map(|(n, p)| (n, p / n_queries as f64))
        .collect();
    let pr = (0..=PR_GRID)
        .map(|g| {
            let r = g as f64 / PR_GRID as f64;
            (r, pr_sum[g] / pr_count.max(1) as f64)
        })
        .collect();
    Ok(DirectionReport {
        map: ap_sum / n_queries as f64,
        topn,
        pr,
    })
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let model = read_model(&args.model)?;
    let qx_format = args.format.resolve(&args.query_x);
    let mut query_x = io::read_features(&args.query_x, qx_format, Modality::Image)?;
    let mut query_y =
        io::read_features(&args.query_y, args.format.resolve(&args.query_y), Modality::Text)?;
    let query_labels =
        io::read_label_file(&args.query_labels, args.format.resolve(&args.query_labels))?;
    let db_labels = io::read_label_file(&args.db_labels, args.format.resolve(&args.db_labels))?;
    if let Some(centers) = &args.centers {
        let (means_x, means_y) = read_centers(centers)?;
        query_x.center(&means_x)?;
        query_y.center(&means_y)?;
    }

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output dir {}", args.out.display()))?;
    let mut map_csv = String::from("direction,map\n");
    for (direction, queries) in [("i2t", &query_x), ("t2i", &query_y)] {
        let report = eval_direction(&model, queries, &query_labels, &db_labels, args.topn_points)?;
        map_csv.push_str(&format!("{},{}\n", direction, report.map));

        let mut topn_csv = String::from("n,precision\n");
        for (n, p) in &report.topn {
            topn_csv.push_str(&format!("{},{}\n", n, p));
        }
        io::write_text(&args.out.join(format!("topn_{}.csv", direction)), &topn_csv)?;

        let mut pr_csv = String::from("recall,precision\n");
        for (r, p) in &report.pr {
            pr_csv.push_str(&format!("{},{}\n", r, p));
        }
        io::write_text(&args.out.join(format!("pr_{}.csv", direction)), &pr_csv)?;
        println!("{} MAP {:.4}", direction, report.map);
    }
    io::write_text(&args.out.join("map.csv"), &map_csv)?;
    println!("reports written to {}", args.out.display());
    Ok(())
}

fn run_info(args: InfoArgs) -> Result<()> {
    let model = read_model(&args.model)?;
    let bytes = std::fs::metadata(&args.model)
        .with_context(|| format!("reading metadata of {}", args.model.display()))?
        .len();
    let d = &model.dims;
    let h = &model.hyper;
    let entry = code_entry_bytes(h.n);
    println!("model            {}", args.model.display());
    println!("features         d_x={} d_y={}", d.d_x, d.d_y);
    println!("database         {} items, {} classes", d.n_items, d.n_classes);
    println!("code length K    {}", h.k);
    println!("stages m         {}", h.m);
    println!("atoms n          {}", h.n);
    println!("lambda / mu      {} / {}", h.lambda, h.mu);
    println!("bytes per item   {} ({}-bit atom indices)", h.m * entry, entry * 8);
    println!("codes section    {} bytes", d.n_items * h.m * entry);
    println!(
        "codebook         {} floats ({} bytes)",
        h.k * h.m * h.n,
        h.k * h.m * h.n * 8
    );
    println!("file size        {} bytes", bytes);
    Ok(())
}
