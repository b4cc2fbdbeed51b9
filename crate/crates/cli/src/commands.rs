//! The four pipeline commands.

use crate::files::{kv_to_string, load_kv, pool_to_string, read_pool, InstanceSpec};
use anyhow::{anyhow, bail, Context, Result};
use dtsp_core::construction::{
    christofides_variant, odd_degree_set, randomized_double_tree, Tour,
};
use dtsp_core::dispersion::{
    cost_filter, distinct_edge_sets, greedy_select, DispersionError, FirstTour, SelectionResult,
    SolutionPool,
};
use dtsp_core::instance::{parse_registry, Instance};
use dtsp_core::policy::{
    checkpoint_digest, load_checkpoint, rollout, save_checkpoint, ActionSource, CheckpointMeta,
    Matching, Mode, ModelConfig, PolicyParams,
};
use dtsp_core::reference::{resolve_reference, ReferenceCost};
use dtsp_core::rngstream::stream;
use dtsp_core::training::{train, TrainConfig};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Tour construction route for pool generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Sampled tree + randomized double-tree traversal.
    GpnTree,
    /// Sampled tree + learned matching + Eulerian shortcut.
    GpnTreem,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::GpnTree => write!(f, "gpn-tree"),
            Method::GpnTreem => write!(f, "gpn-treem"),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gpn-tree" => Ok(Method::GpnTree),
            "gpn-treem" => Ok(Method::GpnTreem),
            other => Err(format!(
                "unknown method {other:?} (expected gpn-tree|gpn-treem)"
            )),
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn fmt_alpha(alpha: f64) -> String {
    format!("{alpha}").replace('.', "_")
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub mode: Mode,
    pub alpha: f64,
    pub n_train: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub hidden: usize,
    pub layers: usize,
    pub out_dir: PathBuf,
}

impl TrainArgs {
    /// Desk-scale configuration: small instances and a narrow model, sized
    /// so a full quality/diversity comparison runs in minutes on a laptop.
    pub fn desk(mode: Mode, alpha: f64, out_dir: PathBuf) -> Self {
        Self {
            mode,
            alpha,
            n_train: 20,
            epochs: 20,
            steps_per_epoch: 100,
            batch_size: 32,
            learning_rate: 5e-4,
            seed: 0,
            checkpoint_every: 10,
            hidden: 24,
            layers: 1,
            out_dir,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub final_checkpoint: PathBuf,
    pub report_csv: PathBuf,
    pub epoch_checkpoints: Vec<PathBuf>,
}

/// Trains a policy and writes epoch checkpoints, a final checkpoint, and the
/// per-epoch report CSV.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutput> {
    if !(args.alpha >= 0.0) {
        bail!("alpha must be >= 0, got {}", args.alpha);
    }
    ensure_dir(&args.out_dir)?;
    let cfg = TrainConfig {
        mode: args.mode,
        n_train: args.n_train,
        epochs: args.epochs,
        steps_per_epoch: args.steps_per_epoch,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        alpha: args.alpha,
        seed: args.seed,
        checkpoint_every: args.checkpoint_every,
        model: ModelConfig::with_dims(args.hidden, args.layers),
        ..TrainConfig::full_scale(args.mode, args.alpha, args.seed)
    };
    let stem = format!("{}-alpha{}", args.mode, fmt_alpha(args.alpha));
    let meta = CheckpointMeta {
        mode: args.mode,
        alpha: args.alpha,
        seed: args.seed,
    };
    let mut epoch_paths = Vec::new();
    let out_dir = args.out_dir.clone();
    let every = args.checkpoint_every.max(1);
    let outcome = train(&cfg, |record, params| {
        if record.epoch % every == 0 {
            let path = out_dir.join(format!("ckpt-{stem}-epoch{}.json", record.epoch));
            if save_checkpoint(&path, params, meta).is_ok() {
                epoch_paths.push(path);
            }
        }
    })?;

    let final_checkpoint = args.out_dir.join(format!("ckpt-{stem}.json"));
    save_checkpoint(&final_checkpoint, &outcome.params, meta)?;
    let report_csv = args.out_dir.join(format!("train-report-{stem}.csv"));
    std::fs::write(&report_csv, outcome.report.to_csv())
        .with_context(|| format!("writing {}", report_csv.display()))?;
    Ok(TrainOutput {
        final_checkpoint,
        report_csv,
        epoch_checkpoints: epoch_paths,
    })
}

// ---------------------------------------------------------------------------
// generate-pool
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PoolArgs {
    pub instance: InstanceSpec,
    pub method: Method,
    pub tree_checkpoint: PathBuf,
    pub matching_checkpoint: Option<PathBuf>,
    pub pool_size: usize,
    pub matchings_per_tree: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct PoolOutput {
    pub pool_file: PathBuf,
    pub manifest_file: PathBuf,
    pub gen_seconds: f64,
}

fn load_params(path: &Path, expected: Mode) -> Result<(PolicyParams, CheckpointMeta)> {
    let (params, meta) =
        load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    if meta.mode != expected {
        bail!(
            "checkpoint {} holds a {} policy, expected {}",
            path.display(),
            meta.mode,
            expected
        );
    }
    Ok((params, meta))
}

/// Samples one tour for pool slot `i`. Trees are shared between consecutive
/// slots when `matchings_per_tree > 1`.
fn generate_tour(
    inst: &Instance,
    method: Method,
    tree_params: &PolicyParams,
    matching_params: Option<&PolicyParams>,
    seed: u64,
    tree_index: u64,
    slot: u64,
) -> Result<Tour> {
    let mut tree_rng = stream(seed, "tree", tree_index);
    let trace = rollout(
        tree_params,
        inst,
        Mode::Tree,
        None,
        ActionSource::Sample(&mut tree_rng),
    )?;
    let tree = trace.to_tree(inst.n())?;
    match method {
        Method::GpnTree => {
            let mut rng = stream(seed, "traversal", slot);
            Ok(randomized_double_tree(&tree, inst, &mut rng)?)
        }
        Method::GpnTreem => {
            let params = matching_params.expect("matching checkpoint checked");
            let odd = odd_degree_set(&tree);
            let mut mrng = stream(seed, "matching", slot);
            let mtrace = rollout(
                params,
                inst,
                Mode::Matching,
                Some(&odd),
                ActionSource::Sample(&mut mrng),
            )
            .with_context(|| format!("matching rollout for tree {tree_index}"))?;
            let matching = Matching::try_new(odd, mtrace.chosen)?;
            let mut erng = stream(seed, "euler", slot);
            Ok(christofides_variant(&tree, &matching, inst, &mut erng)?)
        }
    }
}

/// Samples a pool of tours and writes the pool file plus its manifest.
pub fn cmd_generate_pool(args: &PoolArgs) -> Result<PoolOutput> {
    if args.pool_size == 0 {
        bail!("pool size must be positive");
    }
    if args.matchings_per_tree == 0 {
        bail!("matchings-per-tree must be positive");
    }
    ensure_dir(&args.out_dir)?;
    let inst = args.instance.resolve()?;
    let (tree_params, tree_meta) = load_params(&args.tree_checkpoint, Mode::Tree)?;
    let matching = match (args.method, &args.matching_checkpoint) {
        (Method::GpnTree, _) => None,
        (Method::GpnTreem, Some(path)) => Some(load_params(path, Mode::Matching)?),
        (Method::GpnTreem, None) => {
            bail!("method gpn-treem requires --matching-checkpoint")
        }
    };

    let started = Instant::now();
    let fan = args.matchings_per_tree as u64;
    let tours: Result<Vec<Tour>> = (0..args.pool_size as u64)
        .into_par_iter()
        .map(|slot| {
            generate_tour(
                &inst,
                args.method,
                &tree_params,
                matching.as_ref().map(|(p, _)| p),
                args.seed,
                slot / fan,
                slot,
            )
        })
        .collect();
    let tours = tours?;
    let gen_seconds = started.elapsed().as_secs_f64();

    let stem = format!("pool-{}-{}", inst.name(), args.method);
    let pool_file = args.out_dir.join(format!("{stem}.txt"));
    std::fs::write(&pool_file, pool_to_string(&tours))
        .with_context(|| format!("writing {}", pool_file.display()))?;

    let mut pairs: Vec<(String, String)> = vec![
        ("command".into(), "generate-pool".into()),
        ("instance".into(), args.instance.to_string()),
        ("instance_name".into(), inst.name().to_string()),
        ("n".into(), inst.n().to_string()),
        ("method".into(), args.method.to_string()),
        ("pool_size".into(), args.pool_size.to_string()),
        (
            "matchings_per_tree".into(),
            args.matchings_per_tree.to_string(),
        ),
        ("seed".into(), args.seed.to_string()),
        (
            "tree_checkpoint".into(),
            args.tree_checkpoint.display().to_string(),
        ),
        (
            "tree_checkpoint_digest".into(),
            checkpoint_digest(&args.tree_checkpoint)?,
        ),
        ("tree_alpha".into(), tree_meta.alpha.to_string()),
        ("pool_file".into(), pool_file.display().to_string()),
        ("gen_seconds".into(), gen_seconds.to_string()),
    ];
    if let Some(path) = &args.matching_checkpoint {
        if args.method == Method::GpnTreem {
            pairs.push(("matching_checkpoint".into(), path.display().to_string()));
            pairs.push((
                "matching_checkpoint_digest".into(),
                checkpoint_digest(path)?,
            ));
            if let Some((_, meta)) = &matching {
                pairs.push(("matching_alpha".into(), meta.alpha.to_string()));
            }
        }
    }
    let manifest_file = args.out_dir.join(format!("{stem}.manifest"));
    std::fs::write(&manifest_file, kv_to_string(&pairs))
        .with_context(|| format!("writing {}", manifest_file.display()))?;
    Ok(PoolOutput {
        pool_file,
        manifest_file,
        gen_seconds,
    })
}

// ---------------------------------------------------------------------------
// select
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SelectArgs {
    pub pool_file: PathBuf,
    pub k: usize,
    pub c_values: Vec<f64>,
    pub registry: Option<PathBuf>,
    pub seed: u64,
    pub random_first: bool,
    pub out_dir: PathBuf,
}

/// One bench row per dispersion factor.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub instance: String,
    pub method: String,
    pub alpha: f64,
    pub c: f64,
    pub k: usize,
    pub status: RowStatus,
    pub pool_size: usize,
    pub filtered_size: usize,
    pub distinct_size: usize,
    pub selection: Option<SelectionResult>,
    pub mean_cost: Option<f64>,
    pub reference: ReferenceCost,
    pub gen_seconds: Option<f64>,
    pub select_seconds: f64,
}

/// Row condition mirroring the reporting conventions: `Saturated` marks a
/// factor admitting the entire pool (stricter thresholds already saturate),
/// `Infeasible` marks a factor leaving fewer than k distinct tours.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowStatus {
    Ok,
    Saturated,
    Infeasible,
}

impl std::fmt::Display for RowStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RowStatus::Ok => write!(f, "ok"),
            RowStatus::Saturated => write!(f, "saturated"),
            RowStatus::Infeasible => write!(f, "infeasible"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelectOutput {
    pub rows: Vec<BenchRow>,
    pub bench_csv: PathBuf,
    pub selection_csv: PathBuf,
    pub selected_files: Vec<PathBuf>,
}

pub const BENCH_CSV_HEADER: &str = "instance,method,alpha,c,k,status,pool_size,filtered_size,distinct_size,avg_jaccard,std_jaccard,mean_cost,reference_cost,reference_provenance,gen_seconds,select_seconds,total_seconds";

pub const SELECTION_CSV_HEADER: &str =
    "instance,method,alpha,c,k,avg_jaccard,std_jaccard,mean_cost,reference_provenance";

fn opt_to_csv<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

/// Numeric report fields of a bench row (timings excluded), for
/// reproducibility comparisons.
pub fn bench_row_key(row: &BenchRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        row.instance,
        row.method,
        row.alpha,
        row.c,
        row.k,
        row.status,
        row.pool_size,
        row.filtered_size,
        row.distinct_size,
        opt_to_csv(&row.selection.as_ref().map(|s| s.avg_jaccard)),
        opt_to_csv(&row.selection.as_ref().map(|s| s.std_jaccard)),
        opt_to_csv(&row.mean_cost),
        row.reference.value,
    )
}

/// Runs the cost filter and greedy selection for every dispersion factor,
/// writing the bench CSV, the selection CSV, and one selected-tour file per
/// feasible factor.
pub fn cmd_select(args: &SelectArgs) -> Result<SelectOutput> {
    if args.k == 0 {
        bail!("k must be positive");
    }
    ensure_dir(&args.out_dir)?;
    let manifest_path = args.pool_file.with_extension("manifest");
    let manifest = load_kv(&manifest_path)
        .with_context(|| format!("pool manifest {}", manifest_path.display()))?;
    let spec = InstanceSpec::parse(
        manifest
            .get("instance")
            .ok_or_else(|| anyhow!("manifest missing instance"))?,
    )?;
    let inst = spec.resolve()?;
    let method = manifest.get("method").cloned().unwrap_or_default();
    let alpha: f64 = manifest
        .get("tree_alpha")
        .and_then(|a| a.parse().ok())
        .unwrap_or(f64::NAN);
    let gen_seconds: Option<f64> = manifest.get("gen_seconds").and_then(|s| s.parse().ok());

    let tours = read_pool(&args.pool_file, &inst)?;
    let registry: BTreeMap<String, f64> = match &args.registry {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            parse_registry(&text)?
        }
        None => BTreeMap::new(),
    };
    let mut ref_rng = stream(args.seed, "reference", 0);
    let reference = resolve_reference(&inst, &registry, &mut ref_rng);

    let pool = SolutionPool {
        instance: inst.name().to_string(),
        tours,
        reference,
    };

    let mut rows = Vec::new();
    let mut selected_files = Vec::new();
    for (ci, &c) in args.c_values.iter().enumerate() {
        let started = Instant::now();
        let filtered = cost_filter(&pool, c)?;
        let filtered_size = filtered.tours.len();
        let distinct_size = distinct_edge_sets(&filtered.tours);
        let saturated = filtered_size == pool.tours.len();
        let mut selection_rng = stream(args.seed, "selection", ci as u64);
        let first = if args.random_first {
            FirstTour::Random(&mut selection_rng)
        } else {
            FirstTour::Lowest
        };
        let selection = match greedy_select(&filtered, args.k, first) {
            Ok(sel) => Some(sel),
            Err(DispersionError::InsufficientPool { .. }) => None,
            Err(e) => return Err(e.into()),
        };
        let select_seconds = started.elapsed().as_secs_f64();
        let status = match (&selection, saturated) {
            (None, _) => RowStatus::Infeasible,
            (Some(_), true) => RowStatus::Saturated,
            (Some(_), false) => RowStatus::Ok,
        };
        let mean_cost = selection.as_ref().map(|s| {
            s.tours.iter().map(Tour::cost).sum::<f64>() / s.tours.len() as f64
        });
        if let Some(sel) = &selection {
            let file = args
                .out_dir
                .join(format!("selected-{}-c{}.txt", inst.name(), c));
            std::fs::write(&file, pool_to_string(&sel.tours))
                .with_context(|| format!("writing {}", file.display()))?;
            selected_files.push(file);
        }
        rows.push(BenchRow {
            instance: inst.name().to_string(),
            method: method.clone(),
            alpha,
            c,
            k: args.k,
            status,
            pool_size: pool.tours.len(),
            filtered_size,
            distinct_size,
            selection,
            mean_cost,
            reference,
            gen_seconds,
            select_seconds,
        });
    }

    let mut bench = String::from(BENCH_CSV_HEADER);
    bench.push('\n');
    let mut selection_csv = String::from(SELECTION_CSV_HEADER);
    selection_csv.push('\n');
    for row in &rows {
        // generation and selection timings separately, plus the merged figure
        let total_seconds = row.gen_seconds.map(|g| g + row.select_seconds);
        bench.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            row.instance,
            row.method,
            row.alpha,
            row.c,
            row.k,
            row.status,
            row.pool_size,
            row.filtered_size,
            row.distinct_size,
            opt_to_csv(&row.selection.as_ref().map(|s| s.avg_jaccard)),
            opt_to_csv(&row.selection.as_ref().map(|s| s.std_jaccard)),
            opt_to_csv(&row.mean_cost),
            row.reference.value,
            row.reference.provenance,
            opt_to_csv(&row.gen_seconds),
            row.select_seconds,
            opt_to_csv(&total_seconds),
        ));
        if let Some(sel) = &row.selection {
            selection_csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                row.instance,
                row.method,
                row.alpha,
                row.c,
                row.k,
                sel.avg_jaccard,
                sel.std_jaccard,
                row.mean_cost.unwrap_or(f64::NAN),
                row.reference.provenance,
            ));
        }
    }
    let bench_csv = args.out_dir.join(format!("bench-{}.csv", inst.name()));
    std::fs::write(&bench_csv, bench)
        .with_context(|| format!("writing {}", bench_csv.display()))?;
    let selection_path = args.out_dir.join(format!("selection-{}.csv", inst.name()));
    std::fs::write(&selection_path, selection_csv)
        .with_context(|| format!("writing {}", selection_path.display()))?;

    Ok(SelectOutput {
        rows,
        bench_csv,
        selection_csv: selection_path,
        selected_files,
    })
}

// ---------------------------------------------------------------------------
// scaling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ScalingArgs {
    pub checkpoint: PathBuf,
    pub sizes: Vec<usize>,
    pub pool_size: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct ScalingOutput {
    pub rows: Vec<(usize, f64)>,
    /// Log-log slope of generation time against instance size; absent with
    /// fewer than two sizes.
    pub slope: Option<f64>,
    pub csv: PathBuf,
}

/// Least-squares slope of ln(seconds) against ln(n).
pub fn log_log_slope(rows: &[(usize, f64)]) -> Option<f64> {
    if rows.len() < 2 {
        return None;
    }
    let points: Vec<(f64, f64)> = rows
        .iter()
        .map(|&(n, t)| ((n as f64).ln(), t.max(1e-12).ln()))
        .collect();
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = points
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum();
    let den: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    Some(num / den)
}

/// Times pool generation (tree sampling + double-tree construction) over a
/// list of instance sizes and fits the log-log growth rate.
pub fn cmd_scaling(args: &ScalingArgs) -> Result<ScalingOutput> {
    if args.sizes.is_empty() {
        bail!("at least one size required");
    }
    ensure_dir(&args.out_dir)?;
    let (params, _) = load_params(&args.checkpoint, Mode::Tree)?;
    let mut rows = Vec::new();
    for (si, &n) in args.sizes.iter().enumerate() {
        let mut irng = stream(args.seed, "scaling-instance", si as u64);
        let inst = dtsp_core::instance::random_instance(n, &mut irng)?;
        let started = Instant::now();
        let tours: Result<Vec<Tour>> = (0..args.pool_size as u64)
            .into_par_iter()
            .map(|slot| {
                generate_tour(&inst, Method::GpnTree, &params, None, args.seed, slot, slot)
            })
            .collect();
        let tours = tours?;
        let seconds = started.elapsed().as_secs_f64();
        debug_assert_eq!(tours.len(), args.pool_size);
        rows.push((n, seconds));
    }
    let slope = log_log_slope(&rows);
    let mut csv = String::from("n,pool_seconds\n");
    for (n, t) in &rows {
        csv.push_str(&format!("{n},{t}\n"));
    }
    if let Some(s) = slope {
        csv.push_str(&format!("# log_log_slope = {s}\n"));
    }
    let path = args.out_dir.join("scaling.csv");
    std::fs::write(&path, &csv).with_context(|| format!("writing {}", path.display()))?;
    Ok(ScalingOutput {
        rows,
        slope,
        csv: path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dir(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join("dtsp-commands-test").join(name);
        let _ = std::fs::remove_dir_all(&d);
        std::fs::create_dir_all(&d).unwrap();
        d
    }

    fn tiny_checkpoint(out: &Path, mode: Mode) -> PathBuf {
        let path = out.join(format!("ckpt-{mode}.json"));
        save_checkpoint(
            &path,
            &PolicyParams::init(ModelConfig::test_small(), 5),
            CheckpointMeta { mode, alpha: 0.0, seed: 5 },
        )
        .unwrap();
        path
    }

    #[test]
    fn single_tour_pool_is_valid() {
        let out = dir("m1");
        let ckpt = tiny_checkpoint(&out, Mode::Tree);
        let result = cmd_generate_pool(&PoolArgs {
            instance: InstanceSpec::Random { n: 7, seed: 2 },
            method: Method::GpnTree,
            tree_checkpoint: ckpt,
            matching_checkpoint: None,
            pool_size: 1,
            matchings_per_tree: 1,
            seed: 3,
            out_dir: out,
        })
        .unwrap();
        let inst = InstanceSpec::Random { n: 7, seed: 2 }.resolve().unwrap();
        let tours = crate::files::read_pool(&result.pool_file, &inst).unwrap();
        assert_eq!(tours.len(), 1);
        assert_eq!(tours[0].order().len(), 7);
    }

    #[test]
    fn treem_pool_requires_matching_checkpoint_and_runs() {
        let out = dir("treem");
        let tree_ckpt = tiny_checkpoint(&out, Mode::Tree);
        let matching_ckpt = tiny_checkpoint(&out, Mode::Matching);
        let mut args = PoolArgs {
            instance: InstanceSpec::Random { n: 8, seed: 4 },
            method: Method::GpnTreem,
            tree_checkpoint: tree_ckpt,
            matching_checkpoint: None,
            pool_size: 6,
            matchings_per_tree: 2,
            seed: 9,
            out_dir: out,
        };
        assert!(cmd_generate_pool(&args).is_err());
        args.matching_checkpoint = Some(matching_ckpt);
        let result = cmd_generate_pool(&args).unwrap();
        let inst = args.instance.resolve().unwrap();
        let tours = crate::files::read_pool(&result.pool_file, &inst).unwrap();
        assert_eq!(tours.len(), 6);
    }

    #[test]
    fn scaling_single_size_has_no_slope() {
        let out = dir("one-size");
        let ckpt = tiny_checkpoint(&out, Mode::Tree);
        let result = cmd_scaling(&ScalingArgs {
            checkpoint: ckpt,
            sizes: vec![10],
            pool_size: 3,
            seed: 1,
            out_dir: out,
        })
        .unwrap();
        assert_eq!(result.rows.len(), 1);
        assert!(result.slope.is_none());
    }

    #[test]
    fn select_flags_infeasible_and_saturated_factors() {
        let out = dir("flags");
        let ckpt = tiny_checkpoint(&out, Mode::Tree);
        let pool = cmd_generate_pool(&PoolArgs {
            instance: InstanceSpec::Random { n: 9, seed: 6 },
            method: Method::GpnTree,
            tree_checkpoint: ckpt,
            matching_checkpoint: None,
            pool_size: 15,
            matchings_per_tree: 1,
            seed: 7,
            out_dir: out.clone(),
        })
        .unwrap();
        let result = cmd_select(&SelectArgs {
            pool_file: pool.pool_file.clone(),
            k: 5,
            c_values: vec![1.0, 1e6],
            registry: None,
            seed: 8,
            random_first: false,
            out_dir: out.clone(),
        })
        .unwrap();
        // with an exact reference, c = 1 keeps only optimal tours: a random
        // policy pool will not contain 5 distinct optima
        assert_eq!(result.rows[0].status, RowStatus::Infeasible);
        assert!(result.rows[0].selection.is_none());
        // an absurdly loose factor admits everything
        assert_eq!(result.rows[1].status, RowStatus::Saturated);
        assert_eq!(result.rows[1].filtered_size, 15);

        // k = 1 convention: zero average, zero deviation
        let one = cmd_select(&SelectArgs {
            pool_file: pool.pool_file,
            k: 1,
            c_values: vec![4.0],
            registry: None,
            seed: 8,
            random_first: false,
            out_dir: out,
        })
        .unwrap();
        let sel = one.rows[0].selection.as_ref().unwrap();
        assert_eq!(sel.avg_jaccard, 0.0);
        assert_eq!(sel.std_jaccard, 0.0);
    }
}
