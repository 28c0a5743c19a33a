//! Subcommand implementations. Each command first builds a `Plan` naming
//! its inputs and outputs; `--dry-run` stops after checking it.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mobility_core::cluster::{
    evaluate_partition, fit_dpgmm, fit_em_gmm, fit_kmeans, read_partition_labels, DpHyperparams,
    DpgmmConfig, EmConfig, EmOutcome, PartitionEvaluation, PartitionResult,
};
use mobility_core::demand::{estimate_demand, read_demand, ODDistribution};
use mobility_core::embed::{dimension_sweep, embed, DescentOptions, Embedding, StressReport};
use mobility_core::netgraph::{
    all_pairs_distances, all_pairs_shortest_paths, build_movement_graph, generate_grid_network,
    generate_ring_core_network, read_distance_matrix, read_network, write_distance_matrix,
    write_network, DistanceMatrix, MovementGraph, MovementOptions, NetworkError, RoadNetwork,
};
use mobility_core::rideshare::{read_requests, write_requests};
use mobility_core::sim::{
    run, synthesize_requests, write_event_log, MetricsReport, Policy, SimContext,
};
use rand::SeedableRng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{derive_seed, user_error, Method, RunConfig, UserError};

const SEED_PARTITION: u64 = 1;
const SEED_BENCH: u64 = 2;
const SEED_DEMAND: u64 = 3;
const SEED_SIM: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GenNetwork,
    Embed,
    Partition,
    BenchCluster,
    GenDemand,
    Simulate,
}

/// An input file the command needs and how to produce it.
struct Input {
    path: PathBuf,
    hint: &'static str,
}

pub struct Plan {
    command: Command,
    inputs: Vec<Input>,
    outputs: Vec<PathBuf>,
    steps: Vec<String>,
}

impl Plan {
    /// Fails with a user error naming the first missing input.
    pub fn check(&self) -> Result<()> {
        for input in &self.inputs {
            if !input.path.is_file() {
                return Err(user_error(format!(
                    "input file {} does not exist ({})",
                    input.path.display(),
                    input.hint
                )));
            }
        }
        Ok(())
    }

    pub fn print(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "plan for {:?}:", self.command)?;
        for step in &self.steps {
            writeln!(out, "  step   {step}")?;
        }
        for input in &self.inputs {
            writeln!(out, "  read   {}", input.path.display())?;
        }
        for path in &self.outputs {
            writeln!(out, "  write  {}", path.display())?;
        }
        Ok(())
    }
}

fn network_input(cfg: &RunConfig) -> Option<Input> {
    cfg.network.clone().map(|path| Input {
        path,
        hint: "set `network` to an existing file or drop it to use the generated grid",
    })
}

fn network_step(cfg: &RunConfig) -> String {
    match (&cfg.network, cfg.ring_speed_mps) {
        (Some(p), _) => format!("load network {}", p.display()),
        (None, None) => format!("generate {}x{} grid", cfg.grid_rows, cfg.grid_cols),
        (None, Some(_)) => format!(
            "generate {}x{} ring-core grid",
            cfg.grid_rows, cfg.grid_cols
        ),
    }
}

fn embedding_input(cfg: &RunConfig) -> Input {
    Input {
        path: cfg.embedding_path(),
        hint: "run `mobility embed` first or set `embedding`",
    }
}

fn region_inputs(cfg: &RunConfig) -> Vec<Input> {
    vec![
        embedding_input(cfg),
        Input {
            path: cfg.partition_path(),
            hint: "run `mobility partition` first or set `partition`",
        },
    ]
}

fn all_dims(cfg: &RunConfig) -> Vec<usize> {
    let mut dims = cfg.sweep_dims.clone();
    dims.push(cfg.dim);
    dims.sort_unstable();
    dims.dedup();
    dims
}

pub fn plan(command: Command, cfg: &RunConfig) -> Plan {
    let mut inputs: Vec<Input> = Vec::new();
    let mut outputs = vec![cfg.out("effective.conf")];
    let mut steps = Vec::new();
    match command {
        Command::GenNetwork => {
            steps.push(network_step(&RunConfig {
                network: None,
                ..cfg.clone()
            }));
            outputs.push(cfg.out("network.txt"));
        }
        Command::Embed => {
            inputs.extend(network_input(cfg));
            steps.push(network_step(cfg));
            steps.push(format!(
                "travel-time matrix (cache {})",
                cfg.cache_path().display()
            ));
            steps.push(format!(
                "embed at dimensions {:?}, keep m = {}",
                all_dims(cfg),
                cfg.dim
            ));
            outputs.extend([
                cfg.cache_path(),
                cfg.out("embedding.txt"),
                cfg.out("stress.jsonl"),
            ]);
        }
        Command::Partition => {
            inputs.push(embedding_input(cfg));
            if cfg.evaluate {
                inputs.extend(network_input(cfg));
                steps.push(network_step(cfg));
            }
            steps.push(format!("cluster with {:?} (k = {:?})", cfg.method, cfg.k));
            outputs.extend([cfg.out("partition.txt"), cfg.out("partition_report.json")]);
        }
        Command::BenchCluster => {
            inputs.push(embedding_input(cfg));
            inputs.extend(network_input(cfg));
            steps.push(network_step(cfg));
            steps.push(format!(
                "DPGMM, k-means (embedded and geometric) and EM over {} seeds",
                cfg.bench_seeds
            ));
            outputs.extend([cfg.out("bench.json"), cfg.out("bench.csv")]);
        }
        Command::GenDemand => {
            inputs.extend(region_inputs(cfg));
            match &cfg.demand_from {
                Some(path) => {
                    inputs.push(Input {
                        path: path.clone(),
                        hint: "set `demand_from` to an existing request file",
                    });
                    steps.push("estimate OD demand from requests".into());
                }
                None => steps.push(format!("Zipf OD demand with exponent {}", cfg.demand_skew)),
            }
            outputs.push(cfg.out("demand.txt"));
            if cfg.gen_requests {
                steps.push(format!(
                    "synthesize requests at {} per epoch",
                    cfg.rate_per_epoch
                ));
                outputs.push(cfg.out("requests.txt"));
            }
        }
        Command::Simulate => {
            inputs.extend(network_input(cfg));
            steps.push(network_step(cfg));
            if let Some(path) = &cfg.requests {
                inputs.push(Input {
                    path: path.clone(),
                    hint: "set `requests` to an existing request file",
                });
            }
            if needs_regions(cfg) {
                inputs.extend(region_inputs(cfg));
                inputs.push(Input {
                    path: cfg.demand_path(),
                    hint: "run `mobility gen-demand` first or set `demand`",
                });
            }
            for &policy in &cfg.policies {
                steps.push(format!("{} runs of {}", cfg.runs, policy_name(policy)));
                for i in 0..cfg.runs {
                    outputs.push(cfg.out(&format!("metrics_{}_{i}.json", policy_name(policy))));
                    outputs.push(cfg.out(&format!("events_{}_{i}.ndjson", policy_name(policy))));
                }
            }
            outputs.push(cfg.out("summary.json"));
        }
    }
    Plan {
        command,
        inputs,
        outputs,
        steps,
    }
}

pub fn execute(command: Command, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::GenNetwork => gen_network(cfg),
        Command::Embed => run_embed(cfg),
        Command::Partition => partition(cfg),
        Command::BenchCluster => bench_cluster(cfg),
        Command::GenDemand => gen_demand(cfg),
        Command::Simulate => simulate(cfg),
    }
}

fn policy_name(policy: Policy) -> &'static str {
    match policy {
        Policy::Baseline => "baseline",
        Policy::Regularized => "regularized",
    }
}

fn needs_regions(cfg: &RunConfig) -> bool {
    cfg.requests.is_none() || cfg.policies.contains(&Policy::Regularized)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Wraps an error from reading user-supplied input.
fn bad_input<'a, E>(what: &str, path: &'a Path) -> impl FnOnce(E) -> anyhow::Error + 'a
where
    E: std::error::Error + Send + Sync + 'static,
{
    let what = what.to_string();
    move |e| anyhow::Error::new(e).context(UserError(format!("{what} {}", path.display())))
}

fn open(path: &Path, what: &str) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(bad_input(what, path))
}

fn generate_network(cfg: &RunConfig) -> Result<RoadNetwork> {
    let net = match cfg.ring_speed_mps {
        None => generate_grid_network(
            cfg.grid_rows,
            cfg.grid_cols,
            cfg.block_m,
            cfg.speed_mps,
            cfg.lanes,
        ),
        Some(ring) => generate_ring_core_network(
            cfg.grid_rows,
            cfg.grid_cols,
            cfg.block_m,
            ring,
            cfg.speed_mps,
            cfg.lanes,
        ),
    };
    net.map_err(|e| user_error(format!("grid parameters: {e}")))
}

struct Network {
    links: RoadNetwork,
    graph: MovementGraph,
    /// Digest of the network and movement options, keying the distance cache.
    fingerprint: String,
}

fn load_network(cfg: &RunConfig) -> Result<Network> {
    let links = match &cfg.network {
        Some(path) => read_network(path).map_err(bad_input("cannot load network file", path))?,
        None => generate_network(cfg)?,
    };
    let options = MovementOptions {
        allow_u_turns: cfg.allow_u_turns,
    };
    let graph = build_movement_graph(&links, options).map_err(|e| match e {
        NetworkError::NotStronglyConnected { .. } => user_error(format!(
            "{e}; every link must be reachable from every other (try allow_u_turns = true)"
        )),
        other => anyhow::Error::new(other),
    })?;
    let mut text = Vec::new();
    write_network(&links, &mut text)?;
    text.extend_from_slice(format!("allow_u_turns {}\n", cfg.allow_u_turns).as_bytes());
    let fingerprint = Sha256::digest(&text)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    log::info!("network: {} links", links.len());
    Ok(Network {
        links,
        graph,
        fingerprint,
    })
}

fn cache_key_path(cache: &Path) -> PathBuf {
    let mut name = cache.as_os_str().to_owned();
    name.push(".key");
    PathBuf::from(name)
}

/// Travel-time matrix, reused from the cache when its key matches.
fn distances(cfg: &RunConfig, net: &Network) -> Result<DistanceMatrix> {
    let cache = cfg.cache_path();
    let key_path = cache_key_path(&cache);
    let key_matches = fs::read_to_string(&key_path).is_ok_and(|k| k.trim() == net.fingerprint);
    if key_matches {
        match read_distance_matrix(&cache) {
            Ok(d) if d.len() == net.links.len() => {
                log::info!("reusing travel times from {}", cache.display());
                return Ok(d);
            }
            Ok(_) => log::warn!("{} has the wrong size; recomputing", cache.display()),
            Err(e) => log::warn!("{} is unreadable ({e}); recomputing", cache.display()),
        }
    }
    log::info!("computing all-pairs travel times");
    let d = all_pairs_distances(&net.graph)?;
    write_distance_matrix(&d, &cache)
        .with_context(|| format!("cannot write {}", cache.display()))?;
    fs::write(&key_path, &net.fingerprint)
        .with_context(|| format!("cannot write {}", key_path.display()))?;
    Ok(d)
}

fn load_embedding(cfg: &RunConfig) -> Result<Embedding> {
    let path = cfg.embedding_path();
    let e = Embedding::read(open(&path, "cannot read embedding")?)
        .map_err(bad_input("cannot parse embedding", &path))?;
    if e.is_empty() {
        return Err(user_error(format!(
            "embedding {} has no points",
            path.display()
        )));
    }
    Ok(e)
}

fn check_links(what: &str, got: usize, net: &Network) -> Result<()> {
    if got != net.links.len() {
        return Err(user_error(format!(
            "{what} covers {got} links but the network has {}",
            net.links.len()
        )));
    }
    Ok(())
}

fn load_partition(cfg: &RunConfig, emb: &Embedding) -> Result<PartitionResult> {
    let path = cfg.partition_path();
    let labels = read_partition_labels(open(&path, "cannot read partition")?)
        .map_err(bad_input("cannot parse partition", &path))?;
    if labels.len() != emb.len() {
        return Err(user_error(format!(
            "partition {} covers {} links but the embedding has {}",
            path.display(),
            labels.len(),
            emb.len()
        )));
    }
    Ok(PartitionResult::from_labels(&labels, emb))
}

fn load_demand(cfg: &RunConfig, k: usize) -> Result<ODDistribution> {
    let path = cfg.demand_path();
    read_demand(open(&path, "cannot read demand")?, k).map_err(|e| {
        anyhow::Error::new(e).context(UserError(format!(
            "demand file {} does not fit the partition with K = {k}",
            path.display()
        )))
    })
}

fn gen_network(cfg: &RunConfig) -> Result<()> {
    let net = load_network(&RunConfig {
        network: None,
        ..cfg.clone()
    })?;
    let mut out = create(&cfg.out("network.txt"))?;
    write_network(&net.links, &mut out)?;
    out.flush()?;
    println!(
        "wrote {} links to {}",
        net.links.len(),
        cfg.out("network.txt").display()
    );
    Ok(())
}

fn run_embed(cfg: &RunConfig) -> Result<()> {
    let net = load_network(cfg)?;
    let n = net.links.len();
    let dims = all_dims(cfg);
    if let Some(&m) = dims.iter().find(|&&m| m >= n) {
        return Err(user_error(format!(
            "dimension {m} must be below the link count {n}"
        )));
    }
    let d = distances(cfg, &net)?;
    let options = DescentOptions {
        max_iterations: cfg.max_iterations,
        rel_tolerance: cfg.rel_tolerance,
    };
    let others: Vec<usize> = dims.iter().copied().filter(|&m| m != cfg.dim).collect();
    let mut reports: Vec<StressReport> = dimension_sweep(&d, &others, options)?;
    let (embedding, report) = embed(&d, cfg.dim, options)?;
    reports.push(report.clone());
    reports.sort_by_key(|r| r.dimension);

    let mut out = create(&cfg.out("embedding.txt"))?;
    embedding.write(&mut out)?;
    out.flush()?;
    let mut out = create(&cfg.out("stress.jsonl"))?;
    for r in &reports {
        serde_json::to_writer(&mut out, r)?;
        writeln!(out)?;
    }
    out.flush()?;
    for r in &reports {
        println!(
            "m = {:>3}  stress {:.6e}  MAPE {:.4}  error {:.3} +- {:.3} s{}",
            r.dimension,
            r.stress,
            r.mape,
            r.error_mean,
            r.error_std,
            if r.converged {
                ""
            } else {
                "  (iteration limit)"
            }
        );
    }
    Ok(())
}

/// Labels from the configured method, or `None` when EM degenerates.
fn cluster_labels(
    cfg: &RunConfig,
    emb: &Embedding,
    seed: u64,
) -> Result<(Option<Vec<usize>>, serde_json::Value)> {
    let need_k = || -> Result<usize> {
        let k = cfg
            .k
            .ok_or_else(|| user_error(format!("method {:?} needs `k`", cfg.method)))?;
        if k > emb.len() {
            return Err(user_error(format!(
                "k = {k} exceeds the {} points",
                emb.len()
            )));
        }
        Ok(k)
    };
    Ok(match cfg.method {
        Method::Dpgmm => {
            let mut h = DpHyperparams::from_data(emb);
            h.alpha0 = cfg.alpha;
            let fit = fit_dpgmm(
                emb,
                &h,
                DpgmmConfig {
                    sweeps: cfg.sweeps,
                    burn_in: cfg.burn_in,
                    seed,
                },
            )?;
            let detail = json!({ "log_joint": fit.log_joint, "k_trace": fit.k_trace });
            (Some(fit.clustering.labels), detail)
        }
        Method::Kmeans => {
            let fit = fit_kmeans(emb, need_k()?, seed)?;
            let detail = json!({ "objective": fit.objective_trace.last() });
            (Some(fit.clustering.labels), detail)
        }
        Method::Emgmm => {
            let config = EmConfig {
                seed,
                ..EmConfig::default()
            };
            match fit_em_gmm(emb, need_k()?, config)? {
                EmOutcome::Fitted(fit) => {
                    let detail = json!({
                        "log_likelihood": fit.log_likelihood_trace.last(),
                        "weights": fit.weights,
                    });
                    (Some(fit.clustering.labels), detail)
                }
                EmOutcome::IllConditioned {
                    iteration,
                    component,
                    condition,
                } => {
                    let detail = json!({
                        "iteration": iteration,
                        "component": component,
                        "condition": condition,
                    });
                    (None, detail)
                }
            }
        }
    })
}

fn partition(cfg: &RunConfig) -> Result<()> {
    let emb = load_embedding(cfg)?;
    let d = if cfg.evaluate {
        let net = load_network(cfg)?;
        check_links("embedding", emb.len(), &net)?;
        Some(distances(cfg, &net)?)
    } else {
        None
    };
    let seed = derive_seed(cfg.seed, SEED_PARTITION, 0);
    let (labels, detail) = cluster_labels(cfg, &emb, seed)?;
    let Some(labels) = labels else {
        write_json(
            &cfg.out("partition_report.json"),
            &json!({
                "method": cfg.method,
                "seed": seed,
                "status": "ill_conditioned",
                "detail": detail,
            }),
        )?;
        println!("EM stopped on an ill-conditioned covariance: {detail}; no partition written");
        return Ok(());
    };
    let p = PartitionResult::from_labels(&labels, &emb);
    let evaluation = d.as_ref().map(|d| evaluate_partition(&p, d)).transpose()?;
    let mut out = create(&cfg.out("partition.txt"))?;
    p.write(&mut out)?;
    out.flush()?;
    let sizes: Vec<usize> = (0..p.k()).map(|r| p.members(r).count()).collect();
    write_json(
        &cfg.out("partition_report.json"),
        &json!({
            "method": cfg.method,
            "seed": seed,
            "status": "fitted",
            "k": p.k(),
            "region_sizes": sizes,
            "center_links": p.region_center_link,
            "evaluation": evaluation,
            "detail": detail,
        }),
    )?;
    print!("{:?}: K = {}", cfg.method, p.k());
    if let Some(e) = &evaluation {
        print!(
            ", mean travel time to center {:.2} s (region std {:.2} s)",
            e.overall_mean, e.region_std
        );
    }
    println!();
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct BenchRow {
    seed: u64,
    method: &'static str,
    space: &'static str,
    k: usize,
    mean_travel_time: Option<f64>,
    region_std: Option<f64>,
    status: &'static str,
}

impl BenchRow {
    fn scored(
        seed: u64,
        method: &'static str,
        space: &'static str,
        e: &PartitionEvaluation,
        k: usize,
    ) -> Self {
        Self {
            seed,
            method,
            space,
            k,
            mean_travel_time: Some(e.overall_mean),
            region_std: Some(e.region_std),
            status: "fitted",
        }
    }
}

fn bench_seed(
    emb: &Embedding,
    geo: &Embedding,
    d: &DistanceMatrix,
    cfg: &RunConfig,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    let mut h = DpHyperparams::from_data(emb);
    h.alpha0 = cfg.alpha;
    let dp = fit_dpgmm(
        emb,
        &h,
        DpgmmConfig {
            sweeps: cfg.sweeps,
            burn_in: cfg.burn_in,
            seed,
        },
    )?;
    let score = |labels: &[usize], space: &Embedding| -> Result<(PartitionEvaluation, usize)> {
        let p = PartitionResult::from_labels(labels, space);
        Ok((evaluate_partition(&p, d)?, p.k()))
    };
    let mut rows = Vec::new();
    let (e, k_dp) = score(&dp.clustering.labels, emb)?;
    rows.push(BenchRow::scored(seed, "dpgmm", "embedded", &e, k_dp));
    let k = cfg.k.unwrap_or(k_dp).min(emb.len());
    let km = fit_kmeans(emb, k, seed)?;
    let (e, kk) = score(&km.clustering.labels, emb)?;
    rows.push(BenchRow::scored(seed, "kmeans", "embedded", &e, kk));
    let km = fit_kmeans(geo, k, seed)?;
    let (e, kk) = score(&km.clustering.labels, geo)?;
    rows.push(BenchRow::scored(seed, "kmeans", "geometric", &e, kk));
    let config = EmConfig {
        seed,
        ..EmConfig::default()
    };
    rows.push(match fit_em_gmm(emb, k, config)? {
        EmOutcome::Fitted(fit) => {
            let (e, kk) = score(&fit.clustering.labels, emb)?;
            BenchRow::scored(seed, "emgmm", "embedded", &e, kk)
        }
        EmOutcome::IllConditioned { .. } => BenchRow {
            seed,
            method: "emgmm",
            space: "embedded",
            k,
            mean_travel_time: None,
            region_std: None,
            status: "ill_conditioned",
        },
    });
    Ok(rows)
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

fn bench_cluster(cfg: &RunConfig) -> Result<()> {
    let emb = load_embedding(cfg)?;
    let net = load_network(cfg)?;
    check_links("embedding", emb.len(), &net)?;
    if let Some(k) = cfg.k {
        if k > emb.len() {
            return Err(user_error(format!(
                "k = {k} exceeds the {} links",
                emb.len()
            )));
        }
    }
    let d = distances(cfg, &net)?;
    let midpoints: Vec<[f64; 2]> = net.links.links().iter().map(|l| l.midpoint).collect();
    let geo = Embedding::from_rows(&midpoints);
    let seeds: Vec<u64> = (0..cfg.bench_seeds as u64)
        .map(|i| derive_seed(cfg.seed, SEED_BENCH, i))
        .collect();
    let per_seed: Vec<Vec<BenchRow>> = seeds
        .par_iter()
        .map(|&s| bench_seed(&emb, &geo, &d, cfg, s))
        .collect::<Result<_>>()?;
    let rows: Vec<BenchRow> = per_seed.into_iter().flatten().collect();

    let mut summary = Vec::new();
    for (method, space) in [
        ("dpgmm", "embedded"),
        ("kmeans", "embedded"),
        ("kmeans", "geometric"),
        ("emgmm", "embedded"),
    ] {
        let group: Vec<&BenchRow> = rows
            .iter()
            .filter(|r| r.method == method && r.space == space)
            .collect();
        let fitted: Vec<&BenchRow> = group
            .iter()
            .copied()
            .filter(|r| r.status == "fitted")
            .collect();
        let mean_tt = mean(fitted.iter().filter_map(|r| r.mean_travel_time));
        let mean_std = mean(fitted.iter().filter_map(|r| r.region_std));
        let mean_k = mean(fitted.iter().map(|r| r.k as f64));
        println!(
            "{method:>6} {space:<9}  fitted {}/{}  K {}  travel time {}  region std {}",
            fitted.len(),
            group.len(),
            mean_k.map_or("-".into(), |v| format!("{v:.1}")),
            mean_tt.map_or("-".into(), |v| format!("{v:.2} s")),
            mean_std.map_or("-".into(), |v| format!("{v:.2} s")),
        );
        summary.push(json!({
            "method": method,
            "space": space,
            "fitted": fitted.len(),
            "runs": group.len(),
            "mean_k": mean_k,
            "mean_travel_time": mean_tt,
            "mean_region_std": mean_std,
        }));
    }
    write_json(
        &cfg.out("bench.json"),
        &json!({ "summary": summary, "rows": rows }),
    )?;
    let mut writer = csv::Writer::from_writer(create(&cfg.out("bench.csv"))?);
    for row in &rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Zipf weights over OD pairs in index order; exponent 0 is uniform.
fn zipf_demand(k: usize, exponent: f64) -> Result<ODDistribution> {
    let weights = (0..k * k)
        .map(|p| (1.0 + p as f64).powf(-exponent))
        .collect();
    Ok(ODDistribution::from_weights(k, weights)?)
}

fn gen_demand(cfg: &RunConfig) -> Result<()> {
    let emb = load_embedding(cfg)?;
    let p = load_partition(cfg, &emb)?;
    let q = match &cfg.demand_from {
        Some(path) => {
            let requests = read_requests(open(path, "cannot read requests")?)
                .map_err(bad_input("cannot parse requests", path))?;
            let trips: Vec<_> = requests.iter().map(|r| (r.origin, r.destination)).collect();
            estimate_demand(&trips, &p).map_err(bad_input("cannot estimate demand from", path))?
        }
        None => zipf_demand(p.k(), cfg.demand_skew)?,
    };
    let mut out = create(&cfg.out("demand.txt"))?;
    q.write(&mut out)?;
    out.flush()?;
    println!(
        "wrote demand over {} regions to {}",
        q.k(),
        cfg.out("demand.txt").display()
    );
    if cfg.gen_requests {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SEED_DEMAND, 0));
        let requests = synthesize_requests(
            &q,
            &p,
            cfg.rate_per_epoch,
            cfg.epoch_s,
            cfg.horizon_s,
            &mut rng,
        )
        .map_err(|e| user_error(e.to_string()))?;
        let mut out = create(&cfg.out("requests.txt"))?;
        write_requests(&requests, &mut out)?;
        out.flush()?;
        println!(
            "wrote {} requests to {}",
            requests.len(),
            cfg.out("requests.txt").display()
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct RunSummary {
    policy: Policy,
    run: usize,
    seed: u64,
    admitted: usize,
    served: usize,
    served_within_constraints: usize,
    mean_wait: Option<f64>,
    distance_per_served: Option<f64>,
}

fn policy_summary(policy: Policy, runs: &[(usize, u64, MetricsReport)]) -> serde_json::Value {
    let avg =
        |f: &dyn Fn(&MetricsReport) -> Option<f64>| mean(runs.iter().filter_map(|(_, _, m)| f(m)));
    json!({
        "policy": policy,
        "runs": runs.len(),
        "admitted": avg(&|m| Some(m.admitted as f64)),
        "served": avg(&|m| Some(m.served as f64)),
        "served_within_constraints": avg(&|m| Some(m.served_within_constraints as f64)),
        "fraction_within_constraints": avg(&|m| m.fraction_within_constraints),
        "mean_wait": avg(&|m| m.mean_wait),
        "median_wait": avg(&|m| m.median_wait),
        "mean_delay": avg(&|m| m.mean_delay),
        "distance_per_served": avg(&|m| m.distance_per_served),
        "mean_planned_per_operating_vehicle": avg(&|m| m.mean_planned_per_operating_vehicle),
        "mean_idle_vehicles": avg(&|m| m.mean_idle_vehicles),
        "suboptimal_epochs": runs.iter().map(|(_, _, m)| m.suboptimal_epochs).sum::<usize>(),
        "planned_violations": runs.iter().map(|(_, _, m)| m.planned_violations).sum::<usize>(),
        "capacity_violations": runs.iter().map(|(_, _, m)| m.capacity_violations).sum::<usize>(),
    })
}

fn simulate(cfg: &RunConfig) -> Result<()> {
    let net = load_network(cfg)?;
    let regions = if needs_regions(cfg) {
        let emb = load_embedding(cfg)?;
        check_links("embedding", emb.len(), &net)?;
        let p = load_partition(cfg, &emb)?;
        let q = load_demand(cfg, p.k())?;
        Some((p, q))
    } else {
        None
    };
    log::info!("computing all-pairs shortest paths");
    let paths = all_pairs_shortest_paths(&net.graph)?;
    let ctx = SimContext {
        graph: &net.graph,
        paths: &paths,
        partition: regions.as_ref().map(|r| &r.0),
        demand: regions.as_ref().map(|r| &r.1),
    };
    let jobs: Vec<(Policy, usize, u64)> = cfg
        .policies
        .iter()
        .flat_map(|&policy| (0..cfg.runs).map(move |i| (policy, i)))
        .map(|(policy, i)| (policy, i, derive_seed(cfg.seed, SEED_SIM, i as u64)))
        .collect();
    let outputs: Vec<_> = jobs
        .par_iter()
        .map(|&(policy, i, seed)| {
            log::info!("{} run {i} (seed {seed})", policy_name(policy));
            run(&cfg.sim_config(policy, seed), ctx).map_err(|e| user_error(e.to_string()))
        })
        .collect::<Result<_>>()?;

    let mut by_policy: Vec<(Policy, Vec<(usize, u64, MetricsReport)>)> = Vec::new();
    let mut runs = Vec::new();
    for (&(policy, i, seed), out) in jobs.iter().zip(outputs) {
        let name = policy_name(policy);
        write_json(&cfg.out(&format!("metrics_{name}_{i}.json")), &out.metrics)?;
        let mut events = create(&cfg.out(&format!("events_{name}_{i}.ndjson")))?;
        write_event_log(&out.events, &mut events)?;
        events.flush()?;
        let m = &out.metrics;
        println!(
            "{name:>11} run {i}: served {}/{} ({} within constraints), mean wait {}",
            m.served,
            m.admitted,
            m.served_within_constraints,
            m.mean_wait.map_or("-".into(), |w| format!("{w:.1} s")),
        );
        runs.push(RunSummary {
            policy,
            run: i,
            seed,
            admitted: m.admitted,
            served: m.served,
            served_within_constraints: m.served_within_constraints,
            mean_wait: m.mean_wait,
            distance_per_served: m.distance_per_served,
        });
        match by_policy.iter_mut().find(|(p, _)| *p == policy) {
            Some((_, v)) => v.push((i, seed, out.metrics)),
            None => by_policy.push((policy, vec![(i, seed, out.metrics)])),
        }
    }
    let policies: Vec<serde_json::Value> = by_policy
        .iter()
        .map(|(p, v)| policy_summary(*p, v))
        .collect();
    let field = |policy: Policy, key: &str| {
        policies
            .iter()
            .find(|s| s["policy"] == json!(policy))
            .and_then(|s| s[key].as_f64())
    };
    let ratio = |key: &str| match (
        field(Policy::Regularized, key),
        field(Policy::Baseline, key),
    ) {
        (Some(r), Some(b)) if b != 0.0 => Some(r / b),
        _ => None,
    };
    let comparison = json!({
        "mean_wait_ratio": ratio("mean_wait"),
        "served_within_constraints_ratio": ratio("served_within_constraints"),
        "distance_per_served_ratio": ratio("distance_per_served"),
    });
    if let Some(r) = comparison["mean_wait_ratio"].as_f64() {
        println!("mean wait, regularized / baseline: {r:.3}");
    }
    write_json(
        &cfg.out("summary.json"),
        &json!({ "policies": policies, "comparison": comparison, "runs": runs }),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zipf_weights_decay_by_pair_index() {
        let q = zipf_demand(2, 1.0).unwrap();
        let total: f64 = (1..=4).map(|p| 1.0 / p as f64).sum();
        for p in 0..4 {
            assert!((q.get(p) - 1.0 / (p as f64 + 1.0) / total).abs() < 1e-12);
        }
        let u = zipf_demand(3, 0.0).unwrap();
        assert!(u.probs().iter().all(|&v| (v - 1.0 / 9.0).abs() < 1e-12));
    }

    #[test]
    fn cache_key_sits_beside_the_cache() {
        assert_eq!(
            cache_key_path(Path::new("out/d.bin")),
            PathBuf::from("out/d.bin.key")
        );
    }

    #[test]
    fn missing_inputs_are_named() {
        let cfg = RunConfig {
            out_dir: PathBuf::from("/nonexistent-dir"),
            ..RunConfig::default()
        };
        let err = plan(Command::Partition, &cfg).check().unwrap_err();
        assert!(err.downcast_ref::<UserError>().is_some());
        assert!(
            err.to_string().contains("/nonexistent-dir/embedding.txt"),
            "{err}"
        );
    }
}
