use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use astopo_core::analytics::{
    collector_ablation, collector_orderings, connectivity_stats, group_entropy, node_entropy, normalized_entropy_from,
    positive_union_edges, posterior_predictive_check, q_histogram, GroupMap,
};
use astopo_core::evaluation::{
    log_q, naive_reconstruction, ranking_auc, score_reconstruction, threshold_reconstruction, EdgePosteriors,
    EvalError, Reconstruction, Score,
};
use astopo_core::inference::{
    class_posteriors, em_fit, pair_posteriors, write_class_posteriors, EmOptions, ModelFile, ModelParams,
};
use astopo_core::ingest::parse_path_sources;
use astopo_core::observation::{compact_classes, count_observations};
use astopo_core::simulator::{generate_ground_truth, GraphModel, SimConfig};
use astopo_core::snapshot::{bfs_levels, build_all};
use clap::Args;

use crate::artifacts::{self as art, Header};
use crate::settings::{pick, ConfigFile, Resolved};
use crate::{Cli, Command};

const DEFAULT_TAUS: [f64; 3] = [0.1, 0.5, 0.9];

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    nodes: Option<usize>,
    /// `preferential` or `uniform`.
    #[arg(long)]
    graph: Option<String>,
    /// Edges added per node by preferential attachment.
    #[arg(long)]
    attach: Option<usize>,
    /// Edge probability of the uniform model.
    #[arg(long)]
    density: Option<f64>,
    #[arg(long)]
    collectors: Option<usize>,
    #[arg(long)]
    periods: Option<usize>,
    #[arg(long)]
    p_miss: Option<f64>,
    #[arg(long)]
    p_false_edge: Option<f64>,
    #[arg(long)]
    p_reroute: Option<f64>,
}

struct Ctx {
    dir: PathBuf,
    cfg: ConfigFile,
    seed: u64,
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    if let Some(w) = cli.workers.map_or_else(|| cfg.get::<usize>("workers"), |w| Ok(Some(w)))? {
        if w == 0 {
            bail!("--workers must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global().context("starting worker pool")?;
    }
    let seed = pick(cli.seed, &cfg, "seed", 0)?;
    fs::create_dir_all(&cli.dir).with_context(|| format!("creating {}", cli.dir.display()))?;
    let ctx = Ctx { dir: cli.dir, cfg, seed };
    match cli.command {
        Command::Count { inputs } => count(&ctx, inputs),
        Command::Fit { tol, max_iters } => fit(&ctx, tol, max_iters),
        Command::Entropy { groups, min_group_size } => entropy(&ctx, groups, min_group_size),
        Command::Ppc { replicates } => ppc(&ctx, replicates),
        Command::Eval { reconstructions, naive, truth } => eval(&ctx, reconstructions, naive, truth),
        Command::Threshold { taus } => threshold(&ctx, taus),
        Command::Ablate { orderings } => ablate(&ctx, orderings),
        Command::Simulate(args) => simulate(&ctx, args),
        Command::Report { bins } => report(&ctx, bins),
    }
}

fn has_glob_meta(s: &str) -> bool {
    s.contains(['*', '?', '['])
}

fn expand_inputs(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for pat in patterns {
        if has_glob_meta(pat) {
            let mut matched: Vec<PathBuf> = glob::glob(pat)
                .with_context(|| format!("bad glob '{pat}'"))?
                .collect::<Result<_, _>>()
                .with_context(|| format!("expanding '{pat}'"))?;
            if matched.is_empty() {
                bail!("'{pat}' matches no files");
            }
            matched.sort();
            out.extend(matched);
        } else {
            out.push(PathBuf::from(pat));
        }
    }
    Ok(out)
}

fn em_options(ctx: &Ctx, tol: Option<f64>, max_iters: Option<usize>, r: &mut Resolved) -> Result<EmOptions> {
    let d = EmOptions::default();
    let opts = EmOptions {
        tol: pick(tol, &ctx.cfg, "tol", d.tol)?,
        max_iters: pick(max_iters, &ctx.cfg, "max_iters", d.max_iters)?,
    };
    if opts.tol.is_nan() || opts.tol < 0.0 || opts.max_iters == 0 {
        bail!("need tol >= 0 and max_iters >= 1");
    }
    r.set("tol", opts.tol).set("max_iters", opts.max_iters);
    Ok(opts)
}

fn count(ctx: &Ctx, inputs: Vec<String>) -> Result<()> {
    let patterns = if inputs.is_empty() { ctx.cfg.list::<String>("inputs")?.unwrap_or_default() } else { inputs };
    if patterns.is_empty() {
        bail!("no path files given");
    }
    let files = expand_inputs(&patterns)?;
    let readers = files.iter().map(|p| art::open_input(p)).collect::<Result<Vec<_>>>()?;
    let set = parse_path_sources(readers).map_err(|(i, e)| anyhow::anyhow!("{}: {e}", files[i].display()))?;
    let snaps = build_all(&set).context("building snapshots")?;
    let pruned: usize = snaps.iter().map(|s| s.pruned).sum();
    let leveled: Vec<_> = snaps
        .into_iter()
        .map(|s| {
            let lv = bfs_levels(&s);
            (s, lv)
        })
        .collect();
    let store = count_observations(&leveled, set.registry.len(), set.num_collectors(), set.num_periods())?;
    let comp = compact_classes(&store)?;

    let mut r = Resolved::default();
    r.set("stage", "count");
    let h = Header::new("count", &r, &files)?;
    let d = &ctx.dir;
    h.write_file(&d.join(art::NODES), |o| {
        for (i, a) in set.registry.asns().iter().enumerate() {
            writeln!(o, "{i} {a}")?;
        }
        Ok(())
    })?;
    h.write_file(&d.join(art::COLLECTORS), |o| {
        for (i, l) in set.collectors.iter().enumerate() {
            writeln!(o, "{i} {l}")?;
        }
        Ok(())
    })?;
    h.write_file(&d.join(art::PERIODS), |o| {
        for (i, l) in set.periods.iter().enumerate() {
            writeln!(o, "{i} {l}")?;
        }
        Ok(())
    })?;
    h.write_file(&d.join(art::PAIRS), |o| store.write(o))?;
    h.write_file(&d.join(art::CLASSES), |o| comp.table.write(o))?;
    h.write_file(&d.join(art::COUNT_SUMMARY), |o| {
        writeln!(o, "records {}", set.records.len())?;
        writeln!(o, "dropped_loops {}", set.dropped_loops)?;
        writeln!(o, "nodes {}", set.registry.len())?;
        writeln!(o, "collectors {}", set.num_collectors())?;
        writeln!(o, "periods {}", set.num_periods())?;
        writeln!(o, "snapshots {}", leveled.len())?;
        writeln!(o, "pruned_nodes {pruned}")?;
        writeln!(o, "total_pairs {}", comp.table.total_pairs())?;
        writeln!(o, "observed_pairs {}", comp.table.observed_pairs())?;
        writeln!(o, "classes {}", comp.table.len())
    })?;
    Ok(())
}

fn fit(ctx: &Ctx, tol: Option<f64>, max_iters: Option<usize>) -> Result<()> {
    let (cp, table) = art::load_classes(&ctx.dir)?;
    let mut r = Resolved::default();
    r.set("stage", "fit");
    let opts = em_options(ctx, tol, max_iters, &mut r)?;
    let model = em_fit(&table, &ModelParams::initial(&table), opts)?;
    if !model.converged {
        eprintln!("warning: EM stopped after {} iterations without converging", model.iterations);
    }
    let h = Header::new("fit", &r, &[cp])?;
    h.write_file(&ctx.dir.join(art::MODEL), |o| ModelFile::from(&model).write(o))?;
    h.write_file(&ctx.dir.join(art::CLASS_Q), |o| write_class_posteriors(&model.class_posteriors, o))?;
    h.write_file(&ctx.dir.join(art::TRAJECTORY), |o| {
        for (i, ld) in model.trajectory.iter().enumerate() {
            writeln!(o, "{i} {ld:.16e}")?;
        }
        Ok(())
    })?;
    Ok(())
}

fn entropy(ctx: &Ctx, groups: Option<PathBuf>, min_group_size: Option<usize>) -> Result<()> {
    let (cp, table) = art::load_classes(&ctx.dir)?;
    let (mp, model) = art::load_model(&ctx.dir)?;
    let (pp, store) = art::load_pairs(&ctx.dir)?;
    let (np, registry) = art::load_registry(&ctx.dir)?;
    if registry.len() != store.num_nodes() {
        bail!("{} lists {} nodes but {} has {}", art::NODES, registry.len(), art::PAIRS, store.num_nodes());
    }
    let params = &model.params;
    let class_q = class_posteriors(&table, params);
    let h_norm = normalized_entropy_from(&table, &class_q, params.rho)?;
    let pair_q = pair_posteriors(&store, params);
    let node_h = node_entropy(&store, &pair_q, params.rho)?;
    let conn = connectivity_stats(store.num_nodes(), &positive_union_edges(&store));

    let groups = match groups {
        Some(p) => Some(p),
        None => ctx.cfg.raw("groups").map(PathBuf::from),
    };
    let min_size = pick(min_group_size, &ctx.cfg, "min_group_size", 1)?;
    let mut r = Resolved::default();
    r.set("stage", "entropy").set("min_group_size", min_size);
    let mut inputs = vec![cp, mp, pp, np];
    let group_map = match &groups {
        Some(p) => {
            inputs.push(p.clone());
            Some(GroupMap::read(art::open_input(p)?, &registry).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => None,
    };
    let h = Header::new("entropy", &r, &inputs)?;
    h.write_file(&ctx.dir.join(art::ENTROPY_SUMMARY), |o| {
        writeln!(o, "h_norm {h_norm:.16e}")?;
        writeln!(o, "nodes {}", store.num_nodes())?;
        writeln!(o, "positive_component_size {}", conn.component_size)?;
        writeln!(o, "centrality_iterations {}", conn.iterations)?;
        writeln!(o, "centrality_converged {}", conn.converged as u8)?;
        if let Some(g) = &group_map {
            writeln!(o, "mapped_nodes {}", g.mapped())?;
            writeln!(o, "unmapped_nodes {}", g.unmapped())?;
        }
        Ok(())
    })?;
    h.write_file(&ctx.dir.join(art::NODE_ENTROPY), |o| {
        writeln!(o, "asn\tentropy\tdegree\tcentrality")?;
        for (i, a) in registry.asns().iter().enumerate() {
            writeln!(o, "{a}\t{:.16e}\t{}\t{:.16e}", node_h[i], conn.degree[i], conn.centrality[i])?;
        }
        Ok(())
    })?;
    if let Some(g) = &group_map {
        let ranked = group_entropy(&node_h, g, min_size);
        h.write_file(&ctx.dir.join(art::GROUP_ENTROPY), |o| {
            writeln!(o, "label\tmean_entropy\tmembers")?;
            for e in &ranked {
                writeln!(o, "{}\t{:.16e}\t{}", e.label, e.mean, e.members)?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

fn ppc(ctx: &Ctx, replicates: Option<usize>) -> Result<()> {
    let (pp, store) = art::load_pairs(&ctx.dir)?;
    let (mp, model) = art::load_model(&ctx.dir)?;
    let replicates = pick(replicates, &ctx.cfg, "replicates", 1)?;
    if replicates == 0 {
        bail!("replicates must be at least 1");
    }
    let pair_q = pair_posteriors(&store, &model.params);
    let hist = posterior_predictive_check(&store, &pair_q, &model.params, ctx.seed, replicates);
    let mut r = Resolved::default();
    r.set("stage", "ppc").set("seed", ctx.seed).set("replicates", replicates);
    let h = Header::new("ppc", &r, &[pp, mp])?;
    h.write_file(&ctx.dir.join(art::PPC), |o| {
        let zero = hist.zero_bin();
        let frac = if hist.samples > 0 { hist.counts[zero] as f64 / hist.samples as f64 } else { f64::NAN };
        writeln!(
            o,
            "# samples {} modal_bin {} zero_bin {} zero_bin_fraction {frac:.6}",
            hist.samples,
            hist.modal_bin(),
            zero
        )?;
        writeln!(o, "bin_lower bin_upper count")?;
        hist.write(o)
    })?;
    Ok(())
}

fn file_label(p: &Path) -> String {
    p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn eval(ctx: &Ctx, files: Vec<PathBuf>, naive: bool, truth: Option<PathBuf>) -> Result<()> {
    if files.is_empty() && !naive && truth.is_none() {
        bail!("nothing to score; pass edge lists, --naive or --truth");
    }
    let (pp, store) = art::load_pairs(&ctx.dir)?;
    let (mp, model) = art::load_model(&ctx.dir)?;
    let (np, registry) = art::load_registry(&ctx.dir)?;
    let post = EdgePosteriors::new(&store, &model.params)?;

    let mut recs = Vec::new();
    for f in &files {
        let rec = Reconstruction::read(art::open_input(f)?, &registry, file_label(f))
            .with_context(|| format!("parsing {}", f.display()))?;
        recs.push(rec);
    }
    if naive {
        recs.push(naive_reconstruction(&store));
    }
    let truth_rec = match &truth {
        Some(t) => Some(
            Reconstruction::read(art::open_input(t)?, &registry, "truth")
                .with_context(|| format!("parsing {}", t.display()))?,
        ),
        None => None,
    };
    let auc = match &truth_rec {
        Some(t) => Some(ranking_auc(&post, t)?),
        None => None,
    };
    if let Some(t) = truth_rec {
        recs.push(t);
    }

    let mut rows = Vec::new();
    for rec in &recs {
        match score_reconstruction(rec, &post) {
            Ok(s) => rows.push(s),
            Err(EvalError::EmptyReconstruction(label)) => {
                eprintln!("warning: '{label}' has no scorable edges; precision and recall are undefined");
                let (lq, clamped) = log_q(rec, &post)?;
                rows.push(Score {
                    label,
                    log_q: lq,
                    precision: f64::NAN,
                    recall: f64::NAN,
                    edges_scored: 0,
                    edges_unmatched: rec.unmatched,
                    clamped,
                });
            }
            Err(e) => return Err(e.into()),
        }
    }
    let mut r = Resolved::default();
    r.set("stage", "eval").set("naive", naive);
    let mut inputs = vec![pp, mp, np];
    inputs.extend(files.iter().cloned());
    inputs.extend(truth.iter().cloned());
    let h = Header::new("eval", &r, &inputs)?;
    h.write_file(&ctx.dir.join(art::EVAL), |o| {
        writeln!(o, "{}", Score::HEADER)?;
        for s in &rows {
            s.write_row(&mut *o)?;
        }
        if let Some(a) = auc {
            writeln!(o, "# ranking_auc {a:.10}")?;
        }
        Ok(())
    })?;
    Ok(())
}

fn threshold(ctx: &Ctx, taus: Vec<f64>) -> Result<()> {
    let taus =
        if taus.is_empty() { ctx.cfg.list::<f64>("taus")?.unwrap_or_else(|| DEFAULT_TAUS.to_vec()) } else { taus };
    if let Some(t) = taus.iter().find(|&&t| !(t > 0.0 && t < 1.0)) {
        bail!("threshold {t} is outside (0, 1)");
    }
    let (pp, store) = art::load_pairs(&ctx.dir)?;
    let (mp, model) = art::load_model(&ctx.dir)?;
    let (np, registry) = art::load_registry(&ctx.dir)?;
    let post = EdgePosteriors::new(&store, &model.params)?;
    for &tau in &taus {
        let rec = threshold_reconstruction(&post, tau)?;
        let mut r = Resolved::default();
        r.set("stage", "threshold").set("tau", tau);
        let h = Header::new("threshold", &r, &[pp.clone(), mp.clone(), np.clone()])?;
        h.write_file(&ctx.dir.join(art::threshold_file(tau)), |o| rec.write(&registry, o))?;
    }
    Ok(())
}

fn ablate(ctx: &Ctx, orderings: Option<usize>) -> Result<()> {
    let (cp, table) = art::load_classes(&ctx.dir)?;
    let count = pick(orderings, &ctx.cfg, "orderings", 10)?;
    if count == 0 {
        bail!("orderings must be at least 1");
    }
    let mut r = Resolved::default();
    r.set("stage", "ablate").set("seed", ctx.seed).set("orderings", count);
    let opts = em_options(ctx, None, None, &mut r)?;
    let ords = collector_orderings(table.num_collectors(), count, ctx.seed);
    let curve = collector_ablation(&table, &ords, None, opts)?;
    let h = Header::new("ablate", &r, &[cp])?;
    h.write_file(&ctx.dir.join(art::ABLATION_POINTS), |o| {
        for (i, ord) in ords.iter().enumerate() {
            let s: Vec<String> = ord.iter().map(|k| k.to_string()).collect();
            writeln!(o, "# ordering {i}: {}", s.join(" "))?;
        }
        curve.write_points(o)
    })?;
    h.write_file(&ctx.dir.join(art::ABLATION_SUMMARY), |o| curve.write_summary(o))?;
    Ok(())
}

fn simulate(ctx: &Ctx, a: SimulateArgs) -> Result<()> {
    let d = SimConfig::default();
    let c = &ctx.cfg;
    let graph_kind = match a.graph {
        Some(g) => g,
        None => c.raw("graph").unwrap_or("preferential").to_string(),
    };
    let graph = match graph_kind.as_str() {
        "preferential" => GraphModel::PreferentialAttachment { m: pick(a.attach, c, "attach", 2)? },
        "uniform" => GraphModel::Uniform { density: pick(a.density, c, "density", 0.05)? },
        other => bail!("unknown graph model '{other}' (expected preferential or uniform)"),
    };
    let cfg = SimConfig {
        nodes: pick(a.nodes, c, "nodes", d.nodes)?,
        graph,
        collectors: pick(a.collectors, c, "collectors", d.collectors)?,
        periods: pick(a.periods, c, "periods", d.periods)?,
        p_miss: pick(a.p_miss, c, "p_miss", d.p_miss)?,
        p_false_edge: pick(a.p_false_edge, c, "p_false_edge", d.p_false_edge)?,
        p_reroute: pick(a.p_reroute, c, "p_reroute", d.p_reroute)?,
        seed: ctx.seed,
    };
    let sim = generate_ground_truth(&cfg)?;
    let mut r = Resolved::default();
    r.set("stage", "simulate")
        .set("nodes", cfg.nodes)
        .set("graph", cfg.graph)
        .set("collectors", cfg.collectors)
        .set("periods", cfg.periods)
        .set("p_miss", cfg.p_miss)
        .set("p_false_edge", cfg.p_false_edge)
        .set("p_reroute", cfg.p_reroute)
        .set("seed", cfg.seed);
    let h = Header::new("simulate", &r, &[])?;
    h.write_file(&ctx.dir.join(art::SIM_PATHS), |o| sim.write_paths(o))?;
    h.write_file(&ctx.dir.join(art::SIM_TRUTH), |o| sim.write_truth(o))?;
    h.write_file(&ctx.dir.join(art::SIM_MANIFEST), |o| sim.write_manifest(o))?;
    Ok(())
}

fn report(ctx: &Ctx, bins: Option<usize>) -> Result<()> {
    let (cp, table) = art::load_classes(&ctx.dir)?;
    let (mp, model) = art::load_model(&ctx.dir)?;
    let bins = pick(bins, &ctx.cfg, "bins", 100)?;
    if bins == 0 {
        bail!("bins must be at least 1");
    }
    let params = &model.params;
    let class_q = class_posteriors(&table, params);
    let hist = q_histogram(&table, &class_q, bins);
    let h_norm = normalized_entropy_from(&table, &class_q, params.rho)?;
    let mut r = Resolved::default();
    r.set("stage", "report").set("bins", bins);
    let h = Header::new("report", &r, &[cp, mp])?;
    h.write_file(&ctx.dir.join(art::Q_HISTOGRAM), |o| {
        writeln!(o, "bin_lower bin_upper pairs")?;
        hist.write(o)
    })?;
    let total = hist.total as f64;
    h.write_file(&ctx.dir.join(art::REPORT), |o| {
        writeln!(o, "nodes {}", table.num_nodes())?;
        writeln!(o, "total_pairs {}", table.total_pairs())?;
        writeln!(o, "observed_pairs {}", table.observed_pairs())?;
        writeln!(o, "classes {}", table.len())?;
        writeln!(o, "iterations {}", model.iterations)?;
        writeln!(o, "converged {}", model.converged as u8)?;
        writeln!(o, "rho {:.16e}", params.rho)?;
        for k in 0..params.collectors() {
            writeln!(o, "alpha_{k} {:.16e}", params.alpha[k])?;
            writeln!(o, "beta_{k} {:.16e}", params.beta[k])?;
        }
        writeln!(o, "h_norm {h_norm:.16e}")?;
        writeln!(o, "fraction_q_below_0.1 {:.10}", hist.below_low as f64 / total)?;
        writeln!(o, "fraction_q_0.1_to_0.9 {:.10}", hist.intermediate as f64 / total)?;
        writeln!(o, "fraction_q_above_0.9 {:.10}", (hist.total - hist.below_low - hist.intermediate) as f64 / total)
    })?;
    Ok(())
}
