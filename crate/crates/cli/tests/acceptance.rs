//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use astopo_core::analytics::{collector_ablation, collector_orderings, normalized_entropy, posterior_predictive_check};
use astopo_core::evaluation::{
    log_q, naive_reconstruction, ranking_auc, score_reconstruction, threshold_reconstruction, EdgePosteriors,
    Reconstruction,
};
use astopo_core::inference::{fit, log_density, posterior_edge_prob, EmOptions, FittedModel, ModelParams, RATE_EPS};
use astopo_core::ingest::{parse_paths, Asn, PathSet};
use astopo_core::observation::{compact_classes, ClassTable, PairStore};
use astopo_core::pipeline::observe;
use astopo_core::simulator::{collector_label, generate_ground_truth, node_asn, SimConfig, Simulation};
use num::{BigInt, BigRational, Float, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 10;

type Check = Result<String, String>;
type Criterion = (&'static str, Option<Duration>, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- helpers

struct Run {
    sim: Simulation,
    set: PathSet,
    store: PairStore,
    table: ClassTable,
    model: FittedModel,
}

fn run_sim(cfg: &SimConfig) -> Run {
    let sim = generate_ground_truth(cfg).expect("simulation");
    let set = parse_paths(sim.paths_text().as_bytes()).expect("simulated paths parse");
    pipeline(sim, set)
}

fn pipeline(sim: Simulation, set: PathSet) -> Run {
    let store = observe(&set).expect("counting");
    let table = compact_classes(&store).expect("compaction").table;
    let model = fit(&table).expect("fit");
    Run { sim, set, store, table, model }
}

/// Same simulation restricted to its first period.
fn first_period(run: &Run) -> Run {
    let text: String =
        run.sim.paths_text().lines().filter(|l| l.split('\t').nth(1) == Some("0")).map(|l| format!("{l}\n")).collect();
    let set = parse_paths(text.as_bytes()).expect("subset parses");
    pipeline(run.sim.clone(), set)
}

/// Planted edges in registry ids, plus the count of edges touching nodes
/// that never appeared on any path.
fn truth(run: &Run) -> (Reconstruction, usize) {
    let reg = &run.set.registry;
    let mut missing = 0;
    let edges: Vec<_> = run
        .sim
        .edges
        .iter()
        .filter_map(|&(a, b)| match (reg.get(node_asn(a)), reg.get(node_asn(b))) {
            (Some(x), Some(y)) => Some((x, y)),
            _ => {
                missing += 1;
                None
            }
        })
        .collect();
    (Reconstruction::from_edges("truth", edges), missing)
}

fn params_for(rng: &mut ChaCha8Rng, m: usize) -> ModelParams {
    let alpha = (0..m).map(|_| rng.random_range(0.3..1.0)).collect();
    let beta = (0..m).map(|_| rng.random_range(0.0..0.3)).collect();
    ModelParams::new(alpha, beta, rng.random_range(0.001..0.5)).unwrap()
}

/// Exact `mant * 2^exp`; every finite f64 is one.
#[derive(Clone)]
struct Dyadic {
    mant: BigInt,
    exp: i64,
}

impl Dyadic {
    fn of(x: f64) -> Self {
        let (m, e, sign) = x.integer_decode();
        Self { mant: BigInt::from(sign) * BigInt::from(m), exp: e as i64 }
    }

    fn mul(&self, o: &Self) -> Self {
        Self { mant: &self.mant * &o.mant, exp: self.exp + o.exp }
    }

    fn add(&self, o: &Self) -> Self {
        let exp = self.exp.min(o.exp);
        let lift = |d: &Self| &d.mant << (d.exp - exp) as usize;
        Self { mant: lift(self) + lift(o), exp }
    }

    fn neg(&self) -> Self {
        Self { mant: -&self.mant, exp: self.exp }
    }

    fn pow(&self, e: u16) -> Self {
        Self { mant: num::pow(self.mant.clone(), e as usize), exp: self.exp * e as i64 }
    }

    /// `self / (self + other)` as an exact rational.
    fn share(&self, other: &Self) -> BigRational {
        let sum = self.add(other);
        let exp = self.exp.min(sum.exp);
        let lift = |d: &Self| &d.mant << (d.exp - exp) as usize;
        BigRational::new(lift(self), lift(&sum))
    }
}

/// Edge posterior from the unstabilized product form, in exact arithmetic.
fn exact_q(v: &[u16], p: &ModelParams) -> f64 {
    let one = Dyadic::of(1.0);
    let rho = Dyadic::of(p.rho);
    let mut on = rho.clone();
    let mut off = one.add(&rho.neg());
    for k in 0..p.alpha.len() {
        let (a, b) = (Dyadic::of(p.alpha[k]), Dyadic::of(p.beta[k]));
        let (e, f) = (v[2 * k], v[2 * k + 1]);
        on = on.mul(&a.pow(e)).mul(&one.add(&a.neg()).pow(f));
        off = off.mul(&b.pow(e)).mul(&one.add(&b.neg()).pow(f));
    }
    assert!(!on.add(&off).mant.is_zero());
    on.share(&off).to_f64().expect("representable")
}

/// Log-density by enumerating every pair, written independently of the library.
fn pairwise_log_density(store: &PairStore, p: &ModelParams) -> f64 {
    let n = store.num_nodes() as u32;
    let m = store.num_collectors();
    let zero = vec![0u16; 2 * m];
    let mut total = 0.0;
    for a in 0..n {
        for b in a + 1..n {
            let v = store.get(a, b).unwrap_or(&zero);
            let mut la = p.rho.ln();
            let mut lb = (1.0 - p.rho).ln();
            for k in 0..m {
                let (e, f) = (v[2 * k] as f64, v[2 * k + 1] as f64);
                la += e * p.alpha[k].ln() + f * (1.0 - p.alpha[k]).ln();
                lb += e * p.beta[k].ln() + f * (1.0 - p.beta[k]).ln();
            }
            let hi = la.max(lb);
            total += hi + ((la - hi).exp() + (lb - hi).exp()).ln();
        }
    }
    total
}

fn random_store(rng: &mut ChaCha8Rng) -> PairStore {
    let n = rng.random_range(2..=300usize);
    let m = rng.random_range(1..=5usize);
    let t = rng.random_range(1..=5u16);
    let fill = rng.random_range(0.0..0.5);
    let mut rows = Vec::new();
    for a in 0..n as u32 {
        for b in a + 1..n as u32 {
            if rng.random::<f64>() >= fill {
                continue;
            }
            let mut v = Vec::with_capacity(2 * m);
            for _ in 0..m {
                let e = rng.random_range(0..=t);
                let f = rng.random_range(0..=t - e);
                v.extend([e, f]);
            }
            if v.iter().any(|&x| x > 0) {
                rows.push(((a, b), v));
            }
        }
    }
    PairStore::from_rows(m, t as usize, n, rows).unwrap()
}

fn random_sim_config(rng: &mut ChaCha8Rng, seed: u64) -> SimConfig {
    SimConfig {
        nodes: rng.random_range(20..=300),
        collectors: rng.random_range(1..=5),
        periods: rng.random_range(1..=5),
        p_miss: rng.random_range(0.0..0.3),
        p_false_edge: rng.random_range(0.0..1.0),
        p_reroute: rng.random_range(0.0..0.5),
        seed,
        ..SimConfig::default()
    }
}

// ---------------------------------------------------------------- criteria

fn oracle_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let m = rng.random_range(1..=5);
        let t = rng.random_range(1..=12u16);
        let p = params_for(&mut rng, m);
        let mut v = Vec::with_capacity(2 * m);
        for _ in 0..m {
            let e = rng.random_range(0..=t);
            v.extend([e, rng.random_range(0..=t - e)]);
        }
        let q = posterior_edge_prob(&v, &p);
        let oracle = exact_q(&v, &p);
        worst = worst.max((q - oracle).abs());
        if v.iter().all(|&x| x == 0) {
            ensure(q == p.rho, || format!("zero vector gave {q}, rho {}", p.rho))?;
        }
    }
    ensure(worst <= 1e-12, || format!("max |Q - exact| = {worst:.3e}"))?;
    Ok(format!("1000 vectors, max |Q - exact| = {worst:.2e}"))
}

fn class_pair_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    let mut stores: Vec<PairStore> = (0..10).map(|_| random_store(&mut rng)).collect();
    for seed in 0..10 {
        let cfg = random_sim_config(&mut rng, seed);
        let sim = generate_ground_truth(&cfg).map_err(|e| e.to_string())?;
        stores.push(observe(&parse_paths(sim.paths_text().as_bytes()).unwrap()).unwrap());
    }
    for store in &stores {
        let table = compact_classes(store).map_err(|e| e.to_string())?.table;
        let n = store.num_nodes();
        let mult: u64 = table.classes().iter().map(|c| c.multiplicity).sum();
        ensure(mult == (n * (n - 1) / 2) as u64, || format!("multiplicities sum to {mult} for N = {n}"))?;
        for _ in 0..3 {
            let p = params_for(&mut rng, store.num_collectors());
            let by_class = log_density(&table, &p);
            let by_pair = pairwise_log_density(store, &p);
            let rel = (by_class - by_pair).abs() / by_pair.abs().max(f64::MIN_POSITIVE);
            worst = worst.max(rel);
        }
        instances += 1;
    }
    ensure(worst <= 1e-9, || format!("max relative difference {worst:.3e}"))?;
    Ok(format!("{instances} instances (N <= 300), max relative difference {worst:.2e}"))
}

fn em_ascent() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_drop: f64 = 0.0;
    let mut max_iters = 0;
    let mut fits = 0;
    let mut check = |m: &FittedModel, synthetic: bool, what: &str| -> Result<(), String> {
        for w in m.trajectory.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
        ensure(worst_drop <= 1e-9, || format!("{what}: log-density fell by {worst_drop:.3e}"))?;
        if synthetic {
            ensure(m.converged && m.iterations <= 500, || {
                format!("{what}: not converged in {} iterations", m.iterations)
            })?;
            max_iters = max_iters.max(m.iterations);
        }
        fits += 1;
        Ok(())
    };
    for i in 0..10 {
        let store = random_store(&mut rng);
        let table = compact_classes(&store).unwrap().table;
        check(&fit(&table).map_err(|e| e.to_string())?, false, &format!("random table {i}"))?;
    }
    for seed in 0..SEEDS {
        let run = run_sim(&SimConfig { seed, ..SimConfig::default() });
        check(&run.model, true, &format!("default suite seed {seed}"))?;
        check(&first_period(&run).model, true, &format!("single-period suite seed {seed}"))?;
        let cfg = random_sim_config(&mut rng, seed);
        check(&run_sim(&cfg).model, true, &format!("random suite seed {seed}"))?;
    }
    Ok(format!("{fits} fits, largest drop {worst_drop:.2e}, synthetic fits converged in <= {max_iters} iterations"))
}

fn micro_instance() -> Check {
    // a..f are ASes 1..6; collectors r1 and r2 peer through ASes 65001 and 65002.
    let text = "\
r1\tt1\t65001 1 2 3 5
r1\tt1\t65001 1 6
r1\tt2\t65001 1 2 3 5 6
r2\tt1\t65002 5 3 2 1
r2\tt1\t65002 5 4
r2\tt2\t65002 5 3 2 1
r2\tt2\t65002 5 4
r2\tt2\t65002 5 6
";
    let set = parse_paths(text.as_bytes()).map_err(|e| e.to_string())?;
    let store = observe(&set).map_err(|e| e.to_string())?;
    let id = |asn: u32| set.registry.get(Asn(asn)).unwrap();
    let vec_of = |a: u32, b: u32| {
        let (x, y) = (id(a).min(id(b)), id(a).max(id(b)));
        store.get(x, y).map(<[u16]>::to_vec).unwrap_or_else(|| vec![0; 4])
    };
    let (a, b, c, d, e) = (1, 2, 3, 4, 5);
    for (x, y) in [(a, b), (b, c), (c, e)] {
        let v = vec_of(x, y);
        ensure(v == [2, 0, 2, 0], || format!("pair ({x},{y}) has {v:?}, expected E=2,F=0 for both collectors"))?;
    }
    for (x, y) in [(a, c), (a, e), (b, e)] {
        let v = vec_of(x, y);
        ensure(v == [0, 2, 0, 2], || format!("pair ({x},{y}) has {v:?}, expected F=2 for both collectors"))?;
    }
    for (x, y) in [(b, d), (c, d)] {
        let v = vec_of(x, y);
        ensure(v == [0, 0, 0, 0], || format!("pair ({x},{y}) has {v:?}, expected no observations"))?;
    }
    let table = compact_classes(&store).unwrap().table;
    let model = fit(&table).map_err(|e| e.to_string())?;
    let post = EdgePosteriors::new(&store, &model.params).map_err(|e| e.to_string())?;
    let rho = model.params.rho;
    for (x, y) in [(b, d), (c, d)] {
        let q = post.q(id(x), id(y));
        ensure(q == rho, || format!("Q({x},{y}) = {q} but rho = {rho}"))?;
    }
    ensure(model.class_posteriors[table.zero_class()] == rho, || "zero class posterior differs from rho".into())?;
    Ok(format!("counts match; Q(b,d) = Q(c,d) = rho = {rho:.6}"))
}

fn synthetic_recovery() -> Check {
    let mut aucs = Vec::new();
    let mut worst_alpha: f64 = 0.0;
    let mut worst_beta_ratio: f64 = 0.0;
    let mut skipped = 0;
    for seed in 0..SEEDS {
        let cfg = SimConfig {
            nodes: 200,
            collectors: 5,
            periods: 5,
            p_miss: 0.05,
            p_false_edge: 0.001,
            p_reroute: 0.1,
            seed,
            ..SimConfig::default()
        };
        let run = run_sim(&cfg);
        let post = EdgePosteriors::new(&run.store, &run.model.params).unwrap();
        let (t, missing) = truth(&run);
        skipped += missing;
        aucs.push(ranking_auc(&post, &t).map_err(|e| e.to_string())?);
        for (idx, label) in run.set.collectors.iter().enumerate() {
            let k = (0..cfg.collectors).find(|&k| &collector_label(k) == label).unwrap();
            let rates = run.sim.rates[k];
            let tp = rates.true_positive.ok_or(format!("seed {seed} {label}: no true-edge opportunities"))?;
            let fp = rates.false_positive.ok_or(format!("seed {seed} {label}: no non-edge opportunities"))?;
            let (a, b) = (run.model.params.alpha[idx], run.model.params.beta[idx]);
            worst_alpha = worst_alpha.max((a - tp).abs());
            ensure((a - tp).abs() <= 0.05, || format!("seed {seed} {label}: alpha {a:.4} vs empirical {tp:.4}"))?;
            // A zero empirical rate can only be matched at the rate floor.
            let bound = (10.0 * fp).max(RATE_EPS);
            ensure(b <= bound, || format!("seed {seed} {label}: beta {b:.3e} above 10 x empirical {fp:.3e}"))?;
            if fp > 0.0 {
                worst_beta_ratio = worst_beta_ratio.max(b / fp);
            }
        }
    }
    let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
    ensure(mean >= 0.95, || format!("mean AUC {mean:.4}"))?;
    Ok(format!(
        "mean AUC {mean:.4} (min {:.4}), max |alpha - empirical| {worst_alpha:.4}, max beta/empirical {worst_beta_ratio:.2}, {skipped} planted edges on unseen nodes",
        aucs.iter().cloned().fold(f64::INFINITY, f64::min)
    ))
}

fn entropy_behaviour() -> Check {
    let mut violations = Vec::new();
    let mut summary = String::new();
    for seed in 0..SEEDS {
        let run = run_sim(&SimConfig { seed, ..SimConfig::default() });
        let m = run.table.num_collectors();
        let ords = collector_orderings(m, 10, seed);
        let curve = collector_ablation(&run.table, &ords, None, EmOptions::default()).map_err(|e| e.to_string())?;
        let monotone = curve.mean.windows(2).all(|w| w[1] <= w[0]);
        let h5 = normalized_entropy(&run.model, &run.table).unwrap();
        let one = first_period(&run);
        let h1 = normalized_entropy(&one.model, &one.table).unwrap();
        if !(monotone && h5 <= h1) {
            violations.push(format!("seed {seed}: monotone {monotone}, T=5 {h5:.4} vs T=1 {h1:.4}"));
        }
        if seed == 0 {
            let means: Vec<String> = curve.mean.iter().map(|h| format!("{h:.3}")).collect();
            summary = format!("seed 0 mean h_norm by k [{}], T=5 {h5:.3} vs T=1 {h1:.3}", means.join(", "));
        }
    }
    ensure(violations.len() <= 1, || violations.join("; "))?;
    Ok(format!("{} of {SEEDS} seeds violate; {summary}", violations.len()))
}

fn predictive_check() -> Check {
    let run = run_sim(&SimConfig::default());
    ensure(run.model.converged, || "fit did not converge".into())?;
    let post = EdgePosteriors::new(&run.store, &run.model.params).unwrap();
    let hist = posterior_predictive_check(&run.store, post.pair_q(), &run.model.params, 0, 1);
    let zero = hist.zero_bin();
    let frac = hist.counts[zero] as f64 / hist.samples as f64;
    ensure(hist.modal_bin() == zero, || format!("modal bin {} is not the zero bin {zero}", hist.modal_bin()))?;
    ensure(frac >= 0.6, || format!("zero bin holds {:.1}% of pairs", 100.0 * frac))?;
    Ok(format!("{} pairs, {:.1}% in the zero bin", hist.samples, 100.0 * frac))
}

fn reconstruction_scoring() -> Check {
    let mut lines = Vec::new();
    let mut with_fakes = 0;
    for seed in 0..5 {
        let run = run_sim(&SimConfig { p_false_edge: 0.5, seed, ..SimConfig::default() });
        let post = EdgePosteriors::new(&run.store, &run.model.params).unwrap();
        let r: Vec<Reconstruction> =
            [0.1, 0.5, 0.9].iter().map(|&t| threshold_reconstruction(&post, t).unwrap()).collect();
        for (hi, lo) in [(2, 1), (1, 0)] {
            ensure(r[hi].edges.iter().all(|&(a, b)| r[lo].contains(a, b)), || {
                format!("seed {seed}: thresholds not nested")
            })?;
        }
        let prec: Vec<f64> = r.iter().map(|x| score_reconstruction(x, &post).unwrap().precision).collect();
        ensure(prec[2] >= prec[1] && prec[1] >= prec[0], || format!("seed {seed}: precision order {prec:?}"))?;
        let naive = naive_reconstruction(&run.store);
        let lq_naive = log_q(&naive, &post).unwrap().0;
        let lq_half = log_q(&r[1], &post).unwrap().0;
        if !run.sim.corruptions.is_empty() {
            with_fakes += 1;
            ensure(lq_half > lq_naive, || format!("seed {seed}: log q {lq_half:.3} <= naive {lq_naive:.3}"))?;
        }
        if seed == 0 {
            lines.push(format!(
                "seed 0: {} fakes, log q tau=0.5 {lq_half:.1} vs naive {lq_naive:.1}, precision {:.4}/{:.4}/{:.4}",
                run.sim.corruptions.len(),
                prec[2],
                prec[1],
                prec[0]
            ));
        }
    }
    ensure(with_fakes > 0, || "no run injected false edges".into())?;
    Ok(format!("{with_fakes}/5 runs with false edges; {}", lines.join("")))
}

fn astopo(dir: &Path, workers: usize, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_astopo"))
        .arg("--dir")
        .arg(dir)
        .args(["--workers", &workers.to_string(), "--seed", "7"])
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("astopo {args:?}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn run_all_stages(dir: &Path, workers: usize) -> Result<(), String> {
    let paths = dir.join("paths.txt");
    let paths = paths.to_str().unwrap();
    astopo(dir, workers, &["simulate", "--nodes", "120", "--p-false-edge", "0.5"])?;
    astopo(dir, workers, &["count", paths])?;
    astopo(dir, workers, &["fit"])?;
    astopo(dir, workers, &["entropy"])?;
    astopo(dir, workers, &["ppc", "--replicates", "3"])?;
    astopo(dir, workers, &["threshold"])?;
    let t = dir.join("threshold_0.5.txt");
    let truth = dir.join("truth.txt");
    astopo(dir, workers, &["eval", t.to_str().unwrap(), "--naive", "--truth", truth.to_str().unwrap()])?;
    astopo(dir, workers, &["ablate", "--orderings", "4"])?;
    astopo(dir, workers, &["report"])
}

fn determinism() -> Check {
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    run_all_stages(dirs[0].path(), 4)?;
    run_all_stages(dirs[1].path(), 4)?;
    run_all_stages(dirs[2].path(), 1)?;
    let mut names: Vec<String> =
        fs::read_dir(dirs[0].path()).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    for name in &names {
        let first = fs::read(dirs[0].path().join(name)).unwrap();
        for other in &dirs[1..] {
            let again = fs::read(other.path().join(name)).map_err(|e| format!("{name}: {e}"))?;
            ensure(first == again, || format!("{name} differs between runs"))?;
        }
    }
    Ok(format!("{} artifacts byte-identical across reruns and across 1 vs 4 workers", names.len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("oracle equivalence of Q", Some(Duration::from_secs(1)), oracle_equivalence),
        ("class/pair log-density equivalence", Some(Duration::from_secs(10)), class_pair_equivalence),
        ("EM ascent and convergence", None, em_ascent),
        ("six-node example instance", Some(Duration::from_secs(1)), micro_instance),
        ("synthetic recovery", Some(Duration::from_secs(120)), synthetic_recovery),
        ("entropy behaviour", Some(Duration::from_secs(300)), entropy_behaviour),
        ("posterior predictive check", Some(Duration::from_secs(30)), predictive_check),
        ("reconstruction scoring", Some(Duration::from_secs(30)), reconstruction_scoring),
        ("determinism", None, determinism),
    ];
    let mut failed = 0;
    for (i, (name, limit, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = f();
        let elapsed = start.elapsed();
        let result = match (result, limit) {
            (Ok(d), Some(l)) if elapsed > *l => Err(format!("{d}; took {elapsed:.2?}, limit {l:?}")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("criterion {} PASS {name}: {detail} [{elapsed:.2?}]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {why} [{elapsed:.2?}]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
