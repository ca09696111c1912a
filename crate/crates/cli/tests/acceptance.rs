//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails or runs past its time limit.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use triage_core::detect::{cutoff, RankedList};
use triage_core::embed::common_direction;
use triage_core::eval::{
    average_precision, coverage, diversity, mean_average_precision, pair_distance, recall_at_k,
    run_benchmark, ErrorGroundTruth, InjectionConfig, MetricConfig, TruthSource,
};
use triage_core::pipeline::{
    run_simulation, Generator, GeneratorConfig, PipelineConfig, RoundEvent, Strategy, VerdictLabel,
};
use triage_core::synth::{toy_corpus, ToyCorpusConfig};
use triage_core::{
    borda_merge, flag_top_k, rank_by_distance, remove_common_component, sif_weight,
    DetectionConfig, Embedders, EmbeddingMatrix, FrequencyTable, LabeledCorpus, Method, Utterance,
};

type Check = Result<String, String>;

/// Name, time limit in seconds, and the check itself.
type Criterion = (&'static str, Option<u64>, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(label: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0xacce_0000 + label)
}

fn random_list(rng: &mut impl Rng, n: usize, class_key: &str) -> RankedList {
    let mut ids: Vec<String> = (0..n).map(|i| format!("{class_key}-{i:03}")).collect();
    ids.shuffle(rng);
    let scored = ids
        .into_iter()
        .enumerate()
        .map(|(pos, id)| (id, (n - pos) as f64))
        .collect();
    RankedList::from_scores(class_key, "random", scored)
}

fn random_errors(rng: &mut impl Rng, list: &RankedList, min: usize) -> HashSet<String> {
    let p = rng.random_range(0.0..0.6);
    let mut errors: HashSet<String> = list
        .ids()
        .filter(|_| rng.random_bool(p))
        .map(String::from)
        .collect();
    while errors.len() < min {
        errors.insert(
            list.ids()
                .collect::<Vec<_>>()
                .choose(rng)
                .unwrap()
                .to_string(),
        );
    }
    errors
}

/// Precision at each prefix that ends on an error, recounted from scratch.
fn oracle_ap(ids: &[&str], errors: &HashSet<String>) -> f64 {
    let mut sum = 0.0;
    for r in 1..=ids.len() {
        if errors.contains(ids[r - 1]) {
            let in_prefix = ids[..r].iter().filter(|id| errors.contains(**id)).count();
            sum += in_prefix as f64 / r as f64;
        }
    }
    sum / errors.len() as f64
}

/// Recall over the shortest prefix holding at least `quarters / 4` percent
/// of the list, found by enumerating prefix lengths.
fn oracle_recall(ids: &[&str], errors: &HashSet<String>, quarters: usize) -> f64 {
    let n = ids.len();
    let r = (0..=n).find(|r| 400 * r >= n * quarters).unwrap();
    let found = ids[..r].iter().filter(|id| errors.contains(**id)).count();
    found as f64 / errors.len() as f64
}

fn metric_oracle() -> Check {
    let mut rng = rng(1);
    let mut compared = 0usize;
    for instance in 0..1000 {
        let classes = rng.random_range(1..=4);
        let mut lists = BTreeMap::new();
        let mut truth = ErrorGroundTruth::default();
        let mut oracle_aps = Vec::new();
        for c in 0..classes {
            let key = format!("c{c}");
            let n = rng.random_range(1..=40);
            let list = random_list(&mut rng, n, &key);
            let ids: Vec<&str> = list.ids().collect();
            // The first class always has errors; later ones may not.
            let errors = random_errors(&mut rng, &list, usize::from(c == 0));
            if !errors.is_empty() {
                let ap = average_precision(&list, &errors).map_err(|e| e.to_string())?;
                let want = oracle_ap(&ids, &errors);
                ensure(ap == want, || {
                    format!("instance {instance}: AP {ap} vs oracle {want}")
                })?;
                oracle_aps.push(want);
                for _ in 0..5 {
                    let q = rng.random_range(0..=400);
                    let got =
                        recall_at_k(&list, &errors, q as f64 / 4.0).map_err(|e| e.to_string())?;
                    let want = oracle_recall(&ids, &errors, q);
                    ensure(got == want, || {
                        format!(
                            "instance {instance}: recall@{} {got} vs oracle {want}",
                            q as f64 / 4.0
                        )
                    })?;
                }
                compared += 1;
                truth
                    .errors
                    .insert(key.clone(), errors.into_iter().collect());
            }
            lists.insert(key, list);
        }
        let map = mean_average_precision(&lists, &truth)
            .map_err(|e| e.to_string())?
            .map;
        let want = oracle_aps.iter().sum::<f64>() / oracle_aps.len() as f64;
        ensure(map == want, || {
            format!("instance {instance}: MAP {map} vs oracle {want}")
        })?;
    }
    Ok(format!(
        "1000 instances, {compared} classes with errors, exact"
    ))
}

const VOCAB: [&str; 12] = [
    "send", "money", "to", "my", "mom", "please", "transfer", "cash", "now", "the", "bank",
    "abroad",
];

fn random_text(rng: &mut impl Rng, max_len: usize) -> String {
    let n = rng.random_range(1..=max_len);
    (0..n)
        .map(|_| *VOCAB.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

fn random_corpus(rng: &mut impl Rng, classes: usize, per_class: usize) -> LabeledCorpus {
    let mut c = LabeledCorpus::new();
    for k in 0..classes {
        for i in 0..per_class {
            let u =
                Utterance::new(format!("c{k}-{i}"), random_text(rng, 7), format!("c{k}")).unwrap();
            c.push(u).unwrap();
        }
    }
    c
}

fn diversity_identities() -> Check {
    let cfg = MetricConfig::default();
    let mut rng = rng(2);
    for _ in 0..1000 {
        let a = Utterance::new("a", random_text(&mut rng, 8), "c").unwrap();
        let b = Utterance::new("b", random_text(&mut rng, 8), "c").unwrap();
        let d = pair_distance(&a, &b, &cfg);
        let back = pair_distance(&b, &a, &cfg);
        ensure(d == back, || {
            format!("asymmetric: {d} vs {back} for {a:?} / {b:?}")
        })?;
        ensure((0.0..=1.0).contains(&d), || {
            format!("distance {d} out of range")
        })?;
    }
    for trial in 0..50 {
        let singletons = random_corpus(&mut rng, 1 + trial % 5, 1);
        let d = diversity(&singletons, &cfg).map_err(|e| e.to_string())?;
        ensure(d == 0.0, || format!("singleton diversity {d}"))?;
        let x = random_corpus(&mut rng, 1 + trial % 4, 1 + trial % 7);
        let c = coverage(&x, &x, &cfg).map_err(|e| e.to_string())?;
        ensure(c == 1.0, || format!("self coverage {c}"))?;
    }
    let pair = LabeledCorpus::from_utterances([
        Utterance::new("a", "send money now", "c").unwrap(),
        Utterance::new("b", "transfer cash abroad please", "c").unwrap(),
    ])
    .map_err(|e| e.to_string())?;
    let d = diversity(&pair, &cfg).map_err(|e| e.to_string())?;
    ensure(d == 0.5, || format!("disjoint pair diversity {d}"))?;
    Ok("1000 pairs symmetric in [0,1]; singleton 0, self coverage 1, disjoint pair 0.5".into())
}

fn random_matrix(rng: &mut impl Rng, rows: usize, dim: usize) -> EmbeddingMatrix {
    let ids = (0..rows).map(|i| format!("r{i:02}")).collect();
    let data = (0..rows)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    EmbeddingMatrix::from_rows(ids, data).unwrap()
}

fn map_rows(m: &EmbeddingMatrix, f: impl Fn(&[f64]) -> Vec<f64>) -> EmbeddingMatrix {
    EmbeddingMatrix::from_rows(m.ids().to_vec(), m.rows().map(f).collect()).unwrap()
}

/// Gram-Schmidt on a random square matrix.
fn random_rotation(rng: &mut impl Rng, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

fn order(list: &RankedList) -> Vec<String> {
    list.ids().map(String::from).collect()
}

fn geometry_invariances() -> Check {
    let mut rng = rng(3);
    for trial in 0..100 {
        let m = random_matrix(&mut rng, 30, 16);
        let base = order(&rank_by_distance(&m, "c").map_err(|e| e.to_string())?);
        let shift: Vec<f64> = (0..16).map(|_| rng.random_range(-50.0..50.0)).collect();
        let moved = map_rows(&m, |r| r.iter().zip(&shift).map(|(x, s)| x + s).collect());
        let q = random_rotation(&mut rng, 16);
        let turned = map_rows(&m, |r| {
            q.iter()
                .map(|qi| qi.iter().zip(r).map(|(a, b)| a * b).sum())
                .collect()
        });
        for (name, variant) in [("translation", moved), ("rotation", turned)] {
            let got = order(&rank_by_distance(&variant, "c").map_err(|e| e.to_string())?);
            ensure(got == base, || {
                format!("matrix {trial}: order changed under {name}")
            })?;
        }
        let list = rank_by_distance(&m, "c").map_err(|e| e.to_string())?;
        let merged = borda_merge(&[list.clone(), list.clone()]).map_err(|e| e.to_string())?;
        ensure(order(&merged) == base, || {
            format!("matrix {trial}: borda(list, list) != list")
        })?;
        let mut prev: Vec<String> = Vec::new();
        for k in 0..=100 {
            let flagged = flag_top_k(&list, k as f64);
            ensure(
                flagged.len() == cutoff(30, k as f64) && flagged.starts_with(&prev),
                || format!("matrix {trial}: flag_top_k not monotone at k={k}"),
            )?;
            prev = flagged;
        }
    }
    Ok("100 matrices 30x16: translation, rotation, borda identity, flag monotone".into())
}

fn synthetic_benchmark() -> Check {
    let (corpus, words) = toy_corpus(&ToyCorpusConfig::default()).map_err(|e| e.to_string())?;
    ensure(corpus.num_classes() == 10 && corpus.len() == 1000, || {
        "toy corpus is not 10x100".into()
    })?;
    let methods = Method::parse_list("random,bow,average").map_err(|e| e.to_string())?;
    let detection = DetectionConfig {
        method: Method::Average,
        k_percent: 10.0,
        seed: 0,
    };
    let table = run_benchmark(
        &corpus,
        &methods,
        TruthSource::Inject(InjectionConfig { p: 0.04, seed: 0 }),
        &detection,
        &Embedders::with_words(words),
    )
    .map_err(|e| e.to_string())?;
    let row = |m: &str| table.row(m).ok_or_else(|| format!("no row for {m}"));
    let (random, bow, average) = (row("random")?, row("bow")?, row("average")?);
    let summary = format!(
        "MAP random {:.3} < bow {:.3} < average {:.3}; average recall@10% {:.3}",
        random.map, bow.map, average.map, average.recall_at_k
    );
    ensure(average.map >= 0.85, || {
        format!("average MAP below 0.85: {summary}")
    })?;
    ensure(average.recall_at_k >= 0.85, || {
        format!("average recall below 0.85: {summary}")
    })?;
    ensure(random.map <= 0.15, || {
        format!("random MAP above 0.15: {summary}")
    })?;
    ensure(random.map < bow.map && bow.map < average.map, || {
        format!("ordering broken: {summary}")
    })?;
    Ok(summary)
}

fn sif_correctness() -> Check {
    let mut rng = rng(5);
    let mut worst_proj: f64 = 0.0;
    let mut worst_norm: f64 = 0.0;
    for _ in 0..50 {
        let offset: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
        let m = map_rows(&random_matrix(&mut rng, 40, 16), |r| {
            r.iter().zip(&offset).map(|(x, o)| x + o).collect()
        });
        let u = common_direction(&m, 100, 1e-12).ok_or("no common direction")?;
        let out = remove_common_component(&m, 100, 1e-12);
        for row in out.rows() {
            let p: f64 = row.iter().zip(&u).map(|(a, b)| a * b).sum();
            worst_proj = worst_proj.max(p.abs());
        }

        let v: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rank1 = map_rows(&random_matrix(&mut rng, 20, 16), |r| {
            v.iter().map(|x| x * r[0] * 3.0).collect()
        });
        for row in remove_common_component(&rank1, 100, 1e-12).rows() {
            worst_norm = worst_norm.max(row.iter().map(|x| x * x).sum::<f64>().sqrt());
        }
    }
    ensure(worst_proj <= 1e-4, || {
        format!("max |row.u| = {worst_proj:e}")
    })?;
    ensure(worst_norm <= 1e-8, || {
        format!("rank-1 residual norm {worst_norm:e}")
    })?;

    let mut worst_weight: f64 = 0.0;
    for _ in 0..100 {
        let counts: HashMap<String, u64> = (0..8)
            .map(|i| (format!("w{i}"), rng.random_range(1..10_000)))
            .collect();
        let total: u64 = counts.values().sum();
        let a = 10f64.powf(rng.random_range(-5.0..-1.0));
        let freq = FrequencyTable::from_counts(counts.clone());
        for (w, c) in &counts {
            let p = *c as f64 / total as f64;
            worst_weight = worst_weight.max((sif_weight(w, &freq, a) - a / (a + p)).abs());
        }
    }
    ensure(worst_weight <= 1e-12, || {
        format!("sif weight error {worst_weight:e}")
    })?;
    Ok(format!(
        "max |row.u| {worst_proj:.1e}, rank-1 residual {worst_norm:.1e}, weight error {worst_weight:.1e}"
    ))
}

fn round_one_lines(log: &[RoundEvent]) -> Vec<String> {
    log.iter()
        .filter(|e| {
            matches!(
                e,
                RoundEvent::RoundStarted { round: 1, .. }
                    | RoundEvent::ParaphraseIngested { round: 1, .. }
            )
        })
        .map(RoundEvent::to_line)
        .collect()
}

fn pipeline_simulation() -> Check {
    let cfg = PipelineConfig::default();
    ensure(cfg.rounds == 3, || "default rounds changed".into())?;
    let generator = Generator::new(GeneratorConfig::default()).map_err(|e| e.to_string())?;
    let report = run_simulation(
        &cfg,
        &generator,
        &Strategy::ALL,
        0.85,
        &MetricConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let unique = report
        .outcome(Strategy::Unique)
        .ok_or("no unique outcome")?;
    let same = report.outcome(Strategy::Same).ok_or("no same outcome")?;
    ensure(unique.diversity > same.diversity, || {
        format!(
            "unique diversity {:.4} <= same {:.4}",
            unique.diversity, same.diversity
        )
    })?;
    let reference = round_one_lines(&report.outcomes[0].log);
    ensure(!reference.is_empty(), || "no round-1 events".into())?;
    for o in &report.outcomes {
        ensure(round_one_lines(&o.log) == reference, || {
            format!("round 1 of {} differs", o.strategy)
        })?;
        let errors: BTreeSet<&str> = o
            .log
            .iter()
            .filter_map(|e| match e {
                RoundEvent::Verdict { verdict, .. } if verdict.label == VerdictLabel::Error => {
                    Some(verdict.id.as_str())
                }
                _ => None,
            })
            .collect();
        ensure(!errors.is_empty(), || {
            format!("{} saw no error verdicts", o.strategy)
        })?;
        if let Some(bad) = o.final_corpus.iter().find(|u| errors.contains(u.id())) {
            return Err(format!(
                "{} final corpus keeps error {}",
                o.strategy,
                bad.id()
            ));
        }
    }
    Ok(format!(
        "final diversity unique {:.4} > same {:.4}; round 1 identical; finals error-free",
        unique.diversity, same.diversity
    ))
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn run_cli(args: &[&str], out: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_triage"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(status.status.success(), || {
        format!(
            "triage {args:?}: {}",
            String::from_utf8_lossy(&status.stderr)
        )
    })?;
    Ok(tree(out))
}

fn reproducibility() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = 0;
    for (name, args) in [
        ("bench", &["bench", "--synthetic", "--seed", "3"][..]),
        ("simulate", &["simulate", "--seed", "3"][..]),
    ] {
        let a = run_cli(args, &dir.path().join(format!("{name}-a")))?;
        let b = run_cli(args, &dir.path().join(format!("{name}-b")))?;
        ensure(a.len() > 1, || format!("{name} wrote {} files", a.len()))?;
        for ((pa, ba), (pb, bb)) in a.iter().zip(&b) {
            ensure(pa == pb && ba == bb, || {
                format!("{name}: {pa} differs between runs")
            })?;
        }
        ensure(a.len() == b.len(), || format!("{name}: file sets differ"))?;
        files += a.len();
    }
    Ok(format!("{files} files bit-identical across two runs"))
}

fn service_recovery() -> Check {
    let runtime = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    runtime.block_on(async {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let app = common::make_router(common::init_app(
            dir.path(),
            &common::small_project(Strategy::Unique),
        ));
        let accepted = common::random_mutations(&app, 42, 50).await;
        let before = common::snapshot(&app).await;
        drop(app);
        let restarted = common::make_router(common::open_app(dir.path()));
        let after = common::snapshot(&restarted).await;
        ensure(before.len() == after.len(), || "route sets differ".into())?;
        for (b, a) in before.iter().zip(&after) {
            ensure(b == a, || format!("{} differs after restart", b.0))?;
        }
        Ok(format!(
            "50 mutations ({accepted} accepted), {} GET responses identical",
            before.len()
        ))
    })
}

/// Writes to stderr directly so the line shows up even when the harness
/// captures test output.
fn report(line: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stderr(), "{line}");
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 8] = [
        ("metric oracle equivalence", Some(5), metric_oracle),
        (
            "diversity and coverage identities",
            Some(5),
            diversity_identities,
        ),
        (
            "detection geometry invariances",
            Some(10),
            geometry_invariances,
        ),
        ("synthetic error benchmark", Some(60), synthetic_benchmark),
        ("SIF correctness", Some(5), sif_correctness),
        ("pipeline simulation", Some(60), pipeline_simulation),
        ("reproducibility", None, reproducibility),
        ("service recovery", None, service_recovery),
    ];
    let mut failed = Vec::new();
    for (name, limit, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(format!(
                "panicked: {:?}",
                p.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            ))
        });
        let elapsed = start.elapsed();
        let result = match (result, limit) {
            (Ok(_), Some(l)) if elapsed > Duration::from_secs(l) => {
                Err(format!("took {elapsed:.2?}, limit {l} s"))
            }
            (r, _) => r,
        };
        match result {
            Ok(detail) => report(&format!("PASS {name} ({elapsed:.2?}): {detail}")),
            Err(why) => {
                report(&format!("FAIL {name} ({elapsed:.2?}): {why}"));
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
