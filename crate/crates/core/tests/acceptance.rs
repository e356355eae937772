//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::os::unix::net::UnixStream;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use fpopt::bridge::{BridgeClient, EndpointOptions, ProtocolError};
use fpopt::config::RunConfig;
use fpopt::harness::{run_experiment, ExperimentOutput};
use fpopt::metrics::{curve_auc, top_k_auc, top_k_curve, AUC_TOP10};
use fpopt::policy::{log_prob, reinforce_gradient, ActionBatch};
use fpopt::search::{random_pool, DReinforce, DReinforceConfig, GaConfig};
use fpopt::synthetic::{make_oracle, Family, OracleSpec};
use fpopt::{AdamConfig, BudgetedOracle, Fingerprint, OneMax, PolicyParams, SimilarityKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn experiment(toml: &str, dir: &Path) -> Result<ExperimentOutput, String> {
    let cfg = RunConfig::from_toml(toml).map_err(|e| e.to_string())?;
    run_experiment(&cfg, dir).map_err(|e| e.to_string())
}

fn random_fp(rng: &mut ChaCha8Rng, len: usize) -> Fingerprint {
    Fingerprint::from_bits((0..len).map(|_| rng.random_bool(0.5))).unwrap()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// REINFORCE surrogate `-(1/N) Σ (R_j - b) log π_θ(a_j)` with `b` held fixed.
fn surrogate(theta: &[f64], batch: &ActionBatch, b: f64) -> f64 {
    let p = PolicyParams::from_logits(theta.to_vec()).forward();
    let n = batch.len() as f64;
    -batch
        .actions()
        .iter()
        .zip(batch.rewards())
        .map(|(a, r)| (r - b) * log_prob(&p, a))
        .sum::<f64>()
        / n
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let len = rng.random_range(1..=32);
        let n = rng.random_range(1..=8);
        let theta: Vec<f64> = (0..len).map(|_| rng.random_range(-3.0..3.0)).collect();
        let actions = (0..n).map(|_| random_fp(&mut rng, len)).collect();
        let rewards = (0..n).map(|_| rng.random::<f64>()).collect();
        let batch = ActionBatch::new(actions, rewards).unwrap();
        let baseline = rng.random_bool(0.5);
        let b = if baseline { batch.mean_reward() } else { 0.0 };
        let p = PolicyParams::from_logits(theta.clone()).forward();
        let analytic = reinforce_gradient(&p, &batch, baseline);
        let fd: Vec<f64> = (0..len)
            .map(|i| {
                let mut up = theta.clone();
                let mut down = theta.clone();
                up[i] += h;
                down[i] -= h;
                (surrogate(&up, &batch, b) - surrogate(&down, &batch, b)) / (2.0 * h)
            })
            .collect();
        let diff: Vec<f64> = analytic.iter().zip(&fd).map(|(a, f)| a - f).collect();
        let scale = norm(&analytic).max(norm(&fd));
        if scale > 1e-12 {
            worst = worst.max(norm(&diff) / scale);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("max relative error {worst:.2e} over 100 instances in {secs:.2}s");
    if worst < 1e-5 && secs < 5.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn adam_reference() -> Outcome {
    let mut p = PolicyParams::from_logits(vec![0.0]);
    let cfg = AdamConfig::default();
    p.adam_step(&[1.0], &cfg).map_err(|e| e.to_string())?;
    let t1 = p.logits()[0];
    p.adam_step(&[1.0], &cfg).map_err(|e| e.to_string())?;
    let t2 = p.logits()[0];
    // m_hat = v_hat = 1 at both steps, so each step moves by lr / (1 + eps)
    let step = 1e-3 / (1.0 + 1e-8);
    let (e1, e2) = (-step, -2.0 * step);
    let err = (t1 - e1).abs().max((t2 - e2).abs());
    let detail = format!("theta1 {t1:.15e}, theta2 {t2:.15e}, max error {err:.1e}");
    if err <= 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn brute_force_curve(scores: &[f64], k: usize) -> Vec<f64> {
    (1..=scores.len())
        .map(|t| {
            let mut prefix = scores[..t].to_vec();
            prefix.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let top = &prefix[..k.min(t)];
            top.iter().sum::<f64>() / top.len() as f64
        })
        .collect()
}

fn metric_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut checked = 0;
    for i in 0..100 {
        let len = rng.random_range(1..=1000);
        // coarse scores force plenty of ties
        let coarse = i % 2 == 0;
        let scores: Vec<f64> = (0..len)
            .map(|_| {
                let x = rng.random::<f64>();
                if coarse {
                    (x * 20.0).floor() / 20.0
                } else {
                    x
                }
            })
            .collect();
        let budget = len + rng.random_range(0..500);
        for k in [1, 10, 100] {
            let brute = brute_force_curve(&scores, k);
            let fast = top_k_curve(&scores, k).unwrap();
            if fast.iter().zip(&brute).any(|(a, b)| a.to_bits() != b.to_bits()) {
                return Err(format!("curve mismatch on trace {i}, K={k}"));
            }
            let auc = top_k_auc(&scores, k, budget).unwrap();
            if auc.to_bits() != curve_auc(&brute, budget).to_bits() {
                return Err(format!("AUC mismatch on trace {i}, K={k}"));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} (trace, K) pairs bit-identical"))
}

const ONEMAX_SMALL: &str = r#"
[experiment]
algorithms = ["ga", "dreinforce", "random"]
budget = 1500
fp_len = 64
master_seed = 11
n_seeds = 2

[oracle]
family = "onemax"

[dreinforce]
mh_flip_count = 4

[dreinforce.local_search]
offspring_size = 32
n_iterations = 2
"#;

fn budget_invariant(tmp: &Path) -> Outcome {
    let mut runs = 0;
    let oracles = [
        "family = \"onemax\"",
        "family = \"hidden-target\"\nseed = 3",
        "family = \"nk\"\nk = 3\nseed = 4",
        "family = \"ising\"\nseed = 5",
    ];
    for (i, o) in oracles.iter().enumerate() {
        for budget in [16, 17, 300, 1500] {
            let toml = ONEMAX_SMALL
                .replace("family = \"onemax\"", o)
                .replace("budget = 1500", &format!("budget = {budget}"));
            let out = experiment(&toml, &tmp.join(format!("budget-{i}-{budget}")))?;
            for r in &out.runs {
                if r.meta.evaluations > budget {
                    return Err(format!("{} spent {} of {budget}", r.dir.display(), r.meta.evaluations));
                }
                runs += 1;
            }
        }
    }
    let oracle = BudgetedOracle::new(Arc::new(OneMax::new(64)), 3);
    let fp = Fingerprint::zeros(64).unwrap();
    for _ in 0..10 {
        oracle.evaluate(&fp).unwrap();
    }
    if oracle.remaining_budget() != 2 {
        return Err("repeated fingerprint consumed budget".into());
    }
    Ok(format!("{runs} runs within budget; repeats cost nothing"))
}

fn traces(out: &ExperimentOutput) -> BTreeMap<String, Vec<u8>> {
    out.runs
        .iter()
        .map(|r| {
            let rel = r.dir.strip_prefix(&out.root).unwrap().display().to_string();
            (rel, fs::read(r.dir.join("trace.csv")).unwrap())
        })
        .collect()
}

fn determinism(tmp: &Path) -> Outcome {
    let mut compared = 0;
    for (name, oracle) in [("onemax", "family = \"onemax\""), ("target", "family = \"hidden-target\"\nseed = 2")] {
        let toml = ONEMAX_SMALL.replace("family = \"onemax\"", oracle);
        let a = traces(&experiment(&toml, &tmp.join(format!("det-{name}-a")))?);
        let b = traces(&experiment(&toml, &tmp.join(format!("det-{name}-b")))?);
        if a != b {
            return Err(format!("{name}: trace.csv files differ between identical runs"));
        }
        compared += a.len();
    }
    Ok(format!("{compared} trace.csv files byte-identical across repeated runs (ga, dreinforce, random)"))
}

fn onemax_default(tmp: &Path) -> Outcome {
    let toml = r#"
[experiment]
algorithms = ["dreinforce"]
budget = 5000
fp_len = 64
master_seed = 0
n_seeds = 5

[oracle]
family = "onemax"
"#;
    let out = experiment(toml, &tmp.join("onemax-default"))?;
    let bests: Vec<f64> = out.runs.iter().map(|r| r.best_score).collect();
    let slowest = out.runs.iter().map(|r| r.wall_secs).fold(0.0, f64::max);
    let hits = bests.iter().filter(|&&b| b >= 0.95).count();
    let detail = format!("best scores {bests:?}, {hits}/5 at least 0.95, slowest seed {slowest:.2}s");
    if hits == 5 && slowest < 60.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn hidden_target(tmp: &Path) -> Outcome {
    let start = Instant::now();
    let toml = r#"
[experiment]
algorithms = ["ga", "dreinforce", "random"]
budget = 10000
fp_len = 256
master_seed = 0
n_seeds = 5

[oracle]
family = "hidden-target"
seed = 1
"#;
    let out = experiment(toml, &tmp.join("hidden-target"))?;
    let agg = out.aggregate.as_ref().ok_or("no aggregate")?;
    let mean = |algo: &str| agg.get("hidden-target", algo, AUC_TOP10).map(|r| r.mean).unwrap_or(f64::NAN);
    let (dr, rs) = (mean("dreinforce"), mean("random"));
    let table = fs::read_to_string(out.root.join("table.md")).map_err(|e| e.to_string())?;
    print!("{table}");
    let secs = start.elapsed().as_secs_f64();
    let has_format = table.contains(" ± ");
    let detail = format!(
        "auc_top10 dreinforce {dr:.4} vs random {rs:.4} (margin {:.4}), table emitted: {has_format}, {secs:.1}s",
        dr - rs
    );
    if dr >= rs + 0.05 && has_format && secs < 300.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn annealing_trend() -> Outcome {
    let cfg = DReinforceConfig {
        local_search: GaConfig {
            offspring_size: 16,
            n_iterations: 1,
            ..GaConfig::local_search()
        },
        ..DReinforceConfig::default()
    };
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 0..5u64 {
        let spec = OracleSpec::new(
            Family::HiddenTarget {
                similarity: SimilarityKind::Tanimoto,
                target_ones: None,
            },
            256,
            seed,
        );
        let oracle = BudgetedOracle::new(Arc::new(make_oracle(&spec).unwrap()), 1_000_000);
        let pool = random_pool(256, 1024, 0.5, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut d = DReinforce::new(cfg.clone(), &oracle, &pool, ChaCha8Rng::seed_from_u64(seed)).map_err(|e| e.to_string())?;
        let h0 = d.policy().forward().mean_entropy();
        for _ in 0..50 {
            d.step().map_err(|e| e.to_string())?;
        }
        let h50 = d.policy().forward().mean_entropy();
        ok &= d.iterations() == 50 && h50 < h0;
        lines.push(format!("{h0:.6}->{h50:.6}"));
    }
    let detail = format!("mean entropy per seed {}", lines.join(", "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Score the echo server derives from a fingerprint's leading bits.
fn echo_score(fp: &Fingerprint) -> f64 {
    let mut x: u64 = 0;
    for i in 0..53 {
        x = (x << 1) | fp.get(i) as u64;
    }
    x as f64 / (1u64 << 53) as f64
}

/// Independent loopback server: decodes hex by hand, answers with `echo_score`.
fn echo_server(stream: UnixStream, fp_len: usize) {
    let mut out = stream.try_clone().unwrap();
    for line in BufReader::new(stream).lines() {
        let Ok(line) = line else { return };
        let v: Value = serde_json::from_str(&line).unwrap();
        let reply = match v["type"].as_str().unwrap() {
            "hello" => json!({"type": "hello_ack", "oracle": "echo", "fp_len": fp_len, "aux": []}),
            "eval" => {
                let scores: Vec<f64> = v["fps"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|h| {
                        let bits = h.as_str().unwrap().chars().flat_map(|c| {
                            let d = c.to_digit(16).unwrap();
                            (0..4).rev().map(move |b| (d >> b) & 1 == 1)
                        });
                        echo_score(&Fingerprint::from_bits(bits).unwrap())
                    })
                    .collect();
                json!({"type": "result", "id": v["id"], "scores": scores})
            }
            _ => return,
        };
        writeln!(out, "{reply}").unwrap();
    }
}

fn client_with(server: impl FnOnce(UnixStream) + Send + 'static, timeout: Duration) -> BridgeClient {
    let (a, b) = UnixStream::pair().unwrap();
    thread::spawn(move || server(b));
    let r = a.try_clone().unwrap();
    BridgeClient::from_streams(
        r,
        a,
        EndpointOptions {
            timeout,
            max_line: 1 << 20,
        },
    )
}

fn mutate_line(rng: &mut ChaCha8Rng, base: &str) -> Vec<u8> {
    let mut bytes = base.as_bytes().to_vec();
    match rng.random_range(0..6) {
        0 => bytes.truncate(rng.random_range(0..=bytes.len())),
        1 => {
            for _ in 0..rng.random_range(1..5) {
                let i = rng.random_range(0..bytes.len());
                bytes[i] = rng.random();
            }
        }
        2 => {
            let i = rng.random_range(0..bytes.len());
            bytes.remove(i);
        }
        3 => bytes = (0..rng.random_range(0..200)).map(|_| rng.random()).collect(),
        4 => {
            let i = rng.random_range(0..bytes.len());
            let junk = ["null", "-1", "1e999", "\"x\"", "[]", "{}", "true", "18446744073709551616"];
            let j = junk[rng.random_range(0..junk.len())];
            bytes.splice(i..i, j.bytes());
        }
        _ => bytes.extend_from_slice(b"\xff\xfe"),
    }
    bytes.retain(|&b| b != b'\n');
    bytes
}

fn protocol_conformance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let fp_len = 256;
    let mut client = client_with(move |s| echo_server(s, fp_len), Duration::from_secs(10));
    client.handshake_expect(fp_len).map_err(|e| e.to_string())?;
    let mut total = 0;
    for i in 0..1000 {
        let n = rng.random_range(1..=32);
        let fps: Vec<Fingerprint> = (0..n).map(|_| random_fp(&mut rng, fp_len)).collect();
        let reply = client.eval_batch(&fps).map_err(|e| format!("batch {i}: {e}"))?;
        let want: Vec<f64> = fps.iter().map(echo_score).collect();
        if reply.scores.iter().map(|s| s.to_bits()).ne(want.iter().map(|s| s.to_bits())) {
            return Err(format!("batch {i} did not round-trip"));
        }
        total += n;
    }
    client.shutdown();

    // fuzz: every reply the client sees is a mangled version of a valid one
    let ack = r#"{"type":"hello_ack","oracle":"f","fp_len":8,"aux":["sa"]}"#;
    let result = r#"{"type":"result","id":1,"scores":[0.25,0.5],"aux":{"sa":[0.1,0.2]}}"#;
    let mut outcomes = [0usize; 2];
    let fp = Fingerprint::zeros(8).unwrap();
    for case in 0..2000u64 {
        let mut frng = ChaCha8Rng::seed_from_u64(case);
        let fuzz_ack = frng.random_bool(0.3);
        let ack_line = if fuzz_ack { mutate_line(&mut frng, ack) } else { ack.as_bytes().to_vec() };
        let res_line = mutate_line(&mut frng, result);
        let run = panic::catch_unwind(AssertUnwindSafe(|| {
            let mut c = client_with(
                move |mut s| {
                    let mut r = BufReader::new(s.try_clone().unwrap());
                    let mut buf = String::new();
                    for line in [ack_line, res_line] {
                        buf.clear();
                        if r.read_line(&mut buf).unwrap_or(0) == 0 {
                            return;
                        }
                        let _ = s.write_all(&line);
                        let _ = s.write_all(b"\n");
                    }
                },
                Duration::from_millis(500),
            );
            c.handshake()?;
            c.eval_batch(&[fp.clone(), Fingerprint::ones(8).unwrap()])
        }));
        match run {
            Ok(Ok(_)) => outcomes[0] += 1,
            Ok(Err(ProtocolError::Timeout { .. })) => return Err(format!("fuzz case {case} hung until timeout")),
            Ok(Err(_)) => outcomes[1] += 1,
            Err(_) => return Err(format!("client panicked on fuzz case {case}")),
        }
    }
    Ok(format!(
        "{total} fingerprints in 1000 batches round-tripped bit-exactly; 2000 fuzz cases: {} accepted, {} clean protocol errors, 0 panics",
        outcomes[0], outcomes[1]
    ))
}

fn main() -> ExitCode {
    // keep panics from fuzz cases off the report
    panic::set_hook(Box::new(|_| {}));
    let tmp = tempfile::tempdir().expect("temp dir");
    let t = tmp.path();
    let criteria: Vec<Criterion> = vec![
        ("gradient-correctness", Box::new(gradient_correctness)),
        ("adam-reference", Box::new(adam_reference)),
        ("metric-oracle-equivalence", Box::new(metric_equivalence)),
        ("budget-invariant", Box::new(|| budget_invariant(t))),
        ("determinism", Box::new(|| determinism(t))),
        ("onemax-l64-default-dreinforce", Box::new(|| onemax_default(t))),
        ("hidden-target-vs-random", Box::new(|| hidden_target(t))),
        ("annealing-trend", Box::new(annealing_trend)),
        ("protocol-conformance", Box::new(protocol_conformance)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(d) => println!("PASS {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL {name}: {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
