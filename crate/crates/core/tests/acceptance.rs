//! End-to-end acceptance run. Each criterion prints one PASS/FAIL line;
//! the process fails if any criterion fails.
//!
//! The adversarial criteria train roughly fifty agents, about an hour on one
//! core. One behavior-cloned encoder (criterion 4) is shared by every run.

use std::collections::VecDeque;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use diffcore::{read_params, ParamId, ParamSet, Tape, Tensor, Var};
use mail_core::demogen::{self, DemoDataset, DemoError};
use mail_core::harness::{code_proportions, write_codes, write_curve, ExperimentConfig};
use mail_core::models::{
    load_group, save_group, BcModel, EncoderMode, FeatureCache, Networks, GLOBAL_ENCODER, N_CODES,
};
use mail_core::navenv::{self, all_views, Cell, GRID};
use mail_core::trainers::{
    bc_pretrain, compute_reward, posterior_pretrain, run_episodes, train, ExpertPolicy, NetworkPolicy, RewardScheme,
    TrainConfig, TrainInputs, TrainReport,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const SEEDS: [u64; 3] = [0, 1, 2];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

struct Ledger {
    failures: usize,
}

impl Ledger {
    fn record(&mut self, id: u32, name: &str, started: Instant, v: Verdict) {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("{tag} [{id:>2}] {name} ({:.0}s): {}", started.elapsed().as_secs_f64(), v.detail);
        if !v.pass {
            self.failures += 1;
        }
    }
}

// ---------------------------------------------------------------- 1

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.05..1.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect()
}

type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Var;

fn scalar_loss(t: &mut Tape<f64>, ids: &[ParamId], build: &Build, weights: &[f64]) -> Var {
    let vars: Vec<Var> = ids.iter().map(|&id| t.param(id)).collect();
    let y = build(t, &vars);
    let shape = t.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w = t.constant(shape, weights[..n].to_vec()).unwrap();
    let p = t.mul(y, w).unwrap();
    t.sum(p)
}

/// Worst relative error between backprop and central differences.
fn finite_difference_error(inputs: Vec<Tensor<f64>>, build: &Build, rng: &mut ChaCha8Rng) -> f64 {
    const H: f64 = 1e-5;
    let weights = rand_vec(rng, 4096, 1.0);
    let mut ps = ParamSet::new();
    let ids: Vec<ParamId> =
        inputs.into_iter().enumerate().map(|(i, t)| ps.add(format!("x{i}"), "x", t).unwrap()).collect();
    let grads = {
        let mut t = Tape::new(&ps);
        let l = scalar_loss(&mut t, &ids, build, &weights);
        t.backward(l).unwrap()
    };
    let eval = |ps: &ParamSet<f64>| {
        let mut t = Tape::new(ps);
        let l = scalar_loss(&mut t, &ids, build, &weights);
        t.item(l)
    };
    let mut worst = 0.0f64;
    for &id in &ids {
        let g = grads.get(id).unwrap().to_vec();
        for (j, &analytic) in g.iter().enumerate() {
            let x = ps.get(id).data()[j];
            ps.get_mut(id).data_mut()[j] = x + H;
            let up = eval(&ps);
            ps.get_mut(id).data_mut()[j] = x - H;
            let down = eval(&ps);
            ps.get_mut(id).data_mut()[j] = x;
            let numeric = (up - down) / (2.0 * H);
            worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6));
        }
    }
    worst
}

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn criterion_gradients() -> Verdict {
    type Make = fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>;
    let matrix: Make = |r| {
        let (n, k) = (r.random_range(1..5), r.random_range(2..6));
        vec![tensor(&[n, k], away_from_zero(r, n * k))]
    };
    let conv: Make = |r| {
        let (n, c, o) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4));
        let (h, w) = (r.random_range(3..8), r.random_range(3..8));
        vec![
            tensor(&[n, c, h, w], rand_vec(r, n * c * h * w, 1.0)),
            tensor(&[o, c, 3, 3], rand_vec(r, o * c * 9, 1.0)),
            tensor(&[o], rand_vec(r, o, 1.0)),
        ]
    };
    let dense: Make = |r| {
        let (n, i, o) = (r.random_range(1..5), r.random_range(1..7), r.random_range(1..5));
        vec![
            tensor(&[n, i], rand_vec(r, n * i, 1.0)),
            tensor(&[i, o], rand_vec(r, i * o, 1.0)),
            tensor(&[o], rand_vec(r, o, 1.0)),
        ]
    };
    let gaussians: Make = |r| {
        let (n, d) = (r.random_range(1..4), r.random_range(1..6));
        vec![tensor(&[n, d], rand_vec(r, n * d, 1.5)), tensor(&[n, d], rand_vec(r, n * d, 1.0))]
    };
    let cases: Vec<(&str, Make, Box<Build>)> = vec![
        ("dense", dense, Box::new(|t, v| t.linear(v[0], v[1], Some(v[2])).unwrap())),
        ("conv2d stride 1", conv, Box::new(|t, v| t.conv2d(v[0], v[1], Some(v[2]), 1).unwrap())),
        ("conv2d stride 2", conv, Box::new(|t, v| t.conv2d(v[0], v[1], Some(v[2]), 2).unwrap())),
        ("relu", matrix, Box::new(|t, v| t.relu(v[0]))),
        ("tanh", matrix, Box::new(|t, v| t.tanh(v[0]))),
        ("sigmoid", matrix, Box::new(|t, v| t.sigmoid(v[0]))),
        ("softmax", matrix, Box::new(|t, v| t.softmax(v[0]))),
        (
            "softmax cross-entropy",
            matrix,
            Box::new(|t, v| {
                let (n, k) = (t.shape(v[0])[0], t.shape(v[0])[1]);
                let labels: Vec<usize> = (0..n).map(|i| (3 * i + 1) % k).collect();
                t.softmax_cross_entropy(v[0], &labels).unwrap()
            }),
        ),
        (
            "sigmoid cross-entropy",
            matrix,
            Box::new(|t, v| {
                let n: usize = t.shape(v[0]).iter().product();
                let targets: Vec<f64> = (0..n).map(|i| ((i + 1) % 2) as f64).collect();
                t.sigmoid_cross_entropy(v[0], &targets).unwrap()
            }),
        ),
        ("diagonal Gaussian KL", gaussians, Box::new(|t, v| t.gaussian_kl(v[0], v[1]).unwrap())),
    ];
    let started = Instant::now();
    let mut failed = Vec::new();
    let mut worst_all = 0.0f64;
    for (name, make, build) in &cases {
        let mut worst = 0.0f64;
        for instance in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + instance);
            let inputs = make(&mut rng);
            worst = worst.max(finite_difference_error(inputs, build.as_ref(), &mut rng));
        }
        worst_all = worst_all.max(worst);
        if !(worst < 1e-4) {
            failed.push(format!("{name} {worst:.2e}"));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        failed.is_empty() && secs < 60.0,
        format!(
            "{} layers x 20 instances, worst relative error {worst_all:.2e}, {secs:.1}s{}",
            cases.len(),
            if failed.is_empty() { String::new() } else { format!(", failing: {}", failed.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_rewards() -> Verdict {
    let closed: [(RewardScheme, fn(f64) -> f64); 5] = [
        (RewardScheme::Log, |d| -d.ln()),
        (RewardScheme::LogScaled, |d| -d.ln() / 10.0),
        (RewardScheme::LogShift, |d| -(d + 0.5).ln()),
        (RewardScheme::Linear, |d| 0.5 - d),
        (RewardScheme::Tan, |d| (0.5 - d).tan()),
    ];
    let mut worst = 0.0f64;
    for (scheme, f) in closed {
        for d in [0.1, 0.2, 0.5, 0.8, 1.0 - 1e-7] {
            worst = worst.max((compute_reward(scheme, d) - f(d)).abs());
        }
    }
    let zeros = [RewardScheme::LogShift, RewardScheme::Linear, RewardScheme::Tan]
        .iter()
        .all(|&s| compute_reward(s, 0.5) == 0.0);
    verdict(
        worst < 1e-9 && zeros,
        format!("max deviation from closed forms {worst:.1e}; penalized schemes exactly 0 at D=0.5: {zeros}"),
    )
}

// ---------------------------------------------------------------- 3

fn oracle_wall(r: i32, c: i32) -> bool {
    let passage = matches!((r, c), (3, 1) | (1, 3) | (3, 5) | (5, 3));
    (r == 3 || c == 3) && !passage
}

/// Breadth-first distance on the four-rooms grid, written from the layout
/// description rather than the environment's own tables.
fn bfs(from: Cell, to: Cell) -> u32 {
    let n = GRID as i32;
    let mut dist = vec![u32::MAX; GRID * GRID];
    let idx = |r: i32, c: i32| (r * n + c) as usize;
    let mut queue = VecDeque::new();
    dist[idx(from.row as i32, from.col as i32)] = 0;
    queue.push_back((from.row as i32, from.col as i32));
    while let Some((r, c)) = queue.pop_front() {
        for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
            let (nr, nc) = (r + dr, c + dc);
            if nr < 0 || nc < 0 || nr >= n || nc >= n || oracle_wall(nr, nc) || dist[idx(nr, nc)] != u32::MAX {
                continue;
            }
            dist[idx(nr, nc)] = dist[idx(r, c)] + 1;
            queue.push_back((nr, nc));
        }
    }
    dist[idx(to.row as i32, to.col as i32)]
}

fn criterion_expert() -> Verdict {
    let started = Instant::now();
    let (_, trace) = run_episodes(&mut ExpertPolicy, 100, 77, true).unwrap();
    let mut bad = Vec::new();
    for ep in 0..100 {
        let steps: Vec<_> = trace.iter().filter(|s| s.episode == ep).collect();
        let first = steps[0];
        let mut s = navenv::EnvState::new(first.agent, first.key, first.car);
        let mut ret = 0.0;
        for st in &steps {
            let tr = navenv::step(&s, st.action).unwrap();
            ret += tr.reward;
            s = tr.state;
        }
        let want = bfs(first.agent, first.key) + bfs(first.key, first.car);
        if ret != 1.0 || !s.is_success() || steps.len() as u32 != want {
            bad.push(format!("episode {ep}: return {ret}, length {} vs {want}", steps.len()));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        bad.is_empty() && secs < 10.0,
        if bad.is_empty() {
            format!("100 episodes, return exactly 1 and BFS-optimal length, {secs:.2}s")
        } else {
            bad.join("; ")
        },
    )
}

// ---------------------------------------------------------------- 4

struct Phase1 {
    _dir: TempDir,
    checkpoints: PathBuf,
    demos: DemoDataset,
}

fn criterion_bc() -> (Verdict, Phase1) {
    let dir = TempDir::new().unwrap();
    let checkpoints = dir.path().join("ckpt");
    std::fs::create_dir_all(&checkpoints).unwrap();
    let demos = demogen::generate(100_000, 1).unwrap();
    let cfg = TrainConfig::default();
    let started = Instant::now();
    let (model, report) = bc_pretrain(&demos, &cfg, 0, |_| {}).unwrap();
    let secs = started.elapsed().as_secs_f64();
    save_group(&model.params, GLOBAL_ENCODER, &checkpoints.join("encoder.mailparm")).unwrap();
    save_group(&model.params, "actor", &checkpoints.join("actor.mailparm")).unwrap();
    let best = report.epochs.iter().map(|e| e.holdout_accuracy).fold(0.0, f64::max);
    let v = verdict(
        report.epochs.len() <= 10 && best >= 0.95 && secs <= 15.0 * 60.0,
        format!(
            "{} train / {} held-out pairs, held-out accuracy by epoch {:?}, {:.0}s",
            report.train_pairs,
            report.holdout_pairs,
            report.epochs.iter().map(|e| (e.holdout_accuracy * 1e4).round() / 1e4).collect::<Vec<_>>(),
            secs
        ),
    );
    (v, Phase1 { _dir: dir, checkpoints, demos })
}

// ---------------------------------------------------------------- 5 to 9

struct Lab<'a> {
    phase1: &'a Phase1,
    posterior: Option<PathBuf>,
}

impl Lab<'_> {
    fn config(&self, preset: &str, seed: u64) -> TrainConfig {
        let mut cfg = ExperimentConfig::for_preset(preset).unwrap().train;
        cfg.seed = seed;
        cfg
    }

    fn run(&self, cfg: &TrainConfig) -> (TrainReport, Networks) {
        let encoder = self.phase1.checkpoints.join("encoder.mailparm");
        let inputs = TrainInputs {
            demos: &self.phase1.demos,
            encoder: cfg.encoder.loads().then_some(encoder.as_path()),
            posterior: self.posterior.as_deref(),
        };
        train(cfg, &inputs, |_, _| {}).unwrap()
    }

    fn finals(&self, label: &str, cfg: impl Fn(u64) -> TrainConfig) -> Vec<TrainReport> {
        SEEDS
            .iter()
            .map(|&s| {
                let (r, _) = self.run(&cfg(s));
                println!(
                    "    {label} seed {s}: final {:.2} ± {:.2}, best {:.2}, meets -10 at {}, {:.0}s",
                    r.final_eval.mean,
                    r.final_eval.std,
                    r.best_score,
                    r.meets_step.map_or("-".into(), |m| m.to_string()),
                    r.wall_clock_secs
                );
                r
            })
            .collect()
    }
}

fn mean_final(rs: &[TrainReport]) -> f64 {
    rs.iter().map(|r| r.final_eval.mean).sum::<f64>() / rs.len() as f64
}

fn finals(rs: &[TrainReport]) -> String {
    let v: Vec<String> = rs.iter().map(|r| format!("{:.2}", r.final_eval.mean)).collect();
    format!("[{}]", v.join(", "))
}

struct Table1 {
    verdict: Verdict,
    mail: Vec<TrainReport>,
}

fn criterion_table1(lab: &Lab) -> Table1 {
    let mail = lab.finals("MAIL", |s| lab.config("MAIL", s));
    let gail = lab.finals("GAIL", |s| lab.config("GAIL", s));
    let ge = lab.finals("GAIL_GE", |s| lab.config("GAIL_GE", s));
    let ls = lab.finals("GAIL_LS", |s| lab.config("GAIL_LS", s));
    let meets = mail.iter().filter(|r| r.meets_step.is_some()).count();
    let gail_low = gail.iter().all(|r| r.final_eval.mean <= -90.0);
    let (m, g, l) = (mean_final(&mail), mean_final(&ge), mean_final(&ls));
    let slowest =
        [&mail, &gail, &ge, &ls].iter().flat_map(|rs| rs.iter().map(|r| r.wall_clock_secs)).fold(0.0, f64::max);
    let pass = meets >= 2 && gail_low && m > g && m > l && slowest <= 4.0 * 3600.0;
    Table1 {
        verdict: verdict(
            pass,
            format!(
                "MAIL meets -10 on {meets}/3; GAIL finals {} (all <= -90: {gail_low}); mean finals MAIL {m:.2} vs GAIL_GE {g:.2}, GAIL_LS {l:.2}; slowest run {slowest:.0}s",
                finals(&gail)
            ),
        ),
        mail,
    }
}

fn criterion_table2(lab: &Lab, log_shift: &[TrainReport]) -> Verdict {
    let mut pass = true;
    let mut parts = vec![format!("log_shift {:.2}", mean_final(log_shift))];
    pass &= mean_final(log_shift) >= -20.0;
    for scheme in [RewardScheme::Linear, RewardScheme::Tan, RewardScheme::Log, RewardScheme::LogScaled] {
        let rs = lab.finals(scheme.name(), |s| TrainConfig { reward: scheme, ..lab.config("MAIL", s) });
        let m = mean_final(&rs);
        pass &= if scheme.is_penalized() { m >= -20.0 } else { m <= -90.0 };
        parts.push(format!("{} {m:.2} {}", scheme.name(), finals(&rs)));
    }
    verdict(pass, format!("mean final score per scheme: {}", parts.join("; ")))
}

fn criterion_strategies(lab: &Lab, load_fix: &[TrainReport]) -> Verdict {
    let load_train =
        lab.finals("load_train", |s| TrainConfig { encoder: EncoderMode::LoadTrain, ..lab.config("MAIL", s) });
    let random_train =
        lab.finals("random_train", |s| TrainConfig { encoder: EncoderMode::RandomTrain, ..lab.config("MAIL", s) });
    let wins = (0..SEEDS.len())
        .filter(|&i| {
            let f = load_fix[i].final_eval.mean;
            f > load_train[i].final_eval.mean && f > random_train[i].final_eval.mean
        })
        .count();
    verdict(
        wins >= 2,
        format!(
            "load_fix beats both on {wins}/3 seeds; load_fix {}, load_train {}, random_train {}",
            finals(load_fix),
            finals(&load_train),
            finals(&random_train)
        ),
    )
}

fn criterion_di(phase1: &Phase1) -> Verdict {
    let demos = demogen::generate(10_000, 2).unwrap();
    let mut bc = BcModel::new(0).unwrap();
    let enc = phase1.checkpoints.join("encoder.mailparm");
    load_group(&mut bc.params, &enc, "encoder", GLOBAL_ENCODER, GLOBAL_ENCODER).unwrap();
    let table = FeatureCache::precompute(&bc.encoder, &bc.params, &all_views()).unwrap();
    let cfg = TrainConfig::default();
    let (model, report) = posterior_pretrain(&demos, &table, &cfg, 0, |_, _| {}).unwrap();
    let decreasing = report.epoch_loss.windows(2).all(|w| w[1] < w[0]);
    let post_path = phase1.checkpoints.join("posterior.mailparm");
    save_group(&model.params, "posterior", &post_path).unwrap();

    let lab = Lab { phase1, posterior: Some(post_path) };
    let mut runs = Vec::new();
    for &s in &SEEDS {
        let (r, nets) = lab.run(&lab.config("DI-MAIL", s));
        println!(
            "    DI-MAIL seed {s}: final {:.2} ± {:.2}, meets -10 at {}",
            r.final_eval.mean,
            r.final_eval.std,
            r.meets_step.map_or("-".into(), |m| m.to_string())
        );
        runs.push((r, nets));
    }
    let meets = runs.iter().filter(|r| r.0.meets_step.is_some()).count();

    let nets = &runs[0].1;
    let mut cache = FeatureCache::new();
    let (_, trace) = run_episodes(&mut NetworkPolicy::new(nets, &mut cache), 50, 9, true).unwrap();
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("codes.csv");
    write_codes(&path, &trace).unwrap();
    let mut rd = csv::Reader::from_path(&path).unwrap();
    let header_ok = rd.headers().unwrap() == vec!["episode", "timestep", "code"];
    let codes: Vec<usize> = rd.records().map(|r| r.unwrap()[2].parse().unwrap()).collect();
    let proportions = code_proportions(&trace);
    let total: f64 = proportions.iter().sum();
    let export_ok = header_ok
        && codes.len() == trace.len()
        && !codes.is_empty()
        && codes.iter().all(|&c| c < N_CODES)
        && proportions.len() == 4
        && (total - 1.0).abs() < 1e-9;
    verdict(
        decreasing && meets >= 1 && export_ok,
        format!(
            "posterior loss {:?} strictly decreasing: {decreasing}; DI-MAIL meets -10 on {meets}/3; code export ok: {export_ok}, proportions {:?}",
            report.epoch_loss.iter().map(|l| (l * 1e4).round() / 1e4).collect::<Vec<_>>(),
            proportions.map(|p| (p * 1e3).round() / 1e3)
        ),
    )
}

fn criterion_determinism(lab: &Lab) -> Verdict {
    let dir = TempDir::new().unwrap();
    let mut outcomes = Vec::new();
    let cases = [
        ("MAIL+VDB", lab.config("MAIL+VDB", 5)),
        ("VAIL_LS", TrainConfig { total_steps: 16_384, ..lab.config("VAIL_LS", 5) }),
    ];
    for (name, cfg) in &cases {
        let files: Vec<Vec<u8>> = (0..2)
            .map(|i| {
                let (r, _) = lab.run(cfg);
                let p = dir.path().join(format!("{name}-{i}.csv"));
                write_curve(&p, &r.curve).unwrap();
                std::fs::read(p).unwrap()
            })
            .collect();
        outcomes.push((name, files[0] == files[1], files[0].len()));
    }
    verdict(
        outcomes.iter().all(|o| o.1),
        outcomes
            .iter()
            .map(|(n, same, len)| format!("{n}: report.csv identical {same} ({len} bytes)"))
            .collect::<Vec<_>>()
            .join("; "),
    )
}

// ---------------------------------------------------------------- 10

fn bits(ps: &ParamSet) -> Vec<(String, Vec<u32>)> {
    ps.iter().map(|(_, name, t)| (name.to_string(), t.data().iter().map(|v| v.to_bits()).collect())).collect()
}

fn criterion_serialization(phase1: &Phase1) -> Verdict {
    let dir = TempDir::new().unwrap();
    let mut notes = Vec::new();
    let mut pass = true;

    let ds = demogen::generate(5_000, 3).unwrap();
    let path = dir.path().join("d.maildemo");
    ds.save(&path).unwrap();
    let back = DemoDataset::load(&path).unwrap();
    let demo_rt = back.records() == ds.records() && back.to_bytes() == std::fs::read(&path).unwrap();
    pass &= demo_rt;
    notes.push(format!("demo round trip {demo_rt}"));

    let nets =
        Networks::new(mail_core::models::ModelLayout { encoder: EncoderMode::None, vdb: true, di: true }, 4).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let files = nets.save(&a).unwrap();
    let loaded = Networks::load(&a).unwrap();
    loaded.save(&b).unwrap();
    let ckpt_rt = bits(&loaded.params) == bits(&nets.params)
        && files.iter().all(|f| std::fs::read(f).unwrap() == std::fs::read(b.join(f.file_name().unwrap())).unwrap());
    pass &= ckpt_rt;
    notes.push(format!("checkpoint round trip {ckpt_rt}"));

    // Every truncation of a small demo file is a format error.
    let small = demogen::generate(60, 5).unwrap().to_bytes();
    let truncations_ok =
        (0..small.len()).all(|n| matches!(DemoDataset::from_bytes(&small[..n]), Err(DemoError::Format { .. })));
    pass &= truncations_ok;
    notes.push(format!("{} demo truncations rejected {truncations_ok}", small.len()));

    let mut header_cases = Vec::new();
    for (at, v) in [(0usize, b'X'), (8, 9), (20, 0xff), (28, 0x7f), (36, 5)] {
        let mut c = small.clone();
        c[at] = v;
        header_cases.push(matches!(DemoDataset::from_bytes(&c), Err(DemoError::Format { .. })));
    }
    let header_ok = header_cases.iter().all(|&x| x);
    pass &= header_ok;
    notes.push(format!("header corruptions rejected {header_ok}"));

    // Random flips never panic; flips that still decode are valid data.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut panics, mut rejected) = (0, 0);
    for _ in 0..2000 {
        let mut c = small.clone();
        let i = rng.random_range(0..c.len());
        c[i] ^= 1 << rng.random_range(0..8);
        match catch_unwind(AssertUnwindSafe(|| DemoDataset::from_bytes(&c))) {
            Err(_) => panics += 1,
            Ok(Err(_)) => rejected += 1,
            Ok(Ok(_)) => {}
        }
    }
    pass &= panics == 0;
    notes.push(format!("demo bit flips: {panics} panics, {rejected}/2000 rejected"));

    // Checkpoints: truncations either fail to parse or fail to load.
    let enc_path = phase1.checkpoints.join("encoder.mailparm");
    let enc = std::fs::read(&enc_path).unwrap();
    let cut_path = dir.path().join("cut.mailparm");
    let mut lengths: Vec<usize> = (0..256).collect();
    lengths.extend((0..300).map(|_| rng.random_range(0..enc.len())));
    let (mut cut_panics, mut cut_accepted) = (0, 0);
    for n in lengths {
        std::fs::write(&cut_path, &enc[..n]).unwrap();
        let outcome = catch_unwind(AssertUnwindSafe(|| {
            let _ = read_params::<f32>(&enc[..n]);
            let mut m = BcModel::new(0).unwrap();
            load_group(&mut m.params, &cut_path, "encoder", GLOBAL_ENCODER, GLOBAL_ENCODER).is_ok()
        }));
        match outcome {
            Err(_) => cut_panics += 1,
            Ok(true) => cut_accepted += 1,
            Ok(false) => {}
        }
    }
    pass &= cut_panics == 0 && cut_accepted == 0;
    notes.push(format!("556 checkpoint truncations: {cut_panics} panics, {cut_accepted} accepted"));

    let mut flip_panics = 0;
    for _ in 0..300 {
        let mut c = enc.clone();
        let i = rng.random_range(0..c.len().min(4096));
        c[i] ^= 1 << rng.random_range(0..8);
        if catch_unwind(AssertUnwindSafe(|| read_params::<f32>(&c).map(|v| v.len()))).is_err() {
            flip_panics += 1;
        }
    }
    pass &= flip_panics == 0;
    notes.push(format!("checkpoint header-region bit flips: {flip_panics} panics"));
    verdict(pass, notes.join("; "))
}

fn main() {
    let mut ledger = Ledger { failures: 0 };
    let t = Instant::now();
    ledger.record(1, "gradient correctness", t, criterion_gradients());
    let t = Instant::now();
    ledger.record(2, "reward-scheme exactness", t, criterion_rewards());
    let t = Instant::now();
    ledger.record(3, "expert optimality", t, criterion_expert());
    let t = Instant::now();
    let (v, phase1) = criterion_bc();
    ledger.record(4, "behavior cloning", t, v);

    let lab = Lab { phase1: &phase1, posterior: None };
    let t = Instant::now();
    let table1 = criterion_table1(&lab);
    ledger.record(5, "component ablation ordering", t, table1.verdict);
    let t = Instant::now();
    ledger.record(6, "reward penalization schemes", t, criterion_table2(&lab, &table1.mail));
    let t = Instant::now();
    ledger.record(7, "encoder strategies", t, criterion_strategies(&lab, &table1.mail));
    let t = Instant::now();
    ledger.record(8, "latent-code pipeline", t, criterion_di(&phase1));
    let t = Instant::now();
    ledger.record(9, "determinism", t, criterion_determinism(&lab));
    let t = Instant::now();
    ledger.record(10, "serialization", t, criterion_serialization(&phase1));

    println!("{} of 10 criteria failed", ledger.failures);
    if ledger.failures > 0 {
        std::process::exit(1);
    }
}
