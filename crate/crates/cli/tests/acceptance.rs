//! Headline acceptance criteria. Every test prints one PASS/FAIL line and then
//! asserts, so a failing criterion shows up in the summary and fails the run.
//!
//! The study-level criteria share one cached set of desk-profile runs with the
//! scripted expert partner: a frozen expert plus five seeds per condition.

use std::io::Write;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use colearn_core::env::Outcome;
use colearn_core::partner::PartnerPolicy;
use colearn_core::ppr::{make_expert_with_retries, ActionSource, ExpertPolicy};
use colearn_core::study::{run_study, BatchKind, Condition, MetricsReport, Profile, StudyConfig, StudyRun};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const EXPERT_SEED: u64 = 100;

/// Bypasses the test harness capture so the lines land in the log either way.
fn report(name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "acceptance {verdict} {name}: {detail}");
}

struct Fixture {
    ppr: Vec<StudyRun>,
    no_tl: Vec<StudyRun>,
    /// Reads of the expert copy handed to the no-transfer runs.
    no_tl_expert_reads: u64,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let t = Instant::now();
        let base = StudyConfig::new(Condition::NoTl, PartnerPolicy::expert(), EXPERT_SEED, Profile::Desk);
        let expert = Arc::new(make_expert_with_retries(&base, 5).expect("no expert qualified"));
        eprintln!("expert ready after {:.0} s", t.elapsed().as_secs_f64());

        let unused = Arc::new(ExpertPolicy::clone(&expert));
        let mut ppr = Vec::new();
        let mut no_tl = Vec::new();
        for seed in SEEDS {
            let cfg = StudyConfig::new(Condition::Ppr, PartnerPolicy::expert(), seed, Profile::Desk);
            ppr.push(run_study(&cfg, Some(expert.clone())).unwrap());
            let cfg = StudyConfig::new(Condition::NoTl, PartnerPolicy::expert(), seed, Profile::Desk);
            no_tl.push(run_study(&cfg, Some(unused.clone())).unwrap());
            eprintln!("seed {seed} done after {:.0} s", t.elapsed().as_secs_f64());
        }
        Fixture { ppr, no_tl, no_tl_expert_reads: unused.reads() }
    })
}

fn first_training(r: &MetricsReport) -> usize {
    r.batches.iter().find(|b| b.kind == BatchKind::Training).unwrap().wins
}

fn baseline(r: &MetricsReport) -> usize {
    r.batches.iter().find(|b| b.kind == BatchKind::Baseline).unwrap().wins
}

fn testing_wins(r: &MetricsReport) -> usize {
    r.batches.iter().filter(|b| b.kind == BatchKind::Testing).map(|b| b.wins).sum()
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn ppr_boost_at_block_one() {
    let f = fixture();
    let boost = mean(f.ppr.iter().map(|r| first_training(&r.report) as f64));
    let base_ppr = mean(f.ppr.iter().map(|r| baseline(&r.report) as f64));
    let base_no_tl = mean(f.no_tl.iter().map(|r| baseline(&r.report) as f64));
    let pass = boost >= 6.0 && base_ppr <= 2.0 && base_no_tl <= 2.0;
    report(
        "ppr_boost_at_block_one",
        pass,
        &format!(
            "first ppr training batch {boost:.1}/10 (need >= 6); baseline ppr {base_ppr:.1}/10, no_tl {base_no_tl:.1}/10 (need <= 2)"
        ),
    );
    assert!(pass);
}

#[test]
fn ppr_end_state() {
    let f = fixture();
    let finals: Vec<_> = f.ppr.iter().map(|r| r.report.batches.last().unwrap()).collect();
    assert!(finals.iter().all(|b| b.kind == BatchKind::Testing));
    let wins = mean(finals.iter().map(|b| b.wins as f64));
    let winning: Vec<f64> = finals
        .iter()
        .flat_map(|b| b.per_game.iter().filter(|g| g.outcome == Outcome::Win).map(|g| g.duration))
        .collect();
    let duration = if winning.is_empty() { f64::INFINITY } else { mean(winning) };
    let distance = mean(finals.iter().map(|b| b.mean_normalized_distance));
    let corner = 0.1f64.hypot(0.1);
    let pass = wins >= 9.0 && duration <= 8.0 && distance <= 2.0 * corner;
    report(
        "ppr_end_state",
        pass,
        &format!(
            "final testing wins {wins:.1}/10 (need >= 9), winning duration {duration:.2} s (need <= 8), normalized distance {distance:.4} m (need <= {:.4})",
            2.0 * corner
        ),
    );
    assert!(pass);
}

#[test]
fn condition_separation() {
    let f = fixture();
    let mut lines = Vec::new();
    let mut pass = true;
    for (p, n) in f.ppr.iter().zip(&f.no_tl) {
        let (pw, nw) = (testing_wins(&p.report), testing_wins(&n.report));
        let (pb, nb) = (p.report.first_block_reaching(9), n.report.first_block_reaching(9));
        let faster = match (pb, nb) {
            (Some(pb), Some(nb)) => 2 * pb <= nb,
            (Some(_), None) => true,
            (None, _) => false,
        };
        pass &= pw > nw && faster;
        lines.push(format!("seed {}: wins {pw} vs {nw}, 9/10 at block {pb:?} vs {nb:?}", p.report.seed));
    }
    report("condition_separation", pass, &lines.join("; "));
    assert!(pass);
}

#[test]
fn ppr_mixing_statistics() {
    let f = fixture();
    let mut inside = 0;
    let mut total = 0;
    let mut schedule_ok = true;
    for run in &f.ppr {
        let training = run.batches.iter().filter(|b| b.kind == BatchKind::Training).flat_map(|b| &b.games);
        for (i, game) in training.enumerate() {
            // reuse probability starts at 0.7 and drops by 0.01 per training game
            let psi = (0.7 - 0.01 * i as f64).max(0.0);
            let recorded = game.psi.unwrap_or(f64::NAN);
            schedule_ok &= (recorded - psi).abs() < 1e-12;
            let n = game.sources.len() as f64;
            let frac = game.count_source(ActionSource::Expert) as f64 / n;
            let sd = (psi * (1.0 - psi) / n).sqrt();
            if (frac - psi).abs() <= 3.0 * sd + 1e-12 {
                inside += 1;
            }
            total += 1;
        }
    }
    let share = inside as f64 / total as f64;
    let pass = total == 70 * SEEDS.len() && schedule_ok && share >= 0.95;
    report(
        "ppr_mixing_statistics",
        pass,
        &format!("{inside}/{total} games within 3 sd ({:.1}%, need >= 95%), schedule matches: {schedule_ok}", share * 100.0),
    );
    assert!(pass);
}

#[test]
fn gradient_oracle() {
    let t = Instant::now();
    let result = std::panic::catch_unwind(gradients::all);
    report(
        "gradient_oracle",
        result.is_ok(),
        &format!("actor, critic and temperature over 100 draws each ({:.1} s)", t.elapsed().as_secs_f64()),
    );
    assert!(result.is_ok());
}

#[test]
fn physics_suite() {
    let result = std::panic::catch_unwind(|| {
        physics::all();
        protocol::determinism();
    });
    report(
        "physics_suite",
        result.is_ok(),
        "containment, timing, returns, walls and replay over 1000 random streams each; study determinism",
    );
    assert!(result.is_ok());
}

#[test]
fn protocol_suite() {
    let f = fixture();
    let mut problems = Vec::new();
    for run in f.ppr.iter().chain(&f.no_tl) {
        let r = &run.report;
        let games: usize = r.batches.iter().map(|b| b.games).sum();
        if !r.complete || r.batches.len() != 15 || games != 150 {
            problems.push(format!("seed {} {}: {} batches, {games} games", r.seed, r.condition, r.batches.len()));
        }
        let mut prev = 0;
        for (b, &size) in r.batches.iter().zip(&r.buffer_sizes) {
            let grew = size > prev;
            if grew != (b.kind == BatchKind::Training) || size < prev {
                problems.push(format!("seed {} batch {}: buffer {prev} -> {size}", r.seed, b.batch_index));
            }
            prev = size;
        }
        for b in &run.batches {
            if r.heatmaps[b.batch_index].total() != b.sample_count() as u64 {
                problems.push(format!("seed {} batch {}: heatmap mass", r.seed, b.batch_index));
            }
        }
    }
    if f.no_tl_expert_reads != 0 {
        problems.push(format!("no_tl runs read the expert {} times", f.no_tl_expert_reads));
    }
    let result = std::panic::catch_unwind(protocol::all);
    if result.is_err() {
        problems.push("small-scale protocol checks failed".into());
    }
    let pass = problems.is_empty();
    let detail = if pass {
        format!("{} desk studies: 15 batches / 150 games, buffer grows only in training, expert untouched by no_tl, heatmap mass conserved", 2 * SEEDS.len())
    } else {
        problems.join("; ")
    };
    report("protocol_suite", pass, &detail);
    assert!(pass);
}

#[test]
fn replay_equivalence() {
    let result = std::panic::catch_unwind(session::replay);
    report("replay_equivalence", result.is_ok(), "live ppr session key log replayed offline: batches, report and snapshots identical");
    assert!(result.is_ok());
}

#[test]
fn desk_study_runtime() {
    let f = fixture();
    let slowest = f.ppr.iter().chain(&f.no_tl).map(|r| r.wall_clock_secs).fold(0.0, f64::max);
    let pass = slowest < 600.0;
    report("desk_study_runtime", pass, &format!("slowest 150-game desk study {slowest:.0} s (need < 600)"));
    assert!(pass);
}

// The property, oracle and session suites live with their crates; they are
// compiled in here as well so each criterion can run them as one unit.
#[allow(dead_code)]
mod gradients {
    include!("../../core/tests/gradients.rs");

    pub fn all() {
        critic_gradient_matches_finite_differences();
        actor_gradient_matches_finite_differences();
        temperature_gradient_matches_finite_differences();
    }
}

#[allow(dead_code)]
mod physics {
    include!("../../core/tests/physics.rs");

    pub fn all() {
        games_respect_bounds_and_timing();
        identical_seeds_replay_identically();
        walls_hold_until_commanded_inward();
    }
}

#[allow(dead_code)]
mod protocol {
    include!("../../core/tests/protocol.rs");

    pub fn all() {
        full_study_shape_and_buffer_rules();
        no_tl_never_reads_the_expert();
        ppr_without_expert_fails_before_any_game();
    }

    pub fn determinism() {
        study_is_reproducible_byte_for_byte();
    }
}

#[allow(dead_code)]
mod session {
    include!("../../realtime/tests/session.rs");

    pub fn replay() {
        replayed_key_log_reproduces_the_live_session();
    }
}
