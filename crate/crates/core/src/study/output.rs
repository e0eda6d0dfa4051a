//! On-disk layout of a study run and the plots derived from it.
//!
//! ```text
//! <out>/manifest.json        format versions, config, wall-clock time
//! <out>/report.json          MetricsReport
//! <out>/metrics.csv          one row per batch
//! <out>/games.csv            one row per game
//! <out>/training.csv         windowed loss curves, one row per window
//! <out>/trajectories/game_NNNN.jsonl
//! <out>/snapshots/block_N.json
//! ```

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BatchKind, BatchRecord, GameRecord, MetricsReport, StudyConfig, StudyRun};
use crate::error::{Error, Result};
use crate::sac::snapshot::PolicySnapshot;

pub const MANIFEST_FORMAT: &str = "colearn-run";
pub const MANIFEST_VERSION: u32 = 1;
pub const TRAJECTORY_VERSION: u32 = 1;
pub const METRICS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub format: String,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub complete: bool,
    pub config_digest: String,
    pub config: StudyConfig,
    /// Host time spent on the run; kept out of the report so the report is reproducible.
    pub wall_clock_secs: f64,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let m: Self = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(Error::invalid(format!("unsupported run manifest {} v{}", m.format, m.version)));
        }
        Ok(m)
    }
}

/// One line of a trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLine {
    pub game_id: u64,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub agent_action: i8,
    pub human_action: i8,
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn metrics_csv(report: &MetricsReport) -> String {
    let mut s = String::from(
        "batch_index,kind,block,games,wins,mean_return,mean_duration,mean_winning_duration,mean_normalized_distance\n",
    );
    for b in &report.batches {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            b.batch_index,
            b.kind,
            b.block.map(|v| v.to_string()).unwrap_or_default(),
            b.games,
            b.wins,
            b.mean_return,
            b.mean_duration,
            opt(b.mean_winning_duration),
            b.mean_normalized_distance
        );
    }
    s
}

pub fn games_csv(batches: &[BatchRecord]) -> String {
    let mut s = String::from(
        "game_id,batch_index,kind,block,corner,outcome,duration,return,normalized_distance,decisions,psi,expert_actions,random_actions,samples\n",
    );
    for b in batches {
        for g in &b.games {
            let m = g.summary();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                m.game_id,
                b.batch_index,
                b.kind,
                b.block.map(|v| v.to_string()).unwrap_or_default(),
                m.corner,
                if g.result.won() { "win" } else { "timeout" },
                m.duration,
                m.total_return,
                m.normalized_distance,
                m.decisions,
                opt(m.psi),
                m.expert_actions,
                m.random_actions,
                m.samples
            );
        }
    }
    s
}

pub fn training_csv(report: &MetricsReport) -> String {
    let mut s = String::from("block,window,updates_done,critic_loss,actor_loss,temperature,entropy\n");
    for (i, r) in report.training.iter().enumerate() {
        for w in 0..r.critic_loss.len() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                i + 1,
                w,
                ((w + 1) * r.window).min(r.updates),
                r.critic_loss[w],
                r.actor_loss[w],
                r.temperature[w],
                r.entropy[w]
            );
        }
    }
    s
}

pub fn trajectory_lines(game: &GameRecord) -> impl Iterator<Item = TrajectoryLine> + '_ {
    game.result.trajectory.iter().map(move |s| TrajectoryLine {
        game_id: game.game_id,
        t: s.t,
        x: s.state.x,
        y: s.state.y,
        vx: s.state.vx,
        vy: s.state.vy,
        agent_action: s.agent.value(),
        human_action: s.human.value(),
    })
}

pub fn write_trajectory(path: &Path, game: &GameRecord) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for line in trajectory_lines(game) {
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryLine>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn trajectory_path(dir: &Path, game_id: u64) -> PathBuf {
    dir.join("trajectories").join(format!("game_{game_id:04}.jsonl"))
}

/// Writes every artefact of a run into `dir`.
pub fn write_study(dir: &Path, config: &StudyConfig, run: &StudyRun) -> Result<Manifest> {
    fs::create_dir_all(dir.join("trajectories"))?;
    fs::create_dir_all(dir.join("snapshots"))?;
    let mut files = Vec::new();
    let mut entry = |path: String, format: &str, version: u32| {
        files.push(FileEntry { path, format: format.into(), version });
    };

    fs::write(dir.join("report.json"), run.report.to_json()?)?;
    entry("report.json".into(), "metrics-report", METRICS_VERSION);
    fs::write(dir.join("metrics.csv"), metrics_csv(&run.report))?;
    entry("metrics.csv".into(), "batch-metrics-csv", METRICS_VERSION);
    fs::write(dir.join("games.csv"), games_csv(&run.batches))?;
    entry("games.csv".into(), "game-metrics-csv", METRICS_VERSION);
    fs::write(dir.join("training.csv"), training_csv(&run.report))?;
    entry("training.csv".into(), "training-curves-csv", METRICS_VERSION);

    for g in run.batches.iter().flat_map(|b| &b.games) {
        write_trajectory(&trajectory_path(dir, g.game_id), g)?;
    }
    entry("trajectories/game_NNNN.jsonl".into(), "trajectory-jsonl", TRAJECTORY_VERSION);

    for (i, params) in run.snapshots.iter().enumerate() {
        PolicySnapshot::new(params, &config.sac, None).save(&dir.join("snapshots").join(format!("block_{}.json", i + 1)))?;
    }
    entry("snapshots/block_N.json".into(), crate::sac::snapshot::SNAPSHOT_FORMAT, crate::sac::snapshot::SNAPSHOT_VERSION);

    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        complete: run.report.complete,
        config_digest: run.report.config_digest.clone(),
        config: config.clone(),
        wall_clock_secs: run.wall_clock_secs,
        files,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_report(dir: &Path) -> Result<MetricsReport> {
    Manifest::load(dir)?;
    Ok(serde_json::from_str(&fs::read_to_string(dir.join("report.json"))?)?)
}

/// Plain-text table of per-batch metrics.
pub fn summary_table(report: &MetricsReport) -> String {
    let mut s = format!(
        "condition {}  partner {}  seed {}  complete {}\n",
        report.condition, report.partner, report.seed, report.complete
    );
    let _ = writeln!(s, "{:>5} {:>10} {:>5} {:>5} {:>9} {:>9} {:>9}", "batch", "kind", "block", "wins", "return", "duration", "distance");
    for b in &report.batches {
        let _ = writeln!(
            s,
            "{:>5} {:>10} {:>5} {:>5} {:>9.2} {:>9.2} {:>9.4}",
            b.batch_index,
            b.kind.to_string(),
            b.block.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
            b.wins,
            b.mean_return,
            b.mean_duration,
            b.mean_normalized_distance
        );
    }
    if let Some(e) = &report.error {
        let _ = writeln!(s, "incomplete: {e}");
    }
    s
}

/// Greyscale occupancy map, y growing upwards.
pub fn heatmap_svg(counts: &[Vec<u64>], title: &str) -> String {
    let n = counts.len();
    let cell = 20;
    let size = n * cell;
    let max = counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<title>{title}</title>\n",
        w = size,
        h = size + 24
    );
    for (row, line) in counts.iter().enumerate() {
        for (col, &c) in line.iter().enumerate() {
            // log scale keeps sparse paths visible next to the dwell cells
            let v = (1.0 + c as f64).ln() / (1.0 + max).ln();
            let shade = (255.0 * (1.0 - v)).round() as u8;
            let y = (n - 1 - row) * cell;
            let _ = writeln!(
                s,
                "<rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({shade},{shade},{shade})\"/>",
                col * cell,
                y
            );
        }
    }
    let _ = writeln!(s, "<text x=\"4\" y=\"{}\" font-size=\"14\" font-family=\"sans-serif\">{title}</text>\n</svg>", size + 18);
    s
}

/// Wins per batch, testing and training as two polylines.
pub fn learning_curve_svg(report: &MetricsReport) -> String {
    let (w, h, pad) = (480.0, 260.0, 36.0);
    let batches = report.batches.len().max(2) as f64;
    let x = |i: usize| pad + (w - 2.0 * pad) * i as f64 / (batches - 1.0);
    let y = |wins: f64, games: f64| h - pad - (h - 2.0 * pad) * wins / games.max(1.0);
    let line = |kinds: &[BatchKind], colour: &str| {
        let pts: Vec<String> = report
            .batches
            .iter()
            .filter(|b| kinds.contains(&b.kind))
            .map(|b| format!("{:.1},{:.1}", x(b.batch_index), y(b.wins as f64, b.games as f64)))
            .collect();
        format!("<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\" points=\"{}\"/>\n", pts.join(" "))
    };
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n");
    let _ = writeln!(
        s,
        "<line x1=\"{pad}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/><line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{b}\" stroke=\"black\"/>",
        b = h - pad,
        r = w - pad
    );
    s.push_str(&line(&[BatchKind::Baseline, BatchKind::Testing], "#1f77b4"));
    s.push_str(&line(&[BatchKind::Training], "#ff7f0e"));
    let _ = writeln!(
        s,
        "<text x=\"{pad}\" y=\"20\" font-size=\"13\" font-family=\"sans-serif\">wins per batch ({}): testing blue, training orange</text>\n</svg>",
        report.condition
    );
    s
}

/// Writes the plots and tables for a finished run directory; returns the files written.
pub fn write_report_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let report = load_report(dir)?;
    let plots = dir.join("plots");
    fs::create_dir_all(&plots)?;
    let mut written = Vec::new();
    let table = plots.join("summary.txt");
    fs::write(&table, summary_table(&report))?;
    written.push(table);
    let curve = plots.join("learning_curve.svg");
    fs::write(&curve, learning_curve_svg(&report))?;
    written.push(curve);
    for (h, b) in report.heatmaps.iter().zip(&report.batches) {
        let p = plots.join(format!("heatmap_batch_{:02}.svg", h.batch_index));
        fs::write(&p, heatmap_svg(&h.counts, &format!("batch {} ({})", h.batch_index, b.kind)))?;
        written.push(p);
    }
    Ok(written)
}
