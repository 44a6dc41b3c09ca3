//! File formats for offline evaluation inputs and simulation outputs.
//!
//! Ranked lists (`--recs`), by extension:
//! - `.csv`: header `user_id,item_id,rank`, rank 1 first;
//! - `.jsonl`: one `{"user_id": .., "items": [..]}` per line, or one
//!   `{"user_id": .., "item_id": .., "rank": ..}` per line.
//!
//! Ground truth (`--truth`):
//! - `.csv`: header `user_id,item_id,relevance`;
//! - `.jsonl`: `{"user_id": .., "item_id": .., "relevance": ..}` per line.
//!
//! Relevance is binary: any value above 0 is relevant. A row with relevance
//! 0 still registers the user.
//!
//! Trace CSV columns: `epoch,arm,weight,S,F,true_ctr,regret_cum`, where `S`
//! and `F` are cumulative counts after the epoch's batch and `weight` is the
//! allocation that served the epoch.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use armada_core::metrics::{InteractionKind, InteractionMatrix, RankedList};
use armada_core::simulator::CampaignTrace;
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{}: unsupported extension (expected .csv or .jsonl)", path.display())]
    Extension { path: PathBuf },
    #[error("user ids differ between recommendations and truth: {0}")]
    Mismatch(String),
}

fn read(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })
}

fn parse_err(path: &Path, line: usize, message: impl ToString) -> FormatError {
    FormatError::Parse { path: path.to_path_buf(), line, message: message.to_string() }
}

enum Kind {
    Csv,
    Jsonl,
}

fn kind(path: &Path) -> Result<Kind, FormatError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => Ok(Kind::Csv),
        Some("jsonl") | Some("json") | Some("ndjson") => Ok(Kind::Jsonl),
        _ => Err(FormatError::Extension { path: path.to_path_buf() }),
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RecLine {
    List { user_id: String, items: Vec<String> },
    Row { user_id: String, item_id: String, rank: u32 },
}

#[derive(Deserialize)]
struct TruthRow {
    user_id: String,
    item_id: String,
    relevance: f64,
}

fn jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>, FormatError> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(line).map_err(|e| parse_err(path, i + 1, e))?;
        out.push((i + 1, v));
    }
    Ok(out)
}

fn csv_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>, FormatError> {
    let mut reader =
        csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| parse_err(path, 0, e))?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize().enumerate() {
        out.push((i + 2, row.map_err(|e| parse_err(path, i + 2, e))?));
    }
    Ok(out)
}

/// Reads ranked lists, one per user, in user order.
pub fn read_recs(path: &Path) -> Result<Vec<RankedList>, FormatError> {
    let lines: Vec<(usize, RecLine)> = match kind(path)? {
        Kind::Csv => csv_rows::<(String, String, u32)>(path)?
            .into_iter()
            .map(|(n, (user_id, item_id, rank))| (n, RecLine::Row { user_id, item_id, rank }))
            .collect(),
        Kind::Jsonl => jsonl(path)?,
    };
    let mut lists: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut rows: BTreeMap<String, Vec<(u32, String, usize)>> = BTreeMap::new();
    for (n, line) in lines {
        match line {
            RecLine::List { user_id, items } => {
                if lists.insert(user_id.clone(), items).is_some() {
                    return Err(parse_err(path, n, format!("second list for user {user_id}")));
                }
            }
            RecLine::Row { user_id, item_id, rank } => {
                if rank == 0 {
                    return Err(parse_err(path, n, "rank starts at 1"));
                }
                rows.entry(user_id).or_default().push((rank, item_id, n));
            }
        }
    }
    for (user, mut r) in rows {
        r.sort();
        if let Some(w) = r.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(parse_err(path, w[1].2, format!("rank {} repeated for user {user}", w[1].0)));
        }
        if lists.insert(user.clone(), r.into_iter().map(|(_, item, _)| item).collect()).is_some() {
            return Err(parse_err(path, 0, format!("user {user} given both as list and rows")));
        }
    }
    Ok(lists.into_iter().map(|(u, items)| RankedList::new(u, items)).collect())
}

pub fn read_truth(path: &Path, kind_of: InteractionKind) -> Result<InteractionMatrix, FormatError> {
    let rows: Vec<(usize, TruthRow)> = match kind(path)? {
        Kind::Csv => csv_rows(path)?,
        Kind::Jsonl => jsonl(path)?,
    };
    let mut m = InteractionMatrix::new(kind_of);
    for (n, r) in rows {
        if !r.relevance.is_finite() || r.relevance < 0.0 {
            return Err(parse_err(path, n, "relevance must be a non-negative number"));
        }
        m.insert(r.user_id, r.item_id, r.relevance > 0.0);
    }
    Ok(m)
}

/// Fails unless recommendations and truth cover the same users.
pub fn check_users(lists: &[RankedList], truth: &InteractionMatrix) -> Result<(), FormatError> {
    let recs: BTreeSet<&str> = lists.iter().map(|l| l.user_id.as_str()).collect();
    let known: BTreeSet<&str> = truth.users().collect();
    let only_recs: Vec<&str> = recs.difference(&known).copied().collect();
    let only_truth: Vec<&str> = known.difference(&recs).copied().collect();
    if only_recs.is_empty() && only_truth.is_empty() {
        return Ok(());
    }
    let sample = |v: &[&str]| v.iter().take(5).copied().collect::<Vec<_>>().join(", ");
    Err(FormatError::Mismatch(format!(
        "{} only in recs [{}], {} only in truth [{}]",
        only_recs.len(),
        sample(&only_recs),
        only_truth.len(),
        sample(&only_truth)
    )))
}

/// Trace rows as CSV.
pub fn trace_csv(trace: &CampaignTrace) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "arm", "weight", "S", "F", "true_ctr", "regret_cum"]).expect("in-memory write");
    for r in &trace.records {
        for (arm, ctr) in &r.effective_ctr {
            let s = r.cumulative_stats.get(arm).copied().unwrap_or_default();
            w.write_record([
                r.epoch.to_string(),
                arm.to_string(),
                r.allocation.get(arm).copied().unwrap_or(0.0).to_string(),
                s.successes.to_string(),
                s.failures.to_string(),
                ctr.to_string(),
                r.cumulative_regret.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Line chart of each arm's serving weight per epoch.
pub fn allocation_svg(trace: &CampaignTrace, title: &str) -> String {
    let epochs: Vec<u64> = trace.records.iter().map(|r| r.epoch).collect();
    let series: BTreeMap<String, Vec<f64>> = trace
        .records
        .iter()
        .flat_map(|r| r.effective_ctr.keys())
        .map(|a| (a.to_string(), trace.weight_series(a.as_str())))
        .collect();
    timeseries_svg(&epochs, &series, title)
}

/// Line chart of values in `[0, 1]` against `epochs`, one line per series.
pub fn timeseries_svg(epochs: &[u64], series: &BTreeMap<String, Vec<f64>>, title: &str) -> String {
    let (width, height) = (720.0, 400.0);
    let (left, right, top, bottom) = (56.0, 140.0, 36.0, 44.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;
    let n = epochs.len().max(2) - 1;
    let x = |i: usize| left + plot_w * i as f64 / n as f64;
    let y = |w: f64| top + plot_h * (1.0 - w.clamp(0.0, 1.0));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        width / 2.0,
        escape(title)
    );
    for t in 0..=4 {
        let v = t as f64 / 4.0;
        let _ = writeln!(
            svg,
            r##"<line x1="{left}" x2="{}" y1="{y:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
            left + plot_w,
            left - 6.0,
            y(v) + 4.0,
            y = y(v),
        );
    }
    let step = (n / 10).max(1);
    for (i, epoch) in epochs.iter().enumerate().step_by(step) {
        let _ =
            writeln!(svg, r#"<text x="{:.1}" y="{}" text-anchor="middle">{epoch}</text>"#, x(i), top + plot_h + 16.0);
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">epoch</text><text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">allocation</text>"#,
        left + plot_w / 2.0,
        height - 8.0,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );
    let _ =
        writeln!(svg, r#"<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#);
    for (k, (name, values)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = values.iter().enumerate().map(|(i, w)| format!("{:.1},{:.1}", x(i), y(*w))).collect();
        let _ =
            writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, points.join(" "));
        let ly = top + 14.0 + 18.0 * k as f64;
        let lx = left + plot_w + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_file(path: &Path, contents: &[u8]) -> Result<(), FormatError> {
    let io = |source| FormatError::Io { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    fs::File::create(path).and_then(|mut f| f.write_all(contents)).map_err(io)
}
