//! Static leaderboard and robustness-curve reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::run::write_json;
use super::{BenchError, Result};
use crate::norm::Norm;
use crate::optimality::{EnvelopeStore, IncompleteAttack, Leaderboard, LeaderboardEntry, RobustnessCurve};

/// Attack column value used for the envelope in curve tables.
pub const ENVELOPE: &str = "envelope";

#[derive(Serialize)]
struct GroupReport<'a> {
    norm: Norm,
    models: Vec<&'a str>,
    entries: &'a [LeaderboardEntry],
    incomplete: Vec<&'a IncompleteAttack>,
}

fn models_of(entries: &[LeaderboardEntry]) -> Vec<&str> {
    entries.first().map(|e| e.local.keys().map(String::as_str).collect()).unwrap_or_default()
}

fn fmt_queries(q: Option<f64>) -> String {
    q.map(|v| v.to_string()).unwrap_or_default()
}

pub fn leaderboard_csv(entries: &[LeaderboardEntry]) -> String {
    let models = models_of(entries);
    let mut out = String::from("rank,attack,global_optimality");
    for m in &models {
        let _ = write!(out, ",local_{m}");
    }
    out.push_str(",median_queries\n");
    for e in entries {
        let _ = write!(out, "{},{},{}", e.rank, e.attack, e.global_optimality);
        for m in &models {
            let _ = write!(out, ",{}", e.local[*m]);
        }
        let _ = writeln!(out, ",{}", fmt_queries(e.median_queries));
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Self-contained page: one table, inline style, no scripts or external assets.
pub fn leaderboard_html(norm: Norm, entries: &[LeaderboardEntry], incomplete: &[&IncompleteAttack]) -> String {
    let models = models_of(entries);
    let mut rows = String::new();
    for e in entries {
        let _ =
            write!(rows, "<tr><td>{}</td><td>{}</td><td>{:.4}</td>", e.rank, escape(&e.attack), e.global_optimality);
        for m in &models {
            let _ = write!(rows, "<td>{:.4}</td>", e.local[*m]);
        }
        let _ = writeln!(rows, "<td>{}</td></tr>", fmt_queries(e.median_queries));
    }
    let head: String = models.iter().map(|m| format!("<th>{}</th>", escape(m))).collect();
    let mut notes = String::new();
    for i in incomplete {
        let _ =
            writeln!(notes, "<li>{}: incomplete (missing {})</li>", escape(&i.attack), escape(&i.missing.join(", ")));
    }
    if !notes.is_empty() {
        notes = format!("<h2>Unranked</h2>\n<ul>\n{notes}</ul>\n");
    }
    format!(
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>Leaderboard {norm}</title>\n\
         <style>body{{font-family:sans-serif;margin:2em}}table{{border-collapse:collapse}}\
         td,th{{border:1px solid #999;padding:4px 8px;text-align:right}}</style>\n</head>\n<body>\n\
         <h1>Leaderboard {norm}</h1>\n<table>\n<tr><th>rank</th><th>attack</th><th>global optimality</th>{head}\
         <th>median queries</th></tr>\n{rows}</table>\n{notes}</body>\n</html>\n"
    )
}

/// Writes `leaderboard_{norm}.{csv,json,html}` for every norm group.
pub fn emit_leaderboard(dir: &Path, leaderboard: &Leaderboard) -> Result<()> {
    let mut norms: Vec<Norm> = leaderboard.groups.keys().copied().collect();
    norms.extend(leaderboard.incomplete.iter().map(|i| i.norm));
    norms.sort();
    norms.dedup();
    for norm in norms {
        let entries = leaderboard.groups.get(&norm).map(Vec::as_slice).unwrap_or_default();
        let incomplete: Vec<&IncompleteAttack> = leaderboard.incomplete.iter().filter(|i| i.norm == norm).collect();
        let stem = dir.join(format!("leaderboard_{}", norm.tag()));
        let write = |ext: &str, text: String| {
            let path = stem.with_extension(ext);
            fs::write(&path, text).map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))
        };
        write("csv", leaderboard_csv(entries))?;
        write("html", leaderboard_html(norm, entries, &incomplete))?;
        let report = GroupReport { norm, models: models_of(entries), entries, incomplete };
        write_json(&stem.with_extension("json"), &report)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub attack: String,
    pub epsilon: f64,
    pub robust_accuracy: f64,
}

pub fn curve_rows(attack: &str, curve: &RobustnessCurve) -> Vec<CurveRow> {
    curve
        .step_points()
        .into_iter()
        .filter(|(e, _)| *e <= curve.eps_max())
        .map(|(epsilon, robust_accuracy)| CurveRow { attack: attack.into(), epsilon, robust_accuracy })
        .collect()
}

/// Writes `curves_{model}_{norm}.csv` with the step points of every attack
/// and of the envelope.
pub fn emit_curves(dir: &Path, store: &EnvelopeStore) -> Result<()> {
    for (model, _) in store.models() {
        let mut by_norm: std::collections::BTreeMap<Norm, Vec<CurveRow>> = Default::default();
        for (norm, attack) in store.attacks() {
            if store.result(&attack, model, norm).is_some() {
                by_norm
                    .entry(norm)
                    .or_default()
                    .extend(curve_rows(&attack, &store.attack_curve(&attack, model, norm)?));
            }
        }
        for (norm, mut rows) in by_norm {
            rows.extend(curve_rows(ENVELOPE, &store.lower_envelope(model, norm)?));
            let mut text = String::from("attack,epsilon,robust_accuracy\n");
            for r in rows {
                let _ = writeln!(text, "{},{},{}", r.attack, r.epsilon, r.robust_accuracy);
            }
            let path = dir.join(format!("curves_{model}_{}.csv", norm.tag()));
            fs::write(&path, text).map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))?;
        }
    }
    Ok(())
}
