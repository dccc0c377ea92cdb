//! Text tables and tab-separated series for finished runs.

use std::fmt::Write as _;

use super::store::LoadedRun;
use super::{NoiseKind, RoundsTable};

fn noise_label(run: &LoadedRun) -> String {
    let n = &run.config.noise;
    match n.kind {
        NoiseKind::None => "clean".into(),
        NoiseKind::Symmetric => format!("symmetric {}", n.beta),
        NoiseKind::Asymmetric => {
            let pairs: Vec<String> = n
                .pairs
                .iter()
                .map(|p| format!("{}->{}:{}", p.src, p.dst, p.mass))
                .collect();
            format!("asymmetric {}", pairs.join(","))
        }
        NoiseKind::Matrix => "matrix".into(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

/// `eps_i / mean(eps of clean participants)` per round; `None` when every
/// participant is noisy.
pub fn contribution_ratios(run: &LoadedRun) -> Option<Vec<Vec<f64>>> {
    let clean: Vec<usize> = run
        .summary
        .injected_noise
        .iter()
        .enumerate()
        .filter(|(_, n)| n.is_none())
        .map(|(i, _)| i)
        .collect();
    if clean.is_empty() {
        return None;
    }
    Some(
        run.records
            .iter()
            .map(|r| {
                let reference =
                    clean.iter().map(|&i| r.epsilon[i]).sum::<f64>() / clean.len() as f64;
                r.epsilon.iter().map(|e| e / reference).collect()
            })
            .collect(),
    )
}

pub fn render_run(run: &LoadedRun) -> String {
    let s = &run.summary;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "run {} ({:?}), {} rounds, seed {}, noise: {}",
        run.config.name,
        s.mode,
        s.rounds,
        run.config.seed,
        noise_label(run)
    );
    if let Some(a) = &s.auto_rounds {
        let _ = writeln!(
            out,
            "rounds estimated for q_o = {}: raw {:.2}, R = {}{}",
            a.q_o,
            a.estimate.raw,
            a.estimate.rounds,
            a.capped_at.map_or(String::new(), |c| format!(", capped at {c}"))
        );
    }

    let _ = writeln!(out, "\nparticipants");
    let _ = writeln!(
        out,
        "{:>4} {:>7} {:>7} {:>9} {:>9} {:>10} {:>9} {:>9}",
        "id", "size", "train", "injected", "estimated", "normalized", "local_acc", "local_f1"
    );
    for p in &s.participants {
        let local = s.metrics.local.get(p.index);
        let _ = writeln!(
            out,
            "{:>4} {:>7} {:>7} {:>9} {:>9} {:>10} {:>9} {:>9}",
            p.index,
            p.initial_size,
            p.training_size,
            opt(s.injected_noise.get(p.index).copied().flatten()),
            opt(p.estimated_ratio),
            opt(p.normalized_ratio),
            opt(local.map(|m| m.accuracy)),
            opt(local.map(|m| m.macro_f1)),
        );
    }

    if let Some(g) = &s.metrics.global {
        let _ = writeln!(
            out,
            "\nglobal: accuracy {:.4}, macro F1 {:.4}, micro F1 {:.4} on {} test instances",
            g.accuracy, g.macro_f1, g.micro_f1, g.evaluated
        );
        let _ = writeln!(out, "{:>6} {:>9} {:>9} {:>9} {:>8}", "class", "precision", "recall", "f1", "support");
        for c in &g.per_class {
            let _ = writeln!(
                out,
                "{:>6} {:>9.4} {:>9.4} {:>9.4} {:>8}{}",
                c.class,
                c.precision,
                c.recall,
                c.f1,
                c.support,
                if c.zero_support { "  (no support)" } else { "" }
            );
        }
    }
    if let Some(cm) = &s.metrics.global_confusion {
        let _ = writeln!(out, "\nconfusion matrix (rows true, columns predicted)");
        out.push_str(&cm.render());
    }

    let _ = writeln!(out, "\nper round");
    let n = s.participants.len();
    let mut header = format!("{:>5} {:>12} {:>12} {:>9} {:>9}", "round", "global_loss", "agg_loss", "accuracy", "macro_f1");
    for i in 0..n {
        let _ = write!(header, " {:>8}", format!("eps_{i}"));
    }
    let _ = writeln!(out, "{header}");
    for r in &run.records {
        let _ = write!(
            out,
            "{:>5} {:>12.6} {:>12.6} {:>9} {:>9}",
            r.round,
            r.global_loss,
            r.aggregate_loss,
            opt(r.global_metrics.map(|m| m.accuracy)),
            opt(r.global_metrics.map(|m| m.macro_f1)),
        );
        for e in &r.epsilon {
            let _ = write!(out, " {e:>8.4}");
        }
        out.push('\n');
    }

    if let Some(ratios) = contribution_ratios(run) {
        let _ = writeln!(out, "\ncontribution ratio (eps / mean eps of clean participants)");
        let mut header = format!("{:>5}", "round");
        for i in 0..n {
            let _ = write!(header, " {:>8}", format!("p{i}"));
        }
        let _ = writeln!(out, "{header}");
        for (r, row) in run.records.iter().zip(&ratios) {
            let _ = write!(out, "{:>5}", r.round);
            for v in row {
                let _ = write!(out, " {v:>8.4}");
            }
            out.push('\n');
        }
    }

    if !run.transcripts.is_empty() {
        let _ = writeln!(out, "\nexchange");
        let _ = writeln!(out, "{:>4} {:>8} {:>10} {:>12} {:>8}", "id", "u", "transfers", "ratio", "starved");
        for t in &run.transcripts {
            let _ = writeln!(
                out,
                "{:>4} {:>8} {:>10} {:>5.3}->{:<5.3} {:>8}",
                t.participant,
                t.u.map_or("-".into(), |u| u.to_string()),
                t.transferred.iter().sum::<usize>(),
                t.mean_ratio_before,
                t.mean_ratio_after,
                t.starved
            );
        }
    }
    out
}

/// Final metrics side by side, then per-round accuracy with deltas against
/// the first run.
pub fn render_comparison(runs: &[LoadedRun]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>3} {:<20} {:<7} {:<24} {:>9} {:>9} {:>10}",
        "#", "run", "mode", "noise", "accuracy", "macro_f1", "local_acc"
    );
    for (k, run) in runs.iter().enumerate() {
        let m = &run.summary.metrics;
        let local = if m.local.is_empty() {
            None
        } else {
            Some(m.local.iter().map(|s| s.accuracy).sum::<f64>() / m.local.len() as f64)
        };
        let _ = writeln!(
            out,
            "{:>3} {:<20} {:<7} {:<24} {:>9} {:>9} {:>10}",
            k,
            run.config.name,
            format!("{:?}", run.summary.mode).to_lowercase(),
            noise_label(run),
            opt(m.global.as_ref().map(|g| g.accuracy)),
            opt(m.global.as_ref().map(|g| g.macro_f1)),
            opt(local),
        );
    }

    let rounds = runs.iter().map(|r| r.records.len()).max().unwrap_or(0);
    let _ = writeln!(out, "\naccuracy per round (delta vs run 0)");
    let mut header = format!("{:>5}", "round");
    for k in 0..runs.len() {
        let _ = write!(header, " {:>9}", format!("acc_{k}"));
        if k > 0 {
            let _ = write!(header, " {:>9}", format!("d_{k}"));
        }
    }
    let _ = writeln!(out, "{header}");
    let acc = |run: &LoadedRun, t: usize| {
        run.records
            .get(t)
            .and_then(|r| r.global_metrics)
            .map(|m| m.accuracy)
    };
    for t in 0..rounds {
        let _ = write!(out, "{:>5}", t + 1);
        let base = acc(&runs[0], t);
        for (k, run) in runs.iter().enumerate() {
            let a = acc(run, t);
            let _ = write!(out, " {:>9}", opt(a));
            if k > 0 {
                let d = a.zip(base).map(|(a, b)| a - b);
                let _ = write!(out, " {:>9}", d.map_or("-".into(), |d| format!("{d:+.4}")));
            }
        }
        out.push('\n');
    }
    out
}

pub fn render_rounds(table: &RoundsTable) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>4} {:>8} {:>6} {:>8} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>8} {:>14} {:>10}",
        "E", "q_o", "noise", "L", "sigma2", "G2", "Gamma", "B_var", "B_het", "B_drift", "B", "alpha", "raw_R", "R"
    );
    for r in &table.rows {
        let _ = writeln!(
            out,
            "{:>4} {:>8} {:>6} {:>8.4} {:>10.4e} {:>10.4e} {:>10.4e} {:>10.4e} {:>10.4e} {:>10.4e} {:>10.4e} {:>8.2} {:>14.2} {:>10}",
            r.local_epochs,
            r.q_o,
            r.noise_level.map_or("cfg".into(), |b| b.to_string()),
            r.l,
            r.sigma_sq_mean,
            r.g_sq,
            r.gamma,
            r.b.variance,
            r.b.heterogeneity,
            r.b.drift,
            r.b.total,
            r.estimate.alpha,
            r.estimate.raw,
            r.estimate.rounds
        );
    }
    for f in &table.failures {
        let _ = writeln!(
            out,
            "{:>4} {:>8} {:>6}  failed: {}",
            f.local_epochs,
            f.q_o,
            f.noise_level.map_or("cfg".into(), |b| b.to_string()),
            f.error
        );
    }
    out
}

pub struct ColumnFile {
    pub name: String,
    pub contents: String,
}

/// Plot-ready columns: accuracy and global loss per round for every run,
/// and contribution ratios per run.
pub fn series_files(runs: &[LoadedRun]) -> Vec<ColumnFile> {
    let mut files = Vec::new();
    let rounds = runs.iter().map(|r| r.records.len()).max().unwrap_or(0);
    let mut acc = String::from("round");
    for k in 0..runs.len() {
        let _ = write!(acc, "\taccuracy_{k}\tmacro_f1_{k}\tglobal_loss_{k}");
    }
    acc.push('\n');
    for t in 0..rounds {
        let _ = write!(acc, "{}", t + 1);
        for run in runs {
            match run.records.get(t) {
                Some(r) => {
                    let m = r.global_metrics;
                    let _ = write!(
                        acc,
                        "\t{}\t{}\t{}",
                        m.map_or("".into(), |m| m.accuracy.to_string()),
                        m.map_or("".into(), |m| m.macro_f1.to_string()),
                        r.global_loss
                    );
                }
                None => acc.push_str("\t\t\t"),
            }
        }
        acc.push('\n');
    }
    files.push(ColumnFile {
        name: "accuracy.tsv".into(),
        contents: acc,
    });

    for (k, run) in runs.iter().enumerate() {
        if let Some(ratios) = contribution_ratios(run) {
            let n = ratios.first().map_or(0, Vec::len);
            let mut text = String::from("round");
            for i in 0..n {
                let _ = write!(text, "\tp{i}");
            }
            text.push('\n');
            for (t, row) in ratios.iter().enumerate() {
                let _ = write!(text, "{}", t + 1);
                for v in row {
                    let _ = write!(text, "\t{v}");
                }
                text.push('\n');
            }
            files.push(ColumnFile {
                name: format!("contribution_{k}.tsv"),
                contents: text,
            });
        }
    }
    files
}
