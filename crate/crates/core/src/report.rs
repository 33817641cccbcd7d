//! CSV tables and SVG figures from regime evaluations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::bayes::confidence_ellipse;
use crate::error::Result;
use crate::eval::{ComponentSummary, Histogram, Score};
use crate::pipeline::{write_json, write_text, RegimeEvaluation};
use crate::store;

const PALETTE: [&str; 5] = ["#1f77b4", "#d62728", "#7f7f7f", "#2ca02c", "#e377c2"];

fn row(fields: &[String]) -> String {
    let mut line = fields
        .iter()
        .map(|f| {
            if f.contains([',', '"', '\n', '\r']) {
                format!("\"{}\"", f.replace('"', "\"\""))
            } else {
                f.clone()
            }
        })
        .collect::<Vec<_>>()
        .join(",");
    line.push_str("\r\n");
    line
}

macro_rules! fields {
    ($($x:expr),* $(,)?) => { [$($x.to_string()),*] };
}

fn score_label(s: Score) -> &'static str {
    match s {
        Score::Aleatoric => "Aleatoric",
        Score::Epistemic => "Epistemic",
        Score::Predictive => "Predictive",
        Score::AleatoricInverse => "Aleatoric (inverse)",
    }
}

/// One row per score, one AUC column per regime.
pub fn auc_summary_csv(evals: &[RegimeEvaluation]) -> String {
    let mut header = vec!["score".to_string()];
    header.extend(evals.iter().map(|e| e.regime.name().to_string()));
    let mut out = row(&header);
    for score in Score::ALL {
        let mut r = vec![score_label(score).to_string()];
        r.extend(
            evals
                .iter()
                .map(|e| e.auc(score).map_or(String::new(), |a| a.to_string())),
        );
        out.push_str(&row(&r));
    }
    out
}

pub fn roc_points_csv(evals: &[RegimeEvaluation]) -> String {
    let mut out = row(&fields!["regime", "score", "threshold", "fpr", "tpr"]);
    for e in evals {
        for r in &e.rocs {
            for i in 0..r.roc.fpr.len() {
                let t = r.roc.thresholds[i];
                let t = if t == f64::MAX {
                    "inf".to_string()
                } else {
                    t.to_string()
                };
                out.push_str(&row(&fields![
                    e.regime.name(),
                    r.score.name(),
                    t,
                    r.roc.fpr[i],
                    r.roc.tpr[i]
                ]));
            }
        }
    }
    out
}

pub fn calibration_csv(evals: &[RegimeEvaluation]) -> String {
    let mut out = row(&fields![
        "regime",
        "component",
        "n",
        "excluded",
        "mean",
        "std",
        "ks_statistic",
        "ks_p_value",
        "self_consistency_mean",
        "self_consistency_std",
        "self_consistency_ks_p_value",
        "epistemic_share",
    ]);
    for e in evals {
        let c = &e.calibration;
        for (i, (m, s)) in c.components.iter().zip(&e.self_consistency).enumerate() {
            out.push_str(&row(&fields![
                e.regime.name(),
                format!("z{}", i + 1),
                c.n,
                c.excluded,
                m.mean,
                m.std,
                m.ks_statistic,
                m.ks_p_value,
                s.mean,
                s.std,
                s.ks_p_value,
                c.epistemic_share,
            ]));
        }
    }
    out
}

pub fn calibration_hist_csv(evals: &[RegimeEvaluation]) -> String {
    let mut out = row(&fields![
        "regime",
        "component",
        "bin_low",
        "bin_high",
        "count"
    ]);
    for e in evals {
        for (i, c) in e.calibration.components.iter().enumerate() {
            let h = &c.histogram;
            for (b, count) in h.counts.iter().enumerate() {
                out.push_str(&row(&fields![
                    e.regime.name(),
                    format!("z{}", i + 1),
                    h.edges[b],
                    h.edges[b + 1],
                    count
                ]));
            }
        }
    }
    out
}

pub fn error_curves_csv(evals: &[RegimeEvaluation]) -> String {
    let mut out = row(&fields!["regime", "sorted_by", "proportion", "mean_error"]);
    for e in evals {
        for c in &e.curves {
            for (p, m) in c.grid.iter().zip(&c.mean_error) {
                out.push_str(&row(&fields![e.regime.name(), c.sorted_by, p, m]));
            }
        }
    }
    out
}

pub fn summary_csv(evals: &[RegimeEvaluation]) -> String {
    let mut out = row(&fields![
        "regime",
        "n_isolated",
        "n_blended",
        "mean_error_isolated",
        "mean_error_blended",
        "median_u_epist_isolated",
        "median_u_epist_blended",
    ]);
    for e in evals {
        out.push_str(&row(&fields![
            e.regime.name(),
            e.n_isolated,
            e.n_blended,
            e.mean_error_isolated,
            e.mean_error_blended,
            e.median_u_epist_isolated,
            e.median_u_epist_blended,
        ]));
    }
    out
}

struct Svg {
    body: String,
}

impl Svg {
    fn new(width: u32, height: u32, title: &str, config_hash: &str) -> Self {
        let mut body = String::new();
        let _ = write!(
            body,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"12\">\n\
             <metadata>config-hash {config_hash}</metadata>\n\
             <title>{title}</title>\n\
             <rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
        );
        Self { body }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, extra: &str) {
        let _ = writeln!(
            self.body,
            "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"{stroke}\"{extra}/>"
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str) {
        let mut p = String::new();
        for (x, y) in pts {
            let _ = write!(p, "{x:.2},{y:.2} ");
        }
        let _ = writeln!(
            self.body,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"1.5\"/>",
            p.trim_end()
        );
    }

    fn text(&mut self, x: f64, y: f64, s: &str, anchor: &str) {
        let s = s
            .replace('&', "&amp;")
            .replace('<', "&lt;")
            .replace('>', "&gt;");
        let _ = writeln!(
            self.body,
            "<text x=\"{x:.2}\" y=\"{y:.2}\" text-anchor=\"{anchor}\">{s}</text>"
        );
    }

    fn legend(&mut self, x: f64, y: f64, entries: &[(&str, &str)]) {
        for (i, (label, colour)) in entries.iter().enumerate() {
            let yy = y + 16.0 * i as f64;
            self.line(
                x,
                yy - 4.0,
                x + 18.0,
                yy - 4.0,
                colour,
                " stroke-width=\"2\"",
            );
            self.text(x + 24.0, yy, label, "start");
        }
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

/// Linear map from data range to pixel range.
#[derive(Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    p0: f64,
    p1: f64,
}

impl Axis {
    fn at(&self, v: f64) -> f64 {
        self.p0 + (v - self.lo) / (self.hi - self.lo) * (self.p1 - self.p0)
    }
}

fn frame(svg: &mut Svg, x: Axis, y: Axis, xlabel: &str, ylabel: &str, ticks: usize) {
    let _ = writeln!(
        svg.body,
        "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"black\"/>",
        x.p0,
        y.p1,
        x.p1 - x.p0,
        y.p0 - y.p1
    );
    for i in 0..=ticks {
        let f = i as f64 / ticks as f64;
        let (vx, vy) = (x.lo + f * (x.hi - x.lo), y.lo + f * (y.hi - y.lo));
        svg.line(x.at(vx), y.p0, x.at(vx), y.p0 + 4.0, "black", "");
        svg.text(x.at(vx), y.p0 + 16.0, &format!("{vx:.2}"), "middle");
        svg.line(x.p0 - 4.0, y.at(vy), x.p0, y.at(vy), "black", "");
        svg.text(x.p0 - 6.0, y.at(vy) + 4.0, &format!("{vy:.3}"), "end");
    }
    svg.text((x.p0 + x.p1) / 2.0, y.p0 + 34.0, xlabel, "middle");
    let (cx, cy) = (x.p0 - 48.0, (y.p0 + y.p1) / 2.0);
    let _ = writeln!(svg.body, "<text x=\"{cx:.2}\" y=\"{cy:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 {cx:.2} {cy:.2})\">{ylabel}</text>");
}

/// Predicted ellipticities in the unit disk, with confidence ellipses of
/// the three covariances drawn at the ensemble mean.
pub fn scatter_svg(e: &RegimeEvaluation, level: f64, config_hash: &str) -> String {
    let size = 560.0;
    let (c, r) = (size / 2.0, size / 2.0 - 30.0);
    let mut svg = Svg::new(
        size as u32,
        size as u32 + 40,
        &format!("{} ellipticity predictions", e.regime.name()),
        config_hash,
    );
    let px = |p: [f64; 2]| (c + r * p[0], c - r * p[1]);
    let _ = writeln!(
        svg.body,
        "<circle cx=\"{c}\" cy=\"{c}\" r=\"{r}\" fill=\"none\" stroke=\"black\"/>"
    );
    svg.line(c - r, c, c + r, c, "#cccccc", "");
    svg.line(c, c - r, c, c + r, "#cccccc", "");
    for p in &e.scatter {
        let (mx, my) = px(p.mu_bar);
        let (tx, ty) = px(p.truth);
        for (m, colour) in [
            (&p.sigma_pred, PALETTE[2]),
            (&p.sigma_aleat, PALETTE[0]),
            (&p.sigma_epist, PALETTE[1]),
        ] {
            if let Ok(el) = confidence_ellipse(m, p.mu_bar, level) {
                let _ = writeln!(
                    svg.body,
                    "<ellipse cx=\"{mx:.2}\" cy=\"{my:.2}\" rx=\"{:.2}\" ry=\"{:.2}\" transform=\"rotate({:.2} {mx:.2} {my:.2})\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"0.8\"/>",
                    el.semi_major * r,
                    el.semi_minor * r,
                    -el.angle.to_degrees()
                );
            }
        }
        svg.line(tx, ty, mx, my, "#999999", " stroke-width=\"0.5\"");
        let fill = if p.is_blend { "#ff7f0e" } else { "black" };
        let _ = writeln!(
            svg.body,
            "<circle cx=\"{mx:.2}\" cy=\"{my:.2}\" r=\"2\" fill=\"{fill}\"/>"
        );
        let _ = writeln!(svg.body, "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"3\" height=\"3\" fill=\"none\" stroke=\"{fill}\"/>", tx - 1.5, ty - 1.5);
    }
    let pct = (level * 100.0).round();
    svg.legend(
        12.0,
        size + 4.0,
        &[
            (&format!("aleatoric {pct}%"), PALETTE[0]),
            (&format!("epistemic {pct}%"), PALETTE[1]),
        ],
    );
    svg.legend(
        200.0,
        size + 4.0,
        &[
            (&format!("predictive {pct}%"), PALETTE[2]),
            ("truth to mean", "#999999"),
        ],
    );
    svg.text(
        size - 12.0,
        size + 20.0,
        "dots: isolated black, blended orange",
        "end",
    );
    svg.finish()
}

fn hist_panel(svg: &mut Svg, h: &Histogram, s: &ComponentSummary, x0: f64, label: &str) {
    let total: usize = h.counts.iter().sum();
    let density: Vec<f64> = h
        .counts
        .iter()
        .enumerate()
        .map(|(b, &n)| {
            n as f64 / (total.max(1) as f64 * (h.edges[b + 1] - h.edges[b]).max(f64::MIN_POSITIVE))
        })
        .collect();
    let peak = density
        .iter()
        .cloned()
        .fold(1.0 / (2.0 * std::f64::consts::PI).sqrt(), f64::max)
        * 1.1;
    let x = Axis {
        lo: -5.0,
        hi: 5.0,
        p0: x0 + 60.0,
        p1: x0 + 380.0,
    };
    let y = Axis {
        lo: 0.0,
        hi: peak,
        p0: 330.0,
        p1: 30.0,
    };
    frame(svg, x, y, label, "density", 5);
    for (b, d) in density.iter().enumerate() {
        let (lo, hi) = (h.edges[b].clamp(-5.0, 5.0), h.edges[b + 1].clamp(-5.0, 5.0));
        if hi <= lo {
            continue;
        }
        let _ = writeln!(
            svg.body,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\" fill-opacity=\"0.5\"/>",
            x.at(lo),
            y.at(*d),
            x.at(hi) - x.at(lo),
            y.at(0.0) - y.at(*d),
            PALETTE[0]
        );
    }
    let curve: Vec<(f64, f64)> = (0..=200)
        .map(|i| {
            let v = -5.0 + 10.0 * i as f64 / 200.0;
            (
                x.at(v),
                y.at((-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt()),
            )
        })
        .collect();
    svg.polyline(&curve, "black");
    svg.text(
        x.p0 + 8.0,
        48.0,
        &format!("mean {:.3}  std {:.3}", s.mean, s.std),
        "start",
    );
    svg.text(
        x.p0 + 8.0,
        64.0,
        &format!("KS D {:.4}  p {:.3}", s.ks_statistic, s.ks_p_value),
        "start",
    );
}

/// Histograms of the two standardized residual components against N(0, 1).
pub fn residual_hist_svg(e: &RegimeEvaluation, config_hash: &str) -> String {
    let mut svg = Svg::new(
        800,
        380,
        &format!("{} standardized residuals", e.regime.name()),
        config_hash,
    );
    for (i, c) in e.calibration.components.iter().enumerate() {
        hist_panel(
            &mut svg,
            &c.histogram,
            c,
            400.0 * i as f64,
            &format!("z{}", i + 1),
        );
    }
    svg.finish()
}

pub fn roc_svg(e: &RegimeEvaluation, config_hash: &str) -> String {
    let mut svg = Svg::new(520, 460, &format!("{} ROC", e.regime.name()), config_hash);
    let x = Axis {
        lo: 0.0,
        hi: 1.0,
        p0: 70.0,
        p1: 490.0,
    };
    let y = Axis {
        lo: 0.0,
        hi: 1.0,
        p0: 400.0,
        p1: 20.0,
    };
    frame(
        &mut svg,
        x,
        y,
        "false positive rate",
        "true positive rate",
        5,
    );
    svg.line(
        x.at(0.0),
        y.at(0.0),
        x.at(1.0),
        y.at(1.0),
        "#cccccc",
        " stroke-dasharray=\"4 4\"",
    );
    let mut entries = Vec::new();
    for (i, r) in e.rocs.iter().enumerate() {
        let pts: Vec<(f64, f64)> = r
            .roc
            .fpr
            .iter()
            .zip(&r.roc.tpr)
            .map(|(f, t)| (x.at(*f), y.at(*t)))
            .collect();
        svg.polyline(&pts, PALETTE[i]);
        entries.push((
            format!("{} AUC {:.3}", score_label(r.score), r.roc.auc),
            PALETTE[i],
        ));
    }
    let entries: Vec<(&str, &str)> = entries.iter().map(|(l, c)| (l.as_str(), *c)).collect();
    svg.legend(300.0, 300.0, &entries);
    svg.finish()
}

pub fn error_curves_svg(e: &RegimeEvaluation, config_hash: &str) -> String {
    let mut svg = Svg::new(
        560,
        460,
        &format!("{} mean error curves", e.regime.name()),
        config_hash,
    );
    let top = e
        .curves
        .iter()
        .flat_map(|c| c.mean_error.iter().copied())
        .fold(0.0, f64::max)
        .max(1e-9)
        * 1.05;
    let x = Axis {
        lo: 0.0,
        hi: 1.0,
        p0: 80.0,
        p1: 530.0,
    };
    let y = Axis {
        lo: 0.0,
        hi: top,
        p0: 400.0,
        p1: 20.0,
    };
    frame(&mut svg, x, y, "proportion of data", "mean error", 5);
    svg.line(
        x.at(e.curve_split),
        y.p0,
        x.at(e.curve_split),
        y.p1,
        "black",
        " stroke-dasharray=\"3 3\"",
    );
    svg.text(x.at(e.curve_split) - 4.0, y.p1 + 14.0, "isolated", "end");
    svg.text(x.at(e.curve_split) + 4.0, y.p1 + 14.0, "blended", "start");
    let mut entries = Vec::new();
    for (i, c) in e.curves.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = c
            .grid
            .iter()
            .zip(&c.mean_error)
            .map(|(p, m)| (x.at(*p), y.at(*m)))
            .collect();
        svg.polyline(&pts, colour);
        entries.push((c.sorted_by.clone(), colour));
    }
    let entries: Vec<(&str, &str)> = entries.iter().map(|(l, c)| (l.as_str(), *c)).collect();
    svg.legend(100.0, 40.0, &entries);
    svg.finish()
}

#[derive(Serialize)]
struct Artifact {
    path: String,
    sha256: String,
    config_hash: String,
}

#[derive(Serialize)]
struct Index {
    config_hash: String,
    artifacts: Vec<Artifact>,
}

/// Writes every table and figure into `dir` plus an `index.json` listing
/// them; returns the written paths, index last.
pub fn emit_report(
    dir: &Path,
    evals: &[RegimeEvaluation],
    level: f64,
    config_hash: &str,
) -> Result<Vec<PathBuf>> {
    let mut files: Vec<(String, String)> = vec![
        ("auc_summary.csv".into(), auc_summary_csv(evals)),
        ("roc_points.csv".into(), roc_points_csv(evals)),
        ("calibration.csv".into(), calibration_csv(evals)),
        ("calibration_hist.csv".into(), calibration_hist_csv(evals)),
        ("error_curves.csv".into(), error_curves_csv(evals)),
        ("summary.csv".into(), summary_csv(evals)),
    ];
    for e in evals {
        let r = e.regime.name();
        files.push((
            format!("scatter-{r}.svg"),
            scatter_svg(e, level, config_hash),
        ));
        files.push((
            format!("residuals-{r}.svg"),
            residual_hist_svg(e, config_hash),
        ));
        files.push((format!("roc-{r}.svg"), roc_svg(e, config_hash)));
        files.push((
            format!("error-curves-{r}.svg"),
            error_curves_svg(e, config_hash),
        ));
    }
    let mut paths = Vec::new();
    let mut index = Index {
        config_hash: config_hash.into(),
        artifacts: Vec::new(),
    };
    for (name, text) in files {
        let path = dir.join(&name);
        write_text(&path, &text)?;
        index.artifacts.push(Artifact {
            path: name,
            sha256: store::file_hash(&path)?,
            config_hash: config_hash.into(),
        });
        paths.push(path);
    }
    let path = dir.join("index.json");
    write_json(&path, &index)?;
    paths.push(path);
    Ok(paths)
}
