//! Static SVG figures: cluster maps, transition heatmaps, model-selection
//! error bars and word timelines.
//!
//! Output is plain SVG 1.1 written by hand. Marks carry `class` and `data-*`
//! attributes so tests and scripts can read the plotted values back.

use std::fmt::Write as _;

use crate::imjpf::InferenceStep;
use crate::pipeline::TrackSelection;
use crate::vocabulary::GdbnVocabulary;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 50.0;

struct Svg(String);

impl Svg {
    fn new(title: &str) -> Self {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(title));
        Svg(s)
    }

    fn line(&mut self, el: impl AsRef<str>) {
        self.0.push_str(el.as_ref());
        self.0.push('\n');
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, body: &str) {
        self.line(format!(r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}">{}</text>"#, esc(body)));
    }

    fn finish(mut self) -> String {
        self.0.push_str("</svg>\n");
        self.0
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Maps `[lo, hi]` onto `[a, b]`; a degenerate range maps to the middle.
fn scale(v: f64, lo: f64, hi: f64, a: f64, b: f64) -> f64 {
    if hi - lo < 1e-12 {
        0.5 * (a + b)
    } else {
        a + (v - lo) / (hi - lo) * (b - a)
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Cluster means in the ground plane, one circle per cluster with a radius of
/// one positional standard deviation. Dummy clusters are drawn hollow.
pub fn cluster_map(model: &GdbnVocabulary) -> String {
    let mut svg = Svg::new(&format!("model {} clusters (x-y)", model.model_id));
    let sd: Vec<f64> = model
        .clusters
        .iter()
        .map(|c| (0.5 * (c.covariance[0][0] + c.covariance[1][1])).max(0.0).sqrt())
        .collect();
    let pad = sd.iter().copied().fold(1.0, f64::max);
    let (x0, x1) = range(model.clusters.iter().map(|c| c.mean[0]));
    let (y0, y1) = range(model.clusters.iter().map(|c| c.mean[1]));
    // equal meters per pixel on both axes
    let span = ((x1 - x0).max(y1 - y0) + 2.0 * pad).max(1.0);
    let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
    let px_per_m = (W - 2.0 * MARGIN).min(H - 2.0 * MARGIN) / span;
    let to_px = |x: f64, y: f64| (W / 2.0 + (x - cx) * px_per_m, H / 2.0 + 10.0 - (y - cy) * px_per_m);
    for (c, r) in model.clusters.iter().zip(&sd) {
        let (px, py) = to_px(c.mean[0], c.mean[1]);
        let fill = if c.is_dummy { "none" } else { "steelblue" };
        svg.line(format!(
            r#"<circle class="cluster" data-id="{}" data-x="{}" data-y="{}" data-dummy="{}" cx="{px:.2}" cy="{py:.2}" r="{:.2}" fill="{fill}" fill-opacity="0.35" stroke="darkorange"/>"#,
            c.id,
            c.mean[0],
            c.mean[1],
            c.is_dummy,
            (r * px_per_m).max(3.0)
        ));
        svg.text(px, py + 4.0, "middle", &c.id.to_string());
    }
    svg.text(W / 2.0, H - 10.0, "middle", &format!("x (m), {:.1} m across", span));
    svg.finish()
}

/// Transition matrix as a grid of gray cells, darker for higher probability.
pub fn tm_heatmap(model: &GdbnVocabulary) -> String {
    let mut svg = Svg::new(&format!("model {} transition matrix", model.model_id));
    let k = model.tm.len();
    let side = (H - 2.0 * MARGIN).min(W - 2.0 * MARGIN) / k.max(1) as f64;
    let left = (W - side * k as f64) / 2.0;
    let top = MARGIN;
    for (i, row) in model.tm.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            let shade = (255.0 * (1.0 - p.clamp(0.0, 1.0))).round() as u8;
            svg.line(format!(
                r#"<rect class="cell" data-row="{i}" data-col="{j}" data-value="{p}" x="{:.2}" y="{:.2}" width="{side:.2}" height="{side:.2}" fill="rgb({shade},{shade},{shade})" stroke="silver"/>"#,
                left + j as f64 * side,
                top + i as f64 * side
            ));
        }
        svg.text(left - 4.0, top + (i as f64 + 0.6) * side, "end", &i.to_string());
    }
    svg.text(W / 2.0, H - 10.0, "middle", "next cluster (columns) given current cluster (rows)");
    svg.finish()
}

/// Overall selection error of every model for one track; the selected model
/// is highlighted.
pub fn selection_errors(sel: &TrackSelection) -> String {
    let mut svg = Svg::new(&format!("track {} model errors", sel.track_id));
    let models = &sel.report.models;
    let max = models.iter().map(|m| m.total).fold(0.0, f64::max).max(1e-9);
    let slot = (W - 2.0 * MARGIN) / models.len().max(1) as f64;
    let base = H - MARGIN;
    for (i, m) in models.iter().enumerate() {
        let h = m.total / max * (H - 2.0 * MARGIN - 20.0);
        let x = MARGIN + i as f64 * slot + 0.15 * slot;
        let chosen = m.model_id == sel.report.selected;
        svg.line(format!(
            r#"<rect class="bar" data-model="{}" data-total="{}" data-selected="{chosen}" x="{x:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="{}"/>"#,
            m.model_id,
            m.total,
            base - h,
            0.7 * slot,
            if chosen { "seagreen" } else { "lightgray" }
        ));
        svg.text(x + 0.35 * slot, base + 14.0, "middle", &m.model_id.to_string());
        svg.text(x + 0.35 * slot, base - h - 4.0, "middle", &format!("{:.1}", m.total));
    }
    svg.text(W / 2.0, H - 10.0, "middle", "model id (overall error in m)");
    svg.finish()
}

/// Predicted and estimated word per step with anomaly marks. Unknown
/// estimates are drawn as hollow markers on the axis.
pub fn word_timeline(steps: &[InferenceStep]) -> String {
    let mut svg = Svg::new("predicted vs estimated words");
    let n = steps.len();
    let top_word = steps
        .iter()
        .flat_map(|s| [Some(s.predicted_word), s.estimated_word])
        .flatten()
        .max()
        .unwrap_or(0) as f64;
    let x_of = |i: usize| scale(i as f64, 0.0, n.saturating_sub(1) as f64, MARGIN, W - MARGIN);
    let y_of = |w: f64| scale(w, 0.0, top_word.max(1.0), H - MARGIN - 30.0, MARGIN);
    let pts: Vec<String> = steps
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{:.2},{:.2}", x_of(i), y_of(f64::from(s.predicted_word))))
        .collect();
    svg.line(format!(r#"<polyline points="{}" fill="none" stroke="steelblue"/>"#, pts.join(" ")));
    let strip = H - MARGIN - 12.0;
    for (i, s) in steps.iter().enumerate() {
        let x = x_of(i);
        let est = s.estimated_word.map_or(-1, i64::from);
        let _ = write!(
            svg.0,
            r#"<g class="step" data-t="{}" data-predicted="{}" data-estimated="{est}" data-anomaly="{}">"#,
            s.timestamp,
            s.predicted_word,
            u8::from(s.anomaly)
        );
        match s.estimated_word {
            Some(w) => {
                let _ = write!(svg.0, r#"<circle cx="{x:.2}" cy="{:.2}" r="2.5" fill="black"/>"#, y_of(f64::from(w)));
            }
            None => {
                let _ = write!(svg.0, r#"<circle cx="{x:.2}" cy="{:.2}" r="3" fill="none" stroke="black"/>"#, y_of(0.0));
            }
        }
        if s.anomaly {
            let _ = write!(svg.0, r#"<rect x="{:.2}" y="{strip:.2}" width="4" height="10" fill="crimson"/>"#, x - 2.0);
        }
        svg.line("</g>");
    }
    svg.text(MARGIN, H - 10.0, "start", "line: predicted, dots: estimated, red: anomaly");
    svg.finish()
}
