//! Static SVG rendering: the embedding as a scatter plot, and bar charts of
//! local-model coefficients grouped by k-means.

use std::fmt::Write;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::persist::SavedSolution;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 40.0;
const LEGEND: f64 = 140.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Anchors of a perceptually ordered sequential scale (dark blue to yellow).
const SEQUENTIAL: [(f64, [u8; 3]); 5] = [
    (0.0, [68, 1, 84]),
    (0.25, [59, 82, 139]),
    (0.5, [33, 145, 140]),
    (0.75, [94, 201, 98]),
    (1.0, [253, 231, 37]),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColorBy {
    /// Each item's share of the total loss.
    Loss,
    /// Ground-truth or user-supplied integer labels.
    Label,
    /// One column of `B`, by name.
    Coefficient(String),
}

impl FromStr for ColorBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loss" => Ok(Self::Loss),
            "label" => Ok(Self::Label),
            _ => match s.strip_prefix("coefficient:") {
                Some(name) if !name.is_empty() => Ok(Self::Coefficient(name.to_string())),
                _ => Err(Error::param(
                    "color-by",
                    format!("expected loss, label or coefficient:NAME, got {s:?}"),
                )),
            },
        }
    }
}

fn sequential(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let k = SEQUENTIAL.iter().rposition(|(a, _)| *a <= t).unwrap_or(0).min(SEQUENTIAL.len() - 2);
    let (a, ca) = SEQUENTIAL[k];
    let (b, cb) = SEQUENTIAL[k + 1];
    let f = (t - a) / (b - a);
    let mix = |i: usize| (ca[i] as f64 + f * (cb[i] as f64 - ca[i] as f64)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(0), mix(1), mix(2))
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(out: &mut String, width: f64, height: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#);
}

/// Scatter plot of the first two embedding dimensions (the second is zero
/// when `d = 1`).
pub fn scatter_svg(saved: &SavedSolution, color_by: &ColorBy, labels: Option<&[i64]>) -> Result<String> {
    let sol = &saved.solution;
    let n = sol.n();
    let z = sol.z.view();
    let (colors, legend) = match color_by {
        ColorBy::Loss => continuous(&sol.point_losses()?, "loss"),
        ColorBy::Coefficient(name) => {
            let names = saved.coefficient_names();
            let Some(col) = names.iter().position(|c| c == name) else {
                return Err(Error::param(
                    "color-by",
                    format!("unknown coefficient {name:?}; valid names: {}", names.join(", ")),
                ));
            };
            continuous(&sol.b.column(col).to_vec(), name)
        }
        ColorBy::Label => {
            let labels = labels.ok_or_else(|| Error::param("labels", "coloring by label needs labels"))?;
            if labels.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "labels",
                    expected: n,
                    actual: labels.len(),
                });
            }
            categorical(labels)
        }
    };

    let coord = |i: usize, c: usize| if c < z.ncols() { z[[i, c]] } else { 0.0 };
    let range = |c: usize| {
        let (lo, hi) = (0..n).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
            (lo.min(coord(i, c)), hi.max(coord(i, c)))
        });
        if hi - lo > 1e-12 { (lo, hi) } else { (lo - 1.0, hi + 1.0) }
    };
    let (x0, x1) = range(0);
    let (y0, y1) = range(1);
    let plot_w = WIDTH - LEGEND - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let px = |v: f64| MARGIN + (v - x0) / (x1 - x0) * plot_w;
    let py = |v: f64| HEIGHT - MARGIN - (v - y0) / (y1 - y0) * plot_h;

    let mut out = String::new();
    header(&mut out, WIDTH, HEIGHT);
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">Z1</text>"#, MARGIN + plot_w / 2.0, HEIGHT - 10.0);
    let _ = writeln!(
        out,
        r#"<text x="12" y="{:.1}" text-anchor="middle" transform="rotate(-90 12 {:.1})">Z2</text>"#,
        MARGIN + plot_h / 2.0,
        MARGIN + plot_h / 2.0
    );
    let _ = writeln!(out, r#"<g stroke="black" stroke-width="0.3">"#);
    for i in 0..n {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#,
            px(coord(i, 0)),
            py(coord(i, 1)),
            colors[i]
        );
    }
    let _ = writeln!(out, "</g>");
    out.push_str(&legend);
    out.push_str("</svg>\n");
    Ok(out)
}

fn continuous(values: &[f64], title: &str) -> (Vec<String>, String) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let colors = values.iter().map(|v| sequential((v - lo) / span)).collect();

    let x = WIDTH - LEGEND + 10.0;
    let mut legend = String::new();
    let _ = writeln!(legend, r#"<text x="{x}" y="{}">{}</text>"#, MARGIN, escape_xml(title));
    let _ = writeln!(
        legend,
        r#"<defs><linearGradient id="scale" x1="0" y1="1" x2="0" y2="0">"#
    );
    for (t, _) in SEQUENTIAL {
        let _ = writeln!(legend, r#"<stop offset="{t}" stop-color="{}"/>"#, sequential(t));
    }
    let _ = writeln!(legend, "</linearGradient></defs>");
    let top = MARGIN + 10.0;
    let height = 200.0;
    let _ = writeln!(legend, r#"<rect x="{x}" y="{top}" width="20" height="{height}" fill="url(#scale)" stroke="black"/>"#);
    let _ = writeln!(legend, r#"<text x="{}" y="{}" class="max">max {}</text>"#, x + 26.0, top + 10.0, fmt_value(hi));
    let _ = writeln!(legend, r#"<text x="{}" y="{}" class="min">min {}</text>"#, x + 26.0, top + height, fmt_value(lo));
    (colors, legend)
}

fn fmt_value(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-3) {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    }
}

fn categorical(labels: &[i64]) -> (Vec<String>, String) {
    let mut distinct: Vec<i64> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let color = |l: &i64| {
        let k = distinct.binary_search(l).expect("present");
        PALETTE[k % PALETTE.len()].to_string()
    };
    let colors = labels.iter().map(color).collect();
    let x = WIDTH - LEGEND + 10.0;
    let mut legend = String::new();
    let _ = writeln!(legend, r#"<text x="{x}" y="{MARGIN}">label</text>"#);
    for (k, l) in distinct.iter().enumerate().take(20) {
        let y = MARGIN + 12.0 + 16.0 * k as f64;
        let _ = writeln!(legend, r#"<rect x="{x}" y="{y}" width="10" height="10" fill="{}"/>"#, color(l));
        let _ = writeln!(legend, r#"<text x="{}" y="{}">{l}</text>"#, x + 16.0, y + 9.0);
    }
    (colors, legend)
}

/// Lloyd's k-means with `k` distinct rows, chosen by `seed`, as the starting
/// centroids. Returns the centroids (ordered by first appearance of their
/// cluster among the rows) and each row's cluster.
pub fn kmeans(data: ArrayView2<f64>, k: usize, seed: u64, max_iters: usize) -> Result<(Array2<f64>, Vec<usize>)> {
    let n = data.nrows();
    if k == 0 || k > n {
        return Err(Error::param("k", format!("need 1 <= k <= n (k = {k}, n = {n})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut start = index::sample(&mut rng, n, k).into_vec();
    start.sort_unstable();
    let mut centroids = data.select(Axis(0), &start);
    let mut assignment = vec![usize::MAX; n];
    for _ in 0..max_iters {
        let mut changed = false;
        for (i, row) in data.rows().into_iter().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for (c, cen) in centroids.rows().into_iter().enumerate() {
                let d: f64 = row.iter().zip(cen).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, c);
                }
            }
            if assignment[i] != best.1 {
                assignment[i] = best.1;
                changed = true;
            }
        }
        for c in 0..k {
            let members: Vec<usize> = (0..n).filter(|i| assignment[*i] == c).collect();
            if !members.is_empty() {
                let mean = data.select(Axis(0), &members).mean_axis(Axis(0)).expect("nonempty");
                centroids.row_mut(c).assign(&mean);
            }
        }
        if !changed {
            break;
        }
    }
    // Relabel clusters in order of first appearance for stable output.
    let mut order = Vec::with_capacity(k);
    for a in &assignment {
        if !order.contains(a) {
            order.push(*a);
        }
    }
    for c in 0..k {
        if !order.contains(&c) {
            order.push(c);
        }
    }
    let relabel: Vec<usize> = (0..k).map(|c| order.iter().position(|o| *o == c).expect("present")).collect();
    let centroids = centroids.select(Axis(0), &order);
    let assignment = assignment.iter().map(|a| relabel[*a]).collect();
    Ok((centroids, assignment))
}

/// One bar chart per k-means cluster of the local-model coefficients, showing
/// the cluster centroid.
pub fn coefficient_clusters_svg(saved: &SavedSolution, k: usize, seed: u64) -> Result<String> {
    let b = saved.solution.b.view();
    let names = saved.coefficient_names();
    let (centroids, assignment) = kmeans(b, k, seed, 300)?;
    let q = names.len();
    let extent = centroids.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);

    let row_h = 14.0;
    let panel_w = 220.0;
    let label_w = 110.0;
    let panel_h = 30.0 + row_h * q as f64;
    let cols = k.min(3);
    let rows = k.div_ceil(cols);
    let width = cols as f64 * (panel_w + label_w + 20.0) + 20.0;
    let height = rows as f64 * (panel_h + 20.0) + 20.0;

    let mut out = String::new();
    header(&mut out, width, height);
    for c in 0..k {
        let size = assignment.iter().filter(|a| **a == c).count();
        let ox = 20.0 + (c % cols) as f64 * (panel_w + label_w + 20.0);
        let oy = 20.0 + (c / cols) as f64 * (panel_h + 20.0);
        let axis = ox + label_w + panel_w / 2.0;
        let _ = writeln!(out, r#"<g class="cluster">"#);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-weight="bold">cluster {} (n = {size})</text>"#,
            ox,
            oy + 12.0,
            c + 1
        );
        let _ = writeln!(
            out,
            r#"<line x1="{axis:.1}" y1="{:.1}" x2="{axis:.1}" y2="{:.1}" stroke="black"/>"#,
            oy + 20.0,
            oy + panel_h
        );
        for (j, name) in names.iter().enumerate() {
            let v = centroids[[c, j]];
            let len = v / extent * (panel_w / 2.0 - 4.0);
            let y = oy + 22.0 + row_h * j as f64;
            let (x, w) = if len >= 0.0 { (axis, len) } else { (axis + len, -len) };
            let fill = if v >= 0.0 { "#d62728" } else { "#1f77b4" };
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                ox + label_w - 4.0,
                y + 10.0,
                escape_xml(name)
            );
            let _ = writeln!(
                out,
                r#"<rect class="bar" x="{x:.2}" y="{y:.1}" width="{w:.2}" height="{:.1}" fill="{fill}"><title>{}</title></rect>"#,
                row_h - 3.0,
                fmt_value(v)
            );
        }
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    Ok(out)
}
