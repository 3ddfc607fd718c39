//! Minimal static SVG figures: heatmaps, scatter plots with trajectories,
//! and overlaid histograms.

use std::fmt::Write;

const SIZE: f64 = 400.0;
const PAD: f64 = 30.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Bounds {
    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x.0) / (self.x.1 - self.x.0) * SIZE
    }

    fn py(&self, y: f64) -> f64 {
        PAD + (self.y.1 - y) / (self.y.1 - self.y.0) * SIZE
    }
}

fn header(title: &str) -> String {
    let full = SIZE + 2.0 * PAD;
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{full}\" height=\"{full}\" viewBox=\"0 0 {full} {full}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{PAD}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\">{}</text>\n",
        PAD - 10.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Grey-to-blue ramp for `v` in `[0, 1]`.
fn ramp(v: f64) -> String {
    let v = v.clamp(0.0, 1.0);
    let r = (250.0 - 220.0 * v).round() as u8;
    let g = (250.0 - 170.0 * v).round() as u8;
    let b = (250.0 - 60.0 * v).round() as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Heatmap of a row-major `[rows, cols]` grid; row 0 is drawn at the top.
pub fn heatmap(title: &str, values: &[f64], rows: usize, cols: usize) -> String {
    let mut s = header(title);
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (w, h) = (SIZE / cols as f64, SIZE / rows as f64);
    for r in 0..rows {
        for c in 0..cols {
            let v = values[r * cols + c];
            let fill = if v.is_finite() {
                ramp((v - lo) / span)
            } else {
                "#000000".to_string()
            };
            let _ = writeln!(
                s,
                "<rect x=\"{:.3}\" y=\"{:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"{fill}\"/>",
                PAD + c as f64 * w,
                PAD + r as f64 * h,
                w + 0.05,
                h + 0.05
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Scatter of point sets plus polyline trajectories, all in data space.
pub fn scatter(title: &str, bounds: Bounds, sets: &[&[[f64; 2]]], paths: &[&[[f64; 2]]]) -> String {
    let mut s = header(title);
    let _ = writeln!(
        s,
        "<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{SIZE}\" height=\"{SIZE}\" fill=\"none\" stroke=\"#444\"/>"
    );
    for (i, pts) in sets.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        for p in pts.iter() {
            let _ = writeln!(
                s,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.5\" fill=\"{color}\" fill-opacity=\"0.6\"/>",
                bounds.px(p[0]),
                bounds.py(p[1])
            );
        }
    }
    for (i, path) in paths.iter().enumerate() {
        let color = PALETTE[(i + 1) % PALETTE.len()];
        let pts: Vec<String> = path
            .iter()
            .map(|p| format!("{:.2},{:.2}", bounds.px(p[0]), bounds.py(p[1])))
            .collect();
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1\"/>",
            pts.join(" ")
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Counts of `values` in `bins` equal bins over `[lo, hi]`; values outside
/// land in the edge bins.
pub fn histogram_counts(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let k = if width > 0.0 {
            ((v - lo) / width).floor()
        } else {
            0.0
        };
        let k = if k.is_nan() {
            0
        } else {
            (k.max(0.0) as usize).min(bins - 1)
        };
        counts[k] += 1;
    }
    counts
}

/// Overlaid outline histograms sharing one set of bins.
pub fn histograms(title: &str, cohorts: &[(&str, &[f64])], bins: usize) -> String {
    let mut s = header(title);
    let all = cohorts
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .filter(|v| v.is_finite());
    let lo = all.clone().fold(f64::INFINITY, f64::min);
    let hi = all.fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    };
    let counts: Vec<Vec<usize>> = cohorts
        .iter()
        .map(|(_, v)| histogram_counts(v, lo, hi, bins))
        .collect();
    let top = counts.iter().flatten().copied().max().unwrap_or(1).max(1) as f64;
    let w = SIZE / bins as f64;
    for (i, c) in counts.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = vec![format!("{PAD:.2},{:.2}", PAD + SIZE)];
        for (k, &n) in c.iter().enumerate() {
            let y = PAD + SIZE - n as f64 / top * SIZE;
            pts.push(format!("{:.2},{y:.2}", PAD + k as f64 * w));
            pts.push(format!("{:.2},{y:.2}", PAD + (k + 1) as f64 * w));
        }
        pts.push(format!("{:.2},{:.2}", PAD + SIZE, PAD + SIZE));
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"{color}\" fill-opacity=\"0.25\" stroke=\"{color}\"/>",
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{}</text>",
            PAD + SIZE - 120.0,
            PAD + 15.0 + 14.0 * i as f64,
            escape(cohorts[i].0)
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{PAD}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\">{lo:.3}</text>\
         <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{hi:.3}</text>",
        PAD + SIZE + 14.0,
        PAD + SIZE,
        PAD + SIZE + 14.0
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_bins_cover_everything() {
        let c = histogram_counts(&[0.0, 0.5, 1.0, 2.0, -1.0], 0.0, 1.0, 4);
        assert_eq!(c, vec![2, 0, 1, 2]);
        assert_eq!(c.iter().sum::<usize>(), 5);
    }

    #[test]
    fn figures_are_well_formed() {
        let h = heatmap("e<1", &[0.0, 1.0, 2.0, f64::NAN], 2, 2);
        assert!(h.starts_with("<svg") && h.trim_end().ends_with("</svg>"));
        assert_eq!(h.matches("<rect").count(), 1 + 4);
        assert!(h.contains("e&lt;1"));
        let b = Bounds {
            x: (-1.0, 1.0),
            y: (-1.0, 1.0),
        };
        let sc = scatter(
            "s",
            b,
            &[&[[0.0, 0.0], [1.0, 1.0]]],
            &[&[[0.0, 0.0], [0.5, 0.5]]],
        );
        assert_eq!(sc.matches("<circle").count(), 2);
        assert!(sc.contains("<polyline"));
        let hist = histograms("h", &[("in", &[1.0, 2.0]), ("out", &[3.0])], 5);
        assert_eq!(hist.matches("<polyline").count(), 2);
    }
}
