//! Line charts of sweep summaries and loss histories as standalone SVG.

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use std::fmt::Write as _;
use std::path::Path;

const SUMMARY_HEADER: [&str; 7] = ["device", "series", "x", "n", "mean", "std", "median"];
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    SweepSlices,
    SweepRepeats,
    SweepFaults,
    SweepDrift,
    Lipschitz,
    Loss,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum AxisScale {
    Linear,
    Log,
    /// `log10(1 + x)`, for time axes that start at zero.
    Log1p,
}

impl AxisScale {
    fn map(self, v: f64) -> f64 {
        match self {
            AxisScale::Linear => v,
            AxisScale::Log => v.log10(),
            AxisScale::Log1p => (1.0 + v).log10(),
        }
    }

    fn admits(self, v: f64) -> bool {
        match self {
            AxisScale::Linear => v.is_finite(),
            AxisScale::Log => v > 0.0 && v.is_finite(),
            AxisScale::Log1p => v >= 0.0 && v.is_finite(),
        }
    }
}

/// One named polyline.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    x_scale: AxisScale,
    y_scale: AxisScale,
}

impl PlotKind {
    fn series_filter(self, series: &str) -> bool {
        match self {
            PlotKind::SweepSlices => series == "slices",
            PlotKind::SweepRepeats => series == "repeats",
            PlotKind::SweepFaults => matches!(series, "fault_free" | "unretrained" | "retrained"),
            PlotKind::SweepDrift => series == "drift",
            PlotKind::Lipschitz => series.starts_with("lipschitz_"),
            PlotKind::Loss => true,
        }
    }

    fn axes(self) -> (&'static str, AxisScale, &'static str, AxisScale) {
        match self {
            PlotKind::SweepSlices => ("slices", AxisScale::Log, "test loss (median)", AxisScale::Log),
            PlotKind::SweepRepeats => ("repeats", AxisScale::Log, "test loss (median)", AxisScale::Log),
            PlotKind::SweepFaults => ("fault ratio", AxisScale::Linear, "test loss (median)", AxisScale::Log),
            PlotKind::SweepDrift => ("time since programming [s]", AxisScale::Log1p, "test loss (median)", AxisScale::Log),
            PlotKind::Lipschitz => ("omega0", AxisScale::Log, "Lipschitz estimate (median)", AxisScale::Log),
            PlotKind::Loss => ("epoch", AxisScale::Linear, "loss", AxisScale::Log),
        }
    }
}

/// Reads a summary or loss-history CSV into a chart of the given kind.
pub fn load_chart(path: &Path, kind: PlotKind) -> Result<Chart> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut series: Vec<Series> = Vec::new();
    let mut add = |name: String, x: f64, y: f64| match series.iter_mut().find(|s| s.name == name) {
        Some(s) => s.points.push((x, y)),
        None => series.push(Series { name, points: vec![(x, y)] }),
    };
    let parse = |field: &str, line: u64| -> Result<f64> {
        if field.is_empty() {
            return Ok(f64::NAN);
        }
        field.parse::<f64>().with_context(|| format!("line {line}: bad number {field:?}"))
    };
    if kind == PlotKind::Loss {
        let ok = header.len() >= 3 && header[..3] == ["epoch", "train_loss", "test_loss"] && header.len() <= 4;
        if !ok {
            bail!("expected loss-history columns epoch,train_loss,test_loss[,wall_ms], found {}", header.join(","));
        }
        for rec in reader.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let epoch = parse(&rec[0], line)?;
            add("train_loss".into(), epoch, parse(&rec[1], line)?);
            add("test_loss".into(), epoch, parse(&rec[2], line)?);
        }
    } else {
        if header != SUMMARY_HEADER {
            bail!("expected summary columns {}, found {}", SUMMARY_HEADER.join(","), header.join(","));
        }
        for rec in reader.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            if !kind.series_filter(&rec[1]) {
                continue;
            }
            let name = if kind == PlotKind::SweepFaults || kind == PlotKind::Lipschitz {
                format!("{} {}", &rec[0], &rec[1])
            } else {
                rec[0].to_string()
            };
            add(name, parse(&rec[2], line)?, parse(&rec[6], line)?);
        }
    }
    let (x_label, mut x_scale, y_label, mut y_scale) = kind.axes();
    for s in &mut series {
        s.points.retain(|p| p.0.is_finite() && p.1.is_finite());
        s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    series.retain(|s| !s.points.is_empty());
    if series.is_empty() {
        bail!("{} holds no rows for a {kind:?} chart", path.display());
    }
    let all = || series.iter().flat_map(|s| s.points.iter());
    if !all().all(|p| x_scale.admits(p.0)) {
        x_scale = AxisScale::Linear;
    }
    if !all().all(|p| y_scale.admits(p.1)) {
        y_scale = AxisScale::Linear;
    }
    let title = path.file_stem().and_then(|s| s.to_str()).unwrap_or("chart").to_string();
    Ok(Chart {
        title,
        x_label: x_label.into(),
        y_label: y_label.into(),
        series,
        x_scale,
        y_scale,
    })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn tick_label(scale: AxisScale, mapped: f64) -> String {
    let v = match scale {
        AxisScale::Linear => mapped,
        AxisScale::Log => 10f64.powf(mapped),
        AxisScale::Log1p => 10f64.powf(mapped) - 1.0,
    };
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

impl Chart {
    pub fn to_svg(&self) -> String {
        let (w, h) = (720.0, 440.0);
        let (left, right, top, bottom) = (80.0, 190.0, 40.0, 60.0);
        let (pw, ph) = (w - left - right, h - top - bottom);
        let pts = || self.series.iter().flat_map(|s| s.points.iter());
        let (x0, x1) = padded_range(pts().map(|p| self.x_scale.map(p.0)));
        let (y0, y1) = padded_range(pts().map(|p| self.y_scale.map(p.1)));
        let sx = |v: f64| left + (v - x0) / (x1 - x0) * pw;
        let sy = |v: f64| top + ph - (v - y0) / (y1 - y0) * ph;

        let mut svg = String::new();
        let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, left + pw / 2.0, escape(&self.title));
        let _ = writeln!(svg, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        for i in 0..=4 {
            let f = f64::from(i) / 4.0;
            let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let (px, py) = (sx(xv), sy(yv));
            let _ = writeln!(svg, r##"<line x1="{px:.1}" y1="{top}" x2="{px:.1}" y2="{}" stroke="#ddd"/>"##, top + ph);
            let _ = writeln!(svg, r##"<line x1="{left}" y1="{py:.1}" x2="{}" y2="{py:.1}" stroke="#ddd"/>"##, left + pw);
            let _ = writeln!(svg, r#"<text x="{px:.1}" y="{}" text-anchor="middle">{}</text>"#, top + ph + 18.0, tick_label(self.x_scale, xv));
            let _ = writeln!(svg, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, left - 6.0, py + 4.0, tick_label(self.y_scale, yv));
        }
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 16.0, escape(&self.x_label));
        let _ = writeln!(
            svg,
            r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
            top + ph / 2.0,
            escape(&self.y_label)
        );
        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let coords: Vec<String> = s
                .points
                .iter()
                .map(|p| format!("{:.1},{:.1}", sx(self.x_scale.map(p.0)), sy(self.y_scale.map(p.1))))
                .collect();
            let _ = writeln!(svg, r#"<g class="series" data-name="{}">"#, escape(&s.name));
            if coords.len() > 1 {
                let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, coords.join(" "));
            }
            for c in &coords {
                let (cx, cy) = c.split_once(',').expect("formatted pair");
                let _ = writeln!(svg, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#);
            }
            let _ = writeln!(svg, "</g>");
            let ly = top + 12.0 + 18.0 * i as f64;
            let lx = left + pw + 14.0;
            let _ = writeln!(svg, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
            let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&s.name));
        }
        svg.push_str("</svg>\n");
        svg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tick_labels() {
        assert_eq!(tick_label(AxisScale::Linear, 0.5), "0.5");
        assert_eq!(tick_label(AxisScale::Log, 2.0), "100");
        assert_eq!(tick_label(AxisScale::Log, -3.0), "1.0e-3");
        assert_eq!(tick_label(AxisScale::Log1p, 0.0), "0");
    }

    #[test]
    fn escapes_markup() {
        assert_eq!(escape("a<b & \"c\">"), "a&lt;b &amp; &quot;c&quot;&gt;");
    }
}
