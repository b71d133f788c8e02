//! Minimal static SVG rendering for training logs and metric reports.
//! Pure string formatting: the same input always yields the same bytes.

use motiongen::error::{Error, Result};
use motiongen::training::TrainLog;

const W: f64 = 820.0;
const H: f64 = 440.0;
const ML: f64 = 70.0; // margins: left, right, top, bottom
const MR: f64 = 20.0;
const MT: f64 = 30.0;
const MB: f64 = 50.0;

fn lerp(v: f64, lo: f64, hi: f64, a: f64, b: f64) -> f64 {
    if (hi - lo).abs() < 1e-300 {
        (a + b) / 2.0
    } else {
        a + (v - lo) / (hi - lo) * (b - a)
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 10000.0 || v.abs() < 0.01 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

struct Frame {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        lerp(v, self.x_lo, self.x_hi, ML, W - MR)
    }
    fn y(&self, v: f64) -> f64 {
        lerp(v, self.y_lo, self.y_hi, H - MB, MT)
    }

    /// Grid, axis lines, and tick labels.
    fn axes(&self, out: &mut String, x_label: &str, y_label: &str) {
        use std::fmt::Write;
        for i in 0..=4 {
            let fy = self.y_lo + (self.y_hi - self.y_lo) * i as f64 / 4.0;
            let py = self.y(fy);
            let _ = write!(
                out,
                r##"<line x1="{ml}" y1="{py:.1}" x2="{xr}" y2="{py:.1}" stroke="#dddddd"/><text x="{tx}" y="{ty:.1}" text-anchor="end" font-size="11">{lab}</text>"##,
                ml = ML,
                xr = W - MR,
                tx = ML - 6.0,
                ty = py + 4.0,
                lab = fmt_tick(fy)
            );
            let fx = self.x_lo + (self.x_hi - self.x_lo) * i as f64 / 4.0;
            let px = self.x(fx);
            let _ = write!(
                out,
                r##"<text x="{px:.1}" y="{ty}" text-anchor="middle" font-size="11">{lab}</text>"##,
                ty = H - MB + 18.0,
                lab = fmt_tick(fx)
            );
        }
        let _ = write!(
            out,
            r##"<rect x="{ml}" y="{mt}" width="{w:.1}" height="{h:.1}" fill="none" stroke="#333333"/><text x="{cx:.1}" y="{by}" text-anchor="middle" font-size="12">{x_label}</text><text x="16" y="{cy:.1}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {cy:.1})">{y_label}</text>"##,
            ml = ML,
            mt = MT,
            w = W - ML - MR,
            h = H - MT - MB,
            cx = (ML + W - MR) / 2.0,
            by = H - 12.0,
            cy = (MT + H - MB) / 2.0,
        );
    }
}

fn header() -> String {
    format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}" font-family="sans-serif"><rect width="{W}" height="{H}" fill="white"/>"##
    )
}

/// Loss curves over iterations: critic loss, generator loss, the
/// real-minus-fake score gap, and the gradient penalty term.
pub fn loss_curves(log: &TrainLog) -> String {
    use std::fmt::Write;
    let series: [(&str, &str, Vec<f64>); 4] = [
        ("critic loss", "#d62728", log.rows.iter().map(|r| r.d_loss).collect()),
        ("generator loss", "#1f77b4", log.rows.iter().map(|r| r.g_loss).collect()),
        ("score gap", "#2ca02c", log.rows.iter().map(|r| r.gap).collect()),
        ("penalty", "#9467bd", log.rows.iter().map(|r| r.penalty).collect()),
    ];
    let xs: Vec<f64> = log.rows.iter().map(|r| r.iter as f64).collect();
    let x_lo = xs.first().copied().unwrap_or(0.0);
    let x_hi = xs.last().copied().unwrap_or(1.0).max(x_lo + 1.0);
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for (_, _, v) in &series {
        for &y in v {
            y_lo = y_lo.min(y);
            y_hi = y_hi.max(y);
        }
    }
    if !y_lo.is_finite() || !y_hi.is_finite() {
        y_lo = -1.0;
        y_hi = 1.0;
    }
    let pad = (y_hi - y_lo).max(1e-9) * 0.05;
    let frame = Frame {
        x_lo,
        x_hi,
        y_lo: y_lo - pad,
        y_hi: y_hi + pad,
    };

    let mut out = header();
    frame.axes(&mut out, "iteration", "value");
    for (i, (name, color, ys)) in series.iter().enumerate() {
        let mut points = String::new();
        for (x, y) in xs.iter().zip(ys) {
            let _ = write!(points, "{:.1},{:.1} ", frame.x(*x), frame.y(*y));
        }
        let _ = write!(
            out,
            r##"<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>"##,
            pts = points.trim_end()
        );
        let lx = ML + 10.0 + 160.0 * i as f64;
        let _ = write!(
            out,
            r##"<line x1="{lx:.1}" y1="18" x2="{lx2:.1}" y2="18" stroke="{color}" stroke-width="2"/><text x="{tx:.1}" y="22" font-size="12">{name}</text>"##,
            lx2 = lx + 18.0,
            tx = lx + 24.0,
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Per-class distance bars from a metrics report, with the whole-set and
/// class-mean distances drawn as reference lines.
pub fn metric_bars(v: &serde_json::Value) -> Result<String> {
    use std::fmt::Write;
    let per_class = v
        .get("per_class")
        .and_then(|p| p.as_array())
        .ok_or_else(|| Error::data("metrics JSON has no per_class array"))?;
    if per_class.is_empty() {
        return Err(Error::data("metrics JSON has an empty per_class array"));
    }
    let mut bars = Vec::new();
    for (i, entry) in per_class.iter().enumerate() {
        let name = entry
            .get("name")
            .and_then(|n| n.as_str())
            .map(str::to_string)
            .unwrap_or_else(|| format!("class_{i}"));
        let fid = entry
            .get("fid")
            .and_then(|f| f.as_f64())
            .ok_or_else(|| Error::data(format!("per_class[{i}] has no numeric fid")))?;
        bars.push((name, fid));
    }
    let fid_whole = v.get("fid_whole").and_then(|f| f.as_f64());
    let fid_mean = v.get("fid_mean").and_then(|f| f.as_f64());
    let y_hi = bars
        .iter()
        .map(|(_, f)| *f)
        .chain(fid_whole)
        .chain(fid_mean)
        .fold(0.0_f64, f64::max)
        .max(1e-12)
        * 1.1;
    let frame = Frame {
        x_lo: 0.0,
        x_hi: bars.len() as f64,
        y_lo: 0.0,
        y_hi,
    };

    let mut out = header();
    frame.axes(&mut out, "", "distance");
    let slot = (W - ML - MR) / bars.len() as f64;
    for (i, (name, fid)) in bars.iter().enumerate() {
        let x = ML + slot * i as f64 + slot * 0.15;
        let y = frame.y(*fid);
        let _ = write!(
            out,
            r##"<rect x="{x:.1}" y="{y:.1}" width="{bw:.1}" height="{bh:.1}" fill="#1f77b4"/><text x="{cx:.1}" y="{ty}" text-anchor="middle" font-size="11">{name}</text><text x="{cx:.1}" y="{vy:.1}" text-anchor="middle" font-size="10">{val}</text>"##,
            bw = slot * 0.7,
            bh = (H - MB) - y,
            cx = x + slot * 0.35,
            ty = H - MB + 32.0,
            vy = y - 4.0,
            val = fmt_tick(*fid),
        );
    }
    for (value, color, label) in [
        (fid_whole, "#d62728", "whole"),
        (fid_mean, "#2ca02c", "class mean"),
    ] {
        if let Some(val) = value {
            let y = frame.y(val);
            let _ = write!(
                out,
                r##"<line x1="{ml}" y1="{y:.1}" x2="{xr}" y2="{y:.1}" stroke="{color}" stroke-dasharray="6 3"/><text x="{xr}" y="{ty:.1}" text-anchor="end" font-size="11" fill="{color}">{label} {val}</text>"##,
                ml = ML,
                xr = W - MR,
                ty = y - 4.0,
                val = fmt_tick(val),
            );
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}
