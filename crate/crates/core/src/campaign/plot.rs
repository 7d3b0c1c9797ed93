use std::fmt::Write as _;
use std::path::Path;

use super::{AggregateRow, CampaignError};

/// Regret floor applied to log-scale plots only.
pub const PLOT_FLOOR: f64 = 1e-16;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 20.0, 30.0, 50.0); // left, right, top, bottom

fn plot_log10(r: f64) -> f64 {
    r.max(PLOT_FLOOR).log10()
}

/// Axis frame mapping data coordinates into one panel.
struct Frame {
    x0: f64,
    width: f64,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

impl Frame {
    fn new(x0: f64, width: f64, xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        Frame { x0, width, x_range: range(xs), y_range: range(ys) }
    }

    fn px(&self, x: f64) -> f64 {
        let (lo, hi) = self.x_range;
        self.x0 + MARGIN.0 + (x - lo) / (hi - lo) * (self.width - MARGIN.0 - MARGIN.1)
    }

    fn py(&self, y: f64) -> f64 {
        let (lo, hi) = self.y_range;
        H - MARGIN.3 - (y - lo) / (hi - lo) * (H - MARGIN.2 - MARGIN.3)
    }

    fn axes(&self, out: &mut String, x_label: &str, y_label: &str) {
        let (l, r) = (self.x0 + MARGIN.0, self.x0 + self.width - MARGIN.1);
        let (t, b) = (MARGIN.2, H - MARGIN.3);
        let _ = writeln!(out, r#"<rect x="{l:.2}" y="{t:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#, r - l, b - t);
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.x_range.0 + f * (self.x_range.1 - self.x_range.0);
            let yv = self.y_range.0 + f * (self.y_range.1 - self.y_range.0);
            let (xp, yp) = (self.px(xv), self.py(yv));
            let _ = writeln!(out, r#"<text x="{xp:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#, b + 16.0, tick(xv));
            let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"#, l - 6.0, yp + 4.0, tick(yv));
        }
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#, 0.5 * (l + r), H - 12.0, escape(x_label));
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
            self.x0 + 16.0,
            0.5 * (t + b),
            self.x0 + 16.0,
            0.5 * (t + b),
            escape(y_label)
        );
    }

    fn points(&self, pts: &[(f64, f64)]) -> String {
        pts.iter().map(|(x, y)| format!("{:.2},{:.2}", self.px(*x), self.py(*y))).collect::<Vec<_>>().join(" ")
    }
}

fn range(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let lo = v.clone().filter(|x| x.is_finite()).fold(f64::INFINITY, f64::min);
    let hi = v.filter(|x| x.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo <= f64::EPSILON * lo.abs().max(1.0) {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn tick(v: f64) -> String {
    if v == 0.0 || (1e-2..1e4).contains(&v.abs()) {
        format!("{}", (v * 100.0).round() / 100.0)
    } else {
        format!("{v:.1e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn document(width: f64, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{H}\" viewBox=\"0 0 {width} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

/// Log-regret against trial number for one seed; trials before the first
/// feasible one are omitted.
pub fn svg_for_trace(regrets: &[f64]) -> String {
    let pts: Vec<(f64, f64)> =
        regrets.iter().enumerate().filter(|(_, r)| **r < f64::INFINITY).map(|(i, r)| ((i + 1) as f64, plot_log10(*r))).collect();
    let frame = Frame::new(0.0, W, pts.iter().map(|p| p.0), pts.iter().map(|p| p.1));
    let mut body = String::new();
    frame.axes(&mut body, "trial", "log10 regret");
    if !pts.is_empty() {
        let _ = writeln!(body, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, frame.points(&pts));
    }
    document(W, &body)
}

/// Mean log-regret with its 5–95% band.
pub fn svg_for_aggregate(rows: &[AggregateRow]) -> String {
    let clamp = |v: f64| if v == f64::NEG_INFINITY { PLOT_FLOOR.log10() } else { v };
    let rows: Vec<&AggregateRow> = rows.iter().filter(|r| r.q95 < f64::INFINITY).collect();
    let ys = rows.iter().flat_map(|r| [clamp(r.q05), clamp(r.q95), clamp(r.mean_log10_regret)]).collect::<Vec<_>>();
    let frame = Frame::new(0.0, W, rows.iter().map(|r| r.iteration as f64), ys.iter().copied());
    let mut body = String::new();
    frame.axes(&mut body, "iteration", "log10 regret");
    if !rows.is_empty() {
        let mut band: Vec<(f64, f64)> = rows.iter().map(|r| (r.iteration as f64, clamp(r.q95))).collect();
        band.extend(rows.iter().rev().map(|r| (r.iteration as f64, clamp(r.q05))));
        let _ = writeln!(body, r##"<polygon points="{}" fill="#4682b4" fill-opacity="0.25" stroke="none"/>"##, frame.points(&band));
        let mean: Vec<(f64, f64)> =
            rows.iter().filter(|r| r.mean_log10_regret < f64::INFINITY).map(|r| (r.iteration as f64, clamp(r.mean_log10_regret))).collect();
        let _ = writeln!(body, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, frame.points(&mean));
    }
    document(W, &body)
}

/// One-dimensional surfaces become curves; two-dimensional ones a pair of
/// heat maps (SAA-EI left, EI right) on a white-to-blue scale per panel.
pub fn svg_for_surface(columns: &[String], points: &[Vec<f64>], saa_ei: &[Option<f64>], ei: &[f64]) -> String {
    match columns.len() {
        1 => {
            let xs: Vec<f64> = points.iter().map(|p| p[0]).collect();
            let all = saa_ei.iter().flatten().copied().chain(ei.iter().copied()).collect::<Vec<_>>();
            let frame = Frame::new(0.0, W, xs.iter().copied(), all.iter().copied());
            let mut body = String::new();
            frame.axes(&mut body, &columns[0], "acquisition");
            let h: Vec<(f64, f64)> = xs.iter().zip(saa_ei).filter_map(|(x, v)| v.map(|v| (*x, v))).collect();
            let e: Vec<(f64, f64)> = xs.iter().copied().zip(ei.iter().copied()).collect();
            for (pts, colour) in [(h, "firebrick"), (e, "steelblue")] {
                if !pts.is_empty() {
                    let _ = writeln!(body, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#, frame.points(&pts));
                }
            }
            document(W, &body)
        }
        2 => {
            let mut body = String::new();
            let saa: Vec<Option<f64>> = saa_ei.to_vec();
            let std: Vec<Option<f64>> = ei.iter().map(|v| Some(*v)).collect();
            for (panel, (values, title)) in [(saa, "SAA-EI"), (std, "EI")].into_iter().enumerate() {
                heat_map(&mut body, panel as f64 * W, columns, points, &values, title);
            }
            document(2.0 * W, &body)
        }
        _ => document(W, ""),
    }
}

fn heat_map(out: &mut String, x0: f64, columns: &[String], points: &[Vec<f64>], values: &[Option<f64>], title: &str) {
    let frame = Frame::new(x0, W, points.iter().map(|p| p[0]), points.iter().map(|p| p[1]));
    let distinct = |j: usize| {
        let mut v: Vec<f64> = points.iter().map(|p| p[j]).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len().max(2) - 1
    };
    let cell_w = (frame.px(frame.x_range.1) - frame.px(frame.x_range.0)) / distinct(0) as f64;
    let cell_h = (frame.py(frame.y_range.0) - frame.py(frame.y_range.1)) / distinct(1) as f64;
    let vmax = values.iter().flatten().fold(0.0f64, |m, v| m.max(*v));
    for (p, v) in points.iter().zip(values) {
        let fill = match v {
            None => "#999999".to_string(),
            Some(v) => {
                let s = if vmax > 0.0 { (v / vmax).clamp(0.0, 1.0) } else { 0.0 };
                let c = |full: f64| (255.0 - s * (255.0 - full)).round() as u8;
                format!("#{:02x}{:02x}{:02x}", c(33.0), c(102.0), c(172.0))
            }
        };
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
            frame.px(p[0]) - 0.5 * cell_w,
            frame.py(p[1]) - 0.5 * cell_h,
            cell_w,
            cell_h
        );
    }
    frame.axes(out, &columns[0], &columns[1]);
    let _ = writeln!(out, r#"<text x="{:.2}" y="18" font-size="13" text-anchor="middle">{title}</text>"#, x0 + 0.5 * W);
}

/// Render a trial, aggregate or surface CSV, recognized by its header.
pub fn plot_csv(path: &Path) -> Result<String, CampaignError> {
    let fmt = |reason: String| CampaignError::Format { path: path.to_path_buf(), reason };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| fmt(e.to_string()))?;
    let headers: Vec<String> = rdr.headers().map_err(|e| fmt(e.to_string()))?.iter().map(String::from).collect();
    let rows: Vec<csv::StringRecord> = rdr.records().collect::<Result<_, _>>().map_err(|e| fmt(e.to_string()))?;
    let col = |name: &str| headers.iter().position(|h| h == name);
    let num = |s: &str, line: usize| s.parse::<f64>().map_err(|_| fmt(format!("row {}: `{s}` is not a number", line + 2)));
    if let (Some(m), Some(a), Some(b), Some(n)) = (col("mean_log10_regret"), col("q05"), col("q95"), col("n_seeds")) {
        let it = col("iteration").ok_or_else(|| fmt("no `iteration` column".into()))?;
        let parsed = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                Ok(AggregateRow {
                    iteration: num(&r[it], i)? as usize,
                    mean_log10_regret: num(&r[m], i)?,
                    q05: num(&r[a], i)?,
                    q95: num(&r[b], i)?,
                    n_seeds: num(&r[n], i)? as usize,
                })
            })
            .collect::<Result<Vec<_>, CampaignError>>()?;
        return Ok(svg_for_aggregate(&parsed));
    }
    if let Some(rc) = col("regret") {
        let regrets = rows.iter().enumerate().map(|(i, r)| num(&r[rc], i)).collect::<Result<Vec<_>, _>>()?;
        return Ok(svg_for_trace(&regrets));
    }
    if let (Some(sc), Some(vc), Some(ec)) = (col("saa_ei"), col("saa_ei_valid"), col("ei")) {
        let columns: Vec<String> = headers[..sc].to_vec();
        let mut points = Vec::with_capacity(rows.len());
        let mut saa = Vec::with_capacity(rows.len());
        let mut ei = Vec::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            points.push((0..sc).map(|j| num(&r[j], i)).collect::<Result<Vec<_>, _>>()?);
            saa.push(if &r[vc] == "true" { Some(num(&r[sc], i)?) } else { None });
            ei.push(num(&r[ec], i)?);
        }
        return Ok(svg_for_surface(&columns, &points, &saa, &ei));
    }
    Err(fmt("unrecognized CSV: expected a trial, aggregate or surface file".into()))
}
