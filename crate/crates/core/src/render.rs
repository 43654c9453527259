//! Static report bundle: SVG plots and the delimited tables behind them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::multiverse::{Family, ModelId};
use crate::pipeline::{FilterReport, ModelStatus, QoiSummary};
use crate::ppc::PpcResult;

const WIDTH: f64 = 720.0;
const ROW: f64 = 18.0;
const MARGIN_LEFT: f64 = 330.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 40.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Axis {
    lo: f64,
    hi: f64,
    x0: f64,
    x1: f64,
}

impl Axis {
    fn new(lo: f64, hi: f64, x0: f64, x1: f64) -> Axis {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1.0, hi + 1.0) };
        let pad = 0.05 * (hi - lo);
        Axis { lo: lo - pad, hi: hi + pad, x0, x1 }
    }

    fn map(&self, v: f64) -> f64 {
        self.x0 + (v - self.lo) / (self.hi - self.lo) * (self.x1 - self.x0)
    }

    fn ticks(&self) -> Vec<f64> {
        let span = self.hi - self.lo;
        let raw = span / 6.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
        let mut t = (self.lo / step).ceil() * step;
        let mut out = Vec::new();
        while t <= self.hi {
            out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
            t += step;
        }
        out
    }
}

fn svg_open(height: f64, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{height}\" viewBox=\"0 0 {WIDTH} {height}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{}\" y=\"20\" font-size=\"14\" text-anchor=\"middle\">{}</text>", WIDTH / 2.0, escape(title));
    s
}

fn x_axis(s: &mut String, axis: &Axis, y: f64, label: &str) {
    let _ = writeln!(s, "<line x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"black\"/>", axis.x0, axis.x1);
    for t in axis.ticks() {
        let x = axis.map(t);
        let _ = writeln!(s, "<line x1=\"{x:.2}\" y1=\"{y}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"black\"/>", y + 4.0);
        let _ = writeln!(s, "<text x=\"{x:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>", y + 16.0, fmt_tick(t));
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", (axis.x0 + axis.x1) / 2.0, y + 32.0, escape(label));
}

fn fmt_tick(t: f64) -> String {
    let s = format!("{t:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn glyph(s: &mut String, family: Option<Family>, x: f64, y: f64, fill: &str, stroke: &str) {
    match family {
        Some(Family::Poisson) => {
            let _ = writeln!(s, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"4\" fill=\"{fill}\" stroke=\"{stroke}\"/>");
        }
        Some(Family::NegativeBinomial) => {
            let _ = writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"8\" height=\"8\" fill=\"{fill}\" stroke=\"{stroke}\"/>",
                x - 4.0,
                y - 4.0
            );
        }
        _ => {
            let _ = writeln!(
                s,
                "<polygon points=\"{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}\" fill=\"{fill}\" stroke=\"{stroke}\"/>",
                x,
                y - 5.0,
                x - 5.0,
                y + 4.0,
                x + 5.0,
                y + 4.0
            );
        }
    }
}

fn family_of(description: &str) -> Option<Family> {
    description.split('|').next().and_then(|f| f.trim().parse().ok())
}

/// Elpd-difference dot-interval plot (delta ± k se, ordered by delta) and
/// its table. `only_retained` restricts it to the filtered set.
pub fn elpd_plot(report: &FilterReport, only_retained: bool) -> (String, String) {
    let mut rows: Vec<_> = report
        .models
        .iter()
        .filter(|m| m.comparison.is_some())
        .filter(|m| !only_retained || m.status == ModelStatus::Retained)
        .collect();
    rows.sort_by(|a, b| {
        let (ca, cb) = (a.comparison.as_ref().unwrap(), b.comparison.as_ref().unwrap());
        cb.delta.total_cmp(&ca.delta).then_with(|| a.model_id.cmp(&b.model_id))
    });
    let k = report.k_se;
    let mut table = String::from("model_id,description,delta,se_delta,lower,upper,reliable,normal_approx_valid,status\n");
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for m in &rows {
        let c = m.comparison.as_ref().unwrap();
        lo = lo.min(c.delta - k * c.se_delta);
        hi = hi.max(c.delta + k * c.se_delta);
        let reliable = m.cv.as_ref().is_some_and(|v| v.reliable);
        let _ = writeln!(
            table,
            "{},\"{}\",{},{},{},{},{},{},{}",
            m.model_id,
            m.description,
            c.delta,
            c.se_delta,
            c.delta - k * c.se_delta,
            c.delta + k * c.se_delta,
            reliable,
            c.normal_approx_valid,
            m.status.as_str()
        );
    }
    let height = MARGIN_TOP + MARGIN_BOTTOM + ROW * rows.len().max(1) as f64 + 20.0;
    let title = if only_retained { "Filtered set: elpd difference to the best model" } else { "All models: elpd difference to the best model" };
    let mut s = svg_open(height, title);
    if rows.is_empty() {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"firebrick\" font-size=\"14\">EMPTY FILTERED SET</text>", WIDTH / 2.0, MARGIN_TOP + 20.0);
        s.push_str("</svg>\n");
        return (s, table);
    }
    let axis = Axis::new(lo, hi, MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let zero = axis.map(0.0);
    let bottom = MARGIN_TOP + ROW * rows.len() as f64;
    let _ = writeln!(s, "<line x1=\"{zero:.2}\" y1=\"{MARGIN_TOP}\" x2=\"{zero:.2}\" y2=\"{bottom}\" stroke=\"grey\" stroke-dasharray=\"4 3\"/>");
    for (r, m) in rows.iter().enumerate() {
        let c = m.comparison.as_ref().unwrap();
        let y = MARGIN_TOP + ROW * (r as f64 + 0.5);
        let reliable = m.cv.as_ref().is_some_and(|v| v.reliable) && c.normal_approx_valid;
        let colour = if reliable { "black" } else { "darkorange" };
        let fill = if m.status == ModelStatus::Retained { colour } else { "white" };
        let _ = writeln!(
            s,
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"{colour}\" stroke-width=\"1.5\"/>",
            axis.map(c.delta - k * c.se_delta),
            axis.map(c.delta + k * c.se_delta)
        );
        glyph(&mut s, family_of(&m.description), axis.map(c.delta), y, fill, colour);
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{} {}</text>",
            MARGIN_LEFT - 8.0,
            y + 4.0,
            m.model_id.short(),
            escape(&m.description)
        );
    }
    x_axis(&mut s, &axis, bottom + 4.0, &format!("elpd difference ± {k} se (circle: Poisson, square: negative binomial; orange: unreliable)"));
    s.push_str("</svg>\n");
    (s, table)
}

/// Quantity-of-interest interval plot (median, 50% and 95% intervals,
/// ordered by median) and its table.
pub fn qoi_plot(qoi: &str, rows: &[QoiSummary], title: &str) -> (String, String) {
    let mut table = String::from("model_id,description,retained,q025,q25,q50,q75,q975\n");
    let present: Vec<&QoiSummary> = rows.iter().filter(|r| r.quantiles.is_some()).collect();
    for r in rows {
        match r.quantiles {
            Some(q) => {
                let _ = writeln!(table, "{},\"{}\",{},{},{},{},{},{}", r.model_id, r.description, r.retained, q[0], q[1], q[2], q[3], q[4]);
            }
            None => {
                let _ = writeln!(table, "{},\"{}\",{},absent,absent,absent,absent,absent", r.model_id, r.description, r.retained);
            }
        }
    }
    let height = MARGIN_TOP + MARGIN_BOTTOM + ROW * present.len().max(1) as f64 + 20.0;
    let mut s = svg_open(height, title);
    if present.is_empty() {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">no model has `{}`</text>", WIDTH / 2.0, MARGIN_TOP + 20.0, escape(qoi));
        s.push_str("</svg>\n");
        return (s, table);
    }
    let lo = present.iter().map(|r| r.quantiles.unwrap()[0]).fold(f64::INFINITY, f64::min);
    let hi = present.iter().map(|r| r.quantiles.unwrap()[4]).fold(f64::NEG_INFINITY, f64::max);
    let axis = Axis::new(lo.min(0.0), hi.max(0.0), MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let bottom = MARGIN_TOP + ROW * present.len() as f64;
    let zero = axis.map(0.0);
    let _ = writeln!(s, "<line x1=\"{zero:.2}\" y1=\"{MARGIN_TOP}\" x2=\"{zero:.2}\" y2=\"{bottom}\" stroke=\"grey\" stroke-dasharray=\"4 3\"/>");
    for (r, row) in present.iter().enumerate() {
        let q = row.quantiles.unwrap();
        let y = MARGIN_TOP + ROW * (r as f64 + 0.5);
        let colour = if row.retained { "steelblue" } else { "grey" };
        let _ = writeln!(s, "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"{colour}\" stroke-width=\"1\"/>", axis.map(q[0]), axis.map(q[4]));
        let _ = writeln!(s, "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"{colour}\" stroke-width=\"4\"/>", axis.map(q[1]), axis.map(q[3]));
        let _ = writeln!(s, "<circle cx=\"{:.2}\" cy=\"{y:.2}\" r=\"3.5\" fill=\"white\" stroke=\"{colour}\"/>", axis.map(q[2]));
        let _ = writeln!(s, "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{} {}</text>", MARGIN_LEFT - 8.0, y + 4.0, row.model_id.short(), escape(&row.description));
    }
    x_axis(&mut s, &axis, bottom + 4.0, &format!("{qoi}: median, 50% and 95% intervals"));
    s.push_str("</svg>\n");
    (s, table)
}

/// PIT-ECDF difference plot with its simultaneous band.
pub fn ppc_plot(id: &ModelId, description: &str, r: &PpcResult) -> String {
    let height = 320.0;
    let (x0, x1, y0, y1) = (60.0, WIDTH - MARGIN_RIGHT, 40.0, height - 50.0);
    let grid = &r.band.grid;
    let diffs = |v: &[f64]| -> Vec<f64> { v.iter().zip(grid).map(|(a, z)| a - z).collect() };
    let (lo, up, ec) = (diffs(&r.band.lower), diffs(&r.band.upper), diffs(&r.ecdf));
    let span = lo.iter().chain(&up).chain(&ec).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3) * 1.1;
    let px = |z: f64| x0 + z * (x1 - x0);
    let py = |d: f64| (y0 + y1) / 2.0 - d / span * (y1 - y0) / 2.0;
    let title = format!("PIT ECDF difference: {} {} ({})", id.short(), description, r.verdict.as_str());
    let mut s = svg_open(height, &title);
    let mut band = String::new();
    for (z, u) in grid.iter().zip(&up) {
        let _ = write!(band, "{:.2},{:.2} ", px(*z), py(*u));
    }
    for (z, l) in grid.iter().zip(&lo).rev() {
        let _ = write!(band, "{:.2},{:.2} ", px(*z), py(*l));
    }
    let _ = writeln!(s, "<polygon points=\"{}\" fill=\"lightsteelblue\" stroke=\"none\"/>", band.trim_end());
    let line: Vec<String> = grid.iter().zip(&ec).map(|(z, d)| format!("{:.2},{:.2}", px(*z), py(*d))).collect();
    let colour = if r.verdict == crate::ppc::PpcVerdict::Pass { "black" } else { "firebrick" };
    let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.2\"/>", line.join(" "));
    let _ = writeln!(s, "<line x1=\"{x0}\" y1=\"{:.2}\" x2=\"{x1}\" y2=\"{:.2}\" stroke=\"grey\" stroke-dasharray=\"4 3\"/>", py(0.0), py(0.0));
    let axis = Axis { lo: 0.0, hi: 1.0, x0, x1 };
    x_axis(&mut s, &axis, y1 + 4.0, "PIT value");
    let _ = writeln!(s, "<text x=\"14\" y=\"{:.2}\" transform=\"rotate(-90 14 {:.2})\" text-anchor=\"middle\">ECDF - uniform CDF</text>", (y0 + y1) / 2.0, (y0 + y1) / 2.0);
    s.push_str("</svg>\n");
    s
}

/// Files written by `render_report` and notes about omitted plots.
#[derive(Debug, Clone, Default)]
pub struct RenderOutcome {
    pub files: Vec<PathBuf>,
    pub notes: Vec<String>,
}

fn put(dir: &Path, name: &str, text: &str, out: &mut RenderOutcome) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    out.files.push(path);
    Ok(())
}

/// Writes the report bundle into `dir`: report manifest and tables,
/// elpd-difference plots for all models and for the filtered set, QoI
/// plots when `qoi` is given and one PIT plot per checked model.
pub fn render_report(
    dir: &Path,
    report: &FilterReport,
    qoi: Option<(&str, &[QoiSummary])>,
    ppc: &BTreeMap<ModelId, PpcResult>,
) -> Result<RenderOutcome> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let plots = dir.join("plots");
    std::fs::create_dir_all(&plots).map_err(|e| Error::io(&plots, e))?;
    let mut out = RenderOutcome::default();
    put(dir, "report.json", &report.to_json(), &mut out)?;
    put(dir, "models.csv", &report.models_table(), &mut out)?;
    let (svg, table) = elpd_plot(report, false);
    put(&plots, "elpd_all.svg", &svg, &mut out)?;
    put(dir, "elpd_all.csv", &table, &mut out)?;
    let (svg, table) = elpd_plot(report, true);
    put(&plots, "elpd_filtered.svg", &svg, &mut out)?;
    put(dir, "elpd_filtered.csv", &table, &mut out)?;
    if let Some((name, rows)) = qoi {
        for m in &report.models {
            if m.status == ModelStatus::Retained && !rows.iter().any(|r| r.model_id == m.model_id && r.quantiles.is_some()) {
                out.notes.push(format!("model {}: no draws of `{name}`; omitted from the QoI plot", m.model_id));
            }
        }
        let (svg, table) = qoi_plot(name, rows, &format!("{name} across all models"));
        put(&plots, "qoi_all.svg", &svg, &mut out)?;
        put(dir, "qoi_all.csv", &table, &mut out)?;
        let retained: Vec<QoiSummary> = rows.iter().filter(|r| r.retained).cloned().collect();
        let (svg, table) = qoi_plot(name, &retained, &format!("{name} across the filtered set"));
        put(&plots, "qoi_filtered.svg", &svg, &mut out)?;
        put(dir, "qoi_filtered.csv", &table, &mut out)?;
    }
    let ppc_dir = dir.join("ppc");
    std::fs::create_dir_all(&ppc_dir).map_err(|e| Error::io(&ppc_dir, e))?;
    for m in &report.models {
        match ppc.get(&m.model_id) {
            Some(r) => {
                let short = m.model_id.short();
                put(&plots, &format!("ppc_{short}.svg"), &ppc_plot(&m.model_id, &m.description, r), &mut out)?;
                put(&ppc_dir, &format!("{short}_pit.csv"), &r.pit_table(), &mut out)?;
                put(&ppc_dir, &format!("{short}_band.csv"), &r.band_table(), &mut out)?;
            }
            None if m.status == ModelStatus::Retained => {
                out.notes.push(format!("model {}: no posterior predictive check available; plot omitted", m.model_id));
            }
            None => {}
        }
    }
    Ok(out)
}
