//! Frequency sweeps and Bode tables, with CSV and SVG output.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::analysis::{analyze, AnalysisError, Settings};
use crate::expr::Expr;
use crate::fmt_num;
use crate::response::{Method, OrderTag};
use crate::system::PlantSpec;

pub const CSV_HEADER: &str = "omega,re_H,im_H,gain_db,phase_deg,method,err,status";

/// Lowest gain drawn; anything below is clipped to the panel floor.
pub const GAIN_FLOOR_DB: f64 = -200.0;

/// `points` logarithmically spaced frequencies from `min` to `max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl LogGrid {
    pub fn new(min: f64, max: f64, points: usize) -> Result<Self, String> {
        if !(min > 0.0 && min.is_finite()) {
            return Err(format!("grid minimum {min} must be positive"));
        }
        if !(max > min && max.is_finite()) {
            return Err(format!("grid maximum {max} must exceed the minimum {min}"));
        }
        if points < 2 {
            return Err(format!("grid needs at least 2 points, got {points}"));
        }
        Ok(LogGrid { min, max, points })
    }

    pub fn values(&self) -> Vec<f64> {
        let (a, b) = (self.min.log10(), self.max.log10());
        let last = (self.points - 1) as f64;
        (0..self.points)
            .map(|k| match k {
                0 => self.min,
                k if k == self.points - 1 => self.max,
                k => 10f64.powf(a + (b - a) * k as f64 / last),
            })
            .collect()
    }
}

impl FromStr for LogGrid {
    type Err = String;

    /// `min:max:points`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("grid `{s}` must be min:max:points"));
        }
        let num = |p: &str| p.trim().parse::<f64>().map_err(|_| format!("`{p}` is not a number"));
        let points = parts[2]
            .trim()
            .parse::<usize>()
            .map_err(|_| format!("`{}` is not a point count", parts[2]))?;
        LogGrid::new(num(parts[0])?, num(parts[1])?, points)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowStatus {
    Ok,
    CrossCheckFailed,
    Diverged,
    NotSteady,
    Failed(String),
}

impl RowStatus {
    pub fn label(&self) -> &str {
        match self {
            RowStatus::Ok => "ok",
            RowStatus::CrossCheckFailed => "cross_check_failed",
            RowStatus::Diverged => "diverged",
            RowStatus::NotSteady => "not_steady",
            RowStatus::Failed(_) => "failed",
        }
    }

    fn from_error(e: &AnalysisError) -> Self {
        if e.is_divergence() {
            RowStatus::Diverged
        } else if e.is_not_steady() {
            RowStatus::NotSteady
        } else {
            RowStatus::Failed(e.to_string())
        }
    }
}

impl fmt::Display for RowStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One frequency of a Bode table. `h` is `None` when no method succeeded;
/// a zero response has `gain_db = -inf` and no phase.
#[derive(Debug, Clone, PartialEq)]
pub struct BodeRow {
    pub omega: f64,
    pub h: Option<Complex64>,
    pub gain_db: Option<f64>,
    pub phase_deg: Option<f64>,
    pub method: Option<Method>,
    pub err: Option<f64>,
    pub status: RowStatus,
}

impl BodeRow {
    pub fn new(omega: f64, h: Complex64, method: Method, err: f64, status: RowStatus) -> Self {
        let gain_db = 20.0 * h.norm().log10();
        let phase_deg = (h.norm() > 0.0).then(|| h.arg().to_degrees());
        BodeRow {
            omega,
            h: Some(h),
            gain_db: Some(gain_db),
            phase_deg,
            method: Some(method),
            err: Some(err),
            status,
        }
    }

    pub fn failed(omega: f64, status: RowStatus) -> Self {
        BodeRow {
            omega,
            h: None,
            gain_db: None,
            phase_deg: None,
            method: None,
            err: None,
            status,
        }
    }

    /// Gain when it can be drawn: finite and present.
    fn drawable_gain(&self) -> Option<f64> {
        self.gain_db.filter(|g| g.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodeTable {
    pub plant: String,
    pub observable: String,
    pub order: OrderTag,
    pub grid: LogGrid,
    pub rows: Vec<BodeRow>,
}

impl BodeTable {
    /// Sorts rows by frequency and unwraps the phase.
    pub fn new(plant: &str, observable: &str, order: OrderTag, grid: LogGrid, mut rows: Vec<BodeRow>) -> Self {
        rows.sort_by(|a, b| a.omega.total_cmp(&b.omega));
        unwrap_phase(&mut rows);
        BodeTable {
            plant: plant.to_string(),
            observable: observable.to_string(),
            order,
            grid,
            rows,
        }
    }

    /// Table of a known response evaluated on the grid.
    pub fn closed_form(
        plant: &str,
        observable: &str,
        order: OrderTag,
        grid: LogGrid,
        h: impl Fn(f64) -> Complex64,
    ) -> Self {
        let rows = grid
            .values()
            .into_iter()
            .map(|w| BodeRow::new(w, h(w), Method::ClosedForm, 0.0, RowStatus::Ok))
            .collect();
        Self::new(plant, observable, order, grid, rows)
    }

    /// `H_n(omega; y)` style legend label.
    pub fn label(&self) -> String {
        format!("H{}(ω; {})", self.order, self.observable)
    }

    /// Least-squares slope of gain against `log10 omega` over rows in
    /// `[lo, hi]`, in dB per decade.
    pub fn gain_slope(&self, lo: f64, hi: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.omega >= lo && r.omega <= hi)
            .filter_map(|r| r.drawable_gain().map(|g| (r.omega.log10(), g)))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        (sxx > 0.0).then(|| sxy / sxx)
    }
}

/// Removes jumps larger than 180 degrees between consecutive defined phases.
fn unwrap_phase(rows: &mut [BodeRow]) {
    let mut prev: Option<f64> = None;
    for r in rows.iter_mut() {
        if let Some(p) = r.phase_deg.as_mut() {
            if let Some(q) = prev {
                *p -= 360.0 * ((*p - q) / 360.0).round();
            }
            prev = Some(*p);
        }
    }
}

/// One table per order over `grid`. Frequencies run in parallel; each
/// failure becomes a tagged row.
pub fn sweep(
    plant: &PlantSpec,
    observable: &Expr,
    orders: &[OrderTag],
    grid: LogGrid,
    u0: Complex64,
    x0: &[Complex64],
    settings: &Settings,
) -> Result<Vec<BodeTable>, AnalysisError> {
    let plant = plant
        .with_observable(observable.clone())
        .map_err(|e| AnalysisError::Sim(e.into()))?;
    let omegas = grid.values();
    let per_omega: Vec<Vec<BodeRow>> = omegas
        .par_iter()
        .map(|&w| rows_at(&plant, w, u0, x0, orders, settings))
        .collect();

    let label = observable.to_string();
    Ok(orders
        .iter()
        .enumerate()
        .map(|(k, &order)| {
            let rows = per_omega.iter().map(|r| r[k].clone()).collect();
            BodeTable::new(&plant.name, &label, order, grid, rows)
        })
        .collect())
}

fn rows_at(
    plant: &PlantSpec,
    omega: f64,
    u0: Complex64,
    x0: &[Complex64],
    orders: &[OrderTag],
    settings: &Settings,
) -> Vec<BodeRow> {
    let analysis = match analyze(plant, omega, u0, x0, orders, settings) {
        Ok(a) => a,
        Err(e) => {
            let status = RowStatus::from_error(&e);
            return orders.iter().map(|_| BodeRow::failed(omega, status.clone())).collect();
        }
    };
    orders
        .iter()
        .map(|&order| {
            let failure = analysis
                .estimates
                .iter()
                .filter(|e| e.order == order)
                .find_map(|e| e.result.as_ref().err());
            let status = match failure {
                Some(e) => RowStatus::from_error(e),
                None if analysis.checks_for(order).all(|c| c.passed) => RowStatus::Ok,
                None => RowStatus::CrossCheckFailed,
            };
            match analysis.best(order) {
                Some(r) => BodeRow::new(omega, r.value, r.method, r.err_estimate, status),
                None => BodeRow::failed(omega, status),
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => fmt_num(x),
        _ => String::new(),
    }
}

pub fn emit_csv<W: Write>(t: &BodeTable, mut w: W) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in &t.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            fmt_num(r.omega),
            opt(r.h.map(|h| h.re)),
            opt(r.h.map(|h| h.im)),
            opt(r.gain_db),
            opt(r.phase_deg),
            r.method.map_or("", |m| m.label()),
            opt(r.err),
            r.status,
        )?;
    }
    Ok(())
}

pub fn csv_string(t: &BodeTable) -> String {
    let mut buf = Vec::new();
    emit_csv(t, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("CSV is ASCII")
}

/// Reads rows written by [`emit_csv`]. Status detail of generic failures is
/// not stored in the file and comes back empty.
pub fn read_csv<R: BufRead>(r: R) -> Result<Vec<BodeRow>, String> {
    let mut lines = r.lines();
    let header = lines.next().ok_or("empty file")?.map_err(|e| e.to_string())?;
    if header != CSV_HEADER {
        return Err(format!("unexpected header `{header}`"));
    }
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(format!("row {}: expected 8 fields, found {}", k + 1, f.len()));
        }
        let num = |s: &str| -> Result<Option<f64>, String> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| format!("row {}: bad number `{s}`", k + 1))
            }
        };
        let omega = num(f[0])?.ok_or(format!("row {}: missing omega", k + 1))?;
        let h = match (num(f[1])?, num(f[2])?) {
            (Some(re), Some(im)) => Some(Complex64::new(re, im)),
            _ => None,
        };
        let gain_db = match (num(f[3])?, h) {
            (Some(g), _) => Some(g),
            (None, Some(_)) => Some(f64::NEG_INFINITY),
            (None, None) => None,
        };
        let method = match f[5] {
            "" => None,
            s => Some(Method::from_label(s).ok_or(format!("row {}: unknown method `{s}`", k + 1))?),
        };
        let status = match f[7] {
            "ok" => RowStatus::Ok,
            "cross_check_failed" => RowStatus::CrossCheckFailed,
            "diverged" => RowStatus::Diverged,
            "not_steady" => RowStatus::NotSteady,
            "failed" => RowStatus::Failed(String::new()),
            s => return Err(format!("row {}: unknown status `{s}`", k + 1)),
        };
        rows.push(BodeRow {
            omega,
            h,
            gain_db,
            phase_deg: num(f[4])?,
            method,
            err: num(f[6])?,
            status,
        });
    }
    Ok(rows)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

const WIDTH: f64 = 720.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 540.0;
const GAIN_TOP: f64 = 40.0;
const GAIN_BOTTOM: f64 = 250.0;
const PHASE_TOP: f64 = 300.0;
const PHASE_BOTTOM: f64 = 510.0;
const HEIGHT: f64 = 560.0;

/// Axis range rounded outward to multiples of `step`.
fn padded(lo: f64, hi: f64, step: f64) -> (f64, f64) {
    let a = (lo / step).floor() * step;
    let mut b = (hi / step).ceil() * step;
    if b <= a {
        b = a + step;
    }
    (a, b)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Path data through the defined points, starting a new subpath after
/// every gap.
fn path_data(points: impl Iterator<Item = Option<(f64, f64)>>) -> String {
    let mut d = String::new();
    let mut pen_down = false;
    for p in points {
        match p {
            Some((x, y)) => {
                if !d.is_empty() {
                    d.push(' ');
                }
                d.push_str(&format!("{}{x:.2} {y:.2}", if pen_down { "L" } else { "M" }));
                pen_down = true;
            }
            None => pen_down = false,
        }
    }
    d
}

/// Gain panel over phase panel, log frequency axis, one trace group per
/// table. Self-contained, no external references.
pub fn emit_svg<W: Write>(tables: &[BodeTable], mut w: W) -> io::Result<()> {
    if tables.is_empty() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "no tables to plot"));
    }
    let all_rows = || tables.iter().flat_map(|t| t.rows.iter());
    let w_lo = all_rows().map(|r| r.omega).fold(f64::INFINITY, f64::min);
    let w_hi = all_rows().map(|r| r.omega).fold(f64::NEG_INFINITY, f64::max);
    let (d_lo, d_hi) = padded(w_lo.log10(), w_hi.log10(), 1.0);

    let gains: Vec<f64> = all_rows().filter_map(|r| r.drawable_gain()).map(|g| g.max(GAIN_FLOOR_DB)).collect();
    let (g_lo, g_hi) = if gains.is_empty() {
        (-40.0, 0.0)
    } else {
        let lo = gains.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = gains.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        padded(lo, hi, 20.0)
    };
    let phases: Vec<f64> = all_rows().filter_map(|r| r.phase_deg).collect();
    let (p_lo, p_hi) = if phases.is_empty() {
        (-180.0, 0.0)
    } else {
        let lo = phases.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = phases.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        padded(lo, hi, 90.0)
    };

    let x_of = |omega: f64| LEFT + (omega.log10() - d_lo) / (d_hi - d_lo) * (RIGHT - LEFT);
    let gy = |g: f64| GAIN_BOTTOM - (g.max(GAIN_FLOOR_DB) - g_lo) / (g_hi - g_lo) * (GAIN_BOTTOM - GAIN_TOP);
    let py = |p: f64| PHASE_BOTTOM - (p - p_lo) / (p_hi - p_lo) * (PHASE_BOTTOM - PHASE_TOP);

    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    )?;
    writeln!(w, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#)?;

    let g_step = if g_hi - g_lo > 160.0 { 40.0 } else { 20.0 };
    let p_step = if p_hi - p_lo > 720.0 { 180.0 } else { 90.0 };
    for (class, top, bottom, lo, hi, step, unit, to_y) in [
        ("gain", GAIN_TOP, GAIN_BOTTOM, g_lo, g_hi, g_step, "gain [dB]", &gy as &dyn Fn(f64) -> f64),
        ("phase", PHASE_TOP, PHASE_BOTTOM, p_lo, p_hi, p_step, "phase [deg]", &py as &dyn Fn(f64) -> f64),
    ] {
        writeln!(w, r#"<g class="panel" id="{class}">"#)?;
        writeln!(
            w,
            r##"<rect x="{LEFT}" y="{top}" width="{:.2}" height="{:.2}" fill="none" stroke="#000"/>"##,
            RIGHT - LEFT,
            bottom - top
        )?;
        let mut d = d_lo;
        while d <= d_hi + 1e-9 {
            let x = LEFT + (d - d_lo) / (d_hi - d_lo) * (RIGHT - LEFT);
            writeln!(
                w,
                r##"<line x1="{x:.2}" y1="{top}" x2="{x:.2}" y2="{bottom}" stroke="#ccc"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">1e{}</text>"##,
                bottom + 14.0,
                d as i64
            )?;
            d += 1.0;
        }
        let mut v = lo;
        while v <= hi + 1e-9 {
            let y = to_y(v);
            writeln!(
                w,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{RIGHT}" y2="{y:.2}" stroke="#ccc"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                LEFT - 6.0,
                y + 4.0,
                v
            )?;
            v += step;
        }
        writeln!(
            w,
            r#"<text x="20" y="{:.2}" transform="rotate(-90 20 {:.2})" text-anchor="middle">{unit}</text>"#,
            (top + bottom) / 2.0,
            (top + bottom) / 2.0
        )?;
        writeln!(w, "</g>")?;
    }
    writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">ω [rad/s]</text>"#,
        (LEFT + RIGHT) / 2.0,
        PHASE_BOTTOM + 34.0
    )?;

    for (k, t) in tables.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let label = xml_escape(&t.label());
        let gain = path_data(t.rows.iter().map(|r| r.drawable_gain().map(|g| (x_of(r.omega), gy(g)))));
        let phase = path_data(t.rows.iter().map(|r| r.phase_deg.map(|p| (x_of(r.omega), py(p)))));
        writeln!(w, r#"<g class="trace" stroke="{color}" fill="none" stroke-width="1.5">"#)?;
        writeln!(w, "<title>{label}</title>")?;
        writeln!(w, r#"<path class="gain" d="{gain}"/>"#)?;
        writeln!(w, r#"<path class="phase" d="{phase}"/>"#)?;
        writeln!(w, "</g>")?;
        let y = GAIN_TOP + 10.0 + 18.0 * k as f64;
        writeln!(
            w,
            r#"<g class="legend"><line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{label}</text></g>"#,
            RIGHT + 16.0,
            RIGHT + 40.0,
            RIGHT + 46.0,
            y + 4.0
        )?;
    }
    writeln!(w, "</svg>")
}

pub fn svg_string(tables: &[BodeTable]) -> io::Result<String> {
    let mut buf = Vec::new();
    emit_svg(tables, &mut buf)?;
    Ok(String::from_utf8(buf).expect("SVG is UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> LogGrid {
        LogGrid::new(0.1, 10.0, 25).unwrap()
    }

    fn lag(w: f64) -> Complex64 {
        1.0 / Complex64::new(1.0, w)
    }

    #[test]
    fn grid_parsing_and_values() {
        let g: LogGrid = "0.1:10:25".parse().unwrap();
        let v = g.values();
        assert_eq!(v.len(), 25);
        assert_eq!(v[0], 0.1);
        assert_eq!(v[24], 10.0);
        assert!((v[12] - 1.0).abs() < 1e-14);
        assert!("0:1:3".parse::<LogGrid>().is_err());
        assert!("1:1:3".parse::<LogGrid>().is_err());
        assert!("0.1:1:1".parse::<LogGrid>().is_err());
        assert!("0.1:1".parse::<LogGrid>().is_err());
    }

    #[test]
    fn phase_unwrapping_removes_jumps() {
        // third-order lag winds through -270 degrees
        let t = BodeTable::closed_form("p", "x", OrderTag::fundamental(), grid(), |w| lag(w).powi(3) * lag(w / 3.0));
        for pair in t.rows.windows(2) {
            let (a, b) = (pair[0].phase_deg.unwrap(), pair[1].phase_deg.unwrap());
            assert!((a - b).abs() <= 180.0);
        }
        assert!(t.rows.last().unwrap().phase_deg.unwrap() < -180.0);
    }

    #[test]
    fn csv_header_rows_and_round_trip() {
        let mut t = BodeTable::closed_form("p", "x", OrderTag::fundamental(), grid(), lag);
        t.rows[3] = BodeRow::new(t.rows[3].omega, Complex64::new(0.0, 0.0), Method::HarmonicAverage, 1e-9, RowStatus::Ok);
        t.rows[5] = BodeRow::failed(t.rows[5].omega, RowStatus::NotSteady);
        let text = csv_string(&t);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert_eq!(text.lines().count(), 26);
        assert!(!text.contains('\r'));
        let zero_line = text.lines().nth(4).unwrap();
        assert_eq!(zero_line.split(',').nth(3), Some(""));

        let back = read_csv(text.as_bytes()).unwrap();
        assert_eq!(back.len(), t.rows.len());
        for (a, b) in back.iter().zip(&t.rows) {
            assert_eq!(a.status, b.status);
            assert_eq!(a.method, b.method);
            assert_eq!(a.gain_db.map(|g| g.is_finite()), b.gain_db.map(|g| g.is_finite()));
            if let (Some(x), Some(y)) = (a.h, b.h) {
                assert!((x - y).norm() <= 1e-14 * y.norm());
            }
        }
        let again = BodeTable { rows: back, ..t.clone() };
        assert_eq!(csv_string(&again), text);
    }

    #[test]
    fn slope_of_first_order_lag() {
        let g = LogGrid::new(10.0, 100.0, 11).unwrap();
        let t = BodeTable::closed_form("p", "x", OrderTag::fundamental(), g, lag);
        let s = t.gain_slope(10.0, 100.0).unwrap();
        assert!((s + 20.0).abs() < 0.2, "{s}");
    }

    #[test]
    fn svg_structure() {
        let a = BodeTable::closed_form("p", "x1", OrderTag::harmonic(2), grid(), |w| lag(w).powi(3));
        let mut b = BodeTable::closed_form("p", "x2", OrderTag::fundamental(), grid(), lag);
        b.rows[10] = BodeRow::new(b.rows[10].omega, Complex64::new(0.0, 0.0), Method::Dmd, 0.0, RowStatus::Ok);
        let svg = svg_string(&[a, b]).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let count = |cls: &str| {
            doc.descendants()
                .filter(|n| n.attribute("class") == Some(cls))
                .count()
        };
        assert_eq!(count("panel"), 2);
        assert_eq!(count("trace"), 2);
        assert_eq!(count("legend"), 2);
        assert!(!svg.contains("href"));
        // the zero row splits the second gain trace into two subpaths
        let gain_paths: Vec<&str> = doc
            .descendants()
            .filter(|n| n.attribute("class") == Some("gain"))
            .filter_map(|n| n.attribute("d"))
            .collect();
        assert_eq!(gain_paths[0].matches('M').count(), 1);
        assert_eq!(gain_paths[1].matches('M').count(), 2);
        assert!(svg_string(&[]).is_err());
    }
}
