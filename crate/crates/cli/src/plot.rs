//! SVG figures and their CSV series, drawn from an evaluation CSV.

use std::fmt::Write as _;
use std::path::Path;

use npode::data::Dataset;

use crate::CliError;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;

/// Columns of an `eval.csv` file.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTable {
    pub x_dim: usize,
    pub y_dim: usize,
    pub x: Vec<f64>,
    pub truth: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl EvalTable {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let bad = |what: String| CliError::Data(format!("{}: {what}", path.display()));
        let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
        let find = |name: &str| headers.iter().position(|h| h == name);
        let x_dim = (1..).take_while(|j| find(&format!("x{j}")).is_some()).count();
        let y_dim = (1..).take_while(|j| find(&format!("y{j}_mean")).is_some()).count();
        if x_dim == 0 || y_dim == 0 {
            return Err(bad("not an evaluation table".into()));
        }
        let col = |name: String| find(&name).ok_or_else(|| bad(format!("missing column {name}")));
        let xs = (1..=x_dim).map(|j| col(format!("x{j}"))).collect::<Result<Vec<_>, _>>()?;
        let mut ycols = Vec::new();
        for j in 1..=y_dim {
            let c = ["true", "mean", "std", "low", "high"]
                .iter()
                .map(|s| col(format!("y{j}_{s}")))
                .collect::<Result<Vec<_>, _>>()?;
            ycols.push(c);
        }
        let mut t = EvalTable { x_dim, y_dim, x: vec![], truth: vec![], mean: vec![], std: vec![], low: vec![], high: vec![] };
        for (r, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| bad(format!("row {}: {e}", r + 1)))?;
            let num = |pos: usize| -> Result<f64, CliError> {
                let raw = rec.get(pos).unwrap_or("");
                raw.trim().parse().map_err(|_| bad(format!("row {}: non-numeric value {raw:?}", r + 1)))
            };
            for &c in &xs {
                t.x.push(num(c)?);
            }
            for c in &ycols {
                t.truth.push(num(c[0])?);
                t.mean.push(num(c[1])?);
                t.std.push(num(c[2])?);
                t.low.push(num(c[3])?);
                t.high.push(num(c[4])?);
            }
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.truth.len() / self.y_dim
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    fn at(&self, v: &[f64], i: usize, j: usize) -> f64 {
        v[i * self.y_dim + j]
    }
}

/// Linear map from data coordinates to the plot area.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let pad = 0.05 * (hi - lo);
                (lo - pad, hi + pad)
            }
        };
        Frame { x: span(&mut xs.clone()), y: span(&mut ys.clone()) }
    }

    fn px(&self, v: f64) -> f64 {
        MARGIN + (v - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, v: f64) -> f64 {
        HEIGHT - MARGIN - (v - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open_svg(title: &str, xlabel: &str, ylabel: &str, f: &Frame) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(s, r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#, r - l, b - t);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, WIDTH / 2.0, HEIGHT - 14.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(ylabel)
    );
    for k in 0..=4 {
        let fx = f.x.0 + (f.x.1 - f.x.0) * k as f64 / 4.0;
        let fy = f.y.0 + (f.y.1 - f.y.0) * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="10">{}</text>"#, f.px(fx), b + 14.0, tick(fx));
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="10">{}</text>"#, l - 4.0, f.py(fy) + 3.0, tick(fy));
    }
    s
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

fn polyline(points: &[(f64, f64)], f: &Frame, style: &str) -> String {
    let pts: Vec<String> = points.iter().map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y))).collect();
    format!("<polyline points=\"{}\" fill=\"none\" {style}/>\n", pts.join(" "))
}

/// Predicted curve for output `j` against a scalar input: shaded ±σ̂ band,
/// training and test markers and the optional noiseless reference.
pub fn curve_svg(t: &EvalTable, j: usize, train: Option<&Dataset>, reference: Option<&Dataset>) -> String {
    let mut order: Vec<usize> = (0..t.len()).collect();
    order.sort_by(|&a, &b| t.x[a].total_cmp(&t.x[b]));
    let band: Vec<(f64, f64, f64, f64)> = order
        .iter()
        .map(|&i| {
            let (m, s) = (t.at(&t.mean, i, j), t.at(&t.std, i, j));
            (t.x[i], m, m - s, m + s)
        })
        .collect();
    let train_pts: Vec<(f64, f64)> = train.map_or(vec![], |d| (0..d.len()).map(|i| (d.x_row(i)[0], d.y_row(i)[j])).collect());
    let ref_pts: Vec<(f64, f64)> = reference.map_or(vec![], |d| (0..d.len()).map(|i| (d.x_row(i)[0], d.y_row(i)[j])).collect());
    let xs = band.iter().map(|b| b.0).chain(train_pts.iter().map(|p| p.0)).chain(ref_pts.iter().map(|p| p.0));
    let ys = band
        .iter()
        .flat_map(|b| [b.2, b.3])
        .chain((0..t.len()).map(|i| t.at(&t.truth, i, j)))
        .chain(train_pts.iter().map(|p| p.1))
        .chain(ref_pts.iter().map(|p| p.1));
    let f = Frame::fit(xs, ys);
    let mut s = open_svg(&format!("y{} prediction", j + 1), "x1", &format!("y{}", j + 1), &f);
    if !band.is_empty() {
        let mut pts: Vec<String> = band.iter().map(|b| format!("{:.2},{:.2}", f.px(b.0), f.py(b.3))).collect();
        pts.extend(band.iter().rev().map(|b| format!("{:.2},{:.2}", f.px(b.0), f.py(b.2))));
        let _ = writeln!(s, r#"<polygon points="{}" fill="cyan" fill-opacity="0.35" stroke="none"/>"#, pts.join(" "));
    }
    if !ref_pts.is_empty() {
        s.push_str(&polyline(&ref_pts, &f, r#"stroke="gray" stroke-dasharray="5,3""#));
    }
    let mean_pts: Vec<(f64, f64)> = band.iter().map(|b| (b.0, b.1)).collect();
    s.push_str(&polyline(&mean_pts, &f, r#"stroke="blue" stroke-width="1.5""#));
    for (x, y) in &train_pts {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="black"/>"#, f.px(*x), f.py(*y));
    }
    for &i in &order {
        let (x, y) = (t.x[i], t.at(&t.truth, i, j));
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="5" height="5" fill="red"/>"#,
            f.px(x) - 2.5,
            f.py(y) - 2.5
        );
    }
    legend(&mut s, &[("cyan", "mean ± σ"), ("blue", "prediction"), ("black", "training"), ("red", "testing"), ("gray", "noiseless")]);
    s.push_str("</svg>\n");
    s
}

/// Per-test-point mean with capped interval bars and truth markers.
pub fn interval_svg(t: &EvalTable, j: usize) -> String {
    let n = t.len();
    let ys = (0..n).flat_map(|i| [t.at(&t.low, i, j), t.at(&t.high, i, j), t.at(&t.truth, i, j)]);
    let f = Frame::fit((0..n).map(|i| i as f64).chain([-0.5, n as f64 - 0.5]), ys);
    let mut s = open_svg(&format!("y{} test predictions", j + 1), "test point", &format!("y{}", j + 1), &f);
    for i in 0..n {
        let x = f.px(i as f64);
        let (lo, hi) = (f.py(t.at(&t.low, i, j)), f.py(t.at(&t.high, i, j)));
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{lo:.2}" x2="{x:.2}" y2="{hi:.2}" stroke="steelblue"/>"#);
        for y in [lo, hi] {
            let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="steelblue"/>"#, x - 4.0, x + 4.0);
        }
        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{:.2}" r="3" fill="blue"/>"#, f.py(t.at(&t.mean, i, j)));
        let _ = writeln!(s, r#"<rect x="{:.2}" y="{:.2}" width="6" height="6" fill="red"/>"#, x - 3.0, f.py(t.at(&t.truth, i, j)) - 3.0);
    }
    legend(&mut s, &[("steelblue", "interval"), ("blue", "prediction"), ("red", "truth")]);
    s.push_str("</svg>\n");
    s
}

fn legend(s: &mut String, items: &[(&str, &str)]) {
    for (k, (color, label)) in items.iter().enumerate() {
        let y = MARGIN + 14.0 + 16.0 * k as f64;
        let x = WIDTH - MARGIN - 120.0;
        let _ = writeln!(s, r#"<rect x="{x}" y="{}" width="10" height="10" fill="{color}"/>"#, y - 9.0);
        let _ = writeln!(s, r#"<text x="{}" y="{y}" font-size="11">{}</text>"#, x + 16.0, escape(label));
    }
}

/// Every plotted series: scalar-input tables use a ±σ̂ band, the others
/// the interval stored in the table.
pub fn series_csv(t: &EvalTable) -> String {
    let mut out = String::from("dim,position,truth,mean,low,high\n");
    let curve = t.x_dim == 1;
    for j in 0..t.y_dim {
        for i in 0..t.len() {
            let m = t.at(&t.mean, i, j);
            let (pos, lo, hi) = if curve {
                let sd = t.at(&t.std, i, j);
                (t.x[i], m - sd, m + sd)
            } else {
                (i as f64, t.at(&t.low, i, j), t.at(&t.high, i, j))
            };
            let _ = writeln!(out, "{},{:?},{:?},{:?},{:?},{:?}", j + 1, pos, t.at(&t.truth, i, j), m, lo, hi);
        }
    }
    out
}
