//! Minimal SVG line plots derived from CSV files. Purely presentational:
//! nothing here feeds back into any computation.

use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv is malformed: {0}")]
    Malformed(String),
    #[error("csv has no data rows")]
    Empty,
    #[error("column {0:?} not found")]
    MissingColumn(String),
}

#[derive(Debug, Clone)]
pub struct PlotSpec {
    pub x_column: String,
    pub y_columns: Vec<String>,
    pub log_y: bool,
    pub title: String,
}

const COLORS: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 56.0;

/// Renders the named columns of a CSV file as an SVG polyline chart.
pub fn emit_plot(csv_path: &Path, spec: &PlotSpec, svg_path: &Path) -> Result<(), PlotError> {
    let text = std::fs::read_to_string(csv_path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or(PlotError::Empty)?
        .split(',')
        .map(str::trim)
        .collect();
    let col = |name: &str| -> Result<usize, PlotError> {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| PlotError::MissingColumn(name.to_string()))
    };
    let xi = col(&spec.x_column)?;
    let yis: Vec<usize> = spec
        .y_columns
        .iter()
        .map(|c| col(c))
        .collect::<Result<_, _>>()?;

    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<Vec<f64>> = vec![Vec::new(); yis.len()];
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse = |i: usize| -> Result<f64, PlotError> {
            fields
                .get(i)
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| PlotError::Malformed(line.to_string()))
        };
        xs.push(parse(xi)?);
        for (s, &yi) in ys.iter_mut().zip(&yis) {
            let v = parse(yi)?;
            s.push(if spec.log_y { v.max(1e-300).log10() } else { v });
        }
    }
    if xs.is_empty() {
        return Err(PlotError::Empty);
    }

    let (xmin, xmax) = bounds(&xs);
    let mut all_y: Vec<f64> = ys.iter().flatten().cloned().collect();
    all_y.retain(|v| v.is_finite());
    if all_y.is_empty() {
        return Err(PlotError::Malformed("no finite y values".into()));
    }
    let (ymin, ymax) = bounds(&all_y);
    let sx = |x: f64| MARGIN + (x - xmin) / (xmax - xmin).max(1e-300) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - ymin) / (ymax - ymin).max(1e-300) * (H - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n",
        W / 2.0,
        xml_escape(&spec.title)
    );
    // Axes.
    let _ = write!(
        svg,
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        r = W - MARGIN,
        t = MARGIN,
        b = H - MARGIN
    );
    // Tick labels at the extremes and axis names.
    let ytick = |v: f64| -> String {
        if spec.log_y {
            format!("1e{v:.1}")
        } else {
            format!("{v:.3}")
        }
    };
    let y_name = if spec.log_y {
        format!("log10({})", spec.y_columns.join(", "))
    } else {
        spec.y_columns.join(", ")
    };
    let _ = write!(
        svg,
        "<text x=\"{mx}\" y=\"{yb}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{lo}</text>\n\
         <text x=\"{mx}\" y=\"{yt}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{hi}</text>\n\
         <text x=\"{ml}\" y=\"{xb}\" font-family=\"sans-serif\" font-size=\"11\">{xmin:.2}</text>\n\
         <text x=\"{mr}\" y=\"{xb}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{xmax:.2}</text>\n\
         <text x=\"{xc}\" y=\"{xt}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{xn}</text>\n\
         <text x=\"16\" y=\"{yc}\" font-family=\"sans-serif\" font-size=\"11\" transform=\"rotate(-90 16 {yc})\" text-anchor=\"middle\">{yn}</text>\n",
        mx = MARGIN - 4.0,
        yb = H - MARGIN,
        yt = MARGIN + 4.0,
        lo = ytick(ymin),
        hi = ytick(ymax),
        ml = MARGIN,
        mr = W - MARGIN,
        xb = H - MARGIN + 16.0,
        xc = W / 2.0,
        xt = H - 12.0,
        yc = H / 2.0,
        xn = xml_escape(&spec.x_column),
        yn = xml_escape(&y_name),
    );
    for (s, (series, name)) in ys.iter().zip(&spec.y_columns).enumerate().map(|(i, p)| (i, p)) {
        let color = COLORS[s % COLORS.len()];
        let mut points = String::new();
        for (x, y) in xs.iter().zip(series) {
            if y.is_finite() {
                let _ = write!(points, "{:.2},{:.2} ", sx(*x), sy(*y));
            }
        }
        let _ = write!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n\
             <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{}</text>\n",
            points.trim_end(),
            W - MARGIN + 4.0 - 110.0,
            MARGIN + 14.0 * (s as f64 + 1.0),
            xml_escape(name)
        );
    }
    svg.push_str("</svg>\n");
    std::fs::write(svg_path, svg)?;
    Ok(())
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in v {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    (lo, hi)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
