//! Self-contained SVG line plots of result tables.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io::table::{Table, TRAJECTORY_COLUMNS};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    QfiVsTimeLoglog,
    MagnetizationVsTime,
    QfiVsOmega,
    DhVsTimeLoglog,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [
        PlotKind::QfiVsTimeLoglog,
        PlotKind::MagnetizationVsTime,
        PlotKind::QfiVsOmega,
        PlotKind::DhVsTimeLoglog,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::QfiVsTimeLoglog => "qfi_vs_time_loglog",
            PlotKind::MagnetizationVsTime => "magnetization_vs_time",
            PlotKind::QfiVsOmega => "qfi_vs_omega",
            PlotKind::DhVsTimeLoglog => "dh_vs_time_loglog",
        }
    }

    /// (x column, y column, x log, y log)
    fn axes(self) -> (&'static str, &'static str, bool, bool) {
        match self {
            PlotKind::QfiVsTimeLoglog => ("time", "qfi_mean", true, true),
            PlotKind::MagnetizationVsTime => ("time", "mag_mean", false, false),
            PlotKind::QfiVsOmega => ("omega_ac", "qfi_mean", false, false),
            PlotKind::DhVsTimeLoglog => ("time", "dh_bound", true, true),
        }
    }
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = PlotKind::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown plot kind {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Linear map from data (or its log10) to pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = values
            .map(|v| if log { v.log10() } else { v })
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if hi - lo < 1e-12 {
            let pad = if lo.abs() > 1e-12 { 0.1 * lo.abs() } else { 1.0 };
            lo -= pad;
            hi += pad;
        }
        let pad = 0.03 * (hi - lo);
        Self {
            lo: lo - pad,
            hi: hi + pad,
            log,
        }
    }

    fn frac(&self, v: f64) -> f64 {
        let t = if self.log { v.log10() } else { v };
        (t - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
            let step = ((b - a) / 6).max(1);
            (a..=b)
                .step_by(step as usize)
                .map(|k| (10f64.powi(k), format!("1e{k}")))
                .collect()
        } else {
            (0..=4)
                .map(|i| {
                    let v = self.lo + (self.hi - self.lo) * i as f64 / 4.0;
                    (v, format!("{v:.3}"))
                })
                .collect()
        }
    }
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

fn collect_series(table: &Table, kind: PlotKind) -> Result<Vec<Series>> {
    let (xc, yc, xlog, ylog) = kind.axes();
    let x = table.column_f64(xc)?;
    let y = table.column_f64(yc)?;
    let group_col = match kind {
        PlotKind::QfiVsOmega => Some("period".to_string()),
        _ => table
            .columns
            .first()
            .filter(|c| !TRAJECTORY_COLUMNS.contains(&c.as_str()))
            .cloned(),
    };
    let groups: Vec<String> = match &group_col {
        Some(c) => {
            let i = table.column_index(c).expect("group column exists");
            table.rows.iter().map(|r| format!("{c}={}", r[i])).collect()
        }
        None => vec![yc.to_string(); table.rows.len()],
    };
    let status = table.column_index("status");
    let usable = |v: f64, log: bool| v.is_finite() && (!log || v > 0.0);

    // series appear in table order, which for sweeps is ascending axis value
    let mut series: Vec<Series> = Vec::new();
    for (r, row) in table.rows.iter().enumerate() {
        if status.is_some_and(|s| row[s] != "ok") || !usable(x[r], xlog) || !usable(y[r], ylog) {
            continue;
        }
        match series.iter_mut().find(|s| s.label == groups[r]) {
            Some(s) => s.points.push((x[r], y[r])),
            None => series.push(Series {
                label: groups[r].clone(),
                points: vec![(x[r], y[r])],
            }),
        }
    }
    for s in &mut series {
        s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    if series.is_empty() {
        return Err(Error::Config(format!(
            "no plottable points for {} (columns {xc}, {yc})",
            kind.name()
        )));
    }
    Ok(series)
}

/// SVG text of the plot.
pub fn render_plot(data: &Table, kind: PlotKind) -> Result<String> {
    if data.is_empty() {
        return Err(Error::Config(format!("cannot plot {} from an empty table", kind.name())));
    }
    let (xc, yc, xlog, ylog) = kind.axes();
    let series = collect_series(data, kind)?;
    let all = || series.iter().flat_map(|s| s.points.iter());
    let xa = Axis::fit(all().map(|p| p.0), xlog);
    let ya = Axis::fit(all().map(|p| p.1), ylog);
    let (w, h) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let px = |v: f64| LEFT + xa.frac(v) * w;
    let py = |v: f64| TOP + h - ya.frac(v) * h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + w / 2.0,
        kind.name()
    );
    let _ = writeln!(
        s,
        r#"<g class="plot-area" data-left="{LEFT}" data-top="{TOP}" data-width="{w}" data-height="{h}" data-x-lo="{:?}" data-x-hi="{:?}" data-x-log="{xlog}" data-y-lo="{:?}" data-y-hi="{:?}" data-y-log="{ylog}">"#,
        xa.lo, xa.hi, ya.lo, ya.hi
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{w}" height="{h}" fill="none" stroke="black"/>"#
    );
    for (v, label) in xa.ticks() {
        let x = px(v);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.3}" y1="{}" x2="{x:.3}" y2="{}" stroke="black"/><text x="{x:.3}" y="{}" text-anchor="middle">{label}</text>"#,
            TOP + h,
            TOP + h + 5.0,
            TOP + h + 20.0
        );
    }
    for (v, label) in ya.ticks() {
        let y = py(v);
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{y:.3}" x2="{LEFT}" y2="{y:.3}" stroke="black"/><text x="{}" y="{:.3}" text-anchor="end">{label}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{xc}</text>"#,
        LEFT + w / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{}" text-anchor="middle" transform="rotate(-90 20 {})">{yc}</text>"#,
        TOP + h / 2.0,
        TOP + h / 2.0
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut d = String::new();
        for (j, &(x, y)) in ser.points.iter().enumerate() {
            let _ = write!(d, "{}{:.3},{:.3}", if j == 0 { "M" } else { " L" }, px(x), py(y));
        }
        let _ = writeln!(
            s,
            r#"<path class="series" data-label="{}" d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            ser.label
        );
        let ly = TOP + 15.0 + 18.0 * i as f64;
        let lx = LEFT + w + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 25.0,
            ly + 4.0,
            ser.label
        );
    }
    s.push_str("</g>\n</svg>\n");
    Ok(s)
}

pub fn emit_plot(data: &Table, kind: PlotKind, path: &Path) -> Result<()> {
    let svg = render_plot(data, kind)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
