//! Library pipeline: ensemble, table, plot.

use dtc_sensor::ensemble::{run_ensemble, EnsembleParams};
use dtc_sensor::floquet::DriveConfig;
use dtc_sensor::io::{emit_table, preset, read_table, render_plot, PlotKind, Table};

fn attr(svg: &str, key: &str) -> String {
    let key = format!("{key}=\"");
    let start = svg.find(&key).unwrap() + key.len();
    svg[start..start + svg[start..].find('"').unwrap()].to_string()
}

fn path_points(svg: &str) -> Vec<(f64, f64)> {
    attr(svg, " d")
        .split(['M', 'L'])
        .filter(|s| !s.trim().is_empty())
        .map(|p| {
            let (x, y) = p.trim().split_once(',').unwrap();
            (x.parse().unwrap(), y.parse().unwrap())
        })
        .collect()
}

#[test]
fn sensitivity_bound_from_dtc_ensemble() {
    let c = preset("dtc-fig2").unwrap();
    let params = EnsembleParams {
        n_dis: 40,
        ..c.ensemble.clone()
    };
    let cfg = DriveConfig {
        n_periods: 60,
        ..c.drive.clone()
    };
    let stats = run_ensemble(&params, &cfg, 2).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trajectory.csv");
    emit_table(&Table::from_stats(&stats), &path).unwrap();
    let table = read_table(&path).unwrap();

    let qfi = table.column_f64("qfi_mean").unwrap();
    let dh = table.column_f64("dh_bound").unwrap();
    assert!(dh[0].is_infinite());
    for p in 1..qfi.len() {
        let expect = 1.0 / qfi[p].sqrt();
        assert!((dh[p] - expect).abs() <= 1e-14 * expect, "p={p}");
        assert!(dh[p] <= dh[p - 1], "bound grows at p={p}");
    }

    // decreasing values on a log axis: SVG y (pointing down) never decreases
    let svg = render_plot(&table, PlotKind::DhVsTimeLoglog).unwrap();
    assert_eq!(attr(&svg, "data-y-log"), "true");
    let pts = path_points(&svg);
    assert_eq!(pts.len(), qfi.len() - 1);
    assert!(pts.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 >= w[0].1));
}
