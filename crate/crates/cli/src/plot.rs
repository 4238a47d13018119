//! Gnuplot scripts for the emitted CSVs. They are generated, never executed.

use std::fmt::Write;

/// What a script draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    /// Gain heatmap over the (bx, by) grid.
    Grid,
    Orthogonality,
    Marginal,
    SpatialScan,
    ScalarDemo,
    Angular,
}

fn header(out: &mut String, csv: &str, png: &str) {
    let _ = writeln!(out, "# Generated by comag; run with `gnuplot <this file>`.");
    let _ = writeln!(out, "set datafile separator comma");
    let _ = writeln!(out, "set datafile missing \"\"");
    let _ = writeln!(out, "set key autotitle columnhead");
    // Empty-data guard: the CSV always has a header row.
    let _ = writeln!(out, "rows = int(system(\"wc -l < '{csv}'\")) - 1");
    let _ = writeln!(out, "if (rows < 1) {{");
    let _ = writeln!(out, "    print \"{csv}: no data rows, nothing to plot\"");
    let _ = writeln!(out, "    exit");
    let _ = writeln!(out, "}}");
    let _ = writeln!(out, "set terminal pngcairo size 900,700 enhanced");
    let _ = writeln!(out, "set output '{png}'");
}

fn heatmap(out: &mut String, csv: &str, column: usize, cblabel: &str, title: &str) {
    let _ = writeln!(out, "set title '{title}'");
    let _ = writeln!(out, "set xlabel 'B_x (G)'");
    let _ = writeln!(out, "set ylabel 'B_y (G)'");
    let _ = writeln!(out, "set cblabel '{cblabel}'");
    let _ = writeln!(out, "set size ratio -1");
    let _ = writeln!(out, "set palette rgb 33,13,10");
    let _ = writeln!(out, "plot '{csv}' using 1:2:{column} with image notitle");
}

/// Script for `csv`, writing `<stem>.png` next to it.
pub fn script(kind: PlotKind, csv: &str, stem: &str) -> String {
    let png = format!("{stem}.png");
    let mut out = String::new();
    header(&mut out, csv, &png);
    match kind {
        PlotKind::Grid => {
            heatmap(&mut out, csv, 4, "magnitude MSE gain (dB)", "Combined vs NV-only magnitude");
            let _ = writeln!(out, "set output '{stem}_direction.png'");
            heatmap(&mut out, csv, 5, "direction MSE gain (dB)", "Combined vs NV-only direction");
        }
        PlotKind::Orthogonality => {
            heatmap(&mut out, csv, 3, "|cos| between dB + B0 and dB", "Orthogonality diagnostic");
        }
        PlotKind::Marginal => {
            let _ = writeln!(out, "set title 'Gain along the sweep direction'");
            let _ = writeln!(out, "set xlabel 'applied field (G)'");
            let _ = writeln!(out, "set ylabel 'gain (dB)'");
            let _ = writeln!(out, "set y2label 'orthogonality'");
            let _ = writeln!(out, "set y2tics");
            let _ = writeln!(out, "set grid");
            let _ = writeln!(
                out,
                "plot '{csv}' using 1:3 with linespoints lw 2 title 'MSE gain', \\\n     '' using 1:4 with linespoints lw 2 title 'variance gain', \\\n     '' using 1:9 axes x1y2 with lines dt 2 title 'orthogonality'"
            );
        }
        PlotKind::SpatialScan => {
            let _ = writeln!(out, "set title 'Field magnitude along the stage'");
            let _ = writeln!(out, "set xlabel 'stage position (mm)'");
            let _ = writeln!(out, "set ylabel '|B| (G)'");
            let _ = writeln!(out, "set grid");
            let _ = writeln!(
                out,
                "plot '{csv}' using 1:4 with points pt 7 ps 0.8 lc rgb '#1f77b4' title 'NV', \\\n     '' using 1:6 with lines lw 2 lc rgb '#1f77b4' title 'NV fit', \\\n     '' using 1:5 with points pt 5 ps 0.8 lc rgb '#d62728' title 'combined', \\\n     '' using 1:3 with points pt 9 ps 0.8 lc rgb '#9467bd' title 'Rb', \\\n     '' using 1:7 with lines lw 2 lc rgb '#9467bd' title 'Rb fit', \\\n     '' using 1:2 with lines dt 2 lc rgb 'black' title 'true'"
            );
        }
        PlotKind::ScalarDemo => {
            let _ = writeln!(out, "set title 'Magnitude with the background and its reverse'");
            let _ = writeln!(out, "set xlabel 'applied field (G)'");
            let _ = writeln!(out, "set ylabel 'estimated |dB| (G)'");
            let _ = writeln!(out, "set grid");
            let _ = writeln!(
                out,
                "plot '{csv}' using 1:2 with lines dt 2 lc rgb 'black' title 'true', \\\n     '' using 1:3 with linespoints lc rgb '#d62728' title 'combined, B0', \\\n     '' using 1:4 with linespoints lc rgb '#ff9896' title 'combined, -B0', \\\n     '' using 1:5 with linespoints lc rgb '#1f77b4' title 'scalar subtraction, B0', \\\n     '' using 1:6 with linespoints lc rgb '#aec7e8' title 'scalar subtraction, -B0'"
            );
        }
        PlotKind::Angular => {
            heatmap(&mut out, csv, 6, "angular error (dB rad)", "NV direction uncertainty");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_script_has_guard_and_references_csv() {
        for kind in [
            PlotKind::Grid,
            PlotKind::Orthogonality,
            PlotKind::Marginal,
            PlotKind::SpatialScan,
            PlotKind::ScalarDemo,
            PlotKind::Angular,
        ] {
            let s = script(kind, "data.csv", "data");
            assert!(s.contains("if (rows < 1)"));
            assert!(s.contains("plot 'data.csv'"));
            assert!(s.contains("set output 'data.png'"));
        }
    }

    #[test]
    fn grid_heatmap_labels_colorbar_in_db() {
        assert!(script(PlotKind::Grid, "g.csv", "g").contains("set cblabel 'magnitude MSE gain (dB)'"));
    }

    #[test]
    fn scan_plot_draws_rb_in_purple() {
        let s = script(PlotKind::SpatialScan, "s.csv", "s");
        assert!(s.contains("lc rgb '#9467bd' title 'Rb'"));
        assert!(s.contains("title 'NV fit'") && s.contains("title 'Rb fit'"));
    }
}
