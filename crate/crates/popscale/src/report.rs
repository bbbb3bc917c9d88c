//! Report structures, CSV schemas and static SVG plots.
//!
//! Every pass/fail flag carried by a report is recomputable from the
//! numbers in its CSV; files contain no timestamps or machine-dependent
//! values, so identical runs produce byte-identical output.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v}")
    }
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), contents)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Characteristic convergence
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct CharPointRow {
    pub n: u64,
    /// k for H_{k,l} rows, 0 for H_l rows.
    pub j_or_k: u32,
    pub ell: f64,
    pub z: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub target: f64,
    pub abs_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CharSupRow {
    pub n: u64,
    pub j_or_k: u32,
    pub ell: f64,
    pub sup_residual: f64,
    pub sup_stderr: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CharacteristicReport {
    pub rows: Vec<CharPointRow>,
    pub sup_rows: Vec<CharSupRow>,
    pub all_trends_decreasing: bool,
}

impl CharacteristicReport {
    pub fn points_csv(&self) -> String {
        let mut s = String::from("N,j_or_k,ell,z,estimate,stderr,target,abs_residual\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.n,
                r.j_or_k,
                fmt(r.ell),
                fmt(r.z),
                fmt(r.estimate),
                fmt(r.stderr),
                fmt(r.target),
                fmt(r.abs_residual)
            );
        }
        s
    }

    pub fn sup_csv(&self) -> String {
        let mut s = String::from("N,j_or_k,ell,sup_residual,sup_stderr\n");
        for r in &self.sup_rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.n,
                r.j_or_k,
                fmt(r.ell),
                fmt(r.sup_residual),
                fmt(r.sup_stderr)
            );
        }
        s
    }

    /// Residual-vs-N series per test function, for the log-log plot.
    pub fn sup_series(&self) -> Vec<(String, Vec<(f64, f64)>)> {
        let mut keys: Vec<(u32, u64)> = Vec::new();
        for r in &self.sup_rows {
            let key = (r.j_or_k, r.ell.to_bits());
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        keys.iter()
            .map(|&(k, ebits)| {
                let ell = f64::from_bits(ebits);
                let pts = self
                    .sup_rows
                    .iter()
                    .filter(|r| r.j_or_k == k && r.ell.to_bits() == ebits)
                    .map(|r| (r.n as f64, r.sup_residual))
                    .collect();
                (format!("k={k},l={ell}"), pts)
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// H0 tail check
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct H0Row {
    pub n: u64,
    pub b: f64,
    /// sup over the x grid of v_N * P(|increment| > b).
    pub sup_estimate: f64,
    pub band_hi: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct H0Report {
    pub rows: Vec<H0Row>,
    pub nonincreasing_in_b: bool,
}

impl H0Report {
    pub fn csv(&self) -> String {
        let mut s = String::from("N,b,sup_estimate,band_hi\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.n, fmt(r.b), fmt(r.sup_estimate), fmt(r.band_hi));
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Increment functionals
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct IncrementRow {
    pub n: u64,
    pub sup_discrepancy: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct IncrementReport {
    pub k: u32,
    pub ell: f64,
    pub rows: Vec<IncrementRow>,
    pub decreasing: bool,
}

impl IncrementReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("N,k,ell,sup_discrepancy\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.n, self.k, fmt(self.ell), fmt(r.sup_discrepancy));
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Law convergence
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct LawRow {
    pub n: u64,
    pub t: f64,
    /// "pop" for the population coordinate (compactified for BP models),
    /// "env" for the random-walk coordinate.
    pub coord: String,
    pub distance: f64,
    pub boot_lo: f64,
    pub boot_hi: f64,
    /// Monte-Carlo self-distance of the SDE sampler (two independent batches).
    pub floor: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LawReport {
    pub rows: Vec<LawRow>,
    /// Population-coordinate distances strictly decreasing in N within bands,
    /// for every t.
    pub pop_decreasing: bool,
    /// Environment-coordinate distances not significantly increasing.
    pub env_not_increasing: bool,
    /// max over t of distance(pop, N_max) / floor.
    pub floor_factor: f64,
    pub explosions_discrete: u64,
    pub explosions_sde: u64,
}

impl LawReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("N,t,coord,distance,boot_lo,boot_hi,floor\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.n,
                fmt(r.t),
                r.coord,
                fmt(r.distance),
                fmt(r.boot_lo),
                fmt(r.boot_hi),
                fmt(r.floor)
            );
        }
        s
    }

    pub fn pop_series(&self) -> Vec<(String, Vec<(f64, f64)>)> {
        let mut ts: Vec<u64> = Vec::new();
        for r in self.rows.iter().filter(|r| r.coord == "pop") {
            if !ts.contains(&r.t.to_bits()) {
                ts.push(r.t.to_bits());
            }
        }
        ts.iter()
            .map(|&tb| {
                let t = f64::from_bits(tb);
                let pts = self
                    .rows
                    .iter()
                    .filter(|r| r.coord == "pop" && r.t.to_bits() == tb)
                    .map(|r| (r.n as f64, r.distance))
                    .collect();
                (format!("t={t}"), pts)
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Explosion study
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct ExplosionRow {
    pub n: u64,
    pub frac_discrete: f64,
    pub disc_lo: f64,
    pub disc_hi: f64,
    pub frac_sde: f64,
    pub sde_lo: f64,
    pub sde_hi: f64,
    pub intervals_overlap: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExplosionReport {
    pub rows: Vec<ExplosionRow>,
    pub all_overlap: bool,
}

impl ExplosionReport {
    pub fn csv(&self) -> String {
        let mut s =
            String::from("N,frac_discrete,disc_lo,disc_hi,frac_sde,sde_lo,sde_hi,intervals_overlap\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.n,
                fmt(r.frac_discrete),
                fmt(r.disc_lo),
                fmt(r.disc_hi),
                fmt(r.frac_sde),
                fmt(r.sde_lo),
                fmt(r.sde_hi),
                r.intervals_overlap
            );
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Pass/fail flags
// ---------------------------------------------------------------------------

pub fn flags_csv(flags: &[(&str, bool)]) -> String {
    let mut s = String::from("check,pass\n");
    for (name, ok) in flags {
        let _ = writeln!(s, "{name},{ok}");
    }
    s
}

// ---------------------------------------------------------------------------
// Static SVG line plots
// ---------------------------------------------------------------------------

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Minimal log-log line plot of (x, y) series; y values <= 0 are dropped.
pub fn line_plot_svg(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h, ml, mb, mt, mr) = (640.0, 420.0, 70.0, 50.0, 30.0, 150.0);
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|(_, p)| p.iter().copied())
        .filter(|&(x, y)| x > 0.0 && y > 0.0)
        .collect();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"18\" font-family=\"monospace\" font-size=\"13\">{title}</text>",
        ml
    );
    if pts.is_empty() {
        let _ = writeln!(svg, "<text x=\"{ml}\" y=\"60\" font-size=\"12\">no positive data</text>");
        svg.push_str("</svg>\n");
        return svg;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &pts {
        x0 = x0.min(x.log10());
        x1 = x1.max(x.log10());
        y0 = y0.min(y.log10());
        y1 = y1.max(y.log10());
    }
    if x1 - x0 < 1e-9 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-9 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| ml + (x.log10() - x0) / (x1 - x0) * (w - ml - mr);
    let sy = |y: f64| h - mb - (y.log10() - y0) / (y1 - y0) * (h - mb - mt);
    // Axes.
    let _ = writeln!(
        svg,
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        h - mb,
        w - mr,
        h - mb
    );
    let _ = writeln!(svg, "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>", h - mb);
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"11\">log10 x: [{:.2}, {:.2}]  log10 y: [{:.2}, {:.2}]</text>",
        ml,
        h - 12.0,
        x0,
        x1,
        y0,
        y1
    );
    for (i, (label, p)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = p
            .iter()
            .filter(|&&(x, y)| x > 0.0 && y > 0.0)
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if path.len() >= 2 {
            let _ = writeln!(
                svg,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
                path.join(" ")
            );
        }
        for xy in &path {
            let mut it = xy.split(',');
            let (cx, cy) = (it.next().unwrap(), it.next().unwrap());
            let _ = writeln!(svg, "<circle cx=\"{cx}\" cy=\"{cy}\" r=\"2.5\" fill=\"{color}\"/>");
        }
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{color}\">{label}</text>",
            w - mr + 8.0,
            mt + 14.0 * i as f64 + 10.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Overlaid marginal histograms (discrete vs SDE) as an SVG bar chart.
pub fn histogram_svg(title: &str, a: &[f64], b: &[f64], bins: usize) -> String {
    let (w, h, ml, mb, mt) = (640.0, 420.0, 60.0, 40.0, 30.0);
    let finite: Vec<f64> = a.iter().chain(b.iter()).copied().filter(|v| v.is_finite()).collect();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(svg, "<text x=\"{ml}\" y=\"18\" font-family=\"monospace\" font-size=\"13\">{title}</text>");
    if finite.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let lo = finite.iter().cloned().fold(f64::MAX, f64::min);
    let hi = finite.iter().cloned().fold(f64::MIN, f64::max);
    let span = (hi - lo).max(1e-12);
    let count = |xs: &[f64]| -> Vec<f64> {
        let mut c = vec![0.0; bins];
        for &x in xs.iter().filter(|v| v.is_finite()) {
            let idx = (((x - lo) / span * bins as f64) as usize).min(bins - 1);
            c[idx] += 1.0 / xs.len() as f64;
        }
        c
    };
    let ca = count(a);
    let cb = count(b);
    let peak = ca.iter().chain(cb.iter()).cloned().fold(0.0f64, f64::max).max(1e-12);
    let bw = (w - ml - 20.0) / bins as f64;
    for i in 0..bins {
        let xa = ml + i as f64 * bw;
        let ha = ca[i] / peak * (h - mb - mt);
        let hb = cb[i] / peak * (h - mb - mt);
        let _ = writeln!(
            svg,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#1f77b4\" fill-opacity=\"0.5\"/>",
            xa,
            h - mb - ha,
            bw,
            ha
        );
        let _ = writeln!(
            svg,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#d62728\" fill-opacity=\"0.5\"/>",
            xa,
            h - mb - hb,
            bw,
            hb
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{ml}\" y=\"{}\" font-size=\"11\">blue = discrete, red = SDE; range [{lo:.4}, {hi:.4}]</text>",
        h - 10.0
    );
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_is_deterministic() {
        let rep = H0Report {
            rows: vec![H0Row { n: 100, b: 1.0, sup_estimate: 0.25, band_hi: 0.3 }],
            nonincreasing_in_b: true,
        };
        assert_eq!(rep.csv(), rep.csv());
        assert!(rep.csv().starts_with("N,b,"));
    }

    #[test]
    fn svg_plots_render() {
        let series = vec![("a".to_string(), vec![(100.0, 0.1), (1000.0, 0.01), (10000.0, 0.001)])];
        let svg = line_plot_svg("residuals", &series);
        assert!(svg.contains("<polyline"));
        assert!(svg.contains("</svg>"));
        let h = histogram_svg("marginal", &[0.1, 0.2, 0.3], &[0.15, 0.25], 10);
        assert!(h.contains("<rect"));
    }
}
