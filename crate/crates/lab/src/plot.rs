//! Regret-curve figures as standalone SVG: mean cumulative regret per
//! policy with a ±1 standard-error band.

use std::fmt::Write as _;

use crate::error::Result;
use crate::experiments::RegretRun;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 48.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

pub fn file_name(experiment: &str, gamma: f64) -> String {
    format!("plots/{experiment}-gamma{gamma}.svg")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Round a positive span up to 1, 2 or 5 times a power of ten.
fn nice_step(span: f64, ticks: usize) -> f64 {
    let raw = span / ticks as f64;
    let p = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * p).find(|s| *s >= raw).unwrap_or(10.0 * p)
}

pub fn regret_svg(experiment: &str, run: &RegretRun) -> Result<String> {
    let curves = run
        .policies
        .iter()
        .map(|p| Ok((p.as_str(), run.curve(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let horizon = curves.iter().map(|c| c.1.mean.len()).max().unwrap_or(1).max(1);
    let mut lo = 0f64;
    let mut hi = 0f64;
    for (_, c) in &curves {
        for (m, s) in c.mean.iter().zip(&c.se) {
            lo = lo.min(m - s);
            hi = hi.max(m + s);
        }
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let ystep = nice_step(hi - lo, 5);
    lo = (lo / ystep).floor() * ystep;
    hi = (hi / ystep).ceil() * ystep;
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let sx = |t: usize| LEFT + pw * t as f64 / horizon as f64;
    let sy = |v: f64| TOP + ph * (1.0 - (v - lo) / (hi - lo));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{} (γ = {})</text>"#,
        LEFT + pw / 2.0,
        escape(experiment),
        run.gamma
    );

    let xstep = nice_step(horizon as f64, 6).max(1.0) as usize;
    for t in (0..=horizon).step_by(xstep) {
        let x = sx(t);
        let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#eee"/>"##, TOP + ph);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{t}</text>"#, TOP + ph + 16.0);
    }
    let mut v = lo;
    while v <= hi + 1e-9 * ystep {
        let y = sy(v);
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#eee"/>"##, LEFT + pw);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, fmt_tick(v));
        v += ystep;
    }
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">round t</text>"#, LEFT + pw / 2.0, H - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">cumulative regret</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );

    for (i, (name, c)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut band = String::new();
        for (t, (m, e)) in c.mean.iter().zip(&c.se).enumerate() {
            let _ = write!(band, "{:.2},{:.2} ", sx(t + 1), sy(m + e));
        }
        for (t, (m, e)) in c.mean.iter().zip(&c.se).enumerate().rev() {
            let _ = write!(band, "{:.2},{:.2} ", sx(t + 1), sy(m - e));
        }
        let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, band.trim_end());
        let mut line = String::new();
        for (t, m) in c.mean.iter().enumerate() {
            let _ = write!(line, "{:.2},{:.2} ", sx(t + 1), sy(*m));
        }
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, line.trim_end());
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#, lx + 18.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 24.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn fmt_tick(v: f64) -> String {
    let r = (v * 1e6).round() / 1e6;
    if r == 0.0 {
        "0".into()
    } else {
        format!("{r}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use icgps_core::harness::TrialResult;

    #[test]
    fn svg_has_one_band_and_line_per_policy() {
        let tr = |trial, policy: &str, k: f64| TrialResult {
            trial,
            policy: policy.into(),
            orders: vec![1.0; 10],
            demands: vec![1.0; 10],
            losses: vec![0.0; 10],
            cum_regret: (1..=10).map(|t| k * (t as f64).sqrt()).collect(),
        };
        let run = RegretRun {
            gamma: 0.9,
            policies: vec!["icgps".into(), "ts<w>".into()],
            results: vec![tr(0, "icgps", 1.0), tr(0, "ts<w>", 2.0), tr(1, "icgps", 1.5), tr(1, "ts<w>", 2.5)],
        };
        let svg = regret_svg("q1", &run).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polygon").count(), 2);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("ts&lt;w&gt;"));
        assert_eq!(file_name("q1", 0.98), "plots/q1-gamma0.98.svg");
    }

    #[test]
    fn tick_steps_are_round() {
        assert_eq!(nice_step(10.0, 5), 2.0);
        assert_eq!(nice_step(600.0, 6), 100.0);
        assert_eq!(nice_step(0.7, 5), 0.2);
    }
}
