//! Plot data for seed → generated pairs in PCA space: CSV rows, arrows and a
//! minimal SVG scatter.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::pca::{pca_project, PcaProjection};
use super::EvalError;
use crate::pipeline::Provenance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Seed,
    Generated,
}

impl From<Provenance> for Role {
    fn from(p: Provenance) -> Self {
        match p {
            Provenance::Seed => Role::Seed,
            Provenance::Generated => Role::Generated,
        }
    }
}

/// One embedded point; `pair_id` groups a seed with its generations.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedPoint {
    pub vector: Vec<f64>,
    pub label: String,
    pub pair_id: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub x: f64,
    pub y: f64,
    pub label: String,
    pub pair_id: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arrow {
    pub pair_id: String,
    pub from: [f64; 2],
    pub to: [f64; 2],
    pub from_label: String,
    pub to_label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPlot {
    pub projection: PcaProjection,
    pub rows: Vec<PlotRow>,
    pub arrows: Vec<Arrow>,
}

pub fn pair_plot(points: &[AnnotatedPoint]) -> Result<PairPlot, EvalError> {
    let vectors: Vec<Vec<f64>> = points.iter().map(|p| p.vector.clone()).collect();
    let projection = pca_project(&vectors)?;
    let rows: Vec<PlotRow> = points
        .iter()
        .zip(&projection.points)
        .map(|(p, xy)| PlotRow {
            x: xy[0],
            y: xy[1],
            label: p.label.clone(),
            pair_id: p.pair_id.clone(),
            role: p.role,
        })
        .collect();
    let mut arrows = Vec::new();
    for seed in rows.iter().filter(|r| r.role == Role::Seed) {
        for g in rows.iter().filter(|r| r.role == Role::Generated && r.pair_id == seed.pair_id) {
            arrows.push(Arrow {
                pair_id: seed.pair_id.clone(),
                from: [seed.x, seed.y],
                to: [g.x, g.y],
                from_label: seed.label.clone(),
                to_label: g.label.clone(),
            });
        }
    }
    Ok(PairPlot {
        projection,
        rows,
        arrows,
    })
}

impl PairPlot {
    /// CSV with header `x,y,label,pair_id,role`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(["x", "y", "label", "pair_id", "role"]).expect("in-memory write");
        for r in &self.rows {
            let role = match r.role {
                Role::Seed => "seed",
                Role::Generated => "generated",
            };
            w.write_record([r.x.to_string(), r.y.to_string(), r.label.clone(), r.pair_id.clone(), role.to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    /// Scatter with one colour per label, hollow seeds, filled generations
    /// and a line from each seed to its generations.
    pub fn to_svg(&self, labels: &[String]) -> String {
        const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
        let (w, h, pad) = (640.0, 480.0, 40.0);
        let xs = self.rows.iter().map(|r| r.x);
        let ys = self.rows.iter().map(|r| r.y);
        let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        let (y0, y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
        let sx = |x: f64| pad + (x - x0) / (x1 - x0).max(1e-12) * (w - 2.0 * pad);
        let sy = |y: f64| h - pad - (y - y0) / (y1 - y0).max(1e-12) * (h - 2.0 * pad);
        let colour = |label: &str| {
            let i = labels.iter().position(|l| l == label).unwrap_or(labels.len());
            PALETTE[i % PALETTE.len()]
        };
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        for a in &self.arrows {
            let _ = writeln!(
                s,
                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999" stroke-width="0.8"/>"##,
                sx(a.from[0]),
                sy(a.from[1]),
                sx(a.to[0]),
                sy(a.to[1])
            );
        }
        for r in &self.rows {
            let c = colour(&r.label);
            let fill = if r.role == Role::Seed { "white" } else { c };
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{fill}" stroke="{c}" stroke-width="1.5"/>"#,
                sx(r.x),
                sy(r.y)
            );
        }
        for (i, l) in labels.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<text x="{pad}" y="{}" font-family="sans-serif" font-size="12" fill="{}">{}</text>"#,
                20 + 14 * i,
                PALETTE[i % PALETTE.len()],
                escape(l)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
