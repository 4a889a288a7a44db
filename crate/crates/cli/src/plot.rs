//! Static SVG rendering of a 2-D posterior tree.

use std::fmt::Write;

use ptree_core::eval::optimal_path;
use ptree_core::PosteriorTree;

const PLOT: f64 = 600.0;
const MARGIN: f64 = 30.0;
const LEGEND: f64 = 220.0;

/// One hue per leaf.
pub fn leaf_color(i: usize, n: usize) -> String {
    format!("hsl({:.1},70%,45%)", 360.0 * i as f64 / n as f64)
}

struct Frame {
    x0: f64,
    y0: f64,
    scale: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = [f64; 2]>) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in points {
            for j in 0..2 {
                lo[j] = lo[j].min(p[j]);
                hi[j] = hi[j].max(p[j]);
            }
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
        let cx = (lo[0] + hi[0]) / 2.0;
        let cy = (lo[1] + hi[1]) / 2.0;
        Self { x0: cx - span / 2.0, y0: cy - span / 2.0, scale: (PLOT - 2.0 * MARGIN) / span }
    }

    fn map(&self, p: &[f64]) -> (f64, f64) {
        (MARGIN + (p[0] - self.x0) * self.scale, PLOT - MARGIN - (p[1] - self.y0) * self.scale)
    }
}

pub fn render(tree: &PosteriorTree, samples: &[Vec<f64>], y: &[f64], mean: &[f64], manifest: &str) -> String {
    let layout = tree.layout();
    let depth = layout.depth();
    let leaves = layout.leaf_count();
    let nodes = (0..=depth).flat_map(|l| (0..layout.level_size(l)).map(move |i| (l, i)));
    let frame = Frame::fit(
        samples
            .iter()
            .map(|s| [s[0], s[1]])
            .chain(nodes.clone().map(|(l, i)| [tree.value(l, i)[0], tree.value(l, i)[1]]))
            .chain([[y[0], y[1]], [mean[0], mean[1]]]),
    );

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{PLOT}" viewBox="0 0 {w} {PLOT}" font-family="sans-serif" font-size="12">"#,
        w = PLOT + LEGEND
    );
    let _ = writeln!(s, "<!-- manifest {manifest} -->");
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{}" height="{PLOT}" fill="white"/>"#, PLOT + LEGEND);

    let _ = writeln!(s, r#"<g class="samples" fill-opacity="0.45">"#);
    for p in samples {
        let leaf = optimal_path(tree, p, None).expect("dimensions checked").nodes[depth].index;
        let (cx, cy) = frame.map(p);
        let _ = writeln!(s, r#"<circle class="sample" cx="{cx:.2}" cy="{cy:.2}" r="1.6" fill="{}"/>"#, leaf_color(leaf, leaves));
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r#"<g class="edges" stroke="black" stroke-width="0.8" stroke-opacity="0.6">"#);
    for (l, i) in nodes.clone().filter(|&(l, _)| l > 0) {
        let (x1, y1) = frame.map(tree.value(l - 1, i / layout.degree()));
        let (x2, y2) = frame.map(tree.value(l, i));
        let _ = writeln!(s, r#"<line class="edge" x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}"/>"#);
    }
    let _ = writeln!(s, "</g>");

    // Markers shrink with depth; leaves take their cell's color.
    let _ = writeln!(s, r#"<g class="nodes" stroke="black" stroke-width="1.2">"#);
    for (l, i) in nodes {
        let (cx, cy) = frame.map(tree.value(l, i));
        let r = 9.0 - 5.0 * l as f64 / depth.max(1) as f64;
        let fill = if l == depth { leaf_color(i, leaves) } else { "rgb(40,90,200)".to_string() };
        let _ = writeln!(
            s,
            r#"<circle class="node" data-level="{l}" data-index="{i}" data-p="{:.6}" cx="{cx:.2}" cy="{cy:.2}" r="{r:.1}" fill="{fill}"/>"#,
            tree.prob(l, i)
        );
    }
    let _ = writeln!(s, "</g>");

    let (mx, my) = frame.map(mean);
    let _ = writeln!(
        s,
        r#"<path class="mean" d="M {:.2} {:.2} L {:.2} {:.2} L {:.2} {:.2} L {:.2} {:.2} Z" fill="gold" stroke="black"/>"#,
        mx,
        my - 8.0,
        mx + 7.0,
        my + 5.0,
        mx - 7.0,
        my + 5.0,
        mx,
        my - 8.0
    );
    let (yx, yy) = frame.map(y);
    let _ = writeln!(
        s,
        r#"<path class="measurement" d="M {:.2} {:.2} L {:.2} {:.2} M {:.2} {:.2} L {:.2} {:.2}" stroke="red" stroke-width="2.5"/>"#,
        yx - 7.0,
        yy - 7.0,
        yx + 7.0,
        yy + 7.0,
        yx - 7.0,
        yy + 7.0,
        yx + 7.0,
        yy - 7.0
    );

    let lx = PLOT + 10.0;
    let _ = writeln!(s, r#"<g class="legend">"#);
    let _ = writeln!(s, r#"<text x="{lx}" y="24">leaf probabilities</text>"#);
    let shown = leaves.min(32);
    for i in 0..shown {
        let ty = 44.0 + 16.0 * i as f64;
        let _ = writeln!(s, r#"<rect x="{lx}" y="{:.1}" width="10" height="10" fill="{}"/>"#, ty - 9.0, leaf_color(i, leaves));
        let _ = writeln!(s, r#"<text x="{}" y="{ty:.1}">leaf {i}: p = {:.3}</text>"#, lx + 16.0, tree.prob(depth, i));
    }
    if shown < leaves {
        let _ = writeln!(s, r#"<text x="{lx}" y="{:.1}">{} more leaves</text>"#, 44.0 + 16.0 * shown as f64, leaves - shown);
    }
    let base = 64.0 + 16.0 * shown as f64;
    let _ = writeln!(s, r#"<text x="{lx}" y="{base:.1}" fill="red">x: measurement y</text>"#);
    let _ = writeln!(s, r#"<text x="{lx}" y="{:.1}">triangle: posterior mean</text>"#, base + 16.0);
    let _ = writeln!(s, r#"<text x="{lx}" y="{:.1}">blue: internal nodes</text>"#, base + 32.0);
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}
