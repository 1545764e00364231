use std::fmt::Write as _;

use crate::layout::{door_graph, EdgeKind, Layout};

const SCALE: f64 = 8.0;
const MARGIN: f64 = 8.0;

/// Fill colors by type id, cycled.
const PALETTE: [&str; 12] = [
    "#d9d9d9", "#e6a57e", "#8fc1e3", "#f2d16b", "#9ed69e", "#c9a7e0", "#f4a6b7", "#a7d8d2",
    "#d3b98c", "#b5b5e8", "#e8c3a0", "#a0c4a9",
];

/// Deterministic SVG of a layout: elements filled by type, room outlines,
/// and door connections as dotted lines between room centroids.
pub fn render_svg(layout: &Layout) -> String {
    let (x0, y0, x1, y1) = layout.bounds().unwrap_or((0.0, 0.0, 1.0, 1.0));
    let (w, h) = (
        (x1 - x0) * SCALE + 2.0 * MARGIN,
        (y1 - y0) * SCALE + 2.0 * MARGIN,
    );
    // World y points up; SVG y points down.
    let px = |x: f64| (x - x0) * SCALE + MARGIN;
    let py = |y: f64| (y1 - y) * SCALE + MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.2}" height="{h:.2}" viewBox="0 0 {w:.2} {h:.2}">"#
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    for e in &layout.elements {
        let name = layout.types.name(e.elem_type).unwrap_or("unknown");
        let _ = writeln!(
            s,
            r##"<rect class="{name}" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}" stroke="#404040" stroke-width="1"/>"##,
            px(e.x),
            py(e.top()),
            e.w * SCALE,
            e.h * SCALE,
            PALETTE[e.elem_type % PALETTE.len()],
        );
        if let Some(a) = e.alpha {
            let (cx, cy) = e.center();
            let r = 0.4 * e.w.min(e.h);
            let _ = writeln!(
                s,
                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#202020" stroke-width="1.5"/>"##,
                px(cx),
                py(cy),
                px(cx + r * a.cos()),
                py(cy + r * a.sin()),
            );
        }
    }
    if layout.edges_of(EdgeKind::Door).next().is_some() {
        let g = door_graph(layout);
        let centroid = |i: usize| {
            if layout.is_exterior(i) {
                return layout.elements[i].center();
            }
            let members = &g.rooms[g.room_of[i]];
            let area: f64 = members.iter().map(|&m| layout.elements[m].area()).sum();
            members.iter().fold((0.0, 0.0), |(ax, ay), &m| {
                let e = &layout.elements[m];
                let (cx, cy) = e.center();
                (ax + cx * e.area() / area, ay + cy * e.area() / area)
            })
        };
        for e in layout.edges_of(EdgeKind::Door) {
            if e.src >= layout.len() || e.dst >= layout.len() {
                continue;
            }
            let (a, b) = (centroid(e.src), centroid(e.dst));
            let _ = writeln!(
                s,
                r##"<line class="door" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#c03030" stroke-width="2" stroke-dasharray="2,3"/>"##,
                px(a.0),
                py(a.1),
                px(b.0),
                py(b.1),
            );
            for (cx, cy) in [a, b] {
                let _ = writeln!(
                    s,
                    r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#c03030"/>"##,
                    px(cx),
                    py(cy)
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}
