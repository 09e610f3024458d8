//! Synthetic joinable-glyph alphabet: stroke-based glyph definitions,
//! deterministic rasterization of single glyphs and multi-glyph ligatures,
//! and base-form deduplication.
//!
//! Rendering is anti-aliasing free on purpose: Bresenham segments dilated
//! to the style's stroke width with a square structuring element, diacritic
//! disks via midpoint circle fill. Connectivity of the output is therefore
//! exact and testable.

use crate::raster::Raster;

/// Minimum per-glyph cell size in pixels.
pub const MIN_CELL_PX: usize = 16;
/// Maximum glyphs per composed ligature.
pub const MAX_DEGREE: usize = 3;
/// How far (as a fraction of the cell) the inter-cell connector reaches
/// into each neighboring cell.
const CONNECTOR_REACH: f64 = 0.4;
/// Rasterized diacritic disks are capped at this pixel radius so they stay
/// small relative to stroke components at every cell size.
const MAX_DOT_RADIUS_PX: f64 = 1.25;

pub type Point = (f64, f64);

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub from: Point,
    pub to: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diacritic {
    pub center: Point,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlyphSpec {
    pub glyph_id: u32,
    pub base_form_id: u32,
    pub strokes: Vec<Segment>,
    pub diacritics: Vec<Diacritic>,
    pub joins_forward: bool,
    pub joins_backward: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphabetSpec {
    pub name: String,
    pub glyphs: Vec<GlyphSpec>,
    /// Baseline height of the inter-cell connector, in unit-cell coordinates.
    pub connector_y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StyleSpec {
    pub style_id: u32,
    pub stroke_width: usize,
    pub shear: f64,
    pub scale: f64,
    pub jitter: usize,
    pub seed: u64,
}

impl StyleSpec {
    pub fn identity() -> Self {
        StyleSpec {
            style_id: 0,
            stroke_width: 1,
            shear: 0.0,
            scale: 1.0,
            jitter: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AlphabetError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invariant error: {0}")]
    Invariant(String),
    #[error("cell size {0} is below the minimum of {MIN_CELL_PX}")]
    CellTooSmall(usize),
    #[error("empty glyph sequence")]
    EmptySequence,
    #[error("sequence of {len} glyphs needs a canvas of at least {needed} px, got {got}")]
    CanvasTooSmall {
        len: usize,
        needed: usize,
        got: usize,
    },
    #[error("sequence length {0} exceeds the maximum degree {MAX_DEGREE}")]
    SequenceTooLong(usize),
}

// ---------------------------------------------------------------------------
// Rendering

/// Renders one glyph into a `cell_px` x `cell_px` raster.
pub fn render_glyph(
    glyph: &GlyphSpec,
    style: &StyleSpec,
    cell_px: usize,
) -> Result<Raster, AlphabetError> {
    if cell_px < MIN_CELL_PX {
        return Err(AlphabetError::CellTooSmall(cell_px));
    }
    let mut raster = Raster::new(cell_px, cell_px);
    draw_glyph(&mut raster, glyph, style, 0, cell_px, 0);
    Ok(raster)
}

/// Composes a right-to-left ligature: sequence index 0 occupies the
/// rightmost cell. The connector between adjacent glyphs (g_i, g_{i+1}) is
/// drawn iff g_i.joins_forward and g_{i+1}.joins_backward. The composed
/// strip is centered onto a square `canvas_px` raster.
pub fn compose_ligature(
    glyph_seq: &[&GlyphSpec],
    style: &StyleSpec,
    canvas_px: usize,
) -> Result<Raster, AlphabetError> {
    let len = glyph_seq.len();
    if len == 0 {
        return Err(AlphabetError::EmptySequence);
    }
    if len > MAX_DEGREE {
        return Err(AlphabetError::SequenceTooLong(len));
    }
    if canvas_px < MIN_CELL_PX * len {
        return Err(AlphabetError::CanvasTooSmall {
            len,
            needed: MIN_CELL_PX * len,
            got: canvas_px,
        });
    }
    let cell = canvas_px / len;
    let strip_w = cell * len;
    let mut strip = Raster::new(strip_w, cell);
    for (i, glyph) in glyph_seq.iter().enumerate() {
        let cell_x = (len - 1 - i) * cell;
        draw_glyph(&mut strip, glyph, style, cell_x, cell, i);
    }
    let baseline_row = to_px(0.5, cell);
    for i in 0..len - 1 {
        if glyph_seq[i].joins_forward && glyph_seq[i + 1].joins_backward {
            let boundary = ((len - 1 - i) * cell) as i64;
            let reach = (CONNECTOR_REACH * cell as f64).round() as i64;
            stamp_hline(
                &mut strip,
                boundary - reach,
                boundary + reach,
                baseline_row as i64,
                style.stroke_width,
            );
        }
    }
    let mut canvas = Raster::new(canvas_px, canvas_px);
    let off_x = ((canvas_px - strip_w) / 2) as i64;
    let off_y = ((canvas_px - cell) / 2) as i64;
    canvas.blit_max(&strip, off_x, off_y);
    Ok(canvas)
}

/// One representative glyph per base_form_id, diacritics removed, ordered
/// by base_form_id ascending.
pub fn base_form_dedup(alphabet: &AlphabetSpec) -> Vec<GlyphSpec> {
    let mut reps: Vec<GlyphSpec> = Vec::new();
    let mut glyphs: Vec<&GlyphSpec> = alphabet.glyphs.iter().collect();
    glyphs.sort_by_key(|g| (g.base_form_id, g.glyph_id));
    for g in glyphs {
        if reps.last().map(|r: &GlyphSpec| r.base_form_id) != Some(g.base_form_id) {
            let mut rep = g.clone();
            rep.diacritics.clear();
            reps.push(rep);
        }
    }
    reps
}

fn draw_glyph(
    raster: &mut Raster,
    glyph: &GlyphSpec,
    style: &StyleSpec,
    cell_x: usize,
    cell: usize,
    slot: usize,
) {
    let (jx, jy) = jitter_offset(style, slot);
    for seg in &glyph.strokes {
        let (x0, y0) = transform(seg.from, style);
        let (x1, y1) = transform(seg.to, style);
        stamp_segment(
            raster,
            cell_x as i64 + to_px(x0, cell) as i64 + jx,
            to_px(y0, cell) as i64 + jy,
            cell_x as i64 + to_px(x1, cell) as i64 + jx,
            to_px(y1, cell) as i64 + jy,
            style.stroke_width,
        );
    }
    for dot in &glyph.diacritics {
        let (cx, cy) = transform(dot.center, style);
        let r_px = (dot.radius * style.scale * (cell as f64 - 1.0)).min(MAX_DOT_RADIUS_PX);
        stamp_disk(
            raster,
            cell_x as i64 + to_px(cx, cell) as i64 + jx,
            to_px(cy, cell) as i64 + jy,
            r_px,
        );
    }
}

/// Scale about the cell center, then shear about the baseline, so y = 0.5
/// stays fixed under every style and the connector always meets the
/// baseline stroke.
fn transform(p: Point, style: &StyleSpec) -> Point {
    let x = 0.5 + style.scale * (p.0 - 0.5);
    let y = 0.5 + style.scale * (p.1 - 0.5);
    (x + style.shear * (y - 0.5), y)
}

fn to_px(coord: f64, cell: usize) -> usize {
    let v = (coord * (cell as f64 - 1.0) + 0.5).floor();
    (v.max(0.0) as usize).min(cell - 1)
}

fn jitter_offset(style: &StyleSpec, slot: usize) -> (i64, i64) {
    if style.jitter == 0 {
        return (0, 0);
    }
    // splitmix64 over (seed, slot); jitter stays deterministic per style
    let mut z = style
        .seed
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(slot as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^= z >> 31;
    let span = (2 * style.jitter + 1) as u64;
    let dx = (z % span) as i64 - style.jitter as i64;
    let dy = ((z >> 32) % span) as i64 - style.jitter as i64;
    (dx, dy)
}

fn stamp_point(raster: &mut Raster, x: i64, y: i64, width: usize) {
    // square structuring element of side `width`, biased up-left for even widths
    let lo = -((width as i64 - 1) / 2) - ((width as i64 - 1) % 2);
    let hi = (width as i64 - 1) / 2;
    for dy in lo..=hi {
        for dx in lo..=hi {
            let px = x + dx;
            let py = y + dy;
            if px >= 0 && py >= 0 && (px as usize) < raster.width() && (py as usize) < raster.height()
            {
                raster.set(px as usize, py as usize, 255);
            }
        }
    }
}

fn stamp_segment(raster: &mut Raster, x0: i64, y0: i64, x1: i64, y1: i64, width: usize) {
    // integer Bresenham
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let (mut x, mut y) = (x0, y0);
    loop {
        stamp_point(raster, x, y, width);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn stamp_hline(raster: &mut Raster, x0: i64, x1: i64, y: i64, width: usize) {
    for x in x0..=x1 {
        stamp_point(raster, x, y, width);
    }
}

fn stamp_disk(raster: &mut Raster, cx: i64, cy: i64, r_px: f64) {
    let r = r_px.max(0.0);
    let bound = r.ceil() as i64;
    for dy in -bound..=bound {
        for dx in -bound..=bound {
            if (dx * dx + dy * dy) as f64 <= r * r + 1e-9 {
                let px = cx + dx;
                let py = cy + dy;
                if px >= 0
                    && py >= 0
                    && (px as usize) < raster.width()
                    && (py as usize) < raster.height()
                {
                    raster.set(px as usize, py as usize, 255);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Validation

impl AlphabetSpec {
    pub fn validate(&self) -> Result<(), AlphabetError> {
        if self.glyphs.is_empty() {
            return Err(AlphabetError::Invariant("empty alphabet".into()));
        }
        if !(0.0..=1.0).contains(&self.connector_y) {
            return Err(AlphabetError::Invariant(format!(
                "connector height {} outside [0,1]",
                self.connector_y
            )));
        }
        let mut ids: Vec<u32> = self.glyphs.iter().map(|g| g.glyph_id).collect();
        ids.sort_unstable();
        for w in ids.windows(2) {
            if w[0] == w[1] {
                return Err(AlphabetError::Invariant(format!(
                    "duplicate glyph_id {}",
                    w[0]
                )));
            }
        }
        if ids[0] != 0 || *ids.last().unwrap() as usize != ids.len() - 1 {
            return Err(AlphabetError::Invariant(
                "glyph_ids are not contiguous from 0".into(),
            ));
        }
        for g in &self.glyphs {
            if g.strokes.is_empty() {
                return Err(AlphabetError::Invariant(format!(
                    "glyph {} has no strokes",
                    g.glyph_id
                )));
            }
        }
        // same base form => identical strokes and joining flags
        for a in &self.glyphs {
            for b in &self.glyphs {
                if a.glyph_id < b.glyph_id && a.base_form_id == b.base_form_id {
                    if a.strokes != b.strokes
                        || a.joins_forward != b.joins_forward
                        || a.joins_backward != b.joins_backward
                    {
                        return Err(AlphabetError::Invariant(format!(
                            "glyphs {} and {} share base form {} but differ beyond diacritics",
                            a.glyph_id, b.glyph_id, a.base_form_id
                        )));
                    }
                }
            }
        }
        // stroke connectivity and diacritic disjointness, checked by
        // rasterizing with the identity style at two cell sizes
        let identity = StyleSpec::identity();
        for cell in [MIN_CELL_PX, 2 * MIN_CELL_PX] {
            for g in &self.glyphs {
                let mut strokes_only = g.clone();
                strokes_only.diacritics.clear();
                let r = render_glyph(&strokes_only, &identity, cell)?;
                let n = crate::ccl::component_count(&r, crate::ccl::Connectivity::Eight);
                if n != 1 {
                    return Err(AlphabetError::Invariant(format!(
                        "glyph {} strokes form {} components at {} px, expected 1",
                        g.glyph_id, n, cell
                    )));
                }
                if !g.diacritics.is_empty() {
                    let full = render_glyph(g, &identity, cell)?;
                    let expected = 1 + g.diacritics.len();
                    let n = crate::ccl::component_count(&full, crate::ccl::Connectivity::Eight);
                    if n != expected {
                        return Err(AlphabetError::Invariant(format!(
                            "glyph {} renders to {} components at {} px, expected {} \
                             (diacritics must be disjoint from strokes)",
                            g.glyph_id, n, cell, expected
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn base_form_count(&self) -> usize {
        let mut forms: Vec<u32> = self.glyphs.iter().map(|g| g.base_form_id).collect();
        forms.sort_unstable();
        forms.dedup();
        forms.len()
    }
}

// ---------------------------------------------------------------------------
// File format

/// Serializes an alphabet to the line-oriented document format.
pub fn write_alphabet(spec: &AlphabetSpec) -> String {
    let mut out = String::new();
    out.push_str("# synthetic joinable-glyph alphabet\n");
    out.push_str(&format!("name {}\n", spec.name));
    out.push_str(&format!("connector {}\n", spec.connector_y));
    for g in &spec.glyphs {
        out.push_str(&format!(
            "glyph {} base {} joinf {} joinb {}\n",
            g.glyph_id,
            g.base_form_id,
            g.joins_forward as u8,
            g.joins_backward as u8
        ));
        for s in &g.strokes {
            out.push_str(&format!(
                "stroke {} {} {} {}\n",
                s.from.0, s.from.1, s.to.0, s.to.1
            ));
        }
        for d in &g.diacritics {
            out.push_str(&format!("dot {} {} {}\n", d.center.0, d.center.1, d.radius));
        }
    }
    out
}

/// Parses and validates an alphabet document; violations are reported with
/// line numbers.
pub fn load_alphabet(document: &str) -> Result<AlphabetSpec, AlphabetError> {
    let mut spec = AlphabetSpec {
        name: "unnamed".into(),
        glyphs: Vec::new(),
        connector_y: 0.5,
    };
    let mut current: Option<GlyphSpec> = None;
    for (idx, raw) in document.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let perr = |msg: String| AlphabetError::Parse { line: line_no, msg };
        match parts[0] {
            "name" => {
                spec.name = parts[1..].join(" ");
                if spec.name.is_empty() {
                    return Err(perr("missing name".into()));
                }
            }
            "connector" => {
                if parts.len() != 2 {
                    return Err(perr("expected: connector <y_b>".into()));
                }
                spec.connector_y = parse_f64(parts[1], line_no)?;
            }
            "glyph" => {
                if parts.len() != 8 || parts[2] != "base" || parts[4] != "joinf" || parts[6] != "joinb"
                {
                    return Err(perr(
                        "expected: glyph <id> base <base_id> joinf <0|1> joinb <0|1>".into(),
                    ));
                }
                if let Some(g) = current.take() {
                    spec.glyphs.push(g);
                }
                current = Some(GlyphSpec {
                    glyph_id: parse_u32(parts[1], line_no)?,
                    base_form_id: parse_u32(parts[3], line_no)?,
                    strokes: Vec::new(),
                    diacritics: Vec::new(),
                    joins_forward: parse_bool01(parts[5], line_no)?,
                    joins_backward: parse_bool01(parts[7], line_no)?,
                });
            }
            "stroke" => {
                if parts.len() != 5 {
                    return Err(perr("expected: stroke x0 y0 x1 y1".into()));
                }
                let g = current
                    .as_mut()
                    .ok_or_else(|| perr("stroke before any glyph line".into()))?;
                g.strokes.push(Segment {
                    from: (parse_f64(parts[1], line_no)?, parse_f64(parts[2], line_no)?),
                    to: (parse_f64(parts[3], line_no)?, parse_f64(parts[4], line_no)?),
                });
            }
            "dot" => {
                if parts.len() != 4 {
                    return Err(perr("expected: dot cx cy r".into()));
                }
                let g = current
                    .as_mut()
                    .ok_or_else(|| perr("dot before any glyph line".into()))?;
                g.diacritics.push(Diacritic {
                    center: (parse_f64(parts[1], line_no)?, parse_f64(parts[2], line_no)?),
                    radius: parse_f64(parts[3], line_no)?,
                });
            }
            other => {
                return Err(perr(format!("unknown directive {other:?}")));
            }
        }
    }
    if let Some(g) = current.take() {
        spec.glyphs.push(g);
    }
    spec.validate()?;
    Ok(spec)
}

fn parse_u32(s: &str, line: usize) -> Result<u32, AlphabetError> {
    s.parse().map_err(|_| AlphabetError::Parse {
        line,
        msg: format!("expected an unsigned integer, found {s:?}"),
    })
}

fn parse_f64(s: &str, line: usize) -> Result<f64, AlphabetError> {
    s.parse().map_err(|_| AlphabetError::Parse {
        line,
        msg: format!("expected a number, found {s:?}"),
    })
}

fn parse_bool01(s: &str, line: usize) -> Result<bool, AlphabetError> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(AlphabetError::Parse {
            line,
            msg: format!("expected 0 or 1, found {s:?}"),
        }),
    }
}

// ---------------------------------------------------------------------------
// Shipped defaults

/// Base forms that join forward (toward the next glyph to the left).
const FORWARD_JOINERS: [u32; 4] = [1, 3, 5, 7];
/// Base forms that do not join backward.
const NON_BACKWARD_JOINERS: [u32; 2] = [2, 10];

/// The shipped alphabet: 19 base forms, each as a plain and a one-dot
/// variant, 38 glyphs total. Every glyph shares a horizontal baseline
/// stroke at y = 0.5 and is distinguished by ornament strokes attached to
/// the baseline; diacritic dots sit near the cell top, clear of all ink.
pub fn default_alphabet() -> AlphabetSpec {
    let seg = |x0: f64, y0: f64, x1: f64, y1: f64| Segment {
        from: (x0, y0),
        to: (x1, y1),
    };
    // ornament strokes per base form; every endpoint on y = 0.5 touches
    // the baseline so the union stays one component
    let ornaments: Vec<Vec<Segment>> = vec![
        vec![],                                                                // 0: bare baseline
        vec![seg(0.5, 0.5, 0.5, 0.35)],                                        // 1: up tick center
        vec![seg(0.5, 0.5, 0.5, 0.7)],                                         // 2: down tick center
        vec![seg(0.3, 0.5, 0.3, 0.35)],                                        // 3: up tick left
        vec![seg(0.7, 0.5, 0.7, 0.35)],                                        // 4: up tick right
        vec![seg(0.3, 0.5, 0.3, 0.7)],                                         // 5: down tick left
        vec![seg(0.7, 0.5, 0.7, 0.7)],                                         // 6: down tick right
        vec![seg(0.35, 0.5, 0.35, 0.35), seg(0.65, 0.5, 0.65, 0.35)],          // 7: two up ticks
        vec![seg(0.35, 0.5, 0.35, 0.7), seg(0.65, 0.5, 0.65, 0.7)],            // 8: two down ticks
        vec![seg(0.5, 0.5, 0.3, 0.35)],                                        // 9: diagonal up-left
        vec![seg(0.5, 0.5, 0.7, 0.35)],                                        // 10: diagonal up-right
        vec![seg(0.35, 0.35, 0.5, 0.5), seg(0.5, 0.5, 0.65, 0.35)],            // 11: vee above
        vec![seg(0.35, 0.7, 0.5, 0.5), seg(0.5, 0.5, 0.65, 0.7)],              // 12: vee below
        vec![seg(0.5, 0.5, 0.5, 0.35), seg(0.5, 0.35, 0.7, 0.35)],             // 13: up ell right
        vec![seg(0.5, 0.5, 0.5, 0.7), seg(0.5, 0.7, 0.7, 0.7)],                // 14: down ell right
        vec![seg(0.5, 0.5, 0.5, 0.35), seg(0.5, 0.35, 0.3, 0.35)],             // 15: up ell left
        vec![seg(0.5, 0.5, 0.5, 0.7), seg(0.5, 0.7, 0.3, 0.7)],                // 16: down ell left
        vec![seg(0.5, 0.35, 0.5, 0.7)],                                        // 17: vertical crossing
        vec![seg(0.3, 0.5, 0.4, 0.35), seg(0.4, 0.35, 0.5, 0.5), seg(0.5, 0.5, 0.6, 0.35)], // 18: zigzag
    ];
    let mut glyphs = Vec::with_capacity(38);
    for (base, ornament) in ornaments.iter().enumerate() {
        let base = base as u32;
        let mut strokes = vec![seg(0.2, 0.5, 0.8, 0.5)];
        strokes.extend(ornament.iter().cloned());
        let joins_forward = FORWARD_JOINERS.contains(&base);
        let joins_backward = !NON_BACKWARD_JOINERS.contains(&base);
        glyphs.push(GlyphSpec {
            glyph_id: 2 * base,
            base_form_id: base,
            strokes: strokes.clone(),
            diacritics: vec![],
            joins_forward,
            joins_backward,
        });
        glyphs.push(GlyphSpec {
            glyph_id: 2 * base + 1,
            base_form_id: base,
            strokes,
            diacritics: vec![Diacritic {
                center: (0.5, 0.12),
                radius: 0.04,
            }],
            joins_forward,
            joins_backward,
        });
    }
    AlphabetSpec {
        name: "default-38".into(),
        glyphs,
        connector_y: 0.5,
    }
}

/// The 15 shipped styles. The first three vary stroke width only, so a
/// small `--styles 3` run trains and validates on closely related renders.
pub fn default_styles() -> Vec<StyleSpec> {
    let mut styles = Vec::with_capacity(15);
    let mut push = |stroke_width: usize, shear: f64, scale: f64| {
        let style_id = styles.len() as u32;
        styles.push(StyleSpec {
            style_id,
            stroke_width,
            shear,
            scale,
            jitter: 0,
            seed: 1000 + style_id as u64,
        });
    };
    push(1, 0.0, 1.0);
    push(2, 0.0, 1.0);
    push(3, 0.0, 1.0);
    push(1, 0.2, 1.0);
    push(2, 0.2, 0.9);
    push(3, 0.2, 0.8);
    push(1, -0.2, 1.0);
    push(2, -0.2, 0.9);
    push(3, -0.2, 0.8);
    push(1, 0.0, 0.9);
    push(2, 0.0, 0.8);
    push(3, 0.0, 0.9);
    push(1, 0.2, 0.8);
    push(2, -0.2, 1.0);
    push(3, 0.2, 0.9);
    styles
}
