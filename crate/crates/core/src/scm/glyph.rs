//! Fixed binary glyph masks, one per class. The glyph is the causal feature.

pub const SIDE: usize = 16;
pub const PIXELS: usize = SIDE * SIDE;

pub const GLYPH_NAMES: [&str; 10] = [
    "vertical-bar",
    "horizontal-bar",
    "plus",
    "ring",
    "square",
    "x-cross",
    "triangle",
    "disc",
    "l-shape",
    "t-shape",
];

/// Number of distinct glyphs available, which bounds the class count.
pub const MAX_CLASSES: usize = GLYPH_NAMES.len();

pub type Mask = [bool; PIXELS];

/// The glyph mask for `class`, or `None` past [`MAX_CLASSES`].
pub fn glyph_mask(class: usize) -> Option<Mask> {
    let inside: fn(f64, f64) -> bool = match class {
        0 => |r, c| (3.0..13.0).contains(&r) && (7.0..9.0).contains(&c),
        1 => |r, c| (7.0..9.0).contains(&r) && (3.0..13.0).contains(&c),
        2 => |r, c| {
            ((3.0..13.0).contains(&r) && (7.0..9.0).contains(&c))
                || ((7.0..9.0).contains(&r) && (3.0..13.0).contains(&c))
        },
        3 => |r, c| {
            let d = ((r - 7.5).powi(2) + (c - 7.5).powi(2)).sqrt();
            (3.6..5.2).contains(&d)
        },
        4 => |r, c| {
            let box_ = (3.0..13.0).contains(&r) && (3.0..13.0).contains(&c);
            let hole = (5.0..11.0).contains(&r) && (5.0..11.0).contains(&c);
            box_ && !hole
        },
        5 => |r, c| {
            (3.0..13.0).contains(&r) && (3.0..13.0).contains(&c) && ((r - c).abs() < 1.0 || (r + c - 15.0).abs() < 1.0)
        },
        6 => |r, c| {
            // outline of an upward triangle with apex at row 3 and base at row 12
            if !(3.0..13.0).contains(&r) {
                return false;
            }
            let half = (r - 3.0) * 0.55;
            let (left, right) = (7.5 - half, 7.5 + half);
            let on_side = (c - left).abs() < 1.0 || (c - right).abs() < 1.0;
            let base = r >= 11.0 && c >= left - 0.5 && c <= right + 0.5;
            on_side || base
        },
        7 => |r, c| ((r - 7.5).powi(2) + (c - 7.5).powi(2)).sqrt() < 3.2,
        8 => |r, c| {
            ((3.0..13.0).contains(&r) && (4.0..6.0).contains(&c))
                || ((11.0..13.0).contains(&r) && (4.0..12.0).contains(&c))
        },
        9 => |r, c| {
            ((3.0..5.0).contains(&r) && (3.0..13.0).contains(&c))
                || ((3.0..13.0).contains(&r) && (7.0..9.0).contains(&c))
        },
        _ => return None,
    };
    let mut mask = [false; PIXELS];
    for (idx, m) in mask.iter_mut().enumerate() {
        let (r, c) = ((idx / SIDE) as f64, (idx % SIDE) as f64);
        *m = inside(r, c);
    }
    Some(mask)
}

/// Pixels covered by either of two glyphs.
pub fn union_mask(a: usize, b: usize) -> Option<Mask> {
    let (ma, mb) = (glyph_mask(a)?, glyph_mask(b)?);
    let mut out = [false; PIXELS];
    for i in 0..PIXELS {
        out[i] = ma[i] || mb[i];
    }
    Some(out)
}

pub fn mask_size(mask: &Mask) -> usize {
    mask.iter().filter(|&&m| m).count()
}
