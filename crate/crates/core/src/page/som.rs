//! Set-of-mark overlays: numbered bounding boxes drawn onto a screenshot.
//!
//! Drawing uses a built-in 3x5 digit font so output is identical on every
//! host; no system fonts are consulted.

use image::{Rgba, RgbaImage};

use super::{ElementNode, PageError, Screenshot};

const PALETTE: [[u8; 4]; 8] = [
    [230, 25, 75, 255],
    [60, 140, 60, 255],
    [0, 90, 200, 255],
    [245, 130, 48, 255],
    [145, 30, 180, 255],
    [0, 150, 150, 255],
    [200, 40, 160, 255],
    [110, 90, 20, 255],
];
const TAG_TEXT: Rgba<u8> = Rgba([255, 255, 255, 255]);
const OUTLINE: u32 = 2;
const SCALE: u32 = 2;
const PAD: u32 = 2;
const GLYPH_W: u32 = 3;
const GLYPH_H: u32 = 5;
/// Height of an index tag in pixels.
pub const TAG_HEIGHT: u32 = GLYPH_H * SCALE + 2 * PAD;

#[rustfmt::skip]
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b001, 0b001, 0b001],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

/// Width in pixels of the tag for a number with `digits` digits.
pub fn tag_digits_width(digits: usize) -> u32 {
    PAD * 2 + digits as u32 * (GLYPH_W * SCALE + PAD) - PAD
}

/// Draws each element's box outline and an index tag at the box's top-left.
/// Boxes must lie within the image.
pub fn annotate_som(screenshot: &Screenshot, elements: &[ElementNode]) -> Result<Screenshot, PageError> {
    let (w, h) = (screenshot.width(), screenshot.height());
    for e in elements {
        let b = e.bbox;
        let fits = b.x >= 0
            && b.y >= 0
            && u64::from(b.x as u32) + u64::from(b.w) <= u64::from(w)
            && u64::from(b.y as u32) + u64::from(b.h) <= u64::from(h);
        if !fits {
            return Err(PageError::BboxOutOfBounds(e.index));
        }
    }
    if elements.is_empty() {
        return Ok(screenshot.clone());
    }
    let mut img = screenshot.image().clone();
    for e in elements {
        let color = Rgba(PALETTE[e.index.0 as usize % PALETTE.len()]);
        outline(&mut img, e.bbox.x as u32, e.bbox.y as u32, e.bbox.w, e.bbox.h, color);
    }
    for e in elements {
        let color = Rgba(PALETTE[e.index.0 as usize % PALETTE.len()]);
        draw_tag(&mut img, e.bbox.x as u32, e.bbox.y as u32, e.index.0, color);
    }
    Ok(Screenshot::new(img))
}

fn fill(img: &mut RgbaImage, x: u32, y: u32, w: u32, h: u32, color: Rgba<u8>) {
    let x1 = (x + w).min(img.width());
    let y1 = (y + h).min(img.height());
    for yy in y..y1 {
        for xx in x..x1 {
            img.put_pixel(xx, yy, color);
        }
    }
}

fn outline(img: &mut RgbaImage, x: u32, y: u32, w: u32, h: u32, color: Rgba<u8>) {
    let t = OUTLINE.min(w.div_ceil(2)).min(h.div_ceil(2));
    fill(img, x, y, w, t, color);
    fill(img, x, (y + h).saturating_sub(t), w, t, color);
    fill(img, x, y, t, h, color);
    fill(img, (x + w).saturating_sub(t), y, t, h, color);
}

fn draw_tag(img: &mut RgbaImage, x: u32, y: u32, n: u32, bg: Rgba<u8>) {
    let digits: Vec<usize> = n.to_string().bytes().map(|b| usize::from(b - b'0')).collect();
    fill(img, x, y, tag_digits_width(digits.len()), TAG_HEIGHT, bg);
    let mut gx = x + PAD;
    for d in digits {
        for (row, bits) in DIGITS[d].iter().enumerate() {
            for col in 0..GLYPH_W {
                if bits & (1 << (GLYPH_W - 1 - col)) != 0 {
                    fill(img, gx + col * SCALE, y + PAD + row as u32 * SCALE, SCALE, SCALE, TAG_TEXT);
                }
            }
        }
        gx += GLYPH_W * SCALE + PAD;
    }
}
