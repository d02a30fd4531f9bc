//! YCoCg-R reversible color transform.
//!
//! ```text
//! forward:  Co = R - B;  t = B + (Co >> 1);  Cg = G - t;  Y = t + (Cg >> 1)
//! inverse:  t = Y - (Cg >> 1);  G = Cg + t;  B = t - (Co >> 1);  R = Co + B
//! ```
//! Shifts are arithmetic (floor division by two), so the pair is an exact
//! integer bijection between the RGB cube and its image.

use crate::error::{invalid, Result};

pub const LUMA_RANGE: (i32, i32) = (0, 255);
pub const CHROMA_RANGE: (i32, i32) = (-256, 255);

pub fn rgb_to_ycocg_r(rgb: [i32; 3]) -> Result<[i32; 3]> {
    if rgb.iter().any(|&c| !(0..=255).contains(&c)) {
        return invalid(format!("rgb value {rgb:?} outside [0, 255]"));
    }
    let [r, g, b] = rgb;
    let co = r - b;
    let t = b + (co >> 1);
    let cg = g - t;
    let y = t + (cg >> 1);
    Ok([y, co, cg])
}

pub fn ycocg_r_to_rgb(ycocg: [i32; 3]) -> Result<[i32; 3]> {
    let [y, co, cg] = ycocg;
    let in_range = |v: i32, (lo, hi): (i32, i32)| (lo..=hi).contains(&v);
    if !in_range(y, LUMA_RANGE) || !in_range(co, CHROMA_RANGE) || !in_range(cg, CHROMA_RANGE) {
        return invalid(format!("ycocg value {ycocg:?} outside its alphabet"));
    }
    let t = y - (cg >> 1);
    let g = cg + t;
    let b = t - (co >> 1);
    let r = co + b;
    let rgb = [r, g, b];
    if rgb.iter().any(|&c| !(0..=255).contains(&c)) {
        return invalid(format!("ycocg value {ycocg:?} is not the image of an 8-bit rgb triple"));
    }
    Ok(rgb)
}
