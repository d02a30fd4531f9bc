//! 3D Hilbert curve indices.
//!
//! Uses Skilling's transpose construction ("Programming the Hilbert curve",
//! 2004): coordinates are converted in place to the transposed index, whose
//! bits are then interleaved with axis 0 as the most significant. The
//! convention is frozen by the golden vectors in `tests/data/hilbert_golden.txt`;
//! changing it changes every bitstream.

use crate::error::{invalid, Result};
use crate::pointcloud::MAX_GEOM_BITS;

/// Position along the curve, `3 * geom_bits` bits wide.
pub type HilbertIndex = u64;

fn check_bits(geom_bits: u8) -> Result<()> {
    if !(1..=MAX_GEOM_BITS).contains(&geom_bits) {
        return invalid(format!("geom_bits {geom_bits} outside 1..={MAX_GEOM_BITS}"));
    }
    Ok(())
}

pub fn hilbert_index(coord: [u32; 3], geom_bits: u8) -> Result<HilbertIndex> {
    check_bits(geom_bits)?;
    if coord.iter().any(|&c| c >> geom_bits != 0) {
        return invalid(format!("coordinate {coord:?} outside the {geom_bits}-bit cube"));
    }
    Ok(index_unchecked(coord, geom_bits))
}

pub(crate) fn index_unchecked(coord: [u32; 3], geom_bits: u8) -> HilbertIndex {
    let bits = geom_bits as u32;
    let mut x = coord;
    let m = 1u32 << (bits - 1);

    // Inverse undo
    let mut q = m;
    while q > 1 {
        let p = q - 1;
        for i in 0..3 {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q >>= 1;
    }
    // Gray encode
    x[1] ^= x[0];
    x[2] ^= x[1];
    let mut t = 0;
    let mut q = m;
    while q > 1 {
        if x[2] & q != 0 {
            t ^= q - 1;
        }
        q >>= 1;
    }
    for v in &mut x {
        *v ^= t;
    }

    let mut h = 0u64;
    for bit in (0..bits).rev() {
        for v in x {
            h = (h << 1) | ((v >> bit) & 1) as u64;
        }
    }
    h
}

pub fn hilbert_inverse(h: HilbertIndex, geom_bits: u8) -> Result<[u32; 3]> {
    check_bits(geom_bits)?;
    let bits = geom_bits as u32;
    if h >> (3 * bits) != 0 {
        return invalid(format!("hilbert index {h} outside a {geom_bits}-bit cube"));
    }
    let mut x = [0u32; 3];
    for bit in 0..bits {
        for (i, v) in x.iter_mut().enumerate() {
            let src = 3 * bit + (2 - i as u32);
            *v |= (((h >> src) & 1) as u32) << bit;
        }
    }

    // Gray decode by H ^ (H / 2)
    let n = 2u32 << (bits - 1);
    let t = x[2] >> 1;
    x[2] ^= x[1];
    x[1] ^= x[0];
    x[0] ^= t;
    // Undo excess work
    let mut q = 2;
    while q != n {
        let p = q - 1;
        for i in (0..3).rev() {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q <<= 1;
    }
    Ok(x)
}

/// Indices of all positions; positions must lie inside the cube.
pub fn hilbert_indices(positions: &[[u32; 3]], geom_bits: u8) -> Result<Vec<HilbertIndex>> {
    positions.iter().map(|&p| hilbert_index(p, geom_bits)).collect()
}

/// Stable ascending permutation of `positions` by Hilbert index.
pub fn sort_by_hilbert(positions: &[[u32; 3]], geom_bits: u8) -> Result<Vec<usize>> {
    Ok(hilbert_order(positions, geom_bits)?.0)
}

/// Permutation together with the indices in sorted order.
pub fn hilbert_order(positions: &[[u32; 3]], geom_bits: u8) -> Result<(Vec<usize>, Vec<HilbertIndex>)> {
    let h = hilbert_indices(positions, geom_bits)?;
    let mut order: Vec<usize> = (0..positions.len()).collect();
    order.sort_by_key(|&i| h[i]);
    let sorted = order.iter().map(|&i| h[i]).collect();
    Ok((order, sorted))
}
