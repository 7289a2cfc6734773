//! Nearest-agent ownership of grid cells, with tile-level pruning.

use crate::comm::distance_sq;
use crate::posenc::Position;

use super::idf::cell_center;

/// Side of the square tiles used for candidate pruning, in cells.
pub const TILE: usize = 32;

/// Smallest and largest squared distance from `p` to the box `[lo, hi]`.
fn box_range(p: Position, lo: Position, hi: Position) -> (f64, f64) {
    let mut dmin = 0.0;
    let mut dmax = 0.0;
    for a in 0..2 {
        let below = lo[a] - p[a];
        let above = p[a] - hi[a];
        let gap = below.max(above).max(0.0);
        dmin += gap * gap;
        let far = (p[a] - lo[a]).abs().max((p[a] - hi[a]).abs());
        dmax += far * far;
    }
    (dmin, dmax)
}

/// Agents that may own some cell center inside `[lo, hi]`, ascending.
pub fn tile_candidates(positions: &[Position], lo: Position, hi: Position, out: &mut Vec<usize>) {
    out.clear();
    let mut bound = f64::INFINITY;
    let mut ranges = Vec::with_capacity(positions.len());
    for &p in positions {
        let r = box_range(p, lo, hi);
        bound = bound.min(r.1);
        ranges.push(r.0);
    }
    let slack = bound * 1e-12 + 1e-12;
    out.extend((0..positions.len()).filter(|&i| ranges[i] <= bound + slack));
}

/// Owner among `candidates` (ascending) of point `q`; ties to the lowest index.
#[inline]
pub fn owner_among(positions: &[Position], candidates: &[usize], q: Position) -> usize {
    let mut best = candidates[0];
    let mut best_d = distance_sq(positions[best], q);
    for &i in &candidates[1..] {
        let d = distance_sq(positions[i], q);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Visits the cells of the window `[x0, x1) × [y0, y1)` tile by tile, passing
/// each cell index and its owner.
pub fn for_each_owner(
    positions: &[Position],
    size: usize,
    window: (usize, usize, usize, usize),
    mut visit: impl FnMut(usize, usize),
) {
    if positions.is_empty() {
        return;
    }
    let (x0, y0, x1, y1) = window;
    let mut cands = Vec::new();
    let mut ty = y0;
    while ty < y1 {
        let ty1 = (ty + TILE).min(y1);
        let mut tx = x0;
        while tx < x1 {
            let tx1 = (tx + TILE).min(x1);
            let lo = [tx as f64 + 0.5, ty as f64 + 0.5];
            let hi = [tx1 as f64 - 0.5, ty1 as f64 - 0.5];
            tile_candidates(positions, lo, hi, &mut cands);
            for y in ty..ty1 {
                for x in tx..tx1 {
                    let idx = y * size + x;
                    let owner = if cands.len() == 1 {
                        cands[0]
                    } else {
                        owner_among(positions, &cands, cell_center(size, idx))
                    };
                    visit(idx, owner);
                }
            }
            tx = tx1;
        }
        ty = ty1;
    }
}

/// Like [`for_each_owner`] but only over the listed cells, which must be
/// ascending (they are bucketed into tiles on the fly).
pub fn for_each_owner_sparse(positions: &[Position], size: usize, cells: &[u32], mut visit: impl FnMut(usize, usize)) {
    if positions.is_empty() || cells.is_empty() {
        return;
    }
    let tiles_x = size.div_ceil(TILE);
    let tiles = tiles_x * size.div_ceil(TILE);
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); tiles];
    for &c in cells {
        let c = c as usize;
        let (x, y) = (c % size, c / size);
        buckets[(y / TILE) * tiles_x + x / TILE].push(c as u32);
    }
    let mut cands = Vec::new();
    for (t, bucket) in buckets.iter().enumerate() {
        if bucket.is_empty() {
            continue;
        }
        let (tx, ty) = ((t % tiles_x) * TILE, (t / tiles_x) * TILE);
        let lo = [tx as f64 + 0.5, ty as f64 + 0.5];
        let hi = [((tx + TILE).min(size)) as f64 - 0.5, ((ty + TILE).min(size)) as f64 - 0.5];
        tile_candidates(positions, lo, hi, &mut cands);
        for &c in bucket {
            let c = c as usize;
            let owner = if cands.len() == 1 {
                cands[0]
            } else {
                owner_among(positions, &cands, cell_center(size, c))
            };
            visit(c, owner);
        }
    }
}

/// Owner of every cell of a `size × size` grid.
pub fn voronoi_cells(positions: &[Position], size: usize) -> Vec<usize> {
    let positions = separate_coincident(positions);
    let mut owners = vec![0; size * size];
    for_each_owner(&positions, size, (0, 0, size, size), |idx, o| owners[idx] = o);
    owners
}

/// Nudges exactly coincident agents apart by micrometers so ownership is
/// well defined. Returns the input unchanged when all positions are distinct.
pub fn separate_coincident(positions: &[Position]) -> Vec<Position> {
    let mut out = positions.to_vec();
    for i in 1..out.len() {
        let mut bumps = 0;
        while out[..i].contains(&out[i]) {
            bumps += 1;
            out[i][0] += 1e-6;
            out[i][1] += 1e-6 * (i as f64 % 7.0);
        }
        if bumps > 0 {
            log::warn!("agent {i} coincided with another agent; moved by {bumps} µm steps");
        }
    }
    out
}
