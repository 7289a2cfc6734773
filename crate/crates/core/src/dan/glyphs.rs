//! A 5×7 capital-letter raster used to lay out goals along text.

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;

#[rustfmt::skip]
const FONT: [[&str; GLYPH_H]; 26] = [
    [".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"], // A
    ["####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."], // B
    [".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."], // C
    ["####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."], // D
    ["#####", "#....", "#....", "####.", "#....", "#....", "#####"], // E
    ["#####", "#....", "#....", "####.", "#....", "#....", "#...."], // F
    [".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".###."], // G
    ["#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"], // H
    [".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."], // I
    ["..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."], // J
    ["#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"], // K
    ["#....", "#....", "#....", "#....", "#....", "#....", "#####"], // L
    ["#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"], // M
    ["#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#", "#...#"], // N
    [".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."], // O
    ["####.", "#...#", "#...#", "####.", "#....", "#....", "#...."], // P
    [".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"], // Q
    ["####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"], // R
    [".####", "#....", "#....", ".###.", "....#", "....#", "####."], // S
    ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."], // T
    ["#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."], // U
    ["#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."], // V
    ["#...#", "#...#", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."], // W
    ["#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"], // X
    ["#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."], // Y
    ["#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"], // Z
];

/// Lit cells of `text` as `(column, row)` with row 0 at the top. Letters are
/// separated by one blank column; characters outside A–Z become blanks.
pub fn raster(text: &str) -> (Vec<(usize, usize)>, usize, usize) {
    let mut cells = Vec::new();
    let mut col0 = 0;
    for ch in text.chars() {
        let upper = ch.to_ascii_uppercase();
        if upper.is_ascii_uppercase() {
            let glyph = &FONT[(upper as u8 - b'A') as usize];
            for (r, row) in glyph.iter().enumerate() {
                for (c, b) in row.bytes().enumerate() {
                    if b == b'#' {
                        cells.push((col0 + c, r));
                    }
                }
            }
        }
        col0 += GLYPH_W + 1;
    }
    let width = col0.saturating_sub(1);
    (cells, width, GLYPH_H)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_glyph_is_well_formed() {
        for g in FONT {
            assert!(g.iter().all(|r| r.len() == GLYPH_W));
            assert!(g.iter().any(|r| r.contains('#')));
        }
    }

    #[test]
    fn letters_are_laid_out_left_to_right() {
        let (cells, w, h) = raster("IL");
        assert_eq!((w, h), (11, 7));
        assert!(cells.contains(&(2, 3)));
        assert!(cells.contains(&(6, 6)) && cells.contains(&(10, 6)));
    }
}
