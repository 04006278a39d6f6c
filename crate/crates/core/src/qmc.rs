//! Scrambled Sobol low-discrepancy points (Joe-Kuo direction numbers,
//! linear matrix scrambling plus a random digital shift).

use rand::Rng;

use crate::seed;

const BITS: usize = 32;

/// Primitive polynomial (with leading and trailing terms) and initial
/// direction numbers per dimension.
const DIRECTIONS: &[(u32, &[u32])] = &[
    (1, &[]),
    (3, &[1]),
    (7, &[1, 3]),
    (11, &[1, 3, 1]),
    (13, &[1, 1, 1]),
    (19, &[1, 1, 3, 3]),
    (25, &[1, 3, 5, 13]),
    (37, &[1, 1, 5, 5, 17]),
    (41, &[1, 1, 5, 5, 5]),
    (47, &[1, 1, 7, 11, 19]),
    (55, &[1, 1, 5, 1, 1]),
    (59, &[1, 1, 1, 3, 11]),
    (61, &[1, 3, 5, 5, 31]),
    (67, &[1, 3, 3, 9, 7, 49]),
    (91, &[1, 1, 1, 15, 21, 21]),
    (97, &[1, 3, 1, 13, 27, 49]),
    (103, &[1, 1, 1, 15, 7, 5]),
    (109, &[1, 3, 1, 15, 13, 25]),
    (115, &[1, 1, 5, 5, 19, 61]),
    (131, &[1, 3, 7, 11, 23, 15, 103]),
    (137, &[1, 3, 7, 13, 13, 15, 69]),
    (143, &[1, 1, 3, 13, 7, 35, 63]),
    (145, &[1, 3, 5, 9, 1, 25, 53]),
    (157, &[1, 3, 1, 13, 9, 35, 107]),
    (167, &[1, 3, 1, 5, 27, 61, 31]),
    (171, &[1, 1, 5, 11, 19, 41, 61]),
    (185, &[1, 3, 5, 3, 3, 13, 69]),
    (191, &[1, 1, 7, 13, 1, 19, 1]),
    (193, &[1, 3, 7, 5, 13, 19, 59]),
    (203, &[1, 1, 3, 9, 25, 29, 41]),
    (211, &[1, 3, 5, 13, 23, 1, 55]),
    (213, &[1, 3, 7, 3, 13, 59, 17]),
    (229, &[1, 3, 1, 3, 5, 53, 69]),
    (239, &[1, 1, 5, 5, 23, 33, 13]),
    (241, &[1, 1, 7, 7, 1, 61, 123]),
    (247, &[1, 1, 7, 9, 13, 61, 49]),
    (253, &[1, 3, 3, 5, 3, 55, 33]),
    (285, &[1, 3, 1, 15, 31, 13, 49, 245]),
    (299, &[1, 3, 5, 15, 31, 59, 63, 97]),
    (301, &[1, 3, 1, 11, 11, 11, 77, 249]),
    (333, &[1, 3, 1, 11, 27, 43, 71, 9]),
    (351, &[1, 1, 7, 15, 21, 11, 81, 45]),
    (355, &[1, 3, 7, 3, 25, 31, 65, 79]),
    (357, &[1, 3, 1, 1, 19, 11, 3, 205]),
    (361, &[1, 1, 5, 9, 19, 21, 29, 157]),
    (369, &[1, 3, 7, 11, 1, 33, 89, 185]),
    (391, &[1, 3, 3, 3, 15, 9, 79, 71]),
    (397, &[1, 3, 7, 11, 15, 39, 119, 27]),
    (425, &[1, 1, 3, 1, 11, 31, 97, 225]),
    (451, &[1, 1, 1, 3, 23, 43, 57, 177]),
    (463, &[1, 3, 7, 7, 17, 17, 37, 71]),
    (487, &[1, 3, 1, 5, 27, 63, 123, 213]),
    (501, &[1, 1, 3, 5, 11, 43, 53, 133]),
    (529, &[1, 3, 5, 5, 29, 17, 47, 173, 479]),
    (539, &[1, 3, 3, 11, 3, 1, 109, 9, 69]),
    (545, &[1, 1, 1, 5, 17, 39, 23, 5, 343]),
    (557, &[1, 3, 1, 5, 25, 15, 31, 103, 499]),
    (563, &[1, 1, 1, 11, 11, 17, 63, 105, 183]),
    (601, &[1, 1, 5, 11, 9, 29, 97, 231, 363]),
    (607, &[1, 1, 5, 15, 19, 45, 41, 7, 383]),
    (617, &[1, 3, 7, 7, 31, 19, 83, 137, 221]),
    (623, &[1, 1, 1, 3, 23, 15, 111, 223, 83]),
    (631, &[1, 1, 5, 13, 31, 15, 55, 25, 161]),
    (637, &[1, 1, 3, 13, 25, 47, 39, 87, 257]),
];

pub const MAX_DIMS: usize = DIRECTIONS.len();

/// Left-aligned direction numbers `v_1..v_32` of dimension `d`.
fn directions(d: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    let (poly, init) = DIRECTIONS[d];
    if d == 0 {
        for (j, x) in v.iter_mut().enumerate() {
            *x = 1 << (BITS - 1 - j);
        }
        return v;
    }
    let s = (32 - poly.leading_zeros() - 1) as usize;
    for j in 0..s {
        v[j] = init[j] << (BITS - 1 - j);
    }
    for j in s..BITS {
        let mut x = v[j - s] ^ (v[j - s] >> s);
        for k in 1..s {
            if (poly >> (s - k)) & 1 == 1 {
                x ^= v[j - k];
            }
        }
        v[j] = x;
    }
    v
}

#[derive(Clone, Debug)]
pub struct SobolSeq {
    v: Vec<[u32; BITS]>,
    shift: Vec<u32>,
}

impl SobolSeq {
    /// Plain sequence, first point at the origin.
    pub fn new(dims: usize) -> Self {
        assert!((1..=MAX_DIMS).contains(&dims), "Sobol sequence supports 1..={MAX_DIMS} dimensions");
        Self { v: (0..dims).map(directions).collect(), shift: vec![0; dims] }
    }

    /// Sequence randomized by a lower-triangular binary matrix and a
    /// digital shift per dimension, both drawn from `seed`.
    pub fn scrambled(dims: usize, seed_: u64) -> Self {
        let mut s = Self::new(dims);
        let mut rng = seed::rng(seed_, &[0x50b]);
        for d in 0..dims {
            // row r of L acts on bit position r counted from the top
            let rows: Vec<u32> = (0..BITS)
                .map(|r| {
                    let above = if r == 0 { 0 } else { !0u32 << (BITS - r) };
                    (rng.random::<u32>() & above) | (1 << (BITS - 1 - r))
                })
                .collect();
            for x in s.v[d].iter_mut() {
                let src = *x;
                *x = rows.iter().enumerate().fold(0u32, |acc, (r, m)| acc | (((src & m).count_ones() & 1) << (BITS - 1 - r)));
            }
            s.shift[d] = rng.random();
        }
        s
    }

    pub fn dims(&self) -> usize {
        self.v.len()
    }

    /// Point `n` in Gray-code order, coordinates in `[0, 1)`.
    pub fn point(&self, n: u64) -> Vec<f64> {
        let gray = n ^ (n >> 1);
        self.v
            .iter()
            .zip(&self.shift)
            .map(|(v, &sh)| {
                let mut x = sh;
                for (j, vj) in v.iter().enumerate() {
                    if (gray >> j) & 1 == 1 {
                        x ^= vj;
                    }
                }
                x as f64 / 4_294_967_296.0
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unscrambled_reference_points() {
        let s = SobolSeq::new(64);
        let want: [(usize, [f64; 4]); 5] = [
            (1, [0.0966796875, 0.5966796875, 0.62744140625, 0.941162109375]),
            (5, [0.9072265625, 0.4072265625, 0.65771484375, 0.078857421875]),
            (29, [0.3408203125, 0.8408203125, 0.39208984375, 0.855224609375]),
            (59, [0.5712890625, 0.0712890625, 0.23095703125, 0.569580078125]),
            (63, [0.4462890625, 0.9462890625, 0.98876953125, 0.553466796875]),
        ];
        for (d, vals) in want {
            for (n, w) in [1000u64, 1001, 2047, 4095].iter().zip(vals) {
                assert_eq!(s.point(*n)[d], w, "dim {d} point {n}");
            }
        }
        let first: Vec<f64> = (0..8).map(|n| s.point(n)[0]).collect();
        assert_eq!(first, [0.0, 0.5, 0.75, 0.25, 0.375, 0.875, 0.625, 0.125]);
    }

    #[test]
    fn scrambled_points_stratify() {
        // each dyadic interval of length 1/64 holds exactly one of 64 points
        let s = SobolSeq::scrambled(40, 9);
        for d in 0..40 {
            let mut seen = [false; 64];
            for n in 0..64 {
                let b = (s.point(n)[d] * 64.0) as usize;
                assert!(!seen[b], "dim {d}");
                seen[b] = true;
            }
        }
        assert_ne!(s.point(3), SobolSeq::scrambled(40, 10).point(3));
    }
}
