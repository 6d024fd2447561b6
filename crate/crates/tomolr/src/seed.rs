//! Deterministic seed derivation for parallel Monte-Carlo work. Every
//! (cell, round) pair gets its own stream seed from the experiment root seed
//! through a splitmix64 counter mix, so rounds can run in any order and on
//! any thread count without changing the draws.

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream seed for a given cell and round under a root seed.
pub fn derive(root: u64, cell: u64, round: u64) -> u64 {
    let a = splitmix64(root ^ splitmix64(cell.wrapping_add(0x5851_F42D_4C95_7F2D)));
    splitmix64(a ^ splitmix64(round.wrapping_add(0x1405_7B7E_F767_814F)))
}
