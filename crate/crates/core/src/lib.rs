//! Deterministic desk-scale simulator of an interactive robot grasping system.
//!
//! The pipeline renders a tabletop [`scene`] through a pinhole camera,
//! synthesizes per-pixel grasp maps ([`graspmap`]), detects labeled objects and
//! their dominant colors ([`detector`]), interprets user text ([`nlu`]) inside
//! a three-mode [`dialogue`] engine, and executes the resulting grasps with a
//! kinematic arm ([`executor`]). [`service`] hosts sessions, replays scripted
//! transcripts and writes image snapshots.

pub mod detector;
pub mod dialogue;
pub mod executor;
pub mod geometry;
pub mod graspmap;
pub mod nlu;
pub mod scene;
pub mod service;

/// Derives an independent 64-bit seed for `(stream, index)` from a base seed
/// using the splitmix64 finalizer.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
