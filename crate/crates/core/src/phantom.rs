//! Deterministic synthetic test volumes.
//!
//! Three kinds: a pure z-gradient (analytic checks), concentric sphere
//! shells, and a windowed asymmetric 3D sinusoid (the workhorse for
//! retrieval and reconstruction tests). The shells and sinusoid are masked
//! by a smooth spherical window so edge slices carry little or no content,
//! mirroring a masked RoI on black background.

use crate::volume::Volume;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomKind {
    /// Intensity equals the world z coordinate in mm (no window).
    Gradient,
    /// Concentric cosine shells inside a spherical window, range 0..255.
    Shells,
    /// Smooth asymmetric sinusoidal field inside a spherical window, range 0..255.
    Sinusoid,
}

impl PhantomKind {
    pub fn name(&self) -> &'static str {
        match self {
            PhantomKind::Gradient => "gradient",
            PhantomKind::Shells => "shells",
            PhantomKind::Sinusoid => "sinusoid",
        }
    }
}

/// Smooth window: 1 inside `r0`, cosine rolloff to 0 at `rmax`.
fn window(r: f64, r0: f64, rmax: f64) -> f64 {
    if r <= r0 {
        1.0
    } else if r >= rmax {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * (r - r0) / (rmax - r0)).cos())
    }
}

/// Build a cubic phantom of `dims`^3 voxels at `spacing` mm.
pub fn make_phantom(kind: PhantomKind, dims: usize, spacing: f64, seed: u64) -> Volume {
    let side = dims as f64 * spacing;
    let rmax = 0.45 * side;
    let r0 = 0.75 * rmax;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    match kind {
        PhantomKind::Gradient => Volume::from_world_fn(dims, dims, dims, spacing, |_, _, z| z),
        PhantomKind::Shells => {
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let shell_width = rmax / 3.5;
            Volume::from_world_fn(dims, dims, dims, spacing, move |x, y, z| {
                let r = (x * x + y * y + z * z).sqrt();
                let shells = 0.5 * (1.0 + (std::f64::consts::TAU * r / shell_width + phase).cos());
                255.0 * shells * window(r, r0, rmax)
            })
        }
        PhantomKind::Sinusoid => {
            let tau = std::f64::consts::TAU;
            let phases: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..tau)).collect();
            // 2-3 cycles across the object, incommensurate per axis plus a
            // diagonal component so no rotation maps the field onto itself.
            let f = [tau * 2.1 / side, tau * 2.7 / side, tau * 1.6 / side];
            let fd = tau * 2.3 / (side * 3f64.sqrt());
            Volume::from_world_fn(dims, dims, dims, spacing, move |x, y, z| {
                let r = (x * x + y * y + z * z).sqrt();
                let s1 = (f[0] * x + phases[0]).sin()
                    * (f[1] * y + phases[1]).sin()
                    * (f[2] * z + phases[2]).sin();
                let s2 = (fd * (x + y - z) + phases[3]).sin();
                let base = 0.5 * (1.0 + 0.7 * s1 + 0.3 * s2);
                255.0 * base * window(r, r0, rmax)
            })
        }
    }
}
