//! Band-limited value noise used to texture synthetic planes.

/// SplitMix64 finalizer; mixes lattice coordinates into a uniform value.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = mix(seed ^ mix(ix as u64 ^ mix(iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smooth random field with values in `[0, 1]`, deterministic in `seed`.
#[derive(Clone, Debug)]
pub struct ValueNoise {
    pub seed: u64,
    /// Lattice spacing of the coarsest octave, in texture units.
    pub cell: f64,
    pub octaves: u32,
}

impl ValueNoise {
    pub fn new(seed: u64, cell: f64, octaves: u32) -> Self {
        ValueNoise {
            seed,
            cell,
            octaves: octaves.max(1),
        }
    }

    fn octave(&self, k: u32, u: f64, v: f64) -> f64 {
        let s = self.cell / (1 << k) as f64;
        let (x, y) = (u / s, v / s);
        let (fx, fy) = (x.floor(), y.floor());
        let (ix, iy) = (fx as i64, fy as i64);
        let (tx, ty) = (smooth(x - fx), smooth(y - fy));
        let seed = mix(self.seed.wrapping_add(k as u64));
        let a = lattice(seed, ix, iy);
        let b = lattice(seed, ix + 1, iy);
        let c = lattice(seed, ix, iy + 1);
        let d = lattice(seed, ix + 1, iy + 1);
        let top = a + (b - a) * tx;
        let bot = c + (d - c) * tx;
        top + (bot - top) * ty
    }

    /// Octaves summed with halving amplitude, normalized back to `[0, 1]`.
    pub fn sample(&self, u: f64, v: f64) -> f64 {
        let mut acc = 0.0;
        let mut norm = 0.0;
        for k in 0..self.octaves {
            let amp = 0.5f64.powi(k as i32);
            acc += amp * self.octave(k, u, v);
            norm += amp;
        }
        acc / norm
    }
}
