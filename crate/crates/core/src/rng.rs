//! Addressable Gaussian increments.
//!
//! Every normal draw is a pure function of `(seed, particle, step, atom, coordinate)`.
//! The key is folded through SplitMix64 finalizers into two 53-bit uniforms and
//! mapped to a standard normal with the cosine branch of Box-Muller. Nothing is
//! sequential, so parallel schedules and skipped draws (zero-weight atoms) never
//! shift any other stream.

/// Identifier recorded in run manifests for the stream layout and Gaussian method.
pub const RNG_SCHEME: &str = "splitmix64-keyed(seed,particle,step,atom,coord)/box-muller-cos/v1";

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Address of a single driver draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub particle: u64,
    pub step: u64,
    pub atom: u64,
    pub coord: u64,
}

impl StreamKey {
    pub fn new(particle: usize, step: usize, atom: usize, coord: usize) -> Self {
        Self {
            particle: particle as u64,
            step: step as u64,
            atom: atom as u64,
            coord: coord as u64,
        }
    }
}

#[inline]
fn key_hash(seed: u64, key: StreamKey) -> u64 {
    let mut h = mix(seed.wrapping_add(GOLDEN));
    h = mix(h ^ key.particle.wrapping_mul(GOLDEN));
    h = mix(h ^ key.step.wrapping_add(0x632b_e59b_d9b4_e019));
    h = mix(h ^ key.atom.wrapping_mul(0xd1b5_4a32_d192_ed03));
    mix(h ^ key.coord.wrapping_add(0x8cb9_2ba7_2f3d_8dd7))
}

#[inline]
fn to_open_unit(bits: u64) -> f64 {
    // (0, 1]: never zero, so ln() is finite.
    ((bits >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw on (0, 1] for the given key.
#[inline]
pub fn uniform(seed: u64, key: StreamKey) -> f64 {
    to_open_unit(key_hash(seed, key))
}

/// Standard normal draw for the given key.
#[inline]
pub fn standard_normal(seed: u64, key: StreamKey) -> f64 {
    let h1 = key_hash(seed, key);
    let h2 = mix(h1 ^ GOLDEN);
    let u1 = to_open_unit(h1);
    let u2 = to_open_unit(h2);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
