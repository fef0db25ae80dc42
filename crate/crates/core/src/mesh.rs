//! Deterministic unit-sphere meshes and 1-D refinement search.
//!
//! The meshes are prefixes of fixed infinite sequences, so raising the
//! resolution only ever adds points. Maxima taken over a mesh are therefore
//! monotone in the resolution, which downstream code relies on when it
//! reports sampled quantities as certified lower bounds.

/// Rounds a requested resolution up to the next power of two (minimum 8),
/// the ladder on which meshes nest.
pub fn canonical_resolution(resolution: usize) -> usize {
    resolution.max(8).next_power_of_two()
}

/// Radical-inverse (van der Corput) value of `index` in the given base.
pub fn halton(mut index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

const PRIMES: [usize; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// The `index`-th point (0-based) of the fixed unit-sphere sequence in
/// dimension `m`.
///
/// For `m = 2` the sequence walks power-of-two angle refinements so that
/// every prefix of length `2^k ≥ 8` is a uniform angular mesh. Higher
/// dimensions map a Halton sequence onto the sphere (equal-area cylinder
/// for `m = 3`, normalized Box–Muller Gaussians above that).
pub fn sphere_point(m: usize, index: usize) -> Vec<f64> {
    assert!(m >= 1, "sphere mesh needs a positive dimension");
    match m {
        1 => vec![if index % 2 == 0 { 1.0 } else { -1.0 }],
        2 => {
            // Order the angles so every power-of-two prefix is uniform:
            // indices 0..8 give the 8th roots, 8..16 the odd 16ths, etc.
            let (denom, num) = if index < 8 {
                (8usize, index)
            } else {
                let level = (index / 8).ilog2() as usize + 1;
                let start = 8usize << (level - 1);
                (8usize << level, 2 * (index - start) + 1)
            };
            let theta = 2.0 * std::f64::consts::PI * (num as f64) / (denom as f64);
            vec![theta.cos(), theta.sin()]
        }
        3 => {
            // Cylindrical equal-area map of the 2-D Halton sequence.
            let u = halton(index + 1, 2);
            let v = halton(index + 1, 3);
            let z = 2.0 * u - 1.0;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let theta = 2.0 * std::f64::consts::PI * v;
            vec![r * theta.cos(), r * theta.sin(), z]
        }
        _ => {
            // Box–Muller on Halton pairs, then normalize. Pairs use distinct
            // prime bases so coordinates stay equidistributed.
            let pairs = m.div_ceil(2);
            let mut gauss = Vec::with_capacity(2 * pairs);
            for p in 0..pairs {
                let u = halton(index + 1, PRIMES[(2 * p) % PRIMES.len()]).max(1e-12);
                let v = halton(index + 1, PRIMES[(2 * p + 1) % PRIMES.len()]);
                let r = (-2.0 * u.ln()).sqrt();
                let phi = 2.0 * std::f64::consts::PI * v;
                gauss.push(r * phi.cos());
                gauss.push(r * phi.sin());
            }
            gauss.truncate(m);
            let norm = gauss.iter().map(|g| g * g).sum::<f64>().sqrt().max(1e-300);
            gauss.iter().map(|g| g / norm).collect()
        }
    }
}

/// First `resolution` points of the sphere sequence (after rounding the
/// resolution up through [`canonical_resolution`]).
pub fn sphere_mesh(m: usize, resolution: usize) -> Vec<Vec<f64>> {
    let r = canonical_resolution(resolution);
    (0..r).map(|i| sphere_point(m, i)).collect()
}

/// Conservative bound on the angular covering radius of the mesh: no sphere
/// direction is farther than this angle (radians) from a mesh point.
pub fn mesh_angular_gap(m: usize, resolution: usize) -> f64 {
    let r = canonical_resolution(resolution) as f64;
    let gap = match m {
        1 => 0.0,
        2 => std::f64::consts::PI / r,
        // Cap-covering estimate with a ×2 safety factor for the
        // low-discrepancy layouts used above.
        _ => 4.0 * r.powf(-1.0 / (m as f64 - 1.0)),
    };
    gap.min(std::f64::consts::PI)
}

/// Golden-section maximization of `f` on `[a, b]`.
///
/// Runs a fixed iteration count so results are deterministic; returns the
/// best abscissa/value pair among every point it evaluated.
pub fn golden_section_max(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, iters: usize) -> (f64, f64) {
    let inv_phi = 0.618_033_988_749_894_8;
    let (mut lo, mut hi) = (a.min(b), a.max(b));
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut best = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    for _ in 0..iters {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
        let cand = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
        if cand.1 > best.1 {
            best = cand;
        }
    }
    best
}
