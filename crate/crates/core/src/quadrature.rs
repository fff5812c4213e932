//! Scalar quadrature helpers.

/// Composite trapezoid rule on arbitrary nodes.
pub fn trapezoid(x: &[f64], f: &[f64]) -> f64 {
    x.windows(2)
        .zip(f.windows(2))
        .map(|(xs, fs)| 0.5 * (xs[1] - xs[0]) * (fs[0] + fs[1]))
        .sum()
}

/// Composite Simpson rule on a uniform grid with spacing `h`.
///
/// An odd number of intervals is handled by closing the last three
/// intervals with the Simpson 3/8 rule.
pub fn simpson_uniform(f: &[f64], h: f64) -> f64 {
    let n = f.len().saturating_sub(1);
    match n {
        0 => 0.0,
        1 => 0.5 * h * (f[0] + f[1]),
        2 => h / 3.0 * (f[0] + 4.0 * f[1] + f[2]),
        _ => {
            let (even_end, tail) = if n % 2 == 0 { (n, 0.0) } else { (n - 3, simpson38(&f[n - 3..], h)) };
            if even_end == 0 {
                return tail;
            }
            let mut acc = f[0] + f[even_end];
            for (i, fi) in f.iter().enumerate().take(even_end).skip(1) {
                acc += if i % 2 == 1 { 4.0 * fi } else { 2.0 * fi };
            }
            acc * h / 3.0 + tail
        }
    }
}

fn simpson38(f: &[f64], h: f64) -> f64 {
    3.0 * h / 8.0 * (f[0] + 3.0 * f[1] + 3.0 * f[2] + f[3])
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    recurse(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// 20-point Gauss-Legendre rule on `[a, b]`.
pub fn gauss_legendre<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let c = 0.5 * (b - a);
    let d = 0.5 * (b + a);
    GL20.iter()
        .map(|&(x, w)| w * (f(d + c * x) + f(d - c * x)))
        .sum::<f64>()
        * c
}

/// Gauss-Legendre on `[a, b]` split into `pieces` equal panels.
pub fn gauss_legendre_composite<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, pieces: usize) -> f64 {
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| gauss_legendre(f, a + i as f64 * h, a + (i + 1) as f64 * h))
        .sum()
}

// Positive nodes and weights of the 20-point rule.
const GL20: [(f64, f64); 10] = [
    (0.076_526_521_133_497_33, 0.152_753_387_130_725_85),
    (0.227_785_851_141_645_08, 0.149_172_986_472_603_75),
    (0.373_706_088_715_419_56, 0.142_096_109_318_382_05),
    (0.510_867_001_950_827_1, 0.131_688_638_449_176_63),
    (0.636_053_680_726_515, 0.118_194_531_961_518_42),
    (0.746_331_906_460_150_8, 0.101_930_119_817_240_44),
    (0.839_116_971_822_218_8, 0.083_276_741_576_704_75),
    (0.912_234_428_251_326, 0.062_672_048_334_109_06),
    (0.963_971_927_277_913_8, 0.040_601_429_800_386_94),
    (0.993_128_599_185_094_9, 0.017_614_007_139_152_118),
];
