//! Real spherical-harmonic colour evaluation (degrees 0–3).

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Basis values `Y_k(dir)` for every coefficient up to `degree`.
pub fn sh_basis(dir: [f64; 3], degree: u32) -> Vec<f64> {
    let [x, y, z] = dir;
    let mut b = Vec::with_capacity(crate::types::sh_coeff_count(degree));
    b.push(SH_C0);
    if degree >= 1 {
        b.extend([-SH_C1 * y, SH_C1 * z, -SH_C1 * x]);
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b.extend([
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2.0 * zz - xx - yy),
            SH_C2[3] * x * z,
            SH_C2[4] * (xx - yy),
        ]);
        if degree >= 3 {
            b.extend([
                SH_C3[0] * y * (3.0 * xx - yy),
                SH_C3[1] * x * y * z,
                SH_C3[2] * y * (4.0 * zz - xx - yy),
                SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
                SH_C3[4] * x * (4.0 * zz - xx - yy),
                SH_C3[5] * z * (xx - yy),
                SH_C3[6] * x * (xx - 3.0 * yy),
            ]);
        }
    }
    b
}

/// Colour before clamping: `Σ Y_k c_k + 0.5`.
pub fn raw_color(sh: &[[f64; 3]], basis: &[f64]) -> [f64; 3] {
    let mut c = [0.5; 3];
    for (coeff, y) in sh.iter().zip(basis) {
        for ch in 0..3 {
            c[ch] += y * coeff[ch];
        }
    }
    c
}

/// View-dependent colour, clamped to `[0, 1]`.
pub fn evaluate_sh(sh: &[[f64; 3]], view_dir: [f64; 3], degree: u32) -> [f64; 3] {
    raw_color(sh, &sh_basis(view_dir, degree)).map(|c| c.clamp(0.0, 1.0))
}

/// DC coefficient that reproduces `rgb` at degree 0.
pub fn rgb_to_dc(rgb: [f64; 3]) -> [f64; 3] {
    rgb.map(|c| (c - 0.5) / SH_C0)
}
