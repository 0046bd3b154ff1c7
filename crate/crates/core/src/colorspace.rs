//! sRGB <-> CIELAB conversion and the input/target channel split for the
//! colorization task.
//!
//! Conventions, fixed once for the whole crate:
//! - sRGB primaries with the D65 reference white; the white point is taken
//!   as the row sums of the forward matrix so a pure gray input maps to
//!   a = b = 0 down to rounding.
//! - Network-facing scaling: L is divided by 100, a and b by 128, keeping
//!   learned quantities O(1).

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// Scale applied to a/b channels before they enter losses or the network.
pub const AB_SCALE: f64 = 128.0;

/// CIELAB color. L in [0, 100]; a, b roughly in [-128, 127].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabColor {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

// Linear sRGB -> XYZ (D65), row-major.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

// XYZ -> linear sRGB.
const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.240_454_2, -1.537_138_5, -0.498_531_4],
    [-0.969_266_0, 1.876_010_8, 0.041_556_0],
    [0.055_643_4, -0.204_025_9, 1.057_225_2],
];

fn reference_white() -> [f64; 3] {
    [
        RGB_TO_XYZ[0][0] + RGB_TO_XYZ[0][1] + RGB_TO_XYZ[0][2],
        RGB_TO_XYZ[1][0] + RGB_TO_XYZ[1][1] + RGB_TO_XYZ[1][2],
        RGB_TO_XYZ[2][0] + RGB_TO_XYZ[2][1] + RGB_TO_XYZ[2][2],
    ]
}

fn gamma_expand(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn gamma_compress(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

// CIE lightness function; delta = 6/29.
fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

/// sRGB components in [0, 1] to CIELAB.
pub fn rgb_to_lab(rgb: [f64; 3]) -> Result<LabColor> {
    for (i, &c) in rgb.iter().enumerate() {
        if !c.is_finite() || !(0.0..=1.0).contains(&c) {
            return Err(Error::validation(format!(
                "rgb component {i} = {c} outside [0, 1]"
            )));
        }
    }
    let lin = [
        gamma_expand(rgb[0]),
        gamma_expand(rgb[1]),
        gamma_expand(rgb[2]),
    ];
    let white = reference_white();
    let mut f = [0.0; 3];
    for ch in 0..3 {
        let v = RGB_TO_XYZ[ch][0] * lin[0] + RGB_TO_XYZ[ch][1] * lin[1] + RGB_TO_XYZ[ch][2] * lin[2];
        f[ch] = lab_f(v / white[ch]);
    }
    Ok(LabColor {
        l: 116.0 * f[1] - 16.0,
        a: 500.0 * (f[0] - f[1]),
        b: 200.0 * (f[1] - f[2]),
    })
}

/// CIELAB to sRGB, clamping out-of-gamut results per channel at the very
/// end (intermediate linear values are left unclamped).
pub fn lab_to_rgb(lab: LabColor) -> [f64; 3] {
    let white = reference_white();
    let fy = (lab.l + 16.0) / 116.0;
    let fx = fy + lab.a / 500.0;
    let fz = fy - lab.b / 200.0;
    let xyz = [
        white[0] * lab_f_inv(fx),
        white[1] * lab_f_inv(fy),
        white[2] * lab_f_inv(fz),
    ];
    let mut rgb = [0.0; 3];
    for ch in 0..3 {
        let lin =
            XYZ_TO_RGB[ch][0] * xyz[0] + XYZ_TO_RGB[ch][1] * xyz[1] + XYZ_TO_RGB[ch][2] * xyz[2];
        rgb[ch] = gamma_compress(lin).clamp(0.0, 1.0);
    }
    rgb
}

/// CIE76 color difference, used by the scene generator to keep class base
/// colors distinguishable.
pub fn delta_e(x: [f64; 3], y: [f64; 3]) -> Result<f64> {
    let a = rgb_to_lab(x)?;
    let b = rgb_to_lab(y)?;
    Ok(((a.l - b.l).powi(2) + (a.a - b.a).powi(2) + (a.b - b.b).powi(2)).sqrt())
}

/// Input rows for the colorization task: (x, y, z, L, L, L) with L
/// rescaled to [0, 1]. The lightness is triplicated so the input width
/// matches the segmentation network's six channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PretextInput {
    pub features: Vec<[f64; 6]>,
}

/// Split a colored cloud into the given channels (position + triplicated
/// lightness) and the prediction targets (a, b), both in scaled units.
pub fn split_pretext_channels(cloud: &PointCloud) -> Result<(PretextInput, Vec<[f64; 2]>)> {
    let mut features = Vec::with_capacity(cloud.len());
    let mut targets = Vec::with_capacity(cloud.len());
    for (p, c) in cloud.positions().iter().zip(cloud.colors()) {
        let lab = rgb_to_lab(*c)?;
        let l = lab.l / 100.0;
        features.push([p[0], p[1], p[2], l, l, l]);
        targets.push([lab.a / AB_SCALE, lab.b / AB_SCALE]);
    }
    Ok((PretextInput { features }, targets))
}

/// Input rows for the segmentation task: (x, y, z, L, a, b) in scaled units.
pub fn seg_features(cloud: &PointCloud) -> Result<Vec<[f64; 6]>> {
    let mut features = Vec::with_capacity(cloud.len());
    for (p, c) in cloud.positions().iter().zip(cloud.colors()) {
        let lab = rgb_to_lab(*c)?;
        features.push([
            p[0],
            p[1],
            p[2],
            lab.l / 100.0,
            lab.a / AB_SCALE,
            lab.b / AB_SCALE,
        ]);
    }
    Ok(features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    /// Straight-line reference implementation of sRGB -> XYZ -> Lab, written
    /// directly from the published formulas and kept independent of the
    /// library code paths above.
    fn lab_oracle(rgb: [f64; 3]) -> (f64, f64, f64) {
        fn expand(c: f64) -> f64 {
            if c <= 0.04045 {
                c / 12.92
            } else {
                ((c + 0.055) / 1.055).powf(2.4)
            }
        }
        let r = expand(rgb[0]);
        let g = expand(rgb[1]);
        let b = expand(rgb[2]);
        let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
        let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
        let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
        let xn = 0.4124564 + 0.3575761 + 0.1804375;
        let yn = 0.2126729 + 0.7151522 + 0.0721750;
        let zn = 0.0193339 + 0.1191920 + 0.9503041;
        fn f(t: f64) -> f64 {
            if t > 216.0 / 24389.0 {
                t.cbrt()
            } else {
                (24389.0 / 27.0 * t + 16.0) / 116.0
            }
        }
        let (fx, fy, fz) = (f(x / xn), f(y / yn), f(z / zn));
        (116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz))
    }

    #[test]
    fn white_is_l100() {
        let lab = rgb_to_lab([1.0, 1.0, 1.0]).unwrap();
        assert!((lab.l - 100.0).abs() < 1e-3);
        assert!(lab.a.abs() < 1e-3);
        assert!(lab.b.abs() < 1e-3);
    }

    #[test]
    fn black_is_origin() {
        let lab = rgb_to_lab([0.0, 0.0, 0.0]).unwrap();
        assert!(lab.l.abs() < 1e-9);
        assert!(lab.a.abs() < 1e-9);
        assert!(lab.b.abs() < 1e-9);
    }

    #[test]
    fn red_matches_reference_formulas() {
        let lab = rgb_to_lab([1.0, 0.0, 0.0]).unwrap();
        let (l, a, b) = lab_oracle([1.0, 0.0, 0.0]);
        assert!((lab.l - l).abs() < 1e-9);
        assert!((lab.a - a).abs() < 1e-9);
        assert!((lab.b - b).abs() < 1e-9);
        // Published sRGB red is around (53.2, 80.1, 67.2).
        assert!((l - 53.2).abs() < 0.1, "L {l}");
        assert!((a - 80.1).abs() < 0.1, "a {a}");
        assert!((b - 67.2).abs() < 0.1, "b {b}");
    }

    #[test]
    fn gray_axis_has_zero_chroma() {
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            let lab = rgb_to_lab([t, t, t]).unwrap();
            assert!(lab.a.abs() <= 1e-6, "a {} at t {}", lab.a, t);
            assert!(lab.b.abs() <= 1e-6, "b {} at t {}", lab.b, t);
        }
    }

    #[test]
    fn lightness_monotone_on_gray_axis() {
        let mut prev = -1.0;
        for i in 0..=1000 {
            let t = i as f64 / 1000.0;
            let lab = rgb_to_lab([t, t, t]).unwrap();
            assert!(lab.l > prev, "L not increasing at t {t}");
            prev = lab.l;
        }
    }

    #[test]
    fn roundtrip_within_1e4() {
        let mut rng = SplitMix64::new(0xC010);
        for _ in 0..10_000 {
            let rgb = [rng.next_f64(), rng.next_f64(), rng.next_f64()];
            let back = lab_to_rgb(rgb_to_lab(rgb).unwrap());
            for ch in 0..3 {
                assert!(
                    (rgb[ch] - back[ch]).abs() <= 1e-4,
                    "channel {ch}: {} vs {}",
                    rgb[ch],
                    back[ch]
                );
            }
        }
    }

    #[test]
    fn lab_extremes_roundtrip() {
        let w = lab_to_rgb(LabColor {
            l: 100.0,
            a: 0.0,
            b: 0.0,
        });
        for c in w {
            assert!((c - 1.0).abs() < 1e-3);
        }
        let k = lab_to_rgb(LabColor {
            l: 0.0,
            a: 0.0,
            b: 0.0,
        });
        for c in k {
            assert!(c.abs() < 1e-9);
        }
    }

    #[test]
    fn out_of_gamut_is_clamped() {
        let rgb = lab_to_rgb(LabColor {
            l: 50.0,
            a: 200.0,
            b: -200.0,
        });
        for c in rgb {
            assert!((0.0..=1.0).contains(&c));
        }
    }

    #[test]
    fn rejects_out_of_range_component() {
        assert!(rgb_to_lab([1.1, 0.0, 0.0]).is_err());
        assert!(rgb_to_lab([0.0, -0.1, 0.0]).is_err());
        assert!(rgb_to_lab([0.0, f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn pretext_split_gray_cloud_has_zero_targets() {
        let positions = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let colors = vec![[0.3, 0.3, 0.3], [0.6, 0.6, 0.6], [0.9, 0.9, 0.9]];
        let cloud = PointCloud::new(positions, colors, None, 2).unwrap();
        let (input, targets) = split_pretext_channels(&cloud).unwrap();
        for t in &targets {
            assert!(t[0].abs() <= 1e-6);
            assert!(t[1].abs() <= 1e-6);
        }
        for row in &input.features {
            assert_eq!(row[3], row[4]);
            assert_eq!(row[4], row[5]);
        }
    }

    #[test]
    fn pretext_split_matches_per_point_oracle() {
        let positions = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let colors = vec![[0.9, 0.1, 0.1], [0.1, 0.8, 0.2], [0.2, 0.3, 0.9]];
        let cloud = PointCloud::new(positions.clone(), colors.clone(), None, 2).unwrap();
        let (input, targets) = split_pretext_channels(&cloud).unwrap();
        for i in 0..3 {
            let (l, a, b) = lab_oracle(colors[i]);
            assert!((input.features[i][3] - l / 100.0).abs() < 1e-9);
            assert!((targets[i][0] - a / AB_SCALE).abs() < 1e-9);
            assert!((targets[i][1] - b / AB_SCALE).abs() < 1e-9);
            for ax in 0..3 {
                assert_eq!(input.features[i][ax], positions[i][ax]);
            }
        }
    }
}
