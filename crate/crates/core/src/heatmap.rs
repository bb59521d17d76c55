//! Fixed-colormap rendering of fields, binary PPM output and the quantised
//! field digests the narration agents read.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fieldgrid::{AtmosphericState, NormStats};
use crate::numcore::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Contract(format!("image dimensions {height}x{width}")));
        }
        if pixels.len() != height * width {
            return Err(Error::Contract(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        self.pixels[row * self.width + col]
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    /// Binary P6 encoding: `P6\n<W> <H>\n255\n` followed by raw RGB triples.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.pixels.len() * 3);
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }
}

pub fn write_ppm(image: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    if image.height == 0 || image.width == 0 {
        return Err(Error::Contract("cannot write an empty image".into()));
    }
    std::fs::write(path, image.to_ppm())?;
    Ok(())
}

/// Piecewise-linear colormap with clamped normalisation bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColormapSpec {
    pub anchors: Vec<(f64, [u8; 3])>,
    pub lo: f64,
    pub hi: f64,
}

/// Five-anchor blue-grey-red diverging map.
pub const DIVERGING_ANCHORS: [(f64, [u8; 3]); 5] = [
    (0.0, [59, 76, 192]),
    (0.25, [124, 159, 249]),
    (0.5, [221, 221, 221]),
    (0.75, [245, 156, 125]),
    (1.0, [180, 4, 38]),
];

impl ColormapSpec {
    pub fn new(anchors: Vec<(f64, [u8; 3])>, lo: f64, hi: f64) -> Result<Self> {
        let cm = Self { anchors, lo, hi };
        cm.validate()?;
        Ok(cm)
    }

    pub fn diverging(lo: f64, hi: f64) -> Result<Self> {
        Self::new(DIVERGING_ANCHORS.to_vec(), lo, hi)
    }

    /// Bounds `mean ± 3·std` of variable `v`.
    pub fn for_variable(stats: &NormStats, v: usize) -> Result<Self> {
        let (m, s) = (stats.mean[v], stats.std[v]);
        Self::diverging(m - 3.0 * s, m + 3.0 * s)
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.anchors;
        if a.len() < 2 || a[0].0 != 0.0 || a[a.len() - 1].0 != 1.0 {
            return Err(Error::Contract("colormap anchors must start at 0 and end at 1".into()));
        }
        if a.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Contract("colormap anchors must be strictly increasing".into()));
        }
        if !(self.lo < self.hi) {
            return Err(Error::Contract(format!("bounds lo={} hi={}", self.lo, self.hi)));
        }
        Ok(())
    }

    /// Unrounded channel values at normalised position `t ∈ [0, 1]`.
    pub fn color_at(&self, t: f64) -> [f64; 3] {
        let a = &self.anchors;
        let k = a.windows(2).position(|w| t <= w[1].0).unwrap_or(a.len() - 2);
        let ((p0, c0), (p1, c1)) = (a[k], a[k + 1]);
        let f = (t - p0) / (p1 - p0);
        std::array::from_fn(|ch| f64::from(c0[ch]) + f * (f64::from(c1[ch]) - f64::from(c0[ch])))
    }

    pub fn normalise(&self, x: f64) -> f64 {
        ((x - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }
}

pub fn render_field(field: &Tensor, cmap: &ColormapSpec) -> Result<RgbImage> {
    let (h, w) = field.expect_2d("render_field")?;
    if field.data().iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("render_field: NaN in field".into()));
    }
    let pixels = field
        .data()
        .iter()
        .map(|&x| cmap.color_at(cmap.normalise(x)).map(|c| c.round() as u8))
        .collect();
    RgbImage::new(h, w, pixels)
}

/// Renders every variable with bounds fixed from training statistics.
pub fn render_state(state: &AtmosphericState, stats: &NormStats) -> Result<Vec<RgbImage>> {
    state
        .fields
        .iter()
        .enumerate()
        .map(|(v, f)| render_field(f, &ColormapSpec::for_variable(stats, v)?))
        .collect()
}

/// Cell of a 3×3 partition of the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Region {
    NorthWest,
    North,
    NorthEast,
    West,
    Center,
    East,
    SouthWest,
    South,
    SouthEast,
}

impl Region {
    pub const ALL: [Region; 9] = [
        Region::NorthWest,
        Region::North,
        Region::NorthEast,
        Region::West,
        Region::Center,
        Region::East,
        Region::SouthWest,
        Region::South,
        Region::SouthEast,
    ];

    pub fn of_cell(row: usize, col: usize, height: usize, width: usize) -> Region {
        let band = |x: usize, n: usize| (x * 3 / n).min(2);
        Region::ALL[band(row, height) * 3 + band(col, width)]
    }

    pub fn label(self) -> &'static str {
        match self {
            Region::NorthWest => "north-west",
            Region::North => "north",
            Region::NorthEast => "north-east",
            Region::West => "west",
            Region::Center => "center",
            Region::East => "east",
            Region::SouthWest => "south-west",
            Region::South => "south",
            Region::SouthEast => "south-east",
        }
    }

    /// The diagonally opposite cell (centre maps to itself).
    pub fn opposite(self) -> Region {
        let i = Region::ALL.iter().position(|r| *r == self).expect("listed");
        Region::ALL[8 - i]
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Region::ALL
            .into_iter()
            .find(|r| r.label() == s)
            .ok_or_else(|| Error::Format(format!("unknown region label {s:?}")))
    }
}

impl From<Region> for String {
    fn from(r: Region) -> String {
        r.label().to_string()
    }
}

impl TryFrom<String> for Region {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Rounds to one decimal, halves away from zero.
pub fn quantize(x: f64) -> f64 {
    let q = (x * 10.0).round() / 10.0;
    if q == 0.0 {
        0.0
    } else {
        q
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldDigest {
    pub variable: String,
    pub region: Region,
    pub argmax: (usize, usize),
    pub maximum: f64,
    pub minimum: f64,
    /// Mean central-difference gradient magnitude.
    pub gradient: f64,
}

impl FieldDigest {
    /// Canonical one-line rendering used for hashing and backend prompts.
    pub fn summary(&self) -> String {
        format!(
            "{} max {:+.1} near {} min {:+.1} grad {:.1}",
            self.variable, self.maximum, self.region, self.minimum, self.gradient
        )
    }
}

pub fn field_digest(field: &Tensor, variable: &str) -> Result<FieldDigest> {
    let (h, w) = field.expect_2d("field_digest")?;
    field.ensure_finite("field_digest")?;
    let data = field.data();
    let mut best = 0;
    let mut min = data[0];
    for (k, &v) in data.iter().enumerate() {
        if v > data[best] {
            best = k;
        }
        min = min.min(v);
    }
    let mut grad = 0.0;
    for i in 0..h {
        for j in 0..w {
            let gr = (field.at((i + 1) % h, j) - field.at((i + h - 1) % h, j)) / 2.0;
            let gc = (field.at(i, (j + 1) % w) - field.at(i, (j + w - 1) % w)) / 2.0;
            grad += (gr * gr + gc * gc).sqrt();
        }
    }
    let (row, col) = (best / w, best % w);
    Ok(FieldDigest {
        variable: variable.to_string(),
        region: Region::of_cell(row, col, h, w),
        argmax: (row, col),
        maximum: quantize(data[best]),
        minimum: quantize(min),
        gradient: quantize(grad / (h * w) as f64),
    })
}

/// Region of the strongest absolute vorticity of a wind pair.
pub fn rotation_center(u: &Tensor, v: &Tensor) -> Result<Region> {
    let (h, w) = u.expect_2d("rotation_center")?;
    if v.shape() != u.shape() {
        return Err(crate::error::shape_err("wind components differ in shape"));
    }
    let mut best = (0usize, f64::NEG_INFINITY);
    for i in 0..h {
        for j in 0..w {
            let dv = (v.at(i, (j + 1) % w) - v.at(i, (j + w - 1) % w)) / 2.0;
            let du = (u.at((i + 1) % h, j) - u.at((i + h - 1) % h, j)) / 2.0;
            let vort = (dv - du).abs();
            if vort > best.1 {
                best = (i * w + j, vort);
            }
        }
    }
    Ok(Region::of_cell(best.0 / w, best.0 % w, h, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cmap() -> ColormapSpec {
        ColormapSpec::diverging(-1.0, 1.0).unwrap()
    }

    #[test]
    fn endpoints_midpoint_and_clamp() {
        let f = Tensor::from_rows(&[&[-1.0, 0.0, 1.0, -7.0]]);
        let img = render_field(&f, &cmap()).unwrap();
        assert_eq!(img.pixel(0, 0), [59, 76, 192]);
        assert_eq!(img.pixel(0, 1), [221, 221, 221]);
        assert_eq!(img.pixel(0, 2), [180, 4, 38]);
        assert_eq!(img.pixel(0, 3), [59, 76, 192]);
    }

    #[test]
    fn nan_rejected() {
        let f = Tensor::from_rows(&[&[f64::NAN]]);
        assert!(matches!(render_field(&f, &cmap()), Err(Error::Numeric(_))));
    }

    #[test]
    fn colormap_validation() {
        assert!(ColormapSpec::diverging(1.0, 1.0).is_err());
        assert!(ColormapSpec::new(vec![(0.0, [0; 3]), (0.0, [1; 3]), (1.0, [2; 3])], 0.0, 1.0).is_err());
    }

    #[test]
    fn ppm_layout() {
        let img = RgbImage::new(16, 16, vec![[1, 2, 3]; 256]).unwrap();
        let bytes = img.to_ppm();
        assert!(bytes.starts_with(b"P6\n16 16\n255\n"));
        // `P6\n` + `16 16\n` + `255\n` is 13 bytes, followed by 16·16·3 payload bytes.
        assert_eq!(bytes.len(), 13 + 768);
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.ppm"), dir.path().join("b.ppm"));
        write_ppm(&img, &a).unwrap();
        write_ppm(&img, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert!(matches!(RgbImage::new(0, 4, vec![]), Err(Error::Contract(_))));
    }

    fn blob(r0: f64, c0: f64) -> Tensor {
        let mut t = Tensor::zeros(&[16, 16]);
        for i in 0..16 {
            for j in 0..16 {
                let d2 = (i as f64 - r0).powi(2) + (j as f64 - c0).powi(2);
                t.set(i, j, 2.3 * (-d2 / 8.0).exp());
            }
        }
        t
    }

    #[test]
    fn digest_examples() {
        let d = field_digest(&blob(12.0, 3.0), "z").unwrap();
        assert_eq!(d.region, Region::SouthWest);
        assert_eq!(d.maximum, 2.3);
        let c = field_digest(&Tensor::full(&[16, 16], 0.7), "t").unwrap();
        assert_eq!(c.argmax, (0, 0));
        assert_eq!(c.region, Region::NorthWest);
        assert_eq!(c.gradient, 0.0);
        assert_eq!(field_digest(&blob(4.0, 9.0), "u").unwrap(), field_digest(&blob(4.0, 9.0), "u").unwrap());
    }

    #[test]
    fn quantize_rounds_half_away() {
        assert_eq!(quantize(2.25), 2.3);
        assert_eq!(quantize(-2.25), -2.3);
        assert_eq!(quantize(-0.04), 0.0);
        assert_eq!(quantize(0.04).to_bits(), 0f64.to_bits());
    }

    #[test]
    fn region_labels_round_trip() {
        for r in Region::ALL {
            assert_eq!(r.label().parse::<Region>().unwrap(), r);
        }
        assert_eq!(Region::NorthWest.opposite(), Region::SouthEast);
        assert_eq!(Region::Center.opposite(), Region::Center);
    }

    proptest! {
        #[test]
        fn channels_affine_within_segment(a in 0.0f64..0.25, b in 0.0f64..0.25) {
            let cm = cmap();
            let (ca, cb, cm_mid) = (cm.color_at(a), cm.color_at(b), cm.color_at((a + b) / 2.0));
            for ch in 0..3 {
                prop_assert!((cm_mid[ch] - (ca[ch] + cb[ch]) / 2.0).abs() < 1e-9);
            }
        }

        #[test]
        fn region_invariant_under_monotone_rescale(vals in proptest::collection::vec(-5.0f64..5.0, 36), s in 0.1f64..10.0, o in -3.0f64..3.0) {
            let f = Tensor::new(&[6, 6], vals).unwrap();
            let g = f.map(|x| (s * x + o).exp());
            prop_assert_eq!(field_digest(&f, "z").unwrap().region, field_digest(&g, "z").unwrap().region);
        }
    }
}
