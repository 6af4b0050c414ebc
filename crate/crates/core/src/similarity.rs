//! Input-space similarity used to pick positives and negatives.
//!
//! Two metrics are provided:
//! * cosine-combined: `cos(dp_a, dp_b) / (1 + alpha * d(a, b))` where `dp` is the
//!   overall displacement and `d` defaults to ADE;
//! * fft-spectral: dot product of L2-normalized DFT magnitude spectra of the
//!   x and y coordinate sequences.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ade, displacement, NormalizedTrajectory, Point};

pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    #[serde(alias = "cosine")]
    CosineCombined,
    #[serde(alias = "fft")]
    FftSpectral,
}

impl Metric {
    pub fn short_name(self) -> &'static str {
        match self {
            Metric::CosineCombined => "cosine",
            Metric::FftSpectral => "fft",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" | "cosine-combined" => Ok(Metric::CosineCombined),
            "fft" | "fft-spectral" => Ok(Metric::FftSpectral),
            other => Err(Error::InvalidConfig(format!(
                "unknown metric `{other}` (expected cosine|fft)"
            ))),
        }
    }
}

/// Cosine-combined similarity with ADE as the distance term.
pub fn cosine_combined(a: &NormalizedTrajectory, b: &NormalizedTrajectory, alpha: f64) -> Result<f64> {
    cosine_combined_with(&a.points, &b.points, alpha, ade)
}

/// Cosine-combined similarity with an injectable point-sequence distance.
///
/// Returns `ZeroDisplacement { index }` with index 0 for `a` and 1 for `b`.
pub fn cosine_combined_with<D>(a: &[Point], b: &[Point], alpha: f64, dist: D) -> Result<f64>
where
    D: Fn(&[Point], &[Point]) -> Result<f64>,
{
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let da = displacement(a);
    let db = displacement(b);
    if da.is_zero() {
        return Err(Error::ZeroDisplacement { index: 0 });
    }
    if db.is_zero() {
        return Err(Error::ZeroDisplacement { index: 1 });
    }
    let cos = da.cosine(&db).expect("both displacements are nonzero");
    let d = dist(a, b)?;
    Ok(cos / (1.0 + alpha * d))
}

/// Magnitudes of DFT coefficients `0..=T/2` for the x axis followed by the y axis,
/// L2-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFeature {
    pub magnitudes: Vec<f64>,
    pub zero_spectrum: bool,
}

impl SpectralFeature {
    pub fn len(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitudes.is_empty()
    }
}

/// Direct-summation DFT of a real sequence, returning coefficients `0..=n/2` as
/// `(re, im)`. The twiddle angle uses `(k * t) mod n` so large products stay exact.
pub fn dft_half(signal: &[f64]) -> Vec<(f64, f64)> {
    let n = signal.len();
    let n_coef = n / 2 + 1;
    (0..n_coef)
        .map(|k| {
            let mut re = 0.0;
            let mut im = 0.0;
            for (t, &v) in signal.iter().enumerate() {
                let phase = TAU * ((k * t) % n) as f64 / n as f64;
                let (s, c) = phase.sin_cos();
                re += v * c;
                im -= v * s;
            }
            (re, im)
        })
        .collect()
}

pub fn spectral_feature_of(points: &[Point]) -> SpectralFeature {
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    let mut magnitudes: Vec<f64> = dft_half(&xs)
        .into_iter()
        .chain(dft_half(&ys))
        .map(|(re, im)| re.hypot(im))
        .collect();
    let norm = magnitudes.iter().map(|m| m * m).sum::<f64>().sqrt();
    let zero_spectrum = !(norm > 0.0);
    if !zero_spectrum {
        magnitudes.iter_mut().for_each(|m| *m /= norm);
    }
    SpectralFeature {
        magnitudes,
        zero_spectrum,
    }
}

pub fn spectral_feature(nt: &NormalizedTrajectory) -> SpectralFeature {
    spectral_feature_of(&nt.points)
}

/// Dot product of two spectral features; the result lies in `[0, 1]`.
pub fn spectral_similarity(fa: &SpectralFeature, fb: &SpectralFeature) -> Result<f64> {
    if fa.len() != fb.len() {
        return Err(Error::LengthMismatch {
            left: fa.len(),
            right: fb.len(),
        });
    }
    if fa.zero_spectrum {
        return Err(Error::ZeroSpectrum { index: 0 });
    }
    if fb.zero_spectrum {
        return Err(Error::ZeroSpectrum { index: 1 });
    }
    let dot: f64 = fa.magnitudes.iter().zip(&fb.magnitudes).map(|(a, b)| a * b).sum();
    Ok(dot.clamp(0.0, 1.0))
}

/// Dense `B x B` similarity scores.
///
/// `excluded[i]` marks trajectories whose similarity is undefined under the
/// metric (zero displacement / zero spectrum); their rows and columns hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub size: usize,
    pub values: Vec<f64>,
    pub metric: Metric,
    pub excluded: Vec<bool>,
}

impl SimilarityMatrix {
    /// Builds a matrix from explicit rows (no exclusions). Useful for tests and tooling.
    pub fn from_rows(rows: &[Vec<f64>], metric: Metric) -> Self {
        let size = rows.len();
        let values = rows.iter().flat_map(|r| r.iter().copied()).collect::<Vec<_>>();
        assert_eq!(values.len(), size * size, "similarity matrix must be square");
        Self {
            size,
            values,
            metric,
            excluded: vec![false; size],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.size..(i + 1) * self.size]
    }

    pub fn is_excluded(&self, i: usize) -> bool {
        self.excluded[i]
    }

    /// Defined off-diagonal entries.
    pub fn off_diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.size).flat_map(move |i| {
            (0..self.size)
                .filter(move |&j| j != i && !self.excluded[i] && !self.excluded[j])
                .map(move |j| self.get(i, j))
        })
    }

    /// Fraction of defined off-diagonal pairs scoring at least `threshold`.
    pub fn positive_rate(&self, threshold: f64) -> f64 {
        let (mut pos, mut total) = (0usize, 0usize);
        for s in self.off_diagonal() {
            total += 1;
            pos += (s >= threshold) as usize;
        }
        if total == 0 {
            0.0
        } else {
            pos as f64 / total as f64
        }
    }

    /// Threshold giving at most `rate` positive pairs, placed halfway
    /// between the first excluded score and the next larger one. Lets two
    /// metrics be compared at the same fraction of positives.
    pub fn threshold_for_rate(&self, rate: f64) -> f64 {
        let mut v: Vec<f64> = self.off_diagonal().collect();
        v.sort_by(|a, b| b.total_cmp(a));
        let allowed = (rate.clamp(0.0, 1.0) * v.len() as f64).floor() as usize;
        if allowed >= v.len() {
            return v.last().copied().unwrap_or(1.0);
        }
        let cut = v[allowed];
        match v[..allowed].iter().rev().find(|&&s| s > cut) {
            Some(&above) => 0.5 * (above + cut),
            None => 1.0,
        }
    }
}

/// Computes the full matrix; any undefined entry is an error naming the batch index.
pub fn similarity_matrix(batch: &[NormalizedTrajectory], metric: Metric, alpha: f64) -> Result<SimilarityMatrix> {
    let m = similarity_matrix_masked(batch, metric, alpha)?;
    if let Some(index) = m.excluded.iter().position(|&e| e) {
        return Err(match metric {
            Metric::CosineCombined => Error::ZeroDisplacement { index },
            Metric::FftSpectral => Error::ZeroSpectrum { index },
        });
    }
    Ok(m)
}

/// Like [`similarity_matrix`] but marks undefined members as excluded instead of failing.
pub fn similarity_matrix_masked(
    batch: &[NormalizedTrajectory],
    metric: Metric,
    alpha: f64,
) -> Result<SimilarityMatrix> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::InvalidConfig("similarity matrix of an empty batch".into()));
    }
    let len = batch[0].len();
    if let Some(bad) = batch.iter().position(|t| t.len() != len) {
        return Err(Error::LengthMismatch {
            left: len,
            right: batch[bad].len(),
        }
        .context(batch[bad].source_id.clone()));
    }
    let (excluded, upper): (Vec<bool>, Vec<Vec<f64>>) = match metric {
        Metric::CosineCombined => {
            let excluded: Vec<bool> = batch.iter().map(|t| displacement(&t.points).is_zero()).collect();
            let rows = (0..n)
                .into_par_iter()
                .map(|i| {
                    (i..n)
                        .map(|j| {
                            if excluded[i] || excluded[j] {
                                f64::NAN
                            } else if i == j {
                                1.0
                            } else {
                                cosine_combined(&batch[i], &batch[j], alpha).expect("checked above")
                            }
                        })
                        .collect()
                })
                .collect();
            (excluded, rows)
        }
        Metric::FftSpectral => {
            let features: Vec<SpectralFeature> = batch.par_iter().map(spectral_feature).collect();
            let excluded: Vec<bool> = features.iter().map(|f| f.zero_spectrum).collect();
            let rows = (0..n)
                .into_par_iter()
                .map(|i| {
                    (i..n)
                        .map(|j| {
                            if excluded[i] || excluded[j] {
                                f64::NAN
                            } else {
                                spectral_similarity(&features[i], &features[j]).expect("checked above")
                            }
                        })
                        .collect()
                })
                .collect();
            (excluded, rows)
        }
    };
    let mut values = vec![0.0; n * n];
    for (i, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + off;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    Ok(SimilarityMatrix {
        size: n,
        values,
        metric,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{normalize, Trajectory};

    fn nt(xy: &[(f64, f64)]) -> NormalizedTrajectory {
        NormalizedTrajectory::from_canonical("t", None, xy.iter().copied().map(Point::from).collect())
    }

    /// Textbook O(T^2) DFT with no index reduction, used as the reference.
    fn naive_dft(signal: &[f64]) -> Vec<(f64, f64)> {
        let n = signal.len() as f64;
        (0..signal.len())
            .map(|k| {
                signal.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &v)| {
                    let ang = -2.0 * std::f64::consts::PI * k as f64 * t as f64 / n;
                    (re + v * ang.cos(), im + v * ang.sin())
                })
            })
            .collect()
    }

    #[test]
    fn cosine_combined_fixtures() {
        let a = nt(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        assert_eq!(cosine_combined(&a, &a, 0.5).unwrap(), 1.0);
        // mirrored west-going line: ade = (0 + 2 + 4) / 3 = 2
        let b = nt(&[(0.0, 0.0), (-1.0, 0.0), (-2.0, 0.0)]);
        assert!((cosine_combined(&a, &b, 0.5).unwrap() + 0.5).abs() < 1e-15);
        let e = nt(&[(0.0, 0.0), (1.0, 0.0)]);
        let n = nt(&[(0.0, 0.0), (0.0, 1.0)]);
        assert_eq!(cosine_combined(&e, &n, 0.5).unwrap(), 0.0);
        let z = nt(&[(0.0, 0.0), (1.0, 0.0), (0.0, 0.0)]);
        assert!(matches!(
            cosine_combined(&e.clone(), &nt(&[(0.0, 0.0), (0.0, 0.0)]), 0.5),
            Err(Error::ZeroDisplacement { index: 1 })
        ));
        assert!(matches!(
            cosine_combined(&z, &a, 0.5),
            Err(Error::ZeroDisplacement { index: 0 })
        ));
    }

    #[test]
    fn cosine_combined_accepts_custom_distance() {
        let a = nt(&[(0.0, 0.0), (1.0, 0.0)]);
        let b = nt(&[(0.0, 0.0), (2.0, 0.0)]);
        let s = cosine_combined_with(&a.points, &b.points, 1.0, |_, _| Ok(3.0)).unwrap();
        assert_eq!(s, 0.25);
    }

    #[test]
    fn heading_only_difference_gives_cos_theta() {
        for deg in [0.0f64, 17.0, 45.0, 90.0, 133.0, 180.0] {
            let th = deg.to_radians();
            let a: Vec<Point> = (0..5).map(|t| Point::new(t as f64, 0.0)).collect();
            let b: Vec<Point> = (0..5)
                .map(|t| Point::new(t as f64 * th.cos(), t as f64 * th.sin()))
                .collect();
            let alpha = 0.5;
            let s = cosine_combined_with(&a, &b, alpha, ade).unwrap();
            let factored = s * (1.0 + alpha * ade(&a, &b).unwrap());
            assert!((factored - th.cos()).abs() < 1e-9, "{deg}: {factored}");
        }
    }

    #[test]
    fn dft_matches_naive_reference() {
        let mut seed = 7u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) * 20.0 - 10.0
        };
        for n in [2usize, 3, 8, 60] {
            let sig: Vec<f64> = (0..n).map(|_| next()).collect();
            let fast = dft_half(&sig);
            let slow = naive_dft(&sig);
            for (k, (a, b)) in fast.iter().zip(&slow).enumerate() {
                assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn spectral_feature_length_and_dc() {
        let pts: Vec<Point> = (0..60).map(|t| Point::new(t as f64 * 0.3, 0.0)).collect();
        assert_eq!(spectral_feature_of(&pts).len(), 62);

        let constant: Vec<Point> = (0..10).map(|_| Point::new(2.5, 0.0)).collect();
        let f = spectral_feature_of(&constant);
        assert!((f.magnitudes[0] - 1.0).abs() < 1e-12);
        assert!(f.magnitudes[1..].iter().all(|m| m.abs() < 1e-12));
    }

    #[test]
    fn spectral_feature_pure_cosine_hits_bin_one() {
        let t_len = 60;
        let pts: Vec<Point> = (0..t_len)
            .map(|t| Point::new((TAU * t as f64 / t_len as f64).cos(), 0.0))
            .collect();
        let f = spectral_feature_of(&pts);
        let (argmax, _) = f
            .magnitudes
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |best, (i, &m)| if m > best.1 { (i, m) } else { best });
        assert_eq!(argmax, 1);
        assert!((f.magnitudes[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_input_sets_flag() {
        let f = spectral_feature_of(&[Point::ORIGIN; 4]);
        assert!(f.zero_spectrum);
        assert!(matches!(
            spectral_similarity(&f, &f),
            Err(Error::ZeroSpectrum { index: 0 })
        ));
    }

    #[test]
    fn spectral_similarity_fixtures() {
        let a = SpectralFeature {
            magnitudes: vec![1.0, 0.0],
            zero_spectrum: false,
        };
        let b = SpectralFeature {
            magnitudes: vec![0.0, 1.0],
            zero_spectrum: false,
        };
        assert_eq!(spectral_similarity(&a, &a).unwrap(), 1.0);
        assert_eq!(spectral_similarity(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn scaling_leaves_spectral_feature_unchanged() {
        let pts: Vec<Point> = (0..20).map(|t| Point::new(t as f64, (t as f64 * 0.3).sin())).collect();
        let scaled: Vec<Point> = pts.iter().map(|p| Point::new(p.x * 3.7, p.y * 3.7)).collect();
        let a = spectral_feature_of(&pts);
        let b = spectral_feature_of(&scaled);
        for (x, y) in a.magnitudes.iter().zip(&b.magnitudes) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn fft_cannot_tell_mirrored_turns_apart() {
        let left: Vec<Point> = (0..30)
            .map(|t| {
                let th = t as f64 * 0.05;
                Point::new(th.sin() * 10.0, (1.0 - th.cos()) * 10.0)
            })
            .collect();
        let right: Vec<Point> = left.iter().map(|p| Point::new(p.x, -p.y)).collect();
        let fl = spectral_feature_of(&left);
        let fr = spectral_feature_of(&right);
        assert!((spectral_similarity(&fl, &fr).unwrap() - 1.0).abs() < 1e-12);
        let cl = cosine_combined_with(&left, &right, 0.5, ade).unwrap();
        assert!(cl < 0.9);
    }

    #[test]
    fn matrix_small_cases() {
        let a = nt(&[(0.0, 0.0), (1.0, 0.5)]);
        for metric in [Metric::CosineCombined, Metric::FftSpectral] {
            let m = similarity_matrix(std::slice::from_ref(&a), metric, 0.5).unwrap();
            assert!((m.get(0, 0) - 1.0).abs() < 1e-12);
            let m = similarity_matrix(&[a.clone(), a.clone()], metric, 0.5).unwrap();
            assert!(m.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn matrix_reports_offending_index() {
        let a = nt(&[(0.0, 0.0), (1.0, 0.0)]);
        let z = nt(&[(0.0, 0.0), (0.0, 0.0)]);
        let err = similarity_matrix(&[a.clone(), z.clone()], Metric::CosineCombined, 0.5).unwrap_err();
        assert!(matches!(err, Error::ZeroDisplacement { index: 1 }));
        let m = similarity_matrix_masked(&[a, z], Metric::CosineCombined, 0.5).unwrap();
        assert_eq!(m.excluded, vec![false, true]);
        assert!(m.get(0, 1).is_nan());
    }

    #[test]
    fn matrix_equals_pairwise_loop() {
        let trajs: Vec<NormalizedTrajectory> = (0..8)
            .map(|i| {
                let xy: Vec<(f64, f64)> = (0..12)
                    .map(|t| {
                        let t = t as f64;
                        (t * (1.0 + i as f64 * 0.1), (t * 0.3 + i as f64).sin() * i as f64)
                    })
                    .collect();
                normalize(&Trajectory::from_xy(format!("t{i}"), &xy).unwrap()).unwrap()
            })
            .collect();
        let cos = similarity_matrix(&trajs, Metric::CosineCombined, 0.5).unwrap();
        let fft = similarity_matrix(&trajs, Metric::FftSpectral, 0.5).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let c = cosine_combined(&trajs[i], &trajs[j], 0.5).unwrap();
                let f = spectral_similarity(&spectral_feature(&trajs[i]), &spectral_feature(&trajs[j])).unwrap();
                assert!((cos.get(i, j) - c).abs() <= 1e-9);
                assert!((fft.get(i, j) - f).abs() <= 1e-9);
                assert_eq!(cos.get(i, j), cos.get(j, i));
            }
        }
    }
}
