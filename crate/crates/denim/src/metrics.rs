//! Evaluation metrics: MSE (8-bit scaled), mean angular error in degrees,
//! and mean per-pixel CIEDE2000, with mean/Q1/Q2/Q3 aggregation across an
//! image set.

use crate::color::{de2000_lab, srgb_to_lab};
use crate::error::{Error, Result};
use crate::image::CanonicalImage;

/// Per-image metric values.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMetrics {
    pub name: String,
    pub mse: f64,
    pub mae_degrees: f64,
    pub de2000: f64,
}

/// Mean and linear-interpolation quartiles of one metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

/// Per-image metrics plus aggregates over the set.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub per_image: Vec<ImageMetrics>,
    pub mse: Aggregate,
    pub mae_degrees: Aggregate,
    pub de2000: Aggregate,
}

fn check_dims(a: &CanonicalImage, b: &CanonicalImage) -> Result<()> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::Dimension {
            context: "metric images",
            expected: format!("{}x{}", a.height, a.width),
            got: format!("{}x{}", b.height, b.width),
        });
    }
    Ok(())
}

/// Mean squared error over all pixels and channels, computed on 8-bit-scaled
/// values (x255) so magnitudes are comparable to the usual AWB benchmarks.
pub fn mse_image(a: &CanonicalImage, b: &CanonicalImage) -> Result<f64> {
    check_dims(a, b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let d = 255.0 * (x - y);
            d * d
        })
        .sum();
    Ok(sum / a.data.len() as f64)
}

/// Mean angular error in degrees between per-pixel RGB vectors. Pixels where
/// either vector has norm below 1e-12 contribute 0 degrees.
pub fn mae_image(a: &CanonicalImage, b: &CanonicalImage) -> Result<f64> {
    check_dims(a, b)?;
    let pixels = a.height * a.width;
    let mut sum = 0.0;
    for p in 0..pixels {
        let pa = &a.data[p * 3..p * 3 + 3];
        let pb = &b.data[p * 3..p * 3 + 3];
        let na = (pa[0] * pa[0] + pa[1] * pa[1] + pa[2] * pa[2]).sqrt();
        let nb = (pb[0] * pb[0] + pb[1] * pb[1] + pb[2] * pb[2]).sqrt();
        if na < 1e-12 || nb < 1e-12 {
            continue;
        }
        let dot = pa[0] * pb[0] + pa[1] * pb[1] + pa[2] * pb[2];
        // atan2 of the cross-product norm against the dot product is stable
        // near 0 and 180 degrees and exactly zero for identical directions.
        let cx = pa[1] * pb[2] - pa[2] * pb[1];
        let cy = pa[2] * pb[0] - pa[0] * pb[2];
        let cz = pa[0] * pb[1] - pa[1] * pb[0];
        let cross = (cx * cx + cy * cy + cz * cz).sqrt();
        sum += cross.atan2(dot).to_degrees();
    }
    Ok(sum / pixels as f64)
}

/// Mean per-pixel CIEDE2000, treating inputs as gamma-encoded sRGB in [0,1].
pub fn de2000_image(a: &CanonicalImage, b: &CanonicalImage) -> Result<f64> {
    check_dims(a, b)?;
    let pixels = a.height * a.width;
    let mut sum = 0.0;
    for p in 0..pixels {
        let pa = &a.data[p * 3..p * 3 + 3];
        let pb = &b.data[p * 3..p * 3 + 3];
        let lab_a = srgb_to_lab([pa[0], pa[1], pa[2]]);
        let lab_b = srgb_to_lab([pb[0], pb[1], pb[2]]);
        sum += de2000_lab(lab_a, lab_b);
    }
    Ok(sum / pixels as f64)
}

/// Mean plus type-7 (linear interpolation) quartiles at ranks 0.25/0.5/0.75.
pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantile = |q: f64| -> f64 {
        let h = (sorted.len() - 1) as f64 * q;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    };
    Ok(Aggregate {
        mean,
        q1: quantile(0.25),
        q2: quantile(0.5),
        q3: quantile(0.75),
    })
}

/// Compute all three metrics for matched (prediction, ground-truth) pairs
/// and aggregate across the set.
pub fn report(pairs: &[(String, &CanonicalImage, &CanonicalImage)]) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut per_image = Vec::with_capacity(pairs.len());
    for (name, pred, gt) in pairs {
        per_image.push(ImageMetrics {
            name: name.clone(),
            mse: mse_image(pred, gt)?,
            mae_degrees: mae_image(pred, gt)?,
            de2000: de2000_image(pred, gt)?,
        });
    }
    let col = |f: fn(&ImageMetrics) -> f64| -> Vec<f64> { per_image.iter().map(f).collect() };
    Ok(MetricsReport {
        mse: aggregate(&col(|m| m.mse))?,
        mae_degrees: aggregate(&col(|m| m.mae_degrees))?,
        de2000: aggregate(&col(|m| m.de2000))?,
        per_image,
    })
}

impl MetricsReport {
    /// CSV body: one line per image plus a summary block.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,mse,mae_deg,de2000\n");
        for m in &self.per_image {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6}\n",
                m.name, m.mse, m.mae_degrees, m.de2000
            ));
        }
        out.push_str("\n");
        out.push_str("metric,mean,q1,q2,q3\n");
        for (name, a) in [
            ("mse", &self.mse),
            ("mae_deg", &self.mae_degrees),
            ("de2000", &self.de2000),
        ] {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                name, a.mean, a.q1, a.q2, a.q3
            ));
        }
        out
    }

    /// Machine-readable key=value summary of the aggregates.
    pub fn to_summary(&self) -> String {
        let mut out = String::new();
        for (name, a) in [
            ("mse", &self.mse),
            ("mae_deg", &self.mae_degrees),
            ("de2000", &self.de2000),
        ] {
            out.push_str(&format!(
                "{name}.mean={}\n{name}.q1={}\n{name}.q2={}\n{name}.q3={}\n",
                a.mean, a.q1, a.q2, a.q3
            ));
        }
        out
    }
}
