//! Triplet margin loss on unit-normalized embeddings.

/// Loss value plus gradients with respect to the anchor, positive and negative.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletLossOutput {
    pub loss: f64,
    pub d_ap: f64,
    pub d_an: f64,
    pub grad_anchor: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_negative: Vec<f64>,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `max(0, |a - p| - |a - n| + margin)`.
///
/// The hinge uses subgradient 0 at the kink, and a zero distance contributes
/// a zero direction vector.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> TripletLossOutput {
    let dim = anchor.len();
    let d_ap = euclid(anchor, positive);
    let d_an = euclid(anchor, negative);
    let z = d_ap - d_an + margin;
    if z <= 0.0 {
        return TripletLossOutput {
            loss: 0.0,
            d_ap,
            d_an,
            grad_anchor: vec![0.0; dim],
            grad_positive: vec![0.0; dim],
            grad_negative: vec![0.0; dim],
        };
    }
    let unit = |a: &[f64], b: &[f64], d: f64| -> Vec<f64> {
        if d > 0.0 {
            a.iter().zip(b).map(|(x, y)| (x - y) / d).collect()
        } else {
            vec![0.0; dim]
        }
    };
    let u_ap = unit(anchor, positive, d_ap);
    let u_an = unit(anchor, negative, d_an);
    TripletLossOutput {
        loss: z,
        d_ap,
        d_an,
        grad_anchor: u_ap.iter().zip(&u_an).map(|(p, n)| p - n).collect(),
        grad_positive: u_ap.iter().map(|v| -v).collect(),
        grad_negative: u_an,
    }
}
