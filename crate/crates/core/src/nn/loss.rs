use super::spec::LossKind;
use super::tensor::Tensor;

/// Supervision for one example.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    /// Per-pixel {0, 1} targets, same shape as the network output.
    Mask(Tensor),
    /// Real-valued regression target, same shape as the network output.
    Value(Tensor),
}

/// One training example.
#[derive(Debug, Clone)]
pub struct Example {
    pub input: Tensor,
    pub target: Target,
}

const PROB_FLOOR: f64 = 1e-300;

impl LossKind {
    /// Loss value and dL/d(output) for one example. Class losses expect a
    /// probability vector; the mask loss expects per-pixel probabilities.
    pub fn evaluate(&self, output: &Tensor, target: &Target) -> (f64, Tensor) {
        match (self, target) {
            (LossKind::CrossEntropy, &Target::Class(t)) => class_loss(output, t, 1.0),
            (LossKind::WeightedCrossEntropy { class_weights }, &Target::Class(t)) => {
                class_loss(output, t, class_weights[t])
            }
            (LossKind::PixelwiseBinaryCrossEntropy, Target::Mask(mask)) => {
                assert_eq!(output.len(), mask.len(), "mask/output size mismatch");
                let n = output.len() as f64;
                let mut loss = CompensatedSum::default();
                let grad = output
                    .data()
                    .iter()
                    .zip(mask.data())
                    .map(|(&p, &t)| {
                        let p = p.clamp(1e-12, 1.0 - 1e-12);
                        loss.add(-(t * p.ln() + (1.0 - t) * (1.0 - p).ln()));
                        (-t / p + (1.0 - t) / (1.0 - p)) / n
                    })
                    .collect();
                (loss.value() / n, Tensor::new(output.shape().to_vec(), grad))
            }
            (LossKind::SquaredError, Target::Value(y)) => {
                assert_eq!(output.len(), y.len(), "value/output size mismatch");
                let n = output.len() as f64;
                let mut loss = CompensatedSum::default();
                let grad = output
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&p, &t)| {
                        loss.add(0.5 * (p - t) * (p - t));
                        (p - t) / n
                    })
                    .collect();
                (loss.value() / n, Tensor::new(output.shape().to_vec(), grad))
            }
            (loss, target) => panic!("loss {loss:?} cannot score target {target:?}"),
        }
    }
}

/// Neumaier summation; per-pixel losses are averaged over thousands of
/// terms and finite-difference checks resolve differences near 1e-12.
#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

fn class_loss(output: &Tensor, class: usize, weight: f64) -> (f64, Tensor) {
    let p = output.data()[class].max(PROB_FLOOR);
    let mut grad = Tensor::zeros(output.shape());
    grad.data_mut()[class] = -weight / p;
    (-weight * p.ln(), grad)
}

/// Inverse-frequency weights `n / (k * n_c)`; equal counts give all ones.
pub fn inverse_frequency_weights(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    let k = counts.len() as f64;
    counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { total as f64 / (k * c as f64) })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_counts_give_unit_weights() {
        assert_eq!(inverse_frequency_weights(&[10, 10]), vec![1.0, 1.0]);
    }

    #[test]
    fn minority_weight_ratio() {
        let w = inverse_frequency_weights(&[95, 49]);
        assert!((w[1] / w[0] - 95.0 / 49.0).abs() < 1e-12);
    }

    #[test]
    fn bce_gradient_through_sigmoid_is_p_minus_t() {
        let p = Tensor::from_vec(vec![0.2, 0.9]);
        let t = Target::Mask(Tensor::from_vec(vec![1.0, 0.0]));
        let (_, g) = LossKind::PixelwiseBinaryCrossEntropy.evaluate(&p, &t);
        // chain through sigmoid: dL/dz = g * p(1-p) = (p - t) / n
        let dz: Vec<f64> = g.data().iter().zip(p.data()).map(|(g, p)| g * p * (1.0 - p)).collect();
        assert!((dz[0] - (0.2 - 1.0) / 2.0).abs() < 1e-12);
        assert!((dz[1] - 0.9 / 2.0).abs() < 1e-12);
    }
}
