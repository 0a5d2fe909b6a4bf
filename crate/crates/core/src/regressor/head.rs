//! Three-layer perceptron head with hand-written backpropagation.

use num_traits::Float;

use super::RegressorError;
use crate::imagecore::SeededRng;

pub const HIDDEN1: usize = 512;
pub const HIDDEN2: usize = 256;

const INIT_STREAM: u64 = 0x494e_4954;

/// Weights of `in_dim -> hidden1 -> hidden2 -> 1`, row-major `[out x in]`.
#[derive(Clone, Debug)]
pub struct HeadParams<T = f32> {
    in_dim: usize,
    hidden: [usize; 2],
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
    pub w3: Vec<T>,
    pub b3: Vec<T>,
    revision: u64,
}

impl<T: PartialEq> PartialEq for HeadParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.in_dim == other.in_dim
            && self.hidden == other.hidden
            && self.w1 == other.w1
            && self.b1 == other.b1
            && self.w2 == other.w2
            && self.b2 == other.b2
            && self.w3 == other.w3
            && self.b3 == other.b3
    }
}

/// Names of the six tensors, in storage order.
pub const TENSOR_NAMES: [&str; 6] = [
    "layer1.weight",
    "layer1.bias",
    "layer2.weight",
    "layer2.bias",
    "layer3.weight",
    "layer3.bias",
];

impl<T: Float> HeadParams<T> {
    pub fn zeros(in_dim: usize) -> Self {
        Self::zeros_with_hidden(in_dim, [HIDDEN1, HIDDEN2])
    }

    pub fn zeros_with_hidden(in_dim: usize, hidden: [usize; 2]) -> Self {
        let [h1, h2] = hidden;
        let z = |n| vec![T::zero(); n];
        Self {
            in_dim,
            hidden,
            w1: z(h1 * in_dim),
            b1: z(h1),
            w2: z(h2 * h1),
            b2: z(h2),
            w3: z(h2),
            b3: z(1),
            revision: 0,
        }
    }

    /// Glorot-uniform weights (`+-sqrt(6 / (fan_in + fan_out))`), zero biases.
    pub fn init(in_dim: usize, hidden: [usize; 2], seed: u64) -> Self {
        let mut p = Self::zeros_with_hidden(in_dim, hidden);
        let mut rng = SeededRng::derive(seed, &[INIT_STREAM]);
        let [h1, h2] = hidden;
        for (w, fan_in, fan_out) in [(&mut p.w1, in_dim, h1), (&mut p.w2, h1, h2), (&mut p.w3, h2, 1)] {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in w.iter_mut() {
                *v = T::from(rng.uniform(-bound, bound)).unwrap();
            }
        }
        p
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn hidden(&self) -> [usize; 2] {
        self.hidden
    }

    /// Incremented by every optimiser step; traces record it.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub(crate) fn bump_revision(&mut self) {
        self.revision += 1;
    }

    pub fn tensors(&self) -> [&[T]; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }

    pub fn shapes(&self) -> [Vec<usize>; 6] {
        let [h1, h2] = self.hidden;
        [
            vec![h1, self.in_dim],
            vec![h1],
            vec![h2, h1],
            vec![h2],
            vec![1, h2],
            vec![1],
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(T::zero());
        }
    }

    pub fn cast<U: Float>(&self) -> HeadParams<U> {
        let c = |v: &Vec<T>| v.iter().map(|&x| U::from(x).unwrap()).collect();
        HeadParams {
            in_dim: self.in_dim,
            hidden: self.hidden,
            w1: c(&self.w1),
            b1: c(&self.b1),
            w2: c(&self.w2),
            b2: c(&self.b2),
            w3: c(&self.w3),
            b3: c(&self.b3),
            revision: self.revision,
        }
    }

    /// Builds params from the six tensors, checking their lengths.
    pub fn from_tensors(in_dim: usize, hidden: [usize; 2], tensors: [Vec<T>; 6]) -> Result<Self, RegressorError> {
        let mut p = Self::zeros_with_hidden(in_dim, hidden);
        for ((slot, t), name) in p.tensors_mut().into_iter().zip(tensors).zip(TENSOR_NAMES) {
            if slot.len() != t.len() {
                return Err(RegressorError::ShapeMismatch(name.into()));
            }
            *slot = t;
        }
        Ok(p)
    }
}

/// How the first hidden layer's dropout behaves during a forward pass.
pub enum Mode<'a> {
    Eval,
    /// Inverted dropout with drop probability `dropout`; the mask is drawn from `rng`.
    Train { rng: &'a mut SeededRng, dropout: f64 },
    /// Inverted dropout with a caller-supplied keep mask.
    FixedMask { keep: &'a [bool], dropout: f64 },
}

/// Activations retained for the backward pass.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    input: Vec<T>,
    z1: Vec<T>,
    /// Per-unit dropout multiplier: 0 or `1 / (1 - p)`; all ones in eval mode.
    scale1: Vec<T>,
    h1: Vec<T>,
    z2: Vec<T>,
    h2: Vec<T>,
    revision: u64,
}

impl<T: Float> Trace<T> {
    pub fn dropout_scale(&self) -> &[T] {
        &self.scale1
    }
}

fn relu<T: Float>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

fn affine<T: Float>(w: &[T], b: &[T], x: &[T]) -> Vec<T> {
    let n = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bo)| w[o * n..(o + 1) * n].iter().zip(x).fold(bo, |acc, (&wi, &xi)| acc + wi * xi))
        .collect()
}

/// Forward pass: `z1 = ReLU(W1 x + b1)` with dropout on `z1` in train modes,
/// `z2 = ReLU(W2 h1 + b2)`, linear output `W3 z2 + b3`.
pub fn head_forward<T: Float>(x: &[T], p: &HeadParams<T>, mode: Mode<'_>) -> Result<(T, Trace<T>), RegressorError> {
    if x.len() != p.in_dim {
        return Err(RegressorError::DimMismatch {
            expected: p.in_dim,
            got: x.len(),
        });
    }
    let [h1n, _] = p.hidden;
    let z1 = affine(&p.w1, &p.b1, x);
    let scale1: Vec<T> = match mode {
        Mode::Eval => vec![T::one(); h1n],
        Mode::Train { rng, dropout } => {
            let s = T::from(1.0 / (1.0 - dropout)).unwrap();
            (0..h1n)
                .map(|_| if rng.next_f64() >= dropout { s } else { T::zero() })
                .collect()
        }
        Mode::FixedMask { keep, dropout } => {
            if keep.len() != h1n {
                return Err(RegressorError::DimMismatch {
                    expected: h1n,
                    got: keep.len(),
                });
            }
            let s = T::from(1.0 / (1.0 - dropout)).unwrap();
            keep.iter().map(|&k| if k { s } else { T::zero() }).collect()
        }
    };
    let h1: Vec<T> = z1.iter().zip(&scale1).map(|(&z, &s)| relu(z) * s).collect();
    let z2 = affine(&p.w2, &p.b2, &h1);
    let h2: Vec<T> = z2.iter().map(|&z| relu(z)).collect();
    let out = affine(&p.w3, &p.b3, &h2)[0];
    Ok((
        out,
        Trace {
            input: x.to_vec(),
            z1,
            scale1,
            h1,
            z2,
            h2,
            revision: p.revision,
        },
    ))
}

/// Adds `d_pred * d(prediction)/d(theta)` into `grads` (64-bit accumulation).
pub fn accumulate_backward<T: Float>(
    trace: &Trace<T>,
    d_pred: f64,
    p: &HeadParams<T>,
    grads: &mut HeadParams<f64>,
) -> Result<(), RegressorError> {
    if trace.revision != p.revision || trace.input.len() != p.in_dim || trace.z1.len() != p.hidden[0] {
        return Err(RegressorError::StaleTrace);
    }
    if grads.in_dim != p.in_dim || grads.hidden != p.hidden {
        return Err(RegressorError::DimMismatch {
            expected: p.in_dim,
            got: grads.in_dim,
        });
    }
    if d_pred == 0.0 {
        return Ok(());
    }
    let f = |v: T| v.to_f64().unwrap();
    let [h1n, h2n] = p.hidden;
    let n = p.in_dim;

    grads.b3[0] += d_pred;
    let mut dz2 = vec![0.0f64; h2n];
    for j in 0..h2n {
        grads.w3[j] += d_pred * f(trace.h2[j]);
        if trace.z2[j] > T::zero() {
            dz2[j] = d_pred * f(p.w3[j]);
        }
    }

    let mut dh1 = vec![0.0f64; h1n];
    for (j, &g) in dz2.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        grads.b2[j] += g;
        let wrow = &p.w2[j * h1n..(j + 1) * h1n];
        let grow = &mut grads.w2[j * h1n..(j + 1) * h1n];
        for i in 0..h1n {
            grow[i] += g * f(trace.h1[i]);
            dh1[i] += g * f(wrow[i]);
        }
    }

    for i in 0..h1n {
        if trace.z1[i] <= T::zero() || trace.scale1[i] == T::zero() {
            continue;
        }
        let g = dh1[i] * f(trace.scale1[i]);
        grads.b1[i] += g;
        let grow = &mut grads.w1[i * n..(i + 1) * n];
        for (gk, &xk) in grow.iter_mut().zip(&trace.input) {
            *gk += g * f(xk);
        }
    }
    Ok(())
}

/// Gradient of `d_pred * prediction` with respect to every parameter.
pub fn head_backward<T: Float>(trace: &Trace<T>, d_pred: f64, p: &HeadParams<T>) -> Result<HeadParams<f64>, RegressorError> {
    let mut g = HeadParams::zeros_with_hidden(p.in_dim, p.hidden);
    accumulate_backward(trace, d_pred, p, &mut g)?;
    Ok(g)
}

/// Mean squared error and its gradient `2 (pred - target) / N`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), RegressorError> {
    if pred.is_empty() {
        return Err(RegressorError::EmptyBatch);
    }
    if pred.len() != target.len() {
        return Err(RegressorError::DimMismatch {
            expected: pred.len(),
            got: target.len(),
        });
    }
    let n = pred.len() as f64;
    let loss = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
    let grad = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect();
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_network() {
        let mut p = HeadParams::<f32>::zeros(8);
        p.b3[0] = 0.7;
        for x in [[0.0f32; 8], [3.0; 8]] {
            assert_eq!(head_forward(&x, &p, Mode::Eval).unwrap().0, 0.7);
        }
    }

    #[test]
    fn hand_traced_forward() {
        let mut p = HeadParams::<f64>::zeros(2);
        p.w1[0] = 1.0; // row 0 = [1, 0]
        p.w2[0] = 1.0; // row 0 = [1, 0, ...]
        p.w3[0] = 1.0;
        let (y, _) = head_forward(&[3.0, -1.0], &p, Mode::Eval).unwrap();
        assert_eq!(y, 3.0);
    }

    #[test]
    fn eval_is_deterministic() {
        let p = HeadParams::<f32>::init(16, [HIDDEN1, HIDDEN2], 3);
        let x: Vec<f32> = (0..16).map(|i| i as f32 / 7.0).collect();
        let a = head_forward(&x, &p, Mode::Eval).unwrap().0;
        let b = head_forward(&x, &p, Mode::Eval).unwrap().0;
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn dim_mismatch() {
        let p = HeadParams::<f32>::zeros(4);
        assert!(matches!(
            head_forward(&[1.0f32; 3], &p, Mode::Eval),
            Err(RegressorError::DimMismatch { expected: 4, got: 3 })
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let p = HeadParams::<f64>::init(5, [7, 6], 1);
        let (_, t) = head_forward(&[0.3, -0.2, 1.0, 0.5, 2.0], &p, Mode::Eval).unwrap();
        let g = head_backward(&t, 0.0, &p).unwrap();
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn dropped_unit_has_no_gradient() {
        let mut p = HeadParams::<f64>::init(3, [4, 3], 2);
        p.b1.fill(5.0); // every first-layer unit active
        let keep = [true, false, true, true];
        let (_, t) = head_forward(&[0.1, 0.2, 0.3], &p, Mode::FixedMask { keep: &keep, dropout: 0.5 }).unwrap();
        let g = head_backward(&t, 1.0, &p).unwrap();
        assert_eq!(g.b1[1], 0.0);
        assert!(g.w1[3..6].iter().all(|&v| v == 0.0));
        // column 1 of W2 sees a zero activation
        for j in 0..3 {
            assert_eq!(g.w2[j * 4 + 1], 0.0);
        }
    }

    #[test]
    fn stale_trace_rejected() {
        let mut p = HeadParams::<f64>::init(3, [4, 3], 2);
        let (_, t) = head_forward(&[0.1, 0.2, 0.3], &p, Mode::Eval).unwrap();
        p.bump_revision();
        assert!(matches!(head_backward(&t, 1.0, &p), Err(RegressorError::StaleTrace)));
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap().0, 0.0);
        assert_eq!(mse_loss(&[1.0, 3.0], &[0.0, 0.0]).unwrap().0, 5.0);
        assert_eq!(mse_loss(&[2.0], &[0.0]).unwrap().1, vec![4.0]);
        assert!(matches!(mse_loss(&[], &[]), Err(RegressorError::EmptyBatch)));
    }

    #[test]
    fn glorot_bounds() {
        let p = HeadParams::<f32>::init(16, [HIDDEN1, HIDDEN2], 9);
        let b1 = (6.0f32 / (16.0 + 512.0)).sqrt();
        assert!(p.w1.iter().all(|v| v.abs() <= b1));
        assert!(p.b1.iter().all(|&v| v == 0.0));
        assert_eq!(p.parameter_count(), 16 * 512 + 512 + 512 * 256 + 256 + 256 + 1);
    }
}
