//! Small multi-label classifiers over flat parameter vectors.
//!
//! Two architectures: a linear classifier (`hidden_dim == 0`) and a
//! one-hidden-layer tanh MLP. Parameters live in a single `Vec<f64>` so the
//! federated layer can average, perturb and correct them coordinate-wise
//! without knowing the architecture.
//!
//! Layout of `values`:
//! - linear: `W (C x d, row-major) | b (C)`
//! - MLP:    `W1 (h x d, row-major) | b1 (h) | W2 (C x h, row-major) | b2 (C)`
//!
//! All arithmetic is f64 and all sums run in fixed index order, so results
//! are bit-identical across runs and platforms.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::seed::stream_rng;

/// Architecture descriptor: input dim `d`, hidden dim `h` (0 = linear),
/// class count `C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub classes: usize,
}

impl ArchDescriptor {
    pub fn new(input_dim: usize, hidden_dim: usize, classes: usize) -> Result<Self> {
        if input_dim == 0 || classes == 0 {
            return Err(CoreError::InvalidArgument(format!(
                "arch requires d >= 1 and C >= 1, got d={input_dim}, C={classes}"
            )));
        }
        Ok(Self { input_dim, hidden_dim, classes })
    }

    /// Number of parameters the architecture implies.
    pub fn param_count(&self) -> usize {
        let (d, h, c) = (self.input_dim, self.hidden_dim, self.classes);
        if h == 0 {
            d * c + c
        } else {
            d * h + h + h * c + c
        }
    }
}

/// One labelled example: a feature vector of length `d` and a binary label
/// vector of length `C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub labels: Vec<u8>,
}

impl Example {
    pub fn new(features: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&v| v > 1) {
            return Err(CoreError::InvalidArgument(format!(
                "labels must be 0 or 1, got {bad}"
            )));
        }
        Ok(Self { features, labels })
    }
}

/// Flat parameter vector plus its architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub values: Vec<f64>,
    pub arch: ArchDescriptor,
}

impl ModelParams {
    /// Wraps an existing vector, checking the length against the arch.
    pub fn new(values: Vec<f64>, arch: ArchDescriptor) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(CoreError::DimensionMismatch {
                context: "ModelParams::new",
                expected: arch.param_count(),
                actual: values.len(),
            });
        }
        Ok(Self { values, arch })
    }

    /// All parameters zero.
    pub fn zeros(arch: ArchDescriptor) -> Self {
        Self { values: vec![0.0; arch.param_count()], arch }
    }

    /// Random initialization, uniform in [-1/sqrt(d), 1/sqrt(d)].
    pub fn init_uniform(arch: ArchDescriptor, seed: u64) -> Self {
        let bound = 1.0 / (arch.input_dim as f64).sqrt();
        let mut rng = stream_rng(seed, "model_init", &[]);
        let values = (0..arch.param_count())
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self { values, arch }
    }

    /// Checks both invariants: length matches the arch and every value is
    /// finite.
    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.arch.param_count() {
            return Err(CoreError::DimensionMismatch {
                context: "ModelParams::validate",
                expected: self.arch.param_count(),
                actual: self.values.len(),
            });
        }
        if !self.values.iter().all(|v| v.is_finite()) {
            return Err(CoreError::InvalidArgument(
                "non-finite model parameter".to_string(),
            ));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

fn check_features(params: &ModelParams, features: &[f64]) -> Result<()> {
    if features.len() != params.arch.input_dim {
        return Err(CoreError::DimensionMismatch {
            context: "forward",
            expected: params.arch.input_dim,
            actual: features.len(),
        });
    }
    if params.values.len() != params.arch.param_count() {
        return Err(CoreError::DimensionMismatch {
            context: "forward",
            expected: params.arch.param_count(),
            actual: params.values.len(),
        });
    }
    Ok(())
}

/// Computes the `C` logits for one feature vector.
///
/// Hidden activation is tanh when `hidden_dim > 0`.
pub fn forward(params: &ModelParams, features: &[f64]) -> Result<Vec<f64>> {
    check_features(params, features)?;
    let ArchDescriptor { input_dim: d, hidden_dim: h, classes: c } = params.arch;
    let v = &params.values;

    if h == 0 {
        let mut logits = Vec::with_capacity(c);
        for cls in 0..c {
            let row = &v[cls * d..(cls + 1) * d];
            let mut z = v[c * d + cls];
            for i in 0..d {
                z += row[i] * features[i];
            }
            logits.push(z);
        }
        return Ok(logits);
    }

    let (w1, rest) = v.split_at(h * d);
    let (b1, rest) = rest.split_at(h);
    let (w2, b2) = rest.split_at(c * h);

    let mut hidden = Vec::with_capacity(h);
    for j in 0..h {
        let mut u = b1[j];
        let row = &w1[j * d..(j + 1) * d];
        for i in 0..d {
            u += row[i] * features[i];
        }
        hidden.push(u.tanh());
    }
    let mut logits = Vec::with_capacity(c);
    for cls in 0..c {
        let mut z = b2[cls];
        let row = &w2[cls * h..(cls + 1) * h];
        for j in 0..h {
            z += row[j] * hidden[j];
        }
        logits.push(z);
    }
    Ok(logits)
}

/// Numerically stable sigmoid.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy with logits, averaged over classes.
///
/// Uses the stable form `max(z,0) - z*y + ln(1 + exp(-|z|))` per class, so
/// saturated logits never produce NaN or overflow.
pub fn bce_with_logits(logits: &[f64], labels: &[u8]) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(CoreError::DimensionMismatch {
            context: "bce_with_logits",
            expected: logits.len(),
            actual: labels.len(),
        });
    }
    if logits.is_empty() {
        return Err(CoreError::EmptyInput("bce_with_logits"));
    }
    let mut total = 0.0;
    for (z, &y) in logits.iter().zip(labels) {
        total += z.max(0.0) - z * f64::from(y) + (-z.abs()).exp().ln_1p();
    }
    Ok(total / logits.len() as f64)
}

/// Mean BCE-with-logits loss over a client's examples.
pub fn local_loss(params: &ModelParams, data: &[Example]) -> Result<f64> {
    if data.is_empty() {
        return Err(CoreError::EmptyInput("local_loss"));
    }
    let mut total = 0.0;
    for ex in data {
        let logits = forward(params, &ex.features)?;
        total += bce_with_logits(&logits, &ex.labels)?;
    }
    Ok(total / data.len() as f64)
}

/// Analytic gradient of [`local_loss`] with respect to every parameter.
///
/// Per-class logit gradient is `(sigmoid(z_c) - y_c) / C`; the rest is plain
/// backprop through the tanh layer when present. Accumulation runs in
/// example index order.
pub fn local_gradient(params: &ModelParams, data: &[Example]) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(CoreError::EmptyInput("local_gradient"));
    }
    let ArchDescriptor { input_dim: d, hidden_dim: h, classes: c } = params.arch;
    let mut grad = vec![0.0; params.values.len()];

    for ex in data {
        check_features(params, &ex.features)?;
        if ex.labels.len() != c {
            return Err(CoreError::DimensionMismatch {
                context: "local_gradient",
                expected: c,
                actual: ex.labels.len(),
            });
        }
        let x = &ex.features;

        if h == 0 {
            let logits = forward(params, x)?;
            for cls in 0..c {
                let dz = (sigmoid(logits[cls]) - f64::from(ex.labels[cls])) / c as f64;
                let row = &mut grad[cls * d..(cls + 1) * d];
                for i in 0..d {
                    row[i] += dz * x[i];
                }
                grad[c * d + cls] += dz;
            }
        } else {
            let v = &params.values;
            let (w1, rest) = v.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, _b2) = rest.split_at(c * h);

            let mut hidden = Vec::with_capacity(h);
            for j in 0..h {
                let mut u = b1[j];
                for i in 0..d {
                    u += w1[j * d + i] * x[i];
                }
                hidden.push(u.tanh());
            }
            let logits = forward(params, x)?;

            let mut dz = Vec::with_capacity(c);
            for cls in 0..c {
                dz.push((sigmoid(logits[cls]) - f64::from(ex.labels[cls])) / c as f64);
            }

            let w1_len = h * d;
            let w2_off = w1_len + h;
            let b2_off = w2_off + c * h;
            for cls in 0..c {
                for j in 0..h {
                    grad[w2_off + cls * h + j] += dz[cls] * hidden[j];
                }
                grad[b2_off + cls] += dz[cls];
            }
            for j in 0..h {
                let mut da = 0.0;
                for cls in 0..c {
                    da += w2[cls * h + j] * dz[cls];
                }
                let du = da * (1.0 - hidden[j] * hidden[j]);
                for i in 0..d {
                    grad[j * d + i] += du * x[i];
                }
                grad[w1_len + j] += du;
            }
        }
    }

    let n = data.len() as f64;
    for g in &mut grad {
        *g /= n;
    }
    Ok(grad)
}

/// Thresholded prediction: class `c` is 1 iff `logit_c >= 0`
/// (sigmoid >= 0.5; ties resolve to 1).
pub fn predict(params: &ModelParams, features: &[f64]) -> Result<Vec<u8>> {
    let logits = forward(params, features)?;
    Ok(logits.iter().map(|&z| u8::from(z >= 0.0)).collect())
}

/// Builds random parameters and data from `seed` and returns the maximum
/// relative deviation between [`local_gradient`] and central finite
/// differences (step 1e-5). Deviation is measured as
/// `|a - n| / max(1, |a|, |n|)`.
pub fn grad_check(arch: ArchDescriptor, seed: u64) -> f64 {
    const STEP: f64 = 1e-5;
    const N_EXAMPLES: usize = 8;

    let params = ModelParams::init_uniform(arch, seed);
    let mut rng = stream_rng(seed, "grad_check_data", &[]);
    let data: Vec<Example> = (0..N_EXAMPLES)
        .map(|_| {
            let features: Vec<f64> = (0..arch.input_dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let labels: Vec<u8> = (0..arch.classes)
                .map(|_| u8::from(rng.random_bool(0.5)))
                .collect();
            Example { features, labels }
        })
        .collect();

    let analytic = local_gradient(&params, &data).expect("valid inputs by construction");
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for i in 0..probe.values.len() {
        let orig = probe.values[i];
        probe.values[i] = orig + STEP;
        let plus = local_loss(&probe, &data).expect("valid inputs by construction");
        probe.values[i] = orig - STEP;
        let minus = local_loss(&probe, &data).expect("valid inputs by construction");
        probe.values[i] = orig;
        let numeric = (plus - minus) / (2.0 * STEP);
        let denom = 1.0f64.max(analytic[i].abs()).max(numeric.abs());
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;
    use rand_distr::{Distribution, StandardNormal};

    fn linear_arch(d: usize, c: usize) -> ArchDescriptor {
        ArchDescriptor::new(d, 0, c).unwrap()
    }

    #[test]
    fn zero_params_zero_logits() {
        let params = ModelParams::zeros(linear_arch(3, 4));
        let logits = forward(&params, &[0.7, -1.1, 2.2]).unwrap();
        assert_eq!(logits, vec![0.0; 4]);
    }

    #[test]
    fn linear_dot_product() {
        // d=2, C=1, weights [1,1], bias [0], features [2,3] -> logit 5
        let params = ModelParams::new(vec![1.0, 1.0, 0.0], linear_arch(2, 1)).unwrap();
        let logits = forward(&params, &[2.0, 3.0]).unwrap();
        assert_eq!(logits, vec![5.0]);
    }

    #[test]
    fn mlp_forward_matches_hand_computed() {
        // d=2, h=2, C=2; logits computed independently with a 40-digit
        // calculator for these exact parameter values.
        let values = vec![
            0.3, -0.7, // W1 row 0
            0.1, 0.5, // W1 row 1
            0.05, -0.25, // b1
            0.9, -0.2, // W2 row 0
            -0.4, 0.6, // W2 row 1
            0.1, 0.0, // b2
        ];
        let arch = ArchDescriptor::new(2, 2, 2).unwrap();
        let params = ModelParams::new(values, arch).unwrap();
        let logits = forward(&params, &[0.8, -1.2]).unwrap();
        assert!((logits[0] - 0.9593032259780666).abs() < 1e-15);
        assert!((logits[1] - -0.7125653751049325).abs() < 1e-15);
    }

    // Independent naive forward: separate code path from `forward`.
    fn naive_mlp_forward(params: &ModelParams, x: &[f64]) -> Vec<f64> {
        let ArchDescriptor { input_dim: d, hidden_dim: h, classes: c } = params.arch;
        let v = &params.values;
        let mut logits = vec![0.0; c];
        for cls in 0..c {
            let mut z = v[h * d + h + c * h + cls];
            for j in 0..h {
                let mut u = v[h * d + j];
                for i in 0..d {
                    u += v[j * d + i] * x[i];
                }
                z += v[h * d + h + cls * h + j] * u.tanh();
            }
            logits[cls] = z;
        }
        logits
    }

    #[test]
    fn mlp_forward_matches_naive_recomputation() {
        let arch = ArchDescriptor::new(5, 3, 4).unwrap();
        let params = ModelParams::init_uniform(arch, 99);
        let mut rng = stream_rng(99, "mlp_fwd_test", &[]);
        for _ in 0..20 {
            let x: Vec<f64> = (0..5).map(|_| StandardNormal.sample(&mut rng)).collect();
            let got = forward(&params, &x).unwrap();
            let want = naive_mlp_forward(&params, &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let params = ModelParams::zeros(linear_arch(3, 2));
        assert!(matches!(
            forward(&params, &[1.0, 2.0]),
            Err(CoreError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn bce_zero_logit_zero_label_is_ln2() {
        let loss = bce_with_logits(&[0.0], &[0]).unwrap();
        assert!((loss - 0.6931471805599453).abs() < 1e-15);
    }

    #[test]
    fn bce_saturated_correct_logit_is_tiny() {
        let loss = bce_with_logits(&[50.0], &[1]).unwrap();
        assert!(loss < 1e-20);
        assert!(loss >= 0.0);
    }

    #[test]
    fn bce_matches_independent_softplus_values() {
        // mean(softplus(-1), softplus(-2)) computed with mpmath at 40 digits
        let loss = bce_with_logits(&[1.0, -2.0], &[1, 0]).unwrap();
        assert!((loss - 0.22009484928059766).abs() < 1e-15);
    }

    #[test]
    fn bce_never_nan_for_extreme_logits() {
        for &z in &[-1e8, -500.0, 0.0, 500.0, 1e8] {
            for &y in &[0u8, 1u8] {
                let loss = bce_with_logits(&[z], &[y]).unwrap();
                assert!(loss.is_finite() && loss >= 0.0, "z={z} y={y} loss={loss}");
            }
        }
    }

    #[test]
    fn bce_rejects_length_mismatch() {
        assert!(matches!(
            bce_with_logits(&[0.0, 1.0], &[0]),
            Err(CoreError::DimensionMismatch { .. })
        ));
    }

    fn random_examples(d: usize, c: usize, n: usize, seed: u64) -> Vec<Example> {
        let mut rng = stream_rng(seed, "model_test_data", &[]);
        (0..n)
            .map(|_| Example {
                features: (0..d).map(|_| StandardNormal.sample(&mut rng)).collect(),
                labels: (0..c).map(|_| u8::from(rng.random_bool(0.5))).collect(),
            })
            .collect()
    }

    #[test]
    fn local_loss_of_single_example_equals_bce() {
        let arch = linear_arch(4, 3);
        let params = ModelParams::init_uniform(arch, 5);
        let data = random_examples(4, 3, 1, 5);
        let logits = forward(&params, &data[0].features).unwrap();
        let expected = bce_with_logits(&logits, &data[0].labels).unwrap();
        assert_eq!(local_loss(&params, &data).unwrap(), expected);
    }

    #[test]
    fn local_loss_mean_invariance_for_duplicates() {
        let arch = linear_arch(4, 3);
        let params = ModelParams::init_uniform(arch, 6);
        let one = random_examples(4, 3, 1, 6);
        let two = vec![one[0].clone(), one[0].clone()];
        let single = local_loss(&params, &one).unwrap();
        let double = local_loss(&params, &two).unwrap();
        assert!((single - double).abs() < 1e-15);
    }

    #[test]
    fn local_loss_matches_brute_force_mean() {
        let arch = linear_arch(6, 2);
        let params = ModelParams::init_uniform(arch, 7);
        let data = random_examples(6, 2, 5, 7);
        // brute force: explicit sum / 5, recomputed from scratch
        let mut sum = 0.0;
        for ex in &data {
            let logits = forward(&params, &ex.features).unwrap();
            sum += bce_with_logits(&logits, &ex.labels).unwrap();
        }
        let got = local_loss(&params, &data).unwrap();
        assert!((got - sum / 5.0).abs() < 1e-15);
    }

    #[test]
    fn local_loss_rejects_empty_data() {
        let params = ModelParams::zeros(linear_arch(2, 2));
        assert!(matches!(local_loss(&params, &[]), Err(CoreError::EmptyInput(_))));
        assert!(matches!(local_gradient(&params, &[]), Err(CoreError::EmptyInput(_))));
    }

    #[test]
    fn linear_bias_gradient_is_sigmoid_residual() {
        let arch = linear_arch(3, 2);
        let params = ModelParams::init_uniform(arch, 11);
        let data = random_examples(3, 2, 1, 11);
        let logits = forward(&params, &data[0].features).unwrap();
        let grad = local_gradient(&params, &data).unwrap();
        let c = 2.0;
        for cls in 0..2 {
            let expected = (sigmoid(logits[cls]) - f64::from(data[0].labels[cls])) / c;
            let bias_grad = grad[3 * 2 + cls];
            assert!((bias_grad - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_params_positive_labels_bias_gradient() {
        // sigma(0) = 0.5, y = 1 -> bias gradient -0.5/C for every class
        let c = 4;
        let params = ModelParams::zeros(linear_arch(3, c));
        let data = vec![Example {
            features: vec![0.3, -0.9, 1.5],
            labels: vec![1; c],
        }];
        let grad = local_gradient(&params, &data).unwrap();
        for cls in 0..c {
            assert!((grad[3 * c + cls] - (-0.5 / c as f64)).abs() < 1e-15);
        }
    }

    #[test]
    fn grad_check_linear_under_1e5() {
        for seed in 0..5 {
            let err = grad_check(linear_arch(6, 3), seed);
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn grad_check_mlp_under_1e4() {
        let arch = ArchDescriptor::new(6, 4, 3).unwrap();
        for seed in 0..5 {
            let err = grad_check(arch, seed);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn predict_all_zero_params_is_all_ones() {
        // sigma(0) = 0.5 >= 0.5, ties resolve to 1
        let params = ModelParams::zeros(linear_arch(3, 4));
        assert_eq!(predict(&params, &[1.0, 2.0, 3.0]).unwrap(), vec![1; 4]);
    }

    #[test]
    fn predict_follows_logit_sign() {
        // zero weights, biases [3.2, -1.1] -> logits [3.2, -1.1] -> [1, 0]
        let params = ModelParams::new(vec![0.0, 0.0, 3.2, -1.1], linear_arch(1, 2)).unwrap();
        assert_eq!(predict(&params, &[0.42]).unwrap(), vec![1, 0]);
    }

    #[test]
    fn predict_agrees_with_threshold_recomputation() {
        let arch = linear_arch(8, 5);
        let params = ModelParams::init_uniform(arch, 13);
        let mut rng = stream_rng(13, "predict_test", &[]);
        for _ in 0..100 {
            let x: Vec<f64> = (0..8).map(|_| StandardNormal.sample(&mut rng)).collect();
            let pred = predict(&params, &x).unwrap();
            let logits = forward(&params, &x).unwrap();
            for (p, z) in pred.iter().zip(&logits) {
                assert_eq!(*p == 1, *z >= 0.0);
            }
        }
    }

    #[test]
    fn loss_and_gradient_are_permutation_invariant() {
        let arch = linear_arch(5, 3);
        let params = ModelParams::init_uniform(arch, 17);
        let data = random_examples(5, 3, 9, 17);
        let mut reversed = data.clone();
        reversed.reverse();

        let a = local_loss(&params, &data).unwrap();
        let b = local_loss(&params, &reversed).unwrap();
        assert!((a - b).abs() < 1e-12);

        let ga = local_gradient(&params, &data).unwrap();
        let gb = local_gradient(&params, &reversed).unwrap();
        for (x, y) in ga.iter().zip(&gb) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_is_non_negative() {
        for seed in 0..10 {
            let arch = linear_arch(4, 3);
            let params = ModelParams::init_uniform(arch, seed);
            let data = random_examples(4, 3, 6, seed);
            assert!(local_loss(&params, &data).unwrap() >= 0.0);
        }
    }

    #[test]
    fn param_count_matches_layout() {
        assert_eq!(linear_arch(32, 14).param_count(), 32 * 14 + 14);
        let mlp = ArchDescriptor::new(32, 16, 14).unwrap();
        assert_eq!(mlp.param_count(), 32 * 16 + 16 + 16 * 14 + 14);
    }
}
