//! Fine-tuning a trained decoder against the relaxed syndrome of its residual.
//!
//! For a record `(s, e)` the decoder's soft output `e'` is compared with the
//! true error through `d = |e - e'|`; the field maps `d` to a relaxed syndrome
//! `s' = f(d)` and the loss is `BCE(s', 0)`. Any residual in the stabilizer
//! group has zero syndrome, so corrections that differ from `e` by a
//! stabilizer are not penalized. The field is never updated.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;

use crate::decoder::{Decoder, DecoderModel, PairDataset, ReoptMeta};
use crate::error::{check_len, Error, Result};
use crate::formats;
use crate::lattice::{ErrorVector, Syndrome};
use crate::nn::{loss_bce, loss_bce_grad, EpochReport, OptimizerState};
use crate::noise::derive_stream;
use crate::syndrome_field::{FieldMode, SyndromeField};

#[derive(Debug, Clone, PartialEq)]
pub struct ReoptConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl ReoptConfig {
    /// Published full-scale settings for distance `l`.
    pub fn full_scale(l: usize) -> Self {
        Self {
            batch_size: if l >= 7 { 400 } else { 200 },
            epochs: 75,
            lr: 3e-8,
        }
    }
}

fn check_field(field: &SyndromeField, l: usize) -> Result<()> {
    if field.layout().distance() != l {
        return Err(Error::Dimension(format!(
            "field is for L = {}, decoder for L = {l}",
            field.layout().distance()
        )));
    }
    Ok(())
}

/// Mean symmetry loss over a batch and its gradient with respect to the soft
/// predictions.
pub fn symmetry_loss_batch(
    field: &SyndromeField,
    errors: ArrayView2<f64>,
    soft: ArrayView2<f64>,
) -> Result<(f64, Array2<f64>)> {
    if errors.dim() != soft.dim() {
        return Err(Error::Dimension(format!(
            "errors {:?} vs predictions {:?}",
            errors.dim(),
            soft.dim()
        )));
    }
    let residual = Zip::from(&errors).and(&soft).map_collect(|&e, &p| (e - p).abs());
    let pass = field.forward_batch(residual.view())?;
    let out = pass.output().as_standard_layout();
    let out = out.as_slice().expect("standard layout");
    let zeros = vec![0.0; out.len()];
    let loss = loss_bce(out, &zeros)?;
    let upstream = Array2::from_shape_vec(pass.output().dim(), loss_bce_grad(out, &zeros)?)
        .expect("gradient shape matches output");
    let mut grad = field.backward_input(&pass, upstream.view())?;
    // d|e - p| / dp = sign(p - e)
    Zip::from(&mut grad)
        .and(&errors)
        .and(&soft)
        .for_each(|g, &e, &p| *g *= (p - e).signum() * f64::from(u8::from(p != e)));
    Ok((loss, grad))
}

/// Symmetry loss of one soft prediction against the true error.
pub fn symmetry_loss(field: &SyndromeField, e: &ErrorVector, e_soft: &[f64]) -> Result<f64> {
    check_len("prediction", e_soft.len(), e.len())?;
    let errors = Array2::from_shape_vec((1, e.len()), e.to_f64()).expect("one row");
    let soft = ArrayView2::from_shape((1, e_soft.len()), e_soft).expect("one row");
    Ok(symmetry_loss_batch(field, errors.view(), soft)?.0)
}

/// Reoptimization loss of a decoder on a single record, without updating anything.
pub fn loss_probe<D: Decoder + ?Sized>(
    decoder: &D,
    field: &SyndromeField,
    s: &Syndrome,
    e: &ErrorVector,
) -> Result<f64> {
    check_field(field, decoder.distance())?;
    let x = Array2::from_shape_vec((1, s.len()), s.to_f64()).expect("one row");
    let soft = decoder.decode_soft(x.view())?;
    symmetry_loss(field, e, soft.row(0).as_slice().expect("contiguous row"))
}

/// Provenance label of a field.
pub fn field_label(field: &SyndromeField) -> String {
    match field.mode() {
        FieldMode::Exact => "exact".to_string(),
        FieldMode::Approximated(net) => format!("approximated:{}", formats::network_hash(net)),
    }
}

/// Fine-tunes `model` on `dataset` through the frozen `field` with a fresh Adam
/// optimizer. Batches are shuffled with `derive_stream(seed, 2)`.
///
/// With zero epochs the input model is returned unchanged.
pub fn reoptimize(
    model: &DecoderModel,
    field: &SyndromeField,
    dataset: &PairDataset,
    cfg: &ReoptConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<DecoderModel> {
    let l = model.meta.l;
    check_field(field, l)?;
    if dataset.distance() != l {
        return Err(Error::Dimension(format!(
            "dataset is for L = {}, decoder for L = {l}",
            dataset.distance()
        )));
    }
    if cfg.epochs == 0 {
        return Ok(model.clone());
    }
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) || cfg.batch_size == 0 {
        return Err(Error::InvalidParameter(format!("bad reoptimization settings {cfg:?}")));
    }
    let source_hash = formats::decoder_hash(model);
    let mut net = model.net.clone();
    let mut opt = OptimizerState::adam(cfg.lr);
    let x = dataset.syndrome_matrix();
    let t = dataset.error_matrix();
    let mut rng = derive_stream(seed, 2);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let xb = x.select(Axis(0), idx);
            let tb = t.select(Axis(0), idx);
            let cache = net.forward_batch(xb.view())?;
            let (loss, dsoft) = symmetry_loss_batch(field, tb.view(), cache.output().view())?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite reoptimization loss at epoch {epoch}")));
            }
            let grads = net.param_gradients(&cache, dsoft.view())?;
            opt.step(&mut net, &grads)?;
            total += loss;
            batches += 1;
        }
        on_epoch(&EpochReport {
            epoch,
            train_loss: total / batches.max(1) as f64,
            val_loss: None,
        });
    }
    let mut meta = model.meta.clone();
    meta.reopt = Some(ReoptMeta {
        source_hash,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        lr: cfg.lr,
        field: field_label(field),
    });
    DecoderModel::new(net, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{gen_dataset, train_decoder, DecoderConfig};
    use crate::lattice::CodeLayout;
    use crate::nn::BCE_EPS;
    use crate::noise::{NoiseModel, RngStream};

    /// Emits a fixed soft prediction regardless of the syndrome.
    struct Stub {
        l: usize,
        out: Vec<f64>,
    }

    impl Decoder for Stub {
        fn distance(&self) -> usize {
            self.l
        }
        fn decode_soft(&self, s: ArrayView2<f64>) -> Result<Array2<f64>> {
            Ok(Array2::from_shape_fn((s.nrows(), self.out.len()), |(_, j)| self.out[j]))
        }
    }

    fn floor() -> f64 {
        -(1.0 - BCE_EPS).ln()
    }

    #[test]
    fn perfect_prediction_hits_clamp_floor() {
        let lay = CodeLayout::new(3).unwrap();
        let field = SyndromeField::exact(lay.clone());
        let d = gen_dataset(&lay, NoiseModel::depolarizing(0.1).unwrap(), 50, &mut RngStream::new(1)).unwrap();
        for i in 0..d.len() {
            let (s, e) = d.record(i);
            let stub = Stub { l: 3, out: e.to_f64() };
            let loss = loss_probe(&stub, &field, &s, &e).unwrap();
            assert!((loss - floor()).abs() < 1e-15);
            assert!(loss <= 2e-7);
        }
    }

    #[test]
    fn stabilizer_residual_is_not_penalized() {
        let lay = CodeLayout::new(3).unwrap();
        let field = SyndromeField::exact(lay.clone());
        let e = ErrorVector::zeros(36);
        for g in lay.generator_patterns() {
            let loss = symmetry_loss(&field, &e, &g.to_f64()).unwrap();
            assert!((loss - floor()).abs() < 1e-15);
        }
    }

    #[test]
    fn single_flip_loss_at_distance_five() {
        let lay = CodeLayout::new(5).unwrap();
        let field = SyndromeField::exact(lay);
        let e = ErrorVector::zeros(100);
        let mut pred = vec![0.0; 100];
        pred[7] = 1.0;
        let loss = symmetry_loss(&field, &e, &pred).unwrap();
        let ceiling = -(1.0 - (1.0 - BCE_EPS)).ln();
        let expected = (2.0 * ceiling + 48.0 * floor()) / 50.0;
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.644_72).abs() < 1e-5);
    }

    #[test]
    fn probe_is_invariant_under_stabilizers() {
        let lay = CodeLayout::new(3).unwrap();
        let field = SyndromeField::exact(lay.clone());
        let d = gen_dataset(&lay, NoiseModel::depolarizing(0.1).unwrap(), 20, &mut RngStream::new(2)).unwrap();
        let guess = gen_dataset(&lay, NoiseModel::depolarizing(0.1).unwrap(), 20, &mut RngStream::new(3)).unwrap();
        for (i, g) in (0..d.len()).zip(lay.generator_patterns().iter().cycle()) {
            let (s, e) = d.record(i);
            let stub = Stub { l: 3, out: guess.record(i).1.to_f64() };
            let moved = e.xor(g).unwrap();
            let a = loss_probe(&stub, &field, &s, &e).unwrap();
            let b = loss_probe(&stub, &field, &s, &moved).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn probe_equals_single_record_batch() {
        let lay = CodeLayout::new(3).unwrap();
        let field = SyndromeField::exact(lay.clone());
        let d = gen_dataset(&lay, NoiseModel::depolarizing(0.1).unwrap(), 1, &mut RngStream::new(4)).unwrap();
        let cfg = DecoderConfig { hidden_layers: 1, hidden_scale: 1, batch_size: 1, epochs: 1, lr: 1e-3, val_fraction: 0.0 };
        let model = train_decoder(&d, &cfg, 5, |_| {}).unwrap();
        let (s, e) = d.record(0);
        let soft = model.net.predict(d.syndrome_matrix().view()).unwrap();
        let (batch, _) = symmetry_loss_batch(&field, d.error_matrix().view(), soft.view()).unwrap();
        assert_eq!(loss_probe(&model, &field, &s, &e).unwrap(), batch);
    }

    #[test]
    fn batch_gradient_matches_finite_differences() {
        let lay = CodeLayout::new(2).unwrap();
        let field = SyndromeField::exact(lay.clone());
        let mut rng = RngStream::new(6);
        let e = Array2::from_shape_fn((3, 16), |_| (rng.next_u64() & 1) as f64);
        let p = Array2::from_shape_fn((3, 16), |_| 0.05 + 0.9 * rng.uniform());
        let (_, g) = symmetry_loss_batch(&field, e.view(), p.view()).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..16 {
                let mut up = p.clone();
                up[[i, j]] += h;
                let mut dn = p.clone();
                dn[[i, j]] -= h;
                let fd = (symmetry_loss_batch(&field, e.view(), up.view()).unwrap().0
                    - symmetry_loss_batch(&field, e.view(), dn.view()).unwrap().0)
                    / (2.0 * h);
                assert!((g[[i, j]] - fd).abs() < 1e-6 * fd.abs().max(1.0), "{} vs {fd}", g[[i, j]]);
            }
        }
    }

    fn trained() -> (CodeLayout, PairDataset, DecoderModel) {
        let lay = CodeLayout::new(3).unwrap();
        let d = gen_dataset(&lay, NoiseModel::depolarizing(0.05).unwrap(), 400, &mut RngStream::new(7)).unwrap();
        let cfg = DecoderConfig { hidden_layers: 2, hidden_scale: 1, batch_size: 50, epochs: 3, lr: 1e-3, val_fraction: 0.05 };
        let model = train_decoder(&d, &cfg, 8, |_| {}).unwrap();
        (lay, d, model)
    }

    #[test]
    fn no_op_settings_keep_the_network() {
        let (lay, d, model) = trained();
        let field = SyndromeField::exact(lay);
        let zero_epochs = ReoptConfig { batch_size: 50, epochs: 0, lr: 1e-3 };
        assert_eq!(reoptimize(&model, &field, &d, &zero_epochs, 1, |_| {}).unwrap(), model);
        let zero_lr = ReoptConfig { batch_size: 50, epochs: 2, lr: 0.0 };
        let out = reoptimize(&model, &field, &d, &zero_lr, 1, |_| {}).unwrap();
        assert_eq!(out.net, model.net);
        let meta = out.meta.reopt.unwrap();
        assert_eq!(meta.source_hash, formats::decoder_hash(&model));
        assert_eq!(meta.field, "exact");
    }

    #[test]
    fn reoptimization_lowers_symmetry_loss() {
        let (lay, d, model) = trained();
        let field = SyndromeField::exact(lay);
        let cfg = ReoptConfig { batch_size: 50, epochs: 5, lr: 1e-4 };
        let mut losses = Vec::new();
        let out = reoptimize(&model, &field, &d, &cfg, 3, |r| losses.push(r.train_loss)).unwrap();
        assert_ne!(out.net, model.net);
        assert!(losses.last().unwrap() < &losses[0], "{losses:?}");
        let again = reoptimize(&model, &field, &d, &cfg, 3, |_| {}).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn mismatched_distances_rejected() {
        let (_, d, model) = trained();
        let field = SyndromeField::exact(CodeLayout::new(4).unwrap());
        let cfg = ReoptConfig { batch_size: 50, epochs: 1, lr: 1e-4 };
        assert!(matches!(reoptimize(&model, &field, &d, &cfg, 1, |_| {}), Err(Error::Dimension(_))));
    }
}
