//! MLP decoder: syndrome in, per-component error probabilities out.

use ndarray::{Array2, ArrayView2};

use crate::error::{check_len, Error, Result};
use crate::lattice::{CodeLayout, ErrorVector, Syndrome};
use crate::nn::{
    train_supervised, Activation, EpochReport, Loss, Network, OptimizerState, TrainSettings,
};
use crate::noise::{derive_stream, NoiseModel, RngStream};

/// Anything that maps a batch of syndromes to soft error predictions in `[0, 1]`.
pub trait Decoder: Sync {
    fn distance(&self) -> usize;

    /// One row per syndrome in, one row of `4L^2` probabilities out.
    fn decode_soft(&self, syndromes: ArrayView2<f64>) -> Result<Array2<f64>>;
}

/// Never corrects anything.
#[derive(Debug, Clone, Copy)]
pub struct IdentityDecoder {
    pub l: usize,
}

impl Decoder for IdentityDecoder {
    fn distance(&self) -> usize {
        self.l
    }

    fn decode_soft(&self, syndromes: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_len("syndrome", syndromes.ncols(), 2 * self.l * self.l)?;
        Ok(Array2::zeros((syndromes.nrows(), 4 * self.l * self.l)))
    }
}

/// Threshold at 0.5; exactly 0.5 becomes 1.
pub fn binarize(soft: f64) -> u8 {
    u8::from(soft >= 0.5)
}

/// Soft prediction and thresholded correction for one syndrome.
pub fn decode<D: Decoder + ?Sized>(decoder: &D, s: &Syndrome) -> Result<(Vec<f64>, ErrorVector)> {
    let l = decoder.distance();
    check_len("syndrome", s.len(), 2 * l * l)?;
    let x = Array2::from_shape_vec((1, s.len()), s.to_f64()).expect("one row");
    let soft = decoder.decode_soft(x.view())?.row(0).to_vec();
    let hard = soft.iter().map(|&v| binarize(v)).collect();
    Ok((soft, ErrorVector::from_bits(hard)?))
}

/// Reoptimization provenance carried in decoder metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ReoptMeta {
    /// SHA-256 of the serialized decoder the reoptimization started from.
    pub source_hash: String,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// `exact` or `approximated:<sha256 of the f-model>`.
    pub field: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderMeta {
    pub l: usize,
    pub noise: NoiseModel,
    pub seed: u64,
    pub epochs: usize,
    pub reopt: Option<ReoptMeta>,
}

/// A network-backed decoder with its training metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderModel {
    pub net: Network,
    pub meta: DecoderMeta,
}

impl DecoderModel {
    pub fn new(net: Network, meta: DecoderMeta) -> Result<Self> {
        let l = meta.l;
        if net.input_dim() != 2 * l * l || net.output_dim() != 4 * l * l {
            return Err(Error::Dimension(format!(
                "decoder network {:?} does not map 2L^2 -> 4L^2 for L = {l}",
                net.dims()
            )));
        }
        Ok(Self { net, meta })
    }
}

impl Decoder for DecoderModel {
    fn distance(&self) -> usize {
        self.meta.l
    }

    fn decode_soft(&self, syndromes: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.net.predict(syndromes)
    }
}

/// Syndrome/error training pairs stored as flat byte matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    l: usize,
    noise: NoiseModel,
    n: usize,
    syndromes: Vec<u8>,
    errors: Vec<u8>,
}

impl PairDataset {
    /// Builds a dataset from row-major bit matrices, checking every record's
    /// syndrome against its error.
    pub fn from_bits(l: usize, noise: NoiseModel, syndromes: Vec<u8>, errors: Vec<u8>) -> Result<Self> {
        let layout = CodeLayout::new(l)?;
        let (sl, el) = (layout.syndrome_len(), layout.error_len());
        if errors.len() % el != 0 {
            return Err(Error::Dimension("error matrix is not a whole number of records".into()));
        }
        let n = errors.len() / el;
        check_len("syndrome matrix", syndromes.len(), n * sl)?;
        if syndromes.iter().chain(&errors).any(|&b| b > 1) {
            return Err(Error::InvalidParameter("dataset bits must be 0 or 1".into()));
        }
        for i in 0..n {
            if layout.parities(&errors[i * el..(i + 1) * el]) != syndromes[i * sl..(i + 1) * sl] {
                return Err(Error::InvalidParameter(format!(
                    "record {i}: syndrome does not match its error"
                )));
            }
        }
        Ok(Self { l, noise, n, syndromes, errors })
    }

    pub fn distance(&self) -> usize {
        self.l
    }

    pub fn noise(&self) -> NoiseModel {
        self.noise
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn syndrome_bits(&self, i: usize) -> &[u8] {
        let sl = 2 * self.l * self.l;
        &self.syndromes[i * sl..(i + 1) * sl]
    }

    pub fn error_bits(&self, i: usize) -> &[u8] {
        let el = 4 * self.l * self.l;
        &self.errors[i * el..(i + 1) * el]
    }

    pub fn record(&self, i: usize) -> (Syndrome, ErrorVector) {
        (
            Syndrome::from_bits(self.syndrome_bits(i).to_vec()).expect("validated"),
            ErrorVector::from_bits(self.error_bits(i).to_vec()).expect("validated"),
        )
    }

    pub fn syndrome_matrix(&self) -> Array2<f64> {
        Array2::from_shape_vec(
            (self.n, 2 * self.l * self.l),
            self.syndromes.iter().map(|&b| f64::from(b)).collect(),
        )
        .expect("shape matches")
    }

    pub fn error_matrix(&self) -> Array2<f64> {
        Array2::from_shape_vec(
            (self.n, 4 * self.l * self.l),
            self.errors.iter().map(|&b| f64::from(b)).collect(),
        )
        .expect("shape matches")
    }

    /// The first `n` records.
    pub fn prefix(&self, n: usize) -> Self {
        let n = n.min(self.n);
        let (sl, el) = (2 * self.l * self.l, 4 * self.l * self.l);
        Self {
            l: self.l,
            noise: self.noise,
            n,
            syndromes: self.syndromes[..n * sl].to_vec(),
            errors: self.errors[..n * el].to_vec(),
        }
    }
}

/// Samples `n` records; record `i` uses `derive_stream(seed, i)` where `seed`
/// is the next draw of `rng`, so larger datasets extend smaller ones.
pub fn gen_dataset(layout: &CodeLayout, noise: NoiseModel, n: usize, rng: &mut RngStream) -> Result<PairDataset> {
    if n == 0 {
        return Err(Error::InvalidParameter("dataset size must be >= 1".into()));
    }
    let seed = rng.next_u64();
    let (sl, el) = (layout.syndrome_len(), layout.error_len());
    let mut errors = vec![0u8; n * el];
    let mut syndromes = Vec::with_capacity(n * sl);
    for (i, e) in errors.chunks_mut(el).enumerate() {
        noise.fill_error(layout.num_qubits(), &mut derive_stream(seed, i as u64), e);
        syndromes.extend(layout.parities(e));
    }
    Ok(PairDataset {
        l: layout.distance(),
        noise,
        n,
        syndromes,
        errors,
    })
}

/// First-training settings.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub hidden_layers: usize,
    /// Hidden width as a multiple of `4L^2`.
    pub hidden_scale: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Trailing fraction of the dataset held out for validation logging.
    pub val_fraction: f64,
}

impl DecoderConfig {
    /// Published full-scale settings.
    pub fn full_scale() -> Self {
        Self {
            hidden_layers: 18,
            hidden_scale: 8,
            batch_size: 500,
            epochs: 55,
            lr: 5e-4,
            val_fraction: 0.05,
        }
    }

    pub fn layer_dims(&self, l: usize) -> Vec<usize> {
        let width = self.hidden_scale * 4 * l * l;
        let mut dims = vec![2 * l * l];
        dims.extend(std::iter::repeat_n(width, self.hidden_layers));
        dims.push(4 * l * l);
        dims
    }
}

/// Trains a fresh decoder with BCE and Adam.
///
/// Weights are initialised from `derive_stream(seed, 0)` and batches shuffled
/// with `derive_stream(seed, 1)`.
pub fn train_decoder(
    dataset: &PairDataset,
    cfg: &DecoderConfig,
    seed: u64,
    on_epoch: impl FnMut(&EpochReport),
) -> Result<DecoderModel> {
    if dataset.is_empty() {
        return Err(Error::InvalidParameter("dataset is empty".into()));
    }
    if !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(Error::InvalidParameter("val_fraction must lie in [0, 1)".into()));
    }
    let l = dataset.distance();
    let mut net = Network::new(
        &cfg.layer_dims(l),
        Activation::Selu,
        Activation::Sigmoid,
        &mut derive_stream(seed, 0),
    )?;
    let n_val = (dataset.len() as f64 * cfg.val_fraction).floor() as usize;
    let n_train = dataset.len() - n_val;
    let x = dataset.syndrome_matrix();
    let t = dataset.error_matrix();
    let (xt, xv) = x.view().split_at(ndarray::Axis(0), n_train);
    let (tt, tv) = t.view().split_at(ndarray::Axis(0), n_train);
    let mut opt = OptimizerState::adam(cfg.lr);
    let settings = TrainSettings {
        loss: Loss::Bce,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        cosine_decay: false,
    };
    train_supervised(
        &mut net,
        &mut opt,
        xt,
        tt,
        Some((xv, tv)),
        &settings,
        &mut derive_stream(seed, 1),
        on_epoch,
    )?;
    DecoderModel::new(
        net,
        DecoderMeta {
            l,
            noise: dataset.noise(),
            seed,
            epochs: cfg.epochs,
            reopt: None,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(epochs: usize) -> DecoderConfig {
        DecoderConfig {
            hidden_layers: 2,
            hidden_scale: 1,
            batch_size: 50,
            epochs,
            lr: 1e-3,
            val_fraction: 0.05,
        }
    }

    #[test]
    fn zero_noise_dataset_is_all_zero() {
        let lay = CodeLayout::new(3).unwrap();
        let d = gen_dataset(&lay, NoiseModel::depolarizing(0.0).unwrap(), 50, &mut RngStream::new(1)).unwrap();
        for i in 0..d.len() {
            let (s, e) = d.record(i);
            assert!(s.is_zero() && e.is_zero());
        }
    }

    #[test]
    fn dataset_records_are_consistent() {
        let lay = CodeLayout::new(3).unwrap();
        let d = gen_dataset(&lay, NoiseModel::depolarizing(0.1).unwrap(), 500, &mut RngStream::new(2)).unwrap();
        for i in 0..d.len() {
            let (s, e) = d.record(i);
            assert_eq!(lay.measure_syndrome(&e).unwrap(), s);
        }
        assert!(gen_dataset(&lay, d.noise(), 0, &mut RngStream::new(2)).is_err());
    }

    #[test]
    fn larger_datasets_extend_smaller_ones() {
        let lay = CodeLayout::new(3).unwrap();
        let noise = NoiseModel::depolarizing(0.05).unwrap();
        let small = gen_dataset(&lay, noise, 100, &mut RngStream::new(3)).unwrap();
        let big = gen_dataset(&lay, noise, 300, &mut RngStream::new(3)).unwrap();
        assert_eq!(big.prefix(100), small);
    }

    #[test]
    fn nonzero_syndrome_fraction_is_self_consistent() {
        let lay = CodeLayout::new(3).unwrap();
        let noise = NoiseModel::depolarizing(0.05).unwrap();
        let frac = |seed| {
            let d = gen_dataset(&lay, noise, 100_000, &mut RngStream::new(seed)).unwrap();
            (0..d.len()).filter(|&i| d.syndrome_bits(i).iter().any(|&b| b == 1)).count() as f64 / d.len() as f64
        };
        let (a, b) = (frac(10), frac(11));
        let sigma = (a * (1.0 - a) / 100_000.0).sqrt();
        assert!((a - b).abs() < 3.0 * sigma * 2f64.sqrt(), "{a} vs {b}");
        // zero syndrome needs every error to be trivial or a stabilizer: P >= (1-p)^18
        assert!((1.0 - a) >= 0.95f64.powi(18) * 0.99);
    }

    #[test]
    fn from_bits_rejects_inconsistent_records() {
        let noise = NoiseModel::depolarizing(0.1).unwrap();
        let mut e = vec![0u8; 16];
        e[0] = 1;
        assert!(PairDataset::from_bits(2, noise, vec![0u8; 8], e.clone()).is_err());
        let s = CodeLayout::new(2).unwrap().parities(&e);
        assert!(PairDataset::from_bits(2, noise, s, e).is_ok());
        assert!(PairDataset::from_bits(2, noise, vec![0u8; 7], vec![0u8; 16]).is_err());
    }

    #[test]
    fn threshold_tie_maps_to_one() {
        assert_eq!(binarize(0.5), 1);
        assert_eq!(binarize(0.499_999), 0);
        let dec = IdentityDecoder { l: 3 };
        let (soft, hard) = decode(&dec, &Syndrome::zeros(18)).unwrap();
        assert_eq!(soft, vec![0.0; 36]);
        assert!(hard.is_zero());
        assert!(decode(&dec, &Syndrome::zeros(8)).is_err());
    }

    #[test]
    fn zero_network_decodes_to_all_ones() {
        let net = Network::zeros(&[18, 36], Activation::Selu, Activation::Sigmoid).unwrap();
        let meta = DecoderMeta { l: 3, noise: NoiseModel::depolarizing(0.05).unwrap(), seed: 0, epochs: 0, reopt: None };
        let model = DecoderModel::new(net, meta.clone()).unwrap();
        let (soft, hard) = decode(&model, &Syndrome::zeros(18)).unwrap();
        assert!(soft.iter().all(|&v| v == 0.5));
        assert_eq!(hard.weight(), 36);
        let bad = Network::zeros(&[18, 35], Activation::Selu, Activation::Sigmoid).unwrap();
        assert!(DecoderModel::new(bad, meta).is_err());
    }

    #[test]
    fn training_improves_and_is_deterministic() {
        let lay = CodeLayout::new(3).unwrap();
        let d = gen_dataset(&lay, NoiseModel::depolarizing(0.05).unwrap(), 1000, &mut RngStream::new(4)).unwrap();
        let mut losses = Vec::new();
        let a = train_decoder(&d, &small_cfg(5), 9, |r| {
            assert!(r.val_loss.is_some());
            losses.push(r.train_loss)
        })
        .unwrap();
        let b = train_decoder(&d, &small_cfg(5), 9, |_| {}).unwrap();
        assert_eq!(a, b);
        assert!(losses.last().unwrap() <= &losses[0]);
        let (soft, _) = decode(&a, &d.record(0).0).unwrap();
        assert!(soft.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn overfits_single_zero_record() {
        let noise = NoiseModel::depolarizing(0.05).unwrap();
        let d = PairDataset::from_bits(3, noise, vec![0; 18], vec![0; 36]).unwrap();
        let model = train_decoder(&d, &small_cfg(100), 1, |_| {}).unwrap();
        let (soft, hard) = decode(&model, &Syndrome::zeros(18)).unwrap();
        assert!(soft.iter().all(|&v| v < 0.5), "{soft:?}");
        assert!(hard.is_zero());
    }
}
