//! Binary format round-trips and reader rejections.

use hsfs_core::dataio::{
    self, Checkpoint, FormatError, HyperCube, LabelMask, PixelDataset, RawGrid,
};
use hsfs_core::nn::{LayerSpec, Network, Tensor};
use hsfs_core::NormStats;
use proptest::prelude::*;

type Decoder = fn(&[u8]) -> Result<(), FormatError>;

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn intensity() -> impl Strategy<Value = f32> {
    prop_oneof![
        Just(0.0f32),
        Just(f32::MAX),
        Just(f32::MIN_POSITIVE),
        0.0f32..1e4
    ]
}

fn finite() -> impl Strategy<Value = f32> {
    prop_oneof![Just(-0.0f32), Just(f32::MIN), -1e4f32..1e4]
}

prop_compose! {
    fn cube()(h in 1usize..9, w in 1usize..9, b in 1usize..17)
        (data in prop::collection::vec(intensity(), h * w * b), h in Just(h), w in Just(w), b in Just(b)) -> HyperCube {
        HyperCube::new(h, w, b, data).unwrap()
    }
}

prop_compose! {
    fn mask()(h in 1usize..20, w in 1usize..20)
        (labels in prop::collection::vec(0u8..3, h * w), h in Just(h), w in Just(w)) -> LabelMask {
        LabelMask::new(h, w, labels).unwrap()
    }
}

prop_compose! {
    fn pixels()(n in 0usize..40, dim in 1usize..12)
        (labels in prop::collection::vec(0u8..3, n), features in prop::collection::vec(finite(), n * dim), dim in Just(dim))
        -> PixelDataset {
        PixelDataset::new(dim, labels, features).unwrap()
    }
}

prop_compose! {
    fn checkpoint()(inputs in 1usize..10, hidden in 1usize..12, extra in 0usize..6, seed in any::<u64>())
        (retained in prop::sample::subsequence((0..inputs + extra).collect::<Vec<_>>(), inputs),
         mean in prop::collection::vec(finite(), inputs),
         std in prop::collection::vec(1e-3f32..1e3, inputs),
         inputs in Just(inputs), hidden in Just(hidden), extra in Just(extra), seed in Just(seed)) -> Checkpoint {
        let specs = [
            LayerSpec::Dense { inputs, outputs: hidden },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.5 },
            LayerSpec::Dense { inputs: hidden, outputs: 3 },
            LayerSpec::Softmax,
        ];
        let net = Network::new(vec![inputs], &specs, seed).unwrap();
        Checkpoint::new(&net, NormStats { mean, std }, retained, inputs + extra).unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn cube_round_trip(c in cube()) {
        let bytes = dataio::encode_cube(&c).unwrap();
        let back = dataio::decode_cube(&bytes).unwrap();
        prop_assert_eq!((back.height(), back.width(), back.bands()), (c.height(), c.width(), c.bands()));
        prop_assert_eq!(bits(back.data()), bits(c.data()));
        prop_assert_eq!(dataio::encode_cube(&back).unwrap(), bytes);
    }

    #[test]
    fn raw_grid_round_trip(h in 1usize..6, w in 1usize..6, v in prop::collection::vec(finite(), 36)) {
        let grid = RawGrid { height: h, width: w, bands: 1, data: v[..h * w].to_vec() };
        let back = dataio::decode_raw_grid(&dataio::encode_raw_grid(&grid).unwrap()).unwrap();
        prop_assert_eq!(bits(&back.data), bits(&grid.data));
        prop_assert_eq!((back.height, back.width, back.bands), (h, w, 1));
    }

    #[test]
    fn mask_round_trip(m in mask()) {
        let back = dataio::decode_mask(&dataio::encode_mask(&m).unwrap()).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn pixels_round_trip(p in pixels()) {
        let back = dataio::decode_pixels(&dataio::encode_pixels(&p).unwrap()).unwrap();
        prop_assert_eq!(back.dim(), p.dim());
        prop_assert_eq!(back.labels(), p.labels());
        prop_assert_eq!(bits(back.features()), bits(p.features()));
    }

    #[test]
    fn checkpoint_round_trip(ck in checkpoint()) {
        let bytes = dataio::encode_checkpoint(&ck).unwrap();
        let back = dataio::decode_checkpoint(&bytes).unwrap();
        prop_assert_eq!(bits(&back.params), bits(&ck.params));
        prop_assert_eq!(bits(&back.norm.mean), bits(&ck.norm.mean));
        prop_assert_eq!(bits(&back.norm.std), bits(&ck.norm.std));
        prop_assert_eq!(&back.layers, &ck.layers);
        prop_assert_eq!(&back.retained, &ck.retained);
        prop_assert_eq!((back.seed, back.original_bands), (ck.seed, ck.original_bands));
        prop_assert_eq!(dataio::encode_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn truncation_is_reported(c in cube(), cut in 0.0f64..1.0) {
        let bytes = dataio::encode_cube(&c).unwrap();
        let keep = ((bytes.len() - 1) as f64 * cut) as usize;
        let err = dataio::decode_cube(&bytes[..keep]).unwrap_err();
        // shorter than the magic itself reads as truncation as well
        prop_assert!(matches!(err, FormatError::Truncated { .. }), "{:?}", err);
    }
}

#[test]
fn bad_magic_is_distinct_from_truncation() {
    let cube = HyperCube::new(2, 2, 2, vec![0.5; 8]).unwrap();
    let mask = LabelMask::new(2, 2, vec![0, 1, 2, 0]).unwrap();
    let pixels = PixelDataset::new(2, vec![0, 1], vec![0.0; 4]).unwrap();
    let encoded = [
        dataio::encode_cube(&cube).unwrap(),
        dataio::encode_mask(&mask).unwrap(),
        dataio::encode_pixels(&pixels).unwrap(),
    ];
    for bytes in encoded {
        let mut wrong = bytes.clone();
        wrong[..4].copy_from_slice(b"XXXX");
        let decoders: [Decoder; 3] = [
            |b| dataio::decode_cube(b).map(drop),
            |b| dataio::decode_mask(b).map(drop),
            |b| dataio::decode_pixels(b).map(drop),
        ];
        for decode in decoders {
            assert!(matches!(decode(&wrong), Err(FormatError::BadMagic { .. })));
            assert!(matches!(
                decode(&bytes[..bytes.len() - 1]),
                Err(FormatError::Truncated { .. }) | Err(FormatError::BadMagic { .. })
            ));
        }
    }
}

#[test]
fn files_with_the_wrong_magic_or_length_fail_to_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.hsc");
    dataio::write_cube(&path, &HyperCube::new(1, 1, 1, vec![0.0]).unwrap()).unwrap();
    let back = dataio::read_cube(&path).unwrap();
    assert_eq!(back.data()[0].to_bits(), 0.0f32.to_bits());
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 2);
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(
        dataio::read_cube(&path),
        Err(FormatError::Truncated { .. })
    ));
    std::fs::write(&path, b"XXXX0000000000000000").unwrap();
    assert!(matches!(
        dataio::read_cube(&path),
        Err(FormatError::BadMagic { .. })
    ));
}

#[test]
fn reloaded_network_gives_identical_logits() {
    let specs = [
        LayerSpec::Dense {
            inputs: 12,
            outputs: 20,
        },
        LayerSpec::Relu,
        LayerSpec::Dropout { rate: 0.5 },
        LayerSpec::Dense {
            inputs: 20,
            outputs: 3,
        },
        LayerSpec::Softmax,
    ];
    let net = Network::new(vec![12], &specs, 77).unwrap();
    let ck = Checkpoint::new(&net, NormStats::identity(12), (0..12).collect(), 12).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.nnw");
    dataio::write_checkpoint(&path, &ck).unwrap();
    let loaded = dataio::read_checkpoint(&path).unwrap().network().unwrap();
    let x = Tensor::new(
        vec![100, 12],
        (0..1200)
            .map(|i| ((i * 37 % 101) as f32 - 50.0) / 13.0)
            .collect(),
    )
    .unwrap();
    assert_eq!(
        bits(net.predict(&x).unwrap().data()),
        bits(loaded.predict(&x).unwrap().data())
    );
}
