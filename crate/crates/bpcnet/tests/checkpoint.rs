use bpcnet::checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
use bpcnet::Error;
use bpcnet_core::data::one_hot_batch;
use bpcnet_core::model::{Model, ModelSpec, PatchShape};
use bpcnet_core::{Rng, Tensor};

fn specs() -> Vec<ModelSpec> {
    let mut cpe = ModelSpec::fig2(4, 4, 3, 2, 3, PatchShape { patch_h: 2, patch_w: 2 });
    cpe.use_cpe_front = true;
    cpe.value_transform = true;
    vec![ModelSpec::fig1(6, 5, 1, 4, 3), ModelSpec::fig2(8, 8, 1, 3, 3, PatchShape { patch_h: 4, patch_w: 4 }), cpe]
}

#[test]
fn save_load_save_is_byte_identical_and_forward_is_bitwise_equal() {
    let dir = tempfile::tempdir().unwrap();
    for (i, spec) in specs().into_iter().enumerate() {
        let mut rng = Rng::new(i as u64);
        let model = Model::build(&spec, &mut rng).unwrap();
        let first = dir.path().join(format!("{i}a.bpct"));
        let second = dir.path().join(format!("{i}b.bpct"));
        save_checkpoint(&model, &first).unwrap();
        let loaded = load_checkpoint(&first).unwrap();
        save_checkpoint(&loaded, &second).unwrap();
        assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
        assert_eq!(loaded, model);

        let x = Tensor::uniform(&[spec.image_dim(), 5], 0.0, 1.0, &mut rng);
        let meta = one_hot_batch(&[0, 1, 0, 1, 1], spec.meta_dim).unwrap();
        let a = model.forward(&x, &meta).unwrap();
        let b = loaded.forward(&x, &meta).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn layout_starts_with_magic_version_and_spec() {
    let model = Model::build(&specs()[0], &mut Rng::new(3)).unwrap();
    let bytes = encode_checkpoint(&model).unwrap();
    assert_eq!(&bytes[..4], b"BPCT");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let spec: ModelSpec = serde_json::from_slice(&bytes[12..12 + len]).unwrap();
    assert_eq!(&spec, model.spec());
    let count = u32::from_le_bytes(bytes[12 + len..16 + len].try_into().unwrap()) as usize;
    assert_eq!(count, model.named_params().len());
}

#[test]
fn every_truncation_is_a_format_error() {
    let model = Model::build(&specs()[0], &mut Rng::new(3)).unwrap();
    let bytes = encode_checkpoint(&model).unwrap();
    for cut in 0..bytes.len() {
        match decode_checkpoint(&bytes[..cut]) {
            Err(Error::Format { .. }) => {}
            other => panic!("cut at {cut}: {other:?}"),
        }
    }
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(matches!(decode_checkpoint(&longer), Err(Error::Format { .. })));
}

#[test]
fn magic_and_version_mismatch() {
    let model = Model::build(&specs()[0], &mut Rng::new(3)).unwrap();
    let bytes = encode_checkpoint(&model).unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad), Err(Error::Format { offset: 0, .. })));
    let mut bad = bytes;
    bad[4] = 2;
    assert!(matches!(decode_checkpoint(&bad), Err(Error::Format { offset: 4, .. })));
}

#[test]
fn tensor_name_mismatch_is_an_integrity_error() {
    let model = Model::build(&specs()[0], &mut Rng::new(3)).unwrap();
    let mut bytes = encode_checkpoint(&model).unwrap();
    let first = &model.named_params()[0].0;
    let at = bytes.windows(first.len()).position(|w| w == first.as_bytes()).unwrap();
    bytes[at] = b'9';
    assert!(matches!(decode_checkpoint(&bytes), Err(Error::Integrity(_))));
}

#[test]
fn spec_snapshot_that_disagrees_with_tensors() {
    let model = Model::build(&specs()[0], &mut Rng::new(3)).unwrap();
    let bytes = encode_checkpoint(&model).unwrap();
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let mut spec = model.spec().clone();
    spec.bottleneck += 1;
    let text = serde_json::to_string(&spec).unwrap();
    let mut forged = bytes[..8].to_vec();
    forged.extend_from_slice(&(text.len() as u32).to_le_bytes());
    forged.extend_from_slice(text.as_bytes());
    forged.extend_from_slice(&bytes[12 + len..]);
    assert!(matches!(decode_checkpoint(&forged), Err(Error::Integrity(_))));
}
