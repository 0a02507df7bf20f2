use sha2::{Digest, Sha256};

use tensorreg::data::{gen_toy_regression, Dataset, Setup, ToyRegressionSpec};
use tensorreg::io::{self, DatasetLayout};
use tensorreg::Error;

fn digest(data: &Dataset) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(format!("{:?}", data.task));
    for (x, y) in data.covariates.iter().zip(&data.targets) {
        for &d in x.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in x.data() {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update(y.to_bits().to_le_bytes());
    }
    h.finalize().into()
}

#[test]
fn thousand_sample_dataset_roundtrips_in_both_layouts() {
    let spec = ToyRegressionSpec::new(Setup::C, 1000, 1, 1, 17);
    let train = gen_toy_regression(&spec).unwrap().train;
    let before = digest(&train);
    for layout in [DatasetLayout::Stacked, DatasetLayout::PerSample] {
        let dir = tempfile::tempdir().unwrap();
        io::write_dataset(dir.path(), &train, layout).unwrap();
        let back = io::read_dataset(dir.path()).unwrap();
        assert_eq!(digest(&back), before, "{layout:?}");
        assert_eq!(back.covariates, train.covariates);
        assert_eq!(back.targets, train.targets);
    }
}

#[test]
fn corrupted_magic_is_a_format_error() {
    let spec = ToyRegressionSpec::new(Setup::A, 3, 1, 1, 1);
    let train = gen_toy_regression(&spec).unwrap().train;
    let dir = tempfile::tempdir().unwrap();
    io::write_dataset(dir.path(), &train, DatasetLayout::PerSample).unwrap();
    let sample = dir.path().join("samples").join("000001.tnsr");
    let mut bytes = std::fs::read(&sample).unwrap();
    bytes[0] ^= 0xff;
    std::fs::write(&sample, bytes).unwrap();
    assert!(matches!(io::read_dataset(dir.path()), Err(Error::Format(_))));
}

#[test]
fn truncated_stack_is_rejected() {
    let spec = ToyRegressionSpec::new(Setup::A, 4, 1, 1, 2);
    let train = gen_toy_regression(&spec).unwrap().train;
    let dir = tempfile::tempdir().unwrap();
    io::write_dataset(dir.path(), &train, DatasetLayout::Stacked).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    let file = dir.path().join(manifest["covariates"].as_str().unwrap());
    let bytes = std::fs::read(&file).unwrap();
    std::fs::write(&file, &bytes[..bytes.len() - 8]).unwrap();
    assert!(io::read_dataset(dir.path()).is_err());
}
