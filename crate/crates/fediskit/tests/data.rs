use std::path::PathBuf;

use fediskit::core::data::{encode_idx_images, encode_idx_labels};
use fediskit::core::protocol::{run_experiment_with, NoClock, Sequential};
use fediskit::exec::Threaded;
use fediskit::io::load_idx;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

#[test]
fn shipped_digits_fixture_shape() {
    let d = data_dir();
    let train = load_idx(
        &d.join("digits-train-images-idx3-ubyte"),
        &d.join("digits-train-labels-idx1-ubyte"),
    )
    .unwrap();
    let test = load_idx(
        &d.join("digits-test-images-idx3-ubyte"),
        &d.join("digits-test-labels-idx1-ubyte"),
    )
    .unwrap();
    assert_eq!((train.len(), test.len()), (1497, 300));
    assert!(train.iter().chain(&test).all(|s| s.features.len() == 64));
    assert!(train
        .iter()
        .flat_map(|s| &s.features)
        .all(|v| (0.0..=1.0).contains(v)));
    for label in 0..10 {
        assert_eq!(test.iter().filter(|s| s.label == label).count(), 30);
        assert!(train.iter().filter(|s| s.label == label).count() >= 140);
    }
}

#[test]
fn idx_files_written_and_read_back() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = (dir.path().join("i"), dir.path().join("l"));
    std::fs::write(
        &img,
        encode_idx_images(2, 2, &[vec![0, 255, 51, 102], vec![1, 2, 3, 4]]),
    )
    .unwrap();
    std::fs::write(&lab, encode_idx_labels(&[7, 3])).unwrap();
    let s = load_idx(&img, &lab).unwrap();
    assert_eq!(s[0].features, vec![0.0, 1.0, 0.2, 0.4]);
    assert_eq!((s[0].label, s[1].label), (7, 3));

    std::fs::write(&lab, encode_idx_labels(&[7])).unwrap();
    let err = load_idx(&img, &lab).unwrap_err().to_string();
    assert!(err.contains(img.to_str().unwrap()), "{err}");
}

#[test]
fn threaded_and_sequential_runs_agree() {
    let text = "num_clients = 4\nrounds = 3\n[learner]\nhidden = [[8], [12], [8, 4], [10]]\n\
                [dataset]\nkind = \"synthetic\"\nclasses = 4\ndim = 5\ntrain_per_class = 30\ntest_per_class = 10\n";
    let cfg = fediskit::config::RunConfig::from_toml_str(text, std::path::Path::new(".")).unwrap();
    let (train, test) = cfg.load_data().unwrap();
    for mode in [
        fediskit::config::Mode::Kmeans,
        fediskit::config::Mode::Kulsif,
    ] {
        let mut c = cfg.clone();
        c.filter_mode = mode;
        let exp = c.experiment().unwrap();
        let seq = run_experiment_with(&train, &test, &exp, &Sequential, &NoClock).unwrap();
        for threads in [2, 3, 8] {
            let ex = Threaded::new(threads.try_into().unwrap());
            assert_eq!(
                run_experiment_with(&train, &test, &exp, &ex, &NoClock).unwrap(),
                seq
            );
        }
    }
}
