use codeinr::io::{export_scene, load_dataset, read_manifest, write_image, write_manifest, Manifest, ManifestEntry};
use codeinr::scenes::{generate, SceneSpec};
use codeinr::{DataError, Error, Image};
use std::path::Path;

fn manifest(dir: &Path, names: &[&str], size: (usize, usize)) -> std::path::PathBuf {
    let images = names
        .iter()
        .map(|n| ManifestEntry { path: n.to_string(), view_tag: String::new() })
        .collect();
    let path = dir.join("m.json");
    write_manifest(&path, &Manifest { version: 1, width: size.1, height: size.0, images }).unwrap();
    path
}

#[test]
fn exported_scene_reloads_within_half_a_quantization_step() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate(&SceneSpec::two_layer_parallax()).unwrap();
    let (train, heldout) = export_scene(&scene, dir.path()).unwrap();
    let set = load_dataset(&train).unwrap();
    assert_eq!(set.len(), 5);
    for (k, img) in set.images().iter().enumerate() {
        for (a, b) in img.data().iter().zip(scene.view(k).data()) {
            assert!((a - b).abs() <= 1.0 / 510.0 + 1e-6);
        }
    }
    assert_eq!(read_manifest(&heldout).unwrap().images.len(), 12);
}

#[test]
fn each_failure_names_its_entry() {
    let dir = tempfile::tempdir().unwrap();
    write_image(dir.path().join("a.png"), &Image::filled(4, 5, [0.5; 3])).unwrap();
    write_image(dir.path().join("b.ppm"), &Image::filled(4, 6, [0.5; 3])).unwrap();
    let mut deep = b"P6\n5 4\n65535\n".to_vec();
    deep.extend(vec![0; 5 * 4 * 6]);
    std::fs::write(dir.path().join("c.ppm"), deep).unwrap();

    let err = load_dataset(manifest(dir.path(), &["a.png", "gone.png"], (4, 5))).unwrap_err();
    assert!(matches!(&err, Error::Data(DataError::MissingFile { entry }) if entry == "gone.png"), "{err}");

    let err = load_dataset(manifest(dir.path(), &["a.png", "b.ppm"], (4, 5))).unwrap_err();
    assert!(matches!(&err, Error::Data(DataError::DimensionMismatch { entry, width: 6, .. }) if entry == "b.ppm"), "{err}");

    let err = load_dataset(manifest(dir.path(), &["c.ppm"], (4, 5))).unwrap_err();
    assert!(matches!(&err, Error::Data(DataError::UnsupportedBitDepth { depth: 16, .. })), "{err}");
    assert!(err.to_string().contains("c.ppm"));
}

#[test]
fn malformed_manifests_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    std::fs::write(&path, "{\"version\": 2, \"width\": 1, \"height\": 1, \"images\": []}").unwrap();
    assert!(matches!(load_dataset(&path), Err(Error::Data(DataError::Manifest { .. }))));
    std::fs::write(&path, "not json").unwrap();
    assert!(matches!(load_dataset(&path), Err(Error::Data(DataError::Manifest { .. }))));
}
