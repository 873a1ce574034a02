use std::collections::BTreeSet;
use std::path::Path;

use proptest::prelude::*;
use scene_cluster::features::export::{export_activation_maps, read_export_list, write_export_list, ExportEntry};
use scene_cluster::features::{
    compute_features, tensor, FeatureExtractor, FeatureMap, ImageKey, Layer, PrecomputedExtractor,
    RandomProjectionExtractor, Scope,
};
use scene_cluster::model::{
    load_manifest, manifest_to_string, parse_manifest, split_by_participants, validate_dataset, Dataset,
    EatingOccasionRecord,
};
use scene_cluster::preprocess::{preprocess_image, PreprocessParams};
use scene_cluster::synthgen::{generate_dataset, random_environments, random_study, SynthParticipantSpec};

fn records() -> impl Strategy<Value = Vec<EatingOccasionRecord>> {
    prop::collection::vec(("[a-z][a-z0-9]{0,4}", "[a-z0-9_]{1,6}", prop::option::of("[a-z0-9 ]{1,5}")), 1..20)
        .prop_map(|rows| {
            let mut seen = BTreeSet::new();
            rows.into_iter()
                .filter(|(p, i, _)| seen.insert((p.clone(), i.clone())))
                .map(|(p, i, env)| EatingOccasionRecord {
                    image_path: format!("/data/images/{p}_{i}.png").into(),
                    mask_path: format!("/data/masks/{p}_{i}.png").into(),
                    participant_id: p,
                    image_id: i,
                    // a label of only spaces would read back as present
                    env_label: env.filter(|e| !e.trim().is_empty()),
                })
                .collect()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn manifest_round_trip(rs in records()) {
        let d = Dataset::from_records(rs).unwrap();
        let text = manifest_to_string(&d, Path::new("/data"));
        prop_assert!(text.contains("images/"));
        prop_assert!(!text.contains("/data/"));
        prop_assert_eq!(parse_manifest(&text, Path::new("/data")).unwrap(), d);
    }

    #[test]
    fn split_partitions_participants(rs in records(), pick in any::<u64>()) {
        let d = Dataset::from_records(rs).unwrap();
        let ids: Vec<String> = d.participant_ids().map(String::from).collect();
        let val: BTreeSet<String> = ids
            .iter()
            .enumerate()
            .filter(|(k, _)| pick >> (k % 64) & 1 == 1)
            .map(|(_, p)| p.clone())
            .collect();
        let s = split_by_participants(&d, &val).unwrap();
        prop_assert_eq!(s.validation.len() + s.test.len(), d.len());
        let v: BTreeSet<&str> = s.validation.participant_ids().collect();
        let t: BTreeSet<&str> = s.test.participant_ids().collect();
        prop_assert!(v.is_disjoint(&t));
        prop_assert_eq!(v, val.iter().map(String::as_str).collect::<BTreeSet<_>>());
    }
}

#[test]
fn synthetic_study_matches_its_specs() {
    let dir = tempfile::tempdir().unwrap();
    let specs = random_study(12, (10, 60), (3, 12), 4);
    let d = generate_dataset(&specs, dir.path()).unwrap();
    assert_eq!(d.participant_count(), 12);
    for s in &specs {
        assert!((10..=60).contains(&s.n_images));
        assert!((3..=12).contains(&s.environments.len()));
        let rs = d.participant_records(&s.participant_id);
        assert_eq!(rs.len(), s.n_images);
        let envs: BTreeSet<&str> = rs.iter().map(|r| r.env_label.as_deref().unwrap()).collect();
        assert_eq!(envs.len(), s.environments.len());
    }
    let reread = load_manifest(&dir.path().join("manifest.csv")).unwrap();
    assert_eq!(reread, d);
    assert!(validate_dataset(&d).is_empty());
}

#[test]
fn synthetic_dataset_is_byte_identical_across_runs() {
    let specs = random_study(2, (4, 6), (1, 2), 9);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_dataset(&specs, a.path()).unwrap();
    generate_dataset(&specs, b.path()).unwrap();
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert!(!read(a.path(), "manifest.csv").is_empty());
    // manifests hold relative paths, so the bytes match across directories
    assert_eq!(read(a.path(), "manifest.csv"), read(b.path(), "manifest.csv"));
    assert_eq!(read(a.path(), "images/p000_img000.png"), read(b.path(), "images/p000_img000.png"));
    assert_eq!(read(a.path(), "masks/p001_img001.png"), read(b.path(), "masks/p001_img001.png"));
}

#[test]
fn one_environment_shares_its_label() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthParticipantSpec {
        participant_id: "solo".into(),
        n_images: 2,
        environments: random_environments(1, 3),
        seed: 3,
    };
    let d = generate_dataset(&[spec], dir.path()).unwrap();
    let labels: Vec<_> = d.records().iter().map(|r| r.env_label.clone()).collect();
    assert_eq!(labels.len(), 2);
    assert_eq!(labels[0], labels[1]);
}

#[test]
fn exported_maps_read_back_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let specs = random_study(1, (2, 2), (1, 1), 21);
    let d = generate_dataset(&specs, &dir.path().join("data")).unwrap();
    let pid = "p000";
    let masked_dir = dir.path().join("masked");
    let mut entries = Vec::new();
    let mut crops = Vec::new();
    for r in d.participant_records(pid) {
        let img = scene_cluster::model::Image::open(&r.image_path).unwrap();
        let mask = scene_cluster::model::BinarySaliencyMask::open(&r.mask_path).unwrap();
        let p = preprocess_image(&img, &mask, &PreprocessParams::default()).unwrap();
        let g = masked_dir.join(format!("{}.global.png", r.image_id));
        p.masked.save_png(&g).unwrap();
        entries.push(ExportEntry { image_id: r.image_id.clone(), scope: Scope::Global, path: g });
        let local = p.local.expect("synthetic scenes carry a marker");
        let l = masked_dir.join(format!("{}.local.png", r.image_id));
        local.save_png(&l).unwrap();
        entries.push(ExportEntry { image_id: r.image_id.clone(), scope: Scope::Local, path: l });
        crops.push((r.image_id.clone(), p.masked, local));
    }
    let list = masked_dir.join("export_list.tsv");
    write_export_list(&list, &entries).unwrap();
    let entries = read_export_list(&list).unwrap();

    let ext = RandomProjectionExtractor::new(5, 32);
    let layers = [Layer::new(2).unwrap(), Layer::new(13).unwrap()];
    let out = dir.path().join("tensors").join(pid);
    let written = export_activation_maps(&ext, pid, &entries, &layers, &out).unwrap();
    // 2 images x 2 scopes x 2 layers
    assert_eq!(written.len(), 8);
    assert!(out.join("img000.local.2.ftns").exists());

    let pre = PrecomputedExtractor::new(dir.path().join("tensors"));
    for (image_id, masked, local) in &crops {
        let key = ImageKey { participant_id: pid, image_id };
        for &layer in &layers {
            for (scope, img) in [(Scope::Global, masked), (Scope::Local, local)] {
                let want = ext.extract(key, scope, layer, img).unwrap();
                let got = pre.extract(key, scope, layer, img).unwrap();
                assert_eq!(got, want);
                let raw = tensor::read(&pre.path_for(key, scope, layer)).unwrap();
                assert_eq!(raw.shape[0], layer.channels());
            }
            let f = compute_features(&pre, key, masked, Some(local), layer).unwrap();
            assert_eq!(f.global.dim(), layer.channels());
            assert_ne!(f.global, f.local);
        }
    }
    let layer2 = FeatureMap::read(&out.join("img001.global.2.ftns")).unwrap();
    assert_eq!(layer2.channels(), 64);
}
