mod common;

use common::{small_dataset, tiny_config};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdfcluster::eval::{evaluate, export_meshes, label_of, palette, render_views, score_maps};
use sdfcluster::losses::Mode;
use sdfcluster::mesh::TriangleMesh;
use sdfcluster::train::Trainer;

#[test]
fn ground_truth_scores_perfectly_against_itself() {
    let ds = small_dataset(4, 32);
    let w = ds.intrinsics.width;
    let inst: Vec<Vec<u16>> = ds.views.iter().map(|v| v.gt_instance.clone()).collect();
    let r = score_maps(Mode::Instance, &inst, &inst, w, 2).unwrap();
    assert_eq!((r.pq_scene, r.rq_scene, r.sq_scene, r.ari, r.edge_accuracy), (1.0, 1.0, 1.0, 1.0, 1.0));
    let sem: Vec<Vec<u16>> = ds.views.iter().map(|v| v.gt_semantic.clone()).collect();
    let r = score_maps(Mode::Semantic, &sem, &sem, w, 2).unwrap();
    assert_eq!((r.miou, r.pq_scene), (1.0, 1.0));
}

#[test]
fn untrained_field_scores_near_zero() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(4, 32);
    let t = Trainer::new(tiny_config(dir.path(), dir.path()), ds.clone()).unwrap();
    let r = evaluate(&t.checkpoint(), &ds).unwrap();
    assert!(r.pq_scene < 0.1, "{}", r.to_text());
    assert_eq!(r.views, 4);
    assert_eq!(r.pixels, 4 * 16 * 16);
}

#[test]
fn labels_ignore_positive_rescaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let o: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..1.0)).collect();
        let k = rng.gen_range(1e-3..1e3);
        let scaled: Vec<f64> = o.iter().map(|x| x * k).collect();
        assert_eq!(label_of(&o), label_of(&scaled));
    }
    assert_eq!(label_of(&[0.2, 0.5, 0.5]), 1);
}

#[test]
fn palette_is_fixed_and_distinct() {
    let p = palette();
    assert_eq!(p, palette());
    assert_eq!(p[0], [0, 0, 0]);
    for i in 1..32 {
        for j in 0..i {
            assert_ne!(p[i], p[j], "{i} {j}");
        }
    }
}

#[test]
fn render_and_mesh_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(3, 32);
    let t = Trainer::new(tiny_config(dir.path(), dir.path()), ds.clone()).unwrap();
    let ckpt = t.checkpoint();
    let out = dir.path().join("render");
    let preds = render_views(&ckpt, &ds, &out).unwrap();
    assert_eq!(preds.len(), 3);
    for sub in ["rgb", "depth", "normal", "labels"] {
        for i in 0..3 {
            assert!(out.join(sub).join(format!("{i:04}.png")).is_file(), "{sub} {i}");
        }
    }
    assert_eq!(render_views(&ckpt, &ds, &dir.path().join("again")).unwrap(), preds);

    let meshes = dir.path().join("meshes");
    let entries = export_meshes(&ckpt, &meshes).unwrap();
    assert_eq!(entries.len(), ckpt.field.channels() - 1);
    assert!(meshes.join("manifest.json").is_file());
    for e in &entries {
        match &e.file {
            Some(f) => {
                let m = TriangleMesh::read_obj(&meshes.join(f)).unwrap();
                assert_eq!(m.triangles.len(), e.triangles);
            }
            None => assert_eq!(e.triangles, 0),
        }
    }
    assert!(entries.iter().any(|e| e.file.is_some()));
}
