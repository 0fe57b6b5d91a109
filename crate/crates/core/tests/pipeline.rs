use gpcn_core::checkpoint;
use gpcn_core::ensemble::{build_from_table, model_forward, Hierarchy};
use gpcn_core::sim::{
    generate_dataset, Dataset, LatticeShape, NormalizationMode, ParamGrid, SimConfig, StrengthParam,
};
use gpcn_core::train::{train, ScheduleKind, ScheduleSpec, TrainData};

fn tiny_config() -> SimConfig {
    SimConfig {
        shape: LatticeShape {
            n_rings: 4,
            k: 13,
            offset: 3,
        },
        ramp_steps: 200,
        hold_steps: 200,
        save_every: 50,
        ..SimConfig::desk()
    }
}

fn tiny_grid() -> ParamGrid {
    ParamGrid {
        axes: vec![(StrengthParam::LongAssoc, vec![0.5, 1.5])],
        ..ParamGrid::desk()
    }
}

#[test]
fn simulate_store_reload_and_train() {
    let ds = generate_dataset(&tiny_grid(), &tiny_config(), 9).unwrap();
    assert_eq!(ds.n, 52);
    assert_eq!(ds.frames.len(), 2 * 8);
    assert_eq!(ds.failed_runs(), 0);

    let dir = tempfile::tempdir().unwrap();
    ds.write_bin(dir.path(), serde_json::Value::Null).unwrap();
    let back = Dataset::read(dir.path()).unwrap();
    assert_eq!(back.frames.len(), ds.frames.len());
    for (a, b) in back.frames.iter().zip(&ds.frames) {
        assert_eq!(a.x.as_slice(), b.x.as_slice());
        assert_eq!(a.y.as_slice(), b.y.as_slice());
    }

    let data = TrainData::from_dataset(&back, 0, NormalizationMode::PerNodeFeature).unwrap();
    let h = Hierarchy::tube(4).unwrap();
    let spec = build_from_table("a_gpcn3", &h, back.f()).unwrap();
    let schedule = ScheduleSpec {
        kind: ScheduleKind::GammaCycle,
        total_epochs: 6,
        batches_per_epoch: 2,
        batch_size: 2,
        ..ScheduleSpec::default()
    };
    let out = train(&spec, &data, &schedule, 4).unwrap();
    assert!(out.record.aborted.is_none());
    assert_eq!(out.record.points.len(), 7);
    assert!(out.record.best_val_nmse().is_finite());

    let ck = tempfile::tempdir().unwrap();
    checkpoint::save(
        ck.path(),
        "m",
        "a_gpcn3",
        &out.best_params,
        serde_json::Value::Null,
    )
    .unwrap();
    let mut restored = spec.init(&mut gpcn_core::rng::seeded(0));
    checkpoint::load(ck.path(), "m", &mut restored).unwrap();
    let x = &data.inputs[0];
    let a = model_forward(&spec, &out.best_params, x).unwrap();
    let b = model_forward(&spec, &restored, x).unwrap();
    assert_eq!(a.as_slice(), b.as_slice());
}

#[test]
fn every_table_model_runs_on_a_small_hierarchy() {
    let h = Hierarchy::tube(4).unwrap();
    let x = gpcn_core::Matrix::zeros(2 * h.sizes()[0], 10);
    for name in gpcn_core::ensemble::MODEL_NAMES {
        let spec = build_from_table(name, &h, 10).unwrap();
        let params = spec.init(&mut gpcn_core::rng::seeded(1));
        let y = model_forward(&spec, &params, &x).unwrap();
        assert_eq!((y.rows(), y.cols()), (2 * h.sizes()[0], 1), "{name}");
        assert!(y.as_slice().iter().all(|v| v.is_finite()), "{name}");
    }
}
