use shapecorr::config::build_dataset;
use shapecorr::mesh::icosphere;
use shapecorr::model::{match_shapes, Shape};
use shapecorr::synth::{generate, SyntheticConfig};
use shapecorr::train::{train_loop, Checkpoint, Dataset, TrainConfig, Trainer};

fn synthetic_cfg(pairs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::desk_preset();
    let syn = SyntheticConfig {
        pairs,
        ..Default::default()
    };
    cfg.model.sglca.sem_dim = syn.sem_dim;
    cfg.data.synthetic = Some(syn);
    cfg
}

#[test]
fn self_pair_keeps_identity_after_300_steps() {
    let mut cfg = synthetic_cfg(1);
    cfg.steps = 300;
    let sem = generate(cfg.data.synthetic.as_ref().unwrap()).unwrap().remove(0).semantic;
    let shape = Shape::prepare(icosphere(2).normalized_to_unit_area(), cfg.model.k, cfg.model.k_nb, Some(sem)).unwrap();
    let data = Dataset::new(vec![shape.clone()], vec![(0, 0)], &cfg.model).unwrap();
    let mut trainer = Trainer::new(cfg.clone()).unwrap();
    trainer.run(&data, |_| Ok(()), |_| Ok(())).unwrap();
    assert_eq!(trainer.step, 300);
    let map = match_shapes(&trainer.params, &cfg.model, &shape, &shape).unwrap();
    let hits = map.iter().enumerate().filter(|&(i, &j)| i == j).count();
    assert!(hits * 100 >= 95 * map.len(), "{hits}/{} identity", map.len());
}

#[test]
fn resume_reproduces_uninterrupted_run_bit_exactly() {
    let mut cfg = synthetic_cfg(2);
    cfg.steps = 16;
    let (data, _) = build_dataset(&cfg).unwrap();

    let mut full = Trainer::new(cfg.clone()).unwrap();
    let mut log_full = Vec::new();
    full.run(&data, |r| Ok(log_full.push(r.csv_line())), |_| Ok(())).unwrap();

    let mut first = Trainer::new(cfg.clone()).unwrap();
    let mut log_split = Vec::new();
    first
        .run_until(&data, 7, &mut |r| Ok(log_split.push(r.csv_line())), &mut |_| Ok(()))
        .unwrap();
    let bytes = first.checkpoint().to_bytes().unwrap();
    drop(first);
    let mut resumed = Trainer::resume(cfg, Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    resumed.run(&data, |r| Ok(log_split.push(r.csv_line())), |_| Ok(())).unwrap();

    assert_eq!(log_full, log_split);
    assert_eq!(
        full.checkpoint().to_bytes().unwrap(),
        resumed.checkpoint().to_bytes().unwrap()
    );
}

#[test]
fn resume_rejects_changed_config() {
    let cfg = synthetic_cfg(1);
    let ck = Trainer::new(cfg.clone()).unwrap().checkpoint();
    let mut other = cfg;
    other.lr *= 2.0;
    assert!(Trainer::resume(other, ck).is_err());
}

#[test]
fn total_loss_halves_on_synthetic_suite() {
    let cfg = synthetic_cfg(8);
    let (data, _) = build_dataset(&cfg).unwrap();
    let (_, reports) = train_loop(cfg.clone(), &data, None).unwrap();
    assert_eq!(reports.len() as u64, cfg.steps);
    for r in &reports {
        for v in [r.bij, r.orth, r.couple, r.cfm, r.total] {
            assert!(v >= 0.0, "negative loss term at step {}: {}", r.step, r.csv_line());
        }
    }
    let initial = reports[0].total;
    let tail = &reports[reports.len() - data.pairs.len()..];
    let last_epoch = tail.iter().map(|r| r.total).sum::<f64>() / tail.len() as f64;
    assert!(last_epoch <= 0.5 * initial, "{initial} -> {last_epoch}");
}

fn changed_tensors(cfg: &TrainConfig, steps: usize) -> (Vec<String>, Vec<String>) {
    let (data, _) = build_dataset(cfg).unwrap();
    let mut t = Trainer::new(cfg.clone()).unwrap();
    let before = t.params.clone();
    for _ in 0..steps {
        t.step_once(&data).unwrap();
    }
    let (mut moved, mut still) = (Vec::new(), Vec::new());
    for (name, old) in before.iter() {
        let new = t.params.get(name).unwrap();
        let same = old.data().iter().zip(new.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        if same {
            still.push(name.to_string());
        } else {
            moved.push(name.to_string());
        }
    }
    (moved, still)
}

#[test]
fn gradient_reaches_every_parameter() {
    let mut cfg = synthetic_cfg(1);
    cfg.model.sglca.alpha_gate_init = 0.5;
    // FiLM weights start at zero, so the time embedding sees no gradient
    // until they have moved once.
    let (_, still) = changed_tensors(&cfg, 1);
    assert!(still.iter().all(|n| n.starts_with("vel.embed.")), "unchanged after one step: {still:?}");
    let (_, still) = changed_tensors(&cfg, 2);
    assert!(still.is_empty(), "unchanged after two steps: {still:?}");
}

#[test]
fn disabled_flow_term_leaves_velocity_net_untouched() {
    let mut cfg = synthetic_cfg(1);
    cfg.model.sglca.alpha_gate_init = 0.5;
    cfg.loss.cfm = 0.0;
    let (moved, still) = changed_tensors(&cfg, 2);
    assert!(still.iter().all(|n| n.starts_with("vel.")), "{still:?}");
    assert!(moved.iter().all(|n| !n.starts_with("vel.")), "{moved:?}");
    assert!(!still.is_empty());
}
