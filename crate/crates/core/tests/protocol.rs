use pki_core::checkpoint::Checkpoint;
use pki_core::ensemble::projector_hash;
use pki_core::ncm::{ncm_protocol, NearestClassMean};
use pki_core::nn::{l2_normalize, softmax_cross_entropy};
use pki_core::trainer::{
    forward_logits, incremental_objective, predict, resume_protocol, run_protocol_with, Reduction,
};
use pki_core::*;

fn small_stream(seed: u64) -> SessionStream {
    let mut spec = SynthSpec::separable(seed);
    spec.d = 12;
    spec.layout = SessionLayout {
        base_classes: 8,
        num_incremental: 4,
        n_way: 3,
        k_shot: 5,
    };
    spec.train_per_base_class = 20;
    spec.test_per_class = 20;
    make_synthetic_stream(&spec).unwrap()
}

fn quick_cfg(mode: EnsembleMode) -> TrainConfig {
    let mut cfg = TrainConfig {
        base_epochs: 30,
        incr_iters: 40,
        seed: 5,
        ..TrainConfig::default()
    };
    cfg.set_mode(mode);
    cfg
}

fn train_accuracy(state: &ModelState, data: &FeatureDataset) -> f64 {
    let hits = data.iter().filter(|(f, y)| predict(state, f).unwrap() == *y).count();
    hits as f64 / data.len() as f64
}

#[test]
fn separable_base_session_is_learned() {
    let spec = SynthSpec {
        d: 16,
        layout: SessionLayout {
            base_classes: 10,
            num_incremental: 0,
            n_way: 1,
            k_shot: 1,
        },
        ..SynthSpec::separable(3)
    };
    let stream = make_synthetic_stream(&spec).unwrap();
    let train = &stream.sessions[0].train;
    let (state, log) = base_train(train, &TrainConfig::default()).unwrap();
    assert_eq!(log.losses.len(), 100);
    assert!(log.losses.last().unwrap() < log.losses.first().unwrap());
    assert!(train_accuracy(&state, train) >= 0.99);

    let mut ncm = NearestClassMean::new();
    ncm.fit(train).unwrap();
    assert!(ncm.accuracy(train).unwrap() >= 0.99);
}

#[test]
fn incremental_session_touches_only_current_projector_and_classifier() {
    let stream = small_stream(1);
    for mode in [EnsembleMode::Pki, EnsembleMode::Pkiv1, EnsembleMode::Pkiv2 { k: 2 }] {
        let cfg = quick_cfg(mode);
        let (s0, _) = base_train(&stream.sessions[0].train, &cfg).unwrap();
        let (s1, _) = incremental_train(&s0, &stream.sessions[1].train, &cfg).unwrap();
        let (s2, _) = incremental_train(&s1, &stream.sessions[2].train, &cfg).unwrap();

        // completed groups (every projector in PKI) are never rewritten
        let before = s1
            .ensemble
            .frozen_groups()
            .iter()
            .map(projector_hash)
            .collect::<Vec<_>>();
        let after = s2
            .ensemble
            .frozen_groups()
            .iter()
            .map(projector_hash)
            .collect::<Vec<_>>();
        let kept = match mode {
            EnsembleMode::Pkiv1 => 0,
            _ => before.len(),
        };
        assert_eq!(&after[..kept], &before[..kept], "{mode}");

        // old memory entries survive untouched
        let m1 = s1.memory.entry_hashes();
        let m2 = s2.memory.entry_hashes();
        assert_eq!(&m2[..m1.len()], &m1[..]);
        assert_eq!(m2.len(), 8 + 2 * 3);

        // rows of old classes keep their shape; new rows are appended
        assert_eq!(s2.classifier.num_classes(), 14);
    }
}

#[test]
fn incremental_loss_decomposes_into_examples_and_memory() {
    let stream = small_stream(2);
    let cfg = quick_cfg(EnsembleMode::Pki);
    let (mut s0, _) = base_train(&stream.sessions[0].train, &cfg).unwrap();
    s0.ensemble.add_projector(InitMode::Random, 9).unwrap();
    let cls = s0.classifier.expand(3, 9).unwrap();
    let data = &stream.sessions[1].train;

    let obj = incremental_objective(&s0.ensemble, &cls, &s0.memory, data, Reduction::Sum).unwrap();
    assert_eq!(obj.memory.terms, s0.memory.len());
    assert_eq!(obj.examples.terms, data.len());

    let ce = |f: &[f64], y: u32| {
        let logits = forward_logits(&s0.ensemble, &cls, f).unwrap();
        softmax_cross_entropy(&logits, y as usize).unwrap().0
    };
    let ex: f64 = data.iter().map(|(f, y)| ce(f, y)).sum();
    let mem: f64 = s0.memory.iter().map(|(c, e)| ce(&e.mean, c)).sum();
    assert!((obj.examples.loss - ex).abs() < 1e-10);
    assert!((obj.memory.loss - mem).abs() < 1e-10);
    assert!((obj.total_loss() - ex - mem).abs() < 1e-10);

    let mean = incremental_objective(&s0.ensemble, &cls, &s0.memory, data, Reduction::Mean).unwrap();
    assert!((mean.total_loss() - ex / data.len() as f64 - mem / s0.memory.len() as f64).abs() < 1e-12);
}

#[test]
fn embeddings_are_unit_length() {
    let stream = small_stream(3);
    let cfg = quick_cfg(EnsembleMode::Pkiv2 { k: 2 });
    let (s0, _) = base_train(&stream.sessions[0].train, &cfg).unwrap();
    for (f, _) in stream.sessions[0].test.iter().take(10) {
        let (v, _) = s0.ensemble.forward(f).unwrap();
        let (u, _) = l2_normalize(&v).unwrap();
        assert!((u.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn k_one_run_matches_pki_run() {
    let stream = small_stream(4);
    let (_, a) = run_protocol(&stream, &quick_cfg(EnsembleMode::Pki)).unwrap();
    let (_, b) = run_protocol(&stream, &quick_cfg(EnsembleMode::Pkiv2 { k: 1 })).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
}

#[test]
fn checkpoint_resume_is_bit_exact() {
    let stream = small_stream(5);
    let dir = tempfile::tempdir().unwrap();
    for mode in [EnsembleMode::Pki, EnsembleMode::Pkiv2 { k: 3 }] {
        let cfg = quick_cfg(mode);
        let path = dir.path().join(format!("{}.json", mode.name()));
        let (full_state, full_acc) = run_protocol_with(&stream, &cfg, |state, acc| {
            if state.session == 2 {
                Checkpoint::new(state.clone(), acc.clone()).save(&path)?;
            }
            Ok(())
        })
        .unwrap();

        let ckpt = Checkpoint::load(&path).unwrap();
        assert_eq!(ckpt.rng.next_session, 3);
        let (state, acc) = resume_protocol(ckpt.state, ckpt.accuracy, &stream, |_, _| Ok(())).unwrap();
        assert_eq!(acc.to_csv(), full_acc.to_csv());
        assert_eq!(state, full_state);
        assert_eq!(
            serde_json::to_string(&state).unwrap(),
            serde_json::to_string(&full_state).unwrap()
        );
    }
}

#[test]
fn resume_rejects_a_foreign_stream() {
    let stream = small_stream(6);
    let cfg = quick_cfg(EnsembleMode::Pki);
    let mut saved = None;
    run_protocol_with(&stream, &cfg, |s, a| {
        if s.session == 1 {
            saved = Some((s.clone(), a.clone()));
        }
        Ok(())
    })
    .unwrap();
    let (state, acc) = saved.unwrap();
    let other = make_synthetic_stream(&SynthSpec::separable(6)).unwrap();
    assert!(resume_protocol(state.clone(), acc.clone(), &other, |_, _| Ok(())).is_err());
    let mut short = acc.clone();
    short.per_session.pop();
    assert!(resume_protocol(state, short, &stream, |_, _| Ok(())).is_err());
}

#[test]
fn checkpoint_rejects_tampering() {
    let stream = small_stream(7);
    let (state, acc) = run_protocol(&stream, &quick_cfg(EnsembleMode::Pkiv1)).unwrap();
    let text = Checkpoint::new(state, acc).to_json().unwrap();
    assert!(Checkpoint::from_json(&text).is_ok());
    assert!(Checkpoint::from_json(&text.replace("pki-checkpoint", "other")).is_err());
    assert!(Checkpoint::from_json(&text.replacen("\"version\":1", "\"version\":9", 1)).is_err());
    assert!(Checkpoint::from_json(&text[..text.len() / 2]).is_err());
}

#[test]
fn previous_init_runs_and_differs_from_random() {
    let stream = small_stream(8);
    let mut cfg = quick_cfg(EnsembleMode::Pki);
    let (_, random) = run_protocol(&stream, &cfg).unwrap();
    cfg.init_mode = InitMode::Previous;
    let (state, previous) = run_protocol(&stream, &cfg).unwrap();
    assert_eq!(previous.sessions(), 5);
    assert_eq!(state.ensemble.materialized_count(), 5);
    assert_ne!(random.to_csv(), previous.to_csv());
}

#[test]
fn ncm_oracle_is_perfect_on_separable_stream() {
    let stream = make_synthetic_stream(&SynthSpec::separable(1)).unwrap();
    let acc = ncm_protocol(&stream).unwrap();
    assert_eq!(acc.len(), 5);
    assert!(acc.iter().all(|&a| a >= 0.95));
}
