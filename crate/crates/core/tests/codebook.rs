use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ris_lab_core::codebook::*;
use ris_lab_core::dataset::NormStats;
use ris_lab_core::neural::{BiLstmNet, ModelDims};
use ris_lab_core::scene::{desk_template, realize, RisConfig, SceneTemplate, SoState};
use ris_lab_core::wavesim::{channel_between, Role};

const EVAL_SITES: [usize; 5] = [0, 6, 12, 18, 24];

fn fixture(n_obj: usize) -> SceneTemplate {
    let mut tpl = desk_template(8);
    tpl.grid.n_points = 4;
    tpl.objects.truncate(n_obj);
    tpl
}

fn localizer(tpl: &SceneTemplate, n_classes: usize, seed: u64) -> Localizer {
    let input = 2 + 2 * tpl.n_sense() + tpl.n_objects();
    let dims = ModelDims {
        input,
        hidden1: 6,
        hidden2: 6,
        n_classes,
        embed: 3,
    };
    let theta = dims.init(&mut ChaCha8Rng::seed_from_u64(seed));
    // Channels on this fixture are O(0.1); scale them up so predictions
    // actually depend on the configuration.
    let mut std = vec![0.05; input];
    for s in &mut std[input - tpl.n_objects()..] {
        *s = 0.3;
    }
    Localizer {
        net: BiLstmNet::new(dims),
        theta,
        norm: NormStats {
            mean: vec![0.0; input],
            std,
        },
    }
}

fn candidates(n: usize) -> Vec<RisConfig> {
    (0..n)
        .map(|k| {
            RisConfig::new(
                (0..8)
                    .map(|b| (k * 37 + b * 11 + (k >> 1)) % 3 == 0)
                    .collect(),
            )
        })
        .collect()
}

fn info() -> CalibrationInfo {
    CalibrationInfo {
        scene_text: "scene".into(),
        scene_hash: "s".repeat(64),
        checkpoint_hash: "c".repeat(64),
        seed: 1,
    }
}

fn calibrated(n_obj: usize, resolution: usize, cands: &[RisConfig], model: &Localizer) -> Codebook {
    calibrate(
        model,
        &fixture(n_obj),
        cands,
        resolution,
        &EVAL_SITES,
        &info(),
    )
    .unwrap()
}

/// Per-site squared errors through the full dense simulator rather than the
/// sweep solver used during calibration.
fn direct_errors(
    tpl: &SceneTemplate,
    p: &SoState,
    config: &RisConfig,
    k: usize,
    model: &Localizer,
) -> Vec<f64> {
    let sites = tpl.ue_sites();
    EVAL_SITES
        .iter()
        .map(|&site| {
            let s = realize(tpl, config, p, site).unwrap();
            let mut rx = s.indices_of(Role::Ue);
            rx.extend(tpl.sense.iter().map(|&j| s.ris_elements[j]));
            let h = channel_between(&s, &[0], &rx, &tpl.grid).unwrap();
            let nf = tpl.grid.n_points;
            let h_ue: Vec<Complex64> = (0..nf).map(|f| h.get(0, 0, f)).collect();
            let h_sense: Vec<Vec<Complex64>> = (0..tpl.n_sense())
                .map(|j| (0..nf).map(|f| h.get(1 + j, 0, f)).collect())
                .collect();
            let u = model.locate(&[(&h_ue, &h_sense, &p.t, k)]).unwrap()[0];
            (u[0] - sites[site].x).powi(2) + (u[1] - sites[site].y).powi(2)
        })
        .collect()
}

#[test]
fn stored_entries_are_optimal_and_reproducible() {
    let tpl = fixture(2);
    let cands = candidates(4);
    let model = localizer(&tpl, 4, 2);
    let cb = calibrated(2, 3, &cands, &model);
    assert_eq!(cb.entries.len(), 9);
    let sites: Vec<_> = EVAL_SITES.iter().map(|&i| tpl.ue_sites()[i]).collect();
    for e in &cb.entries {
        let p = bucket_center(&e.key, 3);
        let solver = state_solver(&tpl, &p, &sites).unwrap();
        let recomputed: Vec<f64> = cands
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let se = site_errors(&tpl, &solver, &sites, &p, c, k, &model).unwrap();
                se.iter().sum::<f64>() / se.len() as f64
            })
            .collect();
        for (k, m) in recomputed.iter().enumerate() {
            assert!((m - e.candidate_mse[k]).abs() <= 1e-12 * m.max(1.0));
            assert!(
                *m >= e.expected_mse - 1e-12,
                "bucket {:?}: candidate {k} beats the stored entry",
                e.key
            );
        }
        assert_eq!(e.expected_mse, e.candidate_mse[e.k_index]);
        assert_eq!(e.config, cands[e.k_index].to_bitstring());
        assert!(
            e.candidate_mse.iter().any(|&m| m != e.expected_mse),
            "candidates are indistinguishable"
        );

        let direct = direct_errors(&tpl, &p, &cands[e.k_index], e.k_index, &model);
        let direct_mse = direct.iter().sum::<f64>() / direct.len() as f64;
        assert!((direct_mse - e.expected_mse).abs() <= 1e-6 * e.expected_mse.max(1.0));
    }
}

#[test]
fn single_candidate_fills_every_bucket() {
    let tpl = fixture(1);
    let model = localizer(&tpl, 3, 3);
    let cb = calibrated(1, 4, &candidates(1), &model);
    assert_eq!(cb.entries.len(), 4);
    assert!(cb.entries.iter().all(|e| e.k_index == 0));
}

#[test]
fn duplicate_candidates_resolve_to_the_lower_index() {
    let tpl = fixture(1);
    let mut model = localizer(&tpl, 3, 4);
    // The model also sees the configuration index; give indices 0 and 1 the
    // same embedding so the duplicates score identically.
    let (e, width) = (model.net.dims.layout().embed, model.net.dims.embed);
    let row0: Vec<f64> = model.theta[e.offset..e.offset + width].to_vec();
    model.theta[e.offset + width..e.offset + 2 * width].copy_from_slice(&row0);
    let c = candidates(3).remove(2);
    let cb = calibrated(1, 4, &[c.clone(), c], &model);
    for e in &cb.entries {
        assert_eq!(e.candidate_mse[0], e.candidate_mse[1]);
        assert_eq!(e.k_index, 0);
    }
}

#[test]
fn fingerprints_cover_every_bucket_and_site() {
    let tpl = fixture(2);
    let model = localizer(&tpl, 2, 5);
    let cb = calibrated(2, 2, &candidates(2), &model);
    assert_eq!(cb.fingerprints.len(), 4 * EVAL_SITES.len());
    assert_eq!(cb.sense_shape, [tpl.n_sense(), 4]);
    assert_eq!(cb.probe_config, "00000000");
    for fp in &cb.fingerprints {
        assert!(EVAL_SITES.contains(&fp.site));
        assert_eq!(fp.features.len(), 2 * tpl.n_sense() * 4);
    }
}

#[test]
fn cell_center_queries_recover_their_bucket() {
    let tpl = fixture(2);
    let model = localizer(&tpl, 3, 6);
    let cb = calibrated(2, 4, &candidates(3), &model);
    let mut hits = 0;
    for e in &cb.entries {
        let p = bucket_center(&e.key, 4);
        let out = runtime_step(&tpl, &p, 12, &cb, &model).unwrap();
        if out.bucket == e.key {
            hits += 1;
            assert_eq!(out.k_index, e.k_index);
            assert_eq!(out.config, e.config);
            assert_eq!(out.matched_site, 12);
            assert!(out.distance < 1e-12);
        }
    }
    assert!(
        hits * 100 >= 95 * cb.entries.len(),
        "{hits}/{} buckets recovered",
        cb.entries.len()
    );
}

#[test]
fn single_bucket_codebook_always_applies_its_entry() {
    let tpl = fixture(2);
    let model = localizer(&tpl, 3, 7);
    let cb = calibrated(2, 1, &candidates(3), &model);
    assert_eq!(cb.entries.len(), 1);
    for (i, t) in [[0.1, 0.9], [0.5, 0.5], [0.77, 0.02]].iter().enumerate() {
        let out = runtime_step(&tpl, &SoState::new(t.to_vec()), 5 * i, &cb, &model).unwrap();
        assert_eq!(out.bucket, vec![0, 0]);
        assert_eq!(out.k_index, cb.entries[0].k_index);
    }
}

#[test]
fn runtime_localizes_with_the_estimated_state() {
    let tpl = fixture(1);
    let model = localizer(&tpl, 3, 8);
    let cb = calibrated(1, 4, &candidates(3), &model);
    let hidden = bucket_center(&[2], 4);
    let out = runtime_step(&tpl, &hidden, 6, &cb, &model).unwrap();
    let k = cb.entry(&[2]).unwrap().k_index;
    let sites: Vec<_> = [6].iter().map(|&i| tpl.ue_sites()[i]).collect();
    let solver = state_solver(&tpl, &hidden, &sites).unwrap();
    let se = site_errors(&tpl, &solver, &sites, &hidden, &cb.candidate(k), k, &model).unwrap();
    let err = (out.u_hat[0] - sites[0].x).powi(2) + (out.u_hat[1] - sites[0].y).powi(2);
    assert!((err - se[0]).abs() < 1e-12);
}

#[test]
fn episodes_replay_step_by_step() {
    let tpl = fixture(1);
    let model = localizer(&tpl, 3, 9);
    let cb = calibrated(1, 4, &candidates(3), &model);
    let schedule: Vec<(SoState, usize)> = (0..6)
        .map(|i| {
            (
                SoState::new(vec![(0.137 * i as f64 + 0.05) % 1.0]),
                (7 * i) % 25,
            )
        })
        .collect();
    let ep = run_episode(&tpl, &schedule, &cb, &model).unwrap();
    assert_eq!(ep.len(), 6);
    for ((p, s), o) in schedule.iter().zip(&ep) {
        assert_eq!(&runtime_step(&tpl, p, *s, &cb, &model).unwrap(), o);
    }
    assert_eq!(ep, run_episode(&tpl, &schedule, &cb, &model).unwrap());
}

#[test]
fn calibration_is_deterministic_and_file_round_trip_is_exact() {
    let tpl = fixture(1);
    let model = localizer(&tpl, 3, 10);
    let a = calibrated(1, 4, &candidates(3), &model);
    let b = calibrated(1, 4, &candidates(3), &model);
    assert_eq!(codebook_bytes(&a), codebook_bytes(&b));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cb.json");
    save_codebook(&a, &path).unwrap();
    let back = load_codebook(&path).unwrap();
    assert_eq!(back, a);
    assert_eq!(codebook_bytes(&back), codebook_bytes(&a));
}

#[test]
fn malformed_codebooks_are_rejected() {
    let tpl = fixture(1);
    let model = localizer(&tpl, 3, 11);
    let cb = calibrated(1, 2, &candidates(2), &model);
    let mut missing = cb.clone();
    missing.entries.pop();
    let mut wrong_config = cb.clone();
    wrong_config.entries[0].config = "11111111".into();
    let mut short_fp = cb.clone();
    short_fp.fingerprints[0].features.pop();
    for bad in [missing, wrong_config, short_fp] {
        assert!(matches!(
            parse_codebook(&codebook_bytes(&bad)),
            Err(CodebookError::Format(_))
        ));
    }
    assert!(matches!(
        parse_codebook(b"{"),
        Err(CodebookError::Format(_))
    ));
}

#[test]
fn calibration_input_errors() {
    let tpl = fixture(1);
    let model = localizer(&tpl, 2, 12);
    let c = candidates(2);
    assert!(matches!(
        calibrate(&model, &tpl, &c, 0, &EVAL_SITES, &info()),
        Err(CodebookError::Resolution)
    ));
    assert!(matches!(
        calibrate(&model, &tpl, &[], 2, &EVAL_SITES, &info()),
        Err(CodebookError::NoCandidates)
    ));
    assert!(matches!(
        calibrate(&model, &tpl, &c, 2, &[], &info()),
        Err(CodebookError::NoSites)
    ));
    assert!(matches!(
        calibrate(&model, &tpl, &c, 2, &[25], &info()),
        Err(CodebookError::SiteIndex {
            index: 25,
            count: 25
        })
    ));
    assert!(matches!(
        calibrate(
            &model,
            &tpl,
            &[RisConfig::zeros(7)],
            2,
            &EVAL_SITES,
            &info()
        ),
        Err(CodebookError::ConfigLength {
            expected: 8,
            got: 7
        })
    ));
    assert!(matches!(
        calibrate(&model, &tpl, &candidates(3), 2, &EVAL_SITES, &info()),
        Err(CodebookError::Model(_))
    ));
}
