use lai_fusion::dataio::{NormStats, SceneSample};
use lai_fusion::model::{
    forward, init_params, load_params, save_params, Architecture, Batch, BatchVars, Checkpoint,
    EncoderKind, InputAblation, ModelConfig, ParamStore,
};
use lai_fusion::synthgen::{generate_series, SceneConfig};
use lai_fusion::tensor::{Tape, Tensor};
use lai_fusion::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small() -> ModelConfig {
    ModelConfig {
        encoder_depth: 2,
        encoder_base: 4,
        decoder_depth: 2,
        decoder_base: 4,
        features: 4,
    }
}

fn samples(n: usize, tile: usize) -> Vec<SceneSample> {
    generate_series(&SceneConfig {
        seed: 11,
        tile_size: tile,
        n_samples: n,
        ..SceneConfig::default()
    })
    .unwrap()
}

/// Fresh parameters with the zero-initialised prediction layers replaced by
/// random values, so outputs depend on every layer.
fn generic_params(cfg: &ModelConfig, arch: Architecture, seed: u64) -> ParamStore<f32> {
    let mut params = init_params::<f32>(cfg, arch, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    for (name, t) in params.iter_mut() {
        if name.contains(".head.") || name.starts_with("dec.unet.out.") {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-0.5f32..0.5));
        }
    }
    params
}

fn conv(cout: usize, cin: usize, k: usize) -> usize {
    cout * cin * k * k + cout
}

fn unet_count(depth: usize, base: usize, cin: usize, cout: usize) -> usize {
    let mut n = 0;
    let mut c_in = cin;
    for l in 0..depth {
        let c = base << l;
        n += conv(c, c_in, 3) + conv(c, c, 3);
        c_in = c;
    }
    let c = base << depth;
    n += conv(c, c_in, 3) + conv(c, c, 3);
    for l in 0..depth {
        let c = base << l;
        n += 2 * conv(c, 2 * c, 3) + conv(c, c, 3);
    }
    n + conv(cout, base, 1)
}

fn encoder_count(cfg: &ModelConfig, primary: usize) -> usize {
    conv(4, 18, 1)
        + (2 * 8 + 8)
        + (8 * 8 + 8)
        + unet_count(
            cfg.encoder_depth,
            cfg.encoder_base,
            primary + 12,
            cfg.features,
        )
        + conv(1, cfg.features, 1)
}

#[test]
fn parameter_counts_match_closed_form() {
    let cfg = ModelConfig::default();
    let e1 = init_params::<f32>(&cfg, Architecture::Encoder(EncoderKind::Enc1), 0).unwrap();
    let e2 = init_params::<f32>(&cfg, Architecture::Encoder(EncoderKind::Enc2), 0).unwrap();
    let full = init_params::<f32>(&cfg, Architecture::Full, 0).unwrap();
    assert_eq!(e1.numel(), encoder_count(&cfg, 6));
    assert_eq!(e2.numel(), encoder_count(&cfg, 2));
    let dec = unet_count(cfg.decoder_depth, cfg.decoder_base, 2 * cfg.features, 1);
    assert_eq!(full.numel(), e1.numel() + e2.numel() + dec);
    // Independently tabulated totals for the default widths.
    assert_eq!(e1.numel(), 538_397);
    assert_eq!(e2.numel(), 537_821);
    assert_eq!(full.numel(), 1_210_235);
}

#[test]
fn output_shapes() {
    let cfg = small();
    let data = samples(3, 16);
    let refs: Vec<&SceneSample> = data.iter().collect();
    let batch =
        Batch::<f32>::from_samples(&refs, &NormStats::fit(&data), InputAblation::NONE).unwrap();
    for arch in [
        Architecture::Full,
        Architecture::Encoder(EncoderKind::Enc1),
        Architecture::Encoder(EncoderKind::Enc2),
    ] {
        let params = init_params::<f32>(&cfg, arch, 1).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let vars = batch.bind(&mut tape);
        let p = forward(&mut tape, &bound, &cfg, arch, &vars).unwrap();
        assert_eq!(tape.value(p.primary()).shape(), [3, 1, 16, 16]);
        let present = [p.dec, p.enc1, p.enc2]
            .iter()
            .filter(|v| v.is_some())
            .count();
        assert_eq!(present, if arch == Architecture::Full { 3 } else { 1 });
    }
}

#[test]
fn indivisible_tile_is_a_geometry_error() {
    let cfg = small();
    let data = samples(1, 10);
    let refs: Vec<&SceneSample> = data.iter().collect();
    let params = init_params::<f32>(&cfg, Architecture::Full, 0).unwrap();
    let err = lai_fusion::model::predict(
        &params,
        &cfg,
        Architecture::Full,
        InputAblation::NONE,
        &NormStats::fit(&data),
        &refs,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Geometry(_)), "{err}");
}

fn random_inputs(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> [Tensor<f32>; 4] {
    let mut r = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.gen_range(-1.0f32..1.0));
    [
        r(&[n, 6, h, w]),
        r(&[n, 2, h, w]),
        r(&[n, 18, h, w]),
        r(&[n, 2]),
    ]
}

fn run_full(params: &ParamStore<f32>, cfg: &ModelConfig, x: &[Tensor<f32>; 4]) -> Tensor<f32> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let vars = BatchVars {
        s1: tape.constant(x[0].clone()),
        lai_past: tape.constant(x[1].clone()),
        masks: tape.constant(x[2].clone()),
        season: tape.constant(x[3].clone()),
    };
    let p = forward(&mut tape, &bound, cfg, Architecture::Full, &vars).unwrap();
    tape.value(p.primary()).clone()
}

fn crop(t: &Tensor<f32>, x0: usize, w: usize) -> Tensor<f32> {
    let (n, c, h, full_w) = t.dims4().unwrap();
    Tensor::from_fn(&[n, c, h, w], |i| {
        let col = i % w;
        let rest = i / w;
        t.data()[rest * full_w + x0 + col]
    })
}

#[test]
fn interior_is_translation_covariant() {
    // Shifting the input by a multiple of the pooling stride shifts the
    // output away from the zero-padded border.
    let cfg = small();
    let params = generic_params(&cfg, Architecture::Full, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (h, w, shift, margin) = (8usize, 160usize, 4usize, 64usize);
    let big = random_inputs(&mut rng, 1, h, w + shift);
    let a: [Tensor<f32>; 4] = [
        crop(&big[0], 0, w),
        crop(&big[1], 0, w),
        crop(&big[2], 0, w),
        big[3].clone(),
    ];
    let b: [Tensor<f32>; 4] = [
        crop(&big[0], shift, w),
        crop(&big[1], shift, w),
        crop(&big[2], shift, w),
        big[3].clone(),
    ];
    let ya = run_full(&params, &cfg, &a);
    let yb = run_full(&params, &cfg, &b);
    let mut checked = 0;
    for row in 0..h {
        for col in margin..w - margin - shift {
            let va = ya.data()[row * w + col + shift];
            let vb = yb.data()[row * w + col];
            assert!(
                (va - vb).abs() <= 1e-5 * va.abs().max(1.0),
                "row {row} col {col}: {va} vs {vb}"
            );
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn batch_order_does_not_change_per_sample_output() {
    let cfg = small();
    let params = generic_params(&cfg, Architecture::Full, 2);
    let data = samples(4, 16);
    let stats = NormStats::fit(&data);
    let refs: Vec<&SceneSample> = data.iter().collect();
    let rev: Vec<&SceneSample> = data.iter().rev().collect();
    let p = lai_fusion::model::predict(
        &params,
        &cfg,
        Architecture::Full,
        InputAblation::NONE,
        &stats,
        &refs,
    )
    .unwrap();
    let mut q = lai_fusion::model::predict(
        &params,
        &cfg,
        Architecture::Full,
        InputAblation::NONE,
        &stats,
        &rev,
    )
    .unwrap();
    q.reverse();
    assert_eq!(p, q);
    assert!(p.iter().flatten().any(|&v| v != 0.0));
    let single = lai_fusion::model::predict(
        &params,
        &cfg,
        Architecture::Full,
        InputAblation::NONE,
        &stats,
        &refs[2..3],
    )
    .unwrap();
    assert_eq!(single[0], p[2]);
}

#[test]
fn fresh_models_predict_zero_and_heads_set_the_offset() {
    let cfg = small();
    let data = samples(2, 16);
    let refs: Vec<&SceneSample> = data.iter().collect();
    let stats = NormStats::fit(&data);
    for arch in [
        Architecture::Full,
        Architecture::Encoder(EncoderKind::Enc1),
        Architecture::Encoder(EncoderKind::Enc2),
    ] {
        let mut params = init_params::<f32>(&cfg, arch, 3).unwrap();
        let out =
            lai_fusion::model::predict(&params, &cfg, arch, InputAblation::NONE, &stats, &refs)
                .unwrap();
        assert!(out.iter().flatten().all(|&v| v == 0.0), "{arch:?}");
        let bias = match arch {
            Architecture::Full => "dec.unet.out.b",
            Architecture::Encoder(EncoderKind::Enc1) => "enc1.head.b",
            Architecture::Encoder(EncoderKind::Enc2) => "enc2.head.b",
        };
        params.get_mut(bias).unwrap().data_mut()[0] = 0.25;
        let out =
            lai_fusion::model::predict(&params, &cfg, arch, InputAblation::NONE, &stats, &refs)
                .unwrap();
        assert!(out.iter().flatten().all(|&v| v == 0.25), "{arch:?}");
    }
}

fn checkpoint(arch: Architecture) -> Checkpoint {
    Checkpoint {
        config: small(),
        architecture: arch,
        ablation: InputAblation::NONE,
        stats: NormStats::IDENTITY,
        params: init_params(&small(), arch, 4).unwrap(),
    }
}

#[test]
fn checkpoint_round_trip_and_partial_load() {
    let dir = tempfile::tempdir().unwrap();
    let enc = checkpoint(Architecture::Encoder(EncoderKind::Enc2));
    save_params(dir.path(), &enc).unwrap();
    let back = load_params(dir.path()).unwrap();
    assert_eq!(back, enc);
    for ((_, a), (_, b)) in back.params.iter().zip(enc.params.iter()) {
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }

    let mut full = init_params::<f32>(&small(), Architecture::Full, 99).unwrap();
    let before = full.clone();
    full.load_prefix(&back.params, "enc2.").unwrap();
    for (name, t) in full.iter() {
        if name.starts_with("enc2.") {
            assert_eq!(t, back.params.get(name).unwrap());
        } else {
            assert_eq!(t, before.get(name).unwrap(), "{name} changed");
        }
    }
}

#[test]
fn renamed_parameter_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    save_params(
        dir.path(),
        &checkpoint(Architecture::Encoder(EncoderKind::Enc1)),
    )
    .unwrap();
    let manifest = dir.path().join("manifest.json");
    let text = std::fs::read_to_string(&manifest).unwrap();
    std::fs::write(
        &manifest,
        text.replacen("enc1.head.w", "enc1.head.weight", 1),
    )
    .unwrap();
    let loaded = load_params(dir.path()).unwrap();
    let mut full = init_params::<f32>(&small(), Architecture::Full, 0).unwrap();
    let err = full.load_prefix(&loaded.params, "enc1.").unwrap_err();
    let Error::ParamMismatch(m) = &err else {
        panic!("{err}")
    };
    assert_eq!(m.missing, vec!["enc1.head.w".to_string()]);
    assert_eq!(m.unexpected, vec!["enc1.head.weight".to_string()]);
    assert!(err.to_string().contains("enc1.head.w"));
}
