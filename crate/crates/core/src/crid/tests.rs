use super::*;
use crate::numcore::gradcheck::{grad_check, Coverage};
use crate::textenc::{TextEncoder, TextEncoderConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn build(cfg: CridConfig, dim: usize, n: usize, patch_len: usize, seed: u64) -> (Crid, ParamStore) {
    let crid = Crid::new(cfg, dim, n, patch_len).unwrap();
    let mut ps = ParamStore::new();
    crid.init(&mut ps, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (crid, ps)
}

fn inputs(rng: &mut ChaCha8Rng, n: usize, d: usize, n_t: usize, d_t: usize) -> (Tensor, Tensor, Tensor) {
    (
        init_uniform(rng, &[n, d], 1),
        init_uniform(rng, &[1, d], 1),
        init_uniform(rng, &[n_t, d_t], 1).scale(2.0),
    )
}

#[test]
fn default_context_and_shapes() {
    let (crid, ps) = build(CridConfig::default(), 32, 16, 64, 1);
    assert_eq!(crid.num_region_tokens(), 5);
    assert_eq!(crid.context_len(64).unwrap(), 85);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (p, c, t) = inputs(&mut rng, 16, 32, 64, 48);
    let out = crid.predict(&ps, &p, &c, &t).unwrap();
    assert_eq!(out.guided.tokens.shape(), [64, 32]);
    assert_eq!(out.memory.shape(), [8, 32]);
    assert_eq!(out.p_out.shape(), [16, 32]);
    assert_eq!(out.patches.shape(), [16, 64]);
    assert!(crid.context_len(65).is_err());
}

#[test]
fn oversized_memory_is_a_config_error() {
    let cfg = CridConfig {
        memory_tokens: 22,
        ..CridConfig::default()
    };
    assert!(matches!(Crid::new(cfg, 32, 16, 64), Err(Error::Config(_))));
    let cfg = CridConfig {
        memory_tokens: 21,
        ..CridConfig::default()
    };
    assert!(Crid::new(cfg, 32, 16, 64).is_ok());
}

#[test]
fn zero_output_projection_is_residual_identity() {
    let (crid, mut ps) = build(CridConfig::default(), 32, 16, 64, 3);
    let name = crid.output_projection().to_string();
    ps.set_value(&name, Tensor::zeros(&[32, 32])).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (p, c, t) = inputs(&mut rng, 16, 32, 20, 48);
    let out = crid.predict(&ps, &p, &c, &t).unwrap();
    assert_eq!(out.p_hat, p);
}

#[test]
fn identity_configuration_passes_tokens_through() {
    let cfg = CridConfig {
        mlp_activation: Activation::Identity,
        ..CridConfig::default()
    };
    let (crid, mut ps) = build(cfg, 32, 16, 64, 5);
    ps.set_value(crid.output_projection(), Tensor::zeros(&[32, 32])).unwrap();
    let mut fc1 = Tensor::zeros(&[32, 128]);
    let mut fc2 = Tensor::zeros(&[128, 32]);
    for i in 0..32 {
        fc1.set(i, i, 1.0);
        fc2.set(i, i, 1.0);
    }
    ps.set_value("crid.mlp.fc1.w", fc1).unwrap();
    ps.set_value("crid.mlp.fc2.w", fc2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (p, c, t) = inputs(&mut rng, 16, 32, 12, 48);
    assert_eq!(crid.predict(&ps, &p, &c, &t).unwrap().p_out, p);
}

#[test]
fn null_prompt_runs_through_unchanged_architecture() {
    let (crid, ps) = build(CridConfig::default(), 32, 16, 64, 7);
    let t = TextEncoder::new(TextEncoderConfig::default()).encode("");
    assert_eq!(t.rows(), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (p, c, _) = inputs(&mut rng, 16, 32, 1, 48);
    let out = crid.predict(&ps, &p, &c, &t).unwrap();
    assert!(out.patches.all_finite());
    assert_eq!(out.guided.alpha.data(), &[1.0]);
}

#[test]
fn full_context_variant_attends_over_every_token() {
    let cfg = CridAblation::NoHopfield.apply(&CridConfig::default());
    let (crid, ps) = build(cfg, 32, 16, 64, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (p, c, t) = inputs(&mut rng, 16, 32, 64, 48);
    let out = crid.predict(&ps, &p, &c, &t).unwrap();
    assert_eq!(out.memory.shape(), [85, 32]);
    assert_eq!(out.cache.cmi.attn.weights()[0].shape(), [16, 85]);
    assert!(!ps.contains(crid.pooling_queries()));
}

#[test]
fn ablations_change_context() {
    let base = CridConfig::default();
    let no_region = Crid::new(CridAblation::NoRegion.apply(&base), 32, 16, 64).unwrap();
    assert_eq!(no_region.context_len(64).unwrap(), 80);
    let (crid, ps) = build(CridAblation::NoCmg.apply(&base), 32, 16, 64, 11);
    assert!(!ps.contains("crid.f.fc1.w"));
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (p, c, t) = inputs(&mut rng, 16, 32, 10, 48);
    let out = crid.predict(&ps, &p, &c, &t).unwrap();
    let projected = crate::numcore::matmul(&t, ps.value("crid.g.w").unwrap()).unwrap();
    assert_eq!(out.guided.tokens, projected);
}

fn probe_dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}


fn check_gradients(cfg: CridConfig, seed: u64) {
    let (d, n, plen, n_t, d_t) = (8, 16, 6, 5, 6);
    let cfg = CridConfig {
        text_dim: d_t,
        max_tokens: 7,
        gate_hidden: 6,
        memory_tokens: 2,
        heads: 2,
        mlp_ratio: 2,
        ..cfg
    };
    let (crid, ps) = build(cfg, d, n, plen, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let (p, c, t) = inputs(&mut rng, n, d, n_t, d_t);
    let (p, c) = (p.scale(2.0), c.scale(2.0));
    let probe = init_uniform(&mut rng, &[n, plen], 1);
    let out = crid.predict(&ps, &p, &c, &t).unwrap();
    let mut grads = Grads::new();
    let (dp, dc) = crid.backward(&ps, &out.cache, &probe, &mut grads).unwrap();

    // Input gradients checked by treating P and C as parameters of a wrapper loss.
    let mut wrapper = ps.clone();
    wrapper.insert("in.p", p.clone(), true).unwrap();
    wrapper.insert("in.c", c.clone(), true).unwrap();
    let mut all = grads.clone();
    all.accumulate("in.p", dp.clone());
    all.accumulate("in.c", dc.clone());
    let loss = |ps: &ParamStore| -> Result<f64> {
        let o = crid.predict(ps, ps.value("in.p")?, ps.value("in.c")?, &t)?;
        Ok(probe_dot(&o.patches, &probe))
    };
    let rep = grad_check(&mut wrapper, &all, 1e-5, 1e-4, Coverage::All, loss).unwrap();
    assert!(rep.passed, "{:?}", rep.worst());
}

#[test]
fn gradients_full() {
    check_gradients(CridConfig::default(), 21);
}

#[test]
fn gradients_identity_pooling() {
    check_gradients(
        CridConfig {
            pool_projection: PoolProjection::Identity,
            ..CridConfig::default()
        },
        22,
    );
}

#[test]
fn gradients_ablations() {
    for (i, a) in [CridAblation::NoRegion, CridAblation::NoHopfield, CridAblation::NoCmg].into_iter().enumerate() {
        check_gradients(a.apply(&CridConfig::default()), 30 + i as u64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gates_are_distributions(seed in 0u64..10_000, n_t in 1usize..64) {
        let (crid, ps) = build(CridConfig::default(), 32, 16, 64, 40);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, c, t) = inputs(&mut rng, 16, 32, n_t, 48);
        let (g, _, _) = crid.cmg_forward(&ps, &t, &c.scale(5.0)).unwrap();
        prop_assert!((g.alpha.sum() - 1.0).abs() < 1e-12);
        prop_assert!((g.beta.sum() - 1.0).abs() < 1e-12);
        prop_assert!(g.alpha.data().iter().chain(g.beta.data()).all(|&v| v > 0.0));
    }

    #[test]
    fn context_length_adds_up(side in 1usize..5, mult in 1usize..3, n_t in 1usize..40, use_region in any::<bool>()) {
        let grid = side * 2 * mult;
        let n = grid * grid;
        let scales = if mult == 2 { vec![2, 4] } else { vec![2] };
        let cfg = CridConfig { scales: scales.clone(), max_tokens: 40, region_tokens: use_region, hopfield: false, ..CridConfig::default() };
        let crid = Crid::new(cfg, 8, n, 3).unwrap();
        let n_r: usize = if use_region { scales.iter().map(|s| (grid / s) * (grid / s)).sum() } else { 0 };
        prop_assert_eq!(crid.context_len(n_t).unwrap(), n + n_r + n_t);
    }
}
