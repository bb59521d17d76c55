//! Shared fixtures for the criterion benches.

use agcd_core::evalkit::{Forecaster, ModelConfig, Variant};
use agcd_core::fieldgrid::{gen_synthetic, GridSpec, NormStats, SyntheticData};
use agcd_core::{ParamStore, Tensor};

pub struct Fixture {
    pub data: SyntheticData,
    pub stats: NormStats,
    pub model: Forecaster,
    pub params: ParamStore,
    pub patches: Tensor,
    pub text: Option<Tensor>,
}

pub const NARRATIVE: &str = "z: strong maximum +2.1 near north\nt: weak maximum +0.8 near south-west\n\
v: circulation near north may turn the z maximum clockwise";

pub fn fixture(variant: Variant) -> Fixture {
    let spec = GridSpec::desk_default();
    let data = gen_synthetic(7, 8, &spec, 1).expect("synthetic data");
    let stats = NormStats::fit(&spec, data.dataset.states()).expect("stats");
    let model = Forecaster::new(variant, ModelConfig::default(), &spec).expect("model");
    let params = model.init(1).expect("init");
    let patches = model
        .state_patches(&data.dataset.sequences[0].states[0], &stats)
        .expect("patches");
    let text = model.uses_text().then(|| model.embed(NARRATIVE));
    Fixture {
        data,
        stats,
        model,
        params,
        patches,
        text,
    }
}
