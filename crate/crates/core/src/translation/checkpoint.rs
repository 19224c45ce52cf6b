use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::networks::{DiscriminatorSpec, GeneratorSpec};
use super::trainer::{CycleGanConfig, CycleGanState, EpochLosses};
use crate::container::ArrayContainer;
use crate::error::{Error, Result};
use crate::nn::Adam;

const KIND: &str = "cyclegan";

#[derive(Serialize, Deserialize)]
struct Metadata {
    kind: String,
    epoch: usize,
    seed: u64,
    image_side: usize,
    config: CycleGanConfig,
    generator: GeneratorSpec,
    discriminator: DiscriminatorSpec,
    spec_hash: String,
    adam_steps: [u64; 4],
    history: Vec<EpochLosses>,
}

const NETS: [&str; 4] = ["g_b", "g_m", "d_m", "d_b"];

fn spec_hash(g: &GeneratorSpec, d: &DiscriminatorSpec) -> String {
    let json = serde_json::to_vec(&(g, d)).expect("specs serialize");
    Sha256::digest(json).iter().map(|b| format!("{b:02x}")).collect()
}

fn parts(state: &CycleGanState) -> [(&crate::nn::ParamStore, &Adam); 4] {
    [
        (&state.g_b.params, &state.opt_g_b),
        (&state.g_m.params, &state.opt_g_m),
        (&state.d_m.params, &state.opt_d_m),
        (&state.d_b.params, &state.opt_d_b),
    ]
}

pub fn to_container(state: &CycleGanState) -> ArrayContainer {
    let meta = Metadata {
        kind: KIND.into(),
        epoch: state.epoch,
        seed: state.config.seed,
        image_side: state.image_side,
        config: state.config.clone(),
        generator: state.generator_spec().clone(),
        discriminator: state.discriminator_spec().clone(),
        spec_hash: spec_hash(state.generator_spec(), state.discriminator_spec()),
        adam_steps: [state.opt_g_b.step, state.opt_g_m.step, state.opt_d_m.step, state.opt_d_b.step],
        history: state.history.clone(),
    };
    let mut c = ArrayContainer::new(serde_json::to_value(meta).expect("metadata serializes"));
    for (net, (params, opt)) in NETS.iter().zip(parts(state)) {
        c.insert_store(net, params);
        for i in 0..params.len() {
            c.insert(format!("opt/{net}/first/{}", params.name(i)), opt.first[i].clone());
            c.insert(format!("opt/{net}/second/{}", params.name(i)), opt.second[i].clone());
        }
    }
    c
}

pub fn from_container(c: &ArrayContainer) -> Result<CycleGanState> {
    let meta: Metadata =
        serde_json::from_value(c.metadata.clone()).map_err(|e| Error::checkpoint("metadata", e.to_string()))?;
    if meta.kind != KIND {
        return Err(Error::checkpoint("kind", format!("expected {KIND:?}, found {:?}", meta.kind)));
    }
    if meta.spec_hash != spec_hash(&meta.generator, &meta.discriminator) {
        return Err(Error::checkpoint("spec_hash", "does not match stored network specs"));
    }
    if meta.history.len() != meta.epoch {
        return Err(Error::checkpoint("history", "length differs from epoch counter"));
    }
    let mut state = CycleGanState::new(&meta.generator, &meta.discriminator, &meta.config, meta.image_side)?;
    state.epoch = meta.epoch;
    state.history = meta.history;
    let CycleGanState {
        g_b,
        g_m,
        d_m,
        d_b,
        opt_g_b,
        opt_g_m,
        opt_d_m,
        opt_d_b,
        ..
    } = &mut state;
    let targets = [
        (&mut g_b.params, opt_g_b),
        (&mut g_m.params, opt_g_m),
        (&mut d_m.params, opt_d_m),
        (&mut d_b.params, opt_d_b),
    ];
    for ((net, (params, opt)), step) in NETS.iter().zip(targets).zip(meta.adam_steps) {
        c.load_store(net, params)?;
        opt.step = step;
        for i in 0..params.len() {
            for (kind, slot) in [("first", &mut opt.first[i]), ("second", &mut opt.second[i])] {
                let key = format!("opt/{net}/{kind}/{}", params.name(i));
                let src = c.get(&key)?;
                if src.shape() != slot.shape() {
                    return Err(Error::checkpoint(key, "shape mismatch"));
                }
                slot.data_mut().copy_from_slice(src.data());
            }
        }
    }
    Ok(state)
}

pub fn save_checkpoint(state: &CycleGanState, path: &Path) -> Result<()> {
    to_container(state).save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<CycleGanState> {
    from_container(&ArrayContainer::load(path)?)
}
