use serde::{Deserialize, Serialize};

use super::trainer::CycleGanState;
use crate::data::{Label, LabelledDataset, LabelledSample, Provenance};
use crate::error::{Error, Result};
use crate::imaging::{ImageTensor, RangeTag};
use crate::nn::Graph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "B_to_M")]
    BToM,
    #[serde(rename = "M_to_B")]
    MToB,
}

/// Applies `G_B` (`BToM`) or `G_M` (`MToB`) to each image independently.
/// Inputs and outputs are in `[−1, 1]`.
pub fn translate(state: &CycleGanState, images: &[ImageTensor], direction: Direction) -> Result<Vec<ImageTensor>> {
    let generator = match direction {
        Direction::BToM => &state.g_b,
        Direction::MToB => &state.g_m,
    };
    let side = state.image_side;
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            if img.height() != side || img.width() != side || img.channels() != generator.spec.channels {
                return Err(Error::Shape(format!(
                    "image {i} is {}×{}×{}, translator expects {side}×{side}×{}",
                    img.height(),
                    img.width(),
                    img.channels(),
                    generator.spec.channels
                )));
            }
            if img.range() != RangeTag::TanhM1To1 {
                return Err(Error::InvalidArgument(format!("image {i} must be in the tanh range")));
            }
            let mut g = Graph::new();
            let x = g.input(img.to_nchw());
            let y = generator.forward(&mut g, x, false);
            ImageTensor::from_nchw(g.value(y), 0, RangeTag::TanhM1To1)
        })
        .collect()
}

/// Translates every benign sample to a synthetic malignant one with id
/// `syn_<source id>`. Images come back in the input's range convention.
pub fn synthesize_minority(state: &CycleGanState, benign: &LabelledDataset) -> Result<LabelledDataset> {
    let mut samples = Vec::with_capacity(benign.len());
    for s in benign.samples() {
        if s.label != Label::Benign {
            return Err(Error::Data(format!("sample {} is not benign", s.id)));
        }
        let input = s.image.convert_range(RangeTag::TanhM1To1)?;
        let out = translate(state, std::slice::from_ref(&input), Direction::BToM)?.remove(0);
        samples.push(LabelledSample {
            id: format!("syn_{}", s.id),
            label: Label::Malignant,
            provenance: Provenance::Synthetic { source_id: s.id.clone() },
            image: out.convert_range(s.image.range())?,
        });
    }
    LabelledDataset::new(samples)
}
