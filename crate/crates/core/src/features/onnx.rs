//! Inference backend running a VGG-style network from an ONNX file.
//!
//! The activation of layer `m` is the output of the m-th `Conv` node in graph
//! order, taken after its ReLU when the conv feeds exactly one ReLU node.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use tract_onnx::prelude::*;

use super::{normalized_planar, FeatureExtractor, FeatureMap, ImageKey, Layer, Scope};
use crate::error::{Error, Result};
use crate::preprocess::MaskedImage;

type Plan = Arc<TypedRunnableModel>;

pub struct OnnxExtractor {
    path: PathBuf,
    input_size: (usize, usize),
    plans: BTreeMap<Layer, Plan>,
}

fn err(e: impl std::fmt::Display) -> Error {
    Error::Extraction(e.to_string())
}

/// Outlet holding the activation of the `index`-th (1-based) conv layer.
fn conv_outlet(model: &InferenceModel, index: u32) -> Result<OutletId> {
    let convs: Vec<usize> = model
        .nodes()
        .iter()
        .filter(|n| {
            let op = n.op.name();
            op == "Conv" || op.starts_with("Conv") && !op.contains("Transpose")
        })
        .map(|n| n.id)
        .collect();
    let conv = *convs.get(index as usize - 1).ok_or_else(|| {
        Error::Extraction(format!(
            "network has {} conv layers, layer {index} requested",
            convs.len()
        ))
    })?;
    let succ = &model.nodes()[conv].outputs[0].successors;
    if succ.len() == 1 {
        let next = &model.nodes()[succ[0].node];
        let is_relu = next.op.name().contains("Relu") || next.name.ends_with("Relu");
        if is_relu {
            return Ok(OutletId::new(next.id, 0));
        }
    }
    Ok(OutletId::new(conv, 0))
}

impl OnnxExtractor {
    /// Loads the network once per requested layer.
    pub fn load(path: &Path, layers: &[Layer], input_size: (usize, usize)) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Extraction(format!("network file {} not found", path.display())));
        }
        let mut plans = BTreeMap::new();
        for &layer in layers {
            let mut model = tract_onnx::onnx().model_for_path(path).map_err(err)?;
            let outlet = conv_outlet(&model, layer.index())?;
            model.select_output_outlets(&[outlet]).map_err(err)?;
            model
                .set_input_fact(0, f32::fact([1, 3, input_size.1, input_size.0]).into())
                .map_err(err)?;
            let plan = model
                .into_optimized()
                .map_err(err)?
                .into_runnable()
                .map_err(err)?;
            plans.insert(layer, plan);
        }
        Ok(OnnxExtractor {
            path: path.to_path_buf(),
            input_size,
            plans,
        })
    }
}

impl FeatureExtractor for OnnxExtractor {
    fn extract(&self, _key: ImageKey<'_>, _scope: Scope, layer: Layer, image: &MaskedImage) -> Result<FeatureMap> {
        let plan = self.plans.get(&layer).ok_or_else(|| {
            Error::Extraction(format!(
                "layer {layer} was not loaded from {}",
                self.path.display()
            ))
        })?;
        let (w, h) = self.input_size;
        let data = normalized_planar(image, w, h);
        let input: Tensor = tract_ndarray::Array4::from_shape_vec((1, 3, h, w), data)
            .map_err(err)?
            .into();
        let out = plan.run(tvec!(input.into())).map_err(err)?;
        let view = out[0].to_plain_array_view::<f32>().map_err(err)?;
        let shape = view.shape().to_vec();
        let (c, oh, ow) = match shape.as_slice() {
            &[1, c, oh, ow] => (c, oh, ow),
            s => return Err(Error::Extraction(format!("unexpected activation shape {s:?}"))),
        };
        FeatureMap::new(c, oh, ow, view.iter().copied().collect())
    }
}
