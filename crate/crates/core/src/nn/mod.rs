//! Tensors, reverse-mode autodiff, the conv feature extractor and its heads,
//! Adam, and the `TGRM` weights format.

mod adam;
mod graph;
pub(crate) mod kernels;
mod model;
mod tensor;
pub mod weights;

pub use adam::Adam;
pub use graph::{Gradients, Graph, GraphError, NodeId};
pub use model::{
    Backbone, BackboneIds, Classifier, Layer, LayerIds, ModelError, Parameterized, PretrainModel, ScoreIds,
    ScoreModel, EMBEDDING_DIM, FEATURE_DIM, INPUT_SIDE,
};
pub use tensor::{images_to_tensor, ShapeError, Tensor};

/// Gradients for `ids` in order, zero-filled where a parameter was unreachable.
pub fn collect_grads(grads: &Gradients, ids: &[NodeId], params: &[&Tensor]) -> Vec<Tensor> {
    ids.iter().zip(params).map(|(&id, p)| grads.get_or_zeros(id, p.shape())).collect()
}

/// One Adam step over every parameter of `model`, given gradients for the
/// node ids it was bound to (same order as [`Parameterized::named_params`]).
pub fn adam_step(model: &mut impl Parameterized, opt: &mut Adam, grads: &Gradients, ids: &[NodeId]) {
    let g = {
        let named = model.named_params();
        let params: Vec<&Tensor> = named.iter().map(|(_, t)| *t).collect();
        collect_grads(grads, ids, &params)
    };
    opt.step(&mut model.params_mut(), &g);
}
