//! Model trees mirroring sample trees: forward evaluation on batched data
//! nodes, default-vector substitution for missing data, a reverse pass over
//! the tree, and a flat canonical parameter view.
//!
//! Canonical parameter order is a depth-first pre-order over the tree;
//! within a node: dense layers in order (weights row-major, then bias), then
//! aggregation parameters (all rho, then all rho_p, then all c), then the
//! node's default vectors.

mod io;
mod reflect;

pub use io::{load, save, ModelBundle, MODEL_FORMAT, MODEL_VERSION};
pub use reflect::{reflect_model, Prescription};

use serde::{Deserialize, Serialize};

use crate::agg::{agg_gradients, agg_segment, AggregationSpec};
use crate::data::{ArrayData, Bag, BagData, DataNode, ProductData};
use crate::linalg::{DenseLayer, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayModel {
    pub layers: Vec<DenseLayer>,
    /// Returned instead of the layer stack for observations whose fragment
    /// is missing; sized to the node's output.
    pub psi_in: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagModel {
    pub instance_model: Box<ModelNode>,
    pub agg: AggregationSpec,
    pub bag_layers: Vec<DenseLayer>,
    /// Fed to the bag layers in place of the aggregation output for empty
    /// bags; sized `q * m`.
    pub psi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductModel {
    /// Children in ascending key order, aligned with the data node.
    pub children: Vec<(String, ModelNode)>,
    pub layers: Vec<DenseLayer>,
    /// One default vector per child, substituted for its output when the
    /// child is missing for an observation.
    pub psi: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum ModelNode {
    Array(ArrayModel),
    Bag(BagModel),
    Product(ProductModel),
}

/// Per-layer forward intermediates kept for the reverse pass.
#[derive(Debug)]
struct LayerTape {
    input: Matrix,
    pre: Matrix,
}

/// Forward intermediates for one model tree, consumed by
/// [`ModelNode::backward`].
#[derive(Debug)]
pub struct Tape(TapeNode);

#[derive(Debug)]
enum TapeNode {
    Array {
        layers: Vec<LayerTape>,
        missing: Vec<bool>,
    },
    Bag {
        child: Box<TapeNode>,
        bags: Vec<Bag>,
        weights: Option<Vec<f64>>,
        /// Instance-model output, input to the aggregation.
        instance_out: Matrix,
        empty: Vec<bool>,
        bag_layers: Vec<LayerTape>,
    },
    Product {
        children: Vec<TapeNode>,
        child_dims: Vec<usize>,
        missing: Vec<Vec<bool>>,
        layers: Vec<LayerTape>,
    },
}

fn forward_layers(
    layers: &[DenseLayer],
    input: Matrix,
    tape: Option<&mut Vec<LayerTape>>,
) -> Result<Matrix> {
    let mut taped = tape;
    let mut current = input;
    for layer in layers {
        let (out, pre) = layer.forward_with_pre(&current)?;
        if let Some(tape) = taped.as_deref_mut() {
            tape.push(LayerTape {
                input: current,
                pre,
            });
        }
        current = out;
    }
    Ok(current)
}

/// Reverse pass through a layer stack; accumulates weight and bias gradients
/// into `grads` at `offset` (canonical layer layout) and returns the
/// gradient w.r.t. the stack input.
fn backward_layers(
    layers: &[DenseLayer],
    tapes: &[LayerTape],
    upstream: Matrix,
    grads: &mut [f64],
    offset: usize,
) -> Result<Matrix> {
    let mut layer_offsets = Vec::with_capacity(layers.len());
    let mut at = offset;
    for layer in layers {
        layer_offsets.push(at);
        at += layer.weights.rows() * layer.weights.cols() + layer.bias.len();
    }
    let mut upstream = upstream;
    for ((layer, tape), &off) in layers
        .iter()
        .zip(tapes)
        .zip(&layer_offsets)
        .rev()
    {
        let (d_w, d_b, d_in) = layer.backward(&tape.input, &tape.pre, &upstream)?;
        let w_len = d_w.data().len();
        for (slot, g) in grads[off..off + w_len].iter_mut().zip(d_w.data()) {
            *slot += g;
        }
        for (slot, g) in grads[off + w_len..off + w_len + d_b.len()]
            .iter_mut()
            .zip(&d_b)
        {
            *slot += g;
        }
        upstream = d_in;
    }
    Ok(upstream)
}

fn layers_param_count(layers: &[DenseLayer]) -> usize {
    layers
        .iter()
        .map(|l| l.weights.rows() * l.weights.cols() + l.bias.len())
        .sum()
}

impl ModelNode {
    pub fn output_dim(&self) -> usize {
        match self {
            ModelNode::Array(a) => a.layers.last().map_or(0, DenseLayer::out_dim),
            ModelNode::Bag(b) => b.bag_layers.last().map_or(0, DenseLayer::out_dim),
            ModelNode::Product(p) => p.layers.last().map_or(0, DenseLayer::out_dim),
        }
    }

    /// Checks that layer dimensions chain, aggregation width matches the
    /// instance model, and every default vector has its node's output size.
    pub fn validate(&self) -> Result<()> {
        self.validate_at(&mut Vec::new())
    }

    fn validate_at(&self, at: &mut Vec<String>) -> Result<()> {
        let fail = |at: &[String], reason: String| Error::Structure {
            path: format!("/{}", at.join("/")),
            reason,
        };
        let check_chain = |at: &[String], layers: &[DenseLayer], what: &str| {
            if layers.is_empty() {
                return Err(fail(at, format!("{what} has no layers")));
            }
            for pair in layers.windows(2) {
                if pair[0].out_dim() != pair[1].in_dim() {
                    return Err(fail(
                        at,
                        format!(
                            "{what} layer dims do not chain: {} -> {}",
                            pair[0].out_dim(),
                            pair[1].in_dim()
                        ),
                    ));
                }
            }
            Ok(())
        };
        match self {
            ModelNode::Array(a) => {
                check_chain(at, &a.layers, "array mapping")?;
                if a.psi_in.len() != self.output_dim() {
                    return Err(fail(at, "psi_in size != output dim".into()));
                }
            }
            ModelNode::Bag(b) => {
                at.push("[]".into());
                b.instance_model.validate_at(at)?;
                at.pop();
                if b.agg.m != b.instance_model.output_dim() {
                    return Err(fail(at, "aggregation width != instance model output".into()));
                }
                check_chain(at, &b.bag_layers, "bag mapping")?;
                if b.bag_layers[0].in_dim() != b.agg.output_dim() {
                    return Err(fail(at, "bag mapping input != aggregation output".into()));
                }
                if b.psi.len() != b.agg.output_dim() {
                    return Err(fail(at, "psi size != aggregation output".into()));
                }
            }
            ModelNode::Product(p) => {
                if p.children.is_empty() {
                    return Err(fail(at, "product model has no children".into()));
                }
                if p.psi.len() != p.children.len() {
                    return Err(fail(at, "one psi vector per child required".into()));
                }
                let mut total = 0;
                for ((key, child), psi) in p.children.iter().zip(&p.psi) {
                    at.push(key.clone());
                    child.validate_at(at)?;
                    at.pop();
                    if psi.len() != child.output_dim() {
                        return Err(fail(at, format!("psi for {key} != child output dim")));
                    }
                    total += child.output_dim();
                }
                check_chain(at, &p.layers, "product mapping")?;
                if p.layers[0].in_dim() != total {
                    return Err(fail(
                        at,
                        format!(
                            "product mapping input {} != concatenated child dims {total}",
                            p.layers[0].in_dim()
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Evaluates the model on a batched data node; column `j` of the result
    /// depends only on observation `j`.
    pub fn forward(&self, data: &DataNode) -> Result<Matrix> {
        Ok(self.forward_at(data, &mut Vec::new(), false)?.0)
    }

    /// Forward pass that records the tape needed by [`ModelNode::backward`].
    pub fn forward_tape(&self, data: &DataNode) -> Result<(Matrix, Tape)> {
        let (out, tape) = self.forward_at(data, &mut Vec::new(), true)?;
        Ok((out, Tape(tape.expect("tape requested"))))
    }

    fn forward_at(
        &self,
        data: &DataNode,
        at: &mut Vec<String>,
        want_tape: bool,
    ) -> Result<(Matrix, Option<TapeNode>)> {
        let mismatch = |at: &[String], expected: &str, data: &DataNode| {
            let kind = match data {
                DataNode::Array(_) => "array",
                DataNode::Bag(_) => "bag",
                DataNode::Product(_) => "product",
            };
            Error::Structure {
                path: format!("/{}", at.join("/")),
                reason: format!("model expects {expected} data, got {kind}"),
            }
        };
        match (self, data) {
            (ModelNode::Array(model), DataNode::Array(arr)) => {
                model.forward_node(arr, at, want_tape)
            }
            (ModelNode::Bag(model), DataNode::Bag(bag)) => model.forward_node(bag, at, want_tape),
            (ModelNode::Product(model), DataNode::Product(prod)) => {
                model.forward_node(prod, at, want_tape)
            }
            (ModelNode::Array(_), other) => Err(mismatch(at, "array", other)),
            (ModelNode::Bag(_), other) => Err(mismatch(at, "bag", other)),
            (ModelNode::Product(_), other) => Err(mismatch(at, "product", other)),
        }
    }

    /// Number of parameters in this subtree.
    pub fn param_count(&self) -> usize {
        self.own_param_count()
            + match self {
                ModelNode::Array(_) => 0,
                ModelNode::Bag(b) => b.instance_model.param_count(),
                ModelNode::Product(p) => p.children.iter().map(|(_, c)| c.param_count()).sum(),
            }
    }

    fn own_param_count(&self) -> usize {
        match self {
            ModelNode::Array(a) => layers_param_count(&a.layers) + a.psi_in.len(),
            ModelNode::Bag(b) => {
                layers_param_count(&b.bag_layers) + b.agg.param_count() + b.psi.len()
            }
            ModelNode::Product(p) => {
                layers_param_count(&p.layers) + p.psi.iter().map(Vec::len).sum::<usize>()
            }
        }
    }

    /// Flat parameter vector in canonical order.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.append_params(&mut out);
        out
    }

    fn append_params(&self, out: &mut Vec<f64>) {
        match self {
            ModelNode::Array(a) => {
                for layer in &a.layers {
                    out.extend_from_slice(layer.weights.data());
                    out.extend_from_slice(&layer.bias);
                }
                out.extend_from_slice(&a.psi_in);
            }
            ModelNode::Bag(b) => {
                for layer in &b.bag_layers {
                    out.extend_from_slice(layer.weights.data());
                    out.extend_from_slice(&layer.bias);
                }
                b.agg.append_params(out);
                out.extend_from_slice(&b.psi);
                b.instance_model.append_params(out);
            }
            ModelNode::Product(p) => {
                for layer in &p.layers {
                    out.extend_from_slice(layer.weights.data());
                    out.extend_from_slice(&layer.bias);
                }
                for psi in &p.psi {
                    out.extend_from_slice(psi);
                }
                for (_, child) in &p.children {
                    child.append_params(out);
                }
            }
        }
    }

    /// Writes a flat parameter vector back; inverse of [`ModelNode::parameters`].
    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape {
                op: "set_parameters",
                left: format!("{} model parameters", self.param_count()),
                right: format!("{} given", params.len()),
            });
        }
        let consumed = self.read_params(params);
        debug_assert_eq!(consumed, params.len());
        Ok(())
    }

    fn read_params(&mut self, src: &[f64]) -> usize {
        let mut at = 0;
        let read_layers = |layers: &mut [DenseLayer], at: &mut usize| {
            for layer in layers {
                let (r, c) = (layer.weights.rows(), layer.weights.cols());
                layer.weights = Matrix::from_vec(r, c, src[*at..*at + r * c].to_vec())
                    .expect("sizes preserved");
                *at += r * c;
                let blen = layer.bias.len();
                layer.bias.copy_from_slice(&src[*at..*at + blen]);
                *at += blen;
            }
        };
        match self {
            ModelNode::Array(a) => {
                read_layers(&mut a.layers, &mut at);
                let n = a.psi_in.len();
                a.psi_in.copy_from_slice(&src[at..at + n]);
                at += n;
            }
            ModelNode::Bag(b) => {
                read_layers(&mut b.bag_layers, &mut at);
                at += b.agg.read_params(&src[at..]);
                let n = b.psi.len();
                b.psi.copy_from_slice(&src[at..at + n]);
                at += n;
                at += b.instance_model.read_params(&src[at..]);
            }
            ModelNode::Product(p) => {
                read_layers(&mut p.layers, &mut at);
                for psi in &mut p.psi {
                    let n = psi.len();
                    psi.copy_from_slice(&src[at..at + n]);
                    at += n;
                }
                for (_, child) in &mut p.children {
                    at += child.read_params(&src[at..]);
                }
            }
        }
        at
    }

    /// True at positions of default-vector (psi) parameters in the canonical
    /// order; used to freeze them during training.
    pub fn psi_mask(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.param_count());
        self.append_psi_mask(&mut out);
        out
    }

    fn append_psi_mask(&self, out: &mut Vec<bool>) {
        match self {
            ModelNode::Array(a) => {
                out.extend(std::iter::repeat_n(false, layers_param_count(&a.layers)));
                out.extend(std::iter::repeat_n(true, a.psi_in.len()));
            }
            ModelNode::Bag(b) => {
                out.extend(std::iter::repeat_n(false, layers_param_count(&b.bag_layers)));
                out.extend(std::iter::repeat_n(false, b.agg.param_count()));
                out.extend(std::iter::repeat_n(true, b.psi.len()));
                b.instance_model.append_psi_mask(out);
            }
            ModelNode::Product(p) => {
                out.extend(std::iter::repeat_n(false, layers_param_count(&p.layers)));
                out.extend(
                    std::iter::repeat_n(true, p.psi.iter().map(Vec::len).sum::<usize>()),
                );
                for (_, child) in &p.children {
                    child.append_psi_mask(out);
                }
            }
        }
    }

    /// Gradient of a scalar loss w.r.t. every parameter given the gradient
    /// w.r.t. the model output, as a flat vector in canonical order.
    /// Instance-model gradients accumulate over all instances of all bags;
    /// default vectors receive gradient only from the observations where
    /// they were substituted.
    pub fn backward(&self, tape: &Tape, upstream: &Matrix) -> Result<Vec<f64>> {
        let mut grads = vec![0.0; self.param_count()];
        self.backward_at(&tape.0, upstream.clone(), &mut grads, 0)?;
        Ok(grads)
    }

    fn backward_at(
        &self,
        tape: &TapeNode,
        upstream: Matrix,
        grads: &mut [f64],
        offset: usize,
    ) -> Result<()> {
        match (self, tape) {
            (ModelNode::Array(model), TapeNode::Array { layers, missing }) => {
                let mut upstream = upstream;
                let psi_off = offset + layers_param_count(&model.layers);
                for (j, &is_missing) in missing.iter().enumerate() {
                    if is_missing {
                        for r in 0..upstream.rows() {
                            grads[psi_off + r] += upstream.get(r, j);
                            upstream.set(r, j, 0.0);
                        }
                    }
                }
                backward_layers(&model.layers, layers, upstream, grads, offset)?;
                Ok(())
            }
            (
                ModelNode::Bag(model),
                TapeNode::Bag {
                    child,
                    bags,
                    weights,
                    instance_out,
                    empty,
                    bag_layers,
                },
            ) => {
                let mut d_agg = backward_layers(
                    &model.bag_layers,
                    bag_layers,
                    upstream,
                    grads,
                    offset,
                )?;
                let agg_off = offset + layers_param_count(&model.bag_layers);
                let psi_off = agg_off + model.agg.param_count();
                for (b, &is_empty) in empty.iter().enumerate() {
                    if is_empty {
                        for r in 0..d_agg.rows() {
                            grads[psi_off + r] += d_agg.get(r, b);
                            d_agg.set(r, b, 0.0);
                        }
                    }
                }
                let agg_grads =
                    agg_gradients(&model.agg, instance_out, bags, weights.as_deref(), &d_agg)?;
                let mut agg_param_grads = Vec::with_capacity(model.agg.param_count());
                agg_grads.append_canonical(&mut agg_param_grads);
                for (slot, g) in grads[agg_off..agg_off + agg_param_grads.len()]
                    .iter_mut()
                    .zip(&agg_param_grads)
                {
                    *slot += g;
                }
                let child_off = offset + self.own_param_count();
                model
                    .instance_model
                    .backward_at(child, agg_grads.d_x, grads, child_off)
            }
            (
                ModelNode::Product(model),
                TapeNode::Product {
                    children,
                    child_dims,
                    missing,
                    layers,
                },
            ) => {
                let d_concat =
                    backward_layers(&model.layers, layers, upstream, grads, offset)?;
                let mut psi_off = offset + layers_param_count(&model.layers);
                let mut row = 0;
                let mut child_off = offset + self.own_param_count();
                for (i, (_, child_model)) in model.children.iter().enumerate() {
                    let dim = child_dims[i];
                    let mut block = Matrix::zeros(dim, d_concat.cols());
                    for r in 0..dim {
                        for c in 0..d_concat.cols() {
                            block.set(r, c, d_concat.get(row + r, c));
                        }
                    }
                    for (j, &is_missing) in missing[i].iter().enumerate() {
                        if is_missing {
                            for r in 0..dim {
                                grads[psi_off + r] += block.get(r, j);
                                block.set(r, j, 0.0);
                            }
                        }
                    }
                    child_model.backward_at(&children[i], block, grads, child_off)?;
                    psi_off += dim;
                    row += dim;
                    child_off += child_model.param_count();
                }
                Ok(())
            }
            _ => Err(Error::Invalid(
                "tape does not match the model structure".into(),
            )),
        }
    }
}

impl ArrayModel {
    fn forward_node(
        &self,
        data: &ArrayData,
        at: &[String],
        want_tape: bool,
    ) -> Result<(Matrix, Option<TapeNode>)> {
        if data.dim() != self.layers[0].in_dim() {
            return Err(Error::Structure {
                path: format!("/{}", at.join("/")),
                reason: format!(
                    "array data dim {} != model input dim {}",
                    data.dim(),
                    self.layers[0].in_dim()
                ),
            });
        }
        let mut tapes = want_tape.then(Vec::new);
        let mut out = forward_layers(&self.layers, data.values().clone(), tapes.as_mut())?;
        for (j, &missing) in data.missing().iter().enumerate() {
            if missing {
                out.set_col(j, &self.psi_in);
            }
        }
        let tape = tapes.map(|layers| TapeNode::Array {
            layers,
            missing: data.missing().to_vec(),
        });
        Ok((out, tape))
    }
}

impl BagModel {
    fn forward_node(
        &self,
        data: &BagData,
        at: &mut Vec<String>,
        want_tape: bool,
    ) -> Result<(Matrix, Option<TapeNode>)> {
        at.push("[]".into());
        let (instance_out, child_tape) = self.instance_model.forward_at(data.child(), at, want_tape)?;
        at.pop();
        let (mut agg_out, empty) = agg_segment(
            &self.agg,
            &instance_out,
            data.bags(),
            data.weights(),
        )?;
        for (b, &is_empty) in empty.iter().enumerate() {
            if is_empty {
                agg_out.set_col(b, &self.psi);
            }
        }
        let mut tapes = want_tape.then(Vec::new);
        let out = forward_layers(&self.bag_layers, agg_out, tapes.as_mut())?;
        let tape = tapes.map(|bag_layers| TapeNode::Bag {
            child: Box::new(child_tape.expect("child tape recorded")),
            bags: data.bags().to_vec(),
            weights: data.weights().map(<[f64]>::to_vec),
            instance_out,
            empty,
            bag_layers,
        });
        Ok((out, tape))
    }
}

impl ProductModel {
    fn forward_node(
        &self,
        data: &ProductData,
        at: &mut Vec<String>,
        want_tape: bool,
    ) -> Result<(Matrix, Option<TapeNode>)> {
        if self.children.len() != data.children().len()
            || self
                .children
                .iter()
                .zip(data.children())
                .any(|((km, _), (kd, _))| km != kd)
        {
            return Err(Error::Structure {
                path: format!("/{}", at.join("/")),
                reason: format!(
                    "product keys differ: model {:?} vs data {:?}",
                    self.children.iter().map(|(k, _)| k).collect::<Vec<_>>(),
                    data.children().iter().map(|(k, _)| k).collect::<Vec<_>>()
                ),
            });
        }
        let mut child_outs = Vec::with_capacity(self.children.len());
        let mut child_tapes = want_tape.then(Vec::new);
        for (i, (key, child_model)) in self.children.iter().enumerate() {
            at.push(key.clone());
            let (mut out, tape) = child_model.forward_at(&data.children()[i].1, at, want_tape)?;
            at.pop();
            for (j, &missing) in data.missing()[i].iter().enumerate() {
                if missing {
                    out.set_col(j, &self.psi[i]);
                }
            }
            child_outs.push(out);
            if let Some(tapes) = child_tapes.as_mut() {
                tapes.push(tape.expect("child tape recorded"));
            }
        }
        let refs: Vec<&Matrix> = child_outs.iter().collect();
        let concat = Matrix::vconcat(&refs)?;
        let mut tapes = want_tape.then(Vec::new);
        let out = forward_layers(&self.layers, concat, tapes.as_mut())?;
        let tape = tapes.map(|layers| TapeNode::Product {
            children: child_tapes.expect("child tapes recorded"),
            child_dims: child_outs.iter().map(Matrix::rows).collect(),
            missing: data.missing().to_vec(),
            layers,
        });
        Ok((out, tape))
    }
}
