//! Relational graph convolution over the query/resource graph, cosine scoring
//! and checkpoint files.

use std::fs;
use std::path::Path;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{verify_sealed, ByteReader, ByteWriter, Truncated, DIGEST_LEN};
use crate::graph::{HeteroGraph, NodeType, Relation};
use crate::metrics::{MetricError, RankedList};
use crate::tensor::{SparseRows, Tape, Tensor, TensorError, Var};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FEDCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum RgcnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("model dimensions must be positive")]
    ZeroDim,
    #[error("a model without layers needs input dim = output dim ({input} != {output})")]
    IdentityDims { input: usize, output: usize },
    #[error("feature dim {found} does not match model input dim {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("dropout probability must lie in [0, 1), got {0}")]
    Dropout(f64),
    #[error("query node `{0}` not in graph")]
    UnknownQuery(String),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint digest mismatch")]
    Checksum,
    #[error(transparent)]
    Truncated(#[from] Truncated),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, RgcnError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Aggregator {
    #[default]
    Sum,
    Mean,
    Max,
}

impl Aggregator {
    pub fn name(self) -> &'static str {
        match self {
            Aggregator::Sum => "sum",
            Aggregator::Mean => "mean",
            Aggregator::Max => "max",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sum" => Some(Aggregator::Sum),
            "mean" => Some(Aggregator::Mean),
            "max" | "pool" => Some(Aggregator::Max),
            _ => None,
        }
    }

    fn code(self) -> u8 {
        match self {
            Aggregator::Sum => 0,
            Aggregator::Mean => 1,
            Aggregator::Max => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        [Aggregator::Sum, Aggregator::Mean, Aggregator::Max]
            .into_iter()
            .find(|a| a.code() == c)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "identity" | "none" => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RgcnConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub num_layers: usize,
    pub activation: Activation,
    pub aggregator: Aggregator,
    /// Applied between hidden layers during training.
    pub dropout: f64,
}

impl Default for RgcnConfig {
    fn default() -> Self {
        Self {
            input_dim: 768,
            hidden_dim: 768,
            output_dim: 768,
            num_layers: 2,
            activation: Activation::Relu,
            aggregator: Aggregator::Sum,
            dropout: 0.0,
        }
    }
}

impl RgcnConfig {
    pub fn with_dims(dim: usize) -> Self {
        Self {
            input_dim: dim,
            hidden_dim: dim,
            output_dim: dim,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return Err(RgcnError::ZeroDim);
        }
        if self.num_layers == 0 && self.input_dim != self.output_dim {
            return Err(RgcnError::IdentityDims {
                input: self.input_dim,
                output: self.output_dim,
            });
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(RgcnError::Dropout(self.dropout));
        }
        Ok(())
    }

    /// `(d_in, d_out)` of each layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.num_layers)
            .map(|l| {
                let d_in = if l == 0 { self.input_dim } else { self.hidden_dim };
                let d_out = if l + 1 == self.num_layers {
                    self.output_dim
                } else {
                    self.hidden_dim
                };
                (d_in, d_out)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub qr: Tensor,
    pub rr: Tensor,
    pub self_loop: Tensor,
}

impl LayerParams {
    pub fn relation(&self, r: Relation) -> &Tensor {
        match r {
            Relation::Qr => &self.qr,
            Relation::Rr => &self.rr,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RgcnModel {
    pub config: RgcnConfig,
    pub layers: Vec<LayerParams>,
}

fn glorot(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let a = (6.0 / (d_in + d_out) as f64).sqrt();
    let data = (0..d_in * d_out).map(|_| rng.gen_range(-a..=a)).collect();
    Tensor::new(d_in, d_out, data).expect("positive dims")
}

impl RgcnModel {
    /// Glorot-uniform initialization, deterministic in `seed`.
    pub fn init(config: RgcnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = config
            .layer_dims()
            .into_iter()
            .map(|(i, o)| LayerParams {
                qr: glorot(i, o, &mut rng),
                rr: glorot(i, o, &mut rng),
                self_loop: glorot(i, o, &mut rng),
            })
            .collect();
        Ok(Self { config, layers })
    }

    /// Builds a model from explicit parameters, checking dims chain.
    pub fn from_parts(config: RgcnConfig, layers: Vec<LayerParams>) -> Result<Self> {
        config.validate()?;
        let dims = config.layer_dims();
        if dims.len() != layers.len() {
            return Err(RgcnError::Malformed(format!(
                "{} layers for a {}-layer config",
                layers.len(),
                dims.len()
            )));
        }
        for ((i, o), p) in dims.iter().zip(&layers) {
            for t in [&p.qr, &p.rr, &p.self_loop] {
                if t.shape() != [*i, *o] {
                    return Err(RgcnError::Malformed(format!(
                        "parameter shape {:?}, expected [{i}, {o}]",
                        t.shape()
                    )));
                }
            }
        }
        Ok(Self { config, layers })
    }

    /// Parameters in a fixed order: per layer qr, rr, self.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.qr, &l.rr, &l.self_loop])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.qr, &mut l.rr, &mut l.self_loop])
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|t| t.data().len()).sum()
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|l| ["qr", "rr", "self"].map(|n| format!("layer{l}.{n}")))
            .collect()
    }
}

/// Per-relation message operators for one graph. Each undirected edge
/// contributes a message in both directions.
#[derive(Clone, Debug)]
pub struct MessageOperators {
    pub aggregator: Aggregator,
    pub qr: Rc<SparseRows>,
    pub rr: Rc<SparseRows>,
}

impl MessageOperators {
    pub fn new(g: &HeteroGraph, aggregator: Aggregator) -> Self {
        let n = g.num_nodes();
        let mut qr = SparseRows::new(n, n);
        let mut rr = SparseRows::new(n, n);
        for e in g.edges() {
            let op = match e.relation {
                Relation::Qr => &mut qr,
                Relation::Rr => &mut rr,
            };
            op.push(e.dst, e.src, e.weight);
            if e.src != e.dst {
                op.push(e.src, e.dst, e.weight);
            }
        }
        if aggregator == Aggregator::Mean {
            for op in [&mut qr, &mut rr] {
                for row in &mut op.rows {
                    let deg = row.len() as f64;
                    for (_, w) in row.iter_mut() {
                        *w /= deg;
                    }
                }
            }
        }
        Self {
            aggregator,
            qr: Rc::new(qr),
            rr: Rc::new(rr),
        }
    }

    fn relation(&self, r: Relation) -> &Rc<SparseRows> {
        match r {
            Relation::Qr => &self.qr,
            Relation::Rr => &self.rr,
        }
    }
}

/// Parameter handles of one layer on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub qr: Var,
    pub rr: Var,
    pub self_loop: Var,
}

fn activate(tape: &mut Tape, x: Var, act: Activation) -> Result<Var> {
    Ok(match act {
        Activation::Relu => tape.relu(x)?,
        Activation::Identity => x,
    })
}

/// One message-passing layer on the tape.
pub fn layer_forward_on_tape(
    tape: &mut Tape,
    ops: &MessageOperators,
    h: Var,
    params: LayerVars,
    activation: Activation,
) -> Result<Var> {
    let mut acc = tape.matmul(h, params.self_loop)?;
    for r in Relation::ALL {
        let w = match r {
            Relation::Qr => params.qr,
            Relation::Rr => params.rr,
        };
        let msg = tape.matmul(h, w)?;
        let agg = match ops.aggregator {
            Aggregator::Sum | Aggregator::Mean => tape.propagate(msg, ops.relation(r))?,
            Aggregator::Max => tape.propagate_max(msg, ops.relation(r))?,
        };
        acc = tape.add(acc, agg)?;
    }
    activate(tape, acc, activation)
}

/// Output of a forward pass recorded on a tape.
pub struct TapeForward {
    pub output: Var,
    /// Same order as [`RgcnModel::params`].
    pub params: Vec<Var>,
}

fn dropout_seed(seed: u64, layer: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(layer as u64 + 1);
    rng.gen()
}

fn check_features(g: &HeteroGraph, model: &RgcnModel) -> Result<()> {
    if g.dim() != model.config.input_dim {
        return Err(RgcnError::DimMismatch {
            expected: model.config.input_dim,
            found: g.dim(),
        });
    }
    Ok(())
}

fn features(g: &HeteroGraph) -> Result<Tensor> {
    Ok(Tensor::new(g.num_nodes(), g.dim(), g.features().to_vec())?)
}

/// Full forward pass on the tape with parameters registered as trainable.
pub fn model_forward_on_tape(
    tape: &mut Tape,
    g: &HeteroGraph,
    ops: &MessageOperators,
    model: &RgcnModel,
    training: bool,
    seed: u64,
) -> Result<TapeForward> {
    check_features(g, model)?;
    let mut h = tape.constant(features(g)?);
    let mut params = Vec::with_capacity(model.layers.len() * 3);
    let last = model.layers.len().saturating_sub(1);
    for (l, layer) in model.layers.iter().enumerate() {
        let vars = LayerVars {
            qr: tape.param(layer.qr.clone()),
            rr: tape.param(layer.rr.clone()),
            self_loop: tape.param(layer.self_loop.clone()),
        };
        params.extend([vars.qr, vars.rr, vars.self_loop]);
        h = layer_forward_on_tape(tape, ops, h, vars, model.config.activation)?;
        if l < last {
            h = tape.dropout(h, model.config.dropout, dropout_seed(seed, l), training)?;
        }
    }
    Ok(TapeForward { output: h, params })
}

/// Node representations after all layers.
pub fn model_forward(g: &HeteroGraph, model: &RgcnModel, training: bool, seed: u64) -> Result<Tensor> {
    let ops = MessageOperators::new(g, model.config.aggregator);
    let mut tape = Tape::new();
    let fwd = model_forward_on_tape(&mut tape, g, &ops, model, training, seed)?;
    Ok(tape.value(fwd.output).clone())
}

/// A single layer applied to explicit features.
pub fn layer_forward(
    g: &HeteroGraph,
    h: &Tensor,
    params: &LayerParams,
    aggregator: Aggregator,
    activation: Activation,
) -> Result<Tensor> {
    if h.rows() != g.num_nodes() || h.cols() != params.self_loop.rows() {
        return Err(RgcnError::DimMismatch {
            expected: params.self_loop.rows(),
            found: h.cols(),
        });
    }
    let ops = MessageOperators::new(g, aggregator);
    let mut tape = Tape::new();
    let x = tape.constant(h.clone());
    let vars = LayerVars {
        qr: tape.constant(params.qr.clone()),
        rr: tape.constant(params.rr.clone()),
        self_loop: tape.constant(params.self_loop.clone()),
    };
    let out = layer_forward_on_tape(&mut tape, &ops, x, vars, activation)?;
    Ok(tape.value(out).clone())
}

/// Resources ranked by cosine between their final representation and the
/// query's.
pub fn predict(g: &HeteroGraph, h: &Tensor, query_id: &str) -> Result<RankedList> {
    let q = g
        .node_index(NodeType::Query, query_id)
        .ok_or_else(|| RgcnError::UnknownQuery(query_id.to_string()))?;
    let qv = h.row(q);
    let scores = g
        .nodes_of(NodeType::Resource)
        .map(|(i, n)| (n.id.clone(), crate::embedding::cosine_slices(qv, h.row(i))));
    Ok(RankedList::from_scores(scores)?)
}

/// Training metadata stored alongside the parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epoch: u64,
    pub loss: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: RgcnModel,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let c = &self.model.config;
        let mut w = ByteWriter::new();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.u32(c.input_dim as u32);
        w.u32(c.hidden_dim as u32);
        w.u32(c.output_dim as u32);
        w.u32(c.num_layers as u32);
        w.u8(match c.activation {
            Activation::Relu => 0,
            Activation::Identity => 1,
        });
        w.u8(c.aggregator.code());
        w.f64(c.dropout);
        w.u64(self.meta.seed);
        w.u64(self.meta.epoch);
        w.f64(self.meta.loss);
        w.f64(self.meta.lambda);
        let names = self.model.param_names();
        w.u32(names.len() as u32);
        for (name, t) in names.iter().zip(self.model.params()) {
            w.u16(name.len() as u16);
            w.bytes(name.as_bytes());
            w.u32(t.rows() as u32);
            w.u32(t.cols() as u32);
            for &x in t.data() {
                w.f64(x);
            }
        }
        w.seal()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
            return Err(RgcnError::BadMagic);
        }
        if bytes.len() < CHECKPOINT_MAGIC.len() + DIGEST_LEN {
            return Err(Truncated {
                offset: bytes.len(),
                wanted: DIGEST_LEN,
            }
            .into());
        }
        let payload = verify_sealed(bytes).ok_or(RgcnError::Checksum)?;
        let mut r = ByteReader::new(payload);
        r.bytes(CHECKPOINT_MAGIC.len())?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(RgcnError::Version(version));
        }
        let input_dim = r.u32()? as usize;
        let hidden_dim = r.u32()? as usize;
        let output_dim = r.u32()? as usize;
        let num_layers = r.u32()? as usize;
        let activation = match r.u8()? {
            0 => Activation::Relu,
            1 => Activation::Identity,
            k => return Err(RgcnError::Malformed(format!("activation code {k}"))),
        };
        let agg = r.u8()?;
        let aggregator =
            Aggregator::from_code(agg).ok_or_else(|| RgcnError::Malformed(format!("aggregator code {agg}")))?;
        let dropout = r.f64()?;
        let meta = CheckpointMeta {
            seed: r.u64()?,
            epoch: r.u64()?,
            loss: r.f64()?,
            lambda: r.f64()?,
        };
        let config = RgcnConfig {
            input_dim,
            hidden_dim,
            output_dim,
            num_layers,
            activation,
            aggregator,
            dropout,
        };
        let count = r.u32()? as usize;
        if count != num_layers * 3 {
            return Err(RgcnError::Malformed(format!(
                "{count} tensors for {num_layers} layers"
            )));
        }
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.bytes(len)?)
                .map_err(|e| RgcnError::Malformed(e.to_string()))?
                .to_string();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let mut data = Vec::with_capacity(rows.saturating_mul(cols).min(r.remaining() / 8));
            for _ in 0..rows * cols {
                data.push(r.f64()?);
            }
            tensors.push((name, Tensor::new(rows, cols, data)?));
        }
        if r.remaining() != 0 {
            return Err(RgcnError::Malformed(format!("{} trailing bytes", r.remaining())));
        }
        let mut it = tensors.into_iter();
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let mut take = |expect: &str| -> Result<Tensor> {
                let (name, t) = it.next().expect("count checked");
                let want = format!("layer{l}.{expect}");
                if name != want {
                    return Err(RgcnError::Malformed(format!("tensor `{name}`, expected `{want}`")));
                }
                Ok(t)
            };
            layers.push(LayerParams {
                qr: take("qr")?,
                rr: take("rr")?,
                self_loop: take("self")?,
            });
        }
        Ok(Self {
            model: RgcnModel::from_parts(config, layers)?,
            meta,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ckpt.encode())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{BuildInfo, Edge, Node};

    fn info() -> BuildInfo {
        BuildInfo {
            lambda: 0.0,
            alpha: None,
            top_n: 0,
        }
    }

    fn two_node_graph() -> HeteroGraph {
        HeteroGraph::new(
            2,
            vec![
                Node {
                    id: "q".into(),
                    kind: NodeType::Query,
                },
                Node {
                    id: "R".into(),
                    kind: NodeType::Resource,
                },
            ],
            vec![1.0, -1.0, 2.0, 0.0],
            vec![Edge {
                src: 0,
                dst: 1,
                relation: Relation::Qr,
                weight: 1.0,
            }],
            info(),
        )
        .unwrap()
    }

    fn identity_layer(d: usize) -> LayerParams {
        LayerParams {
            qr: Tensor::identity(d),
            rr: Tensor::identity(d),
            self_loop: Tensor::identity(d),
        }
    }

    #[test]
    fn hand_evaluated_two_node_layer() {
        let g = two_node_graph();
        let h = Tensor::new(2, 2, g.features().to_vec()).unwrap();
        let out = layer_forward(&g, &h, &identity_layer(2), Aggregator::Sum, Activation::Relu).unwrap();
        assert_eq!(out.data(), &[3.0, 0.0, 3.0, 0.0]);
    }

    #[test]
    fn isolated_node_keeps_self_term() {
        let mut g_nodes = vec![Node {
            id: "R".into(),
            kind: NodeType::Resource,
        }];
        g_nodes.push(Node {
            id: "S".into(),
            kind: NodeType::Resource,
        });
        let g = HeteroGraph::new(2, g_nodes, vec![1.0, -2.0, 0.5, 0.5], vec![], info()).unwrap();
        let h = Tensor::new(2, 2, g.features().to_vec()).unwrap();
        let out = layer_forward(&g, &h, &identity_layer(2), Aggregator::Sum, Activation::Relu).unwrap();
        assert_eq!(out.data(), &[1.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn mean_and_max_aggregators() {
        // query joined to two resources
        let nodes = vec![
            Node {
                id: "q".into(),
                kind: NodeType::Query,
            },
            Node {
                id: "A".into(),
                kind: NodeType::Resource,
            },
            Node {
                id: "B".into(),
                kind: NodeType::Resource,
            },
        ];
        let edges = [1, 2]
            .map(|d| Edge {
                src: 0,
                dst: d,
                relation: Relation::Qr,
                weight: 1.0,
            })
            .to_vec();
        let g = HeteroGraph::new(1, nodes, vec![0.0, 2.0, 4.0], edges, info()).unwrap();
        let h = Tensor::new(3, 1, g.features().to_vec()).unwrap();
        let p = identity_layer(1);
        let f = |a| layer_forward(&g, &h, &p, a, Activation::Identity).unwrap().data().to_vec();
        assert_eq!(f(Aggregator::Sum), vec![6.0, 2.0, 4.0]);
        assert_eq!(f(Aggregator::Mean), vec![3.0, 2.0, 4.0]);
        assert_eq!(f(Aggregator::Max), vec![4.0, 2.0, 4.0]);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let c = RgcnConfig::with_dims(6);
        let a = RgcnModel::init(c, 1).unwrap();
        assert_eq!(a, RgcnModel::init(c, 1).unwrap());
        assert_ne!(a, RgcnModel::init(c, 2).unwrap());
        let bound = (6.0f64 / 12.0).sqrt();
        assert!(a.params().iter().all(|t| t.data().iter().all(|x| x.abs() <= bound)));
        assert_eq!(a.num_parameters(), 2 * 3 * 36);
        assert!(matches!(
            RgcnModel::init(RgcnConfig::with_dims(0), 1),
            Err(RgcnError::ZeroDim)
        ));
    }

    #[test]
    fn layer_dims_chain() {
        let c = RgcnConfig {
            input_dim: 5,
            hidden_dim: 7,
            output_dim: 3,
            num_layers: 3,
            ..RgcnConfig::default()
        };
        assert_eq!(c.layer_dims(), vec![(5, 7), (7, 7), (7, 3)]);
        let m = RgcnModel::init(c, 0).unwrap();
        let g = HeteroGraph::new(
            5,
            vec![Node {
                id: "q".into(),
                kind: NodeType::Query,
            }],
            vec![1.0; 5],
            vec![],
            info(),
        )
        .unwrap();
        assert_eq!(model_forward(&g, &m, false, 0).unwrap().shape(), [1, 3]);
    }

    #[test]
    fn zero_layer_model_is_identity() {
        let g = two_node_graph();
        let c = RgcnConfig {
            num_layers: 0,
            ..RgcnConfig::with_dims(2)
        };
        let m = RgcnModel::init(c, 0).unwrap();
        assert_eq!(model_forward(&g, &m, true, 0).unwrap().data(), g.features());
        let bad = RgcnConfig {
            num_layers: 0,
            output_dim: 3,
            ..RgcnConfig::with_dims(2)
        };
        assert!(RgcnModel::init(bad, 0).is_err());
    }

    #[test]
    fn dropout_only_in_training() {
        let g = two_node_graph();
        let c = RgcnConfig {
            dropout: 0.5,
            hidden_dim: 16,
            ..RgcnConfig::with_dims(2)
        };
        let m = RgcnModel::init(c, 3).unwrap();
        let eval = model_forward(&g, &m, false, 1).unwrap();
        assert_eq!(eval, model_forward(&g, &m, false, 2).unwrap());
        let t1 = model_forward(&g, &m, true, 1).unwrap();
        assert_eq!(t1, model_forward(&g, &m, true, 1).unwrap());
        let no_drop = RgcnModel {
            config: RgcnConfig { dropout: 0.0, ..c },
            layers: m.layers.clone(),
        };
        assert_eq!(model_forward(&g, &no_drop, true, 9).unwrap(), eval);
    }

    #[test]
    fn predict_orders_by_cosine() {
        let g = two_node_graph();
        let h = Tensor::new(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let r = predict(&g, &h, "q").unwrap();
        assert_eq!(r.items(), &[("R".to_string(), 1.0)]);
        assert!(matches!(predict(&g, &h, "x"), Err(RgcnError::UnknownQuery(_))));
    }

    #[test]
    fn feature_dim_mismatch() {
        let g = two_node_graph();
        let m = RgcnModel::init(RgcnConfig::with_dims(3), 0).unwrap();
        assert!(matches!(
            model_forward(&g, &m, false, 0),
            Err(RgcnError::DimMismatch { .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let m = RgcnModel::init(
            RgcnConfig {
                aggregator: Aggregator::Mean,
                dropout: 0.3,
                ..RgcnConfig::with_dims(2)
            },
            4,
        )
        .unwrap();
        let ck = Checkpoint {
            model: m,
            meta: CheckpointMeta {
                seed: 4,
                epoch: 17,
                loss: 0.25,
                lambda: 0.5,
            },
        };
        let bytes = ck.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        let g = two_node_graph();
        assert_eq!(
            model_forward(&g, &back.model, false, 0).unwrap(),
            model_forward(&g, &ck.model, false, 0).unwrap()
        );
        let mut bad = bytes.clone();
        bad[20] ^= 1;
        assert!(matches!(Checkpoint::decode(&bad), Err(RgcnError::Checksum)));
        assert!(matches!(Checkpoint::decode(b"nope"), Err(RgcnError::BadMagic)));
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 5]).is_err());
    }
}
