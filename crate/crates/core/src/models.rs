//! The classifier architectures: a two-stage convolutional network on 28x28
//! inputs and single-hidden-layer baselines at three input resolutions.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::Task;
use crate::nn::{init_weights, ConvParams, DenseParams, Layer, Network, Shape};

pub const CNN_INPUT_SIDE: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelVariant {
    Cnn,
    Nn1,
    Nn2,
    Nn3,
}

impl ModelVariant {
    pub fn input_side(self) -> usize {
        match self {
            ModelVariant::Cnn | ModelVariant::Nn1 => 28,
            ModelVariant::Nn2 => 60,
            ModelVariant::Nn3 => 120,
        }
    }

    pub fn arch(self, task: Task) -> ArchDescriptor {
        match self {
            ModelVariant::Cnn => ArchDescriptor::cnn(task),
            shallow => ArchDescriptor::shallow(shallow, task),
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelVariant::Cnn => "cnn",
            ModelVariant::Nn1 => "nn1",
            ModelVariant::Nn2 => "nn2",
            ModelVariant::Nn3 => "nn3",
        })
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn" => Ok(ModelVariant::Cnn),
            "nn1" => Ok(ModelVariant::Nn1),
            "nn2" => Ok(ModelVariant::Nn2),
            "nn3" => Ok(ModelVariant::Nn3),
            other => Err(Error::Config(format!("unknown model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    Cnn,
    ShallowNn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub kind: ArchKind,
    pub input_side: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_conv1: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_conv2: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_size: Option<usize>,
    pub n_classes: usize,
}

impl ArchDescriptor {
    /// Kernel counts: 12 and 24 for three classes, 9 and 18 for two.
    pub fn cnn(task: Task) -> Self {
        let (n, j) = match task {
            Task::ThreeClass => (12, 24),
            Task::Binary => (9, 18),
        };
        Self {
            kind: ArchKind::Cnn,
            input_side: CNN_INPUT_SIDE,
            n_conv1: Some(n),
            n_conv2: Some(j),
            hidden_size: None,
            n_classes: task.n_classes(),
        }
    }

    pub fn shallow(variant: ModelVariant, task: Task) -> Self {
        let hidden = match variant {
            ModelVariant::Nn1 => 30,
            ModelVariant::Nn2 => 45,
            ModelVariant::Nn3 => 300,
            ModelVariant::Cnn => panic!("the CNN is not a shallow variant"),
        };
        Self {
            kind: ArchKind::ShallowNn,
            input_side: variant.input_side(),
            n_conv1: None,
            n_conv2: None,
            hidden_size: Some(hidden),
            n_classes: task.n_classes(),
        }
    }

    pub fn task(&self) -> Result<Task> {
        Task::from_n_classes(self.n_classes)
    }

    pub fn variant(&self) -> Result<ModelVariant> {
        match (self.kind, self.input_side) {
            (ArchKind::Cnn, _) => Ok(ModelVariant::Cnn),
            (ArchKind::ShallowNn, 28) => Ok(ModelVariant::Nn1),
            (ArchKind::ShallowNn, 60) => Ok(ModelVariant::Nn2),
            (ArchKind::ShallowNn, 120) => Ok(ModelVariant::Nn3),
            (_, side) => Err(Error::Config(format!("no shallow variant for input side {side}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let task = self.task()?;
        let expected = self.variant()?.arch(task);
        if *self != expected {
            return Err(Error::Config(format!(
                "architecture {self:?} does not match the {} layout for {} classes",
                self.variant()?,
                self.n_classes
            )));
        }
        Ok(())
    }

    /// Layer stack with zero parameters.
    pub fn layers(&self) -> Result<(Shape, Vec<Layer>)> {
        self.validate()?;
        let side = self.input_side;
        let input = Shape::new(1, side, side);
        let layers = match self.kind {
            ArchKind::Cnn => {
                let n = self.n_conv1.expect("validated");
                let j = self.n_conv2.expect("validated");
                // 28 -> conv 24 -> pool 12 -> conv 8 -> pool 4
                let flat = j * 4 * 4;
                vec![
                    Layer::Conv(ConvParams::zeros(1, n)),
                    Layer::Sigmoid,
                    Layer::AvgPool2,
                    Layer::Conv(ConvParams::zeros(n, j)),
                    Layer::Sigmoid,
                    Layer::AvgPool2,
                    Layer::Flatten,
                    Layer::Dense(DenseParams::zeros(flat, self.n_classes)),
                    Layer::Sigmoid,
                ]
            }
            ArchKind::ShallowNn => {
                let hidden = self.hidden_size.expect("validated");
                vec![
                    Layer::Flatten,
                    Layer::Dense(DenseParams::zeros(side * side, hidden)),
                    Layer::Sigmoid,
                    Layer::Dense(DenseParams::zeros(hidden, self.n_classes)),
                    Layer::Sigmoid,
                ]
            }
        };
        Ok((input, layers))
    }
}

/// A network together with the descriptor and seed it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub arch: ArchDescriptor,
    pub seed: u64,
    pub network: Network,
}

impl NetworkModel {
    pub fn build(arch: ArchDescriptor, seed: u64) -> Result<Self> {
        let (input, layers) = arch.layers()?;
        let mut network = Network::new(input, layers)?;
        init_weights(&mut network, seed);
        Ok(Self { arch, seed, network })
    }

    pub fn task(&self) -> Task {
        self.arch.task().expect("validated at construction")
    }

    pub fn to_json(&self) -> Result<String> {
        let layers = self
            .network
            .layers()
            .iter()
            .filter_map(|l| match l {
                Layer::Conv(p) => Some(LayerRecord::Conv {
                    kernels: p.kernels.clone(),
                    bias: p.bias.clone(),
                }),
                Layer::Dense(p) => Some(LayerRecord::Fc {
                    weights: p.weights.clone(),
                    bias: p.bias.clone(),
                }),
                _ => None,
            })
            .collect();
        Ok(serde_json::to_string(&ModelFile {
            arch: self.arch,
            seed: self.seed,
            layers,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        let (input, mut layers) = file.arch.layers()?;
        let mut records = file.layers.into_iter();
        for layer in &mut layers {
            match layer {
                Layer::Conv(p) => match records.next() {
                    Some(LayerRecord::Conv { kernels, bias }) => {
                        p.kernels = kernels;
                        p.bias = bias;
                        p.validate()?;
                    }
                    _ => return Err(Error::Shape("model file: expected a conv layer".into())),
                },
                Layer::Dense(p) => match records.next() {
                    Some(LayerRecord::Fc { weights, bias }) => {
                        p.weights = weights;
                        p.bias = bias;
                        p.validate()?;
                    }
                    _ => return Err(Error::Shape("model file: expected an fc layer".into())),
                },
                _ => {}
            }
        }
        if records.next().is_some() {
            return Err(Error::Shape("model file has extra layers".into()));
        }
        Ok(Self {
            arch: file.arch,
            seed: file.seed,
            network: Network::new(input, layers)?,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

pub fn build_cnn(n_classes: usize, seed: u64) -> Result<NetworkModel> {
    NetworkModel::build(ArchDescriptor::cnn(Task::from_n_classes(n_classes)?), seed)
}

pub fn build_shallow(variant: ModelVariant, n_classes: usize, seed: u64) -> Result<NetworkModel> {
    if variant == ModelVariant::Cnn {
        return Err(Error::Config("the CNN is not a shallow variant".into()));
    }
    NetworkModel::build(
        ArchDescriptor::shallow(variant, Task::from_n_classes(n_classes)?),
        seed,
    )
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    arch: ArchDescriptor,
    seed: u64,
    layers: Vec<LayerRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LayerRecord {
    Conv { kernels: Vec<f64>, bias: Vec<f64> },
    Fc { weights: Vec<f64>, bias: Vec<f64> },
}
