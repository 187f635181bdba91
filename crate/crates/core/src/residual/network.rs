use super::unit::{residual_branch, Downsample, OriginalUnit, Unit, WeightedUnit};
use super::ResidualWeight;
use crate::error::{Error, Result};
use crate::layers::{
    join, BatchNorm2d, Conv2d, GlobalAvgPool, Layer, Linear, Mode, Param, Relu, Sequential,
    StateVisitor,
};
use crate::tensor::{streams, DType, Element, Rng, Tensor};

pub const BLOCKS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// `x + lambda * branch(x)`
    Weighted,
    /// `ReLU(x + branch(x))`
    Original,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Weighted => "weighted",
            Variant::Original => "original",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "weighted" => Some(Variant::Weighted),
            "original" => Some(Variant::Original),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    /// Residual units per block; the network has `6n + 4` counted layers.
    pub units_per_block: usize,
    pub variant: Variant,
    /// Branch dropout ratio for each of the three blocks, 0 disables.
    pub dropout_ratios: [f64; BLOCKS],
    pub seed: u64,
    pub precision: DType,
    pub lambda_lr_mult: f64,
    pub num_classes: usize,
    pub base_width: usize,
    pub input_channels: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            units_per_block: 1,
            variant: Variant::Weighted,
            dropout_ratios: [0.0; BLOCKS],
            seed: 1,
            precision: DType::F32,
            lambda_lr_mult: 1.0,
            num_classes: 10,
            base_width: 16,
            input_channels: 3,
        }
    }
}

impl NetworkConfig {
    pub fn new(units_per_block: usize, variant: Variant) -> Self {
        NetworkConfig {
            units_per_block,
            variant,
            ..Default::default()
        }
    }

    pub fn expected_layers(&self) -> usize {
        6 * self.units_per_block + 4
    }

    pub fn widths(&self) -> [usize; BLOCKS] {
        [self.base_width, 2 * self.base_width, 4 * self.base_width]
    }
}

/// Stem, three blocks of residual units separated by highway downsampling,
/// global average pooling and a fully connected classifier.
pub struct Network<T> {
    pub config: NetworkConfig,
    pub stem: Sequential<T>,
    pub blocks: Vec<Vec<Unit<T>>>,
    pub downsamples: Vec<Downsample<T>>,
    pub pool: GlobalAvgPool,
    pub fc: Linear<T>,
    block_shapes: Vec<Vec<usize>>,
}

/// Builds the network described by `cfg` with msra-initialized convolutions
/// and all residual weights at zero.
pub fn build_network<T: Element>(cfg: &NetworkConfig) -> Result<Network<T>> {
    if cfg.units_per_block == 0 {
        return Err(Error::InvalidArgument("units_per_block must be at least 1".into()));
    }
    if cfg.num_classes == 0 || cfg.base_width == 0 || cfg.input_channels == 0 {
        return Err(Error::InvalidArgument(
            "num_classes, base_width and input_channels must be positive".into(),
        ));
    }
    for &r in &cfg.dropout_ratios {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::InvalidArgument(format!("dropout ratio {r} outside [0, 1)")));
        }
    }
    let mut init = Rng::derive(cfg.seed, streams::INIT);
    let widths = cfg.widths();
    let stem = Sequential::new()
        .push("conv", Conv2d::new(cfg.input_channels, widths[0], 3, 1, 1, &mut init)?)
        .push("bn", BatchNorm2d::new(widths[0])?)
        .push("relu", Relu::new());

    let mut blocks = Vec::with_capacity(BLOCKS);
    let mut downsamples = Vec::with_capacity(BLOCKS - 1);
    let mut unit_index = 0u64;
    for (b, &width) in widths.iter().enumerate() {
        if b > 0 {
            downsamples.push(Downsample::new(widths[b - 1], &mut init)?);
        }
        let mut units = Vec::with_capacity(cfg.units_per_block);
        for _ in 0..cfg.units_per_block {
            let dropout = Some((
                cfg.dropout_ratios[b],
                Rng::derive(cfg.seed, streams::DROPOUT + unit_index),
            ));
            let unit = match cfg.variant {
                Variant::Weighted => {
                    let mut u = WeightedUnit::new(residual_branch(width, true, dropout, &mut init)?);
                    u.lambda.lr_mult = cfg.lambda_lr_mult;
                    Unit::Weighted(u)
                }
                Variant::Original => {
                    Unit::Original(OriginalUnit::new(residual_branch(width, false, dropout, &mut init)?))
                }
            };
            units.push(unit);
            unit_index += 1;
        }
        blocks.push(units);
    }
    let fc = Linear::new(widths[BLOCKS - 1], cfg.num_classes, &mut init)?;
    Ok(Network {
        config: cfg.clone(),
        stem,
        blocks,
        downsamples,
        pool: GlobalAvgPool::new(),
        fc,
        block_shapes: Vec::new(),
    })
}

impl<T: Element> Network<T> {
    /// Counted (conv and fully connected) layers.
    pub fn layer_count(&self) -> usize {
        self.counted_layers()
    }

    /// Output shape of each block from the most recent forward pass.
    pub fn block_shapes(&self) -> &[Vec<usize>] {
        &self.block_shapes
    }

    pub fn unit_count(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn residual_weights(&self) -> Vec<&ResidualWeight> {
        self.blocks
            .iter()
            .flatten()
            .filter_map(|u| u.lambda())
            .collect()
    }

    pub fn residual_weights_mut(&mut self) -> Vec<&mut ResidualWeight> {
        self.blocks
            .iter_mut()
            .flatten()
            .filter_map(|u| u.lambda_mut())
            .collect()
    }

    pub fn lambda_values(&self) -> Vec<f64> {
        self.residual_weights().iter().map(|w| w.value).collect()
    }

    pub fn zero_grad(&mut self) {
        struct Zero;
        impl<T: Element> StateVisitor<T> for Zero {
            fn param(&mut self, _: &str, p: &mut Param<T>) {
                p.zero_grad();
            }
            fn residual_weight(&mut self, _: &str, w: &mut ResidualWeight) {
                w.grad = 0.0;
            }
        }
        self.visit("", &mut Zero);
    }
}

impl<T: Element> Layer<T> for Network<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut x = self.stem.forward(input, mode)?;
        self.block_shapes.clear();
        for (b, units) in self.blocks.iter_mut().enumerate() {
            if b > 0 {
                x = self.downsamples[b - 1].forward(&x, mode)?;
            }
            for unit in units.iter_mut() {
                x = unit.forward(&x, mode)?;
            }
            self.block_shapes.push(x.shape().to_vec());
        }
        let pooled = self.pool.forward(&x, mode)?;
        self.fc.forward(&pooled, mode)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.fc.backward(grad_output)?;
        let mut g = Layer::<T>::backward(&mut self.pool, &g)?;
        for (b, units) in self.blocks.iter_mut().enumerate().rev() {
            for unit in units.iter_mut().rev() {
                g = unit.backward(&g)?;
            }
            if b > 0 {
                g = self.downsamples[b - 1].backward(&g)?;
            }
        }
        self.stem.backward(&g)
    }

    fn visit(&mut self, prefix: &str, visitor: &mut dyn StateVisitor<T>) {
        self.stem.visit(&join(prefix, "stem"), visitor);
        for (b, units) in self.blocks.iter_mut().enumerate() {
            if b > 0 {
                self.downsamples[b - 1].visit(&join(prefix, &format!("downsample{b}")), visitor);
            }
            for (i, unit) in units.iter_mut().enumerate() {
                unit.visit(&join(prefix, &format!("block{}.unit{i}", b + 1)), visitor);
            }
        }
        self.fc.visit(&join(prefix, "head.fc"), visitor);
    }

    fn counted_layers(&self) -> usize {
        self.stem.counted_layers()
            + self.downsamples.iter().map(|d| d.counted_layers()).sum::<usize>()
            + self
                .blocks
                .iter()
                .flatten()
                .map(|u| u.counted_layers())
                .sum::<usize>()
            + self.fc.counted_layers()
    }

    fn kind(&self) -> &'static str {
        "network"
    }
}

/// Runs `k` consecutive weighted units of `block` starting at `start` two ways
/// in EVAL mode: sequentially, and as `x + sum_j lambda_j * branch_j(x_j)`
/// over the intermediate highway values `x_j`.
pub fn compose_check<T: Element>(
    network: &mut Network<T>,
    block: usize,
    start: usize,
    k: usize,
    x: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let units = network
        .blocks
        .get_mut(block)
        .ok_or_else(|| Error::InvalidArgument(format!("no block {block}")))?;
    if k == 0 || start + k > units.len() {
        return Err(Error::InvalidArgument(format!(
            "units {start}..{} outside block of {}",
            start + k,
            units.len()
        )));
    }
    let mut highway = x.clone();
    let mut telescoped = x.clone();
    for unit in &mut units[start..start + k] {
        let Unit::Weighted(u) = unit else {
            return Err(Error::InvalidArgument("compose_check needs weighted units".into()));
        };
        let r = u.branch.forward(&highway, Mode::Eval)?;
        telescoped.axpy(T::from_f64_lossy(u.lambda.value), &r)?;
        highway = u.forward(&highway, Mode::Eval)?;
    }
    Ok((highway, telescoped))
}
