use std::hash::{Hash, Hasher};

use ndarray::{Array1, Array2};

use super::layers::BatchNormCache;
use super::{
    he_bound, lecun_bound, relu, relu_backward, BatchNorm1d, Conv1d, Dense, MaxPool1d, Mode, Param,
    Parameterized,
};
use crate::rng::RngStream;

/// conv -> batch norm -> ReLU -> max pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub conv: Conv1d,
    pub bn: BatchNorm1d,
}

/// Stack of [`ConvBlock`]s ending in a flatten.
#[derive(Debug, Clone, PartialEq)]
pub struct Trunk {
    pub blocks: Vec<ConvBlock>,
    pub pool: MaxPool1d,
}

#[derive(Debug, Clone)]
struct BlockCache {
    len: usize,
    cols: Array2<f64>,
    bn: BatchNormCache,
    act: Array2<f64>,
    arg: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TrunkCache {
    batch: usize,
    blocks: Vec<BlockCache>,
}

impl TrunkCache {
    /// Feeds which ReLUs are active and which pool inputs won into `h`.
    pub fn hash_pattern<H: Hasher>(&self, h: &mut H) {
        for b in &self.blocks {
            hash_active(&b.act, h);
            b.arg.hash(h);
        }
    }
}

fn hash_active<H: Hasher>(x: &Array2<f64>, h: &mut H) {
    for v in x.iter() {
        (*v > 0.0).hash(h);
    }
}

impl Trunk {
    pub fn new(
        in_channels: usize,
        filters: &[usize],
        kernel: usize,
        pool: usize,
        rng: &mut RngStream,
    ) -> Self {
        let mut cin = in_channels;
        let blocks = filters
            .iter()
            .map(|&cout| {
                let b = ConvBlock {
                    conv: Conv1d::new(cin, cout, kernel, rng),
                    bn: BatchNorm1d::new(cout),
                };
                cin = cout;
                b
            })
            .collect();
        Self {
            blocks,
            pool: MaxPool1d { size: pool },
        }
    }

    pub fn in_channels(&self) -> usize {
        self.blocks[0].conv.in_channels
    }

    /// Width of the flattened output for an input of length `len`.
    pub fn flat_width(&self, len: usize) -> usize {
        let out_len = self.blocks.iter().fold(len, |l, _| self.pool.out_len(l));
        out_len * self.blocks.last().map_or(0, |b| b.conv.out_channels)
    }

    /// `x` is `[B * len, C_in]`; returns `[B, flat_width]`.
    pub fn forward(
        &self,
        x: &Array2<f64>,
        batch: usize,
        len: usize,
        mode: Mode,
    ) -> (Array2<f64>, TrunkCache) {
        let mut h = x.clone();
        let mut l = len;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (z, cols) = block.conv.forward(&h, batch, l);
            let (y, bn) = block.bn.forward(&z, mode);
            let act = relu(&y);
            let (pooled, arg) = self.pool.forward(&act, batch, l);
            caches.push(BlockCache {
                len: l,
                cols,
                bn,
                act,
                arg,
            });
            h = pooled;
            l = self.pool.out_len(l);
        }
        let width = l * h.ncols();
        let flat = h
            .into_shape_with_order((batch, width))
            .expect("contiguous activation");
        (
            flat,
            TrunkCache {
                batch,
                blocks: caches,
            },
        )
    }

    pub fn backward(&mut self, cache: &TrunkCache, dflat: &Array2<f64>, mode: Mode) {
        let batch = cache.batch;
        let last_c = self
            .blocks
            .last()
            .expect("nonempty trunk")
            .conv
            .out_channels;
        let rows = dflat.len() / last_c;
        let mut dh = dflat
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((rows, last_c))
            .expect("contiguous gradient");
        for (i, (block, bc)) in self.blocks.iter_mut().zip(&cache.blocks).enumerate().rev() {
            let dact = self.pool.backward(&dh, &bc.arg, batch * bc.len);
            let dy = relu_backward(&bc.act, &dact);
            let dz = block.bn.backward(&bc.bn, &dy, mode);
            match block.conv.backward(&bc.cols, &dz, batch, bc.len, i > 0) {
                Some(dx) => dh = dx,
                None => break,
            }
        }
    }

    pub fn update_running(&mut self, cache: &TrunkCache) {
        for (block, bc) in self.blocks.iter_mut().zip(&cache.blocks) {
            block.bn.update_running(&bc.bn);
        }
    }
}

impl Parameterized for Trunk {
    fn params(&self) -> Vec<&Param> {
        self.blocks
            .iter()
            .flat_map(|b| b.conv.params().into_iter().chain(b.bn.params()))
            .collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.blocks
            .iter_mut()
            .flat_map(|b| {
                let ConvBlock { conv, bn } = b;
                conv.params_mut().into_iter().chain(bn.params_mut())
            })
            .collect()
    }
    fn buffers(&self) -> Vec<&Array1<f64>> {
        self.blocks.iter().flat_map(|b| b.bn.buffers()).collect()
    }
    fn buffers_mut(&mut self) -> Vec<&mut Array1<f64>> {
        self.blocks
            .iter_mut()
            .flat_map(|b| b.bn.buffers_mut())
            .collect()
    }
}

/// Dense layers with ReLU between them and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn hash_pattern<H: Hasher>(&self, h: &mut H) {
        for x in self.inputs.iter().skip(1) {
            hash_active(x, h);
        }
    }
}

impl Mlp {
    /// `widths = [in, h1, ..., out]`.
    pub fn new(widths: &[usize], rng: &mut RngStream) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        let n = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let bound = if i + 1 == n {
                    lecun_bound(w[0])
                } else {
                    he_bound(w[0])
                };
                Dense::new(w[0], w[1], bound, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().expect("nonempty").outputs()
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            inputs.push(h);
            h = if i + 1 < self.layers.len() {
                relu(&z)
            } else {
                z
            };
        }
        (h, MlpCache { inputs })
    }

    pub fn backward(&mut self, cache: &MlpCache, dout: &Array2<f64>) -> Array2<f64> {
        let mut d = dout.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            let dx = layer.backward(&cache.inputs[i], &d);
            d = if i > 0 {
                relu_backward(&cache.inputs[i], &dx)
            } else {
                dx
            };
        }
        d
    }
}

impl Parameterized for Mlp {
    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }
}

/// Convolutional trunk followed by an MLP head.
#[derive(Debug, Clone, PartialEq)]
pub struct Tower {
    pub trunk: Trunk,
    pub head: Mlp,
}

#[derive(Debug, Clone)]
pub struct TowerCache {
    trunk: TrunkCache,
    head: MlpCache,
}

impl TowerCache {
    pub fn hash_pattern<H: Hasher>(&self, h: &mut H) {
        self.trunk.hash_pattern(h);
        self.head.hash_pattern(h);
    }
}

impl Tower {
    pub fn forward(
        &self,
        x: &Array2<f64>,
        batch: usize,
        len: usize,
        mode: Mode,
    ) -> (Array2<f64>, TowerCache) {
        let (flat, trunk) = self.trunk.forward(x, batch, len, mode);
        let (out, head) = self.head.forward(&flat);
        (out, TowerCache { trunk, head })
    }

    pub fn backward(&mut self, cache: &TowerCache, dout: &Array2<f64>, mode: Mode) {
        let dflat = self.head.backward(&cache.head, dout);
        self.trunk.backward(&cache.trunk, &dflat, mode);
    }

    pub fn update_running(&mut self, cache: &TowerCache) {
        self.trunk.update_running(&cache.trunk);
    }
}

impl Parameterized for Tower {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.trunk.params();
        p.extend(self.head.params());
        p
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let Tower { trunk, head } = self;
        let mut p = trunk.params_mut();
        p.extend(head.params_mut());
        p
    }
    fn buffers(&self) -> Vec<&Array1<f64>> {
        self.trunk.buffers()
    }
    fn buffers_mut(&mut self) -> Vec<&mut Array1<f64>> {
        self.trunk.buffers_mut()
    }
}
