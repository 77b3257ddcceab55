//! Desk-scale style-modulated convolutional generator.
//!
//! Architecture: a learned 4x4 constant, then per resolution 8, 16, ..., R a
//! nearest 2x upsample followed by two modulated 3x3 convolutions with
//! leaky ReLU, and a modulated 1x1 toRGB head whose output is summed into an
//! upsampled RGB skip. The image is `0.5 (tanh(rgb) + 1)`.
//!
//! Style-consuming layers are indexed with the `num_convs()` main convolutions
//! first, followed by one toRGB head per resolution. A layer-wise latent has
//! one row per style-consuming layer; a filter-wise latent has, for every
//! such layer, one code per output filter (`channels` for convolutions, 3 for
//! toRGB heads).

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::kernels;
use crate::rng::Stream;
use crate::tape::{Gradients, Graph, Var};
use crate::tensor::{read_u32, Tensor};

const CKPT_MAGIC: &[u8; 4] = b"RGIR";
const CKPT_VERSION: u32 = 1;
const DEMOD_EPS: f64 = 1e-8;
const LRELU_SLOPE: f64 = 0.2;
const RGB_GAIN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub latent_dim: usize,
    pub channels: usize,
    pub resolution: usize,
    pub mapping_layers: usize,
    pub demodulate: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            channels: 32,
            resolution: 64,
            mapping_layers: 2,
            demodulate: true,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("latent_dim", self.latent_dim),
            ("channels", self.channels),
            ("resolution", self.resolution),
        ] {
            if !v.is_power_of_two() {
                return Err(Error::invalid(format!("{name} = {v} is not a power of two")));
            }
        }
        if self.resolution < 8 {
            return Err(Error::invalid("resolution must be at least 8"));
        }
        if self.mapping_layers == 0 {
            return Err(Error::invalid("mapping network needs at least one layer"));
        }
        Ok(())
    }

    /// Number of resolution blocks above the 4x4 constant.
    pub fn num_blocks(&self) -> usize {
        (self.resolution / 4).trailing_zeros() as usize
    }

    /// N_L: style-modulated 3x3 convolutions (two per block).
    pub fn num_convs(&self) -> usize {
        2 * self.num_blocks()
    }

    /// Conv layers plus toRGB heads.
    pub fn num_style_layers(&self) -> usize {
        self.num_convs() + self.num_blocks()
    }

    /// N_F(l) for style-consuming layer `l`.
    pub fn filters(&self, layer: usize) -> usize {
        if layer < self.num_convs() {
            self.channels
        } else {
            3
        }
    }

    pub fn total_filter_codes(&self) -> usize {
        (0..self.num_style_layers()).map(|l| self.filters(l)).sum()
    }
}

/// One modulated layer: filter bank plus its affine style projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulatedLayer {
    /// `[C_out, C_in, k, k]`
    pub filters: Tensor,
    /// `[d, C_in]`
    pub affine_weight: Tensor,
    /// `[C_in]`, initialized to 1
    pub affine_bias: Tensor,
}

impl ModulatedLayer {
    fn out_channels(&self) -> usize {
        self.filters.shape()[0]
    }

    fn in_channels(&self) -> usize {
        self.filters.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorWeights {
    pub config: GeneratorConfig,
    /// `[C, 4, 4]`
    pub constant: Tensor,
    pub convs: Vec<ModulatedLayer>,
    pub to_rgb: Vec<ModulatedLayer>,
    /// `(weight [d, d], bias [d])` per mapping layer, applied as `z W + b`.
    pub mapping: Vec<(Tensor, Tensor)>,
}

// Weights are drawn in f64 and rounded to f32 so a checkpoint round trip is exact.
fn gaussian(stream: &mut Stream, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| (stream.normal() * std) as f32 as f64).collect();
    Tensor::new(shape, data).expect("shape product matches")
}

impl GeneratorWeights {
    /// He-scaled Gaussian weights from a seeded stream.
    pub fn generate(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut s = Stream::new(seed);
        let (d, c) = (config.latent_dim, config.channels);
        let mapping = (0..config.mapping_layers)
            .map(|_| (gaussian(&mut s, &[d, d], (2.0 / d as f64).sqrt()), Tensor::zeros(&[d])))
            .collect();
        let constant = gaussian(&mut s, &[c, 4, 4], 1.0);
        let layer = |s: &mut Stream, cout: usize, k: usize, std: f64| ModulatedLayer {
            filters: gaussian(s, &[cout, c, k, k], std),
            affine_weight: gaussian(s, &[d, c], 1.0 / (d as f64).sqrt()),
            affine_bias: Tensor::full(&[c], 1.0),
        };
        let conv_std = (2.0 / (c * 9) as f64).sqrt();
        let convs = (0..config.num_convs()).map(|_| layer(&mut s, c, 3, conv_std)).collect();
        let to_rgb = (0..config.num_blocks())
            .map(|_| layer(&mut s, 3, 1, RGB_GAIN / (c as f64).sqrt()))
            .collect();
        Ok(Self {
            config,
            constant,
            convs,
            to_rgb,
            mapping,
        })
    }

    fn style_layer(&self, l: usize) -> &ModulatedLayer {
        let n = self.config.num_convs();
        if l < n {
            &self.convs[l]
        } else {
            &self.to_rgb[l - n]
        }
    }

    fn named_arrays(&self) -> Vec<(String, &Tensor)> {
        let mut v: Vec<(String, &Tensor)> = Vec::new();
        for (i, (w, b)) in self.mapping.iter().enumerate() {
            v.push((format!("mapping.{i}.weight"), w));
            v.push((format!("mapping.{i}.bias"), b));
        }
        v.push(("synthesis.const".into(), &self.constant));
        for (i, l) in self.convs.iter().enumerate() {
            v.push((format!("synthesis.conv.{i}.weight"), &l.filters));
            v.push((format!("synthesis.conv.{i}.affine.weight"), &l.affine_weight));
            v.push((format!("synthesis.conv.{i}.affine.bias"), &l.affine_bias));
        }
        // toRGB style rows follow the conv rows in layer-wise latents
        for (i, l) in self.to_rgb.iter().enumerate() {
            v.push((format!("synthesis.torgb.{i}.weight"), &l.filters));
            v.push((format!("synthesis.torgb.{i}.affine.weight"), &l.affine_weight));
            v.push((format!("synthesis.torgb.{i}.affine.bias"), &l.affine_bias));
        }
        v
    }

    /// Checkpoint: magic, u32 version, u32 array count, then per array a u16
    /// name length, UTF-8 name, u8 dtype (0 = f32), u8 ndim, u32 dims and the
    /// little-endian payload. The first array, `config`, holds
    /// `[latent_dim, channels, resolution, mapping_layers, demodulate]`.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let cfg = &self.config;
        let config = Tensor::from_vec(vec![
            cfg.latent_dim as f64,
            cfg.channels as f64,
            cfg.resolution as f64,
            cfg.mapping_layers as f64,
            if cfg.demodulate { 1.0 } else { 0.0 },
        ]);
        let mut arrays = vec![("config".to_string(), &config)];
        arrays.extend(self.named_arrays());
        w.write_all(CKPT_MAGIC)?;
        w.write_all(&CKPT_VERSION.to_le_bytes())?;
        w.write_all(&(arrays.len() as u32).to_le_bytes())?;
        for (name, t) in arrays {
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[0u8, t.ndim() as u8])?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CKPT_MAGIC {
            return Err(Error::Format("not a generator checkpoint".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CKPT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = read_u32(&mut r)? as usize;
        let mut arrays = std::collections::HashMap::new();
        for _ in 0..count {
            let mut b2 = [0u8; 2];
            r.read_exact(&mut b2)?;
            let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("array name is not UTF-8".into()))?;
            r.read_exact(&mut b2)?;
            let (dtype, ndim) = (b2[0], b2[1] as usize);
            if dtype != 0 {
                return Err(Error::Format(format!("{name}: unsupported dtype code {dtype}")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u32(&mut r)? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut b4 = [0u8; 4];
            for _ in 0..n {
                r.read_exact(&mut b4)?;
                data.push(f32::from_le_bytes(b4) as f64);
            }
            arrays.insert(name, Tensor::new(&shape, data)?);
        }
        let mut take = |name: &str| {
            arrays
                .remove(name)
                .ok_or_else(|| Error::Format(format!("checkpoint is missing {name}")))
        };
        let cfg = take("config")?;
        let cv = cfg.data();
        if cv.len() != 5 {
            return Err(Error::Format("config array must hold 5 values".into()));
        }
        let config = GeneratorConfig {
            latent_dim: cv[0] as usize,
            channels: cv[1] as usize,
            resolution: cv[2] as usize,
            mapping_layers: cv[3] as usize,
            demodulate: cv[4] != 0.0,
        };
        config.validate()?;
        let mut mapping = Vec::new();
        for i in 0..config.mapping_layers {
            mapping.push((
                take(&format!("mapping.{i}.weight"))?,
                take(&format!("mapping.{i}.bias"))?,
            ));
        }
        let constant = take("synthesis.const")?;
        let mut load_layer = |prefix: String| -> Result<ModulatedLayer> {
            Ok(ModulatedLayer {
                filters: take(&format!("{prefix}.weight"))?,
                affine_weight: take(&format!("{prefix}.affine.weight"))?,
                affine_bias: take(&format!("{prefix}.affine.bias"))?,
            })
        };
        let convs = (0..config.num_convs())
            .map(|i| load_layer(format!("synthesis.conv.{i}")))
            .collect::<Result<Vec<_>>>()?;
        let to_rgb = (0..config.num_blocks())
            .map(|i| load_layer(format!("synthesis.torgb.{i}")))
            .collect::<Result<Vec<_>>>()?;
        let weights = Self {
            config,
            constant,
            convs,
            to_rgb,
            mapping,
        };
        weights.check_shapes()?;
        Ok(weights)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_checkpoint(std::io::BufReader::new(f))
    }

    fn check_shapes(&self) -> Result<()> {
        let (d, c) = (self.config.latent_dim, self.config.channels);
        let bad = |what: &str| Err(Error::Format(format!("checkpoint array {what} has the wrong shape")));
        for (w, b) in &self.mapping {
            if w.shape() != [d, d] || b.shape() != [d] {
                return bad("mapping");
            }
        }
        if self.constant.shape() != [c, 4, 4] {
            return bad("synthesis.const");
        }
        for (l, layer) in self.convs.iter().chain(&self.to_rgb).enumerate() {
            let (cout, k) = if l < self.config.num_convs() { (c, 3) } else { (3, 1) };
            if layer.filters.shape() != [cout, c, k, k]
                || layer.affine_weight.shape() != [d, c]
                || layer.affine_bias.shape() != [c]
            {
                return bad("synthesis layer");
            }
        }
        let all = self.named_arrays();
        if !all.iter().all(|(_, t)| t.all_finite()) {
            return Err(Error::Format("checkpoint holds non-finite weights".into()));
        }
        Ok(())
    }

    /// The mapping MLP `z -> w` with leaky ReLU after every layer.
    pub fn map_latent(&self, z: &[f64]) -> Result<LatentGlobal> {
        let d = self.config.latent_dim;
        if z.len() != d {
            return Err(Error::shape(
                "map_latent",
                format!("z has {} entries, expected {d}", z.len()),
            ));
        }
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("map_latent input".into()));
        }
        let mut h = z.to_vec();
        for (w, b) in &self.mapping {
            let mut next = kernels::matmul(&h, w.data(), 1, d, d);
            for (v, bias) in next.iter_mut().zip(b.data()) {
                let a = *v + bias;
                *v = if a >= 0.0 { a } else { LRELU_SLOPE * a };
            }
            h = next;
        }
        Ok(LatentGlobal(h))
    }

    /// Empirical mean of `map_latent` over `n` standard-normal draws.
    pub fn mean_latent(&self, n: usize, seed: u64) -> Result<LatentGlobal> {
        if n == 0 {
            return Err(Error::invalid("mean_latent needs at least one sample"));
        }
        let d = self.config.latent_dim;
        let mut s = Stream::new(seed);
        let mut acc = vec![0.0; d];
        for _ in 0..n {
            let z: Vec<f64> = (0..d).map(|_| s.normal()).collect();
            let w = self.map_latent(&z)?;
            for (a, v) in acc.iter_mut().zip(&w.0) {
                *a += v;
            }
        }
        Ok(LatentGlobal(acc.into_iter().map(|v| v / n as f64).collect()))
    }

    /// Draws `z ~ N(0, I)` from `stream` and maps it.
    pub fn sample_latent(&self, stream: &mut Stream) -> Result<LatentGlobal> {
        let z: Vec<f64> = (0..self.config.latent_dim).map(|_| stream.normal()).collect();
        self.map_latent(&z)
    }

    /// Modulated convolution on the tape. `styles` is `[C_out, C_in]`: row
    /// `i` scales the input channels of filter `i`.
    pub fn modulated_conv(g: &mut Graph, x: Var, filters: Var, styles: Var, demodulate: bool) -> Result<Var> {
        let (fs, ss) = (g.shape(filters).to_vec(), g.shape(styles).to_vec());
        if fs.len() != 4 || ss.len() != 2 || fs[..2] != ss[..] {
            return Err(Error::shape(
                "modulated_conv",
                format!("filters {fs:?} with styles {ss:?}"),
            ));
        }
        let mut w = g.mul_prefix(filters, styles)?;
        if demodulate {
            let sq = g.square(w);
            let energy = g.sum_trailing(sq, 1)?;
            let energy = g.add_scalar(energy, DEMOD_EPS);
            let norm = g.sqrt(energy);
            let inv = g.recip(norm);
            w = g.mul_prefix(w, inv)?;
        }
        g.conv2d(x, w)
    }

    fn styles(&self, g: &mut Graph, layer: usize, codes: Var) -> Result<Var> {
        let l = self.style_layer(layer);
        let a = g.constant(l.affine_weight.clone());
        let b = g.constant(l.affine_bias.clone());
        let proj = g.matmul(codes, a)?;
        g.add_row(proj, b)
    }

    /// Synthesis from per-layer filter codes (`codes[l]` is `[N_F(l), d]`).
    /// Every latent variant is expanded to this form first.
    pub fn synthesize_codes(&self, g: &mut Graph, codes: &[Var]) -> Result<Var> {
        let cfg = &self.config;
        if codes.len() != cfg.num_style_layers() {
            return Err(Error::shape(
                "synthesize",
                format!("{} code groups, expected {}", codes.len(), cfg.num_style_layers()),
            ));
        }
        for (l, &c) in codes.iter().enumerate() {
            let want = [cfg.filters(l), cfg.latent_dim];
            if g.shape(c) != want {
                return Err(Error::shape(
                    "synthesize",
                    format!("layer {l} codes {:?}, expected {want:?}", g.shape(c)),
                ));
            }
        }
        let mut x = g.constant(self.constant.clone());
        let mut rgb: Option<Var> = None;
        for block in 0..cfg.num_blocks() {
            x = g.upsample2_nearest(x)?;
            for j in 0..2 {
                let l = 2 * block + j;
                let layer = &self.convs[l];
                debug_assert_eq!(layer.out_channels(), layer.in_channels());
                let s = self.styles(g, l, codes[l])?;
                let f = g.constant(layer.filters.clone());
                x = Self::modulated_conv(g, x, f, s, cfg.demodulate)?;
                x = g.leaky_relu(x, LRELU_SLOPE);
            }
            let l = cfg.num_convs() + block;
            let s = self.styles(g, l, codes[l])?;
            let f = g.constant(self.to_rgb[block].filters.clone());
            let y = Self::modulated_conv(g, x, f, s, false)?;
            rgb = Some(match rgb {
                None => y,
                Some(prev) => {
                    let up = g.upsample2_nearest(prev)?;
                    g.add(up, y)?
                }
            });
        }
        let rgb = rgb.ok_or_else(|| Error::invalid("generator has no blocks"))?;
        // 0.5 (tanh(v) + 1) == sigmoid(2 v)
        let v = g.scale(rgb, 2.0);
        Ok(g.sigmoid(v))
    }

    /// Puts `latent` on the tape as a leaf and synthesizes from it.
    pub fn synthesize_on(&self, g: &mut Graph, latent: &Latent) -> Result<(LatentVars, Var)> {
        let vars = latent.to_vars(g, &self.config)?;
        let img = self.synthesize_codes(g, &vars.codes)?;
        Ok((vars, img))
    }

    pub fn synthesize(&self, latent: &Latent) -> Result<Image> {
        let mut g = Graph::new();
        let (_, img) = self.synthesize_on(&mut g, latent)?;
        Image::from_tensor(g.value(img).clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentGlobal(pub Vec<f64>);

/// One row per style-consuming layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentLayerwise(pub Vec<Vec<f64>>);

/// For each style-consuming layer, one code per filter.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFilterwise(pub Vec<Vec<Vec<f64>>>);

#[derive(Debug, Clone, PartialEq)]
pub enum Latent {
    Global(LatentGlobal),
    Layerwise(LatentLayerwise),
    Filterwise(LatentFilterwise),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Global,
    Layerwise,
    Filterwise,
}

/// Leaf variables of a latent plus the expanded per-layer codes.
#[derive(Debug, Clone)]
pub struct LatentVars {
    pub leaves: Vec<Var>,
    pub codes: Vec<Var>,
}

impl LatentGlobal {
    pub fn expand_to_layerwise(&self, config: &GeneratorConfig) -> LatentLayerwise {
        LatentLayerwise(vec![self.0.clone(); config.num_style_layers()])
    }
}

impl LatentLayerwise {
    pub fn expand_to_filterwise(&self, config: &GeneratorConfig) -> LatentFilterwise {
        LatentFilterwise(
            self.0
                .iter()
                .enumerate()
                .map(|(l, row)| vec![row.clone(); config.filters(l)])
                .collect(),
        )
    }
}

impl Latent {
    pub fn variant(&self) -> Variant {
        match self {
            Latent::Global(_) => Variant::Global,
            Latent::Layerwise(_) => Variant::Layerwise,
            Latent::Filterwise(_) => Variant::Filterwise,
        }
    }

    /// The independently normalized codes, in a fixed order.
    pub fn codes(&self) -> Vec<&[f64]> {
        match self {
            Latent::Global(w) => vec![&w.0],
            Latent::Layerwise(w) => w.0.iter().map(|r| r.as_slice()).collect(),
            Latent::Filterwise(w) => w.0.iter().flatten().map(|r| r.as_slice()).collect(),
        }
    }

    pub fn codes_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Latent::Global(w) => vec![&mut w.0],
            Latent::Layerwise(w) => w.0.iter_mut().collect(),
            Latent::Filterwise(w) => w.0.iter_mut().flatten().collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.codes().iter().all(|c| c.iter().all(|v| v.is_finite()))
    }

    fn check(&self, cfg: &GeneratorConfig) -> Result<()> {
        let d = cfg.latent_dim;
        let ok = match self {
            Latent::Global(w) => w.0.len() == d,
            Latent::Layerwise(w) => w.0.len() == cfg.num_style_layers() && w.0.iter().all(|r| r.len() == d),
            Latent::Filterwise(w) => {
                w.0.len() == cfg.num_style_layers()
                    && w.0
                        .iter()
                        .enumerate()
                        .all(|(l, rows)| rows.len() == cfg.filters(l) && rows.iter().all(|r| r.len() == d))
            }
        };
        if !ok {
            return Err(Error::shape(
                "latent",
                format!("{:?} latent does not match generator", self.variant()),
            ));
        }
        Ok(())
    }

    /// Leaves on the tape, expanded by replication ops to filter codes, so
    /// gradients of the expanded codes sum back into the leaves.
    pub fn to_vars(&self, g: &mut Graph, cfg: &GeneratorConfig) -> Result<LatentVars> {
        self.check(cfg)?;
        let d = cfg.latent_dim;
        let n = cfg.num_style_layers();
        let expand_rows = |g: &mut Graph, plus: Var| -> Result<Vec<Var>> {
            (0..n)
                .map(|l| {
                    let row = g.select_row(plus, l)?;
                    g.repeat_rows(row, cfg.filters(l))
                })
                .collect()
        };
        match self {
            Latent::Global(w) => {
                let leaf = g.leaf(Tensor::from_vec(w.0.clone()));
                let plus = g.repeat_rows(leaf, n)?;
                let codes = expand_rows(g, plus)?;
                Ok(LatentVars {
                    leaves: vec![leaf],
                    codes,
                })
            }
            Latent::Layerwise(w) => {
                let flat: Vec<f64> = w.0.iter().flatten().copied().collect();
                let leaf = g.leaf(Tensor::new(&[n, d], flat)?);
                let codes = expand_rows(g, leaf)?;
                Ok(LatentVars {
                    leaves: vec![leaf],
                    codes,
                })
            }
            Latent::Filterwise(w) => {
                let mut leaves = Vec::with_capacity(n);
                for rows in &w.0 {
                    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                    leaves.push(g.leaf(Tensor::new(&[rows.len(), d], flat)?));
                }
                Ok(LatentVars {
                    codes: leaves.clone(),
                    leaves,
                })
            }
        }
    }
}

impl LatentVars {
    /// Leaf gradients split into per-code vectors, ordered like [`Latent::codes`].
    pub fn gradient_codes(&self, graph: &Graph, grads: &Gradients, d: usize) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for &leaf in &self.leaves {
            let g = grads.get_or_zeros(leaf, graph.shape(leaf));
            out.extend(g.data().chunks(d).map(|c| c.to_vec()));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> GeneratorConfig {
        GeneratorConfig {
            latent_dim: 8,
            channels: 4,
            resolution: 16,
            mapping_layers: 2,
            demodulate: true,
        }
    }

    #[test]
    fn default_layer_counts() {
        let c = GeneratorConfig::default();
        assert_eq!(c.num_convs(), 8);
        assert_eq!(c.resolution, 4 << (c.num_convs() / 2));
        assert_eq!(c.num_style_layers(), 12);
        assert_eq!(c.total_filter_codes(), 8 * 32 + 4 * 3);
    }

    #[test]
    fn rejects_non_power_of_two() {
        let c = GeneratorConfig {
            channels: 24,
            ..GeneratorConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn weights_reproducible_and_f32_exact() {
        let a = GeneratorWeights::generate(tiny(), 5).unwrap();
        let b = GeneratorWeights::generate(tiny(), 5).unwrap();
        assert_eq!(a, b);
        assert!(a.convs[0].filters.data().iter().all(|&v| v as f32 as f64 == v));
        assert_ne!(a, GeneratorWeights::generate(tiny(), 6).unwrap());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let w = GeneratorWeights::generate(tiny(), 1).unwrap();
        let mut buf = Vec::new();
        w.write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"RGIR");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        let back = GeneratorWeights::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn checkpoint_rejects_truncation() {
        let w = GeneratorWeights::generate(tiny(), 1).unwrap();
        let mut buf = Vec::new();
        w.write_checkpoint(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(GeneratorWeights::read_checkpoint(&buf[..]).is_err());
    }

    #[test]
    fn zero_latent_through_zero_bias_mapping() {
        let w = GeneratorWeights::generate(tiny(), 2).unwrap();
        assert_eq!(w.map_latent(&[0.0; 8]).unwrap().0, vec![0.0; 8]);
    }

    #[test]
    fn mean_of_one_sample_is_that_sample() {
        let w = GeneratorWeights::generate(tiny(), 2).unwrap();
        let mut s = Stream::new(77);
        let direct = w.sample_latent(&mut s).unwrap();
        assert_eq!(w.mean_latent(1, 77).unwrap(), direct);
    }

    #[test]
    fn unit_styles_without_demodulation_is_plain_conv() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[2, 3, 3], (0..18).map(|i| i as f64 * 0.3 - 2.0).collect()).unwrap());
        let f = Tensor::new(&[3, 2, 3, 3], (0..54).map(|i| ((i * 7) % 5) as f64 - 2.0).collect()).unwrap();
        let fv = g.constant(f);
        let ones = g.constant(Tensor::full(&[3, 2], 1.0));
        let m = GeneratorWeights::modulated_conv(&mut g, x, fv, ones, false).unwrap();
        let plain = g.conv2d(x, fv).unwrap();
        assert_eq!(g.value(m), g.value(plain));

        let zeros = g.constant(Tensor::zeros(&[3, 2]));
        let z = GeneratorWeights::modulated_conv(&mut g, x, fv, zeros, false).unwrap();
        assert!(g.value(z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scaling_one_filter_style_doubles_that_channel() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[2, 4, 4], (0..32).map(|i| (i as f64 * 0.77).sin()).collect()).unwrap());
        let f = g.constant(Tensor::new(&[3, 2, 3, 3], (0..54).map(|i| (i as f64 * 1.3).cos()).collect()).unwrap());
        let base: Vec<f64> = (0..6).map(|i| 0.5 + i as f64 * 0.1).collect();
        let mut doubled = base.clone();
        doubled[2] *= 2.0;
        doubled[3] *= 2.0;
        let s0 = g.constant(Tensor::new(&[3, 2], base).unwrap());
        let s1 = g.constant(Tensor::new(&[3, 2], doubled).unwrap());
        let a = GeneratorWeights::modulated_conv(&mut g, x, f, s0, false).unwrap();
        let b = GeneratorWeights::modulated_conv(&mut g, x, f, s1, false).unwrap();
        let (va, vb) = (g.value(a).data(), g.value(b).data());
        for ch in 0..3 {
            for p in 0..16 {
                let (u, v) = (va[ch * 16 + p], vb[ch * 16 + p]);
                let want = if ch == 1 { 2.0 * u } else { u };
                assert!((v - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn expansion_is_pure_replication() {
        let cfg = tiny();
        let w = LatentGlobal((0..8).map(|i| i as f64 * 0.37 - 1.0).collect());
        let plus = w.expand_to_layerwise(&cfg);
        assert!(plus.0.iter().all(|r| *r == w.0));
        let pp = plus.expand_to_filterwise(&cfg);
        for (l, rows) in pp.0.iter().enumerate() {
            assert_eq!(rows.len(), cfg.filters(l));
            assert!(rows.iter().all(|r| *r == plus.0[l]));
        }
        assert_eq!(plus.0[0], w.0);
        assert_eq!(pp.0[3][0], plus.0[3]);
    }

    #[test]
    fn three_variants_synthesize_identically() {
        let cfg = tiny();
        let weights = GeneratorWeights::generate(cfg, 3).unwrap();
        let mut s = Stream::new(4);
        let w = weights.sample_latent(&mut s).unwrap();
        let plus = w.expand_to_layerwise(&cfg);
        let pp = plus.expand_to_filterwise(&cfg);
        let a = weights.synthesize(&Latent::Global(w)).unwrap();
        let b = weights.synthesize(&Latent::Layerwise(plus)).unwrap();
        let c = weights.synthesize(&Latent::Filterwise(pp)).unwrap();
        assert_eq!(a.max_abs_diff(&b), 0.0);
        assert_eq!(a.max_abs_diff(&c), 0.0);
        assert!(a.is_in_unit_range());
    }

    #[test]
    fn mismatched_latent_rejected() {
        let weights = GeneratorWeights::generate(tiny(), 3).unwrap();
        let bad = Latent::Global(LatentGlobal(vec![0.0; 5]));
        assert!(weights.synthesize(&bad).is_err());
    }
}
