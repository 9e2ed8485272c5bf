//! The full encoder-decoder network.
//!
//! Layout, from input to output:
//!
//! - `head`: 3x3 conv `3 -> w1`.
//! - `enc1..enc3`: one stage per level. Between stages the features move
//!   down one level and a 1x1 conv (`enc{l}.proj`) maps `4 w_l -> w_{l+1}`.
//! - `dec4..dec1`: at each level a multi-level fusion builds the stage input
//!   from the three encoder outputs and the decoder output one level deeper.
//! - `tail`: 3x3 conv `w1 -> 3`, added to the input when `global_residual`.
//!
//! A stage is two DCR blocks and one WRNL block.

mod config;
mod weights;

pub use config::{NetworkConfig, Preset, WrnlPosition, LEVELS, SIZE_MULTIPLE};
pub use weights::{load_weights, read_weights, save_weights, sidecar_path, write_weights, WEIGHT_MAGIC, WEIGHT_VERSION};

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{
    dcr_forward, init_params, map_lookup, mlc_fuse, sampler_layout, wrnl_forward, ConvParams, DcrParams, MlcOutput,
    MlcParams, ParamSpec, Resampler, Sampler, WrnlParams, RESIDUAL_GAIN,
};
use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::{ConvSpec, Tape, Tensor, Var};

const ENCODER_LEVELS: usize = 3;

fn stage_layout(prefix: &str, width: usize, out: &mut Vec<ParamSpec>) -> Result<()> {
    out.extend(DcrParams::<()>::layout(&format!("{prefix}.dcr0"), width));
    out.extend(DcrParams::<()>::layout(&format!("{prefix}.dcr1"), width));
    out.extend(WrnlParams::<()>::layout(&format!("{prefix}.wrnl"), width)?);
    Ok(())
}

/// Every parameter of the network in a fixed order, with its shape and
/// initializer. Building and counting both read this plan, so counting
/// never allocates.
pub fn layout(config: &NetworkConfig) -> Result<Vec<ParamSpec>> {
    config.validate()?;
    let w = config.widths();
    let mut out = Vec::new();
    ConvParams::<()>::layout("head", ConvSpec::new(3, w[0], 3)?, true, &mut out);
    for l in 1..=ENCODER_LEVELS {
        stage_layout(&format!("enc{l}"), w[l - 1], &mut out)?;
        if l < ENCODER_LEVELS {
            out.extend(sampler_layout(config.sampling, &format!("enc{l}.down"), w[l - 1], l, l + 1)?);
            ConvParams::<()>::layout(&format!("enc{l}.proj"), ConvSpec::new(4 * w[l - 1], w[l], 1)?, true, &mut out);
        }
    }
    for l in (1..=LEVELS).rev() {
        let prefix = format!("dec{l}.mlc");
        out.extend(MlcParams::<()>::sampler_layout(&prefix, config.sampling, &w, l, config.mlc_fusion)?);
        out.extend(MlcParams::<()>::layout(&prefix, &w, l, config.mlc_fusion, config.se_reduction)?);
        stage_layout(&format!("dec{l}"), w[l - 1], &mut out)?;
    }
    ConvParams::<()>::layout("tail", ConvSpec::new(w[0], 3, 3)?, true, &mut out);
    if config.global_residual {
        let t = out.len() - 2;
        out[t] = out[t].clone().with_gain(RESIDUAL_GAIN);
    }
    Ok(out)
}

/// Total number of scalar parameters.
pub fn param_count(config: &NetworkConfig) -> Result<usize> {
    Ok(layout(config)?.iter().map(ParamSpec::len).sum())
}

/// Parameter totals per top-level module (`head`, `enc1`, ..., `tail`), in
/// layout order.
pub fn param_breakdown(config: &NetworkConfig) -> Result<Vec<(String, usize)>> {
    let mut out: IndexMap<String, usize> = IndexMap::new();
    for spec in layout(config)? {
        let module = spec.name.split('.').next().unwrap_or("").to_string();
        *out.entry(module).or_default() += spec.len();
    }
    Ok(out.into_iter().collect())
}

/// A configuration together with its parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: NetworkConfig,
    pub params: IndexMap<String, Tensor>,
}

/// Builds a freshly initialized model; equal seeds give identical weights.
pub fn build(config: &NetworkConfig, seed: u64) -> Result<Model> {
    let specs = layout(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Model {
        config: config.clone(),
        params: init_params(&specs, &mut rng),
    })
}

/// Values recorded during one forward pass.
pub struct ForwardTrace<'t> {
    pub output: Var<'t>,
    pub encoder: [Var<'t>; ENCODER_LEVELS],
    /// Fusion results for decoder levels 4, 3, 2, 1 in that order.
    pub fusions: Vec<(usize, MlcOutput<'t>)>,
}

fn lookup<'a, 't>(vars: &'a IndexMap<String, Var<'t>>) -> impl FnMut(&str) -> Result<Var<'t>> + 'a {
    map_lookup(vars)
}

fn stage<'t>(x: Var<'t>, prefix: &str, level: usize, config: &NetworkConfig, vars: &IndexMap<String, Var<'t>>) -> Result<Var<'t>> {
    let mut get = lookup(vars);
    let d0 = DcrParams::gather(&format!("{prefix}.dcr0"), &mut get)?;
    let d1 = DcrParams::gather(&format!("{prefix}.dcr1"), &mut get)?;
    let wr = WrnlParams::gather(&format!("{prefix}.wrnl"), &mut get)?;
    let grid = config.effective_grid(level);
    let nonlocal = |v| wrnl_forward(v, grid, &wr, config.wrnl_residual);
    match config.wrnl_position {
        WrnlPosition::After => nonlocal(dcr_forward(dcr_forward(x, &d0)?, &d1)?),
        WrnlPosition::Before => dcr_forward(dcr_forward(nonlocal(x)?, &d0)?, &d1),
    }
}

fn check_input(x: &[usize]) -> Result<()> {
    match *x {
        [_, 3, h, w] if h % SIZE_MULTIPLE == 0 && w % SIZE_MULTIPLE == 0 && h > 0 && w > 0 => Ok(()),
        [_, 3, h, w] => Err(invalid(
            "forward",
            format!("image is {h}x{w}; height and width must be positive multiples of {SIZE_MULTIPLE}"),
        )),
        _ => Err(shape_err("forward", "[B, 3, H, W]", format!("{x:?}"))),
    }
}

/// Forward pass over parameters already recorded on a tape.
pub fn forward_traced<'t>(config: &NetworkConfig, vars: &IndexMap<String, Var<'t>>, image: Var<'t>) -> Result<ForwardTrace<'t>> {
    check_input(&image.shape())?;
    let sampler = Sampler {
        kind: config.sampling,
        params: vars,
    };
    let mut get = lookup(vars);
    let head = ConvParams::gather("head", true, &mut get)?;
    let mut x = image.conv2d(head.weight, head.bias)?;
    let mut encoder = Vec::with_capacity(ENCODER_LEVELS);
    for l in 1..=ENCODER_LEVELS {
        let e = stage(x, &format!("enc{l}"), l, config, vars)?;
        encoder.push(e);
        if l < ENCODER_LEVELS {
            let proj = ConvParams::gather(&format!("enc{l}.proj"), true, &mut get)?;
            x = sampler.resample(e, l, l + 1, &format!("enc{l}.down"))?.conv2d(proj.weight, proj.bias)?;
        }
    }
    let encoder: [Var<'t>; ENCODER_LEVELS] = encoder.try_into().expect("three encoder levels");

    let widths = config.widths();
    let mut prev = None;
    let mut fusions = Vec::with_capacity(LEVELS);
    for l in (1..=LEVELS).rev() {
        let prefix = format!("dec{l}.mlc");
        let mp = MlcParams::gather(&prefix, &widths, l, config.mlc_fusion, &mut get)?;
        let fused = mlc_fuse(&encoder, prev, l, config.mlc_fusion, &mp, &sampler, &prefix)?;
        let d = stage(fused.d_in, &format!("dec{l}"), l, config, vars)?;
        fusions.push((l, fused));
        prev = Some(d);
    }
    let tail = ConvParams::gather("tail", true, &mut get)?;
    let mut output = prev.expect("decoder ran").conv2d(tail.weight, tail.bias)?;
    if config.global_residual {
        output = image.add(output)?;
    }
    Ok(ForwardTrace {
        output,
        encoder,
        fusions,
    })
}

impl Model {
    pub fn build(config: &NetworkConfig, seed: u64) -> Result<Self> {
        build(config, seed)
    }

    /// Records every parameter on `tape`, in layout order.
    pub fn bind<'t>(&self, tape: &'t Tape) -> IndexMap<String, Var<'t>> {
        self.params.iter().map(|(k, v)| (k.clone(), tape.leaf(v.clone()))).collect()
    }

    /// Runs the network on a `[B, 3, H, W]` batch.
    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let vars = self.bind(&tape);
        let out = forward_traced(&self.config, &vars, tape.leaf(image.clone()))?.output;
        let v = out.value();
        Ok(v.as_ref().clone())
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Checks names, order and shapes against the configuration's layout.
    pub fn check_layout(&self) -> Result<()> {
        let specs = layout(&self.config)?;
        if specs.len() != self.params.len() {
            return Err(Error::WeightMismatch {
                name: "<model>".into(),
                msg: format!("expected {} arrays, found {}", specs.len(), self.params.len()),
            });
        }
        for (spec, (name, value)) in specs.iter().zip(&self.params) {
            if &spec.name != name {
                return Err(Error::WeightMismatch {
                    name: name.clone(),
                    msg: format!("expected `{}` at this position", spec.name),
                });
            }
            if spec.shape != value.shape() {
                return Err(Error::WeightMismatch {
                    name: name.clone(),
                    msg: format!("shape {:?}, expected {:?}", value.shape(), spec.shape),
                });
            }
        }
        Ok(())
    }
}

/// The three parts of the training objective.
#[derive(Clone, Copy, Debug)]
pub struct Loss<'t> {
    /// Mean absolute error.
    pub l1: Var<'t>,
    /// Root mean squared error.
    pub l2: Var<'t>,
    pub total: Var<'t>,
}

/// `mean|pred - target| + sqrt(mean (pred - target)^2)`.
pub fn loss_l1l2<'t>(pred: Var<'t>, target: &Tensor) -> Result<Loss<'t>> {
    if pred.shape() != target.shape() {
        return Err(shape_err("loss_l1l2", format!("{:?}", target.shape()), format!("{:?}", pred.shape())));
    }
    let diff = pred.sub(pred.tape().leaf(target.clone()))?;
    let l1 = diff.abs_mean();
    let l2 = diff.rms();
    Ok(Loss { l1, l2, total: l1.add(l2)? })
}

/// Plain-value form of [`loss_l1l2`].
pub fn loss_value(pred: &Tensor, target: &Tensor) -> Result<f64> {
    pred.expect_same_shape(target, "loss_l1l2")?;
    let n = pred.len() as f64;
    let (mut a, mut s) = (0.0, 0.0);
    for (p, t) in pred.data().iter().zip(target.data()) {
        a += (p - t).abs();
        s += (p - t) * (p - t);
    }
    Ok(a / n + (s / n).sqrt())
}

