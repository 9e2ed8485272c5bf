//! Ready-made finite-difference checks for each building block.

use std::str::FromStr;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{
    dcr_forward, mlc_fuse, se_forward, wrnl_forward, DcrParams, FusionMode, GridSpec, HaarSampler, MlcParams, SeParams,
    WrnlParams,
};
use crate::error::{invalid, Error, Result};
use crate::network::{build, forward_traced, NetworkConfig};
use crate::tensor::{check_gradients, GradCheckOptions, GradCheckReport, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    /// Convolution, PReLU, matmul and softmax composed in one graph.
    Tensor,
    Conv,
    Prelu,
    Se,
    Dcr,
    Wrnl,
    Mlc,
    /// The full toy network.
    Network,
}

impl Block {
    pub const ALL: [Block; 8] = [
        Block::Tensor,
        Block::Conv,
        Block::Prelu,
        Block::Se,
        Block::Dcr,
        Block::Wrnl,
        Block::Mlc,
        Block::Network,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::Tensor => "tensor",
            Block::Conv => "conv",
            Block::Prelu => "prelu",
            Block::Se => "se",
            Block::Dcr => "dcr",
            Block::Wrnl => "wrnl",
            Block::Mlc => "mlc",
            Block::Network => "network",
        }
    }

    /// Central-difference step. The full network sums thousands of
    /// outputs, so rounding noise dominates below `1e-4`.
    pub fn default_step(self) -> f64 {
        match self {
            Block::Network => 1e-4,
            _ => 1e-5,
        }
    }

    /// Tolerance the block is expected to meet.
    pub fn default_tolerance(self) -> f64 {
        match self {
            Block::Network => 1e-5,
            _ => 1e-6,
        }
    }
}

impl FromStr for Block {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Block::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| invalid("grad-check", format!("unknown block `{s}`")))
    }
}

fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Checks `block` at a random point drawn from `seed`. Each scalar
/// objective is a fixed random projection of the block output.
pub fn check_block(block: Block, seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    let opts = GradCheckOptions {
        step: block.default_step(),
        tolerance,
        seed,
        ..GradCheckOptions::default()
    };
    check_block_with(block, &opts)
}

/// [`check_block`] with full control over the check. The random point is
/// drawn from `opts.seed`.
pub fn check_block_with(block: Block, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let seed = opts.seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = opts.clone();
    match block {
        Block::Tensor => {
            let inputs = vec![
                rand_t(&[1, 2, 4, 4], &mut rng),
                rand_t(&[4, 2, 3, 3], &mut rng),
                Tensor::new(&[4], vec![0.2, -0.1, 0.4, 0.3])?,
                rand_t(&[4, 4], &mut rng),
            ];
            let proj = rand_t(&[16, 4], &mut rng);
            check_gradients(
                |_, v| {
                    let y = v[0].conv2d(v[1], None)?.prelu(v[2])?;
                    let rows = y.reshape(&[4, 16])?.transpose()?;
                    rows.matmul(v[3])?.softmax_rows().dot_const(&proj)
                },
                &inputs,
                &opts,
            )
        }
        Block::Conv => {
            let proj = rand_t(&[2, 3, 5, 5], &mut rng);
            let inputs = vec![rand_t(&[2, 2, 5, 5], &mut rng), rand_t(&[3, 2, 3, 3], &mut rng), rand_t(&[3], &mut rng)];
            check_gradients(|_, v| v[0].conv2d(v[1], Some(v[2]))?.dot_const(&proj), &inputs, &opts)
        }
        Block::Prelu => {
            let proj = rand_t(&[2, 3, 4, 4], &mut rng);
            let inputs = vec![rand_t(&[2, 3, 4, 4], &mut rng), Tensor::new(&[3], vec![0.25, -0.3, 0.7])?];
            check_gradients(|_, v| v[0].prelu(v[1])?.dot_const(&proj), &inputs, &opts)
        }
        Block::Se => {
            let mut p = SeParams::init(8, 2, &mut rng);
            // Keep the bottleneck away from the ReLU kink.
            p.reduce.bias = Tensor::uniform(p.reduce.bias.shape(), 0.5, 1.0, &mut rng);
            let proj = rand_t(&[1, 8, 3, 3], &mut rng);
            let mut inputs = vec![rand_t(&[1, 8, 3, 3], &mut rng)];
            p.visit(&mut |t| inputs.push(t.clone()));
            check_gradients(
                |_, v| {
                    let mut it = v[1..].iter().copied();
                    se_forward(v[0], &p.map(&mut |_| it.next().unwrap()))?.dot_const(&proj)
                },
                &inputs,
                &opts,
            )
        }
        Block::Dcr => {
            let p = DcrParams::init(2, &mut rng);
            let proj = rand_t(&[1, 2, 4, 4], &mut rng);
            let mut inputs = vec![rand_t(&[1, 2, 4, 4], &mut rng)];
            p.visit(&mut |t| inputs.push(t.clone()));
            check_gradients(
                |_, v| {
                    let mut it = v[1..].iter().copied();
                    dcr_forward(v[0], &p.map(&mut |_| it.next().unwrap()))?.dot_const(&proj)
                },
                &inputs,
                &opts,
            )
        }
        Block::Wrnl => {
            let p = WrnlParams::init(4, &mut rng)?;
            let proj = rand_t(&[1, 4, 4, 4], &mut rng);
            let mut inputs = vec![rand_t(&[1, 4, 4, 4], &mut rng)];
            p.visit(&mut |t| inputs.push(t.clone()));
            let grid = GridSpec::new(2, 1)?;
            check_gradients(
                |_, v| {
                    let mut it = v[1..].iter().copied();
                    wrnl_forward(v[0], grid, &p.map(&mut |_| it.next().unwrap()), true)?.dot_const(&proj)
                },
                &inputs,
                &opts,
            )
        }
        Block::Mlc => {
            let widths = [1, 4, 16, 64];
            let mut p = MlcParams::init(&widths, 2, FusionMode::Se, 16, &mut rng)?;
            if let Some(se) = &mut p.se {
                se.reduce.bias = Tensor::uniform(se.reduce.bias.shape(), 0.5, 1.0, &mut rng);
            }
            let mut inputs: Vec<Tensor> =
                (1..=3).map(|l| rand_t(&[1, widths[l - 1], 8 >> (l - 1), 8 >> (l - 1)], &mut rng)).collect();
            inputs.push(rand_t(&[1, 16, 2, 2], &mut rng));
            let proj = rand_t(&[1, 4, 4, 4], &mut rng);
            p.visit(&mut |t| inputs.push(t.clone()));
            check_gradients(
                |_, v| {
                    let mut it = v[4..].iter().copied();
                    let pv = p.map(&mut |_| it.next().unwrap());
                    mlc_fuse(&[v[0], v[1], v[2]], Some(v[3]), 2, FusionMode::Se, &pv, &HaarSampler, "m")?
                        .d_in
                        .dot_const(&proj)
                },
                &inputs,
                &opts,
            )
        }
        Block::Network => {
            let cfg = NetworkConfig::toy();
            let model = build(&cfg, seed)?;
            let x = Tensor::uniform(&[1, 3, 32, 32], 0.0, 1.0, &mut rng);
            // The global residual makes the output roughly `x`. Subtracting a
            // constant copy of `x` and projecting on zero-mean weights keeps
            // the objective small, and with it the rounding noise of the
            // central difference; no derivative changes.
            let proj = rand_t(&[1, 3, 32, 32], &mut rng);
            let anchor = x.clone();
            let names: Vec<String> = model.params.keys().cloned().collect();
            let mut inputs = vec![x];
            inputs.extend(model.params.values().cloned());
            let opts = GradCheckOptions {
                max_entries_per_input: 4,
                ..opts
            };
            check_gradients(
                |tape, v| {
                    let vars: IndexMap<String, Var<'_>> = names.iter().cloned().zip(v[1..].iter().copied()).collect();
                    let out = forward_traced(&cfg, &vars, v[0])?.output;
                    out.sub(tape.leaf(anchor.clone()))?.dot_const(&proj)
                },
                &inputs,
                &opts,
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for b in Block::ALL {
            assert_eq!(b.name().parse::<Block>().unwrap(), b);
        }
        assert!("bogus".parse::<Block>().is_err());
    }

    #[test]
    fn small_blocks_pass() {
        for b in Block::ALL.into_iter().filter(|&b| b != Block::Network) {
            let r = check_block(b, 3, b.default_tolerance()).unwrap();
            assert!(r.passed, "{} {r:?}", b.name());
        }
    }
}
