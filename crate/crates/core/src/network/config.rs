use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blocks::{group_channels, FusionMode, GridSpec, RegionClass, SamplingKind, SE_REDUCTION};
use crate::error::{Error, Result};

/// Number of pyramid levels.
pub const LEVELS: usize = 4;
/// Input height and width must be multiples of this.
pub const SIZE_MULTIPLE: usize = 32;

/// Where the WRNL block sits inside a stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WrnlPosition {
    /// `[DCR, DCR, WRNL]`.
    #[default]
    After,
    /// `[WRNL, DCR, DCR]`.
    Before,
}

/// Named presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Toy,
    Small,
    Large,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Preset::Toy),
            "small" => Ok(Preset::Small),
            "large" => Ok(Preset::Large),
            other => Err(Error::Config(format!("unknown size `{other}` (expected toy, small or large)"))),
        }
    }
}

/// Everything that fixes the architecture and its parameter count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Level-1 width.
    pub base_channels: usize,
    /// Width of level `l` is `base_channels * width_multipliers[l - 1]`.
    pub width_multipliers: [usize; LEVELS],
    pub levels: usize,
    /// WRNL grid per level, before the region remap.
    pub wrnl_grids: [GridSpec; LEVELS],
    pub sampling: SamplingKind,
    pub mlc_fusion: FusionMode,
    pub wrnl_region: RegionClass,
    pub global_residual: bool,
    pub wrnl_residual: bool,
    pub wrnl_position: WrnlPosition,
    pub se_reduction: usize,
}

const PAPER_GRIDS: [(usize, usize); LEVELS] = [(16, 4), (8, 2), (4, 1), (4, 1)];
const TOY_GRIDS: [(usize, usize); LEVELS] = [(4, 2), (2, 2), (2, 1), (2, 1)];

fn grids(g: [(usize, usize); LEVELS]) -> [GridSpec; LEVELS] {
    g.map(|(a, b)| GridSpec { a, b })
}

impl NetworkConfig {
    fn with(base_channels: usize, width_multipliers: [usize; LEVELS], wrnl_grids: [GridSpec; LEVELS]) -> Self {
        Self {
            base_channels,
            width_multipliers,
            levels: LEVELS,
            wrnl_grids,
            sampling: SamplingKind::Dwt,
            mlc_fusion: FusionMode::Se,
            wrnl_region: RegionClass::Wide,
            global_residual: true,
            wrnl_residual: true,
            wrnl_position: WrnlPosition::After,
            se_reduction: SE_REDUCTION,
        }
    }

    pub fn small() -> Self {
        Self::with(8, [1, 3, 6, 12], grids(PAPER_GRIDS))
    }

    /// Eight times the channels of [`small`](Self::small).
    pub fn large() -> Self {
        Self::with(64, [1, 3, 6, 12], grids(PAPER_GRIDS))
    }

    /// A tiny network for gradient checks and quick training runs.
    pub fn toy() -> Self {
        Self::with(4, [1, 2, 4, 8], grids(TOY_GRIDS))
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Toy => Self::toy(),
            Preset::Small => Self::small(),
            Preset::Large => Self::large(),
        }
    }

    /// Stage widths of levels 1 to 4.
    pub fn widths(&self) -> [usize; LEVELS] {
        self.width_multipliers.map(|m| m * self.base_channels)
    }

    pub fn width(&self, level: usize) -> usize {
        self.widths()[level - 1]
    }

    /// WRNL grid actually used at `level` after the region remap: `wide`
    /// keeps the configured grid, `tall` swaps it, `square` uses `g x g`
    /// with `g` the largest power of two not above `sqrt(a * b)`.
    pub fn effective_grid(&self, level: usize) -> GridSpec {
        let GridSpec { a, b } = self.wrnl_grids[level - 1];
        match self.wrnl_region {
            RegionClass::Wide => GridSpec { a, b },
            RegionClass::Tall => GridSpec { a: b, b: a },
            RegionClass::Square => {
                let area = a * b;
                let mut g = 1;
                while (2 * g) * (2 * g) <= area {
                    g *= 2;
                }
                GridSpec { a: g, b: g }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.levels != LEVELS {
            return bad(format!("levels must be {LEVELS}, got {}", self.levels));
        }
        if self.base_channels < 4 || self.base_channels % 2 != 0 {
            return bad(format!("base_channels must be even and at least 4, got {}", self.base_channels));
        }
        if self.width_multipliers.contains(&0) {
            return bad("width multipliers must be positive".into());
        }
        if self.se_reduction == 0 {
            return bad("se_reduction must be positive".into());
        }
        let widths = self.widths();
        for (l, &w) in widths.iter().enumerate() {
            if w % 2 != 0 {
                return bad(format!("level {} width {w} must be even", l + 1));
            }
        }
        for level in 1..=LEVELS {
            group_channels(&widths, level, self.mlc_fusion).map_err(|e| Error::Config(e.to_string()))?;
            let side = SIZE_MULTIPLE >> (level - 1);
            let g = self.effective_grid(level);
            if g.a == 0 || g.b == 0 || side % g.a != 0 || side % g.b != 0 {
                return bad(format!(
                    "level {level} grid {}x{} does not divide {side}-pixel features",
                    g.a, g.b
                ));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }
}
