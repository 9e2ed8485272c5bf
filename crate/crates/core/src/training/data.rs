use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::imageio::{read_image, IMAGE_EXTENSIONS};
use crate::network::SIZE_MULTIPLE;
use crate::tensor::Tensor;

/// An aligned rainy / clean pair of `[1, 3, H, W]` images in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RainPair {
    pub rainy: Tensor,
    pub clean: Tensor,
    pub id: String,
}

impl RainPair {
    pub fn new(rainy: Tensor, clean: Tensor, id: impl Into<String>) -> Result<Self> {
        rainy.expect_same_shape(&clean, "RainPair")?;
        match rainy.shape() {
            [1, 3, _, _] => {}
            s => return Err(invalid("RainPair", format!("expected [1, 3, H, W], got {s:?}"))),
        }
        Ok(Self {
            rainy: rainy.map(|v| v.clamp(0.0, 1.0)),
            clean: clean.map(|v| v.clamp(0.0, 1.0)),
            id: id.into(),
        })
    }

    pub fn size(&self) -> (usize, usize) {
        (self.rainy.shape()[2], self.rainy.shape()[3])
    }
}

/// Copies an `edge x edge` window with top-left corner `(y, x)`.
pub fn crop(image: &Tensor, y: usize, x: usize, edge: usize) -> Result<Tensor> {
    let (b, c, h, w) = image.dims4()?;
    if y + edge > h || x + edge > w {
        return Err(invalid("crop", format!("{edge}-pixel window at ({y}, {x}) exceeds {h}x{w}")));
    }
    Ok(Tensor::from_fn(&[b, c, edge, edge], |i| {
        let (plane, r) = (i / (edge * edge), i % (edge * edge));
        image.data()[plane * h * w + (y + r / edge) * w + x + r % edge]
    }))
}

/// The same random window cut from both images.
pub fn random_crop(pair: &RainPair, edge: usize, seed: u64) -> Result<RainPair> {
    if edge == 0 || edge % SIZE_MULTIPLE != 0 {
        return Err(invalid("random_crop", format!("edge must be a positive multiple of {SIZE_MULTIPLE}, got {edge}")));
    }
    let (h, w) = pair.size();
    if h < edge || w < edge {
        return Err(invalid("random_crop", format!("{h}x{w} image is smaller than the {edge}-pixel crop")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = rng.gen_range(0..=h - edge);
    let x = rng.gen_range(0..=w - edge);
    Ok(RainPair {
        rainy: crop(&pair.rainy, y, x, edge)?,
        clean: crop(&pair.clean, y, x, edge)?,
        id: pair.id.clone(),
    })
}

/// Reads `<root>/rainy/<name>` and `<root>/clean/<name>` pairs, matched by
/// file name and returned in name order.
pub fn load_dataset(root: &Path) -> Result<Vec<RainPair>> {
    let rainy_dir = root.join("rainy");
    let clean_dir = root.join("clean");
    for d in [&rainy_dir, &clean_dir] {
        if !d.is_dir() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("dataset directory {} not found", d.display()),
            )));
        }
    }
    let mut names: Vec<_> = std::fs::read_dir(&rainy_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    names.sort();
    let mut out = Vec::with_capacity(names.len());
    for rainy_path in names {
        let file = rainy_path.file_name().expect("listed file");
        let clean_path = clean_dir.join(file);
        if !clean_path.exists() {
            return Err(Error::Image {
                path: clean_path,
                msg: "no clean image matches this rainy image".into(),
            });
        }
        let id = rainy_path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
        out.push(RainPair::new(read_image(&rainy_path)?, read_image(&clean_path)?, id)?);
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}
