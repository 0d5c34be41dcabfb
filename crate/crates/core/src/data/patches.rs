use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::MaskPair;
use crate::error::{Error, Result};

/// Where a patch came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub source: String,
    pub top: usize,
    pub left: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PatchSet {
    pub size: (usize, usize),
    pub patches: Vec<MaskPair>,
    pub provenance: Vec<Provenance>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    fn push(&mut self, src: &MaskPair, top: usize, left: usize) {
        let (h, w) = self.size;
        self.patches.push(MaskPair {
            id: format!("{}@{top},{left}", src.id),
            image: src.image.crop(top, left, h, w),
            mask: src.mask.crop(top, left, h, w),
        });
        self.provenance.push(Provenance {
            source: src.id.clone(),
            top,
            left,
        });
    }
}

fn check_fits(pairs: &[MaskPair], (h, w): (usize, usize)) -> Result<()> {
    if h == 0 || w == 0 {
        return Err(Error::usage("patch size must be positive"));
    }
    for p in pairs {
        if h > p.image.height || w > p.image.width {
            return Err(Error::dim(format!(
                "patch {h}x{w} does not fit image {} ({}x{})",
                p.id, p.image.height, p.image.width
            )));
        }
    }
    Ok(())
}

/// `count` patches with uniformly random in-bounds corners. Source images
/// are chosen uniformly per patch.
pub fn extract_patches(pairs: &[MaskPair], size: (usize, usize), count: usize, seed: u64) -> Result<PatchSet> {
    if pairs.is_empty() {
        return Err(Error::usage("no images to extract patches from"));
    }
    if count == 0 {
        return Err(Error::usage("patch count must be at least 1"));
    }
    check_fits(pairs, size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = PatchSet {
        size,
        ..PatchSet::default()
    };
    for _ in 0..count {
        let src = &pairs[rng.gen_range(0..pairs.len())];
        let top = rng.gen_range(0..=src.image.height - size.0);
        let left = rng.gen_range(0..=src.image.width - size.1);
        set.push(src, top, left);
    }
    Ok(set)
}

/// Every window on a regular grid with the given stride, row-major per image.
pub fn extract_grid(pairs: &[MaskPair], size: (usize, usize), stride: (usize, usize)) -> Result<PatchSet> {
    if stride.0 == 0 || stride.1 == 0 {
        return Err(Error::usage("stride must be positive"));
    }
    check_fits(pairs, size)?;
    let mut set = PatchSet {
        size,
        ..PatchSet::default()
    };
    for src in pairs {
        for top in (0..=src.image.height - size.0).step_by(stride.0) {
            for left in (0..=src.image.width - size.1).step_by(stride.1) {
                set.push(src, top, left);
            }
        }
    }
    Ok(set)
}
