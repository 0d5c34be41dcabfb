//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Images cross the boundary as row-major grayscale bytes so the page can
//! paint them straight into a canvas.

use wasm_bindgen::prelude::*;

use bcdunet::data::{lung_from_surrounding, lung_preprocess, synth_ct_slice, synth_dataset, Mask, SynthKind};
use bcdunet::metrics::{evaluate_set, Averaging, MetricsReport, DEFAULT_THRESHOLD};
use bcdunet::model::{Model, ModelConfig};
use bcdunet::train::{Example, OptimizerKind, TrainConfig, Trainer};
use bcdunet::Tensor;

fn mask_bytes(m: &Mask) -> Vec<u8> {
    m.data.iter().map(|&v| v * 255).collect()
}

fn gray_bytes(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

/// A synthetic CT slice run through the surrounding-tissue preprocessing.
#[wasm_bindgen]
pub struct LungDemo {
    size: usize,
    slice: Vec<u8>,
    lung: Vec<u8>,
    surrounding: Vec<u8>,
    recovered: Vec<u8>,
    surrounding_pixels: usize,
    recovered_matches: usize,
}

#[wasm_bindgen]
impl LungDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(size: usize, seed: u32) -> Result<LungDemo, String> {
        if !(16..=256).contains(&size) {
            return Err(format!("size must lie in 16..=256, got {size}"));
        }
        let (slice, lung) = synth_ct_slice(size, u64::from(seed));
        let out = lung_preprocess(&slice, &lung).map_err(|e| e.to_string())?;
        let recovered = lung_from_surrounding(&out.surrounding);
        let window = slice.data.iter().map(|v| (v.clamp(-512.0, 512.0) + 512.0) / 1024.0);
        Ok(LungDemo {
            size,
            slice: gray_bytes(window),
            recovered_matches: recovered.data.iter().zip(&lung.data).filter(|(a, b)| a == b).count(),
            lung: mask_bytes(&lung),
            surrounding_pixels: out.surrounding.count(),
            surrounding: mask_bytes(&out.surrounding),
            recovered: mask_bytes(&recovered),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Slice clamped to +-512 HU and scaled to bytes.
    pub fn slice(&self) -> Vec<u8> {
        self.slice.clone()
    }

    pub fn lung(&self) -> Vec<u8> {
        self.lung.clone()
    }

    pub fn surrounding(&self) -> Vec<u8> {
        self.surrounding.clone()
    }

    /// Holes enclosed by the surrounding mask.
    pub fn recovered(&self) -> Vec<u8> {
        self.recovered.clone()
    }

    pub fn surrounding_pixels(&self) -> usize {
        self.surrounding_pixels
    }

    /// Share of pixels where the recovered lung agrees with the true lung.
    pub fn recovery_agreement(&self) -> f64 {
        self.recovered_matches as f64 / (self.size * self.size) as f64
    }
}

/// A small network trained on synthetic images a few epochs at a time.
#[wasm_bindgen]
pub struct DemoTrainer {
    model: Model<f32>,
    trainer: Trainer<f32>,
    data: Vec<Example<f32>>,
    epoch: usize,
    last_loss: f64,
}

pub const DEMO_SIZE: usize = 32;

#[wasm_bindgen]
impl DemoTrainer {
    /// `kind` is `discs` or `vessels`; `dense_blocks` sets the bottleneck depth.
    #[wasm_bindgen(constructor)]
    pub fn new(kind: &str, images: usize, dense_blocks: usize, seed: u32) -> Result<DemoTrainer, String> {
        let kind: SynthKind = kind.parse().map_err(|e: bcdunet::Error| e.to_string())?;
        if !(2..=16).contains(&images) {
            return Err(format!("images must lie in 2..=16, got {images}"));
        }
        let config = ModelConfig {
            base_filters: 4,
            depth: 3,
            dense_blocks,
            input_size: (DEMO_SIZE, DEMO_SIZE),
            seed: u64::from(seed),
            ..ModelConfig::default()
        };
        let model = Model::<f32>::build(config).map_err(|e| e.to_string())?;
        let tc = TrainConfig {
            learning_rate: 3e-3,
            batch_size: 4,
            optimizer: OptimizerKind::adam(),
            seed: u64::from(seed),
            ..TrainConfig::default()
        };
        let trainer = Trainer::new(tc, &model).map_err(|e| e.to_string())?;
        let data = synth_dataset(kind, images, DEMO_SIZE, u64::from(seed))
            .map_err(|e| e.to_string())?
            .iter()
            .map(|p| p.to_example(&p.id))
            .collect();
        Ok(DemoTrainer {
            model,
            trainer,
            data,
            epoch: 0,
            last_loss: f64::NAN,
        })
    }

    pub fn size(&self) -> usize {
        DEMO_SIZE
    }

    pub fn images(&self) -> usize {
        self.data.len()
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn params(&self) -> usize {
        self.model.count_params()
    }

    pub fn last_loss(&self) -> f64 {
        self.last_loss
    }

    /// Runs `epochs` passes over the images and returns the last mean loss.
    pub fn step(&mut self, epochs: usize) -> Result<f64, String> {
        for _ in 0..epochs {
            self.epoch += 1;
            let stats = self
                .trainer
                .train_epoch(&mut self.model, &self.data, self.epoch)
                .map_err(|e| e.to_string())?;
            self.last_loss = stats.loss;
        }
        Ok(self.last_loss)
    }

    pub fn input(&self, index: usize) -> Vec<u8> {
        self.data
            .get(index)
            .map(|e| gray_bytes(e.input.data().iter().map(|&v| f64::from(v))))
            .unwrap_or_default()
    }

    pub fn target(&self, index: usize) -> Vec<u8> {
        self.data
            .get(index)
            .map(|e| gray_bytes(e.target.data().iter().map(|&v| f64::from(v))))
            .unwrap_or_default()
    }

    /// Probability map of image `index`, as bytes.
    pub fn prediction(&self, index: usize) -> Result<Vec<u8>, String> {
        let p = self.probabilities(index)?;
        Ok(gray_bytes(p.data().iter().map(|&v| f64::from(v))))
    }

    /// ROC curve over all training images as flat `(fpr, tpr)` pairs.
    pub fn roc(&self) -> Result<Vec<f64>, String> {
        Ok(self
            .report()?
            .roc
            .points
            .iter()
            .flat_map(|&(f, t)| [f, t])
            .collect())
    }

    /// `key=value` lines of the metrics report.
    pub fn metrics(&self) -> Result<String, String> {
        Ok(self.report()?.to_text())
    }

    pub fn auc(&self) -> Result<f64, String> {
        Ok(self.report()?.auc)
    }
}

impl DemoTrainer {
    fn probabilities(&self, index: usize) -> Result<Tensor<f32>, String> {
        let e = self
            .data
            .get(index)
            .ok_or_else(|| format!("no image {index}"))?;
        let x = Tensor::stack(std::slice::from_ref(&e.input)).map_err(|e| e.to_string())?;
        let y = self.model.predict(&x).map_err(|e| e.to_string())?;
        y.reshape(e.target.shape()).map_err(|e| e.to_string())
    }

    fn report(&self) -> Result<MetricsReport, String> {
        let preds = (0..self.data.len())
            .map(|i| self.probabilities(i))
            .collect::<Result<Vec<_>, _>>()?;
        let targets: Vec<Tensor<f32>> = self.data.iter().map(|e| e.target.clone()).collect();
        evaluate_set(&preds, &targets, DEFAULT_THRESHOLD, Averaging::Micro).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lung_demo_masks_are_disjoint() {
        let d = LungDemo::new(48, 3).unwrap();
        assert_eq!(d.slice().len(), 48 * 48);
        assert!(d.surrounding().iter().zip(d.lung()).all(|(&s, l)| s == 0 || l == 0));
        assert!(d.surrounding_pixels() > 0);
        assert!(d.recovery_agreement() > 0.9);
    }

    #[test]
    fn lung_demo_rejects_odd_sizes() {
        assert!(LungDemo::new(4, 0).is_err());
    }

    #[test]
    fn trainer_rejects_bad_arguments() {
        assert!(DemoTrainer::new("spirals", 4, 2, 0).is_err());
        assert!(DemoTrainer::new("discs", 1, 2, 0).is_err());
        assert!(DemoTrainer::new("discs", 4, 0, 0).is_err());
    }
}
