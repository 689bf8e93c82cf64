//! In-memory image store with per-image stage caches.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock, RwLock};

use pmiris_core::encoding::encode;
use pmiris_core::pipeline::{normalize_sample, StageFailure};
use pmiris_core::quality::compute_quality;
use pmiris_core::{EncoderId, IrisTemplate, PipelineConfig, PolarIris, QualityRecord, Sample, Segmentation};

type Normalized = Result<(Segmentation, PolarIris), StageFailure>;

/// An uploaded image. Segmentation, unwrapping and templates are computed
/// on first use and cached; all of them are pure functions of the sample
/// and the service configuration.
#[derive(Debug)]
pub struct StoredImage {
    pub id: String,
    pub sample: Sample,
    normalized: OnceLock<Normalized>,
    templates: [OnceLock<Result<IrisTemplate, StageFailure>>; 3],
}

fn slot(encoder: EncoderId) -> usize {
    encoder.code() as usize - 1
}

impl StoredImage {
    pub fn new(id: String, sample: Sample) -> Self {
        Self {
            id,
            sample,
            normalized: OnceLock::new(),
            templates: Default::default(),
        }
    }

    fn normalized(&self, cfg: &PipelineConfig) -> &Normalized {
        self.normalized.get_or_init(|| normalize_sample(&self.sample, cfg))
    }

    pub fn template(&self, cfg: &PipelineConfig, encoder: EncoderId) -> &Result<IrisTemplate, StageFailure> {
        self.templates[slot(encoder)].get_or_init(|| {
            let (_, polar) = self.normalized(cfg).as_ref().map_err(Clone::clone)?;
            encode(polar, &cfg.encoder(encoder)).map_err(StageFailure::from)
        })
    }

    pub fn quality(&self, cfg: &PipelineConfig) -> Result<QualityRecord, String> {
        let (seg, _) = self.normalized(cfg).as_ref().map_err(|e| e.to_string())?;
        compute_quality(&self.sample.image, seg).map_err(|e| e.to_string())
    }
}

/// The images of one comparison and the best shift per matched encoder.
#[derive(Debug)]
pub struct StoredComparison {
    pub a: Arc<StoredImage>,
    pub b: Arc<StoredImage>,
    pub shifts: Mutex<BTreeMap<EncoderId, i64>>,
}

#[derive(Debug, Default)]
pub struct Store {
    images: RwLock<HashMap<String, Arc<StoredImage>>>,
    comparisons: RwLock<HashMap<String, Arc<StoredComparison>>>,
}

impl Store {
    /// Inserts unless the id is already present; returns the stored entry
    /// and whether it was new.
    pub fn insert_image(&self, image: StoredImage) -> (Arc<StoredImage>, bool) {
        let mut images = self.images.write().expect("image store poisoned");
        if let Some(existing) = images.get(&image.id) {
            return (existing.clone(), false);
        }
        let image = Arc::new(image);
        images.insert(image.id.clone(), image.clone());
        (image, true)
    }

    pub fn image(&self, id: &str) -> Option<Arc<StoredImage>> {
        self.images.read().expect("image store poisoned").get(id).cloned()
    }

    pub fn comparison(&self, id: &str) -> Option<Arc<StoredComparison>> {
        self.comparisons
            .read()
            .expect("comparison store poisoned")
            .get(id)
            .cloned()
    }

    pub fn comparison_entry(&self, id: &str, a: &Arc<StoredImage>, b: &Arc<StoredImage>) -> Arc<StoredComparison> {
        let mut map = self.comparisons.write().expect("comparison store poisoned");
        map.entry(id.to_owned())
            .or_insert_with(|| {
                Arc::new(StoredComparison {
                    a: a.clone(),
                    b: b.clone(),
                    shifts: Mutex::new(BTreeMap::new()),
                })
            })
            .clone()
    }
}
