use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use inpaint_core::checkpoint::Checkpoint;
use inpaint_core::imaging::DEFAULT_COLOR_TOLERANCE;
use inpaint_core::networks::Segmenter;
use inpaint_core::util::write_atomic;
use inpaint_core::{
    labels_to_pseudocolor, pseudocolor_to_labels, BinaryMask, ColorPalette, Error as CoreError,
    Image, InpaintModel, SemanticMask,
};

use crate::error::{ServiceError, ServiceResult};

pub const DEFAULT_TTL: Duration = Duration::from_secs(24 * 60 * 60);

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub session_dir: PathBuf,
    pub ttl: Duration,
    pub color_tolerance: f32,
}

impl ServiceConfig {
    pub fn new(session_dir: impl Into<PathBuf>) -> Self {
        Self {
            session_dir: session_dir.into(),
            ttl: DEFAULT_TTL,
            color_tolerance: DEFAULT_COLOR_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HistoryRecord {
    index: usize,
    submitted_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    id: String,
    created_at_ms: u64,
    updated_at_ms: u64,
    original_size: [usize; 2],
    stage1_runs: u32,
    history: Vec<HistoryRecord>,
}

/// Returned by session creation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDescriptor {
    pub id: String,
    /// Composited coarse result, base64 PNG.
    pub coarse: String,
    /// Editable pseudo-color semantic mask, base64 PNG.
    pub semantic_mask: String,
    pub palette: ColorPalette,
    /// `[height, width]` of the uploaded image before resizing.
    pub original_size: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineResponse {
    pub session_id: String,
    pub index: usize,
    /// Composited fine result, base64 PNG.
    pub fine: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub index: usize,
    pub submitted_at_ms: u64,
    pub semantic_mask: String,
    pub fine: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
    pub original_size: [usize; 2],
    pub input: String,
    pub mask: String,
    pub coarse: String,
    /// Latest semantic mask: the predicted one until the first refine.
    pub semantic_mask: String,
    pub palette: ColorPalette,
    pub history: Vec<HistoryEntry>,
    pub stage1_runs: u32,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub fn encode_b64(bytes: &[u8]) -> String {
    B64.encode(bytes)
}

pub fn decode_b64(field: &str, s: &str) -> ServiceResult<Vec<u8>> {
    B64.decode(s.trim())
        .map_err(|e| ServiceError::BadRequest(format!("field `{field}` is not valid base64: {e}")))
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
}

/// Sessions on local disk plus the frozen model snapshot they share.
pub struct InpaintService {
    model: Arc<InpaintModel>,
    segmenter: Option<Arc<dyn Segmenter>>,
    palette: ColorPalette,
    cfg: ServiceConfig,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    features: Mutex<HashMap<String, Tensor>>,
    stage1_runs: AtomicU64,
}

impl InpaintService {
    /// Uses the model's own segmenter unless `segmenter` is supplied.
    pub fn new(
        model: Arc<InpaintModel>,
        segmenter: Option<Arc<dyn Segmenter>>,
        palette: ColorPalette,
        cfg: ServiceConfig,
    ) -> ServiceResult<Self> {
        if palette.len() != model.config.num_classes {
            return Err(ServiceError::Core(CoreError::Palette(format!(
                "palette has {} classes, model {}",
                palette.len(),
                model.config.num_classes
            ))));
        }
        if segmenter.is_none() && !model.has_trained_segmenter() {
            log::warn!("checkpoint has no trained segmenter; predicted masks will be arbitrary");
        }
        std::fs::create_dir_all(&cfg.session_dir)
            .map_err(|e| ServiceError::Core(CoreError::file(&cfg.session_dir, e)))?;
        Ok(Self {
            model,
            segmenter,
            palette,
            cfg,
            locks: Mutex::new(HashMap::new()),
            features: Mutex::new(HashMap::new()),
            stage1_runs: AtomicU64::new(0),
        })
    }

    pub fn palette(&self) -> &ColorPalette {
        &self.palette
    }

    /// Number of stage-one passes since start-up.
    pub fn stage1_runs(&self) -> u64 {
        self.stage1_runs.load(Ordering::SeqCst)
    }

    fn segmenter(&self) -> &dyn Segmenter {
        match &self.segmenter {
            Some(s) => s.as_ref(),
            None => &self.model.segmenter,
        }
    }

    fn dir(&self, id: &str) -> PathBuf {
        self.cfg.session_dir.join(id)
    }

    fn lock_for(&self, id: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().expect("lock table poisoned");
        locks.entry(id.to_string()).or_default().clone()
    }

    /// Stage one: coarse result, predicted semantic mask, cached `F_c`.
    pub fn create_session(&self, image_b64: &str, mask_b64: &str) -> ServiceResult<SessionDescriptor> {
        self.purge_expired();
        let (h, w) = (self.model.config.height, self.model.config.width);
        let decoded = Image::decode_png(&decode_b64("image", image_b64)?)?;
        let raw_mask = BinaryMask::decode_png(&decode_b64("mask", mask_b64)?)?;
        let size = [decoded.height(), decoded.width()];
        if size != [raw_mask.height(), raw_mask.width()] {
            return Err(CoreError::Dimension(format!(
                "image is {}×{} but mask is {}×{}",
                size[0],
                size[1],
                raw_mask.height(),
                raw_mask.width()
            ))
            .into());
        }
        let image = decoded.resized(h, w)?;
        let mask = raw_mask.resized(h, w);

        let coarse = self.model.coarse(&image, &mask)?;
        self.stage1_runs.fetch_add(1, Ordering::SeqCst);
        let semantic = self.model.predict_semantic(&coarse.composited, self.segmenter())?;

        let id = uuid::Uuid::new_v4().simple().to_string();
        let dir = self.dir(&id);
        image.save_png(dir.join("input.png"))?;
        mask.save_png(dir.join("mask.png"))?;
        coarse.composited.save_png(dir.join("coarse.png"))?;
        semantic.save_index_png(dir.join("semantic.png"))?;
        let mut feats = Checkpoint::new(0, self.model.config.clone(), serde_json::Value::Null);
        feats.tensors.insert("features".into(), coarse.features.clone());
        feats.save(dir.join("features.ckpt"))?;
        let t = now_ms();
        let manifest = Manifest {
            id: id.clone(),
            created_at_ms: t,
            updated_at_ms: t,
            original_size: size,
            stage1_runs: 1,
            history: Vec::new(),
        };
        self.write_manifest(&manifest)?;
        self.features
            .lock()
            .expect("feature cache poisoned")
            .insert(id.clone(), coarse.features);

        Ok(SessionDescriptor {
            id,
            coarse: encode_b64(&coarse.composited.encode_png()?),
            semantic_mask: encode_b64(&labels_to_pseudocolor(&semantic, &self.palette)?.encode_png()?),
            palette: self.palette.clone(),
            original_size: size,
        })
    }

    fn write_manifest(&self, m: &Manifest) -> ServiceResult<()> {
        let bytes = serde_json::to_vec_pretty(m).map_err(CoreError::from)?;
        write_atomic(&self.dir(&m.id).join("manifest.json"), &bytes)?;
        Ok(())
    }

    fn read_manifest(&self, id: &str) -> ServiceResult<Manifest> {
        if !valid_id(id) {
            return Err(ServiceError::NotFound(id.to_string()));
        }
        let path = self.dir(id).join("manifest.json");
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(ServiceError::NotFound(id.to_string()))
            }
            Err(e) => return Err(CoreError::file(&path, e).into()),
        };
        let m: Manifest = serde_json::from_slice(&bytes)
            .map_err(|e| ServiceError::Internal(format!("unreadable manifest for {id}: {e}")))?;
        if self.expired(&m) {
            self.remove(id);
            return Err(ServiceError::NotFound(id.to_string()));
        }
        Ok(m)
    }

    fn expired(&self, m: &Manifest) -> bool {
        now_ms().saturating_sub(m.updated_at_ms) > self.cfg.ttl.as_millis() as u64
    }

    fn remove(&self, id: &str) {
        self.features.lock().expect("feature cache poisoned").remove(id);
        let _ = std::fs::remove_dir_all(self.dir(id));
    }

    /// Deletes every session whose last activity is older than the TTL.
    pub fn purge_expired(&self) -> usize {
        let Ok(entries) = std::fs::read_dir(&self.cfg.session_dir) else {
            return 0;
        };
        let mut removed = 0;
        for entry in entries.flatten() {
            let Some(id) = entry.file_name().to_str().map(str::to_string) else {
                continue;
            };
            if !valid_id(&id) {
                continue;
            }
            let lock = self.lock_for(&id);
            let _guard = lock.lock().expect("session lock poisoned");
            if let Err(ServiceError::NotFound(_)) = self.read_manifest(&id) {
                if !self.dir(&id).exists() {
                    removed += 1;
                }
            }
        }
        removed
    }

    fn cached_features(&self, id: &str) -> ServiceResult<Tensor> {
        if let Some(t) = self.features.lock().expect("feature cache poisoned").get(id) {
            return Ok(t.clone());
        }
        let ck = Checkpoint::load(self.dir(id).join("features.ckpt"))?;
        let t = ck
            .tensors
            .get("features")
            .ok_or_else(|| ServiceError::Internal(format!("session {id} has no cached features")))?
            .to_dtype(self.model.dtype())
            .map_err(CoreError::from)?;
        self.features
            .lock()
            .expect("feature cache poisoned")
            .insert(id.to_string(), t.clone());
        Ok(t)
    }

    /// Stage two on the cached features under an edited pseudo-color mask.
    pub fn refine(&self, id: &str, semantic_b64: &str) -> ServiceResult<RefineResponse> {
        let lock = self.lock_for(id);
        let _guard = lock.lock().expect("session lock poisoned");
        let mut manifest = self.read_manifest(id)?;
        let bytes = decode_b64("semantic_mask", semantic_b64)?;
        let edited = Image::decode_png(&bytes)?;
        let (h, w) = (self.model.config.height, self.model.config.width);
        if (edited.height(), edited.width()) != (h, w) {
            return Err(CoreError::Dimension(format!(
                "semantic mask must be {h}×{w}, got {}×{}",
                edited.height(),
                edited.width()
            ))
            .into());
        }
        let labels = pseudocolor_to_labels(&edited, &self.palette, self.cfg.color_tolerance)?;
        let dir = self.dir(id);
        let original = Image::load_png(dir.join("input.png"))?;
        let mask = BinaryMask::load_png(dir.join("mask.png"))?;
        let features = self.cached_features(id)?;
        let (_, fine) = self.model.refine(&features, &labels, &original, &mask)?;

        let index = manifest.history.len();
        labels.save_index_png(dir.join(format!("history/{index:04}_semantic.png")))?;
        fine.save_png(dir.join(format!("history/{index:04}_fine.png")))?;
        labels.save_index_png(dir.join("semantic.png"))?;
        let t = now_ms();
        manifest.history.push(HistoryRecord {
            index,
            submitted_at_ms: t,
        });
        manifest.updated_at_ms = t;
        self.write_manifest(&manifest)?;
        Ok(RefineResponse {
            session_id: id.to_string(),
            index,
            fine: encode_b64(&fine.encode_png()?),
        })
    }

    fn pseudo_b64(&self, path: &Path) -> ServiceResult<String> {
        let labels = SemanticMask::load_index_png(path, self.palette.len())?;
        Ok(encode_b64(&labels_to_pseudocolor(&labels, &self.palette)?.encode_png()?))
    }

    fn file_b64(path: &Path) -> ServiceResult<String> {
        let bytes = std::fs::read(path).map_err(|e| CoreError::file(path, e))?;
        Ok(encode_b64(&bytes))
    }

    pub fn get_session(&self, id: &str) -> ServiceResult<SessionState> {
        let lock = self.lock_for(id);
        let _guard = lock.lock().expect("session lock poisoned");
        let m = self.read_manifest(id)?;
        let dir = self.dir(id);
        let history = m
            .history
            .iter()
            .map(|r| {
                Ok(HistoryEntry {
                    index: r.index,
                    submitted_at_ms: r.submitted_at_ms,
                    semantic_mask: self.pseudo_b64(&dir.join(format!("history/{:04}_semantic.png", r.index)))?,
                    fine: Self::file_b64(&dir.join(format!("history/{:04}_fine.png", r.index)))?,
                })
            })
            .collect::<ServiceResult<Vec<_>>>()?;
        Ok(SessionState {
            id: m.id.clone(),
            created_at_ms: m.created_at_ms,
            updated_at_ms: m.updated_at_ms,
            original_size: m.original_size,
            input: Self::file_b64(&dir.join("input.png"))?,
            mask: Self::file_b64(&dir.join("mask.png"))?,
            coarse: Self::file_b64(&dir.join("coarse.png"))?,
            semantic_mask: self.pseudo_b64(&dir.join("semantic.png"))?,
            palette: self.palette.clone(),
            history,
            stage1_runs: m.stage1_runs,
        })
    }
}
