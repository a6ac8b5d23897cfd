use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use super::{forward_trace, EncoderError, FrameEmbedding, Parameters};
use crate::features::MelFeatures;

/// Read-only copy of encoder parameters. There is no method that mutates the
/// weights; the creation-time hash lets callers prove they never changed.
#[derive(Debug)]
pub struct TeacherHandle {
    params: Arc<Parameters>,
    hash_at_creation: String,
    forward_calls: AtomicUsize,
}

impl TeacherHandle {
    pub fn freeze(params: &Parameters) -> Self {
        let params = Arc::new(params.clone());
        let hash_at_creation = params.hash();
        Self {
            params,
            hash_at_creation,
            forward_calls: AtomicUsize::new(0),
        }
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn forward(&self, features: &MelFeatures, layer: usize) -> Result<FrameEmbedding, EncoderError> {
        self.forward_calls.fetch_add(1, Ordering::Relaxed);
        let n = self.params.config.n_layers;
        if layer == 0 || layer > n {
            return Err(EncoderError::LayerOutOfRange(layer, n));
        }
        forward_trace(&self.params, features).tap(layer)
    }

    pub fn forward_calls(&self) -> usize {
        self.forward_calls.load(Ordering::Relaxed)
    }

    pub fn hash(&self) -> String {
        self.params.hash()
    }

    pub fn hash_at_creation(&self) -> &str {
        &self.hash_at_creation
    }

    pub fn is_intact(&self) -> bool {
        self.hash() == self.hash_at_creation
    }
}

impl Clone for TeacherHandle {
    fn clone(&self) -> Self {
        Self {
            params: Arc::clone(&self.params),
            hash_at_creation: self.hash_at_creation.clone(),
            forward_calls: AtomicUsize::new(0),
        }
    }
}

/// Convenience alias matching the encoder API naming.
pub fn freeze_teacher(params: &Parameters) -> TeacherHandle {
    TeacherHandle::freeze(params)
}

#[cfg(test)]
mod tests {
    use super::super::{forward, init, EncoderConfig};
    use super::*;

    #[test]
    fn teacher_matches_student_until_update() {
        let cfg = EncoderConfig {
            patch_t: 4,
            patch_f: 4,
            d_model: 8,
            n_layers: 2,
            n_classes: 0,
            seed: 1,
        };
        let mut student = init(&cfg).unwrap();
        let teacher = freeze_teacher(&student);
        let f = MelFeatures::new((0..64).map(|i| (i as f64).cos()).collect(), 8, 8).unwrap();
        assert_eq!(teacher.forward(&f, 2).unwrap(), forward(&student, &f, 2).unwrap());
        for v in student.values.iter_mut() {
            *v -= 0.01;
        }
        assert_ne!(teacher.forward(&f, 2).unwrap(), forward(&student, &f, 2).unwrap());
        assert!(teacher.is_intact());
        assert_eq!(teacher.forward_calls(), 2);
    }
}
