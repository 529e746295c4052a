use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Shape hyper-parameters shared by the neural statistician, the VAE and
/// the CNN baseline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arch {
    pub image_size: usize,
    /// Output channels of each stride-2 encoder convolution; the decoder
    /// mirrors them.
    pub channels: Vec<usize>,
    /// Width of the encoder embedding `h`.
    pub feature_dim: usize,
    pub hidden_units: usize,
    pub hidden_layers: usize,
    pub dim_c: usize,
    pub dim_z: usize,
}

impl Arch {
    /// 64×64 images, five conv blocks 32-64-128-256-256, 512-d features,
    /// three 1000-unit hidden layers, `c` in R^8 and `z` in R^1.
    pub fn full() -> Self {
        Self {
            image_size: 64,
            channels: vec![32, 64, 128, 256, 256],
            feature_dim: 512,
            hidden_units: 1000,
            hidden_layers: 3,
            dim_c: 8,
            dim_z: 1,
        }
    }

    /// One conv layer on 8×8 images; used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            image_size: 8,
            channels: vec![3],
            feature_dim: 6,
            hidden_units: 5,
            hidden_layers: 2,
            dim_c: 2,
            dim_z: 1,
        }
    }

    /// Latent width of the VAE paired with this statistician.
    pub fn vae_latent(&self) -> usize {
        self.dim_c + self.dim_z
    }

    /// Spatial side length at the bottom of the encoder.
    pub fn bottom_size(&self) -> usize {
        self.image_size >> self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let levels = self.channels.len();
        if levels == 0 || self.image_size < 8 {
            return Err(Error::invalid(
                "architecture needs a conv layer and images >= 8",
            ));
        }
        if !self.image_size.is_multiple_of(1 << levels) || self.bottom_size() == 0 {
            return Err(Error::invalid(format!(
                "image size {} is not divisible by 2^{levels}",
                self.image_size
            )));
        }
        if [self.feature_dim, self.hidden_units, self.dim_c, self.dim_z].contains(&0)
            || self.channels.contains(&0)
        {
            return Err(Error::invalid("architecture widths must be positive"));
        }
        Ok(())
    }

    /// Stable digest of the model kind, shapes and element type.
    pub fn hash(&self, kind: &str, dtype: &str) -> String {
        let mut h = Sha256::new();
        h.update(kind.as_bytes());
        h.update([0]);
        h.update(serde_json::to_vec(self).expect("arch serialises"));
        h.update([0]);
        h.update(dtype.as_bytes());
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        Arch::full().validate().unwrap();
        Arch::tiny().validate().unwrap();
        assert_eq!(Arch::full().bottom_size(), 2);
        assert_eq!(Arch::full().vae_latent(), 9);
        let bad = Arch {
            image_size: 12,
            channels: vec![4, 4, 4],
            ..Arch::tiny()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn hash_depends_on_shape_kind_and_dtype() {
        let a = Arch::tiny();
        let b = Arch {
            dim_c: 3,
            ..Arch::tiny()
        };
        assert_eq!(a.hash("ns", "f32"), a.hash("ns", "f32"));
        assert_ne!(a.hash("ns", "f32"), b.hash("ns", "f32"));
        assert_ne!(a.hash("ns", "f32"), a.hash("vae", "f32"));
        assert_ne!(a.hash("ns", "f32"), a.hash("ns", "f64"));
    }
}
