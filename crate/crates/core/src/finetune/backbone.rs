//! Image-to-embedding backbones that can be finetuned end to end.

use rand::Rng;

use crate::doorworld::DoorSet;
use crate::error::Result;
use crate::imageio::Image;
use crate::latent_eval::Pretrained;
use crate::nets::blocks::EncoderCache;
use crate::nets::layers::NamedParamsMut;
use crate::nets::ns::EmbedTape;
use crate::nets::vae::VaeEmbedTape;
use crate::nets::{images_to_fmap, Arch, Encoder, Mat, Module, NsModel, SetIndex, VaeModel};

/// Model kind feeding a finetuning head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ns,
    Vae,
    Cnn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ns => "ns",
            ModelKind::Vae => "vae",
            ModelKind::Cnn => "cnn",
        }
    }
}

/// Per-image embeddings:
/// * statistician — `[posterior-mean c of the image's set | posterior-mean z]`;
/// * VAE — the latent posterior mean;
/// * CNN — the encoder feature of a freshly initialised encoder, optionally
///   concatenated with the mean feature of its set (`grouped`).
#[derive(Debug, Clone)]
pub enum Backbone {
    Ns(NsModel<f32>),
    Vae(VaeModel<f32>),
    Cnn {
        arch: Arch,
        encoder: Encoder<f32>,
        grouped: bool,
    },
}

pub enum Tape {
    Ns(EmbedTape<f32>),
    Vae(VaeEmbedTape<f32>),
    Cnn(EncoderCache<f32>),
}

impl Backbone {
    pub fn from_pretrained(p: Pretrained) -> Self {
        match p {
            Pretrained::Ns(m) => Backbone::Ns(m),
            Pretrained::Vae(m) => Backbone::Vae(m),
        }
    }

    pub fn fresh_cnn<R: Rng + ?Sized>(arch: &Arch, grouped: bool, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        Ok(Backbone::Cnn {
            arch: arch.clone(),
            encoder: Encoder::new(arch, rng),
            grouped,
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Backbone::Ns(_) => ModelKind::Ns,
            Backbone::Vae(_) => ModelKind::Vae,
            Backbone::Cnn { .. } => ModelKind::Cnn,
        }
    }

    pub fn arch(&self) -> &Arch {
        match self {
            Backbone::Ns(m) => &m.arch,
            Backbone::Vae(m) => &m.arch,
            Backbone::Cnn { arch, .. } => arch,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        match self {
            Backbone::Ns(m) => m.arch.dim_c + m.arch.dim_z,
            Backbone::Vae(m) => m.dim_latent(),
            Backbone::Cnn { arch, grouped, .. } => arch.feature_dim * if *grouped { 2 } else { 1 },
        }
    }

    /// Embeds every image of `sets`, in order, one row per image.
    pub fn embed(&self, sets: &[&DoorSet]) -> Result<(Mat<f32>, Tape, SetIndex)> {
        let images: Vec<Image> = sets.iter().flat_map(|s| s.images.iter().cloned()).collect();
        let index = SetIndex::from_sizes(&sets.iter().map(|s| s.images.len()).collect::<Vec<_>>());
        let x = images_to_fmap(&images, self.arch().image_size)?;
        Ok(match self {
            Backbone::Ns(m) => {
                let (e, t) = m.embed_cached(&x, &index);
                (e, Tape::Ns(t), index)
            }
            Backbone::Vae(m) => {
                let (e, t) = m.embed_cached(&x);
                (e, Tape::Vae(t), index)
            }
            Backbone::Cnn {
                encoder, grouped, ..
            } => {
                let (h, t) = encoder.forward_cached(&x);
                let e = if *grouped {
                    let pooled = index.mean_pool(&h).select_rows(&index.set_of);
                    Mat::hcat(&h, &pooled)
                } else {
                    h
                };
                (e, Tape::Cnn(t), index)
            }
        })
    }

    pub fn backward(&mut self, tape: &Tape, index: &SetIndex, d_emb: &Mat<f32>) {
        match (self, tape) {
            (Backbone::Ns(m), Tape::Ns(t)) => m.embed_backward(t, d_emb),
            (Backbone::Vae(m), Tape::Vae(t)) => m.embed_backward(t, d_emb),
            (
                Backbone::Cnn {
                    encoder, grouped, ..
                },
                Tape::Cnn(t),
            ) => {
                if *grouped {
                    let f = encoder.feature_dim();
                    let (mut dh, d_pooled) = d_emb.hsplit(f);
                    let d_set = d_pooled.scatter_add_rows(&index.set_of, index.n_sets());
                    let sizes_scaled = index.mean_pool_backward(&d_set);
                    dh.add(&sizes_scaled);
                    encoder.backward(t, &dh);
                } else {
                    encoder.backward(t, d_emb);
                }
            }
            _ => unreachable!("tape from a different backbone"),
        }
    }

    /// Parameters on the image → embedding path.
    pub fn params_mut(&mut self) -> NamedParamsMut<'_, f32> {
        match self {
            Backbone::Ns(m) => m.embedding_params_mut(),
            Backbone::Vae(m) => m.embedding_params_mut(),
            Backbone::Cnn { encoder, .. } => encoder.params_mut(),
        }
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }
}
