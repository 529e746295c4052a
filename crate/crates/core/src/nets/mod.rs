//! Hand-written network layers with explicit backward passes, and the
//! models built from them.

pub mod adam;
pub mod arch;
pub mod blocks;
pub mod checkpoint;
pub mod gaussian;
pub mod layers;
pub mod ns;
pub mod scalar;
pub mod tensor;
pub mod vae;

pub use adam::Adam;
pub use arch::Arch;
pub use blocks::{Encoder, ObservationDecoder, SetIndex, StatisticNet};
pub use checkpoint::{load_checkpoint, restore_checkpoint, save_checkpoint, CheckpointMeta, Model};
pub use gaussian::{gaussian_kl, reparam_sample, GaussianParams};
pub use layers::{Linear, Mlp, Module, Param};
pub use ns::NsModel;
pub use scalar::Scalar;
pub use tensor::{Fmap, Mat};
pub use vae::VaeModel;

use crate::error::{Error, Result};
use crate::imageio::Image;

/// Batches images into a `[3, n, size, size]` map, checking their shape.
pub fn images_to_fmap<T: Scalar>(images: &[Image], size: usize) -> Result<Fmap<T>> {
    let mut out = Fmap::zeros(3, images.len(), size, size);
    let hw = size * size;
    for (n, img) in images.iter().enumerate() {
        if img.height != size || img.width != size {
            return Err(Error::invalid(format!(
                "image is {}x{}, model expects {size}x{size}",
                img.height, img.width
            )));
        }
        for c in 0..3 {
            let dst = (c * images.len() + n) * hw;
            for (d, &s) in out.data[dst..dst + hw]
                .iter_mut()
                .zip(&img.data[c * hw..(c + 1) * hw])
            {
                *d = T::lit(s as f64);
            }
        }
    }
    Ok(out)
}

pub fn fmap_to_image<T: Scalar>(x: &Fmap<T>, n: usize) -> Image {
    let data = x.item(n).into_iter().map(|v| v.f64() as f32).collect();
    Image::from_planar(x.h, x.w, data).expect("decoder emits three channels")
}
