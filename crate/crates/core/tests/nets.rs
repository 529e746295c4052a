//! Shape, purity, exchangeability and finiteness contracts of the network
//! forwards, plus checkpoint round trips.

use doorns::doorworld::{generate_pretrain_dataset, Image};
use doorns::nets::{images_to_fmap, SetIndex};
use doorns::nets::{
    load_checkpoint, restore_checkpoint, save_checkpoint, Arch, Mat, NsModel, VaeModel,
};
use doorns::pretrain::elbo::{ns_forward, NsNoise};
use doorns::seed::SeedStream;
use doorns::Error;
use rand::Rng;

/// 64×64 input with thin layers, so a hundred initialisations stay cheap.
fn slim() -> Arch {
    Arch {
        image_size: 64,
        channels: vec![4, 4, 4, 4, 4],
        feature_dim: 16,
        hidden_units: 12,
        hidden_layers: 3,
        dim_c: 8,
        dim_z: 1,
    }
}

fn noise_image(size: usize, seed: u64) -> Image {
    let mut rng = SeedStream::new(seed).rng("image", 0);
    let data = (0..3 * size * size).map(|_| rng.random::<f32>()).collect();
    Image::from_planar(size, size, data).unwrap()
}

fn ns(arch: &Arch, seed: u64) -> NsModel<f32> {
    NsModel::new(arch, &mut SeedStream::new(seed).rng("init", 0)).unwrap()
}

#[test]
fn encoder_shapes_and_purity() {
    let arch = Arch::full();
    let m = ns(&arch, 0);
    let img = noise_image(64, 1);
    let images: Vec<Image> = (0..5)
        .map(|i| {
            if i == 3 {
                img.clone()
            } else {
                noise_image(64, 10 + i)
            }
        })
        .collect();
    let mut with_twin = images.clone();
    with_twin[1] = img.clone();
    let h = m.encoder_forward(&with_twin).unwrap();
    assert_eq!((h.rows, h.cols), (5, 512));
    assert_eq!(h.row(1), h.row(3));
    assert_eq!(m.encoder_forward(&with_twin).unwrap(), h);
    assert!(m.encoder_forward(&[noise_image(32, 2)]).is_err());
}

#[test]
fn forwards_are_finite_and_shaped_for_random_models() {
    let arch = slim();
    for seed in 0..100 {
        let m = ns(&arch, seed);
        let imgs = [noise_image(64, 1000 + seed), noise_image(64, 2000 + seed)];
        let h = m.encoder_forward(&imgs).unwrap();
        assert!(h.is_finite());
        let qc = m.statistic_forward(&h).unwrap();
        assert_eq!(qc.dim(), 8);
        let c = qc.mean.clone();
        let qz = m.inference_forward(h.row(0), &c).unwrap();
        let pz = m.latent_decoder_forward(&c).unwrap();
        assert_eq!((qz.dim(), pz.dim()), (1, 1));
        let x = m.observation_decoder_forward(&qz.mean, &c).unwrap();
        assert_eq!((x.height, x.width, x.data.len()), (64, 64, 3 * 64 * 64));
        for g in [&qc, &qz, &pz] {
            assert!(g.mean.iter().chain(&g.log_var).all(|v| v.is_finite()));
            assert!(g.log_var.iter().all(|v| (-10.0..=10.0).contains(v)));
        }
        assert!(x.data.iter().all(|&v| v > 0.0 && v < 1.0));

        let vae = VaeModel::<f32>::new(&arch, &mut SeedStream::new(seed).rng("vae", 0)).unwrap();
        let (latent, recon) = vae.forward(&imgs[0]).unwrap();
        assert_eq!(latent.dim(), 9);
        assert!(latent
            .mean
            .iter()
            .chain(&latent.log_var)
            .all(|v| v.is_finite()));
        assert!(recon.data.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(vae.forward(&imgs[0]).unwrap().1, recon);
    }
}

#[test]
fn sub_network_shape_errors() {
    let m = ns(&Arch::tiny(), 0);
    let h = Mat::<f32>::zeros(2, 6);
    assert!(m.statistic_forward(&Mat::zeros(0, 6)).is_err());
    assert!(m.statistic_forward(&Mat::zeros(2, 5)).is_err());
    assert!(m.inference_forward(h.row(0), &[0.0]).is_err());
    assert!(m.inference_forward(&[0.0; 5], &[0.0, 0.0]).is_err());
    assert!(m.latent_decoder_forward(&[0.0; 3]).is_err());
    assert!(m
        .observation_decoder_forward(&[0.0, 0.0], &[0.0, 0.0])
        .is_err());
}

#[test]
fn statistic_network_is_exchangeable() {
    let m = ns(&slim(), 3);
    let imgs: Vec<Image> = (0..5).map(|i| noise_image(64, 50 + i)).collect();
    let h = m.encoder_forward(&imgs).unwrap();
    let base = m.statistic_forward(&h).unwrap();
    let mut rng = SeedStream::new(4).rng("perm", 0);
    for _ in 0..20 {
        let mut order: Vec<usize> = (0..5).collect();
        for i in (1..5).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let permuted = m.statistic_forward(&h.select_rows(&order)).unwrap();
        assert_eq!(permuted, base, "order {order:?}");
    }
    // Singletons are well defined.
    let single = m.statistic_forward(&h.select_rows(&[2])).unwrap();
    assert!(single.mean.iter().all(|v| v.is_finite()));
    // Duplicating every member leaves the mean-pooled context unchanged.
    let doubled = m
        .statistic_forward(&h.select_rows(&[0, 1, 2, 3, 4, 0, 1, 2, 3, 4]))
        .unwrap();
    for (a, b) in doubled
        .mean
        .iter()
        .chain(&doubled.log_var)
        .zip(base.mean.iter().chain(&base.log_var))
    {
        assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let arch = Arch::tiny();
    let m = ns(&arch, 7);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&m, &path, serde_json::json!({"epoch": 3})).unwrap();
    let (loaded, meta) = load_checkpoint::<f32, NsModel<f32>>(&path).unwrap();
    assert_eq!(loaded, m);
    assert_eq!(meta.training["epoch"], 3);

    let data = generate_pretrain_dataset(3, 5, 1, 8).unwrap();
    let images: Vec<Image> = data.sets.iter().flat_map(|s| s.images.clone()).collect();
    let x = images_to_fmap::<f32>(&images, 8).unwrap();
    let sets = SetIndex::uniform(3, 5);
    let noise = NsNoise::sample(&m, &sets, &mut SeedStream::new(8).rng("noise", 0));
    let a = ns_forward(&m, &x, &sets, &noise).0;
    let b = ns_forward(&loaded, &x, &sets, &noise).0;
    for (s, t) in a.iter().zip(&b) {
        assert_eq!(s.elbo.to_bits(), t.elbo.to_bits());
    }

    let mut restored = ns(&arch, 99);
    restore_checkpoint(&mut restored, &path).unwrap();
    assert_eq!(restored, m);
}

#[test]
fn checkpoint_rejects_other_architectures() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&ns(&Arch::tiny(), 0), &path, serde_json::Value::Null).unwrap();

    let wider = Arch {
        hidden_units: 6,
        ..Arch::tiny()
    };
    let mut other = ns(&wider, 0);
    assert!(matches!(
        restore_checkpoint(&mut other, &path),
        Err(Error::ArchitectureMismatch { .. })
    ));
    assert!(matches!(
        load_checkpoint::<f32, VaeModel<f32>>(&path),
        Err(Error::ArchitectureMismatch { .. })
    ));
    // A dtype mismatch is caught while decoding the tensors.
    assert!(matches!(
        load_checkpoint::<f64, NsModel<f64>>(&path),
        Err(Error::Format { .. })
    ));
    let mut vae = VaeModel::<f32>::new(&Arch::tiny(), &mut SeedStream::new(0).rng("v", 0)).unwrap();
    assert!(restore_checkpoint(&mut vae, &path).is_err());
}
