//! Central finite differences against the hand-written backward passes,
//! on the one-conv-layer 8×8 instantiation in double precision.

use doorns::nets::gaussian::normal_noise;
use doorns::nets::{Arch, Fmap, Module, NsModel, SetIndex, VaeModel};
use doorns::pretrain::elbo::{ns_backward, ns_forward, vae_backward, vae_forward, NsNoise};
use doorns::seed::SeedStream;
use rand::Rng;

const STEP: f64 = 1e-4;

fn random_images(n: usize, size: usize, seed: u64) -> Fmap<f64> {
    let mut rng = SeedStream::new(seed).rng("pixels", 0);
    let mut x = Fmap::zeros(3, n, size, size);
    x.data.iter_mut().for_each(|v| *v = rng.random::<f64>());
    x
}

struct Report {
    checked: usize,
    within_tight: usize,
    worst: f64,
    worst_name: String,
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares every parameter's analytic gradient of `loss` with a central
/// difference.
fn check<M: Module<f64> + Clone>(
    model: &M,
    loss: impl Fn(&M) -> f64,
    analytic: impl Fn(&mut M),
) -> Report {
    let mut with_grad = model.clone();
    with_grad.zero_grad();
    analytic(&mut with_grad);
    let grads: Vec<(String, Vec<f64>)> = with_grad
        .params()
        .into_iter()
        .map(|(n, p)| (n, p.grad.clone()))
        .collect();

    let mut report = Report {
        checked: 0,
        within_tight: 0,
        worst: 0.0,
        worst_name: String::new(),
    };
    let mut probe = model.clone();
    for (t, (name, g)) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let orig = probe.params_mut()[t].1.value[i];
            probe.params_mut()[t].1.value[i] = orig + STEP;
            let up = loss(&probe);
            probe.params_mut()[t].1.value[i] = orig - STEP;
            let down = loss(&probe);
            probe.params_mut()[t].1.value[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let err = relative(g[i], numeric);
            report.checked += 1;
            if err <= 1e-3 {
                report.within_tight += 1;
            }
            if err > report.worst {
                report.worst = err;
                report.worst_name = format!("{name}[{i}] analytic {} numeric {numeric}", g[i]);
            }
        }
    }
    report
}

fn assert_report(what: &str, r: &Report) {
    let frac = r.within_tight as f64 / r.checked as f64;
    eprintln!(
        "{what}: {} params, {:.4} within 1e-3, worst {:.2e} ({})",
        r.checked, frac, r.worst, r.worst_name
    );
    assert!(frac >= 0.95, "{what}: only {frac} within 1e-3");
    assert!(r.worst <= 1e-2, "{what}: worst relative error {}", r.worst);
}

/// Two conv levels, so gradients flow through stacked (transposed)
/// convolutions and the ELUs between them.
fn two_level() -> Arch {
    Arch {
        channels: vec![3, 4],
        ..Arch::tiny()
    }
}

#[test]
fn ns_elbo_gradient_matches_finite_differences() {
    ns_elbo_check(&Arch::tiny(), "ns");
}

#[test]
fn ns_elbo_gradient_two_conv_levels() {
    ns_elbo_check(&two_level(), "ns two-level");
}

fn ns_elbo_check(arch: &Arch, what: &str) {
    let seeds = SeedStream::new(3);
    let model = NsModel::<f64>::new(arch, &mut seeds.rng("init", 0)).unwrap();
    let sets = SetIndex::from_sizes(&[2, 3]);
    let x = random_images(5, arch.image_size, 4);
    let noise = NsNoise::sample(&model, &sets, &mut seeds.rng("noise", 0));
    let scale = 0.2;
    let loss = |m: &NsModel<f64>| {
        let (terms, _) = ns_forward(m, &x, &sets, &noise);
        -scale * terms.iter().map(|t| t.elbo).sum::<f64>()
    };
    let r = check(&model, loss, |m| {
        let (_, tape) = ns_forward(m, &x, &sets, &noise);
        ns_backward(m, &tape, &x, &noise, scale, 1.0);
    });
    assert_report(what, &r);
}

#[test]
fn vae_elbo_gradient_matches_finite_differences() {
    let arch = two_level();
    let seeds = SeedStream::new(5);
    let model = VaeModel::<f64>::new(&arch, &mut seeds.rng("init", 0)).unwrap();
    let x = random_images(4, arch.image_size, 6);
    let eps = normal_noise(4, model.dim_latent(), &mut seeds.rng("noise", 0));
    let scale = 0.25;
    let loss = |m: &VaeModel<f64>| {
        let (terms, _) = vae_forward(m, &x, &eps);
        -scale * terms.iter().map(|t| t.elbo).sum::<f64>()
    };
    let r = check(&model, loss, |m| {
        let (_, tape) = vae_forward(m, &x, &eps);
        vae_backward(m, &tape, &x, &eps, scale, 1.0);
    });
    assert_report("vae", &r);
}

#[test]
fn ns_embedding_gradient_matches_finite_differences() {
    let arch = Arch::tiny();
    let seeds = SeedStream::new(8);
    let model = NsModel::<f64>::new(&arch, &mut seeds.rng("init", 0)).unwrap();
    let sets = SetIndex::from_sizes(&[3, 2]);
    let x = random_images(5, arch.image_size, 9);
    let w = normal_noise::<f64, _>(5, arch.dim_c + arch.dim_z, &mut seeds.rng("w", 0));
    let loss = |m: &NsModel<f64>| {
        let (emb, _) = m.embed_cached(&x, &sets);
        emb.data
            .iter()
            .zip(&w.data)
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let r = check(&model, loss, |m| {
        let (_, tape) = m.embed_cached(&x, &sets);
        m.embed_backward(&tape, &w);
    });
    // Decoder parameters never see this loss; they are compared as zeros.
    assert_report("ns embedding", &r);
}
