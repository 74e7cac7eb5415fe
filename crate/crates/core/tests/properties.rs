use adaptprompt::adaptation::{class_probabilities, loss_and_grads, AdaptState, AdapterParams, HeadParams, TrainConfig};
use adaptprompt::analysis::{gaussian_blur, jpeg_like, radial_power_spectrum};
use adaptprompt::backbone::{BackboneConfig, BackboneParams, Variant, Vocab};
use adaptprompt::data::{Family, Manifest, Record};
use adaptprompt::metrics::average_precision;
use adaptprompt::rng::Prng;
use adaptprompt::Tensor;
use proptest::prelude::*;

/// Precision at every positive, with rank given by pairwise comparison.
fn ap_oracle(scores: &[f64], positive: &[bool]) -> f64 {
    let above = |i: usize, j: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j <= i);
    let pos: Vec<usize> = (0..scores.len()).filter(|&i| positive[i]).collect();
    pos.iter()
        .map(|&i| {
            let rank = (0..scores.len()).filter(|&j| above(i, j)).count() as f64;
            let hits = pos.iter().filter(|&&j| above(i, j)).count() as f64;
            hits / rank
        })
        .sum::<f64>()
        / pos.len() as f64
}

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..40)
        .prop_flat_map(|n| (prop::collection::vec(-4i32..4, n), prop::collection::vec(any::<bool>(), n)))
        .prop_map(|(s, mut p)| {
            p[0] = true;
            p[1] = false;
            (s.into_iter().map(|v| v as f64 * 0.25).collect(), p)
        })
}

fn image(n: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(0.0f64..1.0, n * n).prop_map(move |d| Tensor::new(vec![n, n], d).unwrap())
}

proptest! {
    #[test]
    fn ap_matches_pairwise_oracle((s, p) in scored()) {
        let ap = average_precision(&s, &p).unwrap();
        prop_assert!((ap - ap_oracle(&s, &p)).abs() < 1e-12);
        prop_assert!(ap > 0.0 && ap <= 1.0);
    }

    #[test]
    fn ap_invariant_under_increasing_maps((s, p) in scored(), a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let t: Vec<f64> = s.iter().map(|v| (a * v + b).exp()).collect();
        prop_assert_eq!(average_precision(&s, &p).unwrap(), average_precision(&t, &p).unwrap());
    }

    #[test]
    fn ap_is_one_when_positives_lead((s, p) in scored()) {
        let ranked: Vec<f64> = p.iter().zip(&s).map(|(&pos, v)| if pos { 10.0 + v } else { v - 10.0 }).collect();
        prop_assert_eq!(average_precision(&ranked, &p).unwrap(), 1.0);
    }

    #[test]
    fn spectrum_conserves_energy(img in image(8)) {
        let s = radial_power_spectrum(&img).unwrap();
        let energy = img.data().iter().map(|v| v * v).sum::<f64>() * 64.0;
        prop_assert!((s.total_power() - energy).abs() <= 1e-9 * energy.max(1.0));
        prop_assert_eq!(s.counts.iter().sum::<usize>(), 64);
    }

    #[test]
    fn blur_keeps_constants_and_range(img in image(12), c in 0.0f64..1.0, sigma in 0.3f64..3.0) {
        let flat = gaussian_blur(&Tensor::full(&[12, 12], c), sigma).unwrap();
        prop_assert!(flat.data().iter().all(|v| (v - c).abs() < 1e-12));
        let out = gaussian_blur(&img, sigma).unwrap();
        let (lo, hi) = img.data().iter().fold((1.0f64, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
        prop_assert!(out.data().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }

    #[test]
    fn jpeg_stays_in_unit_range(img in image(11), q in 1u32..=100) {
        let out = jpeg_like(&img, q).unwrap();
        prop_assert_eq!(out.shape(), img.shape());
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn manifest_text_round_trips(kinds in prop::collection::vec((0u8..3, any::<bool>()), 1..20)) {
        let records: Vec<Record> = kinds
            .iter()
            .enumerate()
            .map(|(i, &(k, tagged))| {
                let tags = if tagged { vec!["indoor".to_string(), "person".to_string()] } else { vec![] };
                match k {
                    0 => Record::real(format!("real/{i}.pgm"), tags),
                    1 => Record::fake(format!("fake/{i}.pgm"), "gen_a", Family::Gan, tags),
                    _ => Record::fake(format!("fake/{i}.pgm"), "gen_b", Family::Diffusion, tags),
                }
            })
            .collect();
        let m = Manifest::new("/data", records).unwrap();
        let back = Manifest::parse(&m.to_text(), "/data", "mem").unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn zero_alpha_adapter_is_identity(seed in any::<u64>(), b in 1usize..5, d in 2usize..9) {
        let mut r = Prng::new(seed);
        let x = Tensor::new(vec![b, d], (0..b * d).map(|_| r.normal()).collect()).unwrap();
        let a = AdapterParams::init(d, (d / 4).max(1), 0.0, &mut r).unwrap();
        prop_assert_eq!(a.forward(&x).unwrap(), x);
    }

    #[test]
    fn probabilities_are_a_distribution(seed in any::<u64>(), k in 2usize..5, lit in -2.0f64..4.6) {
        let mut r = Prng::new(seed);
        let y = Tensor::new(vec![3, 4], (0..12).map(|_| r.normal()).collect()).unwrap();
        let e = Tensor::new(vec![k, 4], (0..4 * k).map(|_| r.normal()).collect()).unwrap();
        let head = HeadParams { log_inv_tau: lit, w_out: None };
        let p = class_probabilities(&y, &e, &head).unwrap();
        for i in 0..3 {
            prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.row(i).iter().all(|&v| v > 0.0));
        }
    }
}

fn tiny_state(variant: Variant, seed: u64) -> (BackboneParams, AdaptState, Tensor, Vec<usize>) {
    let vocab = Vocab::default_vocab();
    let mut r = Prng::new(seed);
    let bb_cfg = BackboneConfig {
        image_size: 8,
        patch_size: 4,
        vision_width: 8,
        vision_layers: 2,
        vision_heads: 2,
        text_width: 8,
        text_layers: 1,
        text_heads: 2,
        embed_dim: 4 + r.below(3),
        vocab_size: vocab.len(),
        max_seq_len: 8,
        variant,
    };
    let bb = BackboneParams::init_random(&bb_cfg, seed).unwrap();
    let d_in = bb_cfg.tap_width(variant);
    let config = TrainConfig {
        variant,
        context_len: 1 + r.below(3),
        seed,
        ..Default::default()
    };
    let mut state = AdaptState::init(&config, &bb_cfg, &vocab).unwrap();
    state.head.log_inv_tau = r.uniform(0.0, 3.0);
    let x = Tensor::new(vec![4, d_in], (0..4 * d_in).map(|_| r.normal()).collect()).unwrap();
    let labels = (0..4).map(|i| i % 2).collect();
    (bb, state, x, labels)
}

/// Central difference of the loss along a single coordinate.
fn probe(loss: impl Fn(f64) -> f64) -> f64 {
    let h = 1e-5;
    (loss(h) - loss(-h)) / (2.0 * h)
}

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-5 * analytic.abs().max(numeric.abs()).max(1e-3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradients_match_central_differences(seed in any::<u64>(), v in 0usize..3, pick in any::<u64>()) {
        let variant = [Variant::V0, Variant::V1, Variant::V2][v];
        let (bb, state, x, labels) = tiny_state(variant, seed);
        let (_, g) = loss_and_grads(&state, &bb, &x, &labels).unwrap();
        let loss = |s: &AdaptState| loss_and_grads(s, &bb, &x, &labels).unwrap().0;

        let num = probe(|d| {
            let mut s = state.clone();
            s.head.log_inv_tau += d;
            loss(&s)
        });
        prop_assert!(close(g.log_inv_tau, num), "tau {} vs {}", g.log_inv_tau, num);

        let adapter = state.adapter.clone().unwrap();
        let i = (pick % adapter.w_up.len() as u64) as usize;
        let num = probe(|d| {
            let mut s = state.clone();
            s.adapter.as_mut().unwrap().w_up.data_mut()[i] += d;
            loss(&s)
        });
        let ana = g.w_up.as_ref().unwrap().data()[i];
        prop_assert!(close(ana, num), "w_up[{}] {} vs {}", i, ana, num);

        let j = (pick % state.prompts.context.len() as u64) as usize;
        let num = probe(|d| {
            let mut s = state.clone();
            s.prompts.context.data_mut()[j] += d;
            loss(&s)
        });
        let ana = g.context.as_ref().unwrap().data()[j];
        prop_assert!(close(ana, num), "context[{}] {} vs {}", j, ana, num);

        if let Some(w) = &state.head.w_out {
            let k = (pick / 7 % w.len() as u64) as usize;
            let num = probe(|d| {
                let mut s = state.clone();
                s.head.w_out.as_mut().unwrap().data_mut()[k] += d;
                loss(&s)
            });
            let ana = g.w_out.as_ref().unwrap().data()[k];
            prop_assert!(close(ana, num), "w_out[{}] {} vs {}", k, ana, num);
        }
    }
}
