mod oracles;

use m3_core::attention::{
    attend, attend_backward, attend_backward_with_route, attend_with_route, trace_top_k, Route, Temperature,
};
use m3_core::bank::MemoryBank;
use m3_core::feature::PixelMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Instance {
    bank: MemoryBank,
    queries: PixelMap,
    upstream: PixelMap,
}

fn instance(rng: &mut ChaCha8Rng) -> Instance {
    let t = rng.random_range(1..7);
    let d = rng.random_range(1..9);
    let s = rng.random_range(1..6);
    let (h, w) = (rng.random_range(1..4), rng.random_range(1..4));
    let psc: Vec<f32> = (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut bank = MemoryBank::from_rows("m", d, psc, (0..t as u32).map(|i| 2 * i).collect(), 0.9)
        .unwrap()
        .init_projection(s, rng.random())
        .unwrap();
    for v in bank.w_m.iter_mut() {
        *v *= 2.0;
    }
    let queries = PixelMap::from_data(h, w, s, (0..h * w * s).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap();
    let upstream = PixelMap::from_data(h, w, d, (0..h * w * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    Instance { bank, queries, upstream }
}

fn objective(inst: &Instance, queries: &PixelMap, bank: &MemoryBank, temp: Temperature) -> f64 {
    let out = attend(queries, bank, temp, false).unwrap();
    out.features.data.iter().zip(&inst.upstream.data).map(|(a, b)| a * b).sum()
}

#[test]
fn hand_example_matches_scalar_loop() {
    let psc = vec![1.0f32, 0.0, 2.0, -1.0, 1.0, 0.0];
    let mut bank = MemoryBank::from_rows("m", 3, psc.clone(), vec![0, 5], 0.9).unwrap().init_projection(2, 0).unwrap();
    bank.w_m = vec![1.0, 0.0, -1.0, 0.0, 2.0, 1.0];
    let q = [1.0, -2.0];
    let out = attend(&PixelMap::from_data(1, 1, 2, q.to_vec()).unwrap(), &bank, Temperature::None, true).unwrap();
    // q W_m = [1, -4, -3]; logits = [1 - 6, -1 - 4] = [-5, -5] -> uniform
    let (expected, weights) = oracles::scalar_attention(&q, &bank.w_m, &psc, 3, 1.0);
    assert!((weights[0] - 0.5).abs() < 1e-12);
    for (a, b) in out.features.data.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((out.features.data[0] - 0.0).abs() < 1e-12 && (out.features.data[1] - 0.5).abs() < 1e-12);
}

#[test]
fn forward_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let inst = instance(&mut rng);
        let d = inst.bank.dim;
        for temp in [Temperature::None, Temperature::InvSqrtD, Temperature::Fixed(0.7), Temperature::Learned(1.3)] {
            let out = attend(&inst.queries, &inst.bank, temp, true).unwrap();
            let weights = out.weights.unwrap();
            for p in 0..inst.queries.pixel_count() {
                let (f, w) =
                    oracles::scalar_attention(inst.queries.pixel(p), &inst.bank.w_m, &inst.bank.psc, d, temp.scale(d));
                for (a, b) in out.features.pixel(p).iter().zip(&f) {
                    assert!((a - b).abs() < 1e-6);
                }
                for (a, b) in weights.pixel(p).iter().zip(&w) {
                    assert!((a - b).abs() < 1e-6);
                }
                assert!((weights.pixel(p).iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn both_routes_agree_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..30 {
        let inst = instance(&mut rng);
        let a = attend_with_route(&inst.queries, &inst.bank, Temperature::InvSqrtD, false, Route::Direct).unwrap();
        let b = attend_with_route(&inst.queries, &inst.bank, Temperature::InvSqrtD, false, Route::Factored).unwrap();
        for (x, y) in a.features.data.iter().zip(&b.features.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for _ in 0..60 {
        let inst = instance(&mut rng);
        let temp = Temperature::InvSqrtD;
        let grads = attend_backward(&inst.queries, &inst.bank, temp, &inst.upstream).unwrap();
        for route in [Route::Direct, Route::Factored] {
            let other = attend_backward_with_route(&inst.queries, &inst.bank, temp, &inst.upstream, route).unwrap();
            for (a, b) in grads.query.data.iter().zip(&other.query.data).chain(grads.w_m.iter().zip(&other.w_m)) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }

        let h = 1e-6;
        for i in 0..inst.queries.data.len() {
            let mut q = inst.queries.clone();
            q.data[i] += h;
            let fp = objective(&inst, &q, &inst.bank, temp);
            q.data[i] -= 2.0 * h;
            let fm = objective(&inst, &q, &inst.bank, temp);
            let numeric = (fp - fm) / (2.0 * h);
            worst = worst.max(oracles::rel_err(grads.query.data[i], numeric));
        }
        for i in 0..inst.bank.w_m.len() {
            let mut bank = inst.bank.clone();
            let mut param = bank.w_m[i];
            let numeric = oracles::central_difference(&mut param, 1e-3, |p| {
                bank.w_m[i] = *p;
                objective(&inst, &inst.queries, &bank, temp)
            });
            worst = worst.max(oracles::rel_err(grads.w_m[i], numeric));
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

#[test]
fn learned_temperature_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let inst = instance(&mut rng);
        let lambda = rng.random_range(0.5..2.0);
        let g = attend_backward(&inst.queries, &inst.bank, Temperature::Learned(lambda), &inst.upstream)
            .unwrap()
            .temperature
            .unwrap();
        let h = 1e-6;
        let numeric = (objective(&inst, &inst.queries, &inst.bank, Temperature::Learned(lambda + h))
            - objective(&inst, &inst.queries, &inst.bank, Temperature::Learned(lambda - h)))
            / (2.0 * h);
        assert!(oracles::rel_err(g, numeric) < 1e-5, "{g} vs {numeric}");
    }
}

#[test]
fn output_stays_in_convex_hull() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let mut inst = instance(&mut rng);
        for q in inst.queries.data.iter_mut() {
            *q *= 50.0;
        }
        let bound = inst.bank.psc.iter().map(|v| v.abs() as f64).fold(0.0, f64::max);
        let out = attend(&inst.queries, &inst.bank, Temperature::None, false).unwrap();
        assert!(out.features.data.iter().all(|v| v.is_finite() && v.abs() <= bound + 1e-12));
    }
}

#[test]
fn uniform_logit_shift_leaves_output_unchanged() {
    // Rows share a constant last component, so changing the last column of
    // W_m adds the same amount to every logit of a pixel.
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..30 {
        let t = rng.random_range(2..6);
        let s = rng.random_range(1..4);
        // rows = [r_k, 1]; W_m last column carries the shift
        let d = 4;
        let mut psc = Vec::new();
        for _ in 0..t {
            psc.extend((0..d - 1).map(|_| rng.random_range(-1.0f32..1.0)));
            psc.push(1.0);
        }
        let bank =
            MemoryBank::from_rows("m", d, psc, (0..t as u32).collect(), 0.9).unwrap().init_projection(s, 3).unwrap();
        let mut shifted = bank.clone();
        for i in 0..s {
            shifted.w_m[i * d + d - 1] += rng.random_range(-3.0f32..3.0);
        }
        let q = PixelMap::from_data(1, 2, s, (0..2 * s).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let a = attend(&q, &bank, Temperature::None, false).unwrap();
        let b = attend(&q, &shifted, Temperature::None, false).unwrap();
        for (x, y) in a.features.data.iter().zip(&b.features.data) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}

#[test]
fn linear_in_psc_under_frozen_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let inst = instance(&mut rng);
    let w = attend(&inst.queries, &inst.bank, Temperature::InvSqrtD, true).unwrap().weights.unwrap();
    let d = inst.bank.dim;
    for p in 0..inst.queries.pixel_count() {
        let mix = |rows: &[f32]| -> Vec<f64> {
            (0..d).map(|e| w.pixel(p).iter().enumerate().map(|(k, wk)| wk * rows[k * d + e] as f64).sum()).collect()
        };
        let other: Vec<f32> = inst.bank.psc.iter().map(|v| v * 0.5 - 0.25).collect();
        let sum: Vec<f32> = inst.bank.psc.iter().zip(&other).map(|(a, b)| 2.0 * a + 3.0 * b).collect();
        let (a, b, c) = (mix(&inst.bank.psc), mix(&other), mix(&sum));
        for e in 0..d {
            assert!((c[e] - (2.0 * a[e] + 3.0 * b[e])).abs() < 1e-6);
        }
    }
}

#[test]
fn top_one_is_oracle_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for _ in 0..50 {
        let inst = instance(&mut rng);
        let q = inst.queries.pixel(0);
        let (_, w) = oracles::scalar_attention(q, &inst.bank.w_m, &inst.bank.psc, inst.bank.dim, 1.0);
        let argmax = (0..w.len()).fold(0, |b, k| if w[k] > w[b] { k } else { b });
        let top = trace_top_k(q, &inst.bank, Temperature::None, 1).unwrap();
        assert_eq!(top[0].psc_index, argmax);
        assert_eq!(top[0].source_row, 2 * argmax as u32);
        let all = trace_top_k(q, &inst.bank, Temperature::None, inst.bank.len()).unwrap();
        assert!((all.iter().map(|e| e.weight).sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
