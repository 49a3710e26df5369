//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line straight to stderr, so the verdicts show up even when output is captured.

mod common;
#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use common::{m3, m3_threads, ok, synth};
use m3_core::attention::{attend, attend_backward, Temperature};
use m3_core::bank::{reduce_similarity, MemoryBank};
use m3_core::feature::{FeatureTensor, PixelMap};
use m3_core::metrics::{grounding_scores, retrieval_at_k, GroundingSet, RetrievalSet};
use m3_core::raster::{backward_render, project, Channels, PreparedView, RenderGrads};
use m3_core::scene::GaussianScene;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn verdict(n: u32, passed: bool, detail: &str) {
    let line = format!("criterion {n}: {} - {detail}\n", if passed { "PASS" } else { "FAIL" });
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(passed, "criterion {n} failed: {detail}");
}

fn summary(path: &Path) -> Value {
    let text = std::fs::read_to_string(path).unwrap();
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

#[test]
fn criterion_1_reduction_matches_sequential_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut instances, mut mismatches, mut too_similar) = (0, 0, 0);
    while instances < 240 {
        let n = rng.random_range(1..=512);
        let d = rng.random_range(1..=32);
        let centers = rng.random_range(1..12);
        let spread = rng.random_range(0.05f32..1.0);
        let c = oracles::random_unit_rows(&mut rng, centers, d);
        let rows: Vec<f32> = (0..n)
            .flat_map(|_| {
                let k = rng.random_range(0..centers);
                (0..d).map(|e| c[k * d + e] + rng.random_range(-spread..spread)).collect::<Vec<_>>()
            })
            .collect();
        if rows.chunks(d).any(|r| r.iter().all(|&v| v == 0.0)) {
            continue;
        }
        let raw = FeatureTensor::embedding_list("m", d, rows.clone()).unwrap();
        for theta in [0.5f32, 0.8, 0.95] {
            let expected = oracles::sequential_reduce(&rows, d, theta as f64);
            for chunk in [1, 7, 64, n] {
                let bank = reduce_similarity(&raw, theta, chunk).unwrap();
                instances += 1;
                if bank.selected_indices != expected {
                    mismatches += 1;
                }
                let sel = &bank.selected_indices;
                for (a, &i) in sel.iter().enumerate() {
                    for &j in &sel[a + 1..] {
                        let (i, j) = (i as usize, j as usize);
                        if oracles::cosine(&rows[i * d..(i + 1) * d], &rows[j * d..(j + 1) * d]) >= theta as f64 {
                            too_similar += 1;
                        }
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        mismatches == 0 && too_similar == 0 && secs < 30.0,
        &format!("{instances} instances, {mismatches} oracle mismatches, {too_similar} kept pairs at or above theta, {secs:.1} s"),
    );
}

fn attention_instance(rng: &mut ChaCha8Rng) -> (MemoryBank, PixelMap, PixelMap) {
    let (t, d, s) = (rng.random_range(1..9), rng.random_range(1..12), rng.random_range(1..9));
    let (h, w) = (rng.random_range(1..4), rng.random_range(1..4));
    let psc: Vec<f32> = (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut bank = MemoryBank::from_rows("m", d, psc, (0..t as u32).collect(), 0.9)
        .unwrap()
        .init_projection(s, rng.random())
        .unwrap();
    bank.w_m.iter_mut().for_each(|v| *v *= 2.0);
    let q = PixelMap::from_data(h, w, s, (0..h * w * s).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap();
    let up = PixelMap::from_data(h, w, d, (0..h * w * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    (bank, q, up)
}

#[test]
fn criterion_2_attention_forward_and_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let temp = Temperature::InvSqrtD;
    let (mut sum_err, mut fwd_err, mut grad_err) = (0.0f64, 0.0f64, 0.0f64);
    let objective = |q: &PixelMap, bank: &MemoryBank, up: &PixelMap| -> f64 {
        attend(q, bank, temp, false).unwrap().features.data.iter().zip(&up.data).map(|(a, b)| a * b).sum()
    };
    let instances = 60;
    for _ in 0..instances {
        let (bank, q, up) = attention_instance(&mut rng);
        let out = attend(&q, &bank, temp, true).unwrap();
        let weights = out.weights.unwrap();
        for p in 0..q.pixel_count() {
            sum_err = sum_err.max((weights.pixel(p).iter().sum::<f64>() - 1.0).abs());
            let (f, w) = oracles::scalar_attention(q.pixel(p), &bank.w_m, &bank.psc, bank.dim, temp.scale(bank.dim));
            for (a, b) in out.features.pixel(p).iter().zip(&f).chain(weights.pixel(p).iter().zip(&w)) {
                fwd_err = fwd_err.max((a - b).abs());
            }
        }
        let grads = attend_backward(&q, &bank, temp, &up).unwrap();
        for i in 0..q.data.len() {
            let h = 1e-6;
            let (mut qp, mut qm) = (q.clone(), q.clone());
            qp.data[i] += h;
            qm.data[i] -= h;
            let numeric = (objective(&qp, &bank, &up) - objective(&qm, &bank, &up)) / (2.0 * h);
            grad_err = grad_err.max(oracles::rel_err(grads.query.data[i], numeric));
        }
        for i in 0..bank.w_m.len() {
            let mut b = bank.clone();
            let mut param = b.w_m[i];
            let numeric = oracles::central_difference(&mut param, 1e-3, |v| {
                b.w_m[i] = *v;
                objective(&q, &b, &up)
            });
            grad_err = grad_err.max(oracles::rel_err(grads.w_m[i], numeric));
        }
    }
    verdict(
        2,
        sum_err <= 1e-6 && fwd_err <= 1e-6 && grad_err <= 1e-4,
        &format!("{instances} instances; weight-sum error {sum_err:.1e}, forward error {fwd_err:.1e}, gradient rel. error {grad_err:.1e}"),
    );
}

fn fd_objective(scene: &GaussianScene, cam: &m3_core::scene::Camera, g_rgb: &PixelMap, g_q: &PixelMap) -> f64 {
    let out = PreparedView::new(scene, cam).render(scene, &Channels::rgb_and_query(0..g_q.channels)).unwrap();
    let dot = |a: &PixelMap, b: &PixelMap| a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum::<f64>();
    dot(&out.rgb.unwrap(), g_rgb) + dot(&out.query_map.unwrap(), g_q)
}

/// Transmittance along every pixel trace starts at 1 and never increases.
fn transmittance_monotone(view: &PreparedView) -> bool {
    (0..view.height).all(|y| {
        (0..view.width).all(|x| {
            let trace = view.pixel_trace(x, y);
            trace.first().is_none_or(|e| e.transmittance == 1.0)
                && trace.windows(2).all(|w| w[1].transmittance <= w[0].transmittance && w[1].transmittance >= 0.0)
        })
    })
}

#[test]
fn criterion_3_rasterizer_against_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (mut equiv_err, mut naive_err, mut grad_err) = (0.0f64, 0.0f64, 0.0f64);
    let mut monotone = true;
    let scenes = 24;
    for _ in 0..scenes {
        let n = rng.random_range(1..15);
        let mut scene = oracles::random_scene(&mut rng, n, 5);
        for p in &mut scene.primitives {
            p.query[1..4].copy_from_slice(&p.color_sh);
        }
        let cam = oracles::small_camera(24, 20);
        let view = PreparedView::new(&scene, &cam);
        let out = view.render(&scene, &Channels::rgb_and_query(1..4)).unwrap();
        let (rgb, q) = (out.rgb.unwrap(), out.query_map.unwrap());
        equiv_err = rgb.data.iter().zip(&q.data).map(|(a, b)| (a - b).abs()).fold(equiv_err, f64::max);
        monotone &= transmittance_monotone(&view);
    }
    for _ in 0..scenes {
        let n = rng.random_range(1..12);
        let scene = oracles::random_scene(&mut rng, n, 4);
        let cam = oracles::small_camera(8, 8);
        let view = PreparedView::new(&scene, &cam);
        let out = view.render(&scene, &Channels::rgb_and_query(0..4)).unwrap();
        monotone &= transmittance_monotone(&view);
        let frags: Vec<_> = scene.primitives.iter().enumerate().filter_map(|(i, p)| project(p, i, &cam)).collect();
        let (want, want_alpha) = oracles::naive_render(&frags, 8, 8, 7, |i| {
            let p = &scene.primitives[i];
            p.color_sh.iter().chain(&p.query).map(|&v| v as f64).collect()
        });
        let (rgb, q) = (out.rgb.unwrap(), out.query_map.unwrap());
        for pix in 0..64 {
            let got = rgb.pixel(pix).iter().chain(q.pixel(pix));
            naive_err = got.zip(&want[pix * 7..pix * 7 + 7]).map(|(a, b)| (a - b).abs()).fold(naive_err, f64::max);
            naive_err = naive_err.max((out.alpha_map.data[pix] - want_alpha[pix]).abs());
        }
    }
    let h = 1e-4f32;
    for _ in 0..5 {
        let scene = oracles::random_scene(&mut rng, 5, 3);
        let cam = oracles::small_camera(6, 6);
        let mut g_rgb = PixelMap::zeros(6, 6, 3);
        let mut g_q = PixelMap::zeros(6, 6, 3);
        g_rgb.data.iter_mut().chain(g_q.data.iter_mut()).for_each(|g| *g = rng.random_range(-1.0..1.0));
        let view = PreparedView::new(&scene, &cam);
        monotone &= transmittance_monotone(&view);
        let ch = Channels::rgb_and_query(0..3);
        let grads =
            backward_render(&view, &scene, &ch, RenderGrads { rgb: Some(&g_rgb), query_map: Some(&g_q) }).unwrap();
        for i in 0..scene.len() {
            for k in 0..3 {
                let mut s = scene.clone();
                let mut v = s.primitives[i].color_sh[k];
                let fd = oracles::central_difference(&mut v, h, |v| {
                    s.primitives[i].color_sh[k] = *v;
                    fd_objective(&s, &cam, &g_rgb, &g_q)
                });
                grad_err = grad_err.max(oracles::rel_err(grads.color[i][k], fd));
                let mut s = scene.clone();
                let mut v = s.primitives[i].query[k];
                let fd = oracles::central_difference(&mut v, h, |v| {
                    s.primitives[i].query[k] = *v;
                    fd_objective(&s, &cam, &g_rgb, &g_q)
                });
                grad_err = grad_err.max(oracles::rel_err(grads.query_of(i)[k], fd));
            }
            let mut s = scene.clone();
            let mut v = s.primitives[i].opacity_logit;
            let fd = oracles::central_difference(&mut v, h, |v| {
                s.primitives[i].opacity_logit = *v;
                fd_objective(&s, &cam, &g_rgb, &g_q)
            });
            grad_err = grad_err.max(oracles::rel_err(grads.opacity_logit[i], fd));
        }
    }
    verdict(
        3,
        equiv_err < 1e-5 && naive_err <= 1e-6 && grad_err < 1e-3 && monotone,
        &format!(
            "{scenes} scenes each; color/query gap {equiv_err:.1e}, naive-oracle error {naive_err:.1e}, \
             gradient rel. error {grad_err:.1e}, transmittance monotone: {monotone}"
        ),
    );
}

/// Synthetic dataset with its appearance fitted once, shared by criteria 4 and 5.
fn fitted_dataset() -> &'static (tempfile::TempDir, f64, f64) {
    static DATA: std::sync::OnceLock<(tempfile::TempDir, f64, f64)> = std::sync::OnceLock::new();
    DATA.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        synth(dir.path());
        let start = Instant::now();
        ok(&m3(dir.path(), &["fit-rgb", "--config", "config.toml", "--rgb-iters", "2000", "--out", "rgb"]));
        let psnr = summary(&dir.path().join("rgb/report_rgb.jsonl"))["heldout_psnr"].as_f64().unwrap();
        (dir, psnr, start.elapsed().as_secs_f64())
    })
}

fn train_degree(dir: &Path, degree: usize) -> (f64, f64) {
    let out = format!("deg{degree}");
    let start = Instant::now();
    ok(&m3(
        dir,
        &[
            "train",
            "--config",
            "config.toml",
            "--scene",
            "rgb/scene.m3gs",
            "--iters",
            "2000",
            "--degree",
            &format!("feat={degree}"),
            "--out",
            &out,
        ],
    ));
    let cosine = summary(&dir.join(out).join("report.jsonl"))["heldout"]["feat"]["cosine"].as_f64().unwrap();
    (cosine, start.elapsed().as_secs_f64())
}

#[test]
fn criterion_4_synthetic_scene_is_memorized() {
    let (dir, psnr, rgb_secs) = fitted_dataset();
    let (cosine, secs) = train_degree(dir.path(), 16);
    let total = rgb_secs + secs;
    verdict(
        4,
        *psnr > 30.0 && cosine < 0.05 && total < 300.0,
        &format!("held-out PSNR {psnr:.2} dB after 2000 steps, held-out cosine distance {cosine:.4} after 2000 steps, {total:.1} s"),
    );
}

#[test]
fn criterion_5_more_query_degrees_do_not_hurt() {
    let (dir, _, _) = fitted_dataset();
    let (small, _) = train_degree(dir.path(), 8);
    let (large, _) = train_degree(dir.path(), 32);
    verdict(5, large <= small, &format!("held-out cosine distance {small:.4} with 8 degrees, {large:.4} with 32"));
}

#[test]
fn criterion_6_metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let (mut retrieval_bad, mut grounding_bad) = (0, 0);
    let instances = 150;
    for _ in 0..instances {
        let m = rng.random_range(2..25);
        let d = rng.random_range(1..6);
        let mut draw = || (0..m * d).map(|_| rng.random_range(-2i32..3) as f64).collect::<Vec<_>>();
        let (images, texts) = (draw(), draw());
        let ks: Vec<usize> = [1, 5, 10].into_iter().filter(|&k| k <= m).collect();
        let got = retrieval_at_k(&RetrievalSet::new(d, images.clone(), texts.clone()).unwrap(), &ks).unwrap();
        if (got.i2t.clone(), got.t2i.clone()) != oracles::brute_force_retrieval(&images, &texts, d, &ks) {
            retrieval_bad += 1;
        }

        let (h, w, k) = (rng.random_range(1..8), rng.random_range(1..8), rng.random_range(1..5));
        let queries: Vec<f64> = (0..k * d).map(|_| rng.random_range(-2i32..3) as f64).collect();
        let masks: Vec<Vec<bool>> = (0..k)
            .map(|_| {
                let mut mask: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.4)).collect();
                mask[rng.random_range(0..h * w)] = true;
                mask
            })
            .collect();
        let features: Vec<f64> = (0..h * w * d).map(|_| rng.random_range(-2i32..3) as f64).collect();
        let thresholds = [0.25, 0.5, 0.75];
        let set = GroundingSet::new(d, h, w, queries.clone(), masks.clone()).unwrap();
        let got =
            grounding_scores(&PixelMap::from_data(h, w, d, features.clone()).unwrap(), &set, &thresholds).unwrap();
        let (ious, miou, ciou, ap) = oracles::pixel_loop_grounding(&features, d, &queries, &masks, &thresholds);
        let close = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9);
        if !(close(&got.per_query_iou, &ious) && close(&[got.miou, got.ciou], &[miou, ciou]) && close(&got.ap, &ap)) {
            grounding_bad += 1;
        }
    }
    verdict(
        6,
        retrieval_bad == 0 && grounding_bad == 0,
        &format!(
            "{instances} retrieval and {instances} grounding instances; {retrieval_bad} and {grounding_bad} mismatches"
        ),
    );
}

/// Every file under `dir`, keyed by relative path. Run reports carry a
/// wall-clock field, which is dropped before comparing.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
            let mut bytes = std::fs::read(&path).unwrap();
            if rel.ends_with("report.jsonl") || rel.ends_with("report_rgb.jsonl") {
                let text = String::from_utf8(bytes).unwrap();
                let stripped: Vec<String> = text
                    .lines()
                    .map(|l| {
                        let mut v: Value = serde_json::from_str(l).unwrap();
                        v.as_object_mut().unwrap().remove("wall_clock_secs");
                        v.to_string()
                    })
                    .collect();
                bytes = stripped.join("\n").into_bytes();
            }
            files.insert(rel, bytes);
        }
    }
    files
}

/// The whole command sequence with a fixed seed, short schedules.
fn run_all_commands(dir: &Path, threads: &str) -> BTreeMap<String, Vec<u8>> {
    let t = Some(threads);
    let run = |args: &[&str]| ok(&m3_threads(dir, args, t));
    run(&["synth", "--out", ".", "--seed", "3"]);
    let short = ["--config", "config.toml", "--iters", "150", "--rgb-iters", "150", "--points", "500"];
    let with = |extra: &[&'static str]| -> Vec<&str> { short.iter().chain(extra).copied().collect() };
    run(&[&["reduce"][..], &with(&["--bank", "feat=reduced.m3pb"])].concat());
    run(&[&["fit-rgb"][..], &with(&[])].concat());
    run(&[&["train"][..], &with(&["--scene", "out/scene.m3gs", "--bank", "feat=reduced.m3pb"])].concat());
    run(&[&["render"][..], &with(&["--scene", "out/scene.m3gs", "--bank", "feat=out/bank_feat.m3pb", "--pca"])]
        .concat());
    run(&[
        &["query"][..],
        &with(&["--scene", "out/scene.m3gs", "--bank", "feat=out/bank_feat.m3pb", "--view", "9", "--query-row", "2"]),
    ]
    .concat());
    run(&[&["eval"][..], &with(&["--scene", "out/scene.m3gs", "--bank", "feat=out/bank_feat.m3pb"])].concat());
    run(&["pca", "out/render_008_feat.m3ft", "--output", "out/pca_cli.png"]);
    snapshot(dir)
}

#[test]
fn criterion_7_commands_are_deterministic_across_thread_counts() {
    let runs: Vec<(String, BTreeMap<String, Vec<u8>>)> = ["1", "3", "1"]
        .iter()
        .map(|t| {
            let dir = tempfile::tempdir().unwrap();
            (t.to_string(), run_all_commands(dir.path(), t))
        })
        .collect();
    let reference = &runs[0].1;
    let mut differing = Vec::new();
    for (threads, files) in &runs[1..] {
        if files.keys().ne(reference.keys()) {
            differing.push(format!("file set with M3_THREADS={threads}"));
        }
        for (name, bytes) in files {
            if reference.get(name) != Some(bytes) {
                differing.push(format!("{name} with M3_THREADS={threads}"));
            }
        }
    }
    verdict(
        7,
        differing.is_empty() && reference.len() > 30,
        &format!(
            "8 commands, {} output files compared over M3_THREADS 1, 3 and a repeat; differing: {differing:?}",
            reference.len()
        ),
    );
}
