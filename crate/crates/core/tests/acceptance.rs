//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use common::{circular_shift, forward_ref, random_grid, rel_err, rng, DenseRidge};
use evtrack_core::cf::{detect, make_label, train_filter, CfParams};
use evtrack_core::eval::{
    bench, center_location_error, centroid_tracker, trajectory_boxes, BenchConfig,
};
use evtrack_core::event::{read_events, read_ground_truth, write_events, write_ground_truth};
use evtrack_core::features::forward;
use evtrack_core::tracker::{read_trajectory, write_trajectory};
use evtrack_core::*;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn cf_oracle() -> Outcome {
    let started = Instant::now();
    let mut r = rng(1001);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x = random_grid(&mut r, 8, 8, 1);
        let z = random_grid(&mut r, 8, 8, 1);
        let lambda = 10f64.powf(r.random_range(-3.0..0.0));
        let sigma = r.random_range(0.5..2.0);
        let label = make_label(8, 8, sigma);
        let params = CfParams {
            lambda,
            window: false,
            shared_denominator: true,
        };
        let filter = train_filter(&x, &label, &params).map_err(|e| e.to_string())?;
        let oracle = DenseRidge::solve(&x, &label.values, lambda);
        for probe in [&x, &z] {
            let got = detect(&filter, probe).map_err(|e| e.to_string())?;
            worst = worst.max(rel_err(&got.values, &oracle.respond(probe)));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    check(
        worst <= 1e-6 && secs < 5.0,
        format!("20 problems, max relative error {worst:.2e}, {secs:.2} s"),
    )
}

fn self_consistency() -> Outcome {
    let mut r = rng(1002);
    let mut worst = 0.0f64;
    for i in 0..10 {
        let (h, w, c) = (r.random_range(4..=16), r.random_range(4..=16), 2 + i % 5);
        let x = random_grid(&mut r, h, w, c);
        let label = make_label(h, w, r.random_range(0.5..2.5));
        let params = CfParams {
            lambda: 0.0,
            ..CfParams::default()
        };
        let filter = train_filter(&x, &label, &params).map_err(|e| e.to_string())?;
        let got = detect(&filter, &x).map_err(|e| e.to_string())?;
        for (a, b) in got.values.iter().zip(&label.values) {
            worst = worst.max((a - b).abs());
        }
    }
    check(
        worst <= 1e-6,
        format!("10 stacks, max absolute error {worst:.2e}"),
    )
}

fn shift_equivariance() -> Outcome {
    let mut r = rng(1003);
    let mut failures = 0;
    for _ in 0..25 {
        let (h, w, c) = (
            r.random_range(8..=24),
            r.random_range(8..=24),
            r.random_range(1..=4),
        );
        let x = random_grid(&mut r, h, w, c);
        let label = make_label(h, w, 1.0);
        let params = CfParams {
            lambda: 1e-3,
            window: false,
            shared_denominator: true,
        };
        let filter = train_filter(&x, &label, &params).map_err(|e| e.to_string())?;
        let (dy, dx) = (r.random_range(0..h), r.random_range(0..w));
        let (py, px) = label.peak();
        let got = detect(&filter, &circular_shift(&x, dy, dx)).map_err(|e| e.to_string())?;
        if got.argmax() != ((py + dy) % h, (px + dx) % w) {
            failures += 1;
        }
    }
    check(failures == 0, format!("25 shifts, {failures} failures"))
}

fn conv_oracle() -> Outcome {
    let mut r = rng(1004);
    let mut worst = 0.0f64;
    for seed in 0..4 {
        let net = NetworkSpec::random_vgg_prefix(seed, 16);
        let names: Vec<String> = net.layers().iter().map(|l| l.conv.name.clone()).collect();
        let taps: Vec<&str> = names.iter().map(String::as_str).collect();
        let (h, w) = (r.random_range(1..=8), r.random_range(1..=8));
        let x = random_grid(&mut r, h, w, 3).map(|v| 128.0 * v);
        let got = forward(&x, &net, &taps).map_err(|e| e.to_string())?;
        for (stack, (_, want, _)) in got.iter().zip(forward_ref(&x, &net)) {
            worst = worst.max(rel_err(stack.grid.as_slice(), want.as_slice()));
        }
    }
    let net = NetworkSpec::random_vgg_prefix(7, 16);
    let mut shapes_ok = true;
    for side in [4usize, 8, 16, 32] {
        let x = random_grid(&mut r, side, side, 3);
        let got =
            forward(&x, &net, &["conv1_1", "conv2_2", "conv3_3"]).map_err(|e| e.to_string())?;
        for (stack, factor) in got.iter().zip([1usize, 2, 4]) {
            shapes_ok &= stack.factor == factor
                && stack.grid.height() == side / factor
                && stack.grid.width() == side / factor;
        }
    }
    check(
        worst <= 1e-8 && shapes_ok,
        format!(
            "max relative error {worst:.2e}, factors 1/2/4 {}",
            if shapes_ok { "hold" } else { "violated" }
        ),
    )
}

struct Scene {
    stream: EventStream,
    gt: Vec<GroundTruthEntry>,
    policy: SegmentationPolicy,
}

fn scene(preset: Preset, seed: u64) -> Scene {
    let (stream, template) = generate_scene(&preset.scene(seed)).expect("preset is valid");
    let policy = preset.default_policy();
    let gt = template.entries(&segment(&stream, policy).expect("stream is not empty"));
    Scene { stream, gt, policy }
}

fn synthetic_end_to_end() -> Outcome {
    let started = Instant::now();
    let net = NetworkSpec::random_vgg_prefix(11, 16);
    let params = TrackParams::with_taps(&["conv1_1", "conv2_2", "conv3_3"]);
    let errors = |s: &Scene| -> Result<CleReport, String> {
        let traj =
            track(&s.stream, s.policy, &s.gt[0], &params, Some(&net)).map_err(|e| e.to_string())?;
        center_location_error(&trajectory_boxes(&traj), &s.gt).map_err(|e| e.to_string())
    };

    let spec = Preset::MovingDisk.scene(1);
    let mut objects_only = spec.clone();
    objects_only.noise_rate = 0.0;
    let mut noise_only = spec.clone();
    noise_only.object_rate = 0.0;
    let object_events = generate_scene(&objects_only)
        .map_err(|e| e.to_string())?
        .0
        .len();
    let noise_events = generate_scene(&noise_only)
        .map_err(|e| e.to_string())?
        .0
        .len();
    let noise_share = noise_events as f64 / object_events as f64;
    let disk = scene(Preset::MovingDisk, 1);
    let disk_report = errors(&disk)?;
    let disk_ok = noise_share >= 0.2 && disk.gt.len() == 100 && disk_report.mean <= 3.0;

    let occ = scene(Preset::Occlusion, 1);
    let hidden: Vec<usize> = occ
        .gt
        .iter()
        .filter(|g| g.occluded)
        .map(|g| g.segment)
        .collect();
    let occ_report = errors(&occ)?;
    let last = *hidden
        .last()
        .ok_or("occlusion preset has no occluded segment")?;
    let recovered = occ_report.errors[last + 1..(last + 11).min(occ_report.errors.len())]
        .iter()
        .position(|&e| e <= 5.0);
    let occ_ok = hidden.len() <= 5 && recovered.is_some();

    let decoy = scene(Preset::Decoy, 1);
    let decoy_final = *errors(&decoy)?.errors.last().unwrap();
    let baseline = centroid_tracker(
        &decoy.stream,
        decoy.policy,
        &decoy.gt[0].bbox,
        params.padding,
    )
    .map_err(|e| e.to_string())?;
    let baseline_report = center_location_error(&trajectory_boxes(&baseline), &decoy.gt)
        .map_err(|e| e.to_string())?;
    let baseline_final = *baseline_report.errors.last().unwrap();
    let decoy_ok = decoy_final <= 5.0 && baseline_final > 10.0;

    let secs = started.elapsed().as_secs_f64();
    check(
        disk_ok && occ_ok && decoy_ok && secs < 60.0,
        format!(
            "moving-disk mean CLE {:.2} px (noise/object {:.2}); occlusion of {} segments, CLE <= 5 px {} after; decoy final CLE {:.2} px vs centroid {:.2} px; {:.1} s",
            disk_report.mean,
            noise_share,
            hidden.len(),
            recovered.map_or("never".to_string(), |k| format!("{} segment(s)", k + 1)),
            decoy_final,
            baseline_final,
            secs
        ),
    )
}

fn speed_ordering() -> Outcome {
    let spec = Preset::MovingDisk.scene(3);
    let (stream, template) = generate_scene(&spec).map_err(|e| e.to_string())?;
    let policy = SegmentationPolicy::IntoK(200);
    let gt = template.entries(&segment(&stream, policy).map_err(|e| e.to_string())?);
    let net = NetworkSpec::random_vgg_prefix(5, 4);
    let configs: Vec<BenchConfig> = [&["conv1_1"][..], &["conv1_1", "conv2_2", "conv3_3"]]
        .iter()
        .map(|taps| BenchConfig {
            label: taps.join(","),
            params: TrackParams::with_taps(taps),
        })
        .collect();
    let results =
        bench(&stream, policy, &gt[0], &configs, Some(&net), 3).map_err(|e| e.to_string())?;
    let (shallow, deep) = (&results[0], &results[1]);
    check(
        shallow.segments == 200 && shallow.segments_per_second > deep.segments_per_second,
        format!(
            "{} segments: conv1_1 {:.1} seg/s, conv1_1+conv2_2+conv3_3 {:.1} seg/s",
            shallow.segments, shallow.segments_per_second, deep.segments_per_second
        ),
    )
}

fn metric_exactness() -> Outcome {
    let s = scene(Preset::Scale, 2);
    let offset: Vec<GroundTruthEntry> =
        s.gt.iter()
            .map(|g| GroundTruthEntry {
                bbox: BBox::new(g.bbox.x + 3, g.bbox.y + 4, g.bbox.w, g.bbox.h),
                ..*g
            })
            .collect();
    let shifted = center_location_error(&offset, &s.gt).map_err(|e| e.to_string())?;
    let exact = shifted.errors.iter().all(|&e| e == 5.0) && shifted.mean == 5.0;
    let same = center_location_error(&s.gt, &s.gt).map_err(|e| e.to_string())?;
    let zero = same.mean == 0.0 && same.precision.iter().all(|&p| p == 1.0);
    let traj = track(
        &s.stream,
        s.policy,
        &s.gt[0],
        &TrackParams::with_taps(&["raw"]),
        None,
    )
    .map_err(|e| e.to_string())?;
    let real = center_location_error(&trajectory_boxes(&traj), &s.gt).map_err(|e| e.to_string())?;
    let monotone = real.precision.windows(2).all(|w| w[0] <= w[1]);
    let mean = real.errors.iter().sum::<f64>() / real.errors.len() as f64;
    let consistent = (mean - real.mean).abs() <= 1e-12;
    check(
        exact && zero && monotone && consistent,
        format!(
            "(3,4) offset CLE {}, self CLE {}, precision curve {}, mean consistent {}",
            shifted.mean,
            same.mean,
            if monotone { "monotone" } else { "not monotone" },
            consistent
        ),
    )
}

fn format_round_trips() -> Outcome {
    let s = scene(Preset::Occlusion, 4);
    let mut failed = Vec::new();

    let mut a = Vec::new();
    write_events(&s.stream, &mut a).map_err(|e| e.to_string())?;
    let mut b = Vec::new();
    write_events(
        &read_events(a.as_slice()).map_err(|e| e.to_string())?,
        &mut b,
    )
    .map_err(|e| e.to_string())?;
    if a != b {
        failed.push("events");
    }

    let mut a = Vec::new();
    write_ground_truth(&s.gt, &mut a).map_err(|e| e.to_string())?;
    let mut b = Vec::new();
    let back =
        read_ground_truth(a.as_slice(), Some(s.stream.geometry())).map_err(|e| e.to_string())?;
    write_ground_truth(&back, &mut b).map_err(|e| e.to_string())?;
    if a != b {
        failed.push("ground truth");
    }

    let traj = track(
        &s.stream,
        s.policy,
        &s.gt[0],
        &TrackParams::with_taps(&["raw"]),
        None,
    )
    .map_err(|e| e.to_string())?;
    let mut a = Vec::new();
    write_trajectory(&traj, &mut a).map_err(|e| e.to_string())?;
    let mut b = Vec::new();
    write_trajectory(
        &read_trajectory(a.as_slice()).map_err(|e| e.to_string())?,
        &mut b,
    )
    .map_err(|e| e.to_string())?;
    if a != b {
        failed.push("trajectory");
    }

    let base = NetworkSpec::random_vgg_prefix(8, 8);
    let net = NetworkSpec::new(base.layers().to_vec(), Some([123.68, 116.779, 103.939]))
        .map_err(|e| e.to_string())?;
    let mut a = Vec::new();
    write_network(&net, &mut a).map_err(|e| e.to_string())?;
    let mut b = Vec::new();
    write_network(
        &load_network(a.as_slice()).map_err(|e| e.to_string())?,
        &mut b,
    )
    .map_err(|e| e.to_string())?;
    if a != b {
        failed.push("weights");
    }

    check(
        failed.is_empty(),
        if failed.is_empty() {
            "events, ground truth, trajectory and weight files byte-identical".to_string()
        } else {
            format!("mismatch in {}", failed.join(", "))
        },
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("cf-oracle-equivalence", cf_oracle),
        ("cf-self-consistency", self_consistency),
        ("cf-shift-equivariance", shift_equivariance),
        ("conv-engine-oracle", conv_oracle),
        ("synthetic-end-to-end", synthetic_end_to_end),
        ("speed-ordering", speed_ordering),
        ("metric-exactness", metric_exactness),
        ("format-round-trips", format_round_trips),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    for (name, run) in criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
