use evtrack_core::eval::{center_location_error, centroid_tracker, trajectory_boxes};
use evtrack_core::*;

struct Run {
    stream: EventStream,
    gt: Vec<GroundTruthEntry>,
    policy: SegmentationPolicy,
}

fn run(preset: Preset, seed: u64) -> Run {
    let (stream, template) = generate_scene(&preset.scene(seed)).unwrap();
    let policy = preset.default_policy();
    let gt = template.entries(&segment(&stream, policy).unwrap());
    Run { stream, gt, policy }
}

fn cle(r: &Run, params: &TrackParams, net: Option<&NetworkSpec>) -> CleReport {
    let traj = track(&r.stream, r.policy, &r.gt[0], params, net).unwrap();
    center_location_error(&trajectory_boxes(&traj), &r.gt).unwrap()
}

#[test]
fn easy_presets_track_closely_across_seeds() {
    let net = NetworkSpec::random_vgg_prefix(11, 16);
    for preset in [Preset::MovingDisk, Preset::Noise, Preset::Background] {
        for seed in [21, 22] {
            let r = run(preset, seed);
            for taps in [&["raw"][..], &["conv1_1", "conv2_2", "conv3_3"]] {
                let report = cle(&r, &TrackParams::with_taps(taps), Some(&net));
                assert!(
                    report.mean <= 2.0,
                    "{} seed {seed} {taps:?}: {}",
                    preset.name(),
                    report.mean
                );
            }
        }
    }
}

#[test]
fn gabor_features_track_the_disk() {
    let net = NetworkSpec::gabor_bank();
    let r = run(Preset::MovingDisk, 5);
    let report = cle(&r, &TrackParams::with_taps(&["gabor"]), Some(&net));
    assert!(report.mean <= 3.0, "{}", report.mean);
}

#[test]
fn per_channel_denominators_also_track() {
    let net = NetworkSpec::random_vgg_prefix(2, 16);
    let r = run(Preset::Noise, 3);
    let mut params = TrackParams::default();
    params.cf.shared_denominator = false;
    assert!(cle(&r, &params, Some(&net)).mean <= 3.0);
}

#[test]
fn centroid_baseline_is_fooled_by_textured_background() {
    let r = run(Preset::Background, 1);
    let traj = centroid_tracker(&r.stream, r.policy, &r.gt[0].bbox, 2.0).unwrap();
    let report = center_location_error(&trajectory_boxes(&traj), &r.gt).unwrap();
    assert!(report.mean > 10.0);
}

#[test]
fn evidence_gate_holds_through_the_occlusion() {
    let r = run(Preset::Occlusion, 9);
    let first_hidden = r.gt.iter().position(|g| g.occluded).unwrap();
    let traj = track(
        &r.stream,
        r.policy,
        &r.gt[0],
        &TrackParams::with_taps(&["raw"]),
        None,
    )
    .unwrap();
    let hidden: Vec<_> = traj.iter().filter(|p| r.gt[p.segment].occluded).collect();
    assert_eq!(hidden.len(), 5);
    assert!(hidden
        .iter()
        .all(|p| p.center == traj[first_hidden - 1].center));
}

#[test]
fn tracking_is_deterministic() {
    let net = NetworkSpec::random_vgg_prefix(4, 16);
    let r = run(Preset::Decoy, 4);
    let params = TrackParams::default();
    let a = track(&r.stream, r.policy, &r.gt[0], &params, Some(&net)).unwrap();
    let b = track(&r.stream, r.policy, &r.gt[0], &params, Some(&net)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn moving_disk_noise_share() {
    let spec = Preset::MovingDisk.scene(1);
    let mut quiet = spec.clone();
    quiet.noise_rate = 0.0;
    let mut noise_only = spec.clone();
    noise_only.object_rate = 0.0;
    let object = generate_scene(&quiet).unwrap().0.len() as f64;
    let noise = generate_scene(&noise_only).unwrap().0.len() as f64;
    assert!(noise >= 0.2 * object, "noise {noise} vs object {object}");
    let (full, _) = generate_scene(&spec).unwrap();
    assert_eq!(
        segment(&full, Preset::MovingDisk.default_policy())
            .unwrap()
            .len(),
        100
    );
}
