use evtrack_core::event::{
    read_events, read_ground_truth, write_events, write_ground_truth, EventError,
};
use evtrack_core::features::{ConvLayerSpec, NetworkLayer};
use evtrack_core::tracker::{read_trajectory, write_trajectory};
use evtrack_core::*;

fn bytes_of(f: impl FnOnce(&mut Vec<u8>)) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf);
    buf
}

#[test]
fn generated_event_file_round_trips() {
    let (stream, _) = generate_scene(&Preset::Noise.scene(4)).unwrap();
    let first = bytes_of(|b| write_events(&stream, b).unwrap());
    let back = read_events(first.as_slice()).unwrap();
    assert_eq!(back, stream);
    let second = bytes_of(|b| write_events(&back, b).unwrap());
    assert_eq!(first, second);
}

#[test]
fn hand_written_event_file() {
    let text = "# evtrack-events v1 width=4 height=3\n0,0,0,1\n5,3,2,-1\n5,1,1,1\n";
    let stream = read_events(text.as_bytes()).unwrap();
    assert_eq!(stream.geometry(), SensorGeometry::new(4, 3).unwrap());
    assert_eq!(stream.events()[1], Event::new(5, 3, 2, Polarity::Off));
    assert_eq!(
        bytes_of(|b| write_events(&stream, b).unwrap()),
        text.as_bytes()
    );
    let bad = "# evtrack-events v1 width=4 height=3\n0,0,0,1\n1,4,0,1\n";
    assert!(matches!(
        read_events(bad.as_bytes()),
        Err(EventError::OutOfBounds { line: 3, .. })
    ));
}

#[test]
fn ground_truth_round_trips_with_occlusion_marks() {
    let spec = Preset::Occlusion.scene(2);
    let (stream, template) = generate_scene(&spec).unwrap();
    let segments = segment(&stream, Preset::Occlusion.default_policy()).unwrap();
    let gt = template.entries(&segments);
    assert!(gt.iter().any(|g| g.occluded));
    let first = bytes_of(|b| write_ground_truth(&gt, b).unwrap());
    let back = read_ground_truth(first.as_slice(), Some(stream.geometry())).unwrap();
    assert_eq!(back, gt);
    assert_eq!(first, bytes_of(|b| write_ground_truth(&back, b).unwrap()));
}

#[test]
fn trajectory_round_trips() {
    let (stream, template) = generate_scene(&Preset::MovingDisk.scene(5)).unwrap();
    let policy = SegmentationPolicy::IntoK(30);
    let gt = template.entries(&segment(&stream, policy).unwrap());
    let traj = track(
        &stream,
        policy,
        &gt[0],
        &TrackParams::with_taps(&["raw"]),
        None,
    )
    .unwrap();
    let first = bytes_of(|b| write_trajectory(&traj, b).unwrap());
    let back = read_trajectory(first.as_slice()).unwrap();
    assert_eq!(back, traj);
    assert_eq!(first, bytes_of(|b| write_trajectory(&back, b).unwrap()));
}

#[test]
fn weight_file_round_trips() {
    let mut with_means = NetworkSpec::random_vgg_prefix(9, 8);
    with_means =
        NetworkSpec::new(with_means.layers().to_vec(), Some([123.68, 116.78, 103.94])).unwrap();
    for net in [
        NetworkSpec::random_vgg_prefix(9, 16),
        with_means,
        NetworkSpec::gabor_bank(),
    ] {
        let first = bytes_of(|b| write_network(&net, b).unwrap());
        let back = load_network(first.as_slice()).unwrap();
        assert_eq!(back, net);
        assert_eq!(first, bytes_of(|b| write_network(&back, b).unwrap()));
    }
}

#[test]
fn weight_file_layout_is_little_endian_and_ordered() {
    let layer = NetworkLayer {
        conv: ConvLayerSpec {
            name: "ab".into(),
            in_channels: 1,
            out_channels: 2,
            kernel: 1,
            weights: vec![1.5, -2.0],
            bias: vec![0.25, 0.0],
        },
        pool_after: true,
        tap: true,
    };
    let net = NetworkSpec::new(vec![layer], Some([1.0, 2.0, 3.0])).unwrap();
    let mut want = Vec::new();
    want.extend_from_slice(b"EVTW");
    want.extend_from_slice(&[1, 0, 0, 0]);
    want.extend_from_slice(&[1, 0, 0, 0]);
    want.extend_from_slice(&[2, 0, b'a', b'b']);
    want.extend_from_slice(&[3, 0]);
    want.extend_from_slice(&[1, 0, 0, 0, 2, 0, 0, 0]);
    want.extend_from_slice(&[1, 0, 1, 0]);
    for v in [1.5f32, -2.0, 0.25, 0.0] {
        want.extend_from_slice(&v.to_le_bytes());
    }
    want.push(1);
    for v in [1.0f32, 2.0, 3.0] {
        want.extend_from_slice(&v.to_le_bytes());
    }
    assert_eq!(bytes_of(|b| write_network(&net, b).unwrap()), want);
}

#[test]
fn damaged_weight_files_are_rejected() {
    let good = bytes_of(|b| write_network(&NetworkSpec::random_vgg_prefix(1, 32), b).unwrap());
    let mut magic = good.clone();
    magic[0] = b'X';
    assert!(matches!(
        load_network(magic.as_slice()),
        Err(NetworkError::BadMagic)
    ));
    let mut version = good.clone();
    version[4] = 2;
    assert!(matches!(
        load_network(version.as_slice()),
        Err(NetworkError::VersionMismatch(2))
    ));
    assert!(matches!(
        load_network(&good[..good.len() - 5]),
        Err(NetworkError::TruncatedFile)
    ));
    let mut long = good.clone();
    long.push(0);
    assert!(matches!(
        load_network(long.as_slice()),
        Err(NetworkError::TrailingBytes(1))
    ));
}
