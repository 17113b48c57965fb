use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mmwave::cloud::PointCloud;
use mmwave::radar::AntennaLayout;
use mmwave::simulator::RawDataCube;

fn mmwave(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmwave")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "exit {:?}\nstderr: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_ply(path: &Path, pts: &[[f64; 3]]) {
    PointCloud::from_positions(pts.iter().copied()).save_ply(path).unwrap();
}

#[test]
fn simulate_baseline_dims_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    ok(&mmwave(&["simulate", "--out", "a"], dir.path()));
    let a = dir.path().join("a");
    let cube = RawDataCube::load(a.join("cube.mmw"), AntennaLayout::preset("square4").unwrap()).unwrap();
    assert_eq!((cube.n_rx, cube.n_chirps, cube.n_samples), (16, 50, 1500));
    assert_eq!(PointCloud::load_ply(a.join("ground_truth.ply")).unwrap().len(), 512);
    assert!(a.join("effective_config.json").is_file());
}

#[test]
fn same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    ok(&mmwave(&["simulate", "--seed", "7", "--out", "a"], dir.path()));
    ok(&mmwave(&["simulate", "--seed", "7", "--out", "b"], dir.path()));
    ok(&mmwave(&["simulate", "--seed", "8", "--out", "c"], dir.path()));
    let read = |d: &str, f: &str| fs::read(dir.path().join(d).join(f)).unwrap();
    assert_eq!(read("a", "cube.mmw"), read("b", "cube.mmw"));
    assert_eq!(read("a", "ground_truth.ply"), read("b", "ground_truth.ply"));
    assert_ne!(read("a", "cube.mmw"), read("c", "cube.mmw"));
}

#[test]
fn effective_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    ok(&mmwave(&["simulate", "--seed", "3", "--snr", "12.5", "--out", "a"], dir.path()));
    let first = fs::read_to_string(dir.path().join("a/effective_config.json")).unwrap();
    assert!(first.contains("\"snr_db\": 12.5"));
    assert!(first.contains("\"seed\": 3"));
    ok(&mmwave(&["simulate", "--config", "a/effective_config.json", "--out", "b"], dir.path()));
    let second = fs::read_to_string(dir.path().join("b/effective_config.json")).unwrap();
    assert_eq!(first, second);
    assert_eq!(fs::read(dir.path().join("a/cube.mmw")).unwrap(), fs::read(dir.path().join("b/cube.mmw")).unwrap());
}

#[test]
fn missing_mesh_path_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), "{\"version\": 1,\n \"scene\": {\"source\": {\"mesh\": {\"points\": 64}}}}").unwrap();
    let o = mmwave(&["simulate", "--config", "c.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("path"), "{err}");
    assert!(err.contains("c.json:2:"), "{err}");

    fs::write(dir.path().join("d.json"), r#"{"version": 1, "scene": {"source": {"mesh": {"path": "nope.obj"}}}}"#).unwrap();
    let o = mmwave(&["simulate", "--config", "d.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("scene.source.mesh.path"));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), r#"{"version": 1, "noise": {"snr": 3}}"#).unwrap();
    let o = mmwave(&["simulate", "--config", "c.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("snr"));
}

#[test]
fn truncated_cube_is_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    ok(&mmwave(&["simulate", "--out", "a"], dir.path()));
    let bytes = fs::read(dir.path().join("a/cube.mmw")).unwrap();
    fs::write(dir.path().join("t.mmw"), &bytes[..bytes.len() / 2]).unwrap();
    let o = mmwave(&["reconstruct", "t.mmw", "--out", "r"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("corrupt cube"));
}

#[test]
fn reconstruct_dispatch_srpc_and_heatmaps() {
    let dir = tempfile::tempdir().unwrap();
    ok(&mmwave(&["simulate", "--seed", "5", "--out", "a"], dir.path()));
    let out = ok(&mmwave(
        &["reconstruct", "a/cube.mmw", "--seed", "5", "--dpc", "1", "--algo", "music", "--search", "2d", "--out", "plain", "--emit-heatmaps"],
        dir.path(),
    ));
    assert!(out.starts_with("DPC1-MUSIC-2D:"), "{out}");
    ok(&mmwave(
        &["reconstruct", "a/cube.mmw", "--seed", "5", "--dpc", "1", "--algo", "music", "--search", "2d", "--srpc", "--alpha", "2.0", "--out", "srpc"],
        dir.path(),
    ));
    let plain = PointCloud::load_ply(dir.path().join("plain/cloud.ply")).unwrap();
    let srpc = PointCloud::load_ply(dir.path().join("srpc/cloud.ply")).unwrap();
    assert!(!plain.is_empty());
    assert_eq!(plain.len(), srpc.len());
    assert_ne!(plain, srpc);

    for (name, dims) in [("range_doppler.pgm", "2048 64"), ("angle_spectrum.pgm", "512 512")] {
        let bytes = fs::read(dir.path().join("plain").join(name)).unwrap();
        assert!(bytes.starts_with(format!("P5\n{dims}\n65535\n").as_bytes()), "{name}");
    }

    let o = mmwave(&["reconstruct", "a/cube.mmw", "--dpc", "2", "--algo", "fft", "--out", "x"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn evaluate_identical_disjoint_and_worked_example() {
    let dir = tempfile::tempdir().unwrap();
    let p = |f: &str| dir.path().join(f);
    let grid: Vec<[f64; 3]> = (0..20).map(|i| [0.3 * i as f64, 2.0, 0.0]).collect();
    write_ply(&p("g.ply"), &grid);
    write_ply(&p("far.ply"), &grid.iter().map(|q| [q[0], q[1] + 5.0, q[2]]).collect::<Vec<_>>());
    write_ply(&p("k.ply"), &[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    write_ply(&p("m.ply"), &[[0.05, 0.0, 0.0], [5.0, 0.0, 0.0]]);

    let fmi = |a: &str, b: &str| -> f64 {
        let out = ok(&mmwave(&["evaluate", a, b, "--d", "0.1", "--voxel", "0.1"], dir.path()));
        serde_json::from_str::<serde_json::Value>(&out).unwrap()["fmi"].as_f64().unwrap()
    };
    assert_eq!(fmi("g.ply", "g.ply"), 1.0);
    assert_eq!(fmi("g.ply", "far.ply"), 0.0);
    assert!((fmi("k.ply", "m.ply") - 0.5).abs() < 1e-12);

    // One detection next to one of two truth points: precision 1, sensitivity 1/2.
    write_ply(&p("k2.ply"), &[[0.0, 0.0, 0.0]]);
    write_ply(&p("m2.ply"), &[[0.0, 0.0, 0.05], [0.0, 0.0, 5.0]]);
    assert!((fmi("k2.ply", "m2.ply") - 0.7071).abs() < 1e-4);

    ok(&mmwave(&["evaluate", "g.ply", "g.ply", "--out", "ev"], dir.path()));
    assert!(p("ev/metrics.json").is_file());
    let o = mmwave(&["evaluate", "g.ply", "missing.ply"], dir.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn sweep_writes_velocity_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{
  "version": 1,
  "scene": {"source": {"generator": {"kind": "ellipsoid", "size": [0.5, 0.3, 1.7], "points": 128, "range": 2.0}}},
  "radar": {"layout": "square2", "chirp": {"f0": 77e9, "slope": 40e12, "chirp_duration": 100e-6, "adc_rate": 15e6,
            "samples_per_chirp": 256, "chirps_per_frame": 16, "chirp_interval": 1e-3, "frame_duration": 16e-3}},
  "pipeline": {"estimator": "fft", "search": "1d", "angle_bins": 64},
  "sweep": {"axes": {"velocity": [0.05, 0.5, 1.0]}}
}"#;
    fs::write(dir.path().join("s.json"), cfg).unwrap();
    let table = ok(&mmwave(&["sweep", "--config", "s.json", "--repeats", "3", "--jobs", "1", "--out", "rep"], dir.path()));
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4, "{table}");
    assert_eq!(lines[0], ",FFT-1D FMI,FFT-1D IoU");
    assert!(lines[1].starts_with("DPC1 v=0.05,"));
    assert!(lines[3].starts_with("DPC1 v=1,"));
    assert!(lines[1].contains(" ± "));
    for f in ["report.json", "report.csv", "table.csv"] {
        assert!(dir.path().join("rep").join(f).is_file(), "{f}");
    }
    assert_eq!(fs::read_to_string(dir.path().join("rep/table.csv")).unwrap(), table);

    let first = fs::read(dir.path().join("rep/report.json")).unwrap();
    ok(&mmwave(&["sweep", "--config", "s.json", "--repeats", "3", "--out", "rep"], dir.path()));
    assert_eq!(first, fs::read(dir.path().join("rep/report.json")).unwrap());
}

#[test]
fn sweep_cell_errors_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    // The second condition has zero samples per chirp and cannot be simulated.
    let cfg = r#"{
  "version": 1,
  "scene": {"source": {"generator": {"kind": "single_reflector", "position": [0.0, 2.0, 0.0]}}},
  "radar": {"chirp": {"f0": 77e9, "slope": 40e12, "chirp_duration": 100e-6, "adc_rate": 15e6,
            "samples_per_chirp": 256, "chirps_per_frame": 16, "chirp_interval": 1e-3, "frame_duration": 16e-3}},
  "pipeline": {"estimator": "fft", "search": "1d", "angle_bins": 64},
  "sweep": {"axes": {"samples_per_chirp": [256, 0]}}
}"#;
    fs::write(dir.path().join("s.json"), cfg).unwrap();
    let o = mmwave(&["sweep", "--config", "s.json", "--repeats", "1", "--out", "rep"], dir.path());
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("rep/report.json").is_file());
}

#[test]
fn synth_scene_writes_ply() {
    let dir = tempfile::tempdir().unwrap();
    ok(&mmwave(&["synth-scene", "--out", "s"], dir.path()));
    let pc = PointCloud::load_ply(dir.path().join("s/scene.ply")).unwrap();
    assert_eq!(pc.len(), 512);
    let c = pc.centroid().unwrap();
    assert!((c[1] - 2.0).abs() < 0.2, "{c:?}");
}
