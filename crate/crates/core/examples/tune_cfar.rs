//! Grid-search CFAR parameters on synthetic ellipsoid scenes.
//!
//! cargo run --release --example tune_cfar -- [scenes]

use mmwave::evaluation::{cfar_search, CfarGrid, DEFAULT_D_CLOSE, DEFAULT_VOXEL};
use mmwave::pipeline::{Estimator, PipelineOptions, SearchMode};
use mmwave::radar::{AntennaLayout, ChirpConfig};
use mmwave::scene::{synth_scene, SceneGenerator};
use mmwave::simulator::{simulate_frame, NoiseSpec};

fn main() -> mmwave::Result<()> {
    let n: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let cfg = ChirpConfig::baseline();
    let layout = AntennaLayout::preset("square4")?;
    let train = (0..n)
        .map(|i| {
            let seed = 1000 + i;
            let scene = synth_scene(&SceneGenerator::human_blob(seed))?;
            let cube = simulate_frame(&scene, &cfg, &layout, &NoiseSpec::snr(30.0), seed)?;
            Ok((cube, scene.ground_truth(&cfg)))
        })
        .collect::<mmwave::Result<Vec<_>>>()?;
    let grid = CfarGrid {
        train_range: vec![16, 32, 64, 128],
        train_doppler: vec![1, 2],
        guard_range: vec![2, 4, 6],
        guard_doppler: vec![1],
        scale: vec![2.0, 3.0, 5.0],
    };
    let opts = PipelineOptions::new(1, Estimator::Music, SearchMode::TwoD);
    let res = cfar_search(&train, &opts, &grid.candidates(), DEFAULT_D_CLOSE, DEFAULT_VOXEL)?;
    let mut scores = res.scores.clone();
    scores.sort_by(|a, b| b.mean_fmi.total_cmp(&a.mean_fmi));
    for s in scores.iter().take(10) {
        println!("{:?} fmi {:.4} points {:.1}", s.params, s.mean_fmi, s.mean_points);
    }
    println!("best {:?}", res.best);
    Ok(())
}
