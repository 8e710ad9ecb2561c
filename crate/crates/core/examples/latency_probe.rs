use priorlift::dataset::{generate_procedural_clip, synthesize_sample, MaskState};
use priorlift::geometry::CameraRanges;
use priorlift::model::{forward_single, LifterInput, LifterWeights, ModelConfig};
use priorlift::rng::Rng;
use std::time::Instant;

fn main() {
    let cfg = ModelConfig::default();
    let w = LifterWeights::init(&cfg, 0).unwrap();
    let mut rng = Rng::seed_from_u64(1);
    let clip = generate_procedural_clip(&mut rng, 2.0, 30.0).unwrap();
    let sample = synthesize_sample(&mut rng, &clip, MaskState::FULL_PRIORS, &CameraRanges::default()).unwrap();
    let input = LifterInput::from_sample(&sample);
    for _ in 0..100 { forward_single(&w, &cfg, &input).unwrap(); }
    let mut times = Vec::new();
    for _ in 0..1000 {
        let t = Instant::now();
        forward_single(&w, &cfg, &input).unwrap();
        times.push(t.elapsed().as_secs_f64() * 1e6);
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!("median {:.0} us, p90 {:.0} us, p99 {:.0} us", times[500], times[900], times[990]);
}
