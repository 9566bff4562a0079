//! Shared fixtures for the benchmarks.

use pem_core::chan::{synthesize, Measurement, Noise, Ray};
use pem_core::{ArrayConfig, GridConfig, Scene, Vec3};

/// Street-canyon scene used by every benchmark.
pub fn street() -> Scene {
    Scene::from_json_str(
        r#"{
            "name": "bench",
            "bs": [-40.0, 0.0, 12.0],
            "carrier_hz": 6.0e9,
            "reflection_loss_db": 6.0,
            "max_bounces": 1,
            "buildings": [
                { "min": [42.0, -40.0, 0.0], "max": [60.0, 5.0, 24.0] },
                { "min": [48.0, 12.0, 0.0], "max": [66.0, 90.0, 18.0] }
            ]
        }"#,
    )
    .expect("bench scene")
}

/// Ground-truth rays for a UE at `(30, y, 1.5)` moving along +y at 15 m/s.
pub fn rays_at(scene: &Scene, y: f64) -> Vec<Ray> {
    let paths = scene.solve_paths(Vec3::new(30.0, y, 1.5), Vec3::new(0.0, 15.0, 0.0)).expect("paths");
    paths.iter().map(Ray::from).collect()
}

/// One 10 dB SNR measurement at the default array and grid.
pub fn measurement(scene: &Scene, y: f64, t: f64, seed: u64) -> Measurement {
    let rays = rays_at(scene, y);
    synthesize(&rays, &ArrayConfig::default(), &GridConfig::default(), t, Noise::SnrDb(10.0), seed).expect("measurement")
}
