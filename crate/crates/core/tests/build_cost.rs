use std::time::Instant;

use shardgraph::graph::{build_subgraph, estimate_build_cost, BuildParams};
use shardgraph::synth::generate_clustered;

fn r_squared(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

#[test]
fn r_squared_of_exact_line_is_one() {
    let r2 = r_squared(&[1.0, 2.0, 4.0, 8.0], &[3.0, 5.0, 9.0, 17.0]);
    assert!((r2 - 1.0).abs() < 1e-12);
}

#[test]
fn cost_model_is_the_size() {
    assert_eq!(estimate_build_cost(100), 100);
    assert_eq!(estimate_build_cost(0), 0);
}

#[test]
fn build_time_grows_linearly_with_size() {
    let ds = generate_clustered(8000, 16, 16, 0.1, 21).unwrap();
    let params = BuildParams {
        r: 32,
        l_build: 64,
        alpha: 1.2,
        seed: 1,
    };
    let sizes = [1000usize, 2000, 4000, 8000];
    let mut secs = Vec::new();
    for &n in &sizes {
        let ids: Vec<u32> = (0..n as u32).collect();
        // best of three damps scheduler noise
        let best = (0..3)
            .map(|_| {
                let t = Instant::now();
                build_subgraph(&ids, &ds, &params).unwrap();
                t.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min);
        secs.push(best);
    }
    let xs: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let r2 = r_squared(&xs, &secs);
    println!("build seconds {secs:?}, R^2 = {r2:.4}");
    assert!(r2 >= 0.9, "R^2 = {r2}");
}
