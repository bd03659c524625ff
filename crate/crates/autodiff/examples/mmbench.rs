use std::time::Instant;

fn main() {
    let (m, k, n) = (256usize, 512usize, 512usize);
    let a: Vec<f32> = (0..m * k).map(|i| (i % 97) as f32 * 0.01).collect();
    let b: Vec<f32> = (0..k * n).map(|i| (i % 89) as f32 * 0.01).collect();
    let mut g: autodiff::Graph<f32> = autodiff::Graph::new();
    let ai = g.constant(autodiff::Tensor::new(vec![m, k], a).unwrap());
    let bi = g.constant(autodiff::Tensor::new(vec![k, n], b).unwrap());
    for _ in 0..3 {
        let t = Instant::now();
        let y = g.matmul(ai, bi).unwrap();
        let dt = t.elapsed();
        let macs = (m * k * n) as f64;
        println!(
            "matmul {}x{}x{}: {:?} = {:.2} GMAC/s (sink {})",
            m, k, n, dt, macs / dt.as_secs_f64() / 1e9,
            g.data(y)[0]
        );
    }
}
