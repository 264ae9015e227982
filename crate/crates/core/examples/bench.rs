use apnea_core::se_cnn::*;
fn main() {
    let c = ModelConfig::new(4);
    let m = SeCnn::new(c, 0).unwrap();
    let x: Vec<f32> = (0..16 * 4 * 900).map(|i| ((i * 7919 % 1000) as f32) / 500.0 - 1.0).collect();
    let labels = vec![1usize; 16];
    let t = std::time::Instant::now();
    for _ in 0..20 { let _ = forward(&c, &m.params, &x, 16, 900, BnMode::Batch, false).unwrap(); }
    println!("fwd {:?}", t.elapsed() / 20);
    let t = std::time::Instant::now();
    for _ in 0..20 { let _ = loss_and_grad(&c, &m.params, &x, 900, &labels).unwrap(); }
    println!("fwd+bwd {:?}", t.elapsed() / 20);
    let t = std::time::Instant::now();
    for _ in 0..20 { let _ = m.predict_tensor(&x, 16, 900, false).unwrap(); }
    println!("eval {:?}", t.elapsed() / 20);
}
