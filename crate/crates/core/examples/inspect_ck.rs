use dawm::diffusion::TrainedDiffusion;
use dawm::nn::load_checkpoint;

fn main() {
    let path = std::env::args().nth(1).unwrap();
    let ck = load_checkpoint(std::path::Path::new(&path)).unwrap();
    println!("kind {} step {} tensors {}", ck.kind, ck.step, ck.tensor_names.len());
    for (name, vals) in ck.tensor_names.iter().zip(&ck.values).take(6) {
        let norm: f64 = vals.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("  {name}: len {} norm {:.4}", vals.len(), norm);
    }
    let total_v: f64 = ck.values.iter().flatten().map(|v| v.abs()).sum();
    let total_e: f64 = ck.ema.as_ref().unwrap().iter().flatten().map(|v| v.abs()).sum();
    println!("sum|values| {total_v:.2}, sum|ema| {total_e:.2}");
    let dwm = TrainedDiffusion::load(std::path::Path::new(&path)).unwrap();
    println!("meta: k_steps {} schedule {:?} g_max {:.4}", dwm.meta.k_steps, dwm.meta.schedule, dwm.meta.g_max);
}
