use viz_core::adapter_math::{fit_adapter, mse_gradient, mse_loss, FitConfig, LoraAdapter, Matrix, Sample};
use viz_core::fixtures::random_adapter;
use viz_core::model_store::{generate_base_model, BaseModel, ModelRng};

const H: f64 = 1e-5;

fn samples(model: &BaseModel, n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ModelRng::new(seed);
    (0..n)
        .map(|_| {
            let x = (0..model.input_dim()).map(|_| rng.normal()).collect();
            let y = (0..model.output_dim()).map(|_| rng.normal() * 0.5).collect();
            Sample::new(x, y)
        })
        .collect()
}

fn numeric(model: &BaseModel, adapter: &LoraAdapter, data: &[Sample], pick: fn(&mut LoraAdapter) -> &mut Matrix) -> Vec<f64> {
    let n = pick(&mut adapter.clone()).len();
    (0..n)
        .map(|i| {
            let mut plus = adapter.clone();
            pick(&mut plus).as_mut_slice()[i] += H;
            let mut minus = adapter.clone();
            pick(&mut minus).as_mut_slice()[i] -= H;
            (mse_loss(model, &plus, data).unwrap() - mse_loss(model, &minus, data).unwrap()) / (2.0 * H)
        })
        .collect()
}

fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = inf(analytic).max(inf(numeric));
    if scale == 0.0 { 0.0 } else { inf(&diff) / scale }
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = ModelRng::new(77);
    for case in 0..10u64 {
        let depth = 2 + (rng.next_u64() % 2) as usize;
        let dims: Vec<usize> = (0..=depth).map(|_| 2 + (rng.next_u64() % 6) as usize).collect();
        let model = generate_base_model(case, &dims).unwrap();
        let layer = (rng.next_u64() as usize) % depth;
        let shape = model.layers[layer].shape();
        let rank = 1 + (rng.next_u64() as usize) % shape.0.min(shape.1);
        let adapter = random_adapter("g", shape, layer, rank, 1.5, case).unwrap();
        let data = samples(&model, 3, case + 100);
        let (_, grad) = mse_gradient(&model, &adapter, &data).unwrap();
        let ea = rel_error(grad.a.as_slice(), &numeric(&model, &adapter, &data, |a| &mut a.a));
        let eb = rel_error(grad.b.as_slice(), &numeric(&model, &adapter, &data, |a| &mut a.b));
        assert!(ea <= 1e-4 && eb <= 1e-4, "case {case}: dims {dims:?} layer {layer}: {ea} {eb}");
    }
}

#[test]
fn single_pair_fit_converges() {
    let model = generate_base_model(1, &[8, 16, 4]).unwrap();
    let data = samples(&model, 1, 1001);
    let cfg = FitConfig { learning_rate: 0.05, epochs: 500, seed: 7 };
    let fit = fit_adapter(&model, 1, &data, 1, 1.0, &cfg).unwrap();
    assert_eq!(fit.loss_trace.len(), 500);
    assert!(fit.final_loss < 1e-3, "final MSE {}", fit.final_loss);
}

#[test]
fn small_learning_rate_never_increases_loss() {
    let model = generate_base_model(4, &[6, 12, 5]).unwrap();
    let data = samples(&model, 4, 9);
    for layer in [0, 1] {
        let cfg = FitConfig { learning_rate: 1e-3, epochs: 300, seed: 3 };
        let fit = fit_adapter(&model, layer, &data, 2, 2.0, &cfg).unwrap();
        let mut trace = fit.loss_trace.clone();
        trace.push(fit.final_loss);
        assert!(trace.windows(2).all(|w| w[1] <= w[0]), "layer {layer}");
    }
}

#[test]
fn tiny_step_stays_at_initialization() {
    let model = generate_base_model(2, &[3, 3]).unwrap();
    let data = samples(&model, 2, 5);
    let cfg = FitConfig { learning_rate: 1e-300, epochs: 1, seed: 8 };
    let fit = fit_adapter(&model, 0, &data, 1, 1.0, &cfg).unwrap();
    assert_eq!(fit.loss_trace.len(), 1);
    assert!(fit.adapter.b.max_abs() < 1e-200);
}
