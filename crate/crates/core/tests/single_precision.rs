use agepop::evolution::build_propagators;
use agepop::presets;
use agepop::renewal::solve_birth;
use agepop::spectral::{classify_stability, find_lambda0, Stability};

#[test]
fn malthusian_parameter_in_f32() {
    let s = presets::scalar(2.0f32, 0.0, 1.0, 200).unwrap();
    let c = build_propagators(&s).unwrap();
    let d = find_lambda0(&s, &c, 1e-5).unwrap();
    assert!((d.lambda0 - 1.5936).abs() < 2e-3, "{}", d.lambda0);
}

#[test]
fn equilibrium_births_in_f32() {
    let s = presets::scalar(1.0f32, 0.0, 1.0, 100).unwrap();
    let c = build_propagators(&s).unwrap();
    let phi = s.density_from_fn(|_, _| 1.0);
    let b = solve_birth(&s, &c, &phi, None, 2.0).unwrap();
    assert!(b.values.iter().all(|v| (v[0] - 1.0).abs() < 1e-4));
}

#[test]
fn diffusion_classification_in_f32() {
    let s = presets::uniform_diffusion(0.1f32, 0.0, 0.5, 8, 1.0, 50).unwrap();
    let c = build_propagators(&s).unwrap();
    let v = classify_stability(&s, &c, 1e-4).unwrap();
    assert_eq!(v.tag, Stability::StableExponential);
}
