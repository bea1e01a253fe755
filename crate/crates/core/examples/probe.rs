use stefanlab_core::barriers::{AnalyticField, TravelingWave};
use stefanlab_core::fields::Interval;
use stefanlab_core::geometry::SpaceTimePoint;
use stefanlab_core::stefan::*;
use std::sync::Arc;

fn main() {
    // convergence probe
    let a = 1.0;
    for &(tm, expl, c) in &[(0.05f64, false, 0.45f64), (0.05, false, 0.4), (0.05, true, 0.0)] {
    println!("theta_min = {tm} explicit = {expl} c = {c}");
    let mut errs = Vec::new();
    for &h in &[1.0f64/32.0, 1.0/64.0, 1.0/128.0] {
        let wave = TravelingWave::new(a, 4.0).unwrap();
        let ext = vec![Interval::new(-0.5, 0.5), Interval::new(-0.5, 0.25)];
        let w2 = TravelingWave::new(a, 4.0).unwrap();
        let state = StefanState::from_profile(&ext, h, 0.0, 1.0, Scaling::Original,
            |_| 0.0, |p| wave.value(p)).unwrap();
        let boundary = BoxBoundary::Analytic(Arc::new(move |p: &SpaceTimePoint<f64>| w2.value(p)));
        let mut cfg = if expl { StepConfig::explicit_with(boundary) } else { StepConfig::implicit_with(boundary) };
        cfg.theta_min = tm;
        let dt = if expl { 0.1 * h * h } else { c * h };
        let steps = (0.1 / dt).round() as usize;
        let run = simulate(state, dt, steps, &cfg).unwrap();
        let last = run.states.last().unwrap();
        let exact = -a * last.t;
        let err = last.front.iter().map(|&f| (f - exact).abs()).fold(0.0f64, f64::max);
        let mean = last.front.iter().sum::<f64>() / last.front.len() as f64 - exact;
        println!("h=1/{:.0} T={:.4} err={err:.3e} signed_mean={mean:.3e}", 1.0/h, last.t);
        errs.push(err);
    }
    let lo1 = (errs[0]/errs[1]).log2();
    let lo2 = (errs[1]/errs[2]).log2();
    println!("  orders {lo1:.2} {lo2:.2}  ls_slope {:.2}", (lo1+lo2)/2.0);
    }
    // flatness extension CFL probe
    let lam = 0.25f64;
    let aa = 1.0;
    let pp = aa * lam;
    let h = 1.0 / 48.0;
    let eta = 0.4f64;
    let profile = move |q: &SpaceTimePoint<f64>| ((pp * q.normal() + pp * pp * q.t).exp() - 1.0) / lam;
    let ext = vec![Interval::new(-0.5, 0.5), Interval::new(-0.4, 0.6)];
    let t0 = -eta / lam * 0.25;
    let state = StefanState::from_profile(&ext, h, t0, lam, Scaling::SpeedScaled,
        |_| -pp * t0, profile).unwrap();
    println!("front[0] = {}, t0 = {t0}", state.front[0]);
    // check stored u near front on the center column
    let spec = state.grid().clone();
    let j = spec.index_of(0, 0.0).unwrap();
    for i in 20..30 {
        let x = spec.coord(1, i);
        let v = state.temperature.get(&[j, i], 0).unwrap();
        let m = state.temperature.is_masked(&[j, i], 0).unwrap();
        println!("x_n={x:.4} u={v:.5} masked={m} exact={:.5}",
            profile(&SpaceTimePoint::new(vec![0.0, x], t0).unwrap()).max(0.0));
    }
    let boundary = BoxBoundary::Analytic(Arc::new(move |p: &SpaceTimePoint<f64>| profile(p).max(0.0)));
    let cfg = StepConfig::implicit_with(boundary);
    let dt = h / 8.0;
    match step(&state, dt, &cfg) {
        Ok(s) => println!("step ok, front[0] {} -> {}", state.front[0], s.front[0]),
        Err(e) => println!("step error: {e}"),
    }
}
