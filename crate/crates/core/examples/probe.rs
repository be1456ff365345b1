// scratch: bias check for composite martingale under LV2
use quantolc::localvol::LocalVolSurface;
use quantolc::mcengine::{simulate, SimConfig, SimInputs, Strategy};

fn main() {
    let eta = LocalVolSurface::flat(0.2);
    let psi = LocalVolSurface::flat(0.1);
    let phi = LocalVolSurface::flat(0.038f64.sqrt());
    let inputs = SimInputs {
        phi: Some(&phi),
        eta: Some(&eta),
        psi: Some(&psi),
        ..Default::default()
    };
    let mut zsum = 0.0;
    let mut n_tot = 0.0;
    for seed in [5u64, 6, 7, 8, 9, 10, 11, 12] {
        let config = SimConfig::new(Strategy::Lv2, 50_000, seed, vec![1.0]);
        let out = simulate(&config, &inputs).unwrap();
        let obs = out.observation_at(1.0).unwrap();
        let m: f64 =
            obs.s.iter().zip(&obs.x).map(|(s, x)| s * x).sum::<f64>() / obs.s.len() as f64;
        println!("seed {seed}: E[z]={m:.6}");
        zsum += m * obs.s.len() as f64;
        n_tot += obs.s.len() as f64;
    }
    let pooled = zsum / n_tot;
    let se = 0.1968 / n_tot.sqrt();
    println!("pooled E[z] = {pooled:.6} +- {se:.6} ({:+.2} se)", (pooled - 1.0) / se);
}
