//! Coarse sweeps behind the constants in `configs/calibration.cfg`.
//!
//! Usage: `cargo run --release --example calibrate -- <exact|noisy|fresh|init|theta> [C ...]`

use std::path::Path;

use rayon::prelude::*;
use saltls::cli::run_cell;
use saltls::generators::{generate_instance, InstanceSpec};
use saltls::initialize::{default_power_iters, init_sample_rate, initialize};
use saltls::rng::stream;
use saltls::saltls::{exact_sample_rate, noisy_sample_rate};
use saltls::sampling::bernoulli_sample;
use saltls::textio::KeyValues;
use saltls::GroundTruth;

fn instance(name: &str) -> GroundTruth {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name);
    generate_instance(&InstanceSpec::load(&path).expect("spec")).expect("instance")
}

fn successes(truth: &GroundTruth, p: f64, seeds: u64, algo: &KeyValues) -> (usize, f64) {
    let res: Vec<(bool, f64)> = (0..seeds)
        .into_par_iter()
        .map(|s| match run_cell(truth, p.min(1.0), s, algo) {
            Ok(c) => (c.result.success, c.result.frob_rel_err),
            Err(_) => (false, f64::INFINITY),
        })
        .collect();
    let mut errs: Vec<f64> = res.iter().map(|r| r.1).collect();
    errs.sort_by(f64::total_cmp);
    (res.iter().filter(|r| r.0).count(), errs[errs.len() / 2])
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mode = args.first().map(String::as_str).unwrap_or("exact");
    let grid: Vec<f64> = if args.len() > 1 {
        args[1..].iter().map(|a| a.parse().expect("constant")).collect()
    } else {
        vec![0.0125, 0.025, 0.05, 0.1]
    };
    match mode {
        "exact" | "noisy" => {
            let (truth, eps) = if mode == "exact" {
                (instance("exact_instance.cfg"), 1e-3)
            } else {
                (instance("noisy_instance.cfg"), 0.1)
            };
            let mut algo = KeyValues::default();
            algo.set("eps", eps);
            algo.set("schedule", "reuse");
            println!("mu(U) = {:.4}, mu* = {:.4}, gamma = {:.4}", truth.mu_u(), truth.mu_star(), truth.gamma_k());
            for c in grid {
                let p = if mode == "exact" {
                    exact_sample_rate(&truth, eps, c)
                } else {
                    noisy_sample_rate(&truth, eps, c)
                };
                let (hi, med_hi) = successes(&truth, p, 20, &algo);
                let (lo, med_lo) = successes(&truth, p / 8.0, 20, &algo);
                println!("C = {c:<8} p = {p:.5}  success {hi:>2}/20 (median err {med_hi:.3e})  at p/8 {lo:>2}/20 (median err {med_lo:.3e})");
            }
        }
        "fresh" => {
            // Fresh-sample schedule on the exact instance; `grid` holds raw rates.
            let truth = instance("exact_instance.cfg");
            let mut algo = KeyValues::default();
            algo.set("eps", 1e-3);
            for p in grid {
                let (ok, med) = successes(&truth, p, 20, &algo);
                println!("fresh p = {p:<6} success {ok:>2}/20 (median err {med:.3e})");
            }
        }
        "init" => {
            let truth = instance("init_instance.cfg");
            let bound = 32.0 * truth.mu_u() * (truth.n() as f64).ln();
            for c in grid {
                let p = init_sample_rate(&truth, c);
                let ok = (0..50u64)
                    .into_par_iter()
                    .filter(|&s| {
                        let sample = bernoulli_sample(truth.a(), p.min(1.0), &mut stream(s, "sample", 0)).unwrap();
                        let iters = default_power_iters(truth.n(), truth.gamma_k());
                        match initialize(&sample, truth.k(), truth.mu_u(), iters, &mut stream(s, "init", 0), Some(truth.u())) {
                            Ok(r) => r.sin_theta_frob.unwrap() <= 0.25 && r.coherence <= bound,
                            Err(_) => false,
                        }
                    })
                    .count();
                println!("C = {c:<8} p = {p:.5}  success {ok:>2}/50");
            }
        }
        "theta" => {
            let truth = instance("exact_instance.cfg");
            let eps = 1e-3;
            let p = exact_sample_rate(&truth, eps, grid[0]);
            for c_mu in [0.5, 1.0, 2.0, 4.0] {
                for c_l in [0.5, 1.0, 2.0, 4.0] {
                    let mut algo = KeyValues::default();
                    algo.set("eps", eps);
                    algo.set("schedule", "reuse");
                    algo.set("c_mu", c_mu);
                    algo.set("c_l", c_l);
                    let (ok, med) = successes(&truth, p, 20, &algo);
                    println!("c_mu = {c_mu:<4} c_L = {c_l:<4} success {ok:>2}/20 (median err {med:.3e})");
                }
            }
        }
        other => eprintln!("unknown mode {other}"),
    }
}
