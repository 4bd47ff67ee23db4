//! `selftest`: a handful of fast numerical checks, one PASS/FAIL line each.

use anyhow::{ensure, Result};
use robust_wmmse::accel::lagrange_interp3;
use robust_wmmse::channel::{evolve_stats, make_scenario, SystemDims};
use robust_wmmse::du::{taylor_diag_inverse, DuNetwork, DuOptions};
use robust_wmmse::linalg::{c, identity, rel_err};
use robust_wmmse::policy::{reward, ActionLayout};
use robust_wmmse::swmmse::{swmmse_solve, wmmse_solve, SwmmseOptions};
use robust_wmmse::{CMat, Telemetry};

pub struct Check {
    pub name: &'static str,
    pub outcome: Result<String>,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.outcome.is_ok()
    }

    pub fn line(&self) -> String {
        match &self.outcome {
            Ok(d) => format!("PASS {}: {d}", self.name),
            Err(e) => format!("FAIL {}: {e:#}", self.name),
        }
    }
}

fn small() -> Result<SystemDims> {
    Ok(SystemDims::new(8, 2, 2, 12, 6, 1.0, 20.0)?)
}

fn taylor() -> Result<String> {
    let mut tel = Telemetry::new();
    let diag = [0.5, 2.0, 3.0];
    let d = CMat::from_fn(
        3,
        3,
        |i, j| if i == j { c(diag[i], 0.0) } else { c(0.0, 0.0) },
    );
    let t = taylor_diag_inverse(&d, &CMat::zeros(3, 3), &mut tel)?;
    let exact = d.try_inverse().expect("diagonal");
    let err = rel_err(&t, &exact);
    ensure!(err <= 1e-12, "diagonal error {err:e}");
    let i = taylor_diag_inverse(&identity(4), &CMat::zeros(4, 4), &mut tel)?;
    ensure!(rel_err(&i, &identity(4)) <= 1e-12, "identity not fixed");
    Ok(format!("relative error {err:e}"))
}

fn interpolation() -> Result<String> {
    let a = CMat::from_fn(2, 2, |i, j| c(i as f64 + 1.0, j as f64 - 0.5));
    let b = CMat::from_fn(2, 2, |i, j| c(0.3 * j as f64, 0.1 * i as f64));
    let e = CMat::from_fn(2, 2, |i, j| c(-0.2, (i + j) as f64));
    let p = |f: f64| &a + &b * c(f, 0.0) + &e * c(f * f, 0.0);
    let (f0, f1, f2) = (2.0, 5.0, 9.0);
    let (m0, m1, m2) = (p(f0), p(f1), p(f2));
    let mut worst = 0.0_f64;
    for i in 0..=20 {
        let f = f0 + (f2 - f0) * i as f64 / 20.0;
        worst = worst.max(rel_err(
            &lagrange_interp3([(f0, &m0), (f1, &m1), (f2, &m2)], f)?,
            &p(f),
        ));
    }
    ensure!(worst <= 1e-12, "worst error {worst:e}");
    Ok(format!("worst error {worst:e}"))
}

fn power() -> Result<String> {
    let dims = small()?;
    let stats = evolve_stats(&make_scenario(&dims, 4, 3)?, 2)?;
    let mut tel = Telemetry::new();
    let powers = [
        wmmse_solve(&stats, &dims, 5, &mut tel)?.precoders.power(),
        swmmse_solve(
            &stats,
            &dims,
            &SwmmseOptions {
                iterations: 3,
                saa_batch: 4,
                seed: 1,
            },
            &mut tel,
        )?
        .precoders
        .power(),
        DuNetwork::new(&stats, &dims, &DuOptions::default())?
            .run_plain(&mut tel)?
            .precoders
            .power(),
    ];
    let worst = powers
        .iter()
        .map(|p| (p - dims.p_max).abs())
        .fold(0.0, f64::max);
    ensure!(worst <= 1e-9, "power deviation {worst:e}");
    Ok(format!("max power deviation {worst:e}"))
}

fn reward_identity() -> Result<String> {
    let dims = small()?;
    let stats = evolve_stats(&make_scenario(&dims, 4, 5)?, 3)?;
    let opts = DuOptions {
        sampled: Some(4),
        ..DuOptions::default()
    };
    let net = DuNetwork::new(&stats, &dims, &opts)?;
    let layout = ActionLayout {
        layers: opts.layers,
        k_users: dims.k_users,
        n_nodes: net.n_nodes(),
        m_r: dims.m_r,
    };
    let r = reward(&net, &stats, &layout.baseline_action(), &layout, 32, 9)?;
    ensure!(r == 0.0, "baseline reward {r:e}");
    Ok("baseline action reward is 0".into())
}

pub fn run_all() -> Vec<Check> {
    vec![
        Check {
            name: "taylor_inverse",
            outcome: taylor(),
        },
        Check {
            name: "interpolation",
            outcome: interpolation(),
        },
        Check {
            name: "power_feasibility",
            outcome: power(),
        },
        Check {
            name: "reward_identity",
            outcome: reward_identity(),
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for ch in run_all() {
            assert!(ch.passed(), "{}", ch.line());
        }
    }
}
