//! Calibrating the informed intensity to a target number of arrivals, and the
//! resulting spread as the informed share grows.
//!
//! Usage: `cargo run --release --example calibration -- [target_arrivals]`

use fadmm::experiments::{apply_axis, spread_at_start};
use fadmm::model::{calibrate_psi, fad_moment_integral, kappa_cjp};
use fadmm::ModelParams;

fn main() -> fadmm::Result<()> {
    let target: f64 = std::env::args().nth(1).map_or(30.0, |a| a.parse().expect("target"));
    let base = ModelParams::baseline();
    for gamma in [0.0, 1.0, 3.0] {
        for q in [0.0, 0.6, 1.0] {
            let mut p = base.clone().with_q_weight(q);
            p.gamma = gamma;
            let psi = calibrate_psi(&p, target)?;
            p.psi_informed = psi;
            println!(
                "gamma {gamma:.1} q {q:.1}: psi {psi:.4}, fad moment integral {:.4}, blind intensity {:.4}",
                fad_moment_integral(&p)?,
                kappa_cjp(&p)?
            );
        }
    }
    println!("informed share -> spread 2/k - 2A(0)");
    for i in 0..=4 {
        let s = i as f64 * 0.25;
        let p = apply_axis(&base, "informed_share", s, true, target)?;
        println!("{:>5.0}%: phi {:.2} psi {:.4} spread {:.5}", 100.0 * s, p.phi_uninformed, p.psi_informed, spread_at_start(&p)?);
    }
    Ok(())
}
