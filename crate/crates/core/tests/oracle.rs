//! Straight-line arithmetic for the first DICE2016R step, written out with
//! literal constants and compared against the engine.

use dice_core::transcription::{augmented_step, idx, initial_augmented_state};
use dice_core::{load_parameter_set, Vintage};

struct OneStep {
    y1: f64,
    e1: f64,
    t_at2: f64,
    t_lo2: f64,
    m_at2: f64,
    m_up2: f64,
    m_lo2: f64,
    k2: f64,
    l2: f64,
    a2: f64,
    sigma2: f64,
}

fn oracle(mu: f64, s: f64) -> OneStep {
    let sigma1 = 35.85 / (105.5 * (1.0 - 0.03));
    let y1 = 5.115 * 223.0f64.powf(0.3) * (7403.0f64 / 1000.0).powf(0.7);
    let e1 = sigma1 * (1.0 - mu) * y1 + 2.6;
    let theta1 = 550.0 / (1000.0 * 2.6) * sigma1;
    let omega = 1.0 / (1.0 + 0.00236 * 0.85 * 0.85);
    let q1 = omega * (1.0 - theta1 * mu.powf(2.6)) * y1;
    let forcing = 3.6813 * (851.0f64 / 588.0).ln() / 2.0f64.ln() + 0.5;
    let t_at2 = 0.8718 * 0.85 + 0.0088 * 0.0068 + 0.1005 * forcing;
    let t_lo2 = 0.025 * 0.85 + 0.975 * 0.0068;
    let inject = 12.0 / 44.0 * 5.0 * e1;
    let m_at2 = 0.88 * 851.0 + 0.196 * 460.0 + inject;
    let m_up2 = 0.12 * 851.0 + 0.797 * 460.0 + 0.001465 * 1740.0;
    let m_lo2 = 0.007 * 460.0 + 0.99853488 * 1740.0;
    let k2 = 0.9f64.powf(5.0) * 223.0 + 5.0 * s * q1;
    let l2 = 7403.0 * ((1.0 + 11500.0) / (1.0 + 7403.0f64)).powf(0.134);
    let a2 = 5.115 / (1.0 - 0.076);
    let sigma2 = sigma1 * (-0.0152 * 5.0f64).exp();
    OneStep {
        y1,
        e1,
        t_at2,
        t_lo2,
        m_at2,
        m_up2,
        m_lo2,
        k2,
        l2,
        a2,
        sigma2,
    }
}

#[test]
fn oracle_reproduces_reference_numbers() {
    let o = oracle(0.03, 0.25);
    assert!((o.t_at2 - 0.9887).abs() < 1e-3, "T_AT(2) = {}", o.t_at2);
    assert!((o.m_at2 - 891.3).abs() < 0.5, "M_AT(2) = {}", o.m_at2);
    assert!((o.k2 - 262.9).abs() < 0.5, "K(2) = {}", o.k2);
    assert!((o.y1 - 105.2).abs() < 0.2, "Y(1) = {}", o.y1);
}

#[test]
fn engine_matches_oracle() {
    let p = load_parameter_set(Vintage::Dice2016R);
    for &(mu, s) in &[(0.03, 0.25), (0.0, 0.2), (0.5, 0.3), (1.0, 0.1)] {
        let o = oracle(mu, s);
        let x1 = initial_augmented_state(&p, mu, s).unwrap();
        let x2 = augmented_step(&p, p.rho, &x1, &[mu, s]).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
        assert!(close(x1[idx::E] / p.delta, o.e1));
        assert!(close(x2[idx::T_AT], o.t_at2));
        assert!(close(x2[idx::T_LO], o.t_lo2));
        assert!(close(x2[idx::M_AT], o.m_at2));
        assert!(close(x2[idx::M_UP], o.m_up2));
        assert!(close(x2[idx::M_LO], o.m_lo2));
        assert!(close(x2[idx::K], o.k2), "K {} vs {}", x2[idx::K], o.k2);
        assert!(close(x2[idx::L], o.l2));
        assert!(close(x2[idx::A], o.a2));
        assert!(close(x2[idx::SIGMA], o.sigma2));
    }
}
