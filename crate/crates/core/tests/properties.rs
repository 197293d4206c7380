use natwalk::adapt::{AdaptConfig, AdaptState, Branch};
use natwalk::biomech::Model;
use natwalk::contact::{friction_force, normal_force, ContactParams};
use natwalk::env::{Env, EnvConfig, Mode};
use natwalk::muscle::{activation_step, force_length, force_passive, force_velocity};
use natwalk::replay::{ReplayBuffer, Transition};
use natwalk::reward::{effort_cost, pain_cost, total_reward, velocity_reward, RewardBreakdown, RewardWeights};
use natwalk::terrain::{Terrain, TileParams};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn breakdown() -> impl Strategy<Value = RewardBreakdown> {
    (0.0..=1.0f64, 0.0..1.0f64, 0.0..2.0f64, 0.0..2.0f64, 0.0..10.0f64, 0.0..1.0f64).prop_map(|(r, a, s, n, l, g)| {
        RewardBreakdown {
            r_vel: r,
            effort_activity: a,
            effort_smooth: s,
            effort_nactive: n,
            pain_limits: l,
            pain_grf: g,
        }
    })
}

proptest! {
    #[test]
    fn activation_stays_in_unit_interval(
        a0 in 0.0..=1.0f64,
        seq in prop::collection::vec((0.0..=1.0f64, 1e-6..0.05f64), 1..200),
    ) {
        let mut a = a0;
        for (u, dt) in seq {
            a = activation_step(a, u, dt, 0.01, 0.04);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn force_length_peaks_at_optimum(l in 0.0..3.0f64) {
        prop_assert!(force_length(l) <= force_length(1.0));
        if (l - 1.0).abs() > 1e-9 {
            prop_assert!(force_length(l) < 1.0);
        }
        prop_assert!(force_passive(l) >= 0.0);
    }

    #[test]
    fn force_velocity_is_monotone(v1 in -2.0..2.0f64, v2 in -2.0..2.0f64) {
        let (lo, hi) = if v1 < v2 { (v1, v2) } else { (v2, v1) };
        // shortening velocity up means less force
        prop_assert!(force_velocity(hi) <= force_velocity(lo));
        prop_assert!(force_velocity(hi) >= 0.0);
    }

    #[test]
    fn velocity_reward_bounded_and_monotone(v1 in -5.0..5.0f64, v2 in -5.0..5.0f64) {
        let (lo, hi) = if v1 < v2 { (v1, v2) } else { (v2, v1) };
        let (a, b) = (velocity_reward(lo, 1.2), velocity_reward(hi, 1.2));
        prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        prop_assert!(a <= b);
    }

    #[test]
    fn costs_are_non_negative(
        a in prop::collection::vec(0.0..=1.0f64, 1..40),
        shift in 0.0..0.5f64,
        alpha in 0.0..5.0f64,
        tau in prop::collection::vec(-100.0..100.0f64, 0..6),
        grf in prop::collection::vec(0.0..5000.0f64, 0..3),
    ) {
        let w = RewardWeights::default();
        let u: Vec<f64> = a.iter().map(|x| (x * 0.5 + shift).min(0.5)).collect();
        let (e, _) = effort_cost(&a, &u, &a.iter().map(|x| x * 0.5).collect::<Vec<_>>(), alpha, &w).unwrap();
        prop_assert!(e >= 0.0);
        let (p, _) = pain_cost(&tau, &grf, 735.75, &w).unwrap();
        prop_assert!(p >= 0.0);
    }

    #[test]
    fn total_reward_is_affine_and_non_increasing_in_alpha(
        b in breakdown(),
        a1 in 0.0..5.0f64,
        a2 in 0.0..5.0f64,
    ) {
        let (r1, r2) = (total_reward(&b, a1), total_reward(&b, a2));
        prop_assert!(((r2 - r1) + (a2 - a1) * b.effort_activity).abs() <= 1e-12);
        if a1 <= a2 {
            prop_assert!(r2 <= r1);
        }
        prop_assert!(r1 <= 1.0);
    }

    #[test]
    fn adapt_invariants(returns in prop::collection::vec(-500.0..3000.0f64, 1..300)) {
        let cfg = AdaptConfig::default();
        let mut s = AdaptState::new(&cfg);
        for r in returns {
            let (n, b) = s.update(r, &cfg).unwrap();
            prop_assert!(n.alpha >= 0.0);
            prop_assert!((n.alpha - s.alpha).abs() <= s.delta * (1.0 + 1e-12));
            prop_assert!(n.delta <= s.delta && n.delta > 0.0);
            prop_assert!((0.0..=1.0).contains(&n.c_mean));
            match b {
                Branch::SlowDown => prop_assert!(n.alpha == s.alpha && n.r_mean > cfg.threshold),
                Branch::Increase => prop_assert!(n.delta == s.delta && n.r_mean > cfg.threshold),
                Branch::Decrease => prop_assert!(n.delta == s.delta && n.r_mean <= cfg.threshold),
            }
            prop_assert_eq!(AdaptState::restore(&n.snapshot()).unwrap(), n);
            s = n;
        }
    }

    #[test]
    fn low_returns_drive_alpha_to_zero(start in 0.0..0.05f64, n in 60usize..200) {
        let cfg = AdaptConfig::default();
        let mut s = AdaptState { alpha: start, ..AdaptState::new(&cfg) };
        for _ in 0..n {
            s = s.update(100.0, &cfg).unwrap().0;
        }
        prop_assert_eq!(s.alpha, 0.0);
    }

    #[test]
    fn terrain_slopes_and_continuity(
        seed in any::<u64>(),
        n_tiles in 1usize..30,
        tile_length in 0.2..3.0f64,
        max_slope_deg in 0.0..30.0f64,
    ) {
        let p = TileParams { n_tiles, tile_length, max_slope_deg };
        let t = Terrain::sloped_tiles(seed, p).unwrap();
        for s in t.slopes_deg() {
            prop_assert!(s.abs() <= max_slope_deg + 1e-9);
        }
        for &(x, y) in t.knots() {
            prop_assert!((t.height(x - 1e-9) - y).abs() < 1e-8);
            prop_assert!((t.height(x + 1e-9) - y).abs() < 1e-8);
        }
        prop_assert_eq!(t, Terrain::sloped_tiles(seed, p).unwrap());
    }

    #[test]
    fn friction_is_bounded(n in 0.0..5000.0f64, v in -5.0..5.0f64) {
        let p = ContactParams::default();
        let f = friction_force(n, v, &p);
        prop_assert!(f.abs() <= (p.mu_static + p.mu_viscous * v.abs()) * n * (1.0 + 1e-12));
        prop_assert!(f * v <= 0.0);
    }

    #[test]
    fn normal_force_never_pulls(d in -0.01..0.01f64, rate in -100.0..100.0f64) {
        let f = normal_force(d, rate, &ContactParams::default());
        prop_assert!(f >= 0.0);
        if d <= 0.0 {
            prop_assert_eq!(f, 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Internal forces only: momentum drifts solely by integration error,
    /// which is first order in the step size.
    #[test]
    fn momentum_is_conserved_without_gravity(seed in any::<u64>(), u in 0.0..1.0f64) {
        let mut m = Model::default_h0918();
        m.options.gravity = false;
        m.options.contacts = false;
        m.options.self_collision = false;
        let flat = Terrain::flat();
        let mut st0 = m.reset(seed);
        st0.q[1] += 2.0;
        for (i, v) in st0.qdot.iter_mut().enumerate() {
            *v = 0.3 * ((seed.wrapping_add(i as u64) % 7) as f64 - 3.0) / 3.0;
        }
        let p0 = m.linear_momentum(&st0);
        let exc = vec![u; m.n_muscles()];
        let drift = |dt: f64| {
            let mut st = st0.clone();
            for _ in 0..(0.1 / dt).round() as usize {
                st = m.integrate(&st, &exc, dt, &flat).unwrap();
            }
            let p1 = m.linear_momentum(&st);
            (p1[0] - p0[0]).hypot(p1[1] - p0[1])
        };
        let (coarse, fine) = (drift(1e-4), drift(5e-5));
        let scale = p0[0].hypot(p0[1]).max(0.1 * m.total_mass());
        prop_assert!(coarse < 1e-3 * scale, "drift {} of {}", coarse, scale);
        prop_assert!(fine < 0.6 * coarse + 1e-12, "not first order: {} then {}", coarse, fine);
    }

    #[test]
    fn env_actions_respect_clip(seed in any::<u64>(), run in any::<bool>(), big in 0.5..10.0f64) {
        let mode = if run { Mode::Run } else { Mode::Walk };
        let cfg = EnvConfig { mode, ..Default::default() };
        let mut env = Env::new(Model::default_h0918(), Terrain::flat(), RewardWeights::default(), cfg).unwrap();
        env.reset(seed);
        let n = env.act_dim();
        for k in 0..5 {
            let u: Vec<f64> = (0..n).map(|i| if (i + k) % 3 == 0 { -big } else { big }).collect();
            let step = env.step(&u).unwrap();
            prop_assert!(env.prev_action().iter().all(|&x| (0.0..=mode.clip()).contains(&x)));
            prop_assert!(step.report.grf_per_foot.iter().all(|g| g.is_finite() && *g >= 0.0));
            prop_assert!(step.obs.iter().all(|x| x.is_finite()));
            if step.done() {
                break;
            }
        }
    }
}

#[test]
fn replay_sampling_is_uniform() {
    let mut buf = ReplayBuffer::new(100).unwrap();
    for i in 0..100 {
        buf.push(Transition {
            obs: vec![i as f32],
            action: vec![0.0],
            next_obs: vec![0.0],
            breakdown: RewardBreakdown::default(),
            done: false,
            episode: 0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut counts = [0usize; 100];
    for (t, _) in buf.sample(100_000, 0.3, &mut rng).unwrap() {
        counts[t.obs[0] as usize] += 1;
    }
    let expected = 1000.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99 degrees of freedom, 0.999 quantile
    assert!(chi2 < 148.2, "chi-square {chi2}");
}
