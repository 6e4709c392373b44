use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use revise_core::grpo::toy::{sample_batch, toy_gradient, toy_objective, toy_task, DIM};
use revise_core::grpo::{
    clipped_surrogate, group_advantages, grpo_objective, train_toy, GrpoConfig, ToyConfig,
    ToyPolicy, TokenLogps,
};
use revise_core::RewardWeights;

#[test]
fn three_point_advantages() {
    let a = group_advantages(&[1.0, 2.0, 3.0]).unwrap();
    let s = (1.5f64).sqrt();
    assert!((a[0] + s).abs() < 1e-7 && a[1] == 0.0 && (a[2] - s).abs() < 1e-7, "{a:?}");
    assert_eq!(group_advantages(&[5.0; 4]).unwrap(), vec![0.0; 4]);
    assert!(group_advantages(&[]).is_err());
    assert!(group_advantages(&[f64::NAN, 1.0]).is_err());
}

#[test]
fn advantages_are_standardized() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..2000 {
        let g = rng.gen_range(2..=16);
        let scale = 10f64.powi(rng.gen_range(-3..4));
        let returns: Vec<f64> = (0..g).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
        let a = group_advantages(&returns).unwrap();
        let n = g as f64;
        let pop_std = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / n;
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
        };
        let mean = a.iter().sum::<f64>() / n;
        let raw = pop_std(&returns);
        let std = pop_std(&a);
        assert!(mean.abs() < 1e-9);
        // the 1e-8 guard shrinks the spread to raw / (raw + 1e-8)
        assert!((std - raw / (raw + 1e-8)).abs() < 1e-9);
        if raw >= 0.01 {
            assert!((std - 1.0).abs() < 1e-6, "{std} at scale {scale}");
        }
    }
}

fn brute_objective(group: &[TokenLogps], adv: &[f64], eps: f64) -> f64 {
    let mut total = 0.0;
    for (traj, a) in group.iter().zip(adv) {
        let mut s = 0.0;
        for n in 0..traj.old.len() {
            let rho = (traj.new[n] - traj.old[n]).exp();
            let unclipped = rho * a;
            let clipped = rho.max(1.0 - eps).min(1.0 + eps) * a;
            s += if unclipped < clipped { unclipped } else { clipped };
        }
        total += s / traj.old.len() as f64;
    }
    total / group.len() as f64
}

#[test]
fn objective_matches_per_token_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..2000 {
        let group: Vec<TokenLogps> = (0..5)
            .map(|_| {
                let n = rng.gen_range(1..30);
                let old: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..0.0)).collect();
                let new = old.iter().map(|o| o + rng.gen_range(-0.5..0.5)).collect();
                TokenLogps { old, new }
            })
            .collect();
        let returns: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..4.0)).collect();
        let adv = group_advantages(&returns).unwrap();
        let eps = rng.gen_range(0.05..0.5);
        let j = grpo_objective(&group, &adv, eps).unwrap();
        let b = brute_objective(&group, &adv, eps);
        assert!((j - b).abs() <= 1e-12 * b.abs().max(1.0), "{j} vs {b}");

        let mut rev_g = group.clone();
        let mut rev_a = adv.clone();
        rev_g.reverse();
        rev_a.reverse();
        let r = grpo_objective(&rev_g, &rev_a, eps).unwrap();
        assert!((r - j).abs() <= 1e-12 * j.abs().max(1.0));

        let on_policy: Vec<TokenLogps> = group
            .iter()
            .map(|t| TokenLogps { old: t.old.clone(), new: t.old.clone() })
            .collect();
        assert!(grpo_objective(&on_policy, &adv, eps).unwrap().abs() < 1e-9);
    }
}

#[test]
fn clip_rule() {
    let eps = GrpoConfig::default().clip_eps;
    assert_eq!(eps, 0.2);
    let (v, d) = clipped_surrogate(1.0 + 2.0 * eps, 2.0, eps);
    assert!((v - (1.0 + eps) * 2.0).abs() < 1e-15 && d == 0.0);
    let (v, d) = clipped_surrogate(1.0 - 2.0 * eps, -2.0, eps);
    assert!((v - (1.0 - eps) * -2.0).abs() < 1e-15 && d == 0.0);
}

#[test]
fn mismatched_inputs_are_rejected() {
    let g = vec![TokenLogps { old: vec![0.0], new: vec![0.0, 1.0] }];
    assert!(grpo_objective(&g, &[1.0], 0.2).is_err());
    assert!(grpo_objective(&g, &[1.0, 2.0], 0.2).is_err());
    let empty = vec![TokenLogps::default()];
    assert!(grpo_objective(&empty, &[1.0], 0.2).is_err());
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

#[test]
fn toy_gradient_matches_central_differences() {
    let cfg = ToyConfig { group_size: 4, ..ToyConfig::default() };
    let w = RewardWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let h = 1e-5;
    for point in 0..20 {
        let mut theta = [0.0; DIM];
        for t in theta.iter_mut() {
            *t = rng.gen_range(-2.0..2.0);
        }
        let mut old = theta;
        for t in old.iter_mut() {
            *t += rng.gen_range(-0.1..0.1);
        }
        let reference = ToyPolicy { theta: [0.0; DIM] };
        let tasks: Vec<_> = (0..4).map(|s| toy_task(point * 10 + s, &cfg).unwrap()).collect();
        let batch = sample_batch(&ToyPolicy { theta: old }, &reference, &tasks, &cfg, &w, &mut rng).unwrap();
        let cfg = ToyConfig { kl_coef: 0.05, ..cfg };
        let analytic = toy_gradient(&theta, &batch, &cfg);
        let mut numeric = [0.0; DIM];
        for k in 0..DIM {
            let mut up = theta;
            let mut down = theta;
            up[k] += h;
            down[k] -= h;
            numeric[k] = (toy_objective(&up, &batch, &cfg) - toy_objective(&down, &batch, &cfg)) / (2.0 * h);
        }
        let e = rel_err(&analytic, &numeric);
        assert!(e < 1e-4, "point {point}: {analytic:?} vs {numeric:?} ({e})");

        let no_kl = ToyConfig { kl_coef: 0.0, ..cfg };
        let plain = toy_gradient(&theta, &batch, &no_kl);
        let mut zero_adv = batch.clone();
        for g in &mut zero_adv.groups {
            g.advantages.iter_mut().for_each(|a| *a = 0.0);
        }
        assert!(toy_gradient(&theta, &zero_adv, &no_kl).iter().all(|g| *g == 0.0));
        let kl_only = toy_gradient(&theta, &zero_adv, &cfg);
        for k in 0..DIM {
            assert!((analytic[k] - plain[k] - kl_only[k]).abs() < 1e-12);
        }
    }
}

fn windows(values: &[f64], width: usize) -> Vec<f64> {
    values.chunks(width).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

#[test]
fn toy_training_improves_return_and_stops_earlier() {
    let cfg = ToyConfig::default();
    let w = RewardWeights::default();
    let curve = train_toy(&cfg, &w, 1).unwrap();
    let returns: Vec<f64> = curve.points[1..].iter().map(|p| p.mean_return).collect();
    let smooth = windows(&returns, 20);
    assert!(smooth.windows(2).all(|p| p[1] > p[0]), "{smooth:?}");
    let first = curve.points[0];
    let tail = &curve.points[curve.points.len() - 20..];
    let tail_tau = tail.iter().map(|p| p.mean_tau).sum::<f64>() / 20.0;
    let tail_frames = tail.iter().map(|p| p.mean_frames).sum::<f64>() / 20.0;
    assert!(tail_tau < first.mean_tau, "{tail_tau} vs {}", first.mean_tau);
    assert!(tail_frames < first.mean_frames);

    let no_stop = RewardWeights { stop: 0.0, ..w };
    let ablated = train_toy(&cfg, &no_stop, 1).unwrap();
    let mean_tau = |c: &revise_core::grpo::LearningCurve| {
        c.points[c.points.len() - 20..].iter().map(|p| p.mean_tau).sum::<f64>() / 20.0
    };
    assert!(mean_tau(&ablated) > mean_tau(&curve));
}

#[test]
fn zero_learning_rate_leaves_the_policy_alone() {
    let cfg = ToyConfig { iterations: 5, tasks_per_iteration: 4, learning_rate: 0.0, ..ToyConfig::default() };
    let curve = train_toy(&cfg, &RewardWeights::default(), 3).unwrap();
    assert_eq!(curve.policy, ToyPolicy::default());
    assert_eq!(curve.points.len(), 6);
}
