mod common;

use common::{on_policy_segment, Tabular};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vexlab::diffcore::{Tape, Tensor, Var};
use vexlab::dynamics::OracleModel;
use vexlab::envs::{Env, EnvId};
use vexlab::expansion::{Bootstrap, CriticFn, Estimator, NoiseSource, PolicyFn, Slot};
use vexlab::Result;

fn col(v: &[usize]) -> Tensor {
    Tensor::column(&v.iter().map(|&x| x as f64).collect::<Vec<_>>())
}

fn estimator<'a>(m: &'a Tabular, alpha: f64, gamma: f64, seed: u64) -> Estimator<'a> {
    Estimator { model: Some(m), policy: m, critic: m, alpha, gamma, lambda: 1.0, noise: NoiseSource::new(seed), key0: 0 }
}

#[test]
fn on_policy_retrace_equals_realized_expansion() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..200 {
        let m = Tabular::random(&mut rng, true);
        let alpha = rng.random_range(0.0..0.5);
        let gamma = rng.random_range(0.5..0.99);
        let est = estimator(&m, alpha, gamma, trial);
        let rows = 8;
        let s0: Vec<usize> = (0..rows).map(|_| rng.random_range(0..m.n_states)).collect();
        let a0: Vec<usize> = (0..rows).map(|_| rng.random_range(0..m.n_actions)).collect();
        for h in 0..=5 {
            let seg = on_policy_segment(&m, &est.noise, &s0, &a0, h + 1);
            let rt = est.retrace(&seg).unwrap();
            let qh = est.q_h(None, h + 1, Bootstrap::SoftValue, Slot::Val(col(&s0)), Slot::Val(col(&a0))).unwrap();
            for (x, y) in rt.iter().zip(qh.value(None).data()) {
                assert!((x - y).abs() < 1e-10, "trial {trial} H={h}: {x} vs {y}");
            }
        }
    }
}

/// Exact E[Q^H(s, a)] by backward recursion over the tabular model.
fn exact_qh(m: &Tabular, h: usize, alpha: f64, gamma: f64) -> Vec<Vec<f64>> {
    let mut q = m.q.clone();
    for _ in 0..h {
        let v: Vec<f64> = (0..m.n_states)
            .map(|s| {
                if m.terminal[s] {
                    return 0.0;
                }
                (0..m.n_actions)
                    .filter(|&a| m.pi[s][a] > 0.0)
                    .map(|a| m.pi[s][a] * (q[s][a] - alpha * m.pi[s][a].ln()))
                    .sum()
            })
            .collect();
        q = (0..m.n_states)
            .map(|s| {
                (0..m.n_actions)
                    .map(|a| m.r[s][a] + gamma * (0..m.n_states).map(|n| m.p[s][a][n] * v[n]).sum::<f64>())
                    .collect()
            })
            .collect();
    }
    q
}

#[test]
fn particle_mean_converges_to_tabular_expectation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..5 {
        let m = Tabular::random(&mut rng, true);
        let (alpha, gamma) = (0.2, 0.9);
        let est = estimator(&m, alpha, gamma, 100 + trial);
        for h in [1, 3] {
            let exact = exact_qh(&m, h, alpha, gamma);
            let s: Vec<usize> = (0..m.n_states).collect();
            let a: Vec<usize> = (0..m.n_states).map(|i| i % m.n_actions).collect();
            let out = est.q_h_particles(h, Bootstrap::SoftValue, &col(&s), &col(&a), 20_000, 4096).unwrap();
            for (i, p) in out.iter().enumerate() {
                let se = (p.variance / 20_000.0).sqrt();
                let want = exact[s[i]][a[i]];
                assert!((p.mean - want).abs() < 5.0 * se + 1e-9, "H={h} s={}: {} vs {want} (se {se})", s[i], p.mean);
            }
        }
    }
}

#[test]
fn deterministic_tabular_has_zero_particle_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = Tabular::random(&mut rng, false).deterministic();
    let est = estimator(&m, 0.0, 0.9, 1);
    let out = est.q_h_particles(4, Bootstrap::SoftValue, &col(&[0, 1]), &col(&[1, 0]), 50, 64).unwrap();
    let exact = exact_qh(&m, 4, 0.0, 0.9);
    for (p, (s, a)) in out.iter().zip([(0, 1), (1, 0)]) {
        assert!(p.values.iter().all(|&v| v == p.values[0]));
        assert!(p.variance < 1e-24);
        assert!((p.mean - exact[s][a]).abs() < 1e-12);
    }
}

#[test]
fn particle_average_variance_scales_inverse_in_particles() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let m = Tabular::random(&mut rng, false);
    let var_of_mean = |p: usize| {
        let means: Vec<f64> = (0..400)
            .map(|seed| {
                let est = estimator(&m, 0.1, 0.9, 1000 + seed);
                est.q_h_particles(3, Bootstrap::SoftValue, &col(&[0]), &col(&[0]), p, 4096).unwrap()[0].mean
            })
            .collect();
        let mu = means.iter().sum::<f64>() / means.len() as f64;
        means.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (means.len() - 1) as f64
    };
    let ratio = var_of_mean(1) / var_of_mean(16);
    assert!((8.0..32.0).contains(&ratio), "variance ratio {ratio}");
}

/// Constant action with zero log-probability.
struct Constant(f64);

impl PolicyFn for Constant {
    fn noise_dim(&self) -> usize {
        1
    }
    fn sample(&self, tape: &Tape, states: Var, _noise: &Tensor) -> Result<(Var, Var)> {
        let rows = tape.shape(states)[0];
        Ok((tape.constant(Tensor::filled(rows, 1, self.0)), tape.constant(Tensor::zeros(rows, 1))))
    }
    fn log_prob(&self, tape: &Tape, states: Var, _actions: &Tensor) -> Result<Var> {
        Ok(tape.constant(Tensor::zeros(tape.shape(states)[0], 1)))
    }
}

/// Q(s, a) = s0 + 2 s2 - a.
struct Linear;

fn linear_q(s: &[f64], a: f64) -> f64 {
    s[0] + 2.0 * s[2] - a
}

impl CriticFn for Linear {
    fn q_min(&self, tape: &Tape, states: Var, actions: Var) -> Result<Var> {
        let q = tape.with_value(states, |s| {
            tape.with_value(actions, |a| (0..s.rows()).map(|r| linear_q(s.row_slice(r), a.get(r, 0))).collect::<Vec<_>>())
        });
        Ok(tape.constant(Tensor::column(&q)))
    }
}

#[test]
fn pendulum_expansion_matches_hand_rollout() {
    let env = Env::new(EnvId::Pendulum);
    let model = OracleModel::new(env);
    let (pi, critic) = (Constant(0.5), Linear);
    let gamma = 0.95;
    let est = Estimator { model: Some(&model), policy: &pi, critic: &critic, alpha: 0.0, gamma, lambda: 1.0, noise: NoiseSource::new(0), key0: 0 };
    let s0 = vec![0.3f64.cos(), 0.3f64.sin(), -1.2];
    let a0 = -1.5;
    for h in 1..=3 {
        let mut s = s0.clone();
        let mut a = a0;
        let mut want = 0.0;
        for t in 0..h {
            let o = env.transition(&s, &[a]).unwrap();
            want += gamma.powi(t as i32) * o.reward;
            s = o.next;
            a = 0.5;
        }
        want += gamma.powi(h as i32) * linear_q(&s, a);
        let got = est
            .q_h(None, h, Bootstrap::SoftValue, Slot::Val(Tensor::row(&s0)), Slot::Val(Tensor::column(&[a0])))
            .unwrap()
            .value(None)
            .item();
        assert!((got - want).abs() < 1e-12, "H={h}: {got} vs {want}");
    }
}

#[test]
fn taped_and_value_rollouts_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let m = Tabular::random(&mut rng, true);
    let est = estimator(&m, 0.3, 0.9, 4);
    let (s, a) = (col(&[0, 1, 0]), col(&[1, 1, 0]));
    let plain = est.q_h(None, 5, Bootstrap::SoftValue, Slot::Val(s.clone()), Slot::Val(a.clone())).unwrap().value(None);
    let tape = Tape::new();
    let taped = est.q_h(Some(&tape), 5, Bootstrap::SoftValue, Slot::Val(s), Slot::Val(a)).unwrap().value(Some(&tape));
    assert_eq!(plain, taped);
}

#[test]
fn horizon_needs_a_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = Tabular::random(&mut rng, false);
    let est = Estimator { model: None, ..estimator(&m, 0.0, 0.9, 0) };
    let r = est.q_h(None, 2, Bootstrap::SoftValue, Slot::Val(col(&[0])), Slot::Val(col(&[0])));
    assert!(r.is_err());
}
