//! Scratch probe: load a trained value-mode checkpoint and print Q rows
//! along a greedy rollout to inspect action discrimination.

use hygma::cli::{load_checkpoint, parse_config_str};
use hygma::env;
use hygma::hypergraph::build_hypergraph;
use hygma::learn::Model;
use hygma::spectral::Grouping;
use hygma::tensor::{ParamSet, Tape, Tensor};

fn main() {
    let cfg_text = std::fs::read_to_string(std::env::args().nth(1).expect("config path")).unwrap();
    let ckpt = std::env::args().nth(2).expect("checkpoint path");
    let cfg = parse_config_str(&cfg_text).unwrap();
    let mut ps = ParamSet::new();
    let mut rng = hygma::seeded_rng(0);
    let model = Model::init(
        cfg.learn.mode,
        cfg.ablation.conv_variant(),
        cfg.env.obs_len(),
        cfg.env.state_len(),
        cfg.env.n_predators,
        env::N_ACTIONS,
        &cfg.model,
        &mut ps,
        &mut rng,
    );
    load_checkpoint(std::path::Path::new(&ckpt), &mut ps).unwrap();

    let grouping = Grouping::single_group(cfg.env.n_predators);
    let hg = build_hypergraph(&grouping);
    let mut env_rng = hygma::seeded_rng(1234);
    let (mut state, mut obs) = env::reset(&cfg.env, &mut env_rng);
    let mut hidden = Tensor::zeros(&[cfg.env.n_predators, cfg.model.hidden]);
    println!("prey at {:?}", state.prey);
    for step in 0..12 {
        let mut tape = Tape::inactive();
        let bound = model.bind(&mut tape, &ps);
        let h_prev = tape.constant(hidden.clone());
        let flat: Vec<f64> = obs.iter().flatten().copied().collect();
        let o = tape
            .constant(Tensor::from_vec(flat, &[cfg.env.n_predators, cfg.env.obs_len()]).unwrap());
        let emb = bound.encode(&mut tape, o, h_prev).unwrap();
        let (hl, _) = bound.conv_forward(&mut tape, emb, &hg).unwrap();
        let q = match cfg.learn.mode {
            hygma::learn::LearnMode::Value => bound.q_values(&mut tape, emb, hl).unwrap(),
            hygma::learn::LearnMode::Policy => bound.policy_probs(&mut tape, emb, hl).unwrap(),
        };
        hidden = tape.value(emb).clone();
        let actions: Vec<usize> = (0..cfg.env.n_predators)
            .map(|i| {
                let row = tape.value(q).row(i);
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                    .unwrap()
                    .0
            })
            .collect();
        for i in 0..cfg.env.n_predators {
            let row: Vec<String> =
                tape.value(q).row(i).iter().map(|v| format!("{v:+.4}")).collect();
            println!(
                "step {step} agent {i} at {:?} q=[{}] -> a={} (u d l r s)",
                state.predators[i],
                row.join(" "),
                actions[i]
            );
        }
        let result = env::step(&cfg.env, &state, &actions, &mut env_rng).unwrap();
        state = result.state;
        obs = result.observations;
        if result.done {
            println!("done at step {} success={}", state.step, result.success);
            break;
        }
    }

    // Advantage-signal audit (policy mode): roll out with training-style
    // categorical sampling, compute one-step advantages under the trained
    // critic, and report whether steps that moved agent 0 toward the prey get
    // higher advantages than steps that moved it away.
    if cfg.learn.mode == hygma::learn::LearnMode::Policy {
        let gamma = cfg.learn.weights.gamma;
        let mut act_rng = hygma::seeded_rng(77);
        let mut env_rng = hygma::seeded_rng(4321);
        let mut stats: std::collections::HashMap<&str, (f64, f64, usize)> =
            std::collections::HashMap::new();
        let mut toward_ct = 0usize;
        let mut away_ct = 0usize;
        for _ in 0..300 {
            let (mut state, mut obs) = env::reset(&cfg.env, &mut env_rng);
            let mut hidden = Tensor::zeros(&[cfg.env.n_predators, cfg.model.hidden]);
            loop {
                let mut tape = Tape::inactive();
                let bound = model.bind(&mut tape, &ps);
                let h_prev = tape.constant(hidden.clone());
                let flat: Vec<f64> = obs.iter().flatten().copied().collect();
                let o = tape
                    .constant(
                        Tensor::from_vec(flat, &[cfg.env.n_predators, cfg.env.obs_len()])
                            .unwrap(),
                    );
                let emb = bound.encode(&mut tape, o, h_prev).unwrap();
                let (hl, _) = bound.conv_forward(&mut tape, emb, &hg).unwrap();
                let probs = bound.policy_probs(&mut tape, emb, hl).unwrap();
                let sv = tape
                    .constant(Tensor::from_vec(env::global_state(&cfg.env, &state), &[1, cfg.env.state_len()]).unwrap());
                let v_now = {
                    let v = bound.critic_value(&mut tape, sv, hl).unwrap();
                    tape.value(v).data()[0]
                };
                let actions = hygma::learn::select_actions(
                    tape.value(probs),
                    hygma::learn::LearnMode::Policy,
                    0.0,
                    &mut act_rng,
                );
                let before = state.clone();
                let result = env::step(&cfg.env, &state, &actions, &mut env_rng).unwrap();
                hidden = tape.value(emb).clone();
                // Next-state value under the same hidden (one step look).
                let v_next = if result.done {
                    0.0
                } else {
                    let mut t2 = Tape::inactive();
                    let b2 = model.bind(&mut t2, &ps);
                    let h2 = t2.constant(hidden.clone());
                    let flat2: Vec<f64> = result.observations.iter().flatten().copied().collect();
                    let o2 = t2
                        .constant(
                            Tensor::from_vec(flat2, &[cfg.env.n_predators, cfg.env.obs_len()])
                                .unwrap(),
                        );
                    let e2 = b2.encode(&mut t2, o2, h2).unwrap();
                    let (hl2, _) = b2.conv_forward(&mut t2, e2, &hg).unwrap();
                    let s2 = t2
                        .constant(
                            Tensor::from_vec(
                                env::global_state(&cfg.env, &result.state),
                                &[1, cfg.env.state_len()],
                            )
                            .unwrap(),
                        );
                    let v = b2.critic_value(&mut t2, s2, hl2).unwrap();
                    t2.value(v).data()[0]
                };
                let adv = result.reward + gamma * v_next - v_now;
                let (pr, pc) = before.predators[0];
                let (qr, qc) = before.prey;
                let visible = pr.abs_diff(qr).max(pc.abs_diff(qc)) <= cfg.env.vision;
                let d_before = pr.abs_diff(qr) + pc.abs_diff(qc);
                let (nr, nc) = result.state.predators[0];
                let d_after = nr.abs_diff(qr) + nc.abs_diff(qc);
                let key = if !visible {
                    "blind"
                } else if d_after < d_before {
                    toward_ct += 1;
                    "toward"
                } else if d_after > d_before {
                    away_ct += 1;
                    "away"
                } else {
                    "same"
                };
                let e = stats.entry(key).or_insert((0.0, 0.0, 0));
                e.0 += adv;
                e.1 += adv * adv;
                e.2 += 1;
                state = result.state;
                obs = result.observations;
                if result.done {
                    break;
                }
            }
        }
        println!("\nadvantage audit over 300 sampled episodes (agent 0):");
        for key in ["toward", "away", "same", "blind"] {
            if let Some((s, s2, n)) = stats.get(key) {
                let m = s / *n as f64;
                let sd = (s2 / *n as f64 - m * m).max(0.0).sqrt();
                println!("  {key:>7}: n={n:5}  mean A {m:+.4}  sd {sd:.4}");
            }
        }
        let frac = toward_ct as f64 / (toward_ct + away_ct).max(1) as f64;
        println!("  P(toward | visible, moved) = {frac:.3}");
    }
}
