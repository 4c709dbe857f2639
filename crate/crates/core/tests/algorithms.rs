use lbsac_core::algorithms::{
    actor_objective, critic_loss, critic_objective, critic_target, temperature_loss, Agent,
    Algorithm, Diversity, TrainConfig,
};
use lbsac_core::autodiff::{finite_diff_check, FdOptions, Op, Tensor};
use lbsac_core::envs::{generate_dataset, Batch, Behavior, EnvId};
use lbsac_core::networks::{min_over_ensemble, CriticEnsemble, Layer, Mlp, SquashedGaussianPolicy};
use lbsac_core::{Error, Rng};

const OBS: usize = 2;
const ACT: usize = 1;

fn layer(weight: Tensor<f32>, bias: Tensor<f32>) -> Layer {
    Layer {
        weight,
        bias,
        norm: None,
    }
}

fn constant_critic(input: usize, c: f32) -> Mlp {
    Mlp::from_layers(vec![layer(Tensor::zeros(&[input, 1]), Tensor::full(&[1, 1], c))]).unwrap()
}

/// `Q(s, a) = wᵀa`, ignoring the state.
fn linear_critic(obs: usize, w: &[f32]) -> Mlp {
    let weight = Tensor::from_fn(obs + w.len(), 1, |r, _| if r < obs { 0.0 } else { w[r - obs] });
    Mlp::from_layers(vec![layer(weight, Tensor::zeros(&[1, 1]))]).unwrap()
}

/// `Q(s, a) = −|a|` for a scalar action, as `−relu(a) − relu(−a)`.
fn abs_critic(obs: usize) -> Mlp {
    let w1 = Tensor::from_fn(obs + 1, 2, |r, c| match (r == obs, c) {
        (true, 0) => 1.0,
        (true, _) => -1.0,
        _ => 0.0,
    });
    let w2 = Tensor::full(&[2, 1], -1.0);
    Mlp::from_layers(vec![
        layer(w1, Tensor::zeros(&[1, 2])),
        layer(w2, Tensor::zeros(&[1, 1])),
    ])
    .unwrap()
}

/// State-independent policy with the given mean and log-std per action.
fn fixed_policy(obs: usize, mean: &[f32], log_std: &[f32]) -> SquashedGaussianPolicy {
    let a = mean.len();
    let bias = Tensor::from_fn(1, 2 * a, |_, c| if c < a { mean[c] } else { log_std[c - a] });
    SquashedGaussianPolicy::from_net(
        Mlp::from_layers(vec![layer(Tensor::zeros(&[obs, 2 * a]), bias)]).unwrap(),
    )
    .unwrap()
}

fn ensemble(online: Vec<Mlp>) -> CriticEnsemble {
    let action_dim = online[0].input_dim() - OBS;
    CriticEnsemble::from_parts(online.clone(), online, action_dim).unwrap()
}

fn toy_batch(b: usize, action_dim: usize, done: f32, rng: &mut Rng) -> Batch {
    let mut draw = |cols| Tensor::from_fn(b, cols, |_, _| rng.uniform_range(-1.0, 1.0) as f32);
    Batch {
        states: draw(OBS),
        actions: draw(action_dim),
        rewards: draw(1),
        next_states: draw(OBS),
        dones: Tensor::full(&[b, 1], done),
    }
}

fn small_config(algorithm: Algorithm) -> TrainConfig {
    let mut cfg = TrainConfig::new(algorithm);
    cfg.ensemble_size = 3;
    cfg.batch_size = 32;
    cfg.hidden_dim = 16;
    cfg.hidden_layers = 2;
    cfg
}

fn random_ensemble(n: usize, hidden: &[usize], rng: &mut Rng) -> CriticEnsemble {
    CriticEnsemble::new(OBS, ACT, hidden, n, false, rng)
}

#[test]
fn terminal_and_myopic_targets_equal_reward() {
    let mut rng = Rng::new(1);
    let policy = SquashedGaussianPolicy::new(OBS, ACT, &[8], &mut rng);
    let critics = random_ensemble(3, &[8], &mut rng);
    let terminal = toy_batch(16, ACT, 1.0, &mut rng);
    let y = critic_target(&terminal, &policy, &critics, 0.5, 0.99, &mut rng).unwrap();
    assert_eq!(y, terminal.rewards);

    let live = toy_batch(16, ACT, 0.0, &mut rng);
    let y = critic_target(&live, &policy, &critics, 0.5, 0.0, &mut rng).unwrap();
    assert_eq!(y, live.rewards);
}

#[test]
fn constant_critic_target_is_closed_form() {
    let mut rng = Rng::new(2);
    let policy = SquashedGaussianPolicy::new(OBS, ACT, &[8], &mut rng);
    let critics = ensemble(vec![constant_critic(OBS + ACT, 3.5)]);
    let batch = toy_batch(16, ACT, 0.0, &mut rng);
    let y = critic_target(&batch, &policy, &critics, 0.0, 0.9, &mut rng).unwrap();
    for b in 0..16 {
        let expect = batch.rewards.get(b, 0) as f64 + 0.9 * 3.5;
        assert!((y.get(b, 0) as f64 - expect).abs() < 1e-6);
    }
}

#[test]
fn perfect_fit_has_zero_loss() {
    let mut rng = Rng::new(3);
    let batch = toy_batch(8, ACT, 0.0, &mut rng);
    let critics = ensemble(vec![constant_critic(OBS + ACT, -1.25); 4]);
    let y = Tensor::full(&[8, 1], -1.25);
    let loss = critic_loss(&batch, &critics, &y, 0.0, Diversity::GradientCosine).unwrap();
    assert_eq!(loss.total, 0.0);
    assert_eq!(loss.regression, 0.0);
}

#[test]
fn identical_critics_have_unit_diversity() {
    let mut rng = Rng::new(4);
    let batch = toy_batch(16, ACT, 0.0, &mut rng);
    let one = Mlp::new(&[OBS + ACT, 8, 8, 1], false, &mut rng);
    let critics = ensemble(vec![one.clone(), one]);
    let y = Tensor::zeros(&[16, 1]);
    let loss = critic_loss(&batch, &critics, &y, 1.0, Diversity::GradientCosine).unwrap();
    assert!((loss.diversity - 1.0).abs() < 1e-6, "{}", loss.diversity);
    assert!((loss.total - loss.regression - 1.0).abs() < 1e-6);
}

#[test]
fn orthogonal_linear_critics_have_zero_diversity() {
    let mut rng = Rng::new(5);
    let batch = toy_batch(16, 2, 0.0, &mut rng);
    let critics = ensemble(vec![linear_critic(OBS, &[1.0, 0.0]), linear_critic(OBS, &[0.0, 2.0])]);
    let y = Tensor::zeros(&[16, 1]);
    let loss = critic_loss(&batch, &critics, &y, 1.0, Diversity::GradientCosine).unwrap();
    assert!(loss.diversity.abs() < 1e-9, "{}", loss.diversity);

    // cos 60° for w₂ rotated towards w₁.
    let critics = ensemble(vec![
        linear_critic(OBS, &[1.0, 0.0]),
        linear_critic(OBS, &[0.5, 0.75f32.sqrt()]),
    ]);
    let loss = critic_loss(&batch, &critics, &y, 1.0, Diversity::GradientCosine).unwrap();
    assert!((loss.diversity - 0.5).abs() < 1e-6, "{}", loss.diversity);
}

#[test]
fn diversity_needs_two_critics() {
    let mut rng = Rng::new(6);
    let batch = toy_batch(4, ACT, 0.0, &mut rng);
    let critics = random_ensemble(1, &[4], &mut rng);
    let y = Tensor::zeros(&[4, 1]);
    let err = critic_loss(&batch, &critics, &y, 1.0, Diversity::GradientCosine).unwrap_err();
    assert!(matches!(err, Error::Config(_)));

    let mut cfg = TrainConfig::new(Algorithm::Edac);
    cfg.ensemble_size = 1;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
}

#[test]
fn edac_loss_gradient_matches_finite_differences() {
    let mut rng = Rng::new(7);
    let batch = toy_batch(6, 2, 0.0, &mut rng);
    let critics = {
        let online = (0..3)
            .map(|_| Mlp::new(&[OBS + 2, 5, 5, 1], false, &mut rng))
            .collect::<Vec<_>>();
        ensemble(online)
    };
    let y = Tensor::from_fn(6, 1, |_, _| rng.normal() as f32);
    let mut obj = critic_objective::<f64>(
        &critics,
        &batch.states,
        &batch.actions,
        &y,
        0.7,
        Diversity::GradientCosine,
    )
    .unwrap();
    let opts = FdOptions::with_epsilon(1e-6);
    let mut checked = 0;
    for &leaf in &obj.params {
        let report = finite_diff_check(&mut obj.graph, obj.loss, leaf, opts).unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
        checked += report.checked;
    }
    assert!(checked > 100);
}

#[test]
fn critic_loss_excludes_target_networks() {
    let mut rng = Rng::new(8);
    let policy = SquashedGaussianPolicy::new(OBS, ACT, &[8], &mut rng);
    let mut critics = random_ensemble(3, &[8, 8], &mut rng);
    let batch = toy_batch(16, ACT, 0.0, &mut rng);
    let y = critic_target(&batch, &policy, &critics, 0.2, 0.99, &mut Rng::new(0)).unwrap();

    let grads = |c: &CriticEnsemble| {
        let mut obj = critic_objective::<f32>(c, &batch.states, &batch.actions, &y, 0.0, Diversity::GradientCosine)
            .unwrap();
        assert!(matches!(obj.graph.op(obj.target), Op::Leaf { trainable: false }));
        let online: usize = c.online().iter().map(|m| m.params().len()).sum();
        assert_eq!(obj.params.len(), online);
        assert!(obj
            .params
            .iter()
            .all(|&p| matches!(obj.graph.op(p), Op::Leaf { trainable: true })));
        obj.graph.backward(obj.loss, &obj.params).unwrap()
    };
    let before = grads(&critics);

    for t in critics.target_mut() {
        for p in t.params_mut() {
            p.data_mut().iter_mut().for_each(|x| *x += 0.5);
        }
    }
    let moved = critic_target(&batch, &policy, &critics, 0.2, 0.99, &mut Rng::new(0)).unwrap();
    assert_ne!(moved, y);
    assert_eq!(grads(&critics), before);
}

#[test]
fn actor_gradient_pushes_mean_towards_the_critic_maximum() {
    let critics = ensemble(vec![abs_critic(OBS)]);
    let states = Tensor::from_fn(8, OBS, |r, c| (r + c) as f32 * 0.1);
    let noise = Tensor::from_fn(8, 1, |r, _| (r as f32 - 3.5) * 0.4);
    for mu in [0.5f32, -0.5] {
        let policy = fixed_policy(OBS, &[mu], &[-5.0]);
        let mut obj = actor_objective::<f64>(&policy, &critics, &states, &noise, 0.0).unwrap();
        let grads = obj.graph.backward(obj.loss, &obj.params).unwrap();
        let d_mean = grads[1].get(0, 0);
        // Descent moves μ against the gradient, i.e. towards zero.
        assert_eq!(d_mean.signum(), mu.signum() as f64, "mu {mu}: {d_mean}");
    }
}

#[test]
fn actor_q_gradient_is_independent_of_alpha() {
    let mut rng = Rng::new(10);
    let critics = random_ensemble(2, &[8], &mut rng);
    let policy = SquashedGaussianPolicy::new(OBS, ACT, &[8], &mut rng);
    let states = Tensor::from_fn(16, OBS, |_, _| rng.uniform_range(-1.0, 1.0) as f32);
    let noise = policy.noise(16, &mut rng);
    let grad = |alpha: f64| {
        let mut obj = actor_objective::<f64>(&policy, &critics, &states, &noise, alpha).unwrap();
        let g = obj.graph.backward(obj.loss, &obj.params).unwrap();
        g.into_iter().flat_map(|t| t.data().to_vec()).collect::<Vec<f64>>()
    };
    let (g0, g1, g100) = (grad(0.0), grad(1.0), grad(100.0));
    for i in 0..g0.len() {
        let q_part = g100[i] - 100.0 * (g1[i] - g0[i]);
        assert!((q_part - g0[i]).abs() < 1e-6 * (1.0 + g100[i].abs()), "param {i}");
    }
}

#[test]
fn duplicated_critics_leave_losses_unchanged() {
    let mut rng = Rng::new(11);
    let base = random_ensemble(2, &[8], &mut rng);
    let doubled = {
        let online: Vec<Mlp> = base.online().iter().chain(base.online()).cloned().collect();
        ensemble(online)
    };
    let policy = SquashedGaussianPolicy::new(OBS, ACT, &[8], &mut rng);
    let batch = toy_batch(32, ACT, 0.0, &mut rng);

    let q = |c: &CriticEnsemble| min_over_ensemble(&c.forward(&batch.states, &batch.actions, false).unwrap());
    assert_eq!(q(&base), q(&doubled));

    let noise = policy.noise(32, &mut rng);
    let actor = |c: &CriticEnsemble| {
        let mut obj = actor_objective::<f32>(&policy, c, &batch.states, &noise, 0.3).unwrap();
        obj.graph.evaluate(obj.loss).unwrap().item()
    };
    assert_eq!(actor(&base), actor(&doubled));

    let y = Tensor::from_fn(32, 1, |_, _| rng.normal() as f32);
    let reg = |c: &CriticEnsemble| critic_loss(&batch, c, &y, 0.0, Diversity::GradientCosine).unwrap().regression;
    assert!((reg(&base) - reg(&doubled)).abs() < 1e-6 * reg(&base));

    // A single critic and its duplicate give the same actor loss.
    let single = ensemble(vec![base.online()[0].clone()]);
    let pair = ensemble(vec![base.online()[0].clone(); 2]);
    assert_eq!(actor(&single), actor(&pair));
}

#[test]
fn temperature_follows_the_entropy_gap() {
    let (loss, grad) = temperature_loss(0.3, 1.0, -1.0);
    assert_eq!((loss, grad), (0.0, 0.0));

    let mut rng = Rng::new(12);
    let cfg = small_config(Algorithm::SacN);
    let mut agent = Agent::new(&cfg, OBS, ACT, &mut rng).unwrap();
    let h = cfg.target_entropy(ACT);
    let start = agent.log_alpha();
    agent.update_temperature(-h, h).unwrap();
    assert_eq!(agent.log_alpha(), start);

    agent.update_temperature(-h + 0.5, h).unwrap();
    let up = agent.log_alpha();
    assert!(up > start);

    let mut agent = Agent::new(&cfg, OBS, ACT, &mut Rng::new(12)).unwrap();
    agent.update_temperature(-h - 0.5, h).unwrap();
    assert!(agent.log_alpha() < start);
    assert!(agent.alpha() > 0.0);
}

#[test]
fn learning_rate_resolution() {
    let lb = TrainConfig::new(Algorithm::LbSac);
    assert!((lb.learning_rate().unwrap() - 1.875e-3).abs() < 1e-15);
    assert_eq!(TrainConfig::new(Algorithm::SacN).learning_rate().unwrap(), 3e-4);
    let mut explicit = TrainConfig::new(Algorithm::LbSac);
    explicit.lr = Some(1e-4);
    assert_eq!(explicit.learning_rate().unwrap(), 1e-4);
    explicit.scale_temperature_lr = false;
    assert_eq!(explicit.temperature_learning_rate().unwrap(), 3e-4);

    let mut bad = TrainConfig::new(Algorithm::SacN);
    bad.gamma = 0.0;
    bad.batch_size = 0;
    match bad.validate() {
        Err(Error::Config(p)) => assert_eq!(p.len(), 2, "{p:?}"),
        other => panic!("{other:?}"),
    }
}

fn run_steps(cfg: &TrainConfig, steps: usize) -> (Vec<lbsac_core::algorithms::StepReport>, Agent) {
    let data = generate_dataset(EnvId::PointMass1d, Behavior::Medium, 400, 0).unwrap();
    let mut rng = Rng::new(cfg.seed);
    let mut agent = Agent::new(cfg, OBS, ACT, &mut rng).unwrap();
    let reports = (0..steps)
        .map(|_| agent.train_step(cfg, &data, &mut rng).unwrap())
        .collect();
    (reports, agent)
}

#[test]
fn training_is_deterministic() {
    let mut cfg = small_config(Algorithm::Edac);
    cfg.seed = 5;
    let (a, agent_a) = run_steps(&cfg, 100);
    let (b, agent_b) = run_steps(&cfg, 100);
    assert_eq!(a, b);
    assert_eq!(agent_a, agent_b);
    assert_eq!(agent_a.step(), 100);
    assert!(a.iter().all(|r| r.diversity > -1.0 && r.diversity <= 1.0));
}

#[test]
fn lb_sac_is_sac_n_with_other_hyperparameters() {
    let mut sac = small_config(Algorithm::SacN);
    sac.lr = Some(6e-4);
    let mut lb = small_config(Algorithm::LbSac);
    lb.lr = Some(6e-4);
    let (a, agent_a) = run_steps(&sac, 20);
    let (b, agent_b) = run_steps(&lb, 20);
    assert_eq!(a, b);
    assert_eq!(agent_a, agent_b);

    // Without an explicit rate the scaled rule applies at the same batch.
    lb.lr = None;
    lb.base_batch_size = 32;
    sac.lr = Some(lb.base_lr);
    let (a, _) = run_steps(&sac, 5);
    let (b, _) = run_steps(&lb, 5);
    assert_eq!(a, b);
}

#[test]
fn batch_may_equal_dataset_size() {
    let data = generate_dataset(EnvId::PointMass1d, Behavior::Random, 64, 1).unwrap();
    let mut cfg = small_config(Algorithm::SacN);
    cfg.batch_size = 64;
    let mut rng = Rng::new(0);
    let mut agent = Agent::new(&cfg, OBS, ACT, &mut rng).unwrap();
    agent.train_step(&cfg, &data, &mut rng).unwrap();

    cfg.batch_size = 65;
    let err = agent.train_step(&cfg, &data, &mut rng).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn critic_step_descends_on_a_fixed_batch() {
    let mut cfg = small_config(Algorithm::SacN);
    cfg.ensemble_size = 1;
    cfg.lr = Some(1e-4);
    let mut rng = Rng::new(13);
    let mut agent = Agent::new(&cfg, OBS, ACT, &mut rng).unwrap();
    let batch = toy_batch(64, ACT, 0.0, &mut rng);
    let y = Tensor::from_fn(64, 1, |_, _| rng.normal() as f32);
    let policy = agent.policy.clone();
    let before = agent.update_critics(&cfg, &batch, &y).unwrap();
    let after = critic_loss(&batch, &agent.critics, &y, 0.0, cfg.diversity).unwrap();
    assert!(after.total < before.total, "{} -> {}", before.total, after.total);
    assert_eq!(agent.policy, policy);
}

#[test]
fn checkpoint_round_trip_resumes_identically() {
    let cfg = small_config(Algorithm::Edac);
    let data = generate_dataset(EnvId::PointMass1d, Behavior::Medium, 400, 0).unwrap();
    let mut rng = Rng::new(3);
    let mut agent = Agent::new(&cfg, OBS, ACT, &mut rng).unwrap();
    for _ in 0..5 {
        agent.train_step(&cfg, &data, &mut rng).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    agent.save(dir.path()).unwrap();
    let mut loaded = Agent::load(dir.path()).unwrap();
    assert_eq!(loaded, agent);

    let mut rng_b = Rng::from_state(rng.state());
    for _ in 0..5 {
        let a = agent.train_step(&cfg, &data, &mut rng).unwrap();
        let b = loaded.train_step(&cfg, &data, &mut rng_b).unwrap();
        assert_eq!(a, b);
    }

    std::fs::write(dir.path().join("critic.lbo"), b"LBO1").unwrap();
    assert!(Agent::load(dir.path()).is_err());
}
