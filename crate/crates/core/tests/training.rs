use liveroom::config::ExperimentConfig;
use liveroom::harness::{mean_return, run_training, AgentKind};

#[test]
fn sac_returns_beat_random_policy() {
    let mut c = ExperimentConfig::default();
    c.env.satiation_mean = 1.5;
    c.agent.gamma = 0.2;
    c.agent.hidden = vec![32, 32];
    let (mut sac, mut random) = (0.0, 0.0);
    for seed in 0..5 {
        c.seed = seed;
        let trained = run_training(&c, AgentKind::Sac, None, 30_000, 1).unwrap();
        let baseline = run_training(&c, AgentKind::Random, None, 0, 1).unwrap();
        sac += mean_return(&c, &trained.agent, 2000, 1).unwrap();
        random += mean_return(&c, &baseline.agent, 2000, 1).unwrap();
    }
    assert!(sac > random, "sac {} vs random {}", sac / 5.0, random / 5.0);
}

#[test]
fn workers_do_not_change_training() {
    let mut c = ExperimentConfig::default();
    c.seed = 4;
    c.agent.hidden = vec![8];
    let a = run_training(&c, AgentKind::Sarsa, None, 3000, 1).unwrap();
    let b = run_training(&c, AgentKind::Sarsa, None, 3000, 5).unwrap();
    assert_eq!(a.stats, b.stats);
    assert_eq!(
        serde_json::to_string(&a.agent).unwrap(),
        serde_json::to_string(&b.agent).unwrap()
    );
}
