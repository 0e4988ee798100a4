use dcoach::env::{Environment, TrackDrive, TrackDriveConfig};
use dcoach::teachers::{Oracle, TrackOracle};

#[test]
fn track_oracle_keeps_the_car_on_the_road() {
    let mut env = TrackDrive::new(TrackDriveConfig::default()).unwrap();
    let oracle = TrackOracle::default();
    let mut finished = 0;
    let mut returns = Vec::new();
    for seed in 0..100 {
        env.reset(seed);
        let mut total = 0.0;
        loop {
            let a = oracle.act(&env);
            let out = env.step(&a).unwrap();
            total += out.info.step_return;
            if out.done {
                if out.info.done_reason == Some(dcoach::env::DoneReason::TimeLimit) {
                    finished += 1;
                }
                break;
            }
        }
        returns.push(total);
    }
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    println!("oracle: {finished}/100 on track, mean return {mean:.1}");
    assert!(finished >= 95, "only {finished}/100 episodes stayed on the road");
}
