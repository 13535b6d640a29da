use super::*;
use crate::gridmodel::write_network;

fn small(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk_scale(seed);
    cfg.network = NetworkSource::Generated(FeederSpec::new(12, seed).with_time_steps(2));
    cfg.time_steps = 2;
    cfg.partition = PartitionChoice::Contiguous { areas: 2 };
    cfg.admm = AdmmConfig {
        max_iters: 40,
        ..AdmmConfig::for_rows(10)
    };
    cfg
}

#[test]
fn config_validation() {
    assert!(small(1).validate().is_ok());
    let broken: Vec<Box<dyn Fn(&mut ExperimentConfig)>> = vec![
        Box::new(|c| c.fraction = 0.0),
        Box::new(|c| c.fraction = 1.5),
        Box::new(|c| c.noise_pct = -1.0),
        Box::new(|c| c.time_steps = 0),
        Box::new(|c| c.time_steps = 3),
        Box::new(|c| c.n_runs = 0),
        Box::new(|c| c.partition = PartitionChoice::Manifest),
        Box::new(|c| c.partition = PartitionChoice::Contiguous { areas: 0 }),
        Box::new(|c| c.admm.mu = 0.0),
        Box::new(|c| c.admm.rank = 11),
    ];
    for f in broken {
        let mut cfg = small(1);
        f(&mut cfg);
        assert!(execute(&cfg, Schedule::InOrder).is_err(), "{cfg:?}");
    }
}

#[test]
fn payload_is_deterministic_across_schedules() {
    let cfg = small(2);
    let base = payload_json(&execute(&cfg, Schedule::InOrder).unwrap().payload).unwrap();
    for schedule in [Schedule::InOrder, Schedule::Permuted { seed: 9 }, Schedule::Parallel] {
        assert_eq!(payload_json(&execute(&cfg, schedule).unwrap().payload).unwrap(), base);
    }
}

#[test]
fn runs_are_merged_in_order() {
    let mut cfg = small(3);
    cfg.n_runs = 3;
    let res = execute(&cfg, Schedule::InOrder).unwrap();
    let runs = &res.payload.runs;
    assert_eq!(runs.iter().map(|r| (r.run, r.seed)).collect::<Vec<_>>(), vec![(0, 3), (1, 4), (2, 5)]);
    let mean = runs.iter().map(|r| r.estimate.mape_magnitude).sum::<f64>() / 3.0;
    assert!((res.payload.estimate.mape_magnitude - mean).abs() < 1e-12);
    assert!(res.payload.estimate.ci95.is_some());
    // every run must see its own mask and noise
    assert_ne!(runs[0].estimate, runs[1].estimate);
}

#[test]
fn full_observability_reaches_the_linear_floor() {
    // shrinkage biases the top singular value by 1/μ, so the check needs the
    // full-size feeder
    let mut cfg = ExperimentConfig::desk_scale(4);
    cfg.fraction = 1.0;
    cfg.noise_pct = 0.0;
    cfg.mask_policy = MaskPolicy::Uniform;
    cfg.partition = PartitionChoice::Contiguous { areas: 1 };
    cfg.admm.max_iters = 500;
    let res = execute(&cfg, Schedule::InOrder).unwrap();
    assert_eq!(res.payload.n_areas, 1);
    assert_eq!(res.payload.truncation_error, 0.0);
    assert!(res.payload.estimate.mape_magnitude <= 1.0, "{:?}", res.payload.estimate);
    assert!(res.payload.runs[0].comm.pairs.is_empty());
}

#[test]
fn writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(5);
    cfg.out_dir = Some(dir.path().join("out"));
    let res = run_experiment(&cfg).unwrap();
    let out = dir.path().join("out");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("results.json")).unwrap()).unwrap();
    assert!(json["metadata"]["created_unix_s"].as_u64().unwrap() > 0);
    assert_eq!(json["results"]["config"]["admm"]["rank"], 10);
    assert_eq!(json["results"]["version"].as_str().unwrap(), version_string());
    assert!(json["results"]["runs"][0]["certificate"]["spectral_norm"].as_f64().is_some());
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("iter,rmse,consensus,objective,max_area_ms"));
    assert_eq!(lines.count(), res.outcomes[0].iterations);
    let spectrum = fs::read_to_string(out.join("spectrum.csv")).unwrap();
    assert!(spectrum.starts_with("index,sigma\n1,"));
    assert_eq!(spectrum.lines().count(), 1 + 10);
}

#[test]
fn failed_write_leaves_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("trace.csv")).unwrap();
    let res = execute(&small(6), Schedule::InOrder).unwrap();
    assert!(write_outputs(dir.path(), &res).is_err());
    assert!(!dir.path().join("results.json").exists());
    assert!(!dir.path().join("spectrum.csv").exists());
}

#[test]
fn manifest_networks_use_their_partition() {
    let dir = tempfile::tempdir().unwrap();
    let f = generate_radial_feeder(&FeederSpec::new(12, 7).with_time_steps(2)).unwrap();
    let part = AreaPartition::contiguous(&f.network, 3).unwrap();
    let manifest = write_network(dir.path(), &f.network, &f.loads, &part).unwrap();
    let mut cfg = small(7);
    cfg.network = NetworkSource::Manifest { path: manifest };
    cfg.partition = PartitionChoice::Manifest;
    let from_file = execute(&cfg, Schedule::InOrder).unwrap();
    assert_eq!(from_file.payload.n_areas, 3);
    cfg.network = NetworkSource::Generated(FeederSpec::new(12, 7).with_time_steps(2));
    cfg.partition = PartitionChoice::Contiguous { areas: 3 };
    let generated = execute(&cfg, Schedule::InOrder).unwrap();
    let (a, b) = (&from_file.payload.runs[0].estimate, &generated.payload.runs[0].estimate);
    assert!((a.mape_magnitude - b.mape_magnitude).abs() < 1e-9);
}

#[test]
fn sweep_parameters() {
    let cfg = small(8);
    assert_eq!(with_param(&cfg, SweepParam::Fraction, 0.3).unwrap().fraction, 0.3);
    let t = with_param(&cfg, SweepParam::TimeSteps, 4.0).unwrap();
    assert_eq!(t.time_steps, 4);
    assert!(t.validate().is_ok());
    let t = with_param(&cfg, SweepParam::TimeSteps, 1.0).unwrap();
    assert_eq!(t.admm.rank, 5);
    assert!(with_param(&cfg, SweepParam::Areas, 2.5).is_err());
    assert_eq!("time-steps".parse::<SweepParam>().unwrap(), SweepParam::TimeSteps);
    let rep = sweep(&cfg, SweepParam::Areas, &[1.0, 2.0]).unwrap();
    assert_eq!(rep.points.len(), 2);
}

#[test]
fn smoothing() {
    assert_eq!(smooth3(&[3.0, 0.0, 3.0, 6.0]), vec![1.5, 2.0, 3.0, 4.5]);
    assert!(is_nonincreasing(&smooth3(&[5.0, 4.0, 4.5, 3.0, 2.0])));
    assert!(!is_nonincreasing(&[1.0, 2.0]));
    assert!(smooth3(&[]).is_empty());
}
