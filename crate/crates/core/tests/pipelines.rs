//! End-to-end behaviour of valuation, continual, augmentation and harness
//! on small synthetic tasks.

use distval::augment::{discretize, sample_augmentor, train_augmented, Augmentor, Operator, SamplingGranularity};
use distval::classifier::{train_parts, TrainConfig};
use distval::continual::{baseline_average, batch_posterior, run_stream};
use distval::datamodel::{Dataset, SourceCollection};
use distval::harness::{
    evaluate, mmd_baseline, run_experiment, timing_report, ExperimentConfig, ExperimentReport, Scenario,
};
use distval::synth::{
    corrupt_labels, corrupt_sources, gaussian_mixture, split_sources, split_stream, GaussianMixture, NoiseSpec,
};
use distval::transferability::{leep, logme, Measure};
use distval::valuation::{
    annotator_scores, annotator_valuation, augmentation_scores, augmentation_valuation, build_reference,
    materialize, Prior, ReferenceMode, ReferenceSet, Tau, ValuationRecipe,
};
use distval::Error;

fn quick_train() -> TrainConfig {
    TrainConfig::default().with_iterations(150)
}

fn noisy_annotators(seed: u64) -> (SourceCollection, Dataset) {
    let mixture = GaussianMixture::new(4, 6, 3.0, seed).unwrap();
    let pool = mixture.sample(150, seed + 1).unwrap();
    let clean = split_sources(&pool, 5, seed + 2).unwrap();
    let sources = corrupt_sources(&clean, &NoiseSpec::linear(5), seed + 3).unwrap();
    (sources, mixture.sample(50, seed + 4).unwrap())
}

#[test]
fn annotator_posterior_falls_with_noise() {
    let (sources, reference) = noisy_annotators(0);
    let v = annotator_valuation(
        &sources,
        &ReferenceSet::labeled(reference),
        &ValuationRecipe::annotator(Measure::Leep),
        &Prior::Uniform,
        Tau::Quick,
        &quick_train(),
    )
    .unwrap();
    let p = v.posterior();
    assert!(p.windows(2).all(|w| w[0] > w[1]), "{p:?}");
    assert!((v.tau() - 1.0 / 5f64.log2()).abs() < 1e-15);
}

#[test]
fn identical_sources_share_mass_under_every_measure() {
    let ds = gaussian_mixture(3, 4, 20, 2.0, 9).unwrap();
    let sources = SourceCollection::from_pairs([("a", ds.clone()), ("b", ds.clone())]).unwrap();
    for measure in [Measure::Leep, Measure::LogMe, Measure::NegMmd, Measure::CondNegMmd] {
        let v = annotator_valuation(
            &sources,
            &ReferenceSet::labeled(ds.clone()),
            &ValuationRecipe::annotator(measure),
            &Prior::Uniform,
            Tau::Quick,
            &quick_train(),
        )
        .unwrap();
        assert!((v.posterior()[0] - 0.5).abs() < 1e-9, "{measure}");
    }
    let energy = ValuationRecipe::annotator(Measure::EtranEnergy).with_reference_mode(ReferenceMode::UnlabeledEnergy);
    let v = annotator_valuation(
        &sources,
        &ReferenceSet::unlabeled(ds),
        &energy,
        &Prior::Uniform,
        Tau::Quick,
        &quick_train(),
    )
    .unwrap();
    assert!((v.posterior()[0] - 0.5).abs() < 1e-9);
}

#[test]
fn reference_modes_follow_contract() {
    let a = gaussian_mixture(2, 3, 5, 2.0, 0).unwrap();
    let b = gaussian_mixture(2, 3, 8, 2.0, 1).unwrap().select(&(0..15).collect::<Vec<_>>()).unwrap();
    let sources = SourceCollection::from_pairs([("a", a.clone()), ("b", b.clone())]).unwrap();
    let union = build_reference(&sources, None, ReferenceMode::UnionOfSources).unwrap();
    assert_eq!(union.len(), 25);
    assert_eq!(union.dataset().labels()[..10], *a.labels());
    let labeled = build_reference(&sources, Some(&a), ReferenceMode::Labeled).unwrap();
    assert_eq!(labeled.dataset(), &a);
    assert!(build_reference(&sources, None, ReferenceMode::Labeled).is_err());

    let unlabeled = build_reference(&sources, Some(&a), ReferenceMode::UnlabeledEnergy).unwrap();
    let err = unlabeled.labels().unwrap_err();
    assert!(matches!(err, Error::LabelsUnavailable), "{err}");
    assert!(err.to_string().contains("labels unavailable"));
    let recipe = ValuationRecipe::annotator(Measure::Leep);
    assert!(annotator_scores(&sources, &unlabeled, &recipe, &quick_train()).is_err());
}

#[test]
fn mmd_baseline_is_softmax_of_conditional_mmd() {
    let (sources, reference) = noisy_annotators(1);
    let v = mmd_baseline(&sources, &reference, 1.0).unwrap();
    let max = v.scores().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = v.scores().iter().map(|s| (s - max).exp()).sum();
    for (p, s) in v.posterior().iter().zip(v.scores()) {
        assert!((p - (s - max).exp() / z).abs() < 1e-12);
    }
}

fn universal(train_set: &Dataset) -> distval::classifier::Model {
    train_parts(&[(train_set, 1.0)], &TrainConfig::default()).unwrap()
}

#[test]
fn identical_augmentors_split_evenly() {
    let train_set = gaussian_mixture(3, 4, 30, 3.0, 2).unwrap();
    let m = universal(&train_set);
    let augs = [Augmentor::identity(), Augmentor::identity()];
    let v = augmentation_valuation(&train_set, &augs, &m, Measure::Leep, &Prior::Uniform, Tau::Quick, 0).unwrap();
    assert!((v.posterior()[0] - 0.5).abs() < 1e-12);
}

#[test]
fn identity_outweighs_heavy_noise() {
    let train_set = gaussian_mixture(4, 6, 30, 3.0, 3).unwrap();
    let m = universal(&train_set);
    let augs = [Augmentor::identity(), Augmentor::new(Operator::AddGaussianNoise, 10.0).unwrap()];
    let v = augmentation_valuation(&train_set, &augs, &m, Measure::Leep, &Prior::Uniform, Tau::Quick, 0).unwrap();
    assert!(v.posterior()[0] > v.posterior()[1]);
}

#[test]
fn augmentation_scores_match_direct_scoring() {
    let train_set = gaussian_mixture(3, 5, 20, 3.0, 4).unwrap();
    let m = universal(&train_set);
    let mut augs = vec![Augmentor::identity()];
    augs.extend(discretize(Operator::Scale, 0.5, 2.0, 3).unwrap());
    augs.push(Augmentor::new(Operator::AddGaussianNoise, 1.0).unwrap());
    augs.push(Augmentor::rotate_plane(30.0, (0, 2)).unwrap());
    for measure in [Measure::Leep, Measure::LogMe] {
        let scores = augmentation_scores(&train_set, &augs, &m, measure, 17).unwrap();
        for (aug, s) in augs.iter().zip(&scores) {
            let d = materialize(aug, &train_set, 17).unwrap();
            let direct = match measure {
                Measure::Leep => leep(m.predict_proba(d.features()).unwrap().view(), d.labels(), 3).unwrap(),
                _ => logme(m.extract_features(d.features()).unwrap().view(), d.labels(), 3).unwrap(),
            };
            assert!((s.score - direct.value).abs() < 1e-12, "{aug}");
            assert_eq!(d.labels(), train_set.labels());
        }
    }
}

#[test]
fn identical_augmentors_train_like_a_point_mass() {
    let train_set = gaussian_mixture(3, 4, 20, 3.0, 5).unwrap();
    let dup = [Augmentor::identity(), Augmentor::identity()];
    let ids = vec!["a".to_string(), "b".to_string()];
    let split = distval::valuation::Valuation::from_distribution(
        ids.clone(),
        vec![0.5, 0.5],
        vec![0.0, 0.0],
        1.0,
        vec![0.3, 0.7],
    )
    .unwrap();
    let point = distval::valuation::Valuation::point_mass(ids, 0).unwrap();
    let config = TrainConfig::default().with_iterations(40);
    for granularity in [SamplingGranularity::PerBatch, SamplingGranularity::PerImage] {
        let a = train_augmented(&train_set, &dup, &split, &config, granularity).unwrap();
        let b = train_augmented(&train_set, &dup, &point, &config, granularity).unwrap();
        for (x, y) in a.weights().iter().zip(b.weights()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn sampler_respects_point_mass() {
    let augs = [Augmentor::identity(), Augmentor::new(Operator::Scale, 2.0).unwrap()];
    let v = distval::valuation::Valuation::point_mass(vec!["i".into(), "s".into()], 1).unwrap();
    for seed in 0..50 {
        assert_eq!(sample_augmentor(&augs, &v, seed).unwrap(), &augs[1]);
    }
}

#[test]
fn stream_steps_are_disjoint_and_keep_noise_levels() {
    let (_, _) = noisy_annotators(0);
    let mixture = GaussianMixture::new(3, 4, 3.0, 6).unwrap();
    let clean = split_sources(&mixture.sample(40, 1).unwrap(), 4, 2).unwrap();
    let noise = NoiseSpec::new(vec![0.0, 0.25, 0.5, 0.75]).unwrap().permuted(8);
    let stream = split_stream(&clean, 4, &noise, 9).unwrap();
    assert_eq!(stream.steps.len(), 4);
    for s in 0..4 {
        let mut used: Vec<usize> = stream.rows.iter().flat_map(|step| step[s].clone()).collect();
        let total = used.len();
        used.sort_unstable();
        used.dedup();
        assert_eq!(used.len(), total, "row reused across steps for source {s}");
        assert_eq!(total, clean.iter().nth(s).unwrap().dataset.len());
    }
    for t in 1..=4 {
        let mut eps = stream.epsilons_at(&noise, t);
        eps.sort_by(f64::total_cmp);
        assert_eq!(eps, noise.epsilons);
    }
    let single = split_stream(&clean, 1, &NoiseSpec::new(vec![0.0; 4]).unwrap(), 0).unwrap();
    for (step, src) in single.steps[0].sources.iter().zip(&clean) {
        assert_eq!(step.dataset.len(), src.dataset.len());
    }
}

#[test]
fn stream_fold_equals_batch_of_step_scores() {
    let mixture = GaussianMixture::new(3, 5, 3.0, 10).unwrap();
    let clean = split_sources(&mixture.sample(60, 1).unwrap(), 5, 2).unwrap();
    let noise = NoiseSpec::linear(5).permuted(3);
    let stream = split_stream(&clean, 4, &noise, 4).unwrap();
    let reference = ReferenceSet::labeled(mixture.sample(30, 5).unwrap());
    let recipe = ValuationRecipe::annotator(Measure::LogMe);
    let config = TrainConfig::default().with_iterations(60);
    let tau = Tau::Quick.resolve(5).unwrap();
    let traj = run_stream(stream.steps.clone(), &reference, &recipe, &Prior::Uniform, tau, &config).unwrap();
    let per_step: Vec<Vec<f64>> = stream
        .steps
        .iter()
        .map(|s| annotator_scores(&s.sources, &reference, &recipe, &config).unwrap().iter().map(|x| x.score).collect())
        .collect();
    let batch = batch_posterior(&[0.2; 5], &per_step, tau).unwrap();
    for (a, b) in traj.last().posterior().iter().zip(&batch) {
        assert!((a - b).abs() <= 1e-10 * b);
    }
    let one_shot = annotator_valuation(
        &stream.steps[0].sources,
        &reference,
        &recipe,
        &Prior::Uniform,
        Tau::Fixed(tau),
        &config,
    )
    .unwrap();
    assert_eq!(traj.at(1).unwrap().posterior(), one_shot.posterior());
    let avg = baseline_average(&traj, 4).unwrap();
    assert!((avg.posterior().iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn stream_rejects_changing_sources() {
    let ds = gaussian_mixture(2, 3, 10, 2.0, 0).unwrap();
    let a = SourceCollection::from_pairs([("a", ds.clone()), ("b", ds.clone())]).unwrap();
    let b = SourceCollection::from_pairs([("a", ds.clone()), ("c", ds.clone())]).unwrap();
    let steps = vec![
        distval::continual::StreamStep { index: 1, sources: a },
        distval::continual::StreamStep { index: 2, sources: b },
    ];
    let r = run_stream(
        steps,
        &ReferenceSet::labeled(ds),
        &ValuationRecipe::annotator(Measure::Leep),
        &Prior::Uniform,
        1.0,
        &quick_train(),
    );
    assert!(r.is_err());
}

#[test]
fn flip_fraction_concentrates() {
    let ds = gaussian_mixture(5, 2, 200, 3.0, 0).unwrap();
    let noisy = corrupt_labels(&ds, 0.4, 1).unwrap();
    let flipped = ds.labels().iter().zip(noisy.labels()).filter(|(a, b)| a != b).count();
    let frac = flipped as f64 / ds.len() as f64;
    assert!((0.35..=0.45).contains(&frac), "{frac}");
}

#[test]
fn well_separated_mixture_is_learnable() {
    let ds = gaussian_mixture(4, 5, 50, 10.0, 3).unwrap();
    let model = train_parts(&[(&ds, 1.0)], &TrainConfig::default().with_iterations(200)).unwrap();
    assert!(model.accuracy(&ds).unwrap() >= 0.99);
}

fn small(scenario: Scenario, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(scenario, seed);
    c.data.classes = 4;
    c.data.dim = 6;
    c.data.per_class = if scenario == Scenario::Augmentation { 10 } else { 30 };
    c.data.reference_per_class = 20;
    c.data.test_per_class = 40;
    c.train.iterations = 120;
    c.continual.valuation_iterations = 40;
    c
}

fn assert_report_invariants(r: &ExperimentReport) {
    let sums = |v: &[f64]| (v.iter().sum::<f64>() - 1.0).abs() < 1e-9;
    assert!(sums(r.valuation.posterior()) && sums(r.valuation.prior()));
    for w in r.weightings.values() {
        assert!(sums(w));
    }
    for step in &r.steps {
        assert!(sums(&step.posterior));
        assert!(step.accuracies.values().all(|a| (0.0..=1.0).contains(a)));
    }
    assert!(r.accuracies.values().all(|a| (0.0..=1.0).contains(a)));
    assert!(r.sources.iter().filter_map(|s| s.accuracy).all(|a| (0.0..=1.0).contains(&a)));
}

#[test]
fn annotator_report_schema_and_reproducibility() {
    let config = small(Scenario::Annotator, 0);
    let r = run_experiment(&config).unwrap();
    assert_eq!(r.sources.len(), 5);
    assert!(r.sources.iter().all(|s| s.accuracy.is_some()));
    for key in ["gbv", "uniform", "mmd"] {
        assert!(r.accuracies.contains_key(key));
    }
    assert_report_invariants(&r);
    let t = timing_report(&r);
    assert_eq!(t.per_source.len(), 5);
    assert!(t.mean > 0.0 && t.stderr >= 0.0);
    assert!(t.per_source.iter().sum::<f64>() <= r.timings.valuation_total + 1e-3);

    let again = run_experiment(&config).unwrap();
    assert_eq!(r.without_timings().to_json().unwrap(), again.without_timings().to_json().unwrap());
    let parsed: ExperimentReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    assert_eq!(parsed, r);
    assert_eq!(evaluate(&[r]).len(), 4);
}

#[test]
fn correlation_report_with_best_tau() {
    let r = run_experiment(&small(Scenario::Correlation, 1)).unwrap();
    assert_eq!(r.tau_search.len(), 5);
    assert!(r.tau_search.iter().any(|c| c.tau == r.tau));
    assert!(r.correlations.contains_key("gbv"));
    assert_report_invariants(&r);
}

#[test]
fn continual_report_has_every_step_and_method() {
    let mut config = small(Scenario::Continual, 2);
    config.continual.per_class_per_step = 5;
    let r = run_experiment(&config).unwrap();
    assert_eq!(r.steps.len(), 4);
    for step in &r.steps {
        for key in ["cgbv", "no_update", "average", "uniform"] {
            assert!(step.accuracies.contains_key(key));
        }
    }
    assert_eq!(r.trajectory.as_ref().unwrap().steps(), 4);
    assert_report_invariants(&r);
    let mut union = config.clone();
    union.reference_mode = ReferenceMode::UnionOfSources;
    assert!(run_experiment(&union).is_err());
}

#[test]
fn augmentation_report() {
    let r = run_experiment(&small(Scenario::Augmentation, 3)).unwrap();
    assert_eq!(r.valuation.len(), 16);
    for key in ["gbv", "uniform", "no_augmentation"] {
        assert!(r.accuracies.contains_key(key));
    }
    assert_report_invariants(&r);
    let mut best = small(Scenario::Augmentation, 3);
    best.tau = Tau::Best;
    assert!(run_experiment(&best).is_err());
}

#[test]
fn invalid_configs_are_rejected_with_context() {
    let mut c = small(Scenario::Annotator, 0);
    c.data.sources = 0;
    assert!(run_experiment(&c).is_err());
    let mut c = small(Scenario::Annotator, 0);
    c.data.classes = 1;
    let err = run_experiment(&c).unwrap_err().to_string();
    assert!(err.contains("annotator") && err.contains("seed 0"), "{err}");
}
