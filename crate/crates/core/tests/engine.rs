use std::fs;
use std::path::Path;

use dprelease::budgeter::{repartition, Actor, LedgerError, RepartitionInput};
use dprelease::composition::BatchRejection;
use dprelease::engine::{
    Audience, BudgetConfig, EngineError, Registry, ReleaseBatch, METADATA_FORMAT_VERSION,
};
use dprelease::mechanisms::{BinSpec, VariableSpec};
use dprelease::request::Transform;
use dprelease::rng::seeded_rng;
use dprelease::{CompositionRule, Estimate, PrivacyParams, StatisticKind, StatisticRequest};

const SENTINEL: &str = "77.123456789";

fn schema() -> Vec<VariableSpec> {
    vec![
        VariableSpec::numeric("age", 0.0, 100.0),
        VariableSpec::numeric("income", 0.0, 200_000.0),
        VariableSpec::categorical("region", ["north", "south", "east", "west"]),
        VariableSpec::boolean("employed"),
    ]
}

fn write_csv(dir: &Path, rows: usize) -> std::path::PathBuf {
    let mut s = String::from("age,income,region,employed\n");
    let regions = ["north", "south", "east", "west", "mars"];
    for i in 0..rows {
        let age = if i == 17 {
            SENTINEL.to_string()
        } else {
            ((i * 37) % 90).to_string()
        };
        s.push_str(&format!(
            "{age},{},{},{}\n",
            (i * 7919) % 150_000,
            regions[i % 5],
            u8::from(i % 3 != 0)
        ));
    }
    let path = dir.join("people.csv");
    fs::write(&path, s).unwrap();
    path
}

fn registry_with(budget: BudgetConfig) -> (tempfile::TempDir, Registry) {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_csv(dir.path(), 1000);
    let reg = Registry::new(dir.path().join("data")).unwrap();
    let report = reg.ingest("people", &csv, schema(), false).unwrap();
    assert_eq!(report.n, 1000);
    reg.set_budget("people", &budget).unwrap();
    (dir, reg)
}

fn budget() -> BudgetConfig {
    BudgetConfig::new(PrivacyParams::new(1.0, 1e-6).unwrap()).with_depositor_epsilon(0.5)
}

fn mean(id: &str, var: &str, eps: f64) -> StatisticRequest {
    StatisticRequest::new(id, var, StatisticKind::Mean).with_epsilon(eps)
}

#[test]
fn depositor_release_lands_in_public_metadata() {
    let (_d, reg) = registry_with(budget());
    let h = reg.open("people").unwrap();
    let batch = ReleaseBatch::new(vec![
        mean("age-mean", "age", 0.1),
        StatisticRequest::new("region-hist", "region", StatisticKind::Histogram).with_epsilon(0.1),
        StatisticRequest::new("income-cdf", "income", StatisticKind::Cdf)
            .with_epsilon(0.1)
            .with_grid(16),
        StatisticRequest::new("age-median", "age", StatisticKind::Quantile).with_epsilon(0.1),
        StatisticRequest::derived(
            "senior-employed",
            Transform {
                program: "(age >= 65) * employed".into(),
                lower: None,
                upper: None,
            },
            StatisticKind::Mean,
        )
        .with_epsilon(0.05),
    ]);
    let out = h
        .release(&Actor::depositor(), &batch, &mut seeded_rng(1))
        .unwrap();
    assert_eq!(out.records.len(), 5);
    assert!((out.remaining.epsilon - (0.5 - out.cost.epsilon)).abs() < 1e-12);
    assert!(out.cost.epsilon <= 0.45 + 1e-12);

    let meta = h.public_metadata().unwrap();
    assert_eq!(meta.format_version(), METADATA_FORMAT_VERSION);
    assert_eq!(meta.n(), 1000);
    assert_eq!(meta.releases().len(), 5);
    let hist = &meta.releases()[1];
    match hist.value() {
        Estimate::Histogram { labels, counts } => {
            assert_eq!(labels.len(), 5);
            assert!(counts.iter().all(|&c| c >= 0.0));
        }
        other => panic!("{other:?}"),
    }
    let derived = &meta.releases()[4];
    assert_eq!(derived.variable(), "senior-employed");
    assert_eq!(derived.transform(), Some("(age >= 65) * employed"));
    let json = meta.to_json_pretty();
    assert!(!json.contains(SENTINEL), "raw value leaked");
}

#[test]
fn semi_trusted_release_is_private_to_the_user() {
    let (_d, reg) = registry_with(budget());
    let h = reg.open("people").unwrap();
    h.release(
        &Actor::depositor(),
        &ReleaseBatch::new(vec![mean("m", "age", 0.1)]),
        &mut seeded_rng(2),
    )
    .unwrap();
    h.release(
        &Actor::semi_trusted("alice"),
        &ReleaseBatch::new(vec![mean("alice-m", "income", 0.1)]),
        &mut seeded_rng(3),
    )
    .unwrap();
    let public = h.public_metadata().unwrap();
    let alice = h.user_metadata("alice").unwrap();
    let bob = h.user_metadata("bob").unwrap();
    assert_eq!(public.releases().len(), 1);
    assert_eq!(alice.releases().len(), 2);
    assert_eq!(bob.releases().len(), 1);
    for r in public.releases() {
        assert!(alice.releases().contains(r));
    }
    assert_eq!(alice.audience(), &Audience::User("alice".into()));
}

#[test]
fn tampered_totals_are_ignored() {
    let (_d, reg) = registry_with(budget());
    let h = reg.open("people").unwrap();
    let mut batch = ReleaseBatch::new(vec![mean("a", "age", 0.4), mean("b", "income", 0.4)]);
    batch.claimed_total = Some(PrivacyParams::pure(0.01));
    let err = h
        .release(&Actor::depositor(), &batch, &mut seeded_rng(4))
        .unwrap_err();
    match err {
        EngineError::Ledger(LedgerError::Rejected(BatchRejection::OverBudget {
            cost,
            remaining,
        })) => {
            assert!(cost.epsilon > 0.5);
            assert_eq!(remaining.epsilon, 0.5);
        }
        other => panic!("{other}"),
    }
    assert!(h.ledger().records().is_empty());
}

#[test]
fn borderline_batch_is_accepted() {
    let (_d, reg) = registry_with(budget());
    let h = reg.open("people").unwrap();
    let out = h
        .release(
            &Actor::depositor(),
            &ReleaseBatch::new(vec![mean("a", "age", 0.5 - 1e-9)]),
            &mut seeded_rng(5),
        )
        .unwrap();
    assert!(out.remaining.epsilon < 2e-9);
}

#[test]
fn repartitioned_plan_releases_unchanged() {
    let (_d, reg) = registry_with(budget());
    let h = reg.open("people").unwrap();
    let plan = repartition(&RepartitionInput {
        global: h.budget().global,
        sample: None,
        depositor_epsilon: h.budget().depositor_epsilon,
        n: h.dataset().n(),
        variables: schema(),
        requests: vec![
            StatisticRequest::new("a", "age", StatisticKind::Mean),
            StatisticRequest::new("r", "region", StatisticKind::Histogram),
            StatisticRequest::new("i", "income", StatisticKind::Cdf),
            StatisticRequest::new("e", "employed", StatisticKind::Histogram)
                .with_bins(BinSpec::Uniform { count: 2 }),
        ],
        rule: CompositionRule::default(),
    })
    .unwrap();
    let out = h
        .release(
            &Actor::depositor(),
            &ReleaseBatch::new(plan.requests),
            &mut seeded_rng(6),
        )
        .unwrap();
    assert_eq!(out.records.len(), 4);
    assert!(out.remaining.epsilon < 1e-6 * 0.5);
}

#[test]
fn empty_batch_spends_nothing() {
    let (_d, reg) = registry_with(budget());
    let h = reg.open("people").unwrap();
    let out = h
        .release(
            &Actor::depositor(),
            &ReleaseBatch::new(vec![]),
            &mut seeded_rng(7),
        )
        .unwrap();
    assert!(out.records.is_empty());
    assert!(h.ledger().records().is_empty());
}

#[test]
fn repeated_batch_draws_fresh_noise() {
    let (_d, reg) = registry_with(budget());
    let h = reg.open("people").unwrap();
    let mut rng = seeded_rng(8);
    let batch = ReleaseBatch::new(vec![mean("a", "income", 0.05)]);
    let a = h.release(&Actor::depositor(), &batch, &mut rng).unwrap();
    let b = h.release(&Actor::depositor(), &batch, &mut rng).unwrap();
    assert_ne!(a.batch_id, b.batch_id);
    assert_ne!(a.records[0].value(), b.records[0].value());
}

#[test]
fn mechanism_failure_refunds_the_batch() {
    let (_d, reg) = registry_with(budget());
    let h = reg.open("people").unwrap();
    let mut snapped = mean("s", "age", 0.001);
    snapped.snapping = true;
    // n·ε = 1 is too small for the snapping mechanism.
    let err = h
        .release(
            &Actor::depositor(),
            &ReleaseBatch::new(vec![mean("ok", "age", 0.1), snapped]),
            &mut seeded_rng(9),
        )
        .unwrap_err();
    assert!(matches!(err, EngineError::Mechanism(_)), "{err}");
    assert_eq!(h.remaining(&Actor::depositor()).unwrap().epsilon, 0.5);
    assert!(h.public_metadata().unwrap().releases().is_empty());
    assert_eq!(
        h.ledger().records().len(),
        2,
        "deduction and refund are both journaled"
    );
}

#[test]
fn snapping_mean_is_released_on_request() {
    let (_d, reg) = registry_with(budget());
    let h = reg.open("people").unwrap();
    let mut snapped = mean("s", "age", 0.2);
    snapped.snapping = true;
    let out = h
        .release(
            &Actor::depositor(),
            &ReleaseBatch::new(vec![snapped]),
            &mut seeded_rng(10),
        )
        .unwrap();
    assert_eq!(out.records[0].mechanism(), "snapping");
    let Estimate::Scalar { value } = out.records[0].value() else {
        panic!()
    };
    assert!((0.0..=100.0).contains(value));
}

#[test]
fn reingest_and_budget_guards() {
    let (d, reg) = registry_with(budget());
    let csv = d.path().join("people.csv");
    assert!(matches!(
        reg.ingest("people", &csv, schema(), false),
        Err(EngineError::DatasetExists(_))
    ));
    let h = reg.open("people").unwrap();
    h.release(
        &Actor::depositor(),
        &ReleaseBatch::new(vec![mean("a", "age", 0.1)]),
        &mut seeded_rng(11),
    )
    .unwrap();
    let bigger = BudgetConfig::new(PrivacyParams::new(2.0, 1e-6).unwrap());
    assert!(matches!(
        reg.set_budget("people", &bigger),
        Err(EngineError::BudgetLocked(_))
    ));
    // Forced re-ingest keeps the spent budget.
    reg.ingest("people", &csv, schema(), true).unwrap();
    let h = reg.open("people").unwrap();
    assert!((h.remaining(&Actor::depositor()).unwrap().epsilon - 0.4).abs() < 1e-12);
    assert_eq!(h.public_metadata().unwrap().releases().len(), 1);
}

#[test]
fn state_survives_reopening() {
    let (d, reg) = registry_with(budget());
    let h = reg.open("people").unwrap();
    h.release(
        &Actor::untrusted("eve"),
        &ReleaseBatch::new(vec![mean("a", "age", 0.1)]),
        &mut seeded_rng(12),
    )
    .unwrap();
    drop(h);
    drop(reg);
    let reg = Registry::new(d.path().join("data")).unwrap();
    let h = reg.open("people").unwrap();
    // Shared pool is half of the analyst share ε_a = 0.5.
    assert!((h.remaining(&Actor::untrusted("x")).unwrap().epsilon - 0.15).abs() < 1e-12);
    assert_eq!(h.public_metadata().unwrap().releases().len(), 1);
}

#[test]
fn unknown_and_invalid_ids() {
    let (_d, reg) = registry_with(budget());
    assert!(matches!(
        reg.open("nope"),
        Err(EngineError::UnknownDataset(_))
    ));
    assert!(matches!(reg.open("../etc"), Err(EngineError::Invalid(_))));
    let h = reg.open("people").unwrap();
    let batch = ReleaseBatch::new(vec![mean("a", "age", 0.1)]).with_id("bad id");
    assert!(matches!(
        h.release(&Actor::depositor(), &batch, &mut seeded_rng(13)),
        Err(EngineError::Invalid(_))
    ));
}
