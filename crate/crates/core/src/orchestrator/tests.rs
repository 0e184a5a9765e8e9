use super::*;
use crate::catalog::{Health, MonitorSample, SiteDescriptor};
use crate::datamgr::{DatasetSpec, FileEntry, StorageQos, TransferConfig};
use crate::tosca::Locality;
use matchmaking::Decision;
use alloc::vec;
use proptest::prelude::*;

#[test]
fn lifecycle_graph_shape() {
    use DeploymentState::*;
    for s in DeploymentState::ALL {
        assert!(!legal(Deleted, s), "DELETED -> {s}");
        if s != Deleted && s != Deleting {
            assert!(legal(s, Failed) || s == Failed, "{s} cannot fail");
            assert!(legal(s, Deleting), "{s} cannot be deleted");
        }
    }
    assert!(legal(Failed, Matched));
    assert!(!legal(Failed, Running));
    assert!(legal(Running, Scaling) && legal(Scaling, Running));
    assert!(!legal(Created, Running));
    assert!(!legal(Matched, Configuring));
    // every state is reachable from CREATED
    let mut seen = BTreeSet::from([Created]);
    let mut frontier = vec![Created];
    while let Some(s) = frontier.pop() {
        for t in DeploymentState::ALL {
            if legal(s, t) && seen.insert(t) {
                frontier.push(t);
            }
        }
    }
    assert_eq!(seen.len(), DeploymentState::ALL.len());
}

fn site_state(catalog: &mut Catalog, id: &str, free_cpu: u64, gpu: bool, classes: &[SlaClass], error_rate: f64, cost: u64) {
    let mut caps = BTreeSet::new();
    if gpu {
        caps.insert(Capability::Gpu);
    }
    catalog
        .register_site(SiteDescriptor {
            site_id: SiteId::new(id),
            capabilities: caps,
            capacity: ResourceVector::new(16, 64, 500),
            storage_capacity: Amount::units(100_000),
            supported_sla_classes: classes.iter().copied().collect(),
            base_cost: Amount::units(cost),
        })
        .unwrap();
    catalog
        .ingest_metrics(MonitorSample {
            site_id: SiteId::new(id),
            timestamp: 0,
            free: ResourceVector::new(free_cpu, free_cpu * 4, free_cpu * 30),
            error_rate,
            latency_ms: 10.0,
        })
        .unwrap();
}

fn owner() -> AccountId {
    AccountId::new("acc-1")
}

fn dataset(data: &mut DataManager, catalog: &Catalog, at: &[&str]) -> DatasetId {
    let id = data
        .add_dataset(DatasetSpec {
            dataset_id: Some(DatasetId::new("ds")),
            space: String::from("ds"),
            files: vec![FileEntry { path: String::from("f"), size: 1 << 30, checksum: String::from("c") }],
            owner: owner(),
        })
        .unwrap();
    for s in at {
        data.put_replica(catalog, &id, &SiteId::new(*s), 1.0, StorageQos::SINGLE).unwrap();
    }
    id
}

fn request(cpu: u64, gpu: bool, datasets: Vec<DatasetId>, locality: Locality, class: SlaClass) -> MatchRequest {
    MatchRequest {
        owner: owner(),
        class,
        locality,
        capabilities: if gpu { BTreeSet::from([Capability::Gpu]) } else { BTreeSet::new() },
        asks: vec![NodeAsk { node: String::from("vm"), demand: ResourceVector::new(cpu, cpu, cpu) }],
        datasets,
        excluded: BTreeSet::new(),
        check_fit: true,
    }
}

fn run(catalog: &Catalog, data: &DataManager, req: &MatchRequest) -> (MatchRecord, Result<Decision, MatchFailure>) {
    let slam = SlaManager::new();
    let rules = RuleSet::default_rules();
    let ctx = MatchContext { catalog, rules: &rules, slam: &slam, data, nominal_rate: 100e6 };
    matchmaking::matchmake(&ctx, req, 1)
}

#[test]
fn single_healthy_site_no_data() {
    let mut catalog = Catalog::new();
    site_state(&mut catalog, "s1", 8, false, &[SlaClass::Bronze], 0.0, 1);
    let data = DataManager::new(TransferConfig::default());
    let (record, out) = run(&catalog, &data, &request(2, false, vec![], Locality::PreferData, SlaClass::Bronze));
    let d = out.unwrap();
    assert_eq!(d.site_id, SiteId::new("s1"));
    assert_eq!(d.data_plan, DataPlan::None);
    matchmaking::replay(&record).unwrap();
}

#[test]
fn prefer_data_picks_the_holder() {
    let mut catalog = Catalog::new();
    site_state(&mut catalog, "s1", 16, false, &[SlaClass::Bronze], 0.0, 1);
    site_state(&mut catalog, "s2", 4, false, &[SlaClass::Bronze], 0.0, 3);
    let mut data = DataManager::new(TransferConfig::default());
    let ds = dataset(&mut data, &catalog, &["s2"]);
    let (record, out) = run(&catalog, &data, &request(2, false, vec![ds.clone()], Locality::PreferData, SlaClass::Bronze));
    assert_eq!(record.ranking.ordered[0].site_id, SiteId::new("s1"));
    let d = out.unwrap();
    assert_eq!((d.site_id.as_str(), d.data_plan), ("s2", DataPlan::Colocate));
    matchmaking::replay(&record).unwrap();

    let (_, out) = run(&catalog, &data, &request(2, false, vec![ds], Locality::PreferCompute, SlaClass::Bronze));
    let d = out.unwrap();
    assert_eq!(d.site_id, SiteId::new("s1"));
    assert!(matches!(d.data_plan, DataPlan::Migrate { ref transfers } if transfers.len() == 1));
}

#[test]
fn holder_without_capability_means_migration() {
    let mut catalog = Catalog::new();
    site_state(&mut catalog, "s1", 8, true, &[SlaClass::Bronze], 0.0, 1);
    site_state(&mut catalog, "s2", 8, false, &[SlaClass::Bronze], 0.0, 1);
    let mut data = DataManager::new(TransferConfig::default());
    let ds = dataset(&mut data, &catalog, &["s2"]);
    let (record, out) = run(&catalog, &data, &request(2, true, vec![ds.clone()], Locality::PreferData, SlaClass::Bronze));
    let d = out.unwrap();
    assert_eq!(d.site_id, SiteId::new("s1"));
    let DataPlan::Migrate { transfers } = d.data_plan else { panic!("{:?}", d.data_plan) };
    assert_eq!(transfers, vec![matchmaking::PlannedTransfer { dataset: ds, src: SiteId::new("s2"), dst: SiteId::new("s1") }]);
    assert!(record.migration_estimate_secs.unwrap() > 0.0);
    matchmaking::replay(&record).unwrap();
}

#[test]
fn unsupported_class_everywhere_is_an_sla_failure() {
    let mut catalog = Catalog::new();
    site_state(&mut catalog, "s1", 8, false, &[SlaClass::Bronze], 0.0, 1);
    let data = DataManager::new(TransferConfig::default());
    let (record, out) = run(&catalog, &data, &request(2, false, vec![], Locality::PreferData, SlaClass::Gold));
    assert!(matches!(out, Err(MatchFailure::SlaViolation { .. })));
    matchmaking::replay(&record).unwrap();
}

#[test]
fn tampered_record_fails_replay() {
    let mut catalog = Catalog::new();
    site_state(&mut catalog, "s1", 8, false, &[SlaClass::Bronze], 0.0, 1);
    site_state(&mut catalog, "s2", 1, false, &[SlaClass::Bronze], 0.0, 1);
    let data = DataManager::new(TransferConfig::default());
    let (mut record, out) = run(&catalog, &data, &request(2, false, vec![], Locality::PreferData, SlaClass::Bronze));
    assert_eq!(out.unwrap().site_id, SiteId::new("s1"));
    record.chosen = Some(SiteId::new("s2"));
    assert!(matchmaking::replay(&record).is_err());
}

#[derive(Clone, Debug)]
struct SiteCase {
    free_cpu: u64,
    gpu: bool,
    gold: bool,
    unhealthy: bool,
    holds: bool,
    cost: u64,
}

fn site_case() -> impl Strategy<Value = SiteCase> {
    (0u64..12, any::<bool>(), any::<bool>(), prop::bool::weighted(0.2), any::<bool>(), 1u64..5)
        .prop_map(|(free_cpu, gpu, gold, unhealthy, holds, cost)| SiteCase { free_cpu, gpu, gold, unhealthy, holds, cost })
}

/// Expected site and plan from the decision rule alone, taking the broker's
/// order as given.
fn oracle(cases: &[SiteCase], order: &[SiteId], cpu: u64, gpu: bool, gold: bool, with_data: bool, prefer_data: bool) -> Option<(usize, &'static str)> {
    let idx = |s: &SiteId| s.as_str()[1..].parse::<usize>().unwrap();
    let eligible = |c: &SiteCase| !c.unhealthy && (!gpu || c.gpu) && c.free_cpu >= cpu && (!gold || c.gold);
    let ranked: Vec<usize> = order.iter().map(idx).filter(|i| eligible(&cases[*i])).collect();
    let any_holder = with_data && cases.iter().any(|c| c.holds);
    if with_data && !any_holder {
        return None;
    }
    let pick = if prefer_data && any_holder {
        ranked.iter().copied().find(|i| cases[*i].holds).or(ranked.first().copied())
    } else {
        ranked.first().copied()
    }?;
    let plan = if !with_data {
        "none"
    } else if cases[pick].holds {
        "colocate"
    } else {
        "migrate"
    };
    Some((pick, plan))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn decision_rule_matches_oracle(
        cases in prop::collection::vec(site_case(), 1..6),
        cpu in 1u64..6,
        gpu in any::<bool>(),
        gold in any::<bool>(),
        with_data in any::<bool>(),
        prefer_data in any::<bool>(),
    ) {
        let mut catalog = Catalog::new();
        for (i, c) in cases.iter().enumerate() {
            let mut classes = vec![SlaClass::Bronze];
            if c.gold {
                classes.push(SlaClass::Gold);
            }
            site_state(&mut catalog, &format!("s{i}"), c.free_cpu, c.gpu, &classes, if c.unhealthy { 0.9 } else { 0.0 }, c.cost);
        }
        let mut data = DataManager::new(TransferConfig::default());
        let holders: Vec<String> = cases.iter().enumerate().filter(|(_, c)| c.holds).map(|(i, _)| format!("s{i}")).collect();
        let datasets = if with_data {
            let at: Vec<&str> = holders.iter().map(String::as_str).collect();
            vec![dataset(&mut data, &catalog, &at)]
        } else {
            vec![]
        };
        let locality = if prefer_data { Locality::PreferData } else { Locality::PreferCompute };
        let class = if gold { SlaClass::Gold } else { SlaClass::Bronze };
        let req = request(cpu, gpu, datasets, locality, class);
        let (record, out) = run(&catalog, &data, &req);
        prop_assert_eq!(matchmaking::replay(&record), Ok(()));
        // the oracle only sees the ranking's order, not its filters
        let order: Vec<SiteId> = {
            let mut all: Vec<SiteId> = record.ranking.ordered.iter().map(|r| r.site_id.clone()).collect();
            all.extend(record.ranking.rejected.iter().map(|r| r.site_id.clone()));
            all
        };
        let expected = oracle(&cases, &order, cpu, gpu, gold, with_data, prefer_data);
        match (expected, out) {
            (None, Err(_)) => {}
            (Some((i, plan)), Ok(d)) => {
                prop_assert_eq!(d.site_id, SiteId::new(format!("s{i}")));
                let got = match d.data_plan {
                    DataPlan::None => "none",
                    DataPlan::Colocate => "colocate",
                    DataPlan::Migrate { .. } => "migrate",
                };
                prop_assert_eq!(got, plan);
            }
            (e, o) => prop_assert!(false, "oracle {:?} vs {:?}", e, o.map(|d| d.site_id)),
        }
    }
}

#[test]
fn unhealthy_sites_are_filtered() {
    let mut catalog = Catalog::new();
    site_state(&mut catalog, "s1", 8, false, &[SlaClass::Bronze], 0.9, 1);
    assert_eq!(catalog.state(&SiteId::new("s1"), 1).unwrap().health, Health::Unhealthy);
    let data = DataManager::new(TransferConfig::default());
    let (_, out) = run(&catalog, &data, &request(1, false, vec![], Locality::PreferData, SlaClass::Bronze));
    assert!(matches!(out, Err(MatchFailure::NoEligibleSite { .. })));
}
