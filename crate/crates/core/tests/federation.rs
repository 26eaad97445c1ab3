use std::sync::Arc;

use fedstl::datagen::{generate, ClientData, GenSpec};
use fedstl::experiment::rand_index;
use fedstl::federation::{
    aggregate, cluster_id, prepare_clients, ClientInfo, ClusterInit, FedAvg, FedConfig, Federation,
};
use fedstl::mining::{templates_for_rows, Template, TemplateOptions};
use fedstl::models::{Arch, Batch, ModelState};
use fedstl::stl::{parse, Trace};

fn small_spec(n: usize, groups: usize, seed: u64) -> GenSpec {
    let mut g = GenSpec::new(n, groups, 2, seed);
    g.series_len = 200;
    g.input_len = 12;
    g.output_len = 4;
    g
}

fn arch() -> Arch {
    Arch::LinearAr {
        input_len: 12,
        output_len: 4,
        n_vars: 2,
    }
}

fn setup(
    n: usize,
    groups: usize,
    cfg: &FedConfig,
) -> (Arc<[ClientInfo]>, Vec<Template>, Vec<usize>) {
    let spec = small_spec(n, groups, cfg.seed);
    let (data, labels) = generate(&spec).unwrap();
    let ts = templates_for_rows(&[1, 4], &spec.schema(), 4, TemplateOptions::default()).unwrap();
    (prepare_clients(data, &ts, cfg).unwrap(), ts, labels)
}

fn constant_model(c: f64) -> ModelState {
    let a = Arch::LinearAr {
        input_len: 2,
        output_len: 3,
        n_vars: 1,
    };
    let mut m = ModelState::zeros(a);
    m.private.iter_mut().for_each(|b| *b = c);
    m
}

fn constant_client(level: f64, cfg: &FedConfig) -> ClientInfo {
    let tr = |v: &[f64]| Trace::univariate("x", v).unwrap();
    let b = Batch::new(vec![tr(&[level; 2]); 4], vec![tr(&[level; 3]); 4]).unwrap();
    let data = ClientData {
        id: 0,
        series: tr(&[level; 8]),
        train: b.clone(),
        val: b.clone(),
        test: b.clone(),
        sample: b,
    };
    let phi = parse("G[0,2](x >= 8)").unwrap();
    ClientInfo::new(data, phi.clone(), Some(phi), cfg).unwrap()
}

#[test]
fn client_goes_to_the_cluster_satisfying_its_property() {
    let cfg = FedConfig::default();
    let clients = vec![constant_client(9.0, &cfg)];
    let mut fed = Federation::new(
        clients.into(),
        constant_model(0.0).arch,
        vec![],
        FedConfig {
            n_clusters: 1,
            ..cfg.clone()
        },
    )
    .unwrap();
    fed.clusters.push(fed.clusters[0].clone());
    fed.clusters[0].model = constant_model(0.0);
    fed.clusters[1].model = constant_model(10.0);
    let (a, flagged) = cluster_id(&fed.clusters, &fed.clients, &[0], &[None]).unwrap();
    assert!(flagged.is_empty());
    assert_eq!(a[0].chosen, 1);
    // three steps each 8 below the bound, plus the strictness margin
    assert!((a[0].losses[0] - 24.0).abs() < 1e-4, "{:?}", a[0].losses);
    assert_eq!(a[0].losses[1], 0.0);

    // ties go to the lowest id
    fed.clusters[0].model = constant_model(10.0);
    let (a, _) = cluster_id(&fed.clusters, &fed.clients, &[0], &[None]).unwrap();
    assert_eq!(a[0].chosen, 0);
}

#[test]
fn rounds_keep_invariants() {
    let cfg = FedConfig {
        participation: 0.5,
        n_clusters: 2,
        cluster_period: 2,
        local_epochs: 1,
        cluster_epochs: 1,
        lambda: 0.01,
        seed: 4,
        ..FedConfig::default()
    };
    let (clients, ts, _) = setup(8, 2, &cfg);
    let mut fed = Federation::new(clients, arch(), ts, cfg).unwrap();
    for _ in 0..4 {
        let before = fed.models.clone();
        let info = fed.run_round().unwrap();
        assert_eq!(info.selected.len(), 4);
        // members partition the selected clients
        let mut all: Vec<usize> = fed
            .clusters
            .iter()
            .flat_map(|c| c.members.clone())
            .collect();
        all.sort_unstable();
        assert_eq!(all, info.selected);
        assert_eq!(info.cluster_sizes.iter().sum::<usize>(), 4);
        // every assignment is the argmin of its recorded losses
        for a in &info.assignments {
            let best = a.losses.iter().cloned().fold(f64::INFINITY, f64::min);
            assert_eq!(a.losses[a.chosen], best);
            assert!(a.losses[..a.chosen].iter().all(|l| *l > best));
            assert_eq!(fed.identity[a.client], Some(a.chosen));
        }
        if info.reclustered {
            assert_eq!(info.assignments.len(), 4);
        }
        for i in 0..8 {
            if !info.selected.contains(&i) {
                assert_eq!(fed.models[i], before[i], "client {i} changed while idle");
            }
        }
    }
}

#[test]
fn private_heads_stay_on_clients() {
    let cfg = FedConfig {
        participation: 0.5,
        n_clusters: 2,
        local_epochs: 1,
        cluster_epochs: 0,
        seed: 8,
        ..FedConfig::default()
    };
    let (clients, ts, _) = setup(8, 2, &cfg);
    let mut a = Federation::new(clients, arch(), ts, cfg).unwrap();
    a.run_round().unwrap();
    let mut b = a.clone();
    let next = fedstl::federation::select_clients(&a.config, 8, 1);
    for i in 0..8 {
        if !next.contains(&i) {
            b.models[i].private.iter_mut().for_each(|p| *p = 1e6);
        }
    }
    a.run_round().unwrap();
    b.run_round().unwrap();
    for (x, y) in a.clusters.iter().zip(&b.clusters) {
        assert_eq!(x.model, y.model);
    }
    // the cluster body is exactly the weighted mean of member bodies
    for c in &a.clusters {
        if c.members.is_empty() {
            continue;
        }
        let parts: Vec<(&[f64], usize)> = c
            .members
            .iter()
            .map(|&i| (&a.models[i].shared[..], a.clients[i].n_train()))
            .collect();
        assert_eq!(c.model.shared, aggregate(&parts).unwrap());
    }
}

#[test]
fn degenerate_configuration_is_fedavg() {
    let cfg = FedConfig {
        participation: 1.0,
        n_clusters: 1,
        lambda: 0.0,
        cluster_epochs: 0,
        local_epochs: 2,
        share_private: true,
        seed: 11,
        ..FedConfig::default()
    };
    let (clients, ts, _) = setup(5, 2, &cfg);
    let mut fed = Federation::new(clients.clone(), arch(), ts, cfg.clone()).unwrap();
    let mut avg = FedAvg::new(clients, arch(), cfg).unwrap();
    for _ in 0..5 {
        fed.run_round().unwrap();
        avg.run_round().unwrap();
    }
    assert_eq!(fed.clusters[0].model, avg.global);
}

#[test]
fn rounds_do_not_depend_on_thread_count() {
    let cfg = FedConfig {
        participation: 0.75,
        n_clusters: 2,
        local_epochs: 1,
        cluster_epochs: 1,
        cluster_period: 1,
        lambda: 0.01,
        seed: 2,
        ..FedConfig::default()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let (clients, ts, _) = setup(8, 2, &cfg);
            let mut fed = Federation::new(clients, arch(), ts, cfg.clone()).unwrap();
            for _ in 0..3 {
                fed.run_round().unwrap();
            }
            (
                fed.models,
                fed.clusters
                    .into_iter()
                    .map(|c| c.model)
                    .collect::<Vec<_>>(),
            )
        })
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn seeded_clusters_separate_planted_groups() {
    let cfg = FedConfig {
        participation: 1.0,
        n_clusters: 3,
        cluster_period: 1,
        local_epochs: 1,
        cluster_epochs: 1,
        lambda: 0.01,
        cluster_init: ClusterInit::Seeded,
        seed: 3,
        ..FedConfig::default()
    };
    let (clients, ts, labels) = setup(12, 3, &cfg);
    let mut fed = Federation::new(clients, arch(), ts, cfg).unwrap();
    for _ in 0..2 {
        fed.run_round().unwrap();
    }
    let ident = fed.full_identity().unwrap();
    assert_eq!(rand_index(&ident, &labels), 1.0, "{ident:?} vs {labels:?}");
}
