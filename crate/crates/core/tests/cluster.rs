mod common;

use mobility_core::cluster::{
    adjusted_rand_index, evaluate_partition, fit_dpgmm, fit_kmeans, DpHyperparams, DpgmmConfig,
    PartitionResult,
};
use mobility_core::netgraph::{
    all_pairs_distances, build_movement_graph, generate_grid_network, MovementOptions,
};
use common::three_blobs;

#[test]
fn dpgmm_recovers_three_blobs() {
    let mut good = 0;
    for seed in 0..10 {
        let (data, truth) = three_blobs(100 + seed);
        let h = DpHyperparams::from_data(&data);
        let fit = fit_dpgmm(&data, &h, DpgmmConfig { sweeps: 150, burn_in: 50, seed }).unwrap();
        let ari = adjusted_rand_index(&fit.clustering.labels, &truth);
        if fit.clustering.k() == 3 && ari >= 0.9 {
            good += 1;
        }
    }
    assert!(good >= 9, "{good}/10 seeds recovered the blobs");
}

#[test]
fn partition_of_grid_covers_every_link() {
    let net = generate_grid_network(4, 4, 100.0, 10.0, 1).unwrap();
    let g = build_movement_graph(&net, MovementOptions::default()).unwrap();
    let d = all_pairs_distances(&g).unwrap();
    let e = mobility_core::embed::classical_mds(&d, 3).unwrap();
    let km = fit_kmeans(&e, 5, 1).unwrap();
    let p = PartitionResult::from_labels(&km.clustering.labels, &e);
    assert_eq!(p.link_region.len(), net.len());
    for r in 0..p.k() {
        assert!(p.members(r).count() > 0);
        assert_eq!(p.region_of(p.region_center_link[r]), r);
    }
    let eval = evaluate_partition(&p, &d).unwrap();
    assert!(eval.overall_mean > 0.0);
    assert_eq!(eval.region_means.len(), p.k());
}
