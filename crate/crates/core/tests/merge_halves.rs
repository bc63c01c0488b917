use shardgraph::eval::{brute_force_knn, connectivity_check};
use shardgraph::graph::{build_subgraph, BuildParams, GraphView};
use shardgraph::merge::{merge_pair_detailed, overlap_count};
use shardgraph::partition::{partition, PartitionParams};
use shardgraph::synth::generate_clustered;

#[test]
fn two_halves_from_an_omega_two_plan() {
    let ds = generate_clustered(1000, 8, 6, 0.08, 31).unwrap();
    // Γ = N gives Φ = 2
    let params = PartitionParams::new(2, 1.3, 1000, 31);
    let plan = partition(&ds, &params).unwrap();
    assert_eq!(plan.phi(), 2);
    plan.check_invariants().unwrap();
    let shared = overlap_count(&plan.subsets[0], &plan.subsets[1]);
    assert!(shared > 0 && shared < 1000, "shared {shared}");
    println!("shared points: {shared}");

    let bp = BuildParams {
        r: 16,
        l_build: 32,
        alpha: 1.2,
        seed: 3,
    };
    let ga = build_subgraph(&plan.subsets[0], &ds, &bp).unwrap();
    let gb = build_subgraph(&plan.subsets[1], &ds, &bp).unwrap();
    let (g, stats) = merge_pair_detailed(&ga, &gb, &ds, &bp).unwrap();
    assert_eq!(stats.overlap, shared);
    assert_eq!(g.len(), 1000);
    assert!(g.max_degree() <= 16);
    assert_eq!(connectivity_check(&g).unwrap(), 1.0);

    let view = GraphView::new(&g).unwrap();
    let mut scratch = view.scratch();
    let mut hits = 0;
    for id in 0..1000u32 {
        let truth = brute_force_knn(&ds, ds.row(id), 1).unwrap();
        let got = view.search(&ds, ds.row(id), 32, 1, &mut scratch).unwrap();
        hits += usize::from(got.ids == truth);
    }
    assert!(
        hits >= 990,
        "self-recall {hits}/1000 with {shared} shared points"
    );
}
