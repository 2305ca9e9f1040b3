//! Property tests for the spec invariants that hold over arbitrary inputs.

#![allow(clippy::needless_range_loop)]

mod support;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use swarmdiff::diffusion::{
    diffusion_probability, erfc_approx, permeability, permeability_prefactor, FragmentId,
    FragmentSwarmStats, PROBABILITY_FLOOR,
};
use swarmdiff::forecast::{
    wavelet_decompose, wavelet_reconstruct, AlteredSwarmStats, SeriesKind, SwarmSeries,
};
use swarmdiff::metric::{ordered_peers, LatencyView, NodeId};
use swarmdiff::scheduler::{
    fragment_permeabilities, rebuild_matrix, select_most_urgent, ReachTimeMode, ScheduleContext,
};

fn view_strategy() -> impl Strategy<Value = LatencyView> {
    (2usize..12, any::<u64>()).prop_map(|(n, seed)| {
        let mut rng = support::rng(seed);
        let mut view = LatencyView::new(NodeId(0));
        for j in 1..n {
            let delta = rand::Rng::gen_range(&mut rng, 0.001..0.5);
            view.record(NodeId(j), delta, 0).unwrap();
        }
        view
    })
}

proptest! {
    #[test]
    fn ordered_peers_is_a_sorted_permutation_with_owner_first(view in view_strategy()) {
        let list = ordered_peers(&view);
        prop_assert_eq!(list.sequence()[0], view.owner());
        prop_assert_eq!(list.len(), view.len());

        let from_view: BTreeSet<NodeId> = view.nodes().collect();
        let from_list: BTreeSet<NodeId> = list.sequence().iter().copied().collect();
        prop_assert_eq!(from_view, from_list);

        for pair in list.sequence().windows(2) {
            prop_assert!(view.delta(pair[0]).unwrap() <= view.delta(pair[1]).unwrap());
        }

        // Idempotent on an unchanged view.
        prop_assert_eq!(&list, &ordered_peers(&view));
    }

    #[test]
    fn probability_is_exactly_the_kernel_composition(
        prefactor in 1e-3..10.0f64,
        delta in 1e-3..5.0f64,
    ) {
        let raw = prefactor * erfc_approx(prefactor * delta).unwrap();
        prop_assume!(raw < 1.0 && raw > PROBABILITY_FLOOR);
        let p = diffusion_probability(prefactor, delta).unwrap();
        prop_assert_eq!(p.value(), raw);
    }

    #[test]
    fn nearer_peers_are_more_reachable(
        permeability_value in 0.05..50.0f64,
        elapsed in 0.001..10.0f64,
        d1 in 1e-3..1.0f64,
        gap in 1e-3..3.0f64,
    ) {
        let p = permeability_prefactor(permeability_value, elapsed).unwrap();
        let near = diffusion_probability(p, d1).unwrap().value();
        let far = diffusion_probability(p, d1 + gap).unwrap().value();
        // Clamping can make both saturate; strictness applies below the
        // ceiling.
        prop_assert!(far <= near);
        if near < 0.999 && far > PROBABILITY_FLOOR {
            prop_assert!(far < near);
        }
    }

    #[test]
    fn permeability_is_scale_consistent(
        users in 1u64..1000,
        seeders_fraction in 0.0..1.0f64,
        rho in 0.0..3.0f64,
        factor in 2u64..50,
    ) {
        let seeders = (users as f64 * seeders_fraction) as u64;
        let base = FragmentSwarmStats::new(FragmentId(0), users, seeders, rho).unwrap();
        let scaled =
            FragmentSwarmStats::new(FragmentId(0), users * factor, seeders * factor, rho).unwrap();
        let d1 = permeability(&base).unwrap();
        let d2 = permeability(&scaled).unwrap();
        prop_assert!((d1 - d2).abs() <= 1e-12 * d1.abs().max(1.0));
    }

    #[test]
    fn wavelet_round_trip_is_within_1e9(
        seed in any::<u64>(),
        len_choice in 0usize..3,
        levels in 1usize..5,
    ) {
        let len = [64, 128, 256][len_choice];
        let mut rng = support::rng(seed);
        let samples = support::random_series(&mut rng, len);
        let series = SwarmSeries::new(SeriesKind::Requests, samples.clone());
        let decomp = wavelet_decompose(&series, levels).unwrap();
        let back = wavelet_reconstruct(&decomp).unwrap();
        let scale = samples.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        for (a, b) in samples.iter().zip(&back.samples) {
            prop_assert!((a - b).abs() / scale < 1e-9);
        }
    }

    #[test]
    fn altered_stats_always_satisfy_the_invariants(
        users in any::<f64>(),
        seeders in any::<f64>(),
        rho in any::<f64>(),
    ) {
        let s = AlteredSwarmStats::from_raw(FragmentId(0), users, seeders, rho);
        prop_assert!(s.users_total >= 0.0);
        prop_assert!(s.seeders >= 0.0);
        prop_assert!(s.seeders <= s.users_total);
        prop_assert!(s.mean_share_ratio >= 0.0);
        prop_assert!(s.users_total.is_finite());
    }

    #[test]
    fn selection_agrees_with_the_exhaustive_oracle(seed in any::<u64>()) {
        let mut rng = support::rng(seed);
        let instance = support::random_selection_instance(&mut rng);
        let (matrix, view) = support::instance_matrix_and_view(&instance);
        let got = select_most_urgent(&matrix, &view, instance.step, instance.c)
            .map(|s| (s.peer.index(), s.fragment.index()));
        prop_assert_eq!(got, support::oracle_select(&instance));
    }

    #[test]
    fn served_pairs_are_never_selected_again(seed in any::<u64>()) {
        let mut rng = support::rng(seed);
        let nodes = rand::Rng::gen_range(&mut rng, 3usize..8);
        let fragments = rand::Rng::gen_range(&mut rng, 1usize..4);
        let owner = NodeId(0);

        let mut view = LatencyView::new(owner);
        for j in 1..nodes {
            view.record(NodeId(j), rand::Rng::gen_range(&mut rng, 0.01..0.4), 0)
                .unwrap();
        }
        let owned: BTreeSet<FragmentId> = (0..fragments).map(FragmentId).collect();
        let queues: Vec<BTreeSet<NodeId>> = (0..fragments)
            .map(|_| (1..nodes).map(NodeId).collect())
            .collect();
        let stats: BTreeMap<FragmentId, FragmentSwarmStats> = (0..fragments)
            .map(|k| {
                let users = rand::Rng::gen_range(&mut rng, 2u64..12);
                let seeders = rand::Rng::gen_range(&mut rng, 1u64..=users);
                (
                    FragmentId(k),
                    FragmentSwarmStats::new(FragmentId(k), users, seeders, 0.3).unwrap(),
                )
            })
            .collect();
        let permeability_map = fragment_permeabilities(&stats);

        let mut served: BTreeSet<(NodeId, FragmentId)> = BTreeSet::new();
        let mut served_counts = vec![0usize; fragments];

        // Repeatedly select and mark served; the same pair must never win
        // twice and the candidate count must shrink to zero.
        for _ in 0..(nodes * fragments) {
            let matrix = rebuild_matrix(&ScheduleContext {
                owner,
                node_count: nodes,
                fragment_count: fragments,
                owned: &owned,
                permeability: &permeability_map,
                view: &view,
                queues: &queues,
                served: &served,
                served_counts: &served_counts,
                reach_time_mode: ReachTimeMode::Served,
                step: 0,
            });
            for &(peer, fragment) in &served {
                prop_assert!(!matrix.is_candidate(peer, fragment));
            }
            match select_most_urgent(&matrix, &view, 0, 0.5) {
                Some(selection) => {
                    prop_assert!(!served.contains(&(selection.peer, selection.fragment)));
                    served.insert((selection.peer, selection.fragment));
                    served_counts[selection.fragment.index()] += 1;
                }
                None => break,
            }
        }
    }
}

proptest! {
    #[test]
    fn tie_heavy_selection_agrees_with_the_exhaustive_oracle(seed in any::<u64>()) {
        let mut rng = support::rng(seed);
        let instance = support::tie_prone_selection_instance(&mut rng);
        let (matrix, view) = support::instance_matrix_and_view(&instance);
        let got = select_most_urgent(&matrix, &view, instance.step, instance.c)
            .map(|s| (s.peer.index(), s.fragment.index()));
        prop_assert_eq!(got, support::oracle_select(&instance));
    }
}
