use proptest::prelude::*;

use ptree_core::eval::tree_nll;
use ptree_core::numerics::softmax_in_place;
use ptree_core::training::{hierarchical_loss, loss_reweight, solve_sample_weights, AssociationMatrix};
use ptree_core::tree::NodeId;
use ptree_core::{kmeans, match_trees, Matrix, OptimizerMode, OptimizerState, PlateauScheduler, PosteriorTree, TreeLayout};

fn probs_from_logits(logits: &[f64]) -> Vec<f64> {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    p
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// (K, d, dim, leaves, logits), with some logits pushed far down so that
/// near-zero probabilities show up.
fn random_tree_parts() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>, Vec<f64>)> {
    (1usize..=3, 1usize..=3, 1usize..=3).prop_flat_map(|(k, d, dim)| {
        let n = k.pow(d as u32);
        (
            Just(k),
            Just(d),
            Just(dim),
            prop::collection::vec(-10.0f64..10.0, n * dim),
            prop::collection::vec(prop_oneof![4 => -4.0f64..4.0, 1 => Just(-60.0)], n),
        )
    })
}

fn build((k, d, dim, leaves, logits): &(usize, usize, usize, Vec<f64>, Vec<f64>)) -> PosteriorTree {
    let layout = TreeLayout::new(*k, *d).unwrap();
    PosteriorTree::build(leaves, &probs_from_logits(logits), layout, *dim).unwrap()
}

fn independent_greedy(tree: &PosteriorTree, x: &[f64]) -> Vec<usize> {
    let k = tree.layout().degree();
    let mut path = vec![0];
    for level in 1..=tree.layout().depth() {
        let parent = *path.last().unwrap();
        let children: Vec<usize> = (parent * k..parent * k + k).collect();
        let best = children
            .iter()
            .copied()
            .min_by(|&a, &b| sq(tree.value(level, a), x).total_cmp(&sq(tree.value(level, b), x)).then(a.cmp(&b)))
            .unwrap();
        path.push(best);
    }
    path
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn softmax_is_a_probability_vector(logits in prop::collection::vec(-1e3f64..1e3, 1..40)) {
        let p = probs_from_logits(&logits);
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn built_trees_satisfy_invariants(parts in random_tree_parts()) {
        let tree = build(&parts);
        tree.check_invariants(1e-9).unwrap();
        let layout = tree.layout();
        for level in 0..=layout.depth() {
            prop_assert!((tree.level_probs(level).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        // Telescoping of the weighted mean down to the leaves.
        for level in 0..layout.depth() {
            for i in 0..layout.level_size(level) {
                let alpha = tree.prob(level, i);
                if alpha <= 1e-9 {
                    continue;
                }
                let mut expect = vec![0.0; tree.dim()];
                for leaf in tree.descendant_leaves(level, i) {
                    let a = tree.prob(layout.depth(), leaf);
                    for (e, v) in expect.iter_mut().zip(tree.value(layout.depth(), leaf)) {
                        *e += v * a / alpha;
                    }
                }
                for (e, v) in expect.iter().zip(tree.value(level, i)) {
                    prop_assert!((e - v).abs() <= 1e-9, "level {level} node {i}: {e} vs {v}");
                }
            }
        }
    }

    #[test]
    fn rebuilding_from_leaves_is_idempotent(parts in random_tree_parts()) {
        let tree = build(&parts);
        let again = PosteriorTree::build(tree.leaves(), tree.leaf_probs(), tree.layout(), tree.dim()).unwrap();
        prop_assert_eq!(&tree, &again);
        let text = tree.to_text(None);
        let parsed = PosteriorTree::from_text(&text, std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(&tree, &parsed);
    }

    #[test]
    fn nll_telescopes_along_the_path(parts in random_tree_parts(), seed in 0u64..1000) {
        let tree = build(&parts);
        let x: Vec<f64> = (0..tree.dim()).map(|i| ((seed + i as u64) % 17) as f64 - 8.0).collect();
        let path = independent_greedy(&tree, &x);
        let mut sum = 0.0;
        for level in 1..=tree.layout().depth() {
            let cond = tree.conditional_child_probs(level - 1, path[level - 1]);
            let child = path[level] % tree.layout().degree();
            match cond {
                Ok(c) => sum += -c[child].max(1e-300).ln(),
                Err(_) => break,
            }
            let nll = tree_nll(&tree, &x, level).unwrap();
            if tree.prob(level, path[level]) > 1e-12 {
                prop_assert!((nll - sum).abs() <= 1e-9, "level {level}: {nll} vs {sum}");
            }
        }
    }

    #[test]
    fn winner_path_matches_independent_greedy(
        leaves in prop::collection::vec(-5.0f64..5.0, 9 * 2),
        logits in prop::collection::vec(-3.0f64..3.0, 9),
        x in prop::collection::vec(-6.0f64..6.0, 2),
        eps in 0.0f64..1.0,
    ) {
        let tree = PosteriorTree::build(&leaves, &probs_from_logits(&logits), TreeLayout::new(3, 2).unwrap(), 2).unwrap();
        let h = hierarchical_loss(&tree, &x, eps);
        let got: Vec<usize> = h.winner_path.iter().map(|n| n.index).collect();
        prop_assert_eq!(got, independent_greedy(&tree, &x));
        prop_assert_eq!(h.winner_path[0], NodeId::ROOT);
    }

    #[test]
    fn winner_path_is_scale_and_shift_invariant(
        leaves in prop::collection::vec(-5.0f64..5.0, 4 * 2),
        logits in prop::collection::vec(-3.0f64..3.0, 4),
        x in prop::collection::vec(-6.0f64..6.0, 2),
        scale in prop_oneof![Just(0.5), Just(2.0), Just(8.0)],
        shift in -3.0f64..3.0,
    ) {
        let layout = TreeLayout::new(2, 2).unwrap();
        let probs = probs_from_logits(&logits);
        let tree = PosteriorTree::build(&leaves, &probs, layout, 2).unwrap();
        let moved_leaves: Vec<f64> = leaves.iter().map(|v| v * scale + shift).collect();
        let moved_x: Vec<f64> = x.iter().map(|v| v * scale + shift).collect();
        let moved = PosteriorTree::build(&moved_leaves, &probs, layout, 2).unwrap();
        let a = hierarchical_loss(&tree, &x, 0.0);
        let b = hierarchical_loss(&moved, &moved_x, 0.0);
        // Power-of-two scales are exact; a shift can only flip exact ties.
        let tie = (1..=2).any(|level| {
            let k = a.winner_path[level - 1].index * 2;
            (sq(tree.value(level, k), &x) - sq(tree.value(level, k + 1), &x)).abs() < 1e-9
        });
        if !tie {
            prop_assert_eq!(a.winner_path, b.winner_path);
        }
    }

    #[test]
    fn reweighting_preserves_expected_loss(
        weights in prop::collection::vec(0.01f64..1.0, 1..50),
        losses in prop::collection::vec(0.0f64..100.0, 50),
    ) {
        let total: f64 = weights.iter().sum();
        let q: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let n = q.len();
        let weighted: f64 = (0..n).map(|j| q[j] * loss_reweight(&q, n, j).unwrap() * losses[j]).sum();
        let uniform: f64 = losses[..n].iter().sum::<f64>() / n as f64;
        prop_assert!((weighted - uniform).abs() <= 1e-12 * uniform.max(1.0));
    }

    #[test]
    fn sample_weights_are_a_distribution(
        leaves in 1usize..6,
        assignments in prop::collection::vec((0usize..40, 0usize..6), 0..200),
        lambda in prop_oneof![Just(1e-6), Just(1e-3), Just(1.0)],
    ) {
        let mut a = AssociationMatrix::new(leaves, 40, 8).unwrap();
        let batch: Vec<(usize, usize)> = assignments.iter().map(|&(s, l)| (s, l % leaves)).collect();
        for chunk in batch.chunks(8) {
            a.update(chunk).unwrap();
        }
        let p = ptree_core::training::conditional_leaf_probs(&a);
        for j in 0..40 {
            let col: f64 = (0..leaves).map(|i| p.row(i)[j]).sum();
            prop_assert!((col - 1.0).abs() <= 1e-12);
        }
        let q = solve_sample_weights(&p, lambda).unwrap();
        prop_assert_eq!(q.len(), 40);
        prop_assert!(q.iter().all(|v| v.is_finite() && *v >= 0.0));
        prop_assert!((q.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn kmeans_partitions_are_consistent(
        points in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 2), 1..60),
        k in 1usize..6,
        seed in 0u64..1000,
    ) {
        let k = k.min(points.len());
        let part = kmeans(&points, k, seed, 3).unwrap();
        prop_assert_eq!(part.k(), k);
        let sizes = part.sizes();
        prop_assert!(sizes.iter().all(|&s| s > 0));
        prop_assert_eq!(sizes.iter().sum::<usize>(), points.len());
        let mut objective = 0.0;
        for c in 0..k {
            let members = part.members(c);
            for dim in 0..2 {
                let mean = members.iter().map(|&i| points[i][dim]).sum::<f64>() / members.len() as f64;
                prop_assert!((mean - part.centroids[c][dim]).abs() <= 1e-9);
            }
            objective += members.iter().map(|&i| sq(&points[i], &part.centroids[c])).sum::<f64>();
        }
        prop_assert!((objective - part.objective).abs() <= 1e-9 * objective.max(1.0));
        let again = kmeans(&points, k, seed, 3).unwrap();
        prop_assert_eq!(part.assignment, again.assignment);
    }

    #[test]
    fn permuted_children_match_with_zero_cost(parts in random_tree_parts(), rotate in 0usize..3) {
        let tree = build(&parts);
        let layout = tree.layout();
        let k = layout.degree();
        let per_child = layout.leaf_count() / k;
        // Rotate the root's subtrees; matching must undo it.
        let order: Vec<usize> = (0..k).map(|c| (c + rotate) % k).collect();
        let mut leaves = Vec::new();
        let mut probs = Vec::new();
        for &c in &order {
            for leaf in c * per_child..(c + 1) * per_child {
                leaves.extend_from_slice(tree.value(layout.depth(), leaf));
                probs.push(tree.prob(layout.depth(), leaf));
            }
        }
        let permuted = PosteriorTree::build(&leaves, &probs, layout, tree.dim()).unwrap();
        let m = match_trees(&tree, &permuted).unwrap();
        prop_assert!(m.level_dist[1] <= 1e-12, "{:?}", m.level_dist);
        prop_assert!(m.level_prob_gap[1] <= 1e-12);
    }

    #[test]
    fn optimizer_trajectories_are_reproducible(
        init in prop::collection::vec(-1.0f64..1.0, 1..12),
        grads in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 12), 1..20),
        adam in any::<bool>(),
    ) {
        let run = || {
            let mode = if adam { OptimizerMode::adam() } else { OptimizerMode::sgd() };
            let mut opt = OptimizerState::new(mode, PlateauScheduler::new(1e-2, 5e-6, 10));
            let mut params = init.clone();
            let mut trace = Vec::new();
            for g in &grads {
                let n = params.len();
                opt.step(&mut [params.as_mut_slice()], &[&g[..n]]).unwrap();
                trace.push(params.clone());
            }
            trace
        };
        let a = run();
        let b = run();
        prop_assert!(a.iter().flatten().zip(b.iter().flatten()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn matrix_rows_roundtrip(rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 3), 1..10)) {
        let m = Matrix::from_rows(&rows).unwrap();
        for (i, r) in rows.iter().enumerate() {
            prop_assert_eq!(m.row(i), r.as_slice());
        }
        prop_assert_eq!(m.transpose().transpose(), m);
    }
}
