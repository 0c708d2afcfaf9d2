//! Navigation and localization metrics.

use serde::{Deserialize, Serialize};

use crate::env::EpisodeResult;
use crate::geometry::localization_hit;
use crate::graph::DistanceTable;
use crate::worldgen::{EpisodeSpec, World};

/// Success radius in meters.
pub const SUCCESS_RADIUS: f64 = 3.0;

/// Distance from the stop node to the nearest target.
pub fn navigation_error(result: &EpisodeResult, targets: &[usize], dist: &DistanceTable) -> f64 {
    dist.to_nearest(result.stop_node, targets)
}

pub fn success(navigation_error: f64, radius: f64) -> bool {
    navigation_error < radius
}

/// Whether any traversed node came within `radius` of a target.
pub fn oracle_success(result: &EpisodeResult, targets: &[usize], dist: &DistanceTable, radius: f64) -> bool {
    result
        .visited
        .iter()
        .any(|&n| dist.to_nearest(n, targets) < radius)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEval {
    pub episode_id: String,
    pub ne: f64,
    pub success: bool,
    pub oracle_success: bool,
    pub loc_success: bool,
    pub l_nav: f64,
    pub l_gt: f64,
}

/// Scores one finished episode. Localization counts only on a navigation
/// success, with the prediction tested against the object's extent as seen
/// from the stop node.
pub fn evaluate_episode(
    result: &EpisodeResult,
    episode: &EpisodeSpec,
    world: &World,
    dist: &DistanceTable,
    radius: f64,
) -> EpisodeEval {
    let ne = navigation_error(result, &episode.targets, dist);
    let ok = success(ne, radius);
    let loc = ok
        && match (result.localization, world.objects[episode.object].extent_at(result.stop_node)) {
            (Some(pred), Some(ext)) => localization_hit(pred, ext),
            _ => false,
        };
    EpisodeEval {
        episode_id: result.episode_id.clone(),
        ne,
        success: ok,
        oracle_success: oracle_success(result, &episode.targets, dist, radius),
        loc_success: loc,
        l_nav: result.path_length,
        l_gt: episode.shortest_path_length,
    }
}

fn mean(batch: &[EpisodeEval], f: impl Fn(&EpisodeEval) -> f64) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    batch.iter().map(f).sum::<f64>() / batch.len() as f64
}

fn ind(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

pub fn mean_navigation_error(batch: &[EpisodeEval]) -> f64 {
    mean(batch, |e| e.ne)
}

pub fn sr(batch: &[EpisodeEval]) -> f64 {
    mean(batch, |e| ind(e.success))
}

pub fn osr(batch: &[EpisodeEval]) -> f64 {
    mean(batch, |e| ind(e.oracle_success))
}

/// `(1/N) Σ S · l_gt / max(l_nav, l_gt)`.
pub fn spl(batch: &[EpisodeEval]) -> f64 {
    mean(batch, |e| ind(e.success) * e.l_gt / e.l_nav.max(e.l_gt))
}

/// `(1/N) Σ S_nav · S_loc · l_nav / max(l_nav, l_gt)`.
pub fn sfpl(batch: &[EpisodeEval]) -> f64 {
    mean(batch, |e| ind(e.success && e.loc_success) * e.l_nav / e.l_nav.max(e.l_gt))
}

/// SFPL with the `l_gt` numerator used by SPL.
pub fn sfpl_splstyle(batch: &[EpisodeEval]) -> f64 {
    mean(batch, |e| ind(e.success && e.loc_success) * e.l_gt / e.l_nav.max(e.l_gt))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub episodes: usize,
    pub ne: f64,
    pub osr: f64,
    pub sr: f64,
    pub spl: f64,
    pub sfpl: f64,
    pub sfpl_splstyle: f64,
}

impl Summary {
    pub fn of(batch: &[EpisodeEval]) -> Self {
        Self {
            episodes: batch.len(),
            ne: mean_navigation_error(batch),
            osr: osr(batch),
            sr: sr(batch),
            spl: spl(batch),
            sfpl: sfpl(batch),
            sfpl_splstyle: sfpl_splstyle(batch),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Adjacency;

    fn ev(success: bool, loc: bool, l_nav: f64, l_gt: f64) -> EpisodeEval {
        EpisodeEval {
            episode_id: String::new(),
            ne: if success { 0.0 } else { 10.0 },
            success,
            oracle_success: success,
            loc_success: loc,
            l_nav,
            l_gt,
        }
    }

    fn result(visited: Vec<usize>) -> EpisodeResult {
        EpisodeResult {
            episode_id: "r".into(),
            stop_node: *visited.last().unwrap(),
            path_length: 0.0,
            visited,
            localization: None,
            steps: 1,
            stopped: true,
        }
    }

    fn chain(lengths: &[f64]) -> DistanceTable {
        let mut adj: Adjacency = vec![Vec::new(); lengths.len() + 1];
        for (i, &w) in lengths.iter().enumerate() {
            adj[i].push((i + 1, w));
            adj[i + 1].push((i, w));
        }
        DistanceTable::new(&adj)
    }

    #[test]
    fn navigation_error_cases() {
        let d = chain(&[4.0, 1.0, 9.0]);
        assert_eq!(navigation_error(&result(vec![1]), &[1], &d), 0.0);
        assert_eq!(navigation_error(&result(vec![0]), &[1], &d), 4.0);
        // exhaustive min over targets
        let r = result(vec![2]);
        let targets = [0, 3];
        let oracle = targets.iter().map(|&t| d.get(2, t)).fold(f64::MAX, f64::min);
        assert_eq!(navigation_error(&r, &targets, &d), oracle);
        assert_eq!(oracle, 5.0);
    }

    #[test]
    fn success_threshold_is_strict() {
        assert!(success(0.0, SUCCESS_RADIUS));
        assert!(!success(3.0, SUCCESS_RADIUS));
        assert!(success(2.999, SUCCESS_RADIUS));
    }

    #[test]
    fn oracle_success_counts_passing_by() {
        // 0 -1m- 1 -10m- 2 ; passes 1 m from target 0 but stops 10 m past it
        let d = chain(&[1.0, 10.0]);
        let r = result(vec![1, 2]);
        assert!(!success(navigation_error(&r, &[0], &d), SUCCESS_RADIUS));
        assert!(oracle_success(&r, &[0], &d, SUCCESS_RADIUS));
    }

    #[test]
    fn spl_examples() {
        assert_eq!(spl(&[ev(true, true, 5.0, 5.0)]), 1.0);
        assert_eq!(spl(&[ev(true, true, 10.0, 5.0)]), 0.5);
        let batch = [ev(true, true, 5.0, 5.0), ev(true, true, 10.0, 5.0), ev(false, false, 3.0, 5.0)];
        assert!((spl(&batch) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sfpl_examples() {
        assert_eq!(sfpl(&[ev(true, true, 5.0, 5.0)]), 1.0);
        assert_eq!(sfpl(&[ev(true, false, 5.0, 5.0)]), 0.0);
        assert_eq!(sfpl(&[ev(true, true, 5.0, 5.0), ev(true, false, 5.0, 5.0)]), 0.5);
        // verbatim numerator saturates once l_nav >= l_gt
        assert_eq!(sfpl(&[ev(true, true, 10.0, 5.0)]), 1.0);
        assert_eq!(sfpl_splstyle(&[ev(true, true, 10.0, 5.0)]), 0.5);
    }

    #[test]
    fn summary_is_order_invariant() {
        let a = [ev(true, true, 5.0, 5.0), ev(false, false, 3.0, 5.0), ev(true, false, 7.0, 4.0)];
        let b = [a[2].clone(), a[0].clone(), a[1].clone()];
        let (sa, sb) = (Summary::of(&a), Summary::of(&b));
        assert!((sa.spl - sb.spl).abs() < 1e-15);
        assert!((sa.sfpl - sb.sfpl).abs() < 1e-15);
        assert_eq!(sa.sr, sb.sr);
        assert!(sa.spl <= sa.sr && sa.sr <= sa.osr && sa.sfpl <= sa.sr);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_eval() -> impl Strategy<Value = EpisodeEval> {
            (any::<bool>(), any::<bool>(), any::<bool>(), 0.0f64..50.0, 0.1f64..50.0).prop_map(
                |(s, o, l, nav, gt)| EpisodeEval {
                    episode_id: String::new(),
                    ne: 0.0,
                    success: s,
                    oracle_success: s || o,
                    loc_success: s && l,
                    l_nav: nav,
                    l_gt: gt,
                },
            )
        }

        proptest! {
            #[test]
            fn metric_ordering(batch in prop::collection::vec(arb_eval(), 1..40)) {
                let s = Summary::of(&batch);
                prop_assert!(s.spl <= s.sr + 1e-12);
                prop_assert!(s.sr <= s.osr + 1e-12);
                prop_assert!(s.sfpl <= s.sr + 1e-12);
                prop_assert!(s.sfpl_splstyle <= s.sr + 1e-12);
                for v in [s.spl, s.sr, s.osr, s.sfpl] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }
}
