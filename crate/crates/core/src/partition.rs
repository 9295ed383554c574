//! Budgeted FO tensor selection.
//!
//! Tensors are indexed from the output. Computing the weight gradient of a
//! set `S` costs `sum(t_dw over S) + Y(deepest(S))`, where `Y(k)` is the
//! activation-gradient cost of every layer above tensor `k`. The dynamic
//! program chains selections through their nearest selected predecessor,
//! paying `t_dw(k) + Y(k) - Y(prev)` per link, with all link costs rounded
//! up to whole budget buckets so that any plan it returns is feasible.

use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::error::{Error, Result};
use crate::importance::ImportanceProfile;
use crate::tensor::{ParamSet, Role};

/// Largest instance [`brute_force_select`] will enumerate.
pub const BRUTE_FORCE_MAX: usize = 20;

pub const DEFAULT_BUCKETS: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub rho: f64,
    pub budget_flops: f64,
    pub consumed_flops: u64,
    pub fo: Vec<String>,
    pub zo: Vec<String>,
    pub achieved_importance: f64,
    /// Budget quantization buckets `Q`; 0 for an unquantized (exhaustive) plan.
    pub buckets: u64,
    /// FLOPs per bucket actually used by the solver.
    pub bucket_flops: u64,
    pub t_full: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl PartitionPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::config(format!("invalid plan JSON: {e}")))
    }

    /// Plan with every tensor FO (used by the full-FO baseline and tests).
    pub fn all_fo(profile: &ImportanceProfile, cost: &CostModel) -> Self {
        let mask = vec![true; cost.len()];
        build_plan(profile, cost, 1.0, &mask, 0, 0, None)
    }

    /// Plan with a fixed FO list. The budget is recorded but not enforced;
    /// an over-budget list carries a warning.
    pub fn fixed<S: AsRef<str>>(profile: &ImportanceProfile, cost: &CostModel, rho: f64, fo: &[S]) -> Result<Self> {
        check_inputs(profile, cost, rho)?;
        let mut mask = vec![false; cost.len()];
        for name in fo {
            let k = profile
                .names()
                .iter()
                .position(|n| n == name.as_ref())
                .ok_or_else(|| Error::config(format!("fixed FO list names unknown tensor {}", name.as_ref())))?;
            mask[k] = true;
        }
        let mut plan = build_plan(profile, cost, rho, &mask, 0, 0, None);
        if plan.consumed_flops as f64 > plan.budget_flops {
            plan.warning = Some(format!(
                "fixed FO list costs {} FLOPs, above the budget of {}",
                plan.consumed_flops, plan.budget_flops
            ));
        }
        Ok(plan)
    }

    pub fn is_fo(&self, name: &str) -> bool {
        self.fo.iter().any(|n| n == name)
    }
}

fn check_inputs(profile: &ImportanceProfile, cost: &CostModel, rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::config(format!("budget ratio {rho} outside (0, 1]")));
    }
    if profile.names() != cost.names().as_slice() {
        return Err(Error::config("importance profile and cost model cover different tensors"));
    }
    if cost.t_full() == 0 {
        return Err(Error::config("cost model has zero total backward FLOPs"));
    }
    Ok(())
}

fn build_plan(
    profile: &ImportanceProfile,
    cost: &CostModel,
    rho: f64,
    mask: &[bool],
    buckets: u64,
    bucket_flops: u64,
    warning: Option<String>,
) -> PartitionPlan {
    let (mut fo, mut zo) = (Vec::new(), Vec::new());
    let mut achieved = 0.0;
    for (k, name) in profile.names().iter().enumerate() {
        if mask[k] {
            fo.push(name.clone());
            achieved += profile.scores()[k];
        } else {
            zo.push(name.clone());
        }
    }
    PartitionPlan {
        rho,
        budget_flops: rho * cost.t_full() as f64,
        consumed_flops: cost.backward_flops(mask),
        fo,
        zo,
        achieved_importance: achieved,
        buckets,
        bucket_flops,
        t_full: cost.t_full(),
        warning,
    }
}

/// Cheapest non-empty selection: a single tensor with nothing below it.
fn cheapest_single(cost: &CostModel) -> u64 {
    (0..cost.len()).map(|k| cost.tensors[k].t_dw + cost.prefix_dy(k)).min().unwrap_or(0)
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    importance: f64,
    cost: u64,
    prev: Option<usize>,
}

impl Cell {
    fn better_than(&self, other: &Option<Cell>) -> bool {
        match other {
            None => true,
            Some(o) => self.importance > o.importance || (self.importance == o.importance && self.cost < o.cost),
        }
    }
}

/// Maximize total importance under a backward budget of `rho * T_full`,
/// quantized into `q` buckets.
pub fn solve_dp(profile: &ImportanceProfile, cost: &CostModel, rho: f64, q: u64) -> Result<PartitionPlan> {
    check_inputs(profile, cost, rho)?;
    if q < 10 {
        return Err(Error::config("at least 10 budget buckets are required"));
    }
    let n = cost.len();
    let t_full = cost.t_full();
    let bucket = t_full.div_ceil(q).max(1);
    let budget = rho * t_full as f64;
    let cap = (budget / bucket as f64).floor() as usize;
    let y: Vec<u64> = (0..=n).map(|k| cost.prefix_dy(k)).collect();
    let link = |k: usize, prev: Option<usize>| -> u64 {
        let base = prev.map_or(0, |p| y[p]);
        cost.tensors[k].t_dw + y[k] - base
    };
    let quant = |flops: u64| -> usize { flops.div_ceil(bucket) as usize };

    // best[k][t]: best chain whose deepest selected tensor is k, within t buckets.
    let mut best: Vec<Vec<Option<Cell>>> = Vec::with_capacity(n);
    for k in 0..n {
        let ik = profile.scores()[k];
        let mut row: Vec<Option<Cell>> = vec![None; cap + 1];
        if ik >= 0.0 {
            let solo = link(k, None);
            let solo_q = quant(solo);
            let links: Vec<(usize, u64, usize)> = (0..k)
                .map(|p| {
                    let l = link(k, Some(p));
                    (p, l, quant(l))
                })
                .collect();
            for (t, slot) in row.iter_mut().enumerate() {
                let mut cell: Option<Cell> = None;
                if solo_q <= t {
                    cell = Some(Cell { importance: ik, cost: solo, prev: None });
                }
                for &(p, l, lq) in &links {
                    if lq > t {
                        continue;
                    }
                    if let Some(prev) = best[p][t - lq] {
                        let cand = Cell { importance: prev.importance + ik, cost: prev.cost + l, prev: Some(p) };
                        if cand.better_than(&cell) {
                            cell = Some(cand);
                        }
                    }
                }
                *slot = cell;
            }
        }
        best.push(row);
    }

    let mut top: Option<(usize, Cell)> = None;
    for (k, row) in best.iter().enumerate() {
        if let Some(c) = row[cap] {
            if c.better_than(&top.map(|(_, c)| c)) {
                top = Some((k, c));
            }
        }
    }
    let mut mask = vec![false; n];
    if let Some((k, c)) = top.filter(|(_, c)| c.importance > 0.0) {
        let (mut k, mut c, mut t) = (k, c, cap);
        loop {
            mask[k] = true;
            let Some(p) = c.prev else { break };
            t -= quant(link(k, Some(p)));
            c = best[p][t].expect("backpointer refers to a filled cell");
            k = p;
        }
    }
    let warning = (budget < cheapest_single(cost) as f64)
        .then(|| format!("budget {budget} FLOPs is below the cheapest single selection; all tensors assigned ZO"));
    let plan = build_plan(profile, cost, rho, &mask, q, bucket, warning);
    debug_assert!(plan.consumed_flops as f64 <= budget);
    Ok(plan)
}

/// Exhaustive optimum over all `2^N` subsets with exact costs. Ties in
/// importance go to the cheaper set.
pub fn brute_force_select(profile: &ImportanceProfile, cost: &CostModel, rho: f64) -> Result<PartitionPlan> {
    check_inputs(profile, cost, rho)?;
    let n = cost.len();
    if n > BRUTE_FORCE_MAX {
        return Err(Error::config(format!("brute force refuses {n} tensors (limit {BRUTE_FORCE_MAX})")));
    }
    let budget = rho * cost.t_full() as f64;
    let mut best_mask = vec![false; n];
    let mut best = (0.0_f64, 0_u64);
    let mut mask = vec![false; n];
    for bits in 1u32..(1u32 << n) {
        for (k, m) in mask.iter_mut().enumerate() {
            *m = bits >> k & 1 == 1;
        }
        let c = cost.backward_flops(&mask);
        if c as f64 > budget {
            continue;
        }
        let imp: f64 = (0..n).filter(|&k| mask[k]).map(|k| profile.scores()[k]).sum();
        if imp > best.0 || (imp == best.0 && c < best.1) {
            best = (imp, c);
            best_mask.copy_from_slice(&mask);
        }
    }
    let warning = (budget < cheapest_single(cost) as f64)
        .then(|| format!("budget {budget} FLOPs is below the cheapest single selection; all tensors assigned ZO"));
    Ok(build_plan(profile, cost, rho, &best_mask, 0, 0, warning))
}

/// Set every tensor's role from `plan`: FO for the selected set, ZO for the
/// rest. The plan must name each tensor of `params` exactly once.
pub fn apply_plan(params: &mut ParamSet, plan: &PartitionPlan) -> Result<()> {
    let mut seen = vec![false; params.len()];
    for name in plan.fo.iter().chain(&plan.zo) {
        let i = params
            .index_of(name)
            .ok_or_else(|| Error::config(format!("plan names unknown tensor {name}")))?;
        if seen[i] {
            return Err(Error::config(format!("plan lists tensor {name} twice")));
        }
        seen[i] = true;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::config(format!("plan does not cover tensor {}", params.tensor(i).name())));
    }
    for name in &plan.fo {
        params.set_role(name, Role::Fo)?;
    }
    for name in &plan.zo {
        params.set_role(name, Role::Zo)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::TensorCost;

    pub(crate) fn instance(imp: &[f64], dw: &[u64], dy: &[u64]) -> (ImportanceProfile, CostModel) {
        let names: Vec<String> = (0..imp.len()).map(|k| format!("t{k}")).collect();
        let tensors = (0..imp.len())
            .map(|k| TensorCost { name: names[k].clone(), layer_index: k, t_fwd: dw[k], t_dw: dw[k], t_dy: dy[k] })
            .collect();
        let profile = ImportanceProfile::from_scores(names, (0..imp.len()).collect(), imp.to_vec()).unwrap();
        (profile, CostModel { batch_size: 1, tensors })
    }

    #[test]
    fn four_tensor_fixture_matches_enumeration() {
        let (p, c) = instance(&[0.9, 0.5, 0.8, 0.3], &[10; 4], &[5; 4]);
        let rho = 30.0 / c.t_full() as f64;
        let dp = solve_dp(&p, &c, rho, 1_000_000).unwrap();
        let bf = brute_force_select(&p, &c, rho).unwrap();
        // {t0, t1}: 10 + 10 + 5 = 25; {t0, t2}: 20 + 10 = 30.
        assert_eq!(bf.fo, vec!["t0", "t2"]);
        assert_eq!(dp.fo, bf.fo);
        assert!((dp.achieved_importance - 1.7).abs() < 1e-12);
        assert_eq!(dp.consumed_flops, 30);
    }

    #[test]
    fn full_budget_selects_all_positive() {
        let (p, c) = instance(&[0.9, 0.5, 0.8, 0.3], &[10; 4], &[5; 4]);
        let plan = solve_dp(&p, &c, 1.0, 10_000).unwrap();
        assert_eq!(plan.fo.len(), 4);
        assert!(plan.zo.is_empty());
        assert_eq!(plan.consumed_flops, c.t_full() - 5);
    }

    #[test]
    fn negative_importance_never_selected() {
        let (p, c) = instance(&[1.0, -0.5, 0.8], &[10; 3], &[5; 3]);
        let plan = solve_dp(&p, &c, 1.0, 100).unwrap();
        assert_eq!(plan.fo, vec!["t0", "t2"]);
        assert_eq!(plan.zo, vec!["t1"]);
    }

    #[test]
    fn tiny_budget_gives_all_zo_with_warning() {
        let (p, c) = instance(&[0.9, 0.5], &[10, 10], &[5, 5]);
        let plan = solve_dp(&p, &c, 0.2, 100).unwrap();
        assert!(plan.fo.is_empty());
        assert_eq!(plan.achieved_importance, 0.0);
        assert!(plan.warning.is_some());
    }

    #[test]
    fn zero_importance_ties_pick_empty_set() {
        let (p, c) = instance(&[0.0, 0.0], &[10, 10], &[5, 5]);
        let bf = brute_force_select(&p, &c, 1.0).unwrap();
        assert!(bf.fo.is_empty());
        assert_eq!(bf.consumed_flops, 0);
        assert!(solve_dp(&p, &c, 1.0, 100).unwrap().fo.is_empty());
    }

    #[test]
    fn single_affordable_tensor_is_selected() {
        let (p, c) = instance(&[0.4], &[10], &[0]);
        assert_eq!(brute_force_select(&p, &c, 1.0).unwrap().fo, vec!["t0"]);
    }

    #[test]
    fn invalid_arguments_are_rejected() {
        let (p, c) = instance(&[0.4, 1.0], &[10, 3], &[1, 0]);
        assert!(solve_dp(&p, &c, 0.0, 100).is_err());
        assert!(solve_dp(&p, &c, 1.5, 100).is_err());
        assert!(solve_dp(&p, &c, 0.5, 5).is_err());
        let names: Vec<f64> = vec![0.1; 21];
        let (p, c) = instance(&names, &[1; 21], &[1; 21]);
        assert!(brute_force_select(&p, &c, 0.5).is_err());
    }

    #[test]
    fn coarse_buckets_stay_feasible() {
        let (p, c) = instance(&[0.9, 0.5, 0.8, 0.3, 0.7], &[17, 23, 5, 31, 11], &[7, 3, 13, 2, 9]);
        for rho in [0.2, 0.35, 0.5, 0.8] {
            let dp = solve_dp(&p, &c, rho, 10).unwrap();
            let bf = brute_force_select(&p, &c, rho).unwrap();
            assert!(dp.consumed_flops as f64 <= dp.budget_flops);
            assert!(dp.achieved_importance <= bf.achieved_importance + 1e-12);
        }
    }

    #[test]
    fn plan_json_round_trips() {
        let (p, c) = instance(&[0.9, 0.5, 0.8, 0.3], &[10; 4], &[5; 4]);
        let plan = solve_dp(&p, &c, 0.6, 1000).unwrap();
        let json = plan.to_json();
        for key in ["rho", "budget_flops", "consumed_flops", "fo", "zo", "achieved_importance"] {
            assert!(json.contains(&format!("\"{key}\"")), "{key}");
        }
        assert_eq!(PartitionPlan::from_json(&json).unwrap(), plan);
    }
}
