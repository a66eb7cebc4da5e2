use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::StatsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanParams {
    pub n_assessors: usize,
    pub shared_n: usize,
    pub unique_n: usize,
    pub seed: u64,
}

impl Default for PlanParams {
    fn default() -> Self {
        Self {
            n_assessors: 4,
            shared_n: 30,
            unique_n: 70,
            seed: 0,
        }
    }
}

/// Which assessor rates which item, in presentation order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentPlan {
    pub params: PlanParams,
    pub assessors: Vec<String>,
    pub shared_items: Vec<String>,
    pub unique_items: BTreeMap<String, Vec<String>>,
    pub accepted_items: BTreeSet<String>,
    pub rejected_items: BTreeSet<String>,
    /// Per assessor: shared plus own unique items, shuffled.
    pub tasks: BTreeMap<String, Vec<String>>,
}

impl AssignmentPlan {
    pub fn distinct_items(&self) -> usize {
        self.accepted_items.len() + self.rejected_items.len()
    }

    pub fn task_count(&self) -> usize {
        self.tasks.values().map(Vec::len).sum()
    }

    pub fn tasks_for(&self, assessor: &str) -> Option<&[String]> {
        self.tasks.get(assessor).map(Vec::as_slice)
    }

    pub fn is_shared(&self, item: &str) -> bool {
        self.shared_items.iter().any(|s| s == item)
    }

    pub fn verdict(&self, item: &str) -> Option<bool> {
        if self.accepted_items.contains(item) {
            Some(true)
        } else if self.rejected_items.contains(item) {
            Some(false)
        } else {
            None
        }
    }
}

fn dedup_pool(pool: &[String], name: &str) -> Result<Vec<String>, StatsError> {
    let set: BTreeSet<&String> = pool.iter().collect();
    if set.len() != pool.len() {
        return Err(StatsError::Invalid(format!(
            "{name} pool contains duplicate ids"
        )));
    }
    Ok(set.into_iter().cloned().collect())
}

/// Plan a balanced assignment.
///
/// The shared block holds `shared_n` items, half accepted and half
/// rejected. Every assessor additionally gets `unique_n` items nobody else
/// rates; over all assessors those are again half accepted and half
/// rejected. Pools are sorted before the seeded shuffle, so the plan depends
/// only on the id sets and the seed.
pub fn build_assignment(
    accepted: &[String],
    rejected: &[String],
    params: PlanParams,
) -> Result<AssignmentPlan, StatsError> {
    let PlanParams {
        n_assessors,
        shared_n,
        unique_n,
        seed,
    } = params;
    if n_assessors == 0 {
        return Err(StatsError::Invalid(
            "at least one assessor is required".into(),
        ));
    }
    if shared_n % 2 != 0 {
        return Err(StatsError::Invalid(format!(
            "shared block of {shared_n} cannot be split evenly into accepted and rejected"
        )));
    }
    let unique_total = n_assessors * unique_n;
    if unique_total % 2 != 0 {
        return Err(StatsError::Invalid(format!(
            "{unique_total} unique items cannot be split evenly into accepted and rejected"
        )));
    }
    let mut acc = dedup_pool(accepted, "accepted")?;
    let mut rej = dedup_pool(rejected, "rejected")?;
    if let Some(both) = acc.iter().find(|a| rej.binary_search(a).is_ok()) {
        return Err(StatsError::Invalid(format!(
            "item {both:?} is both accepted and rejected"
        )));
    }
    let needed = shared_n / 2 + unique_total / 2;
    for (pool, name) in [(&acc, "accepted"), (&rej, "rejected")] {
        if pool.len() < needed {
            return Err(StatsError::Shortfall {
                pool: name,
                needed,
                available: pool.len(),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    acc.shuffle(&mut rng);
    rej.shuffle(&mut rng);
    let half = shared_n / 2;
    let mut shared: Vec<String> = acc[..half].iter().chain(&rej[..half]).cloned().collect();
    shared.shuffle(&mut rng);

    let mut acc_rest = acc[half..half + unique_total / 2].iter();
    let mut rej_rest = rej[half..half + unique_total / 2].iter();
    let assessors: Vec<String> = (1..=n_assessors).map(|i| format!("assessor-{i}")).collect();
    let mut unique_items = BTreeMap::new();
    let mut tasks = BTreeMap::new();
    for (i, name) in assessors.iter().enumerate() {
        // Odd unique_n: alternate the extra accepted item between assessors.
        let n_acc = if i % 2 == 0 {
            unique_n.div_ceil(2)
        } else {
            unique_n / 2
        };
        let mut own: Vec<String> = acc_rest
            .by_ref()
            .take(n_acc)
            .chain(rej_rest.by_ref().take(unique_n - n_acc))
            .cloned()
            .collect();
        own.shuffle(&mut rng);
        let mut list: Vec<String> = shared.iter().chain(&own).cloned().collect();
        list.shuffle(&mut rng);
        unique_items.insert(name.clone(), own);
        tasks.insert(name.clone(), list);
    }

    let used: BTreeSet<&String> = shared
        .iter()
        .chain(unique_items.values().flatten())
        .collect();
    let accepted_items = acc.iter().filter(|a| used.contains(a)).cloned().collect();
    let rejected_items = rej.iter().filter(|r| used.contains(r)).cloned().collect();
    Ok(AssignmentPlan {
        params,
        assessors,
        shared_items: shared,
        unique_items,
        accepted_items,
        rejected_items,
        tasks,
    })
}
