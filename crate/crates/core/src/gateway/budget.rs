use std::fmt;
use std::sync::atomic::{AtomicU32, Ordering};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Coarse,
    Fine,
    Final,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Coarse => "coarse",
            Stage::Fine => "fine",
            Stage::Final => "final",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BudgetCounts {
    pub coarse: u32,
    pub fine: u32,
    #[serde(rename = "final")]
    pub final_: u32,
}

impl BudgetCounts {
    pub fn total(&self) -> u32 {
        self.coarse + self.fine + self.final_
    }
}

/// Per-question query counters with per-stage limits (4 / 10 / 1 by default).
///
/// Counters are atomic because the coarse perspectives run concurrently.
#[derive(Debug)]
pub struct QueryBudget {
    used: [AtomicU32; 3],
    limits: BudgetCounts,
    enforce: bool,
}

impl Default for QueryBudget {
    fn default() -> Self {
        QueryBudget::new(
            BudgetCounts {
                coarse: 4,
                fine: 10,
                final_: 1,
            },
            true,
        )
    }
}

impl QueryBudget {
    pub fn new(limits: BudgetCounts, enforce: bool) -> Self {
        QueryBudget {
            used: Default::default(),
            limits,
            enforce,
        }
    }

    fn slot(stage: Stage) -> usize {
        match stage {
            Stage::Coarse => 0,
            Stage::Fine => 1,
            Stage::Final => 2,
        }
    }

    pub fn limit(&self, stage: Stage) -> u32 {
        match stage {
            Stage::Coarse => self.limits.coarse,
            Stage::Fine => self.limits.fine,
            Stage::Final => self.limits.final_,
        }
    }

    /// Claims one query for `stage`; false when the stage is at its limit.
    pub fn try_reserve(&self, stage: Stage) -> bool {
        let limit = self.limit(stage);
        let enforce = self.enforce;
        self.used[Self::slot(stage)]
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| {
                (!enforce || n < limit).then_some(n + 1)
            })
            .is_ok()
    }

    /// Returns a reserved query that was never issued.
    pub fn refund(&self, stage: Stage) {
        let _ = self.used[Self::slot(stage)].fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| {
            n.checked_sub(1)
        });
    }

    pub fn used(&self, stage: Stage) -> u32 {
        self.used[Self::slot(stage)].load(Ordering::SeqCst)
    }

    pub fn remaining(&self, stage: Stage) -> u32 {
        self.limit(stage).saturating_sub(self.used(stage))
    }

    pub fn counts(&self) -> BudgetCounts {
        BudgetCounts {
            coarse: self.used(Stage::Coarse),
            fine: self.used(Stage::Fine),
            final_: self.used(Stage::Final),
        }
    }
}
