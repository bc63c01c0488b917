//! Longest-processing-time-first scheduling of build tasks onto workers.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Largest instance [`optimal_makespan_bruteforce`] accepts.
pub const BRUTEFORCE_LIMIT: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BuildTask {
    pub subset_index: usize,
    pub cost: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorkerSchedule {
    /// Subset indices per worker, in execution order.
    pub assignment: Vec<Vec<usize>>,
    pub loads: Vec<u64>,
}

impl WorkerSchedule {
    pub fn workers(&self) -> usize {
        self.loads.len()
    }

    /// Runs `job(subset_index)` for every task with one thread per worker.
    /// Each worker runs its own list in order; results come back sorted by
    /// subset index.
    pub fn execute<T, F>(&self, job: F) -> Vec<(usize, T)>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        let job = &job;
        let mut out: Vec<(usize, T)> = std::thread::scope(|scope| {
            let handles: Vec<_> = self
                .assignment
                .iter()
                .map(|tasks| {
                    scope.spawn(move || tasks.iter().map(|&t| (t, job(t))).collect::<Vec<_>>())
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("worker panicked"))
                .collect()
        });
        out.sort_by_key(|(t, _)| *t);
        out
    }
}

impl fmt::Display for WorkerSchedule {
    /// One line per worker: `worker <i> load <L>: <subset indices>`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (tasks, load)) in self.assignment.iter().zip(&self.loads).enumerate() {
            let list: Vec<String> = tasks.iter().map(ToString::to_string).collect();
            writeln!(f, "worker {i} load {load}: {}", list.join(" "))?;
        }
        Ok(())
    }
}

impl FromStr for WorkerSchedule {
    type Err = Error;

    /// Inverse of the `Display` form.
    fn from_str(text: &str) -> Result<Self> {
        let mut assignment = Vec::new();
        let mut loads = Vec::new();
        for (no, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let bad = || Error::format(format!("schedule line {}: `{line}`", no + 1));
            let (head, tasks) = line.split_once(':').ok_or_else(bad)?;
            let words: Vec<&str> = head.split_whitespace().collect();
            match words.as_slice() {
                ["worker", w, "load", load] if w.parse::<usize>().ok() == Some(no) => {
                    loads.push(load.parse::<u64>().map_err(|_| bad())?);
                }
                _ => return Err(bad()),
            }
            assignment.push(
                tasks
                    .split_whitespace()
                    .map(|t| t.parse::<usize>().map_err(|_| bad()))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(Self { assignment, loads })
    }
}

/// Sorts tasks by cost (descending, ties by subset index) and hands each to
/// the currently least-loaded worker (ties by worker index).
pub fn schedule_lpt(tasks: &[BuildTask], m: usize) -> Result<WorkerSchedule> {
    if m == 0 {
        return Err(Error::invalid("need at least one worker"));
    }
    let mut sorted = tasks.to_vec();
    sorted.sort_by_key(|t| (Reverse(t.cost), t.subset_index));
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = (0..m).map(|w| Reverse((0, w))).collect();
    let mut assignment = vec![Vec::new(); m];
    let mut loads = vec![0u64; m];
    for t in sorted {
        let Reverse((load, w)) = heap.pop().unwrap();
        assignment[w].push(t.subset_index);
        loads[w] = load + t.cost;
        heap.push(Reverse((loads[w], w)));
    }
    Ok(WorkerSchedule { assignment, loads })
}

pub fn makespan(schedule: &WorkerSchedule) -> u64 {
    schedule.loads.iter().copied().max().unwrap_or(0)
}

/// Exact minimum makespan by branch and bound over all assignments.
pub fn optimal_makespan_bruteforce(tasks: &[BuildTask], m: usize) -> Result<u64> {
    if m == 0 {
        return Err(Error::invalid("need at least one worker"));
    }
    if tasks.len() > BRUTEFORCE_LIMIT {
        return Err(Error::InstanceTooLarge {
            tasks: tasks.len(),
            limit: BRUTEFORCE_LIMIT,
        });
    }
    let mut costs: Vec<u64> = tasks.iter().map(|t| t.cost).collect();
    costs.sort_unstable_by(|a, b| b.cmp(a));

    fn search(costs: &[u64], i: usize, loads: &mut [u64], current: u64, best: &mut u64) {
        if current >= *best {
            return;
        }
        if i == costs.len() {
            *best = current;
            return;
        }
        let mut seen_empty = false;
        for w in 0..loads.len() {
            // all empty workers are interchangeable
            if loads[w] == 0 {
                if seen_empty {
                    continue;
                }
                seen_empty = true;
            }
            loads[w] += costs[i];
            search(costs, i + 1, loads, current.max(loads[w]), best);
            loads[w] -= costs[i];
        }
    }

    let mut best = u64::MAX;
    let mut loads = vec![0u64; m];
    search(&costs, 0, &mut loads, 0, &mut best);
    Ok(if costs.is_empty() { 0 } else { best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tasks(costs: &[u64]) -> Vec<BuildTask> {
        costs
            .iter()
            .enumerate()
            .map(|(subset_index, &cost)| BuildTask { subset_index, cost })
            .collect()
    }

    /// Plain m^n enumeration, no pruning.
    fn enumerate_optimum(costs: &[u64], m: usize) -> u64 {
        let n = costs.len();
        let mut best = u64::MAX;
        for code in 0..m.pow(n as u32) {
            let mut loads = vec![0u64; m];
            let mut c = code;
            for &cost in costs {
                loads[c % m] += cost;
                c /= m;
            }
            best = best.min(loads.into_iter().max().unwrap());
        }
        best
    }

    #[test]
    fn hand_instances() {
        let s = schedule_lpt(&tasks(&[7, 5, 4, 3, 2]), 2).unwrap();
        let mut loads = s.loads.clone();
        loads.sort();
        assert_eq!(loads, vec![10, 11]);
        assert_eq!(makespan(&s), 11);
        assert_eq!(
            optimal_makespan_bruteforce(&tasks(&[7, 5, 4, 3, 2]), 2).unwrap(),
            11
        );

        let s = schedule_lpt(&tasks(&[3, 3, 2, 2, 2]), 2).unwrap();
        assert_eq!(makespan(&s), 7);
        assert_eq!(
            optimal_makespan_bruteforce(&tasks(&[3, 3, 2, 2, 2]), 2).unwrap(),
            6
        );
        assert_eq!(enumerate_optimum(&[3, 3, 2, 2, 2], 2), 6);
    }

    #[test]
    fn single_worker_and_empty() {
        let s = schedule_lpt(&tasks(&[4, 1, 9]), 1).unwrap();
        assert_eq!(makespan(&s), 14);
        assert_eq!(s.assignment, vec![vec![2, 0, 1]]);
        let e = schedule_lpt(&[], 3).unwrap();
        assert_eq!(makespan(&e), 0);
        assert_eq!(optimal_makespan_bruteforce(&[], 3).unwrap(), 0);
        assert!(schedule_lpt(&[], 0).is_err());
    }

    #[test]
    fn text_round_trip() {
        let s = schedule_lpt(&tasks(&[7, 5, 4, 3, 2]), 3).unwrap();
        let text = s.to_string();
        assert_eq!(text.parse::<WorkerSchedule>().unwrap(), s);
        let idle = schedule_lpt(&tasks(&[1]), 2).unwrap();
        assert_eq!(idle.to_string().parse::<WorkerSchedule>().unwrap(), idle);
        assert!("worker 0 load x: 1".parse::<WorkerSchedule>().is_err());
        assert!("worker 1 load 3: 1".parse::<WorkerSchedule>().is_err());
    }

    #[test]
    fn fewer_tasks_than_workers() {
        let t = tasks(&[5, 9, 2]);
        assert_eq!(optimal_makespan_bruteforce(&t, 4).unwrap(), 9);
        assert_eq!(makespan(&schedule_lpt(&t, 4).unwrap()), 9);
    }

    #[test]
    fn too_large_for_bruteforce() {
        assert!(matches!(
            optimal_makespan_bruteforce(&tasks(&[1; 15]), 2),
            Err(Error::InstanceTooLarge { .. })
        ));
    }

    #[test]
    fn equal_loads() {
        let s = schedule_lpt(&tasks(&[2, 2, 2, 2]), 2).unwrap();
        assert_eq!(s.loads, vec![4, 4]);
        assert_eq!(makespan(&s), 4);
    }

    #[test]
    fn dump_format() {
        let s = schedule_lpt(&tasks(&[7, 5, 4]), 2).unwrap();
        assert_eq!(s.to_string(), "worker 0 load 7: 0\nworker 1 load 9: 1 2\n");
    }

    #[test]
    fn execute_runs_every_task_once() {
        let s = schedule_lpt(&tasks(&[3, 1, 4, 1, 5, 9, 2, 6]), 3).unwrap();
        let out = s.execute(|t| t * 10);
        assert_eq!(out, (0..8).map(|t| (t, t * 10)).collect::<Vec<_>>());
    }

    #[test]
    fn equal_cost_scaling() {
        let t = vec![1u64; 64];
        for k in [1usize, 2, 4, 8] {
            let a = makespan(&schedule_lpt(&tasks(&t), k).unwrap());
            let b = makespan(&schedule_lpt(&tasks(&t), 2 * k).unwrap());
            assert!(b as f64 <= 0.6 * a as f64);
        }
    }

    proptest! {
        #[test]
        fn schedule_is_consistent(costs in prop::collection::vec(0u64..50, 0..20), m in 1usize..6) {
            let s = schedule_lpt(&tasks(&costs), m).unwrap();
            let mut seen: Vec<usize> = s.assignment.concat();
            seen.sort();
            prop_assert_eq!(seen, (0..costs.len()).collect::<Vec<_>>());
            for (list, &load) in s.assignment.iter().zip(&s.loads) {
                prop_assert_eq!(list.iter().map(|&i| costs[i]).sum::<u64>(), load);
            }
        }

        #[test]
        fn permutation_invariant_loads(costs in prop::collection::vec(0u64..50, 1..12), m in 1usize..5, rot in 0usize..12) {
            let base = tasks(&costs);
            let mut shuffled = base.clone();
            let len = shuffled.len();
            shuffled.rotate_left(rot % len);
            shuffled.reverse();
            let mut a = schedule_lpt(&base, m).unwrap().loads;
            let mut b = schedule_lpt(&shuffled, m).unwrap().loads;
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn bruteforce_matches_enumeration(costs in prop::collection::vec(1u64..20, 0..7), m in 1usize..4) {
            prop_assert_eq!(
                optimal_makespan_bruteforce(&tasks(&costs), m).unwrap(),
                if costs.is_empty() { 0 } else { enumerate_optimum(&costs, m) }
            );
        }
    }
}
