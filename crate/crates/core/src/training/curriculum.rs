use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;

use super::config::CurriculumSection;
use super::segment::Task;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
struct TaskRecord {
    task: Task,
    history: VecDeque<bool>,
    promoted: bool,
}

/// Unlocked tasks and their recent outcomes. A task whose rolling success
/// rate over a full window exceeds the threshold unlocks one more agent on
/// the same map and the same agents on a larger map, within the caps.
#[derive(Clone, Debug, PartialEq)]
pub struct Curriculum {
    cfg: CurriculumSection,
    tasks: Vec<TaskRecord>,
}

impl Curriculum {
    pub fn new(cfg: &CurriculumSection) -> Self {
        let start = Task {
            size: cfg.start_size,
            agents: cfg.start_agents,
        };
        Self {
            cfg: cfg.clone(),
            tasks: vec![TaskRecord {
                task: start,
                history: VecDeque::new(),
                promoted: false,
            }],
        }
    }

    pub fn unlocked(&self) -> Vec<Task> {
        self.tasks.iter().map(|r| r.task).collect()
    }

    pub fn is_unlocked(&self, task: Task) -> bool {
        self.tasks.iter().any(|r| r.task == task)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Task {
        self.tasks
            .choose(rng)
            .expect("at least the starting task")
            .task
    }

    /// Rolling success rate, `None` before any episode.
    pub fn success_rate(&self, task: Task) -> Option<f64> {
        let r = self.tasks.iter().find(|r| r.task == task)?;
        (!r.history.is_empty())
            .then(|| r.history.iter().filter(|&&s| s).count() as f64 / r.history.len() as f64)
    }

    pub fn episodes(&self, task: Task) -> usize {
        self.tasks
            .iter()
            .find(|r| r.task == task)
            .map_or(0, |r| r.history.len())
    }

    /// Records one episode; returns newly unlocked tasks.
    pub fn record(&mut self, task: Task, success: bool) -> Vec<Task> {
        let window = self.cfg.window;
        let threshold = self.cfg.threshold;
        let Some(rec) = self.tasks.iter_mut().find(|r| r.task == task) else {
            return Vec::new();
        };
        rec.history.push_back(success);
        while rec.history.len() > window {
            rec.history.pop_front();
        }
        let rate = rec.history.iter().filter(|&&s| s).count() as f64 / rec.history.len() as f64;
        if rec.promoted || rec.history.len() < window || rate <= threshold {
            return Vec::new();
        }
        rec.promoted = true;
        let mut fresh = Vec::new();
        let more_agents = Task {
            size: task.size,
            agents: task.agents + 1,
        };
        let bigger_map = Task {
            size: task.size + self.cfg.size_step,
            agents: task.agents,
        };
        if more_agents.agents <= self.cfg.max_agents {
            fresh.push(more_agents);
        }
        if self.cfg.size_step > 0 && bigger_map.size <= self.cfg.max_size {
            fresh.push(bigger_map);
        }
        fresh.retain(|t| !self.is_unlocked(*t));
        for &t in &fresh {
            self.tasks.push(TaskRecord {
                task: t,
                history: VecDeque::new(),
                promoted: false,
            });
        }
        fresh
    }

    /// Text form for checkpoint metadata: `size,agents,promoted,history`
    /// records separated by `;`, history as a run of `0`/`1`.
    pub fn to_text(&self) -> String {
        self.tasks
            .iter()
            .map(|r| {
                let h: String = r
                    .history
                    .iter()
                    .map(|&s| if s { '1' } else { '0' })
                    .collect();
                format!("{},{},{},{h}", r.task.size, r.task.agents, r.promoted as u8)
            })
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn from_text(cfg: &CurriculumSection, text: &str) -> Result<Self> {
        let bad = || Error::Checkpoint(format!("malformed curriculum state `{text}`"));
        let mut tasks = Vec::new();
        for rec in text.split(';') {
            let parts: Vec<&str> = rec.split(',').collect();
            let [size, agents, promoted, hist] = parts[..] else {
                return Err(bad());
            };
            let task = Task {
                size: size.parse().map_err(|_| bad())?,
                agents: agents.parse().map_err(|_| bad())?,
            };
            let history = hist
                .chars()
                .map(|c| match c {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    _ => Err(bad()),
                })
                .collect::<Result<_>>()?;
            tasks.push(TaskRecord {
                task,
                history,
                promoted: promoted == "1",
            });
        }
        if tasks.is_empty() {
            return Err(bad());
        }
        Ok(Self {
            cfg: cfg.clone(),
            tasks,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feed(c: &mut Curriculum, task: Task, successes: usize, total: usize) -> Vec<Task> {
        let mut fresh = Vec::new();
        for k in 0..total {
            fresh.extend(c.record(task, k < successes));
        }
        fresh
    }

    const START: Task = Task {
        size: 10,
        agents: 1,
    };

    #[test]
    fn starts_at_ten_by_one() {
        assert_eq!(
            Curriculum::new(&CurriculumSection::default()).unlocked(),
            vec![START]
        );
    }

    #[test]
    fn ninety_two_percent_unlocks_two_tasks() {
        let mut c = Curriculum::new(&CurriculumSection::default());
        let fresh = feed(&mut c, START, 92, 100);
        assert_eq!(
            fresh,
            vec![
                Task {
                    size: 10,
                    agents: 2
                },
                Task {
                    size: 15,
                    agents: 1
                }
            ]
        );
    }

    #[test]
    fn eighty_nine_percent_does_not() {
        let mut c = Curriculum::new(&CurriculumSection::default());
        assert!(feed(&mut c, START, 89, 100).is_empty());
        assert_eq!(c.unlocked().len(), 1);
    }

    #[test]
    fn cap_blocks_growth() {
        let cfg = CurriculumSection {
            start_size: 40,
            start_agents: 16,
            ..Default::default()
        };
        let mut c = Curriculum::new(&cfg);
        let top = Task {
            size: 40,
            agents: 16,
        };
        assert!(feed(&mut c, top, 95, 100).is_empty());
    }

    #[test]
    fn needs_a_full_window() {
        let mut c = Curriculum::new(&CurriculumSection::default());
        assert!(feed(&mut c, START, 50, 50).is_empty());
    }

    #[test]
    fn text_round_trip() {
        let cfg = CurriculumSection::default();
        let mut c = Curriculum::new(&cfg);
        feed(&mut c, START, 95, 100);
        c.record(
            Task {
                size: 10,
                agents: 2,
            },
            true,
        );
        assert_eq!(Curriculum::from_text(&cfg, &c.to_text()).unwrap(), c);
    }
}
