use std::collections::HashSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dcc_core::env::{
    distance_field, generate_map_with_density, make_instance, step, Action, DistanceField,
    EnvState, Instance, REWARD_COLLISION, REWARD_FINISH, REWARD_MOVE, REWARD_STAY_OFF_GOAL,
    REWARD_STAY_ON_GOAL,
};
use dcc_core::eval::{Report, ReportRow};
use dcc_core::model::ScopeMode;
use dcc_core::oracles::flood_fill_reference;

fn instance(seed: u64, size: usize, agents: usize, density: f64) -> Option<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let map = generate_map_with_density(size, density, &mut rng);
    make_instance(&map, agents, &mut rng).ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn instance_text_round_trips(seed in any::<u64>(), size in 4usize..16, agents in 1usize..8, density in 0.0f64..0.4) {
        if let Some(inst) = instance(seed, size, agents, density) {
            let back = Instance::from_text(&inst.to_text(), "prop").unwrap();
            prop_assert_eq!(back, inst);
        }
    }

    #[test]
    fn distance_field_matches_flood_fill(seed in any::<u64>(), size in 3usize..14, density in 0.0f64..0.5) {
        if let Some(inst) = instance(seed, size, 1, density) {
            let goal = inst.goals()[0];
            let field = distance_field(inst.map(), goal).unwrap();
            let oracle = flood_fill_reference(inst.map().cells(), size, (goal.row, goal.col));
            let ours: Vec<Option<u64>> = field.raw().iter().map(|&d| (d != DistanceField::UNREACHABLE).then_some(d as u64)).collect();
            prop_assert_eq!(ours, oracle);
        }
    }

    #[test]
    fn joint_steps_stay_collision_free(
        seed in any::<u64>(),
        size in 4usize..12,
        agents in 2usize..10,
        moves in prop::collection::vec(0usize..5, 10 * 24),
    ) {
        let Some(inst) = instance(seed, size, agents, 0.2) else { return Ok(()) };
        let n = inst.num_agents();
        let allowed = [REWARD_MOVE, REWARD_STAY_ON_GOAL, REWARD_STAY_OFF_GOAL, REWARD_COLLISION, REWARD_FINISH];
        let mut state = EnvState::initial(&inst);
        for chunk in moves.chunks(n).take(24) {
            if chunk.len() < n || state.arrived.iter().all(|&a| a) {
                break;
            }
            let actions: Vec<Action> = chunk.iter().map(|&k| Action::from_index(k).unwrap()).collect();
            let (next, outcome) = step(&inst, &state, &actions, 100).unwrap();
            let cells: HashSet<_> = next.positions.iter().collect();
            prop_assert_eq!(cells.len(), n, "two agents share a cell");
            for i in 0..n {
                prop_assert!(!inst.map().is_obstacle(next.positions[i]));
                prop_assert!(state.positions[i].manhattan(next.positions[i]) <= 1);
                prop_assert!(allowed.contains(&outcome.rewards[i]));
                for j in 0..n {
                    let swapped = i != j && next.positions[i] == state.positions[j] && next.positions[j] == state.positions[i];
                    prop_assert!(!swapped, "agents {} and {} swapped", i, j);
                }
            }
            state = next;
        }
    }

    #[test]
    fn report_csv_round_trips(cells in prop::collection::vec((1usize..80, 1usize..128, 0usize..200, 0.0f64..1.0, 0.0f64..500.0, 0.0f64..50.0, any::<bool>()), 0..12)) {
        let rows = cells
            .into_iter()
            .map(|(size, agents, cases, success_rate, mean_steps, mean_comm_pairs, dcc)| ReportRow {
                size,
                agents,
                mode: if dcc { ScopeMode::Dcc } else { ScopeMode::RrN2 },
                cases,
                success_rate,
                mean_steps,
                mean_comm_pairs,
            })
            .collect();
        let report = Report { meta: vec![("suite_hash".into(), "abc".into())], rows };
        prop_assert_eq!(Report::from_csv(&report.to_csv(), "prop").unwrap(), report);
    }
}
