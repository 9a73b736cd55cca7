//! FocusFire: a small cooperative micromanagement game.
//!
//! `N` allied agents fight `E` scripted enemies on an `L×L` arena that also
//! holds `D` inert distractor entities. Each agent sees a list of entity rows
//! (itself first, then the other allies, the enemies and the distractors);
//! entities outside its sight range are zero rows. Every alive agent chooses
//! among `E + 6` actions:
//!
//! | index   | action                         |
//! |---------|--------------------------------|
//! | 0       | no-op (only for dead agents)   |
//! | 1       | stop                           |
//! | 2..=5   | move north, south, east, west  |
//! | 6 + j   | attack enemy `j`               |
//!
//! A step resolves simultaneously: enemy decisions are taken on the
//! pre-step positions, then all moves apply, then all attacks, then deaths.
//! Enemies attack the nearest ally in range, otherwise walk toward the
//! nearest ally. The shared reward counts damage dealt, kills and a win
//! bonus; damage taken is not penalised.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::attention::EntitySet;
use crate::error::{Error, Result};
use crate::numerics::{Shape, Tensor};

pub const NOOP: usize = 0;
pub const STOP: usize = 1;
pub const MOVE_NORTH: usize = 2;
pub const MOVE_SOUTH: usize = 3;
pub const MOVE_EAST: usize = 4;
pub const MOVE_WEST: usize = 5;
pub const ATTACK_BASE: usize = 6;

/// Per-unit features in the global state: `x/L, y/L, health fraction, team one-hot`.
pub const STATE_FEATURES_PER_UNIT: usize = 6;
/// Entity-row features before the agent-id one-hot.
pub const BASE_ENTITY_FEATURES: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub n_allies: usize,
    pub n_enemies: usize,
    pub n_distractors: usize,
    pub arena_size: f64,
    pub sight_range: f64,
    pub ally_attack_range: f64,
    pub ally_damage: f64,
    pub enemy_attack_range: f64,
    pub enemy_damage: f64,
    pub unit_health: f64,
    pub move_step: f64,
    pub episode_limit: usize,
    pub reward_damage: f64,
    pub reward_kill: f64,
    pub reward_win: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            n_allies: 3,
            n_enemies: 3,
            n_distractors: 6,
            arena_size: 16.0,
            sight_range: 9.0,
            ally_attack_range: 3.0,
            ally_damage: 4.0,
            enemy_attack_range: 2.0,
            enemy_damage: 3.0,
            unit_health: 20.0,
            move_step: 1.0,
            episode_limit: 60,
            reward_damage: 0.05,
            reward_kill: 0.5,
            reward_win: 2.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_allies == 0 {
            problems.push("n_allies must be at least 1");
        }
        if self.n_enemies == 0 {
            problems.push("n_enemies must be at least 1");
        }
        let positive = [
            (self.arena_size, "arena_size must be positive"),
            (self.sight_range, "sight_range must be positive"),
            (self.ally_attack_range, "ally_attack_range must be positive"),
            (self.enemy_attack_range, "enemy_attack_range must be positive"),
            (self.unit_health, "unit_health must be positive"),
            (self.move_step, "move_step must be positive"),
        ];
        for (v, msg) in positive {
            if !(v.is_finite() && v > 0.0) {
                problems.push(msg);
            }
        }
        let non_negative = [
            (self.ally_damage, "ally_damage must be non-negative"),
            (self.enemy_damage, "enemy_damage must be non-negative"),
            (self.reward_damage, "reward_damage must be non-negative"),
            (self.reward_kill, "reward_kill must be non-negative"),
            (self.reward_win, "reward_win must be non-negative"),
        ];
        for (v, msg) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                problems.push(msg);
            }
        }
        if self.episode_limit == 0 {
            problems.push("episode_limit must be at least 1");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }

    pub fn n_units(&self) -> usize {
        self.n_allies + self.n_enemies + self.n_distractors
    }

    pub fn n_actions(&self) -> usize {
        ATTACK_BASE + self.n_enemies
    }

    /// Width `d_E` of an entity row.
    pub fn entity_dim(&self) -> usize {
        BASE_ENTITY_FEATURES + self.n_allies
    }

    pub fn state_dim(&self) -> usize {
        self.n_units() * STATE_FEATURES_PER_UNIT
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Team {
    Ally,
    Enemy,
    Distractor,
}

impl Team {
    fn one_hot(self) -> [f64; 3] {
        match self {
            Team::Ally => [1.0, 0.0, 0.0],
            Team::Enemy => [0.0, 1.0, 0.0],
            Team::Distractor => [0.0, 0.0, 1.0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Team::Ally => "ally",
            Team::Enemy => "enemy",
            Team::Distractor => "distractor",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Unit {
    pub team: Team,
    pub pos: [f64; 2],
    pub health: f64,
    pub max_health: f64,
    pub attack_range: f64,
    pub damage: f64,
}

impl Unit {
    /// Distractors are always present; combatants while health is positive.
    pub fn alive(&self) -> bool {
        self.team == Team::Distractor || self.health > 0.0
    }

    pub fn health_fraction(&self) -> f64 {
        if self.team == Team::Distractor {
            0.0
        } else {
            self.health / self.max_health
        }
    }

    pub fn distance(&self, other: &Unit) -> f64 {
        libm::hypot(self.pos[0] - other.pos[0], self.pos[1] - other.pos[1])
    }
}

/// Units are stored allies first, then enemies, then distractors.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub units: Vec<Unit>,
    pub t: usize,
    pub limit: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepInfo {
    pub won: bool,
    /// Ended by the episode limit rather than by one side being eliminated.
    pub truncated: bool,
    pub damage_dealt: f64,
    pub kills: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub terminal: bool,
    pub info: StepInfo,
}

#[derive(Clone, Debug)]
pub struct FocusFire {
    config: EnvConfig,
    state: WorldState,
    terminal: bool,
}

impl FocusFire {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let limit = config.episode_limit;
        Ok(FocusFire { config, state: WorldState { units: Vec::new(), t: 0, limit }, terminal: true })
    }

    /// Starts from an explicit world, e.g. a hand-built test position.
    pub fn with_state(config: EnvConfig, state: WorldState) -> Result<Self> {
        config.validate()?;
        if state.units.len() != config.n_units() {
            return Err(Error::InvalidConfig(format!(
                "world has {} units, config expects {}",
                state.units.len(),
                config.n_units()
            )));
        }
        Ok(FocusFire { config, state, terminal: false })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    /// Spawns allies and enemies around the centres of the left and right
    /// halves with uniform jitter; distractors anywhere.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let c = &self.config;
        let l = c.arena_size;
        let jitter = (l / 8.0).min(1.5);
        let mut units = Vec::with_capacity(c.n_units());
        let mut spawn = |team: Team, cx: f64, lo: f64, hi: f64, rng: &mut R| {
            let x = (cx + rng.gen_range(-jitter..=jitter)).clamp(lo, hi);
            let y = (l / 2.0 + rng.gen_range(-jitter..=jitter)).clamp(0.0, l);
            let (range, damage) = match team {
                Team::Ally => (c.ally_attack_range, c.ally_damage),
                _ => (c.enemy_attack_range, c.enemy_damage),
            };
            units.push(Unit { team, pos: [x, y], health: c.unit_health, max_health: c.unit_health, attack_range: range, damage });
        };
        for _ in 0..c.n_allies {
            spawn(Team::Ally, l / 4.0, 0.0, l / 2.0, rng);
        }
        for _ in 0..c.n_enemies {
            spawn(Team::Enemy, 3.0 * l / 4.0, l / 2.0, l, rng);
        }
        for _ in 0..c.n_distractors {
            let pos = [rng.gen_range(0.0..=l), rng.gen_range(0.0..=l)];
            units.push(Unit { team: Team::Distractor, pos, health: 0.0, max_health: 0.0, attack_range: 0.0, damage: 0.0 });
        }
        self.state = WorldState { units, t: 0, limit: c.episode_limit };
        self.terminal = false;
    }

    fn ally(&self, i: usize) -> &Unit {
        &self.state.units[i]
    }

    fn enemy_index(&self, j: usize) -> usize {
        self.config.n_allies + j
    }

    /// Unit indices in the order agent `agent` sees them: itself first.
    pub fn entity_order(&self, agent: usize) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.config.n_units());
        order.push(agent);
        order.extend((0..self.config.n_allies).filter(|&a| a != agent));
        order.extend(self.config.n_allies..self.config.n_units());
        order
    }

    /// Entity rows for `agent`:
    /// `[visible, Δx/L, Δy/L, dist/L, health fraction, team one-hot(3), ally id one-hot(N)]`.
    pub fn observe(&self, agent: usize) -> EntitySet {
        let c = &self.config;
        let (m, d) = (c.n_units(), c.entity_dim());
        let mut rows = vec![0.0; m * d];
        let mut alive = vec![false; m];
        let me = self.ally(agent);
        if me.alive() {
            let l = c.arena_size;
            for (slot, &u) in self.entity_order(agent).iter().enumerate() {
                let other = &self.state.units[u];
                let dist = me.distance(other);
                let visible = u == agent || (other.alive() && dist <= c.sight_range);
                if !visible {
                    continue;
                }
                alive[slot] = true;
                let row = &mut rows[slot * d..(slot + 1) * d];
                row[0] = 1.0;
                row[1] = (other.pos[0] - me.pos[0]) / l;
                row[2] = (other.pos[1] - me.pos[1]) / l;
                row[3] = dist / l;
                row[4] = other.health_fraction();
                row[5..8].copy_from_slice(&other.team.one_hot());
                if other.team == Team::Ally {
                    row[BASE_ENTITY_FEATURES + u] = 1.0;
                }
            }
        }
        EntitySet::new(Tensor::new(Shape::matrix(m, d), rows).expect("sized above"), alive)
            .expect("observation rows are finite")
    }

    pub fn avail_actions(&self, agent: usize) -> Vec<bool> {
        let c = &self.config;
        let mut avail = vec![false; c.n_actions()];
        let me = self.ally(agent);
        if !me.alive() {
            avail[NOOP] = true;
            return avail;
        }
        let (l, s) = (c.arena_size, c.move_step);
        avail[STOP] = true;
        avail[MOVE_NORTH] = me.pos[1] + s <= l;
        avail[MOVE_SOUTH] = me.pos[1] - s >= 0.0;
        avail[MOVE_EAST] = me.pos[0] + s <= l;
        avail[MOVE_WEST] = me.pos[0] - s >= 0.0;
        for j in 0..c.n_enemies {
            let e = &self.state.units[self.enemy_index(j)];
            avail[ATTACK_BASE + j] = e.alive() && me.distance(e) <= me.attack_range;
        }
        avail
    }

    /// Per-unit `[x/L, y/L, health fraction, team one-hot]`, in storage order,
    /// independent of any agent's sight.
    pub fn global_state(&self) -> Vec<f64> {
        let l = self.config.arena_size;
        let mut out = Vec::with_capacity(self.config.state_dim());
        for u in &self.state.units {
            out.push(u.pos[0] / l);
            out.push(u.pos[1] / l);
            out.push(u.health_fraction());
            out.extend_from_slice(&u.team.one_hot());
        }
        out
    }

    fn nearest_alive_ally(&self, from: &Unit) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.config.n_allies {
            let a = self.ally(i);
            if !a.alive() {
                continue;
            }
            let d = from.distance(a);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        if self.terminal {
            return Err(Error::EpisodeOver);
        }
        let c = self.config.clone();
        if actions.len() != c.n_allies {
            return Err(Error::InvalidConfig(format!("expected {} actions, got {}", c.n_allies, actions.len())));
        }
        for (agent, &a) in actions.iter().enumerate() {
            if !self.avail_actions(agent).get(a).copied().unwrap_or(false) {
                return Err(Error::UnavailableAction { agent, action: a });
            }
        }

        // Enemy decisions on the pre-step world: (attack target, move target).
        let mut enemy_attack = vec![None; c.n_enemies];
        let mut enemy_move = vec![None; c.n_enemies];
        for j in 0..c.n_enemies {
            let e = &self.state.units[self.enemy_index(j)];
            if !e.alive() {
                continue;
            }
            if let Some((target, dist)) = self.nearest_alive_ally(e) {
                if dist <= e.attack_range {
                    enemy_attack[j] = Some(target);
                } else {
                    enemy_move[j] = Some(self.ally(target).pos);
                }
            }
        }
        let mut incoming = vec![0.0; c.n_units()];
        for (agent, &a) in actions.iter().enumerate() {
            if a >= ATTACK_BASE {
                incoming[self.enemy_index(a - ATTACK_BASE)] += self.ally(agent).damage;
            }
        }
        for (j, target) in enemy_attack.iter().enumerate() {
            if let Some(t) = *target {
                incoming[t] += self.state.units[self.enemy_index(j)].damage;
            }
        }

        // Moves.
        let (l, s) = (c.arena_size, c.move_step);
        for (agent, &a) in actions.iter().enumerate() {
            let pos = &mut self.state.units[agent].pos;
            match a {
                MOVE_NORTH => pos[1] += s,
                MOVE_SOUTH => pos[1] -= s,
                MOVE_EAST => pos[0] += s,
                MOVE_WEST => pos[0] -= s,
                _ => {}
            }
            pos[0] = pos[0].clamp(0.0, l);
            pos[1] = pos[1].clamp(0.0, l);
        }
        for (j, target) in enemy_move.iter().enumerate() {
            if let Some(goal) = *target {
                let idx = self.enemy_index(j);
                let pos = &mut self.state.units[idx].pos;
                let (dx, dy) = (goal[0] - pos[0], goal[1] - pos[1]);
                if dx.abs() >= dy.abs() {
                    pos[0] += dx.signum() * s.min(dx.abs());
                } else {
                    pos[1] += dy.signum() * s.min(dy.abs());
                }
                pos[0] = pos[0].clamp(0.0, l);
                pos[1] = pos[1].clamp(0.0, l);
            }
        }

        // Attacks and deaths.
        let mut info = StepInfo::default();
        for (idx, dmg) in incoming.iter().enumerate() {
            if *dmg <= 0.0 {
                continue;
            }
            let u = &mut self.state.units[idx];
            let dealt = dmg.min(u.health);
            let was_alive = u.health > 0.0;
            u.health = (u.health - dmg).max(0.0);
            if u.team == Team::Enemy {
                info.damage_dealt += dealt;
                if was_alive && u.health <= 0.0 {
                    info.kills += 1;
                }
            }
        }

        self.state.t += 1;
        let enemies_left = (0..c.n_enemies).any(|j| self.state.units[self.enemy_index(j)].alive());
        let allies_left = (0..c.n_allies).any(|i| self.ally(i).alive());
        info.won = !enemies_left;
        let eliminated = !enemies_left || !allies_left;
        let terminal = eliminated || self.state.t >= self.state.limit;
        info.truncated = terminal && !eliminated;
        self.terminal = terminal;

        let mut reward = c.reward_damage * info.damage_dealt + c.reward_kill * info.kills as f64;
        if info.won {
            reward += c.reward_win;
        }
        Ok(StepOutcome { reward, terminal, info })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit(team: Team, x: f64, y: f64, health: f64) -> Unit {
        let c = EnvConfig::default();
        let (range, damage) = match team {
            Team::Ally => (c.ally_attack_range, c.ally_damage),
            Team::Enemy => (c.enemy_attack_range, c.enemy_damage),
            Team::Distractor => (0.0, 0.0),
        };
        let max = if team == Team::Distractor { 0.0 } else { c.unit_health };
        Unit { team, pos: [x, y], health, max_health: max, attack_range: range, damage }
    }

    fn one_v_one(enemy_x: f64, enemy_health: f64) -> FocusFire {
        let config = EnvConfig { n_allies: 1, n_enemies: 1, n_distractors: 0, ..EnvConfig::default() };
        let units = vec![unit(Team::Ally, 4.0, 8.0, 20.0), unit(Team::Enemy, enemy_x, 8.0, enemy_health)];
        FocusFire::with_state(config, WorldState { units, t: 0, limit: 60 }).unwrap()
    }

    #[test]
    fn observation_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let config = EnvConfig { n_distractors: 0, ..EnvConfig::default() };
        let mut env = FocusFire::new(config).unwrap();
        env.reset(&mut rng);
        assert_eq!(env.observe(0).num_entities(), 6);

        let mut env = FocusFire::new(EnvConfig::default()).unwrap();
        env.reset(&mut rng);
        assert_eq!(env.observe(2).num_entities(), 12);
        assert_eq!(env.avail_actions(0).len(), 9);
    }

    #[test]
    fn reset_is_seeded() {
        let mut a = FocusFire::new(EnvConfig::default()).unwrap();
        let mut b = FocusFire::new(EnvConfig::default()).unwrap();
        a.reset(&mut ChaCha8Rng::seed_from_u64(5));
        b.reset(&mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a.state(), b.state());
        assert_eq!(a.global_state(), b.global_state());
        for u in &a.state().units[..3] {
            assert!(u.pos[0] < 8.0);
        }
        for u in &a.state().units[3..6] {
            assert!(u.pos[0] >= 8.0);
        }
    }

    #[test]
    fn self_row_and_sight_masking() {
        let env = one_v_one(14.0, 20.0);
        let obs = env.observe(0);
        let row = obs.entities().row(0);
        assert_eq!(&row[..4], &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(row[4], 1.0);
        // Enemy 10 units away, beyond sight 9.
        assert!(obs.entities().row(1).iter().all(|&v| v == 0.0));
        assert_eq!(obs.alive_mask(), &[true, false]);
    }

    #[test]
    fn dead_agent_only_noops() {
        let mut env = one_v_one(5.0, 20.0);
        env.state.units[0].health = 0.0;
        let avail = env.avail_actions(0);
        assert_eq!(avail.iter().filter(|&&a| a).count(), 1);
        assert!(avail[NOOP]);
    }

    #[test]
    fn boundary_masks_moves() {
        let mut env = one_v_one(14.0, 20.0);
        env.state.units[0].pos = [0.0, 8.0];
        let avail = env.avail_actions(0);
        assert!(!avail[MOVE_WEST] && avail[MOVE_EAST] && avail[STOP]);
        assert!(!avail[ATTACK_BASE]);
    }

    #[test]
    fn null_step_advances_time_only() {
        let mut env = one_v_one(14.0, 20.0);
        env.state.units[1].pos = [14.0, 16.0];
        let before = env.state().clone();
        let out = env.step(&[STOP]).unwrap();
        assert_eq!(out.reward, 0.0);
        assert!(!out.terminal);
        assert_eq!(env.state().t, 1);
        assert_eq!(env.state().units[0], before.units[0]);
    }

    #[test]
    fn killing_last_enemy_wins() {
        let mut env = one_v_one(6.0, 1.0);
        let out = env.step(&[ATTACK_BASE]).unwrap();
        assert!(out.terminal && out.info.won && !out.info.truncated);
        let c = EnvConfig::default();
        let expected = c.reward_damage * 1.0 + c.reward_kill + c.reward_win;
        assert!((out.reward - expected).abs() < 1e-12);
        assert_eq!(env.step(&[STOP]).unwrap_err(), Error::EpisodeOver);
    }

    #[test]
    fn unavailable_action_rejected() {
        let mut env = one_v_one(14.0, 20.0);
        assert_eq!(env.step(&[ATTACK_BASE]).unwrap_err(), Error::UnavailableAction { agent: 0, action: ATTACK_BASE });
        assert_eq!(env.step(&[NOOP]).unwrap_err(), Error::UnavailableAction { agent: 0, action: NOOP });
    }

    #[test]
    fn dead_unit_keeps_position_in_state() {
        let mut env = one_v_one(6.0, 20.0);
        env.state.units[1].health = 0.0;
        let s = env.global_state();
        assert_eq!(s.len(), 2 * STATE_FEATURES_PER_UNIT);
        assert_eq!(s[6], 6.0 / 16.0);
        assert_eq!(s[8], 0.0);
    }

    #[test]
    fn invalid_config_reports_fields() {
        let bad = EnvConfig { n_enemies: 0, sight_range: -1.0, ..EnvConfig::default() };
        match FocusFire::new(bad) {
            Err(Error::InvalidConfig(msg)) => {
                assert!(msg.contains("n_enemies") && msg.contains("sight_range"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
