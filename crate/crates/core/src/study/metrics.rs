use serde::{Deserialize, Serialize};

use crate::env::{GameConfig, GameResult};

/// Path length of a game scaled by the fraction of the time budget it used.
pub fn normalized_travelled_distance(result: &GameResult, config: &GameConfig) -> f64 {
    path_length(result) * (result.duration / config.game_timeout)
}

/// Euclidean length of the trajectory, from the start state through every sample.
pub fn path_length(result: &GameResult) -> f64 {
    let mut prev = (result.start.x, result.start.y);
    let mut total = 0.0;
    for s in &result.trajectory {
        let p = (s.state.x, s.state.y);
        total += (p.0 - prev.0).hypot(p.1 - prev.1);
        prev = p;
    }
    total
}

pub const HEATMAP_CELLS: usize = 20;

/// Occupancy counts over 1 cm cells; `counts[row][col]` with rows along y and columns along x, both from the negative edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heatmap {
    pub batch_index: usize,
    pub counts: Vec<Vec<u64>>,
}

impl Heatmap {
    pub fn new(batch_index: usize) -> Self {
        Self { batch_index, counts: vec![vec![0; HEATMAP_CELLS]; HEATMAP_CELLS] }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Cell index along one axis. Upper cell edges belong to the higher cell; the last cell is closed.
    pub fn cell_index(coord: f64, half_width: f64) -> usize {
        let cell = 2.0 * half_width / HEATMAP_CELLS as f64;
        let u = (coord + half_width) / cell;
        // tolerate representation error so exact edges land in the upper cell
        let idx = (u + 1e-9).floor();
        (idx.max(0.0) as usize).min(HEATMAP_CELLS - 1)
    }

    pub fn add_game(&mut self, result: &GameResult, half_width: f64) {
        for s in &result.trajectory {
            let col = Self::cell_index(s.state.x, half_width);
            let row = Self::cell_index(s.state.y, half_width);
            self.counts[row][col] += 1;
        }
    }

    pub fn from_games<'a>(batch_index: usize, games: impl IntoIterator<Item = &'a GameResult>, half_width: f64) -> Self {
        let mut h = Self::new(batch_index);
        for g in games {
            h.add_game(g, half_width);
        }
        h
    }

    /// Share of the mass in cells crossed by either diagonal of the square (one cell wide each).
    pub fn diagonal_mass_fraction(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let n = HEATMAP_CELLS;
        let on_band: u64 = (0..n)
            .flat_map(|r| (0..n).map(move |c| (r, c)))
            .filter(|&(r, c)| r == c || r + c == n - 1)
            .map(|(r, c)| self.counts[r][c])
            .sum();
        on_band as f64 / total as f64
    }
}
