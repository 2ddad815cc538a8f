//! Mini-Sudoku puzzles from a seeded backtracking generator.

use lpgd::pipeline::Sample;
use lpgd::sudoku::{self, SIZE};
use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SudokuInstance {
    /// One-hot encoding of the clues, zero on empty cells.
    pub x_inc: DVector<f64>,
    /// One-hot encoding of the solved board.
    pub x_true: DVector<f64>,
    /// Which of the 16 cells are given.
    pub given: Vec<bool>,
}

impl SudokuInstance {
    pub fn to_sample(&self) -> Sample {
        Sample {
            input: self.x_inc.clone(),
            target: self.x_true.clone(),
        }
    }
}

/// `count` puzzles with `givens` clues each, reproducible from `seed`.
///
/// # Panics
/// If `givens > 16`.
pub fn generate_sudoku_dataset(count: usize, givens: usize, seed: u64) -> Vec<SudokuInstance> {
    assert!(givens <= SIZE * SIZE, "a 4x4 board has 16 cells");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let board = random_solved_board(&mut rng);
            let mut cells: Vec<usize> = (0..SIZE * SIZE).collect();
            cells.shuffle(&mut rng);
            let mut given = vec![false; SIZE * SIZE];
            for &cell in &cells[..givens] {
                given[cell] = true;
            }
            let clues: Vec<Option<u8>> = board
                .iter()
                .zip(&given)
                .map(|(&d, &g)| g.then_some(d))
                .collect();
            let full: Vec<Option<u8>> = board.iter().map(|&d| Some(d)).collect();
            SudokuInstance {
                x_inc: sudoku::encode(&clues),
                x_true: sudoku::encode(&full),
                given,
            }
        })
        .collect()
}

fn random_solved_board(rng: &mut impl Rng) -> Vec<u8> {
    let mut board = vec![u8::MAX; SIZE * SIZE];
    let filled = fill(&mut board, 0, rng);
    debug_assert!(filled, "an empty 4x4 board always has a solution");
    board
}

fn fill(board: &mut [u8], cell: usize, rng: &mut impl Rng) -> bool {
    if cell == board.len() {
        return true;
    }
    let mut digits: Vec<u8> = (0..SIZE as u8).collect();
    digits.shuffle(rng);
    for d in digits {
        if allowed(board, cell, d) {
            board[cell] = d;
            if fill(board, cell + 1, rng) {
                return true;
            }
        }
    }
    board[cell] = u8::MAX;
    false
}

fn allowed(board: &[u8], cell: usize, d: u8) -> bool {
    let (r, c) = (cell / SIZE, cell % SIZE);
    let (br, bc) = (r / sudoku::BOX * sudoku::BOX, c / sudoku::BOX * sudoku::BOX);
    (0..SIZE).all(|k| board[r * SIZE + k] != d && board[k * SIZE + c] != d)
        && (0..sudoku::BOX).all(|i| (0..sudoku::BOX).all(|j| board[(br + i) * SIZE + bc + j] != d))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fully_given_and_empty_puzzles() {
        let full = generate_sudoku_dataset(1, 16, 3);
        assert_eq!(full[0].x_inc, full[0].x_true);
        let empty = generate_sudoku_dataset(1, 0, 3);
        assert_eq!(empty[0].x_inc.amax(), 0.0);
    }

    #[test]
    fn boards_are_valid_and_clues_agree() {
        for inst in generate_sudoku_dataset(500, 6, 11) {
            assert!(sudoku::is_valid_solution(&inst.x_true));
            for cell in 0..16 {
                for d in 0..4 {
                    let i = cell * 4 + d;
                    let expected = if inst.given[cell] { inst.x_true[i] } else { 0.0 };
                    assert_eq!(inst.x_inc[i], expected);
                }
            }
            assert_eq!(inst.given.iter().filter(|&&g| g).count(), 6);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate_sudoku_dataset(20, 5, 9), generate_sudoku_dataset(20, 5, 9));
        assert_ne!(generate_sudoku_dataset(20, 5, 9), generate_sudoku_dataset(20, 5, 10));
    }
}
