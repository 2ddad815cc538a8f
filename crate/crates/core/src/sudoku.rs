//! 4x4 Sudoku in one-hot encoding: variable `(r * 4 + c) * 4 + d` is 1 iff
//! cell `(r, c)` holds digit `d` (all zero-based).

use nalgebra::{DMatrix, DVector};

pub const SIZE: usize = 4;
pub const BOX: usize = 2;
pub const NUM_VARS: usize = SIZE * SIZE * SIZE;
/// Cell, row, column and box groups, one row per (group, digit).
pub const NUM_RULES: usize = 4 * SIZE * SIZE;

pub fn var_index(row: usize, col: usize, digit: usize) -> usize {
    (row * SIZE + col) * SIZE + digit
}

/// One-hot encoding of a board given as digits `0..4`, with `None` for
/// empty cells.
pub fn encode(board: &[Option<u8>]) -> DVector<f64> {
    assert_eq!(board.len(), SIZE * SIZE, "a 4x4 board has 16 cells");
    let mut x = DVector::zeros(NUM_VARS);
    for (cell, d) in board.iter().enumerate() {
        if let Some(d) = d {
            x[cell * SIZE + *d as usize] = 1.0;
        }
    }
    x
}

/// Rules as equality constraints `A x + b = 0`: every cell holds exactly one
/// digit and every row, column and box holds every digit exactly once.
pub fn rule_constraints() -> (DMatrix<f64>, DVector<f64>) {
    let mut a = DMatrix::zeros(NUM_RULES, NUM_VARS);
    let mut row = 0;
    for r in 0..SIZE {
        for c in 0..SIZE {
            for d in 0..SIZE {
                a[(row, var_index(r, c, d))] = 1.0;
            }
            row += 1;
        }
    }
    for r in 0..SIZE {
        for d in 0..SIZE {
            for c in 0..SIZE {
                a[(row, var_index(r, c, d))] = 1.0;
            }
            row += 1;
        }
    }
    for c in 0..SIZE {
        for d in 0..SIZE {
            for r in 0..SIZE {
                a[(row, var_index(r, c, d))] = 1.0;
            }
            row += 1;
        }
    }
    for br in 0..SIZE / BOX {
        for bc in 0..SIZE / BOX {
            for d in 0..SIZE {
                for r in br * BOX..(br + 1) * BOX {
                    for c in bc * BOX..(bc + 1) * BOX {
                        a[(row, var_index(r, c, d))] = 1.0;
                    }
                }
                row += 1;
            }
        }
    }
    (a, DVector::from_element(NUM_RULES, -1.0))
}

/// Per cell, put a one on the largest entry (lowest digit on ties).
pub fn argmax_round(x: &DVector<f64>) -> DVector<f64> {
    assert_eq!(x.len(), NUM_VARS);
    let mut out = DVector::zeros(NUM_VARS);
    for cell in 0..SIZE * SIZE {
        let mut best = 0;
        for d in 1..SIZE {
            if x[cell * SIZE + d] > x[cell * SIZE + best] {
                best = d;
            }
        }
        out[cell * SIZE + best] = 1.0;
    }
    out
}

/// Number of rule constraints violated by a 0/1 encoding.
pub fn violated_rules(x: &DVector<f64>) -> usize {
    let (a, b) = rule_constraints();
    (&a * x + &b).iter().filter(|v| v.abs() > 0.5).count()
}

pub fn is_valid_solution(x: &DVector<f64>) -> bool {
    x.len() == NUM_VARS
        && x.iter().all(|&v| v == 0.0 || v == 1.0)
        && violated_rules(x) == 0
}

/// Decode a one-hot board into digits (`None` for cells without a one).
pub fn decode(x: &DVector<f64>) -> Vec<Option<u8>> {
    (0..SIZE * SIZE)
        .map(|cell| (0..SIZE).find(|&d| x[cell * SIZE + d] > 0.5).map(|d| d as u8))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solved() -> Vec<Option<u8>> {
        [0, 1, 2, 3, 2, 3, 0, 1, 1, 0, 3, 2, 3, 2, 1, 0]
            .iter()
            .map(|&d| Some(d))
            .collect()
    }

    #[test]
    fn valid_board_satisfies_rules() {
        let x = encode(&solved());
        assert!(is_valid_solution(&x));
        assert_eq!(decode(&x), solved());
    }

    #[test]
    fn swapped_cells_violate_rules() {
        let mut board = solved();
        board.swap(0, 1);
        // row 0 still fine, but columns 0/1 and the box now repeat digits
        assert!(violated_rules(&encode(&board)) > 0);
    }

    #[test]
    fn uniform_point_is_feasible_and_rank_is_40() {
        let (a, b) = rule_constraints();
        let uniform = DVector::from_element(NUM_VARS, 0.25);
        assert!((&a * &uniform + &b).amax() < 1e-15);
        assert_eq!(a.rank(1e-9), 40);
    }

    #[test]
    fn rounding_ignores_small_noise() {
        let x = encode(&solved());
        let noisy = x.map(|v| v + if v > 0.5 { -0.39 } else { 0.39 } * 0.5);
        assert_eq!(argmax_round(&noisy), x);
    }
}
