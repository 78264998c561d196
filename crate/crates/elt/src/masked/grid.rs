//! Discrete token field over an arbitrary spatial shape, with a mask
//! sentinel one past the last vocabulary id.

use serde::{Deserialize, Serialize};

use crate::error::{EltError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenGrid {
    shape: Vec<usize>,
    tokens: Vec<usize>,
    vocab_size: usize,
}

impl TokenGrid {
    pub fn new(shape: Vec<usize>, tokens: Vec<usize>, vocab_size: usize) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != tokens.len() {
            return Err(EltError::shape(
                "token_grid",
                format!("shape {:?} holds {n} tokens, got {}", shape, tokens.len()),
            ));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t > vocab_size) {
            return Err(EltError::Config(format!(
                "token {bad} outside vocabulary 0..{vocab_size} and mask id {vocab_size}"
            )));
        }
        Ok(TokenGrid {
            shape,
            tokens,
            vocab_size,
        })
    }

    pub fn fully_masked(shape: Vec<usize>, vocab_size: usize) -> Self {
        let n: usize = shape.iter().product();
        TokenGrid {
            shape,
            tokens: vec![vocab_size; n],
            vocab_size,
        }
    }

    pub fn mask_id(&self) -> usize {
        self.vocab_size
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn token(&self, i: usize) -> usize {
        self.tokens[i]
    }

    pub fn set(&mut self, i: usize, v: usize) -> Result<()> {
        if v > self.vocab_size {
            return Err(EltError::Config(format!(
                "token {v} outside vocabulary 0..{} and mask id {}",
                self.vocab_size, self.vocab_size
            )));
        }
        self.tokens[i] = v;
        Ok(())
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.tokens[i] == self.vocab_size
    }

    pub fn masked_positions(&self) -> Vec<usize> {
        (0..self.tokens.len()).filter(|&i| self.is_masked(i)).collect()
    }

    pub fn n_masked(&self) -> usize {
        self.tokens.iter().filter(|&&t| t == self.vocab_size).count()
    }

    pub fn is_fully_revealed(&self) -> bool {
        self.n_masked() == 0
    }

    /// Flat index of a multi-dimensional coordinate (row-major).
    pub fn flatten_index(&self, coord: &[usize]) -> Result<usize> {
        if coord.len() != self.shape.len() {
            return Err(EltError::shape(
                "flatten_index",
                format!("coord rank {} vs shape rank {}", coord.len(), self.shape.len()),
            ));
        }
        let mut idx = 0;
        for (c, s) in coord.iter().zip(self.shape.iter()) {
            if c >= s {
                return Err(EltError::shape(
                    "flatten_index",
                    format!("coord {coord:?} out of shape {:?}", self.shape),
                ));
            }
            idx = idx * s + c;
        }
        Ok(idx)
    }

    pub fn unflatten_index(&self, mut idx: usize) -> Vec<usize> {
        let mut coord = vec![0; self.shape.len()];
        for (c, s) in coord.iter_mut().zip(self.shape.iter()).rev() {
            *c = idx % s;
            idx /= s;
        }
        coord
    }
}
