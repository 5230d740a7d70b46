pub mod nn;
pub mod mcts;
pub mod mctsnet;
pub mod sokoban;
pub mod training;
pub mod harness;
