pub mod dump;
pub mod scores;
