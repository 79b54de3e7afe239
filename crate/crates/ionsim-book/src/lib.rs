//! Placeholder until the book chapters land.
