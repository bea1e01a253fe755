//! Per-scale improvement-of-flatness orchestration (filled in below).
