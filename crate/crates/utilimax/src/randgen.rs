//! Random diagram/estimate generation (placeholder).
