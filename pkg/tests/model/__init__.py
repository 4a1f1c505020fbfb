"""Define model tests."""
