"""Define the deeper-fcdd package."""
