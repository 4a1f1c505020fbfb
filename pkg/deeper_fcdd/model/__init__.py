"""Define representations of the records deeper-fcdd reads and writes."""
