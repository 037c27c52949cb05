"""Virtual experiments built on the dynamics and metrics modules."""
