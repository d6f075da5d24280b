"""Fast direct and preconditioned iterative inverse NUDFT solvers."""
