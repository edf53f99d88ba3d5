"""Layer calculus, networks, losses, the alternating trainer and metrics."""
