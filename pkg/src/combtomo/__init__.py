"""Self-consistent quantum comb tomography on a product Stiefel manifold."""

__version__ = "0.1.0"
