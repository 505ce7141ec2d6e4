"""Self-corrective SLAM for sparse, near-uniform landmark point clouds."""

__version__ = "0.1.0"
