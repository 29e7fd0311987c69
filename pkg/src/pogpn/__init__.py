"""DAG-structured sparse variational GP networks with per-node likelihoods."""

__version__ = "0.1.0"
