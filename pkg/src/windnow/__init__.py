"""Wind nowcasting at unobserved locations.

Builds a virtual-node graph over a station network, propagates
observations through a reweighted Personalized-PageRank diffusion,
trains a GCN encoder with joint supervised and momentum-queue
contrastive objectives, and benchmarks against interpolation and
regression baselines.
"""

__version__ = "0.1.0"
