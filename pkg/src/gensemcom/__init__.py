"""Multi-user generative semantic communication simulator.

Subpackages cover the bounding-box semantic codec, analog/digital channel
models, a small numpy DDPM decoder with split (edge/local) sampling,
federated cluster-model training, encoder split-point offloading, multi-user
offload scheduling, and the shared-knowledge-base agent protocol.
"""

__version__ = "0.1.0"
