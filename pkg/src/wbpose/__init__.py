"""Whole-body multi-person pose toolkit.

Groundtruth target encoding (confidence maps, part affinity fields, loss
masks), masked multi-task losses, map-to-skeleton decoding, multi-dataset
batch scheduling, OKS evaluation, synthetic round-trip checks and
architecture cost models, all driven by a data-defined skeleton topology.
"""

__version__ = "0.1.0"
