"""Hierarchical federated learning simulator for EV next-charge prediction.

Local training on EV clients, additive secret sharing over Z_{2^64} with
peer-to-peer augmentation, secure aggregation and normalisation at the
community DERMS, client capping and rotation, and prediction forwarding to
the energy provider (EPDC).
"""

__version__ = "0.1.0"
