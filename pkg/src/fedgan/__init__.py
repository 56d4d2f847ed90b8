"""Federated GAN simulator comparing FedAvg, FedAdam and FedCAR aggregation."""

__version__ = "0.1.0"
