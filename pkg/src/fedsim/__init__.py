"""Federated-learning simulation engine with variance and hyperspherical
energy regularized local training, plus FedAvg / FedProx / Freeze baselines."""

__version__ = "0.1.0"
