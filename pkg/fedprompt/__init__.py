# Federated prompt-tuning laboratory
__version__ = "1.0.0"
