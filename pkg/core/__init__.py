"""Core pipeline: autodiff, graph, features, model, federated training."""
