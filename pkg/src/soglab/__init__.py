"""Self-organizing generative models, EM baselines and a multimodal imitation testbed."""
__version__ = "0.1.0"
