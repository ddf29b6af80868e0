"""storyrank: unified generative ranking over serialized user stories."""

__version__ = "0.1.0"
