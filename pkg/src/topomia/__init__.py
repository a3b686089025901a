"""Membership-inference auditing for captioning models under topographic regularization."""

__version__ = "0.1.0"
