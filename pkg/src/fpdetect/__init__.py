"""Detection of LLM-polished scientific abstracts and usage/access analyses."""

__version__ = "0.1.0"
