"""Urban knowledge graph construction with tool-augmented LLM agents."""

__version__ = "0.1.0"
