"""Multi-agent political debate simulation with LLM-as-a-judge attitude scoring."""

__version__ = "0.1.0"
