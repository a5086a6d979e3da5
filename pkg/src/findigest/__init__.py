"""Monthly research digest: OpenAlex abstracts in, four LLM-written sections and a PDF out."""

__version__ = "0.1.0"
