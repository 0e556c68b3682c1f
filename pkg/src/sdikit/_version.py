__version__ = "0.1.0"
TOOL = "sdikit"
