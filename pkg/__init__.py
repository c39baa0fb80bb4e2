"""
lrseg - likelihood-ratio road obstacle segment classifier
"""

__version__ = "0.1.0"
