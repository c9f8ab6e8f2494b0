"""Metro headway propagation workbench.

Simulates train trajectory logs for a two-direction line, rasterizes them
into time x distance x direction headway grids, trains a ConvLSTM
sequence model conditioned on planned terminal headways, and evaluates
dispatcher what-if strategies against the trained model.
"""

__version__ = "0.1.0"
