"""Permeability regression on synthetic porous media.

Subpackages cover the full pipeline: sample synthesis (porous, dataset),
lattice-Boltzmann ground truth (lbm), the selective-scan regression network
and its baselines (vim, vit, cnn) on a from-scratch autodiff tape (autodiff),
training and evaluation (training), the activation-memory benchmark (bench),
and a command-line front end (cli).
"""

__version__ = "0.1.0"
