"""Diffraction of the dart-rhombus random tiling via the Fisher-lattice dimer model."""

__version__ = "0.1.0"
