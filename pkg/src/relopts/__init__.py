"""Joint option discovery for cooperative grid agents via relative state
abstraction: learned temporal distances, Fermat-state encoding, Laplacian
eigenoptions, and a joint-option execution layer with downstream independent
Q-learning."""

__version__ = "0.1.0"
