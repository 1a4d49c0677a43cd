"""Flow matching with minibatch couplings: couplers, joint conditional flow matching, evaluation."""

__version__ = "0.1.0"
