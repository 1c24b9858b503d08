"""Generative modeling of periodic atomic configurations with stochastic interpolants.

Continuous degrees of freedom (fractional coordinates on the torus, lattice
matrices) are bridged from a base to a target distribution by tunable
interpolants and integrated with ODE/SDE samplers; discrete species evolve
through a masking continuous-time Markov chain. Everything runs on a small
reverse-mode autodiff engine so models are trainable at desk scale.
"""

__version__ = "0.1.0"
