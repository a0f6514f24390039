"""Simulation and filtering of continuously monitored open quantum systems.

The package covers two measurement settings for a small open system with a
scalar detection channel:

* **diffusion** -- homodyne-style records ``y_t`` driven by white noise,
  filtered either by direct Euler-Maruyama integration of the stochastic
  master equation or by a robust implicit scheme built on a gauge transform
  that removes the stochastic integral entirely;
* **jump** -- photon-counting records ``N_t``, with the analogous gauge
  transform ``C^(-N_t)`` and a piecewise ordinary differential equation
  between counts.

``smefilter.traj`` orchestrates single trajectories and ensembles, and
``smefilter.cli`` exposes the ``smefilter`` command line tool.
"""

__version__ = "0.1.0"
