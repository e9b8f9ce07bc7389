"""coopdyn: simulation library for phenotype divergence and the evolution of
cooperation.

Three models, one shared finite-volume core:

- ``phenotype3d``: a 3D trait-structured advection-diffusion-reaction equation
  with nonlocal logistic death, on a masked (x, y, theta) domain.
- ``game_dynamics``: the two-player reciprocity recurrence with closed-form
  regime classification and balanced-case fixed points, plus an n-player
  mean-field variant.
- ``coop_structured``: two populations structured by cooperation probability,
  coupled through mean-field advection and a global expected gain, with
  analytic extinction/blow-up classification when advection is off.

The ``coopdyn`` CLI (module ``coopdyn.cli``) drives all three from flat
key = value config files and writes deterministic CSV artifacts.
"""
from __future__ import annotations

__version__ = "0.1.0"
