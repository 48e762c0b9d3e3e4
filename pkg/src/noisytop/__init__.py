"""noisytop: simulation and analysis lab for a conservative quadratic flow
perturbed by balanced noise and dissipation.

Subsystems:

* `dynamics`  — the deterministic flow, conserved pair, orbit geometry.
* `averaging` — elliptic integrals and orbit-averaged coefficients.
* `sde`       — stochastic integrators for the perturbed system, its slow
                limit, the time-changed form, and the time-change transforms.
* `measures`  — empirical-measure estimation and statistical diagnostics.
* `config` / `experiments` / `cli` — the reproducible experiment runner.
"""

__version__ = "0.1.0"

from . import averaging, dynamics, measures, sde  # noqa: F401,E402

__all__ = ["averaging", "dynamics", "measures", "sde", "__version__"]
